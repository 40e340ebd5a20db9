#pragma once

#include <stdexcept>
#include <string>

namespace od {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/graph shape disagreement, detected at graph build or bind time.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// A published value contained NaN or Inf.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& msg) : Error("non-finite value: " + msg) {}
};

// File-level problems: bad magic, bad version, malformed header.
class CorruptHeaderError : public Error {
public:
    explicit CorruptHeaderError(const std::string& msg) : Error("corrupt header: " + msg) {}
};

// Payload shorter than the header promised.
class TruncatedPayloadError : public Error {
public:
    explicit TruncatedPayloadError(const std::string& msg) : Error("truncated payload: " + msg) {}
};

// Header fields disagree with the payload (label out of declared range, trailing bytes).
class HeaderMismatchError : public Error {
public:
    explicit HeaderMismatchError(const std::string& msg) : Error("header mismatch: " + msg) {}
};

// A class with zero member samples where at least one is required.
class EmptyClassError : public Error {
public:
    int class_index;
    explicit EmptyClassError(int k)
        : Error("empty class: class " + std::to_string(k) + " has no samples"), class_index(k) {}
};

// Cosine distance of a zero-length vector is undefined.
class ZeroVectorError : public Error {
public:
    explicit ZeroVectorError(const std::string& msg) : Error("zero vector: " + msg) {}
};

// The distillation outer loss blew past the divergence guard.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error("divergence: " + msg) {}
};

// Config file / flag problems: unknown key, unparsable value, missing path.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

} // namespace od
