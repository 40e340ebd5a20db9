#pragma once

// Pipeline configuration: one flat INI-style file with a global preamble and
// [arch] / [train] / [select] / [distill] / [paths] sections. Unknown
// sections and keys fail fast. The config hash fingerprints the resolved
// experiment parameters (globals plus the four numeric sections) so every
// artifact can embed the configuration that produced it; paths and thread
// count are deliberately outside the hash — they relocate or parallelize a
// run without changing its numbers.

#include <charconv>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "od/data.hpp"
#include "od/distill.hpp"
#include "od/errors.hpp"
#include "od/model.hpp"
#include "od/rng.hpp"
#include "od/selection.hpp"

namespace od {

struct PipelinePaths {
    std::string anchor;           // labeled dataset (binary or synthetic spec)
    std::string pool;             // unlabeled pool (binary or synthetic spec)
    std::string test;             // labeled test dataset
    std::string checkpoint;       // primitive-learner checkpoint
    std::string final_checkpoint; // final-learner checkpoint
    std::string manifest;         // selection manifest
    std::string distilled;        // distilled set
    std::string snapshot_prefix;  // snapshots written as <prefix><iter>.odds
    std::string report;           // append-only record log
    std::string primitive_trace;  // per-epoch loss rows
    std::string final_trace;
    std::string distill_trace; // per-iteration outer-loss rows
    std::string plot;          // probe learning curve as (x, y) columns
};

struct PipelineConfig {
    uint64_t seed = 1;
    int threads = 1;
    int compare_seeds = 5; // seeds used by the condition comparison
    Architecture arch;
    TrainConfig train;
    SelectionConfig select;
    DistillConfig distill;
    PipelinePaths paths;

    void validate() const {
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (compare_seeds < 3) throw ConfigError("compare_seeds must be >= 3");
        arch.validate();
        train.validate();
        select.validate();
        distill.validate(arch.num_classes);
    }
};

// ---------------------------------------------------------------------------
// Value parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& value) {
    int64_t out = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size())
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    return out;
}

inline uint64_t parse_u64(const std::string& key, const std::string& value) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size())
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    if (trim(value).empty()) return out;
    std::istringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(int(parse_int(key, trim(item))));
    return out;
}

} // namespace detail

// Applies one "section.key" (or global "key") assignment. Shared by the file
// parser and command-line overrides so both go through identical validation.
inline void apply_config_entry(PipelineConfig& cfg, const std::string& section,
                               const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_int_list;
    using detail::parse_u64;
    const std::string full = section.empty() ? key : section + "." + key;

    if (section.empty()) {
        if (key == "seed") cfg.seed = parse_u64(full, value);
        else if (key == "threads") cfg.threads = int(parse_int(full, value));
        else if (key == "compare_seeds") cfg.compare_seeds = int(parse_int(full, value));
        else throw ConfigError("unknown global key: " + key);
        return;
    }
    if (section == "arch") {
        if (key == "kind") cfg.arch.kind = parse_arch_kind(value);
        else if (key == "height") cfg.arch.height = int(parse_int(full, value));
        else if (key == "width") cfg.arch.width = int(parse_int(full, value));
        else if (key == "channels") cfg.arch.channels = int(parse_int(full, value));
        else if (key == "hidden") cfg.arch.hidden_widths = parse_int_list(full, value);
        else if (key == "feature_dim") cfg.arch.feature_dim = int(parse_int(full, value));
        else if (key == "classes") cfg.arch.num_classes = int(parse_int(full, value));
        else throw ConfigError("unknown key: " + full);
        return;
    }
    if (section == "train") {
        if (key == "lr") cfg.train.learning_rate = parse_double(full, value);
        else if (key == "momentum") cfg.train.momentum = parse_double(full, value);
        else if (key == "epochs") cfg.train.epochs = int(parse_int(full, value));
        else if (key == "batch") cfg.train.batch_size = int(parse_int(full, value));
        else if (key == "lr_decay") cfg.train.lr_decay = parse_double(full, value);
        else if (key == "decay_every") cfg.train.decay_every = int(parse_int(full, value));
        else if (key == "flip_prob") cfg.train.flip_prob = parse_double(full, value);
        else throw ConfigError("unknown key: " + full);
        return;
    }
    if (section == "select") {
        if (key == "delta") cfg.select.delta = parse_double(full, value);
        else if (key == "cap") cfg.select.per_class_cap = int(parse_int(full, value));
        else throw ConfigError("unknown key: " + full);
        return;
    }
    if (section == "distill") {
        if (key == "n") cfg.distill.n = int(parse_int(full, value));
        else if (key == "eta0") cfg.distill.eta0 = parse_double(full, value);
        else if (key == "alpha") cfg.distill.alpha = parse_double(full, value);
        else if (key == "batch") cfg.distill.batch = int(parse_int(full, value));
        else if (key == "iters") cfg.distill.iters = int(parse_int(full, value));
        else if (key == "draws") cfg.distill.weight_draws = int(parse_int(full, value));
        else if (key == "inner_steps") cfg.distill.inner_steps = int(parse_int(full, value));
        else if (key == "snapshot_every") cfg.distill.snapshot_every = int(parse_int(full, value));
        else throw ConfigError("unknown key: " + full);
        return;
    }
    if (section == "paths") {
        if (key == "anchor") cfg.paths.anchor = value;
        else if (key == "pool") cfg.paths.pool = value;
        else if (key == "test") cfg.paths.test = value;
        else if (key == "checkpoint") cfg.paths.checkpoint = value;
        else if (key == "final_checkpoint") cfg.paths.final_checkpoint = value;
        else if (key == "manifest") cfg.paths.manifest = value;
        else if (key == "distilled") cfg.paths.distilled = value;
        else if (key == "snapshot_prefix") cfg.paths.snapshot_prefix = value;
        else if (key == "report") cfg.paths.report = value;
        else if (key == "primitive_trace") cfg.paths.primitive_trace = value;
        else if (key == "final_trace") cfg.paths.final_trace = value;
        else if (key == "distill_trace") cfg.paths.distill_trace = value;
        else if (key == "plot") cfg.paths.plot = value;
        else throw ConfigError("unknown key: " + full);
        return;
    }
    throw ConfigError("unknown section: [" + section + "]");
}

// "section.key=value" or "key=value" (globals), the --set override grammar.
inline void apply_override(PipelineConfig& cfg, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value, got: " + assignment);
    std::string lhs = detail::trim(assignment.substr(0, eq));
    std::string value = detail::trim(assignment.substr(eq + 1));
    auto dot = lhs.find('.');
    if (dot == std::string::npos) apply_config_entry(cfg, "", lhs, value);
    else apply_config_entry(cfg, lhs.substr(0, dot), lhs.substr(dot + 1), value);
}

// ---------------------------------------------------------------------------
// File parsing
// ---------------------------------------------------------------------------

inline PipelineConfig parse_config(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    std::vector<std::string> seen; // "section.key", duplicates rejected
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        for (const auto& s : seen)
            if (s == full)
                throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + full);
        seen.push_back(full);
        try {
            apply_config_entry(cfg, section, key, value);
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            if (const std::string prefix = "config error: "; msg.rfind(prefix, 0) == 0)
                msg = msg.substr(prefix.size());
            throw ConfigError("line " + std::to_string(lineno) + ": " + msg);
        }
    }
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
    return parse_config(read_text_file(path));
}

// ---------------------------------------------------------------------------
// Canonical form and hash
// ---------------------------------------------------------------------------

namespace detail {

inline std::string full_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// A fixed-order rendering of everything that shapes the numbers. Two configs
// with equal canonical text behave identically in every stage.
inline std::string canonical_config_text(const PipelineConfig& cfg) {
    std::ostringstream os;
    os << "seed=" << cfg.seed << "\n";
    os << "compare_seeds=" << cfg.compare_seeds << "\n";
    os << "[arch]\n";
    os << "kind=" << arch_kind_name(cfg.arch.kind) << "\n";
    os << "height=" << cfg.arch.height << "\n";
    os << "width=" << cfg.arch.width << "\n";
    os << "channels=" << cfg.arch.channels << "\n";
    os << "hidden=";
    for (size_t i = 0; i < cfg.arch.hidden_widths.size(); ++i)
        os << (i ? "," : "") << cfg.arch.hidden_widths[i];
    os << "\n";
    os << "feature_dim=" << cfg.arch.feature_dim << "\n";
    os << "classes=" << cfg.arch.num_classes << "\n";
    os << "[train]\n";
    os << "lr=" << detail::full_double(cfg.train.learning_rate) << "\n";
    os << "momentum=" << detail::full_double(cfg.train.momentum) << "\n";
    os << "epochs=" << cfg.train.epochs << "\n";
    os << "batch=" << cfg.train.batch_size << "\n";
    os << "lr_decay=" << detail::full_double(cfg.train.lr_decay) << "\n";
    os << "decay_every=" << cfg.train.decay_every << "\n";
    os << "flip_prob=" << detail::full_double(cfg.train.flip_prob) << "\n";
    os << "[select]\n";
    os << "delta=" << detail::full_double(cfg.select.delta) << "\n";
    os << "cap=" << cfg.select.per_class_cap << "\n";
    os << "[distill]\n";
    os << "n=" << cfg.distill.n << "\n";
    os << "eta0=" << detail::full_double(cfg.distill.eta0) << "\n";
    os << "alpha=" << detail::full_double(cfg.distill.alpha) << "\n";
    os << "batch=" << cfg.distill.batch << "\n";
    os << "iters=" << cfg.distill.iters << "\n";
    os << "draws=" << cfg.distill.weight_draws << "\n";
    os << "inner_steps=" << cfg.distill.inner_steps << "\n";
    os << "snapshot_every=" << cfg.distill.snapshot_every << "\n";
    return os.str();
}

inline uint64_t config_hash(const PipelineConfig& cfg) {
    return fnv1a64(canonical_config_text(cfg));
}

inline std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace od
