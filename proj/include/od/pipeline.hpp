#pragma once

// Pipeline stages behind the command-line driver. Every stage loads all of
// its inputs before writing any output, embeds the config hash in each file
// it produces, and returns a summary struct so the stages stay testable
// without a process boundary. Stage randomness derives from the global seed
// with per-stage tags; the primitive and final training stages share their
// tags so a final run whose auxiliary set is empty reproduces the primitive
// checkpoint exactly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "od/config.hpp"
#include "od/data.hpp"
#include "od/distill.hpp"
#include "od/errors.hpp"
#include "od/metrics.hpp"
#include "od/model.hpp"
#include "od/rng.hpp"
#include "od/selection.hpp"

namespace od {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

struct StageOutput {
    uint64_t hash = 0;
    std::vector<std::string> written; // files produced, in write order
};

namespace pipe {

inline const std::string& need(const std::string& path, const char* key) {
    if (path.empty()) throw ConfigError(std::string("paths.") + key + " is not set");
    return path;
}

// Trace files: a config-hash comment followed by one "<index> <value>" row
// per entry — exactly as many data rows as entries.
inline void write_trace(const std::string& path, uint64_t hash,
                        const std::vector<double>& values) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot open for writing: " + path);
    os << "# config_hash " << hash_hex(hash) << "\n";
    for (size_t i = 0; i < values.size(); ++i)
        os << i << " " << format_distance(values[i]) << "\n";
    if (!os) throw Error("write failed: " + path);
}

// Report logs are append-only: reruns add lines, never rewrite history.
inline void append_report(const std::string& path, uint64_t hash,
                          const std::vector<ReportRecord>& records) {
    std::ofstream os(path, std::ios::app);
    if (!os) throw Error("cannot open for appending: " + path);
    for (const ReportRecord& r : records)
        os << "hash=" << hash_hex(hash) << " " << format_record(r) << "\n";
    if (!os) throw Error("write failed: " + path);
}

inline bool files_byte_equal(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return ba == bb;
}

// Chunked penultimate-layer embedding of a whole image list.
inline Tensor embed_images(const ModelParamsT<float>& params, const std::vector<Tensor>& images) {
    const size_t n = images.size();
    const size_t chunk = 256;
    Tensor all({int64_t(n), int64_t(params.arch.feature_dim)});
    for (size_t start = 0; start < n; start += chunk) {
        const size_t b = std::min(chunk, n - start);
        std::vector<size_t> idx(b);
        for (size_t i = 0; i < b; ++i) idx[i] = start + i;
        Tensor feats = forward_features(params, stack_batch<float>(images, idx));
        std::copy(feats.data.begin(), feats.data.end(),
                  all.data.begin() + int64_t(start) * all.shape[1]);
    }
    return all;
}

inline std::string snapshot_path(const std::string& prefix, uint32_t iteration) {
    return prefix + std::to_string(iteration) + ".odds";
}

} // namespace pipe

// ---------------------------------------------------------------------------
// train-primitive
// ---------------------------------------------------------------------------

struct PrimitiveResult : StageOutput {
    std::vector<double> trace;
};

inline PrimitiveResult cmd_train_primitive(const PipelineConfig& cfg) {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    LabeledDataset anchor = load_labeled(pipe::need(cfg.paths.anchor, "anchor"));
    pipe::need(cfg.paths.checkpoint, "checkpoint");

    ModelParamsT<float> params = init_params(cfg.arch, derive_seed(cfg.seed, "train-init"));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");

    PrimitiveResult out;
    out.hash = hash;
    out.trace = train_classifier(params, anchor, tc);
    save_checkpoint(cfg.paths.checkpoint, params, hash);
    out.written.push_back(cfg.paths.checkpoint);
    if (!cfg.paths.primitive_trace.empty()) {
        pipe::write_trace(cfg.paths.primitive_trace, hash, out.trace);
        out.written.push_back(cfg.paths.primitive_trace);
    }
    return out;
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

struct SelectResult : StageOutput {
    AuxiliaryDataset aux;
    SelectionReport report; // meaningful only when aux is nonempty
};

inline SelectResult cmd_select(const PipelineConfig& cfg) {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    LabeledDataset anchor = load_labeled(pipe::need(cfg.paths.anchor, "anchor"));
    UnlabeledPool pool = load_pool(pipe::need(cfg.paths.pool, "pool"));
    LoadedCheckpoint ckpt = load_checkpoint(pipe::need(cfg.paths.checkpoint, "checkpoint"));
    pipe::need(cfg.paths.manifest, "manifest");

    Tensor features = pipe::embed_images(ckpt.params, anchor.images);
    CentroidSetT<float> centers =
        compute_centroids(features, std::span<const int>(anchor.labels), anchor.m);
    SelectResult out;
    out.hash = hash;
    out.aux = assign_pseudo_labels(pool, ckpt.params, centers, cfg.select);
    save_manifest(cfg.paths.manifest, out.aux, hash);
    out.written.push_back(cfg.paths.manifest);
    if (out.aux.size() > 0) out.report = selection_report(out.aux);
    return out;
}

// ---------------------------------------------------------------------------
// distill
// ---------------------------------------------------------------------------

struct DistillCmdResult : StageOutput {
    DistillResult result;
};

inline DistillCmdResult cmd_distill(const PipelineConfig& cfg,
                                    const std::string& resume_path = "") {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    UnlabeledPool pool = load_pool(pipe::need(cfg.paths.pool, "pool"));
    LoadedManifest manifest = load_manifest(pipe::need(cfg.paths.manifest, "manifest"));
    pipe::need(cfg.paths.distilled, "distilled");
    if (manifest.source_ids.empty())
        throw Error("distill: manifest is empty; nothing to distill from");
    AuxiliaryDataset aux = manifest_to_aux(manifest, pool, cfg.arch.num_classes);

    DistilledSet resume;
    const DistilledSet* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_distilled(resume_path);
        resume_ptr = &resume;
    }

    DistillConfig dc = cfg.distill;
    dc.seed = derive_seed(cfg.seed, "distill");

    DistillCmdResult out;
    out.hash = hash;
    std::vector<std::string> snapshot_files;
    auto writer = [&](const DistilledSet& snap) {
        if (cfg.paths.snapshot_prefix.empty()) return;
        std::string p = pipe::snapshot_path(cfg.paths.snapshot_prefix, snap.iteration);
        save_distilled(p, snap);
        snapshot_files.push_back(p);
    };
    out.result = distill(aux, cfg.arch, dc, hash, resume_ptr, writer);
    save_distilled(cfg.paths.distilled, out.result.set);
    out.written = std::move(snapshot_files);
    out.written.push_back(cfg.paths.distilled);
    if (!cfg.paths.distill_trace.empty()) {
        pipe::write_trace(cfg.paths.distill_trace, hash, out.result.trace);
        out.written.push_back(cfg.paths.distill_trace);
    }
    return out;
}

// ---------------------------------------------------------------------------
// train-final
// ---------------------------------------------------------------------------

struct FinalResult : StageOutput {
    std::string condition; // "das" or "vas"
    std::vector<double> trace;
    EvalReport eval;
};

inline FinalResult cmd_train_final(const PipelineConfig& cfg, bool use_das, bool use_vas) {
    cfg.validate();
    if (use_das == use_vas)
        throw ConfigError("train-final needs exactly one auxiliary source: --das or --vas");
    const uint64_t hash = config_hash(cfg);
    LabeledDataset anchor = load_labeled(pipe::need(cfg.paths.anchor, "anchor"));
    LabeledDataset test = load_labeled(pipe::need(cfg.paths.test, "test"));
    pipe::need(cfg.paths.final_checkpoint, "final_checkpoint");

    LabeledDataset auxiliary;
    if (use_das) {
        DistilledSet set = load_distilled(pipe::need(cfg.paths.distilled, "distilled"));
        auxiliary = distilled_to_dataset(set, cfg.arch.num_classes);
    } else {
        UnlabeledPool pool = load_pool(pipe::need(cfg.paths.pool, "pool"));
        LoadedManifest manifest = load_manifest(pipe::need(cfg.paths.manifest, "manifest"));
        auxiliary = aux_to_dataset(manifest_to_aux(manifest, pool, cfg.arch.num_classes));
    }
    LabeledDataset training = union_datasets(anchor, auxiliary);

    ModelParamsT<float> params = init_params(cfg.arch, derive_seed(cfg.seed, "train-init"));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");

    FinalResult out;
    out.hash = hash;
    out.condition = use_das ? "das" : "vas";
    std::vector<double> epoch_seconds;
    out.trace = train_classifier(params, training, tc, &epoch_seconds);
    out.eval = evaluate(params, test);

    save_checkpoint(cfg.paths.final_checkpoint, params, hash);
    out.written.push_back(cfg.paths.final_checkpoint);
    if (!cfg.paths.final_trace.empty()) {
        pipe::write_trace(cfg.paths.final_trace, hash, out.trace);
        out.written.push_back(cfg.paths.final_trace);
    }
    if (!cfg.paths.report.empty()) {
        ReportRecord rec;
        rec.condition = out.condition;
        rec.seed = cfg.seed;
        rec.epoch = cfg.train.epochs;
        rec.split = "test";
        rec.accuracy = out.eval.accuracy;
        rec.seconds = epoch_seconds.empty() ? 0.0 : median_of(epoch_seconds);
        pipe::append_report(cfg.paths.report, hash, {rec});
        out.written.push_back(cfg.paths.report);
    }
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalCmdResult : StageOutput {
    std::string which; // which checkpoint was evaluated
    EvalReport eval;
};

inline EvalCmdResult cmd_eval(const PipelineConfig& cfg, bool use_primitive = false) {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    LabeledDataset test = load_labeled(pipe::need(cfg.paths.test, "test"));
    std::string ckpt_path;
    if (use_primitive) {
        ckpt_path = pipe::need(cfg.paths.checkpoint, "checkpoint");
    } else if (!cfg.paths.final_checkpoint.empty() &&
               std::filesystem::exists(cfg.paths.final_checkpoint)) {
        ckpt_path = cfg.paths.final_checkpoint;
    } else {
        ckpt_path = pipe::need(cfg.paths.checkpoint, "checkpoint");
    }
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);

    EvalCmdResult out;
    out.hash = hash;
    out.which = ckpt_path;
    out.eval = evaluate(ckpt.params, test);
    if (!cfg.paths.report.empty()) {
        ReportRecord rec;
        rec.condition = use_primitive ? "eval-primitive" : "eval";
        rec.seed = cfg.seed;
        rec.epoch = 0;
        rec.split = "test";
        rec.accuracy = out.eval.accuracy;
        rec.seconds = out.eval.seconds;
        pipe::append_report(cfg.paths.report, hash, {rec});
        out.written.push_back(cfg.paths.report);
    }
    return out;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareCmdResult : StageOutput {
    CompareResult result;
};

inline CompareCmdResult cmd_compare(const PipelineConfig& cfg) {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    LabeledDataset anchor = load_labeled(pipe::need(cfg.paths.anchor, "anchor"));
    LabeledDataset test = load_labeled(pipe::need(cfg.paths.test, "test"));
    UnlabeledPool pool = load_pool(pipe::need(cfg.paths.pool, "pool"));
    LoadedManifest manifest = load_manifest(pipe::need(cfg.paths.manifest, "manifest"));
    LabeledDataset vas =
        aux_to_dataset(manifest_to_aux(manifest, pool, cfg.arch.num_classes));
    DistilledSet set = load_distilled(pipe::need(cfg.paths.distilled, "distilled"));
    LabeledDataset das = distilled_to_dataset(set, cfg.arch.num_classes);

    std::vector<uint64_t> seeds;
    for (int i = 0; i < cfg.compare_seeds; ++i)
        seeds.push_back(derive_seed(cfg.seed, "compare", uint64_t(i)));

    CompareCmdResult out;
    out.hash = hash;
    out.result = compare_conditions(anchor, test, vas, das, cfg.arch, cfg.train, seeds);
    if (!cfg.paths.report.empty()) {
        pipe::append_report(cfg.paths.report, hash, out.result.records);
        out.written.push_back(cfg.paths.report);
    }
    return out;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeCmdResult : StageOutput {
    ProbeResult result;
    std::vector<uint32_t> snapshot_iterations;
};

// Snapshots are discovered by prefix: every "<prefix><digits>.odds" file,
// ordered by the iteration recorded inside the file.
inline std::vector<DistilledSet> load_snapshots(const std::string& prefix) {
    namespace fs = std::filesystem;
    fs::path p(prefix);
    fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
    std::string base = p.filename().string();
    std::vector<DistilledSet> snaps;
    if (!fs::is_directory(dir)) throw Error("snapshot directory missing: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string name = entry.path().filename().string();
        if (name.size() <= base.size() + 5) continue;
        if (name.compare(0, base.size(), base) != 0) continue;
        if (name.compare(name.size() - 5, 5, ".odds") != 0) continue;
        std::string middle = name.substr(base.size(), name.size() - base.size() - 5);
        if (middle.empty() ||
            middle.find_first_not_of("0123456789") != std::string::npos)
            continue;
        snaps.push_back(load_distilled(entry.path().string()));
    }
    std::sort(snaps.begin(), snaps.end(),
              [](const DistilledSet& a, const DistilledSet& b) {
                  return a.iteration < b.iteration;
              });
    return snaps;
}

inline ProbeCmdResult cmd_probe(const PipelineConfig& cfg) {
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    std::vector<DistilledSet> snaps =
        load_snapshots(pipe::need(cfg.paths.snapshot_prefix, "snapshot_prefix"));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "probe");

    ProbeCmdResult out;
    out.hash = hash;
    for (const auto& s : snaps) out.snapshot_iterations.push_back(s.iteration);
    out.result = pattern_probe(snaps, cfg.arch, tc);
    if (!cfg.paths.report.empty()) {
        pipe::append_report(cfg.paths.report, hash, out.result.records);
        out.written.push_back(cfg.paths.report);
    }
    if (!cfg.paths.plot.empty()) {
        std::ofstream os(cfg.paths.plot, std::ios::trunc);
        if (!os) throw Error("cannot open for writing: " + cfg.paths.plot);
        os << "# config_hash " << hash_hex(hash) << "\n";
        for (size_t e = 0; e < out.result.curve.size(); ++e)
            os << e << " " << format_distance(out.result.curve[e]) << "\n";
        if (!os) throw Error("write failed: " + cfg.paths.plot);
        out.written.push_back(cfg.paths.plot);
    }
    return out;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyResult {
    bool ok = true;
    std::vector<std::string> lines;
};

// Replays every stage whose artifact exists into shadow paths (".verify"
// suffixed), byte-compares each artifact against its replay, and checks the
// hash embedded in each artifact against the current config. The final
// training stage replays with the distilled source when a distilled file
// exists, otherwise with the manifest source.
inline VerifyResult cmd_verify(const PipelineConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    const uint64_t hash = config_hash(cfg);
    VerifyResult vr;
    std::vector<std::string> cleanup;

    PipelineConfig shadow = cfg;
    auto shadowed = [](std::string& path) {
        if (!path.empty()) path += ".verify";
    };
    shadowed(shadow.paths.checkpoint);
    shadowed(shadow.paths.final_checkpoint);
    shadowed(shadow.paths.manifest);
    shadowed(shadow.paths.distilled);
    shadowed(shadow.paths.snapshot_prefix);
    shadowed(shadow.paths.report);
    shadowed(shadow.paths.primitive_trace);
    shadowed(shadow.paths.final_trace);
    shadowed(shadow.paths.distill_trace);
    shadowed(shadow.paths.plot);

    auto check = [&](const std::string& stage, const std::string& original,
                     const std::string& replay, uint64_t embedded) {
        bool same = pipe::files_byte_equal(original, replay);
        bool hash_ok = embedded == hash;
        if (same && hash_ok) {
            vr.lines.push_back("verify " + stage + ": OK");
        } else {
            vr.ok = false;
            std::string why;
            if (!hash_ok)
                why += " artifact hash " + hash_hex(embedded) + " != config " + hash_hex(hash);
            if (!same) why += " replay differs";
            vr.lines.push_back("verify " + stage + ": MISMATCH (" + original + ":" + why + ")");
        }
    };
    auto exists = [](const std::string& p) { return !p.empty() && fs::exists(p); };

    bool ran_any = false;
    try {
        if (exists(cfg.paths.checkpoint)) {
            ran_any = true;
            PrimitiveResult replay = cmd_train_primitive(shadow);
            cleanup.insert(cleanup.end(), replay.written.begin(), replay.written.end());
            LoadedCheckpoint original = load_checkpoint(cfg.paths.checkpoint);
            check("train-primitive", cfg.paths.checkpoint, shadow.paths.checkpoint,
                  original.config_hash);
        }
        if (exists(cfg.paths.manifest)) {
            ran_any = true;
            SelectResult replay = cmd_select(shadow);
            cleanup.insert(cleanup.end(), replay.written.begin(), replay.written.end());
            LoadedManifest original = load_manifest(cfg.paths.manifest);
            check("select", cfg.paths.manifest, shadow.paths.manifest, original.config_hash);
        }
        if (exists(cfg.paths.distilled)) {
            ran_any = true;
            DistillCmdResult replay = cmd_distill(shadow);
            cleanup.insert(cleanup.end(), replay.written.begin(), replay.written.end());
            DistilledSet original = load_distilled(cfg.paths.distilled);
            check("distill", cfg.paths.distilled, shadow.paths.distilled, original.config_hash);
            if (!cfg.paths.snapshot_prefix.empty()) {
                for (const DistilledSet& snap : replay.result.snapshots) {
                    std::string orig_snap =
                        pipe::snapshot_path(cfg.paths.snapshot_prefix, snap.iteration);
                    if (!fs::exists(orig_snap)) continue;
                    DistilledSet stored = load_distilled(orig_snap);
                    check("snapshot-" + std::to_string(snap.iteration), orig_snap,
                          pipe::snapshot_path(shadow.paths.snapshot_prefix, snap.iteration),
                          stored.config_hash);
                }
            }
        }
        if (exists(cfg.paths.final_checkpoint)) {
            ran_any = true;
            const bool use_das = exists(cfg.paths.distilled);
            FinalResult replay = cmd_train_final(shadow, use_das, !use_das);
            cleanup.insert(cleanup.end(), replay.written.begin(), replay.written.end());
            LoadedCheckpoint original = load_checkpoint(cfg.paths.final_checkpoint);
            check("train-final", cfg.paths.final_checkpoint, shadow.paths.final_checkpoint,
                  original.config_hash);
        }
    } catch (...) {
        for (const std::string& p : cleanup) fs::remove(p);
        throw;
    }
    for (const std::string& p : cleanup) fs::remove(p);
    if (!ran_any) {
        vr.ok = false;
        vr.lines.push_back("verify: no pipeline artifacts found to check");
    }
    return vr;
}

} // namespace od
