// Command-line driver for the omni-supervised distillation pipeline.
//
// Stages mirror the processing chain: train-primitive -> select -> distill ->
// train-final, plus eval, compare, probe, and verify. One INI config file
// describes an experiment; flags override file values which override
// defaults. Exit codes: 0 success, 2 input error, 3 data degeneracy,
// 4 numerical divergence (1 is reserved for verify mismatches).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "od/pipeline.hpp"

namespace {

void print_eval_report(const od::EvalReport& report) {
    std::printf("accuracy: %s (%lld samples)\n", od::format_distance(report.accuracy).c_str(),
                static_cast<long long>(report.count));
    for (size_t k = 0; k < report.per_class.size(); ++k)
        std::printf("class %zu accuracy: %s\n", k,
                    od::format_distance(report.per_class[k]).c_str());
    std::printf("confusion (rows = true class):\n");
    for (const auto& row : report.confusion) {
        std::string line;
        for (int64_t v : row) line += " " + std::to_string(v);
        std::printf(" %s\n", line.c_str());
    }
}

int run(int argc, char** argv) {
    CLI::App app{"omni-supervised facial-expression pipeline with dataset distillation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string workdir = ".";
    std::vector<std::string> overrides;
    uint64_t seed_flag = 0;
    int threads_flag = 1;

    app.add_option("-c,--config", config_path, "INI config file (resolved before --workdir)");
    app.add_option("-w,--workdir", workdir, "directory all config paths are relative to");
    app.add_option("-s,--set", overrides,
                   "override a config entry, section.key=value (repeatable)");
    auto* seed_opt = app.add_option("--seed", seed_flag, "override the global seed");
    auto* threads_opt =
        app.add_option("--threads", threads_flag,
                       "worker threads (default 1 for bit-determinism; OD_THREADS mirrors this)");

    auto* cmd_train_primitive = app.add_subcommand(
        "train-primitive", "train the primitive learner on the anchor dataset");
    auto* cmd_select = app.add_subcommand(
        "select", "pseudo-label the pool by centroid distance and write the manifest");
    auto* cmd_distill =
        app.add_subcommand("distill", "distill the selected samples into synthetic images");
    std::string resume_path;
    cmd_distill->add_option("--resume", resume_path, "snapshot file to continue from");
    auto* cmd_train_final = app.add_subcommand(
        "train-final", "train a fresh learner on the anchor plus one auxiliary source");
    bool use_das = false, use_vas = false;
    cmd_train_final->add_flag("--das", use_das, "use the distilled auxiliary set");
    cmd_train_final->add_flag("--vas", use_vas, "use the vanilla auxiliary set");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test dataset");
    bool eval_primitive = false;
    cmd_eval->add_flag("--primitive", eval_primitive,
                       "evaluate the primitive checkpoint instead of the final one");
    auto* cmd_compare = app.add_subcommand(
        "compare", "train baseline / VAS / DAS conditions over several seeds and time them");
    auto* cmd_probe = app.add_subcommand(
        "probe", "train a probe classifier on distillation snapshots (learning curve)");
    auto* cmd_verify = app.add_subcommand(
        "verify", "replay each stage and byte-compare artifacts and embedded hashes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e); // prints help or the parse error
        return code == 0 ? 0 : 2;
    }

    // Resolve the config file against the invocation directory, then enter
    // the workdir so every path inside the config is workdir-relative.
    if (!config_path.empty())
        config_path = std::filesystem::absolute(config_path).string();
    std::error_code ec;
    std::filesystem::current_path(workdir, ec);
    if (ec) throw od::Error("cannot enter workdir: " + workdir);

    od::PipelineConfig cfg;
    if (!config_path.empty()) cfg = od::load_config(config_path);
    if (const char* env = std::getenv("OD_THREADS"); env && threads_opt->count() == 0)
        cfg.threads = int(od::detail::parse_int("OD_THREADS", env));
    for (const std::string& assignment : overrides) od::apply_override(cfg, assignment);
    if (seed_opt->count() > 0) cfg.seed = seed_flag;
    if (threads_opt->count() > 0) cfg.threads = threads_flag;

    const uint64_t hash = od::config_hash(cfg);

    if (cmd_train_primitive->parsed()) {
        od::PrimitiveResult r = od::cmd_train_primitive(cfg);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        std::printf("epochs: %zu\n", r.trace.size());
        if (!r.trace.empty())
            std::printf("final training loss: %s\n",
                        od::format_distance(r.trace.back()).c_str());
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_select->parsed()) {
        od::SelectResult r = od::cmd_select(cfg);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        if (r.aux.size() == 0) {
            std::fprintf(stderr,
                         "warning: margin delta admitted no samples; manifest is empty\n");
        } else {
            for (size_t k = 0; k < r.report.counts.size(); ++k)
                std::printf("class %zu: %lld admitted (distance min %s median %s max %s)\n", k,
                            static_cast<long long>(r.report.counts[k]),
                            od::format_distance(r.report.min_d[k]).c_str(),
                            od::format_distance(r.report.median_d[k]).c_str(),
                            od::format_distance(r.report.max_d[k]).c_str());
        }
        std::printf("admitted: %zu\n", r.aux.size());
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_distill->parsed()) {
        od::DistillCmdResult r = od::cmd_distill(cfg, resume_path);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        std::printf("iterations: %u\n", r.result.set.iteration);
        std::printf("eta: %s\n", od::format_distance(r.result.set.eta()).c_str());
        if (!r.result.trace.empty())
            std::printf("final outer loss: %s\n",
                        od::format_distance(r.result.trace.back()).c_str());
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_train_final->parsed()) {
        od::FinalResult r = od::cmd_train_final(cfg, use_das, use_vas);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        std::printf("condition: %s\n", r.condition.c_str());
        if (!r.trace.empty())
            std::printf("final training loss: %s\n",
                        od::format_distance(r.trace.back()).c_str());
        print_eval_report(r.eval);
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_eval->parsed()) {
        od::EvalCmdResult r = od::cmd_eval(cfg, eval_primitive);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        std::printf("checkpoint: %s\n", r.which.c_str());
        print_eval_report(r.eval);
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_compare->parsed()) {
        od::CompareCmdResult r = od::cmd_compare(cfg);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        for (const auto& c : r.result.conditions)
            std::printf("%s: accuracy %s +- %s, median s/epoch %s, train size %lld\n",
                        c.condition.c_str(), od::format_distance(c.mean_accuracy).c_str(),
                        od::format_distance(c.sd_accuracy).c_str(),
                        od::format_distance(c.median_seconds_per_epoch).c_str(),
                        static_cast<long long>(c.train_size));
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_probe->parsed()) {
        od::ProbeCmdResult r = od::cmd_probe(cfg);
        std::printf("config_hash: %s\n", od::hash_hex(r.hash).c_str());
        std::string iters;
        for (uint32_t it : r.snapshot_iterations) iters += " " + std::to_string(it);
        std::printf("snapshots:%s\n", iters.c_str());
        std::printf("split: %lld train / %lld test\n",
                    static_cast<long long>(r.result.train_size),
                    static_cast<long long>(r.result.test_size));
        std::printf("final probe accuracy: %s\n",
                    od::format_distance(r.result.final_accuracy).c_str());
        for (const auto& f : r.written) std::printf("wrote: %s\n", f.c_str());
        return 0;
    }
    if (cmd_verify->parsed()) {
        od::VerifyResult r = od::cmd_verify(cfg);
        std::printf("config_hash: %s\n", od::hash_hex(hash).c_str());
        for (const auto& line : r.lines) std::printf("%s\n", line.c_str());
        std::printf(r.ok ? "verify: all stages reproduce\n" : "verify: FAILED\n");
        return r.ok ? 0 : 1;
    }
    return 2; // unreachable with require_subcommand(1)
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const od::DivergenceError& e) {
        std::fprintf(stderr, "error (divergence): %s\n", e.what());
        return 4;
    } catch (const od::NonFiniteError& e) {
        std::fprintf(stderr, "error (non-finite): %s\n", e.what());
        return 4;
    } catch (const od::EmptyClassError& e) {
        std::fprintf(stderr, "error (degenerate data): %s\n", e.what());
        return 3;
    } catch (const od::ZeroVectorError& e) {
        std::fprintf(stderr, "error (degenerate data): %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
