// Command-line front end: `run` executes one configured scenario and writes
// its artifact files, `compare` builds a side-by-side report over persisted
// summaries, `selftest` exercises the numerical oracles. Exit codes: 0
// success, 1 selftest/internal failure, 2 config error, 3 aborted run.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipesentry/config.hpp"
#include "pipesentry/experiment.hpp"
#include "pipesentry/reference.hpp"

namespace {

using namespace pipesentry;

int cmd_run(const std::string& config_path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    nlohmann::json doc = load_config_file(config_path);
    apply_env_overrides(doc);
    for (const auto& [path, value] : overrides) set_config_value(doc, path, value);
    ExperimentConfig cfg = config_from_json(doc);
    ExperimentResult result = run_experiment(cfg, &std::cout);
    return result.aborted ? 3 : 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& reference) {
    std::cout << compare_runs(paths, reference);
    return 0;
}

bool report(const std::string& name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
    return ok;
}

int cmd_selftest() {
    bool all_ok = true;

    // Analytic gradients vs central finite differences on assorted stacks.
    {
        const std::vector<std::vector<LayerSpec>> stacks = {
            {LayerSpec::affine(6, 4)},
            {LayerSpec::affine(5, 7), LayerSpec::nonlinearity(Activation::kTanh),
             LayerSpec::affine(7, 3)},
            {LayerSpec::affine(4, 4), LayerSpec::nonlinearity(Activation::kTanh),
             LayerSpec::affine(4, 4), LayerSpec::nonlinearity(Activation::kTanh),
             LayerSpec::affine(4, 3)},
            {LayerSpec::affine(8, 6), LayerSpec::nonlinearity(Activation::kRelu),
             LayerSpec::affine(6, 5)},
            {LayerSpec::affine(3, 9), LayerSpec::nonlinearity(Activation::kTanh),
             LayerSpec::affine(9, 2)},
        };
        double worst = 0.0;
        for (size_t i = 0; i < stacks.size(); ++i) {
            RandomStream init(100 + i, "init");
            StageModule model(stacks[i], 0, init);
            RandomStream data(200 + i, "data");
            Tensor inputs = gaussian(data, 3, model.in_width());
            std::vector<int> labels;
            for (int r = 0; r < 3; ++r)
                labels.push_back(data.uniform_int(0, model.out_width() - 1));
            worst = std::max(worst, fd_max_rel_error(model, inputs, labels, 1e-5));
        }
        all_ok &= report("gradients match finite differences", worst < 1e-5,
                         "worst rel err " + format_double(worst));
    }

    // Clean pipelined training must equal the monolithic trainer bit for bit,
    // including with gradient accumulation over micro-batches.
    {
        PipelineConfig pc;
        pc.stages = 4;
        pc.width = 8;
        pc.input_dim = 8;
        pc.classes = 3;
        pc.batch_size = 4;
        pc.micro_batch = 2;
        pc.iterations = 50;
        pc.lr = 0.05;
        pc.mode = PipelineMode::kRobustDirect;
        RandomStream data_stream(pc.data_seed, "data");
        Dataset data = gauss_classify(pc.classes, pc.input_dim, 64, data_stream);

        Pipeline pipe(pc);
        Adversary none(AttackConfig{}, pc.stages, pc.iterations, pc.adversary_seed,
                       pc.schedule_seed);
        RunMetrics m = run_training(pipe, data, none);

        StageModule mono = reference_model(pc);
        std::vector<double> ref = reference_training(mono, data, pc.iterations, pc.batch_size,
                                                     pc.lr);
        bool equal = m.loss.size() == ref.size();
        for (size_t i = 0; equal && i < ref.size(); ++i) equal = m.loss[i] == ref[i];
        all_ok &= report("pipelined training equals sequential trainer bitwise", equal,
                         equal ? "50 iterations, 4 stages, 2-row micro-batches" : "loss series diverged");
    }

    // Identical configs must reproduce identical runs, attacks included.
    {
        ExperimentConfig cfg;
        cfg.pipeline.stages = 4;
        cfg.pipeline.width = 8;
        cfg.pipeline.input_dim = 8;
        cfg.pipeline.classes = 3;
        cfg.pipeline.iterations = 30;
        cfg.pipeline.mode = PipelineMode::kRobustDirect;
        cfg.attack.kind = AttackKind::kForwardFlip;
        cfg.attack.rate = 0.3;
        cfg.samples = 64;
        auto once = [&cfg]() {
            Dataset data = build_dataset(cfg);
            Pipeline pipe(cfg.pipeline);
            Adversary adv(cfg.attack, cfg.pipeline.stages, cfg.pipeline.iterations,
                          cfg.pipeline.adversary_seed, cfg.pipeline.schedule_seed);
            RunMetrics m = run_training(pipe, data, adv);
            return summary_json(cfg, m).dump();
        };
        const std::string a = once();
        const std::string b = once();
        all_ok &= report("repeated run is byte-identical", a == b,
                         "attacked recovery run, 30 iterations");
    }

    // Parameter snapshots restore bit-identical modules.
    {
        RandomStream init(7, "init");
        StageModule m({LayerSpec::affine(5, 6), LayerSpec::nonlinearity(Activation::kTanh),
                       LayerSpec::affine(6, 4)},
                      0, init);
        const std::vector<uint8_t> blob = m.snapshot_params();
        RandomStream init2(8, "init");
        StageModule other({LayerSpec::affine(5, 6), LayerSpec::nonlinearity(Activation::kTanh),
                           LayerSpec::affine(6, 4)},
                          0, init2);
        other.load_params(blob);
        all_ok &= report("parameter snapshots round-trip", other.snapshot_params() == blob,
                         std::to_string(blob.size()) + " bytes");
    }

    std::cout << (all_ok ? "selftest passed\n" : "selftest FAILED\n");
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Byzantine-resilient pipeline-parallel training simulator"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute one configured training scenario");
    std::string config_path;
    run->add_option("--config", config_path, "JSON config file")->required();
    std::string mode, attack, rate, seed, out;
    run->add_option("--mode", mode, "override pipeline.mode (baseline|robust_direct|robust_central)");
    run->add_option("--attack", attack, "override attack.kind");
    run->add_option("--rate", rate, "override attack.rate");
    run->add_option("--seed", seed, "override the master seed");
    run->add_option("--out", out, "override output.dir");

    auto* compare = app.add_subcommand("compare", "compare persisted run summaries");
    std::vector<std::string> summaries;
    compare->add_option("summaries", summaries, "summary.json files")->expected(-1)->required();
    std::string reference;
    compare->add_option("--reference", reference, "reference tables JSON (default: bundled)");

    auto* selftest = app.add_subcommand("selftest", "run the numerical oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) {
            std::vector<std::pair<std::string, std::string>> overrides;
            if (!mode.empty()) overrides.emplace_back("pipeline.mode", mode);
            if (!attack.empty()) overrides.emplace_back("attack.kind", attack);
            if (!rate.empty()) overrides.emplace_back("attack.rate", rate);
            if (!seed.empty()) overrides.emplace_back("seed", seed);
            if (!out.empty()) overrides.emplace_back("output.dir", out);
            return cmd_run(config_path, overrides);
        }
        if (compare->parsed()) return cmd_compare(summaries, reference);
        if (selftest->parsed()) return cmd_selftest();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
