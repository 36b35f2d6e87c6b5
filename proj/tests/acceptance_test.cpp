// Acceptance gate: one binary, one printed pass/fail line per criterion.
// Exits nonzero if any criterion fails. Runs standalone (no test framework)
// so the gate output reads as a nine-line report.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pipesentry/experiment.hpp"
#include "pipesentry/reference.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pipesentry;
using testing::make_adversary;
using testing::make_fd_case;
using testing::no_attack;
using testing::small_config;
using testing::small_dataset;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Desk-scale scenario family shared by the loss-ratio criteria: six stages,
// 32-wide boundaries, 4-class Gaussian task, 2000 iterations.
ExperimentConfig desk_config(uint64_t seed, const std::string& extra_json) {
    std::string text = "{\"K\": 6, \"iterations\": 2000, \"seed\": " + std::to_string(seed);
    if (!extra_json.empty()) text += ", " + extra_json;
    text += "}";
    return parse_config_text(text);
}

RunMetrics run_scenario(const ExperimentConfig& cfg) {
    Dataset data = build_dataset(cfg);
    Pipeline pipe(cfg.pipeline);
    Adversary adv(cfg.attack, cfg.pipeline.stages, cfg.pipeline.iterations,
                  cfg.pipeline.adversary_seed, cfg.pipeline.schedule_seed);
    return run_training(pipe, data, adv);
}

struct Gate {
    int failures = 0;

    void line(int index, bool pass, const std::string& text) {
        std::cout << (pass ? "[PASS] " : "[FAIL] ") << index << ". " << text << "\n";
        if (!pass) ++failures;
    }

    void criterion(int index, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& body) {
        try {
            auto [pass, detail] = body();
            line(index, pass, name + ": " + detail);
        } catch (const std::exception& e) {
            line(index, false, name + ": exception: " + e.what());
        }
    }
};

const std::vector<uint64_t> kSeeds = {1, 2, 3, 4, 5};

// Clean desk-scale finals, shared by criteria 5 and 6.
std::vector<double> clean_finals() {
    static std::vector<double> cache;
    if (cache.empty())
        for (uint64_t s : kSeeds) cache.push_back(run_scenario(desk_config(s, "")).final_loss());
    return cache;
}

}  // namespace

int main() {
    std::cout << "acceptance gate: Byzantine-resilient pipeline training simulator\n";
    Gate gate;

    gate.criterion(1, "gradient correctness", [] {
        const auto t0 = std::chrono::steady_clock::now();
        double worst = 0.0;
        const uint64_t specs = 20;
        for (uint64_t seed = 1; seed <= specs; ++seed) {
            testing::FdCase c = make_fd_case(seed);
            RandomStream init(seed, "init");
            StageModule model(c.specs, 0, init);
            worst = std::max(worst, testing::fd_worst_error(model, c.inputs, c.labels));
        }
        const double el = seconds_since(t0);
        return std::make_pair(worst < 1e-5 && el < 10.0,
                              "worst rel err " + fmt(worst, 2) + " across " +
                                  std::to_string(specs) + " random specs (tol 1e-5, " +
                                  fmt(el, 2) + "s < 10s)");
    });

    gate.criterion(2, "sequential-oracle equivalence", [] {
        const auto t0 = std::chrono::steady_clock::now();
        int mismatches = 0, combos = 0;
        for (int stages : {4, 6}) {
            for (int micro : {1, 4}) {
                PipelineConfig pc = small_config(stages);
                pc.micro_batch = micro;
                pc.iterations = 200;
                Pipeline pipe(pc);
                Dataset data = small_dataset(pc);
                Adversary adv = no_attack(pc);
                const RunMetrics m = run_training(pipe, data, adv);

                StageModule mono = reference_model(pc);
                const std::vector<double> ref =
                    reference_training(mono, data, pc.iterations, pc.batch_size, pc.lr);
                ++combos;
                if (m.loss.size() != ref.size()) {
                    ++mismatches;
                    continue;
                }
                for (size_t i = 0; i < ref.size(); ++i)
                    if (m.loss[i] != ref[i]) {
                        ++mismatches;
                        break;
                    }
            }
        }
        const double el = seconds_since(t0);
        return std::make_pair(
            mismatches == 0 && el < 30.0,
            "pipeline loss series bitwise equals monolithic trainer for " +
                std::to_string(combos) +
                " (K, micro) combos x 200 iterations, mismatches " +
                std::to_string(mismatches) + " (" + fmt(el, 2) + "s < 30s)");
    });

    gate.criterion(3, "detection soundness", [] {
        const PipelineMode modes[] = {PipelineMode::kBaseline, PipelineMode::kRobustDirect,
                                      PipelineMode::kRobustCentral};
        const int stage_counts[] = {4, 5, 6};
        int alerts = 0, restarts = 0;
        for (uint64_t s = 1; s <= 10; ++s) {
            PipelineConfig pc = small_config(stage_counts[s % 3], modes[s % 3]);
            pc.iterations = 500;
            pc.init_seed = pc.data_seed = pc.adversary_seed = pc.schedule_seed = s;
            Pipeline pipe(pc);
            Dataset data = small_dataset(pc);
            Adversary adv = no_attack(pc);
            const RunMetrics m = run_training(pipe, data, adv);
            alerts += m.alert_count();
            restarts += m.restart_count;
        }
        return std::make_pair(alerts == 0 && restarts == 0,
                              "10 attack-free runs (mixed modes/stage counts/seeds, 500 "
                              "iterations each) raised " +
                                  std::to_string(alerts) + " alerts, " +
                                  std::to_string(restarts) + " restarts");
    });

    gate.criterion(4, "detection completeness", [] {
        const AttackKind kinds[] = {AttackKind::kForwardFlip, AttackKind::kBackwardGauss,
                                    AttackKind::kStealthy};
        const PipelineMode modes[] = {PipelineMode::kRobustDirect, PipelineMode::kRobustCentral};
        RandomStream targets(7, "acceptance");
        const int trials = 504;
        int alerted = 0, localized = 0;
        for (int trial = 0; trial < trials; ++trial) {
            const AttackKind kind = kinds[trial % 3];
            const PipelineMode mode = modes[(trial / 3) % 2];
            const int target = targets.uniform_int(2, 5);

            PipelineConfig pc = small_config(6, mode);
            Pipeline pipe(pc);
            Dataset data = small_dataset(pc);
            Adversary adv = make_adversary(pc, kind, 1.0, target);
            Batch b0 = batch_for_iteration(data, 0, pc.batch_size);
            const AttemptResult r = pipe.run_attempt(b0.inputs, b0.labels, 0, 0,
                                                     ActiveAttack{kind, target}, &adv);
            if (r.alerts.empty()) continue;
            ++alerted;
            const auto& sus = r.alerts.front().suspects;
            if (std::find(sus.begin(), sus.end(), target) != sus.end()) ++localized;
        }
        return std::make_pair(
            alerted == trials && localized == trials,
            std::to_string(trials) +
                " attacked iterations (flip/gauss/stealthy x random stages x "
                "direct+central): same-iteration alerts " +
                std::to_string(alerted) + "/" + std::to_string(trials) + ", attacker in suspect set " +
                std::to_string(localized) + "/" + std::to_string(trials));
    });

    gate.criterion(5, "vulnerability analogue", [] {
        const std::vector<double> clean = clean_finals();
        double max_run_sec = 0.0;
        int good = 0;
        std::string ratios;
        for (size_t i = 0; i < kSeeds.size(); ++i) {
            auto timed = [&](const std::string& attack) {
                const auto t0 = std::chrono::steady_clock::now();
                const double fl = run_scenario(desk_config(kSeeds[i], attack)).final_loss();
                max_run_sec = std::max(max_run_sec, seconds_since(t0));
                return fl;
            };
            const double bg =
                timed(R"("attack": {"kind": "backward_gauss", "rate": 0.7})") / clean[i];
            const double ff =
                timed(R"("attack": {"kind": "forward_flip", "rate": 0.7})") / clean[i];
            if (bg >= 2.0 && ff >= 2.0) ++good;
            ratios += (i ? " " : "") + fmt(bg, 3) + "/" + fmt(ff, 3);
        }
        return std::make_pair(good >= 4 && max_run_sec < 60.0,
                              "baseline loss ratios vs clean at rate 0.7 (gauss/flip per seed: " +
                                  ratios + "), >=2x both for " + std::to_string(good) +
                                  "/5 seeds (need 4; slowest run " + fmt(max_run_sec, 2) +
                                  "s < 60s)");
    });

    gate.criterion(6, "defense analogue", [] {
        const std::vector<double> clean = clean_finals();
        int good = 0;
        std::string detail;
        for (size_t i = 0; i < kSeeds.size(); ++i) {
            const std::string attack =
                R"("attack": {"kind": "forward_flip", "rate": 0.5, "target": 3})";
            const double attacked = run_scenario(desk_config(kSeeds[i], attack)).final_loss();
            const double defended =
                run_scenario(desk_config(kSeeds[i], R"("mode": "robust_central", )" + attack))
                    .final_loss();
            const bool ok = defended <= 1.25 * clean[i] && defended <= 0.5 * attacked;
            if (ok) ++good;
            detail += (i ? " " : "") + fmt(defended / clean[i], 3);
        }
        return std::make_pair(good >= 4,
                              "robust final loss vs clean at flip rate 0.5 (per seed: " + detail +
                                  "), <=1.25x clean and <=0.5x undefended for " +
                                  std::to_string(good) + "/5 seeds (need 4)");
    });

    gate.criterion(7, "skip-layer recovery", [] {
        const ExperimentConfig cfg = desk_config(
            42, R"("mode": "robust_direct", "attack": {"kind": "forward_flip", "rate": 1.0, "target": 4})");
        Dataset data = build_dataset(cfg);
        Pipeline pipe(cfg.pipeline);
        Adversary adv(cfg.attack, cfg.pipeline.stages, cfg.pipeline.iterations,
                      cfg.pipeline.adversary_seed, cfg.pipeline.schedule_seed);
        const RunMetrics m = run_training(pipe, data, adv);
        if (m.skip_events.empty())
            return std::make_pair(false, std::string("no skip was installed"));
        const SkipEvent skip = m.skip_events.front();

        const bool contains_attacker = skip.first == 4 || skip.second == 4;
        bool post_skip_quiet = true;
        for (const AlertEvent& a : m.alerts)
            if (a.iteration > skip.iteration) post_skip_quiet = false;

        // The skip landed during iteration 0, before any commit, so the frozen
        // modules must still hold their initial parameters.
        Pipeline fresh(cfg.pipeline);
        const bool frozen_ok =
            pipe.stage(skip.first - 1).snapshot_params() ==
                fresh.stage(skip.first - 1).snapshot_params() &&
            pipe.dup_of(skip.second).snapshot_params() ==
                fresh.dup_of(skip.second).snapshot_params();

        const double at_skip = m.loss[static_cast<size_t>(skip.iteration)];
        const double final_loss = m.final_loss();
        const bool recovered = final_loss < 0.5 * at_skip;
        return std::make_pair(
            contains_attacker && post_skip_quiet && frozen_ok && recovered && !m.aborted,
            "persistent flip at stage 4 -> skip {" + std::to_string(skip.first) + "," +
                std::to_string(skip.second) + "}, post-skip alert-free " +
                (post_skip_quiet ? "yes" : "NO") + ", frozen params constant " +
                (frozen_ok ? "yes" : "NO") + ", loss " + fmt(at_skip, 3) + " at skip -> " +
                fmt(final_loss, 3) + " final");
    });

    const fs::path scratch = fs::temp_directory_path() / "pipesentry_acceptance";
    fs::remove_all(scratch);

    gate.criterion(8, "determinism", [&] {
        ExperimentConfig cfg = parse_config_text(
            R"({"K": 6, "iterations": 100, "seed": 42, "mode": "robust_direct",
                "attack": {"kind": "forward_flip", "rate": 0.3, "target": 3}})");
        cfg.out_dir = (scratch / "a").string();
        run_experiment(cfg);
        cfg.out_dir = (scratch / "b").string();
        run_experiment(cfg);
        int equal = 0, files = 0;
        std::string alerts_note;
        for (const char* name : {"metrics.csv", "alerts.jsonl", "summary.json"}) {
            ++files;
            if (slurp(scratch / "a" / name) == slurp(scratch / "b" / name)) ++equal;
        }
        const std::string alerts = slurp(scratch / "a" / "alerts.jsonl");
        const long alert_lines = std::count(alerts.begin(), alerts.end(), '\n');
        return std::make_pair(equal == files && alert_lines > 0,
                              "attacked robust rerun byte-identical for " + std::to_string(equal) +
                                  "/3 of metrics.csv, alerts.jsonl, summary.json (" +
                                  std::to_string(alert_lines) + " alert lines exercised)");
    });

    gate.criterion(9, "reference-data integrity", [&] {
        const std::string report =
            compare_runs({(scratch / "a" / "summary.json").string(),
                          (scratch / "b" / "summary.json").string()},
                         std::string(PIPESENTRY_SOURCE_DIR) + "/data/reference_tables.json");
        const std::string prefix = "best published improvement: ";
        const size_t pos = report.find(prefix);
        if (pos == std::string::npos)
            return std::make_pair(false,
                                  std::string("comparison report lacks the published-ratio line"));
        const double ratio = std::strtod(report.c_str() + pos + prefix.size(), nullptr);
        return std::make_pair(std::abs(ratio - 102.2) <= 0.1,
                              "compare reports best published improvement " + fmt(ratio, 5) +
                                  "x (expected 102.2 +- 0.1)");
    });

    fs::remove_all(scratch);
    std::cout << (9 - gate.failures) << " of 9 criteria passed\n";
    return gate.failures == 0 ? 0 : 1;
}
