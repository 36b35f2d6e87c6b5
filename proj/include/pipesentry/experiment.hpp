// Experiment front end: dataset construction, the scenario runner that
// persists metrics.csv / alerts.jsonl / summary.json / resolved-config.json,
// and the multi-run comparison report. Every artifact is byte-identical
// across repeated runs of the same config.
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pipesentry/config.hpp"
#include "pipesentry/pipeline.hpp"

namespace pipesentry {

inline Dataset build_dataset(const ExperimentConfig& cfg) {
    if (cfg.task == "gauss_classify") {
        RandomStream data_stream(cfg.pipeline.data_seed, "data");
        return gauss_classify(cfg.pipeline.classes, cfg.pipeline.input_dim, cfg.samples,
                              data_stream);
    }
    return char_lm(read_text_file(cfg.corpus), cfg.samples);
}

inline nlohmann::ordered_json alert_to_json(const AlertEvent& a) {
    nlohmann::ordered_json j;
    j["iteration"] = a.iteration;
    j["attempt"] = a.attempt;
    j["micro"] = a.micro_index;
    j["check"] = to_string(a.kind);
    j["backward"] = a.backward;
    j["raised_by"] = a.raised_by;
    j["suspects"] = a.suspects;
    j["max_abs_diff"] = a.max_abs_diff;
    j["note"] = a.note;
    return j;
}

inline std::vector<int> distinct_alert_iterations(const RunMetrics& m) {
    std::set<int> distinct;
    for (const AlertEvent& a : m.alerts) distinct.insert(a.iteration);
    return std::vector<int>(distinct.begin(), distinct.end());
}

inline nlohmann::ordered_json summary_json(const ExperimentConfig& cfg, const RunMetrics& m) {
    nlohmann::ordered_json j;
    j["task"] = m.task;
    j["mode"] = to_string(cfg.pipeline.mode);
    j["final_mode"] = m.final_mode;
    j["attack"] = {{"kind", to_string(cfg.attack.kind)},
                   {"rate", cfg.attack.rate},
                   {"scheduling", to_string(cfg.attack.scheduling)},
                   {"target", cfg.attack.target ? nlohmann::ordered_json(*cfg.attack.target)
                                                : nlohmann::ordered_json(nullptr)}};
    j["seeds"] = {{"init", cfg.pipeline.init_seed},
                  {"data", cfg.pipeline.data_seed},
                  {"adversary", cfg.pipeline.adversary_seed},
                  {"schedule", cfg.pipeline.schedule_seed}};
    j["iterations"] = cfg.pipeline.iterations;
    j["completed_iterations"] = static_cast<int>(m.loss.size());
    j["initial_loss"] = m.initial_loss;
    j["final_loss"] = m.final_loss();
    j["final_ppl"] = m.final_ppl();
    j["alert_count"] = m.alert_count();
    j["restart_count"] = m.restart_count;
    j["attacked_count"] = static_cast<int>(m.attacked_iterations.size());
    j["attacked_iterations"] = m.attacked_iterations;
    j["alert_iterations"] = distinct_alert_iterations(m);
    nlohmann::ordered_json skips = nlohmann::ordered_json::array();
    for (const SkipEvent& s : m.skip_events)
        skips.push_back({{"iteration", s.iteration}, {"first", s.first}, {"second", s.second}});
    j["skip_events"] = skips;
    j["escalation_iteration"] = m.escalation_iteration >= 0
                                    ? nlohmann::ordered_json(m.escalation_iteration)
                                    : nlohmann::ordered_json(nullptr);
    nlohmann::ordered_json msgs;
    for (const auto& [kind, count] : m.messages) msgs[kind] = count;
    j["messages"] = msgs;
    j["recomputations"] = m.recomputations;
    j["aborted"] = m.aborted;
    j["abort_reason"] = m.abort_reason;
    return j;
}

inline std::string metrics_csv_text(const RunMetrics& m) {
    std::string out = "iteration,loss,ppl,alerts,mode\n";
    for (size_t i = 0; i < m.loss.size(); ++i) {
        out += std::to_string(i);
        out += ',';
        out += format_double(m.loss[i]);
        out += ',';
        out += format_double(std::exp(m.loss[i]));
        out += ',';
        out += std::to_string(m.alerts_per_iteration[i]);
        out += ',';
        out += m.mode_per_iteration[i];
        out += '\n';
    }
    return out;
}

namespace expdetail {
inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StructureError("cannot write " + path.string());
    out << bytes;
    if (!out) throw StructureError("short write to " + path.string());
}
}  // namespace expdetail

inline void write_run_artifacts(const ExperimentConfig& cfg, const RunMetrics& m) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    expdetail::write_file(dir / "metrics.csv", metrics_csv_text(m));
    std::string alerts;
    for (const AlertEvent& a : m.alerts) alerts += alert_to_json(a).dump() + "\n";
    expdetail::write_file(dir / "alerts.jsonl", alerts);
    expdetail::write_file(dir / "summary.json", summary_json(cfg, m).dump(2) + "\n");
    expdetail::write_file(dir / "resolved-config.json", canonical_text(cfg));
}

struct ExperimentResult {
    RunMetrics metrics;
    bool aborted = false;
};

// Runs one scenario end to end and persists its artifacts. Aborted runs
// still write everything gathered up to the abort, plus the reason.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* console = nullptr) {
    Dataset data = build_dataset(cfg);
    Pipeline pipeline(cfg.pipeline);
    Adversary adversary(cfg.attack, cfg.pipeline.stages, cfg.pipeline.iterations,
                        cfg.pipeline.adversary_seed, cfg.pipeline.schedule_seed);

    std::ofstream trace_out;
    if (cfg.trace) {
        std::filesystem::create_directories(cfg.out_dir);
        trace_out.open(std::filesystem::path(cfg.out_dir) / "trace.jsonl",
                       std::ios::binary | std::ios::trunc);
        pipeline.set_trace([&trace_out](const PipelineMessage& msg) {
            nlohmann::ordered_json j;
            j["kind"] = to_string(msg.kind);
            j["from"] = msg.from_stage;
            j["to"] = msg.to_stage;
            j["iteration"] = msg.iteration;
            j["micro"] = msg.micro_index;
            if (msg.payload) {
                j["rows"] = msg.payload->rows();
                j["cols"] = msg.payload->cols();
                j["checksum"] = checksum(*msg.payload);
            }
            if (!msg.blob.empty()) j["blob_bytes"] = msg.blob.size();
            if (msg.tampered) j["tampered"] = true;  // simulator ground truth; checks never see it
            if (!msg.note.empty()) j["note"] = msg.note;
            trace_out << j.dump() << "\n";
        });
    }

    ExperimentResult result;
    try {
        result.metrics = run_training(pipeline, data, adversary);
    } catch (const AbortedRunError& e) {
        result.metrics = e.metrics;
        result.aborted = true;
    }
    write_run_artifacts(cfg, result.metrics);

    if (console) {
        const RunMetrics& m = result.metrics;
        *console << "task " << m.task << ", mode " << to_string(cfg.pipeline.mode) << " -> "
                 << m.final_mode << ", " << m.loss.size() << "/" << cfg.pipeline.iterations
                 << " iterations\n"
                 << "final loss " << format_double(m.final_loss()) << ", ppl "
                 << format_double(m.final_ppl()) << ", alerts " << m.alert_count()
                 << ", restarts " << m.restart_count << ", attacked iterations "
                 << m.attacked_iterations.size() << "\n";
        if (result.aborted) *console << "run aborted: " << m.abort_reason << "\n";
        *console << "artifacts in " << cfg.out_dir << " (wall time "
                 << format_double(m.wall_time_sec) << "s)\n";
    }
    return result;
}

// ---------------------------------------------------------------------------
// Comparison report across persisted runs.

namespace expdetail {

struct SummaryInfo {
    std::string label;
    std::string task;
    std::string mode;
    std::string final_mode;
    std::string attack_kind;
    double rate = 0.0;
    double final_loss = 0.0;
    double final_ppl = 0.0;
    int completed = 0;
    int alert_count = 0;
    bool aborted = false;
    std::vector<int> attacked;
    std::vector<int> alert_iterations;
    long long messages_total = 0;
    long long recomputations = 0;

    bool is_attacked() const { return !attacked.empty(); }
    // Fraction of attacked iterations that raised at least one alert.
    double detection_rate() const {
        if (attacked.empty()) return 0.0;
        int hit = 0;
        for (int it : attacked)
            if (std::binary_search(alert_iterations.begin(), alert_iterations.end(), it)) ++hit;
        return static_cast<double>(hit) / static_cast<double>(attacked.size());
    }
};

inline SummaryInfo load_summary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read summary file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object())
        throw ConfigError("summary file " + path + " is not a JSON object");
    SummaryInfo s;
    const std::filesystem::path p(path);
    s.label = p.has_parent_path() && p.parent_path().has_filename()
                  ? p.parent_path().filename().string()
                  : p.filename().string();
    try {
        s.task = j.at("task").get<std::string>();
        s.mode = j.at("mode").get<std::string>();
        s.final_mode = j.at("final_mode").get<std::string>();
        s.attack_kind = j.at("attack").at("kind").get<std::string>();
        s.rate = j.at("attack").at("rate").get<double>();
        s.final_loss = j.at("final_loss").get<double>();
        s.final_ppl = j.at("final_ppl").get<double>();
        s.completed = j.at("completed_iterations").get<int>();
        s.alert_count = j.at("alert_count").get<int>();
        s.aborted = j.at("aborted").get<bool>();
        s.attacked = j.at("attacked_iterations").get<std::vector<int>>();
        s.alert_iterations = j.at("alert_iterations").get<std::vector<int>>();
        for (const auto& [kind, count] : j.at("messages").items())
            s.messages_total += count.get<long long>();
        s.recomputations = j.at("recomputations").get<long long>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("summary file " + path + " is missing fields: " + e.what());
    }
    std::sort(s.alert_iterations.begin(), s.alert_iterations.end());
    return s;
}

inline std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace expdetail

// Side-by-side report over two or more summary.json files: per-run stats,
// attacked/clean and attacked/defended loss ratios, detection rates, and
// message/recomputation overhead against the first baseline-mode run. All
// summaries must describe the same task.
inline std::string compare_runs(const std::vector<std::string>& summary_paths,
                                const std::string& reference_tables_path = "") {
    using expdetail::SummaryInfo;
    if (summary_paths.size() < 2)
        throw ConfigError("compare needs at least 2 summary files, got " +
                          std::to_string(summary_paths.size()));
    std::vector<SummaryInfo> runs;
    for (const std::string& p : summary_paths) runs.push_back(expdetail::load_summary(p));
    for (const SummaryInfo& s : runs) {
        if (s.task != runs.front().task)
            throw ConfigError("comparison error: run \"" + s.label + "\" is task " + s.task +
                              " but \"" + runs.front().label + "\" is task " + runs.front().task);
    }

    std::ostringstream os;
    os << std::left << std::setw(18) << "run" << std::setw(15) << "mode" << std::setw(18)
       << "attack" << std::right << std::setw(8) << "rate" << std::setw(14) << "final_loss"
       << std::setw(14) << "final_ppl" << std::setw(8) << "alerts" << std::setw(10) << "detect"
       << "\n";
    for (const SummaryInfo& s : runs) {
        std::string mode = s.mode;
        if (s.final_mode != s.mode) mode += "->" + s.final_mode;
        os << std::left << std::setw(18) << s.label << std::setw(15) << mode << std::setw(18)
           << s.attack_kind << std::right << std::setw(8) << expdetail::fixed(s.rate, 2)
           << std::setw(14) << expdetail::fixed(s.final_loss, 6) << std::setw(14)
           << expdetail::fixed(s.final_ppl, 4) << std::setw(8) << s.alert_count << std::setw(10)
           << (s.is_attacked() ? expdetail::fixed(s.detection_rate(), 3) : std::string("-"));
        if (s.aborted) os << "  (aborted)";
        os << "\n";
    }

    const SummaryInfo* clean = nullptr;
    const SummaryInfo* attacked = nullptr;  // undefended
    const SummaryInfo* defended = nullptr;
    const SummaryInfo* baseline = nullptr;
    for (const SummaryInfo& s : runs) {
        if (!clean && !s.is_attacked()) clean = &s;
        if (!attacked && s.is_attacked() && s.mode == "baseline") attacked = &s;
        if (!defended && s.is_attacked() && s.mode != "baseline") defended = &s;
        if (s.mode == "baseline" && (!baseline || (baseline->is_attacked() && !s.is_attacked())))
            baseline = &s;  // prefer a clean baseline as the overhead reference
    }

    os << "\nratios (final loss):\n";
    if (attacked && clean)
        os << "  attacked/clean    " << expdetail::fixed(attacked->final_loss / clean->final_loss, 4)
           << "  (" << attacked->label << " vs " << clean->label << ")\n";
    if (attacked && defended)
        os << "  attacked/defended "
           << expdetail::fixed(attacked->final_loss / defended->final_loss, 4) << "  ("
           << attacked->label << " vs " << defended->label << ")\n";
    if (defended && clean)
        os << "  defended/clean    " << expdetail::fixed(defended->final_loss / clean->final_loss, 4)
           << "  (" << defended->label << " vs " << clean->label << ")\n";
    if (!(attacked && clean) && !(attacked && defended) && !(defended && clean))
        os << "  (need runs from at least two of: clean, attacked baseline, defended)\n";

    if (baseline) {
        os << "\noverhead vs " << baseline->label << ":\n";
        for (const SummaryInfo& s : runs) {
            if (&s == baseline) continue;
            os << "  " << s.label << ": messages " << s.messages_total << " vs "
               << baseline->messages_total;
            if (baseline->messages_total > 0)
                os << " ("
                   << expdetail::fixed(static_cast<double>(s.messages_total) /
                                           static_cast<double>(baseline->messages_total),
                                       2)
                   << "x)";
            os << ", recomputations " << s.recomputations << " vs " << baseline->recomputations
               << "\n";
        }
    }

    // Context block from the bundled large-scale reference tables, when found.
    std::string ref_path = reference_tables_path;
    if (ref_path.empty()) {
        if (const char* env = std::getenv("PIPESENTRY_REFERENCE_TABLES")) ref_path = env;
    }
    if (ref_path.empty() && std::filesystem::exists("data/reference_tables.json"))
        ref_path = "data/reference_tables.json";
    if (!ref_path.empty() && std::filesystem::exists(ref_path)) {
        std::ifstream in(ref_path, std::ios::binary);
        nlohmann::json ref = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (!ref.is_discarded() && ref.is_object() && ref.contains("defense")) {
            os << "\nreference: published large-scale results (not reproduced at this scale):\n";
            double best_ratio = 0.0;
            std::string best_label;
            for (const auto& row : ref["defense"]) {
                const double att = row.at("attacked").get<double>();
                const double def = row.at("defended").get<double>();
                const std::string label = row.at("model").get<std::string>() + " " +
                                          row.at("dataset").get<std::string>();
                os << "  " << std::left << std::setw(26) << label << std::right
                   << " attacked ppl " << std::setw(10) << expdetail::fixed(att, 2)
                   << " -> defended ppl " << std::setw(8) << expdetail::fixed(def, 2) << "  ("
                   << expdetail::fixed(att / def, 2) << "x)\n";
                if (def > 0.0 && att / def > best_ratio) {
                    best_ratio = att / def;
                    best_label = label;
                }
            }
            if (best_ratio > 0.0)
                os << "  best published improvement: " << expdetail::fixed(best_ratio, 2) << "x ("
                   << best_label << ")\n";
        }
    }
    return os.str();
}

}  // namespace pipesentry
