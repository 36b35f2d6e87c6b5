// Run telemetry: everything a training run records, plus deterministic
// number formatting shared by the CSV/JSON writers (shortest round-trip
// form, so identical runs serialize to identical bytes).
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pipesentry/defense.hpp"

namespace pipesentry {

struct SkipEvent {
    int iteration = 0;
    int first = 0;
    int second = 0;
};

struct RunMetrics {
    std::string task;
    double initial_loss = 0.0;
    std::vector<double> loss;                     // one entry per completed iteration
    std::vector<int> alerts_per_iteration;        // same length as loss
    std::vector<std::string> mode_per_iteration;  // mode active when the iteration completed
    std::vector<AlertEvent> alerts;
    std::vector<int> attacked_iterations;  // iterations where a tamper actually landed
    std::vector<SkipEvent> skip_events;
    int restart_count = 0;
    int escalation_iteration = -1;  // first iteration run under escalated routing
    std::map<std::string, long long> messages;  // by message kind
    long long recomputations = 0;               // duplicate forward/backward reruns
    std::string final_mode;
    bool aborted = false;
    std::string abort_reason;
    double wall_time_sec = 0.0;  // reported to the console only, never persisted

    int alert_count() const { return static_cast<int>(alerts.size()); }

    // Final loss: mean over the last tenth of completed iterations (at least
    // one), smoothing single-iteration noise; initial loss if none completed.
    double final_loss() const {
        if (loss.empty()) return initial_loss;
        const size_t window = loss.size() >= 10 ? loss.size() / 10 : 1;
        double sum = 0.0;
        for (size_t i = loss.size() - window; i < loss.size(); ++i) sum += loss[i];
        return sum / static_cast<double>(window);
    }

    double final_ppl() const { return std::exp(final_loss()); }
};

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

}  // namespace pipesentry
