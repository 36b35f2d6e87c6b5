// Attack model: a compromised interior stage corrupts what it transmits.
// Endpoint stages (first and last) hold the data and the loss and are trusted;
// every stage in between is a candidate target.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pipesentry/random.hpp"
#include "pipesentry/tensor.hpp"

namespace pipesentry {

enum class AttackKind {
    kNone,
    kForwardFlip,     // sends -a_out instead of a_out
    kBackwardGauss,   // replaces outgoing gradients with fresh N(0,1) noise
    kStealthy,        // sends a consistent fake (input, output) pair
    kCrash,           // goes silent in both directions
};

enum class AttackScheduling {
    kBernoulli,   // each iteration attempt attacked independently with prob = rate
    kExactCount,  // exactly floor(rate * iterations) iterations attacked
};

inline std::string to_string(AttackKind k) {
    switch (k) {
        case AttackKind::kNone: return "none";
        case AttackKind::kForwardFlip: return "forward_flip";
        case AttackKind::kBackwardGauss: return "backward_gauss";
        case AttackKind::kStealthy: return "stealthy_forward";
        case AttackKind::kCrash: return "crash";
    }
    return "unknown";
}

inline std::string to_string(AttackScheduling s) {
    return s == AttackScheduling::kBernoulli ? "bernoulli" : "exact_count";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
    if (s == "none") return AttackKind::kNone;
    if (s == "forward_flip") return AttackKind::kForwardFlip;
    if (s == "backward_gauss") return AttackKind::kBackwardGauss;
    if (s == "stealthy_forward") return AttackKind::kStealthy;
    if (s == "crash") return AttackKind::kCrash;
    throw ConfigError("unknown attack kind '" + s + "'");
}

inline AttackScheduling attack_scheduling_from_string(const std::string& s) {
    if (s == "bernoulli") return AttackScheduling::kBernoulli;
    if (s == "exact_count") return AttackScheduling::kExactCount;
    throw ConfigError("unknown attack scheduling '" + s + "'");
}

struct AttackConfig {
    AttackKind kind = AttackKind::kNone;
    double rate = 0.0;  // fraction of attacked iterations in [0, 1]
    AttackScheduling scheduling = AttackScheduling::kExactCount;
    std::optional<int> target;  // pin the compromised stage; default draws per attack
};

struct ActiveAttack {
    AttackKind kind = AttackKind::kNone;
    int target = 0;
};

// Owns the adversary's randomness. Consumes its streams in a fixed order
// (schedule stream at construction, adversary stream once per begin_attempt
// decision and per noise tensor), so runs with equal seeds replay exactly.
class Adversary {
public:
    Adversary(const AttackConfig& cfg, int num_stages, int iterations, uint64_t adversary_seed,
              uint64_t schedule_seed)
        : cfg_(cfg),
          num_stages_(num_stages),
          stream_(adversary_seed, "adversary") {
        if (cfg_.rate < 0.0 || cfg_.rate > 1.0) {
            throw ConfigError("attack rate must be in [0, 1], got " + std::to_string(cfg_.rate));
        }
        if (cfg_.target && (*cfg_.target < 2 || *cfg_.target > num_stages - 1)) {
            throw ConfigError("attack target must be an interior stage in [2, " +
                              std::to_string(num_stages - 1) + "], got " +
                              std::to_string(*cfg_.target));
        }
        if (cfg_.scheduling == AttackScheduling::kExactCount) {
            plan_.assign(static_cast<size_t>(iterations), false);
            std::vector<int> order(static_cast<size_t>(iterations));
            for (int i = 0; i < iterations; ++i) order[static_cast<size_t>(i)] = i;
            RandomStream schedule(schedule_seed, "schedule");
            schedule.shuffle(order);
            const int attacked = static_cast<int>(cfg_.rate * iterations);
            for (int i = 0; i < attacked; ++i) plan_[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;
        }
    }

    // Decides whether this attempt at an iteration is attacked and against
    // whom. Exact-count attackers persist across restart attempts of the same
    // iteration; Bernoulli attackers redraw, so a restart may come up clean.
    std::optional<ActiveAttack> begin_attempt(int iteration, int attempt) {
        if (cfg_.kind == AttackKind::kNone || num_stages_ < 3) return std::nullopt;
        bool active = false;
        if (cfg_.scheduling == AttackScheduling::kExactCount) {
            active = iteration >= 0 && static_cast<size_t>(iteration) < plan_.size() &&
                     plan_[static_cast<size_t>(iteration)];
            if (active && attempt == 0) current_target_ = draw_target();
        } else {
            active = stream_.uniform() < cfg_.rate;
            if (active) current_target_ = draw_target();
        }
        if (!active) return std::nullopt;
        return ActiveAttack{cfg_.kind, current_target_};
    }

    int planned_attack_count() const {
        int n = 0;
        for (bool b : plan_) n += b ? 1 : 0;
        return n;
    }

    // Sign flip: the forward poisoning primitive.
    static Tensor flip(const Tensor& honest) { return negate(honest); }

    // Fresh noise of matching shape: the backward poisoning primitive and the
    // fake input of the stealthy consistent-pair attack.
    Tensor noise_like(const Tensor& t) { return gaussian(stream_, t.rows(), t.cols()); }
    Tensor noise(int rows, int cols) { return gaussian(stream_, rows, cols); }

private:
    int draw_target() {
        if (cfg_.target) return *cfg_.target;
        return stream_.uniform_int(2, num_stages_ - 1);
    }

    AttackConfig cfg_;
    int num_stages_;
    RandomStream stream_;
    std::vector<bool> plan_;
    int current_target_ = 0;
};

}  // namespace pipesentry
