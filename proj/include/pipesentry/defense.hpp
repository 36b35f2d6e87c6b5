// Detection and recovery: duplicate-block recomputation, jump cross-checks,
// mirrored backward verification, suspect localization, and the escalation
// ladder (restart -> central routing -> skip-layer bypass).
#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pipesentry/stage.hpp"
#include "pipesentry/tensor.hpp"

namespace pipesentry {

enum class PipelineMode { kBaseline, kRobustDirect, kRobustCentral };

inline std::string to_string(PipelineMode m) {
    switch (m) {
        case PipelineMode::kBaseline: return "baseline";
        case PipelineMode::kRobustDirect: return "robust_direct";
        case PipelineMode::kRobustCentral: return "robust_central";
    }
    return "unknown";
}

inline PipelineMode mode_from_string(const std::string& s) {
    if (s == "baseline") return PipelineMode::kBaseline;
    if (s == "robust_direct") return PipelineMode::kRobustDirect;
    if (s == "robust_central") return PipelineMode::kRobustCentral;
    throw ConfigError("unknown mode '" + s + "'");
}

enum class CheckKind { kDupBlock, kJump, kBackwardMirror, kTimeout };

inline std::string to_string(CheckKind k) {
    switch (k) {
        case CheckKind::kDupBlock: return "dup_block";
        case CheckKind::kJump: return "jump";
        case CheckKind::kBackwardMirror: return "backward_mirror";
        case CheckKind::kTimeout: return "timeout";
    }
    return "unknown";
}

struct Verdict {
    bool match = true;
    double max_abs_diff = 0.0;
    std::string location;
};

struct AlertEvent {
    int iteration = 0;
    int attempt = 0;
    int micro_index = 0;
    CheckKind kind = CheckKind::kDupBlock;
    bool backward = false;
    int raised_by = 0;  // 0 = coordinator/server
    std::vector<int> suspects;
    double max_abs_diff = 0.0;
    std::string note;
};

struct RecoveryPolicy {
    int restart_cap = 3;      // R: both the distinct-alert-iteration escalation
                              // threshold and the per-iteration attempt budget
    bool escalation = true;   // false: exhaust restarts, then abort
};

// Compatibility verdict: match iff every element differs by at most tol.
// Shape mismatches and non-finite differences are mismatches, never errors —
// a malformed claim is itself evidence of tampering.
inline Verdict compare_tensors(const Tensor& claim, const Tensor& expected, double tol,
                               std::string location) {
    Verdict v;
    v.location = std::move(location);
    v.max_abs_diff = max_abs_diff(claim, expected);
    v.match = v.max_abs_diff <= tol;
    return v;
}

// Duplicate-block recomputation: rerun the predecessor's claimed input through
// the local duplicate and compare with the claimed output. The recomputation
// cache is returned so the backward mirror can reuse it.
struct ForwardCheck {
    Verdict verdict;
    std::optional<ForwardCache> cache;
};

inline ForwardCheck verify_forward(const StageModule& dup, const Tensor& a_in_claim,
                                   const Tensor& a_out_claim, double tol, std::string location) {
    ForwardCheck c;
    try {
        ForwardResult r = dup.forward(a_in_claim);
        c.verdict = compare_tensors(a_out_claim, r.output, tol, std::move(location));
        c.cache = std::move(r.cache);
    } catch (const ShapeError& e) {
        c.verdict.match = false;
        c.verdict.max_abs_diff = std::numeric_limits<double>::infinity();
        c.verdict.location = std::move(location);
        c.verdict.location += " (structural: " + std::string(e.what()) + ")";
    }
    return c;
}

// Jump cross-check: the sender's claimed input must equal what its own
// predecessor transmitted two hops ahead.
inline Verdict verify_jump(const Tensor& a_in_claim, const Tensor& a_jump, double tol,
                           std::string location) {
    return compare_tensors(a_in_claim, a_jump, tol, std::move(location));
}

// Backward mirror: recompute the gradient the verified stage should have
// produced, from its duplicate, the cached duplicate forward, and the gradient
// this stage itself handed it. Parameter gradients land in a scratch
// accumulator and are discarded.
inline Tensor mirror_expected(const StageModule& dup, const ForwardCache& dup_cache,
                              const Tensor& grad_sent) {
    StageGrads scratch = dup.zero_grads();
    return dup.backward(dup_cache, grad_sent, scratch);
}

namespace detail {
inline std::vector<int> clip_interior(std::initializer_list<int> stages, int num_stages) {
    std::vector<int> out;
    for (int s : stages)
        if (s >= 2 && s <= num_stages - 1) out.push_back(s);
    std::sort(out.begin(), out.end());
    return out;
}
}  // namespace detail

// Suspect localization. Endpoint stages are trusted and never suspected.
// Direct routing: a forward mismatch observed at stage r implicates the
// claimed sender, the jump sender, or a lying observer; a backward mismatch
// at r implicates the claiming successor, the mirror sender, or r itself.
// Central routing: the server's own record shrinks suspects to a pair.
inline std::vector<int> suspects_forward(int raised_by, int num_stages, PipelineMode mode) {
    if (mode == PipelineMode::kRobustCentral)
        return detail::clip_interior({raised_by - 1, raised_by}, num_stages);
    return detail::clip_interior({raised_by - 2, raised_by - 1, raised_by}, num_stages);
}

inline std::vector<int> suspects_backward(int receiver, int num_stages, PipelineMode mode) {
    if (mode == PipelineMode::kRobustCentral)
        return detail::clip_interior({receiver + 1, receiver + 2}, num_stages);
    return detail::clip_interior({receiver, receiver + 1, receiver + 2}, num_stages);
}

inline std::vector<int> suspects_timeout(int silent_sender, int num_stages) {
    return detail::clip_interior({silent_sender}, num_stages);
}

// Maps a suspect set to the adjacent pair the skip-layer bypass removes.
// A singleton is padded with its inner neighbor so the pair stays interior.
inline std::pair<int, int> skip_pair_from_suspects(const std::vector<int>& suspects,
                                                   int num_stages) {
    if (suspects.empty()) throw StructureError("cannot derive a skip pair from no suspects");
    const int a = suspects.front();
    if (suspects.size() >= 2 && suspects[1] == a + 1) return {a, a + 1};
    if (a + 1 <= num_stages - 1) return {a, a + 1};
    return {a - 1, a};
}

}  // namespace pipesentry
