// Inter-stage message envelope. Every transmission in the simulator is one
// PipelineMessage routed through the coordinator, so attacks and checks both
// operate on a single well-defined surface.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "pipesentry/tensor.hpp"

namespace pipesentry {

enum class MessageKind : uint8_t {
    kFwdAct,     // activations to the next stage (payload + sender's input echo)
    kFwdJump,    // activations to the stage after next, for cross-checking
    kBwdGrad,    // gradient w.r.t. the receiver's output
    kBwdJump,    // independently recomputed gradient expectation, for checking
    kParamSync,  // parameter blob refreshing a duplicate copy
    kAlert,      // verification failure notice to the coordinator
    kControl,    // coordinator directive (restart, reroute)
};

inline std::string to_string(MessageKind k) {
    switch (k) {
        case MessageKind::kFwdAct: return "fwd_act";
        case MessageKind::kFwdJump: return "fwd_jump";
        case MessageKind::kBwdGrad: return "bwd_grad";
        case MessageKind::kBwdJump: return "bwd_jump";
        case MessageKind::kParamSync: return "param_sync";
        case MessageKind::kAlert: return "alert";
        case MessageKind::kControl: return "control";
    }
    return "unknown";
}

struct PipelineMessage {
    MessageKind kind = MessageKind::kFwdAct;
    int from_stage = 0;  // 0 = coordinator
    int to_stage = 0;    // 0 = coordinator
    int iteration = 0;
    int micro_index = 0;

    // kFwdAct: payload = a_out, aux = a_in echo (empty in baseline mode).
    // kFwdJump: payload = a_out.
    // kBwdGrad: payload = g_out, aux = incoming-gradient echo (may be empty).
    // kBwdJump: payload = recomputed expected gradient.
    std::optional<Tensor> payload;
    std::optional<Tensor> aux;

    std::vector<uint8_t> blob;  // kParamSync only
    std::string note;           // kAlert / kControl detail

    bool tampered = false;  // ground-truth bookkeeping, invisible to checks
};

}  // namespace pipesentry
