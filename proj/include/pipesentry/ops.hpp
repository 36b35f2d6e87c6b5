// Elementwise nonlinearities and the softmax cross-entropy head.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pipesentry/tensor.hpp"

namespace pipesentry {

enum class Activation { kTanh, kRelu };

inline const char* to_string(Activation a) {
    return a == Activation::kTanh ? "tanh" : "relu";
}

inline Tensor activation_apply(Activation kind, const Tensor& x) {
    Tensor out = x;
    if (kind == Activation::kTanh) {
        for (double& v : out.data()) v = std::tanh(v);
    } else {
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    }
    return out;
}

// upstream ⊙ d(activation)/dx evaluated at the cached pre-activation x.
inline Tensor activation_grad(Activation kind, const Tensor& x, const Tensor& upstream) {
    detail::require_same_shape(x, upstream, "activation_grad");
    Tensor out = upstream;
    if (kind == Activation::kTanh) {
        for (size_t i = 0; i < out.size(); ++i) {
            const double t = std::tanh(x.data()[i]);
            out.data()[i] *= 1.0 - t * t;
        }
    } else {
        for (size_t i = 0; i < out.size(); ++i) {
            if (x.data()[i] <= 0.0) out.data()[i] = 0.0;
        }
    }
    return out;
}

// Per-row cross-entropy terms and unscaled gradients (softmax - onehot).
//
// This is the form the training loop accumulates: summing row terms in row
// order and applying the 1/batch factor once at the end keeps micro-batched
// runs bit-identical to full-batch runs. Stabilized by row-max subtraction.
struct RowLoss {
    std::vector<double> row_losses;  // one term per logits row
    Tensor row_grads;                // softmax - onehot, unscaled
};

inline RowLoss softmax_cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != logits.rows()) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         logits.shape() + " logits");
    }
    RowLoss out;
    out.row_losses.resize(logits.rows());
    out.row_grads = Tensor(logits.rows(), logits.cols());
    for (int r = 0; r < logits.rows(); ++r) {
        const int label = labels[r];
        if (label < 0 || label >= logits.cols()) {
            throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                             std::to_string(logits.cols()) + " classes at row " + std::to_string(r));
        }
        double row_max = logits.at(r, 0);
        for (int c = 1; c < logits.cols(); ++c) row_max = std::max(row_max, logits.at(r, c));
        double denom = 0.0;
        for (int c = 0; c < logits.cols(); ++c) denom += std::exp(logits.at(r, c) - row_max);
        out.row_losses[r] = std::log(denom) - (logits.at(r, label) - row_max);
        for (int c = 0; c < logits.cols(); ++c) {
            out.row_grads.at(r, c) = std::exp(logits.at(r, c) - row_max) / denom;
        }
        out.row_grads.at(r, label) -= 1.0;
    }
    return out;
}

struct LossResult {
    double loss = 0.0;  // mean cross-entropy over rows
    Tensor grad;        // (softmax - onehot) / rows
};

inline LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    RowLoss rows = softmax_cross_entropy_rows(logits, labels);
    LossResult out;
    double acc = 0.0;
    for (double v : rows.row_losses) acc += v;
    out.loss = acc / logits.rows();
    out.grad = scale(rows.row_grads, 1.0 / logits.rows());
    return out;
}

}  // namespace pipesentry
