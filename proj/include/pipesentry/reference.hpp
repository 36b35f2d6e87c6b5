// Reference implementations the simulator is judged against: a monolithic
// (single-module, non-pipelined) trainer that must match pipeline training
// bit for bit on clean runs, and a finite-difference gradient probe that
// never touches the analytic backward path.
#pragma once

#include <cmath>
#include <vector>

#include "pipesentry/dataset.hpp"
#include "pipesentry/pipeline.hpp"
#include "pipesentry/stage.hpp"

namespace pipesentry {

// Same layer stack and same init-stream draw order as the staged pipeline,
// so parameters start bit-identical to the concatenation of the stages.
inline StageModule reference_model(const PipelineConfig& cfg) {
    std::vector<LayerSpec> merged;
    for (const auto& specs : cfg.resolve_specs())
        merged.insert(merged.end(), specs.begin(), specs.end());
    RandomStream init(cfg.init_seed, "init");
    return StageModule(std::move(merged), 0, init);
}

// Row-summed mean loss, accumulated in row order — the exact arithmetic the
// pipeline's loss head performs.
inline double reference_loss(const StageModule& model, const Tensor& inputs,
                             const std::vector<int>& labels) {
    const Tensor logits = model.forward(inputs).output;
    RowLoss rl = softmax_cross_entropy_rows(logits, labels);
    double acc = 0.0;
    for (double term : rl.row_losses) acc += term;
    return acc / inputs.rows();
}

// Plain SGD on the whole batch, one update per iteration. Losses are the
// per-iteration training losses before each update.
inline std::vector<double> reference_training(StageModule& model, const Dataset& data,
                                              int iterations, int batch_size, double lr) {
    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(iterations));
    for (int it = 0; it < iterations; ++it) {
        Batch batch = batch_for_iteration(data, it, batch_size);
        ForwardResult fr = model.forward(batch.inputs);
        RowLoss rl = softmax_cross_entropy_rows(fr.output, batch.labels);
        double acc = 0.0;
        for (double term : rl.row_losses) acc += term;
        losses.push_back(acc / batch_size);
        StageGrads grads = model.zero_grads();
        model.backward(fr.cache, rl.row_grads, grads);
        model.apply_update(grads, lr / batch_size);
    }
    return losses;
}

// Central finite differences over every parameter, compared against the
// analytic gradients tensor by tensor with the norm-based relative error
// ||a - f|| / (||a|| + ||f||). Returns the worst tensor's error.
inline double fd_max_rel_error(StageModule& model, const Tensor& inputs,
                               const std::vector<int>& labels, double step) {
    StageGrads analytic = model.zero_grads();
    {
        ForwardResult fr = model.forward(inputs);
        RowLoss rl = softmax_cross_entropy_rows(fr.output, labels);
        model.backward(fr.cache, rl.row_grads, analytic);
    }
    const double rows = static_cast<double>(inputs.rows());

    auto loss_at = [&]() { return reference_loss(model, inputs, labels); };
    auto probe_tensor = [&](Tensor& param, const Tensor& grad) {
        double num = 0.0, na = 0.0, nf = 0.0;
        for (size_t k = 0; k < param.size(); ++k) {
            const double keep = param.data()[k];
            param.data()[k] = keep + step;
            const double up = loss_at();
            param.data()[k] = keep - step;
            const double down = loss_at();
            param.data()[k] = keep;
            const double fd = (up - down) / (2.0 * step);
            const double a = grad.data()[k] / rows;  // analytic is row-summed
            num += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        const double denom = std::sqrt(na) + std::sqrt(nf);
        return denom > 1e-12 ? std::sqrt(num) / denom : std::sqrt(num);
    };

    double worst = 0.0;
    for (size_t li = 0; li < model.weights().size(); ++li) {
        worst = std::max(worst, probe_tensor(model.weights_mut()[li], analytic.weight[li]));
        worst = std::max(worst, probe_tensor(model.biases_mut()[li], analytic.bias[li]));
    }
    return worst;
}

}  // namespace pipesentry
