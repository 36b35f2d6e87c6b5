// Per-stage sub-model: an ordered stack of affine and nonlinearity layers
// with reverse-mode backward, SGD update, and a bit-exact parameter blob
// used for duplicate synchronization and checkpoints.
#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "pipesentry/ops.hpp"
#include "pipesentry/random.hpp"
#include "pipesentry/tensor.hpp"

namespace pipesentry {

enum class LayerKind : uint8_t { kAffine = 0, kNonlinearity = 1 };

struct LayerSpec {
    LayerKind kind = LayerKind::kAffine;
    int in_dim = 0;   // affine only
    int out_dim = 0;  // affine only
    Activation activation = Activation::kTanh;  // nonlinearity only

    static LayerSpec affine(int in_dim, int out_dim) {
        LayerSpec s;
        s.kind = LayerKind::kAffine;
        s.in_dim = in_dim;
        s.out_dim = out_dim;
        return s;
    }
    static LayerSpec nonlinearity(Activation a) {
        LayerSpec s;
        s.kind = LayerKind::kNonlinearity;
        s.activation = a;
        return s;
    }
};

// Stored per-layer inputs for one micro-batch, enough to run backward.
struct ForwardCache {
    std::vector<Tensor> layer_inputs;
};

// Parameter gradients aligned with the module's affine layers, in layer
// order. backward() streams rank-1 row updates into these accumulators so
// accumulation order is identical whether rows arrive as one batch or as a
// sequence of micro-batches.
struct StageGrads {
    std::vector<Tensor> weight;
    std::vector<Tensor> bias;
};

struct ForwardResult {
    Tensor output;
    ForwardCache cache;
};

class StageModule {
public:
    // Parameters: affine weights are N(0,1)/sqrt(in_dim) drawn row-major from
    // the stream in layer order; biases start at zero.
    StageModule(std::vector<LayerSpec> specs, int stage_index, RandomStream& init_stream)
        : stage_index_(stage_index), specs_(std::move(specs)) {
        validate_specs();
        for (const LayerSpec& s : specs_) {
            if (s.kind != LayerKind::kAffine) continue;
            Tensor w(s.in_dim, s.out_dim);
            const double sc = 1.0 / std::sqrt(static_cast<double>(s.in_dim));
            for (double& v : w.data()) v = init_stream.normal() * sc;
            weights_.push_back(std::move(w));
            biases_.emplace_back(1, s.out_dim);
        }
    }

    int stage_index() const { return stage_index_; }
    const std::vector<LayerSpec>& specs() const { return specs_; }
    int layer_count() const { return static_cast<int>(specs_.size()); }
    int in_width() const { return in_width_; }
    int out_width() const { return out_width_; }

    const std::vector<Tensor>& weights() const { return weights_; }
    const std::vector<Tensor>& biases() const { return biases_; }
    // In-place parameter access, used by finite-difference probes.
    std::vector<Tensor>& weights_mut() { return weights_; }
    std::vector<Tensor>& biases_mut() { return biases_; }

    ForwardResult forward(const Tensor& input) const {
        if (input.cols() != in_width_) {
            throw ShapeError("stage " + std::to_string(stage_index_) + " expects input width " +
                             std::to_string(in_width_) + ", got " + input.shape());
        }
        ForwardResult res;
        res.cache.layer_inputs.reserve(specs_.size());
        Tensor x = input;
        int affine = 0;
        for (const LayerSpec& s : specs_) {
            res.cache.layer_inputs.push_back(x);
            if (s.kind == LayerKind::kAffine) {
                Tensor y = matmul(x, weights_[affine]);
                for (int r = 0; r < y.rows(); ++r)
                    for (int c = 0; c < y.cols(); ++c) y.at(r, c) += biases_[affine].at(0, c);
                x = std::move(y);
                ++affine;
            } else {
                x = activation_apply(s.activation, x);
            }
        }
        res.output = std::move(x);
        return res;
    }

    // Reverse-mode backward. Returns the gradient w.r.t. the stage input and
    // streams parameter gradients into `accum` (allocate with zero_grads()).
    // Weight gradients accumulate one input row at a time, in row order, so
    // that splitting a batch into micro-batches leaves every floating-point
    // operation unchanged.
    Tensor backward(const ForwardCache& cache, const Tensor& grad_out, StageGrads& accum) const {
        if (cache.layer_inputs.size() != specs_.size()) {
            throw StructureError("stale cache: " + std::to_string(cache.layer_inputs.size()) +
                                 " cached layers for a " + std::to_string(specs_.size()) +
                                 "-layer stage");
        }
        if (grad_out.cols() != out_width_ || grad_out.rows() != cache.layer_inputs.front().rows()) {
            throw ShapeError("stage " + std::to_string(stage_index_) + " backward expects " +
                             Tensor::shape_str(cache.layer_inputs.front().rows(), out_width_) +
                             " grad, got " + grad_out.shape());
        }
        if (accum.weight.size() != weights_.size()) {
            throw StructureError("gradient accumulator does not match module layout");
        }
        Tensor g = grad_out;
        int affine = static_cast<int>(weights_.size());
        for (int li = layer_count() - 1; li >= 0; --li) {
            const LayerSpec& s = specs_[li];
            const Tensor& x = cache.layer_inputs[li];
            if (s.kind == LayerKind::kAffine) {
                --affine;
                Tensor& gw = accum.weight[affine];
                Tensor& gb = accum.bias[affine];
                for (int r = 0; r < x.rows(); ++r) {
                    for (int i = 0; i < x.cols(); ++i) {
                        const double xv = x.at(r, i);
                        for (int j = 0; j < g.cols(); ++j) gw.at(i, j) += xv * g.at(r, j);
                    }
                    for (int j = 0; j < g.cols(); ++j) gb.at(0, j) += g.at(r, j);
                }
                g = matmul(g, transpose(weights_[affine]));
            } else {
                g = activation_grad(s.activation, x, g);
            }
        }
        return g;
    }

    StageGrads zero_grads() const {
        StageGrads grads;
        for (size_t i = 0; i < weights_.size(); ++i) {
            grads.weight.emplace_back(weights_[i].rows(), weights_[i].cols());
            grads.bias.emplace_back(1, biases_[i].cols());
        }
        return grads;
    }

    // p <- p - lr * g for every parameter tensor.
    void apply_update(const StageGrads& grads, double lr) {
        if (grads.weight.size() != weights_.size() || grads.bias.size() != biases_.size()) {
            throw StructureError("gradient layout does not match module");
        }
        for (size_t i = 0; i < weights_.size(); ++i) {
            detail::require_same_shape(grads.weight[i], weights_[i], "apply_update");
            detail::require_same_shape(grads.bias[i], biases_[i], "apply_update");
            for (size_t k = 0; k < weights_[i].size(); ++k)
                weights_[i].data()[k] -= lr * grads.weight[i].data()[k];
            for (size_t k = 0; k < biases_[i].size(); ++k)
                biases_[i].data()[k] -= lr * grads.bias[i].data()[k];
        }
    }

    bool params_finite() const {
        for (const Tensor& w : weights_)
            if (!all_finite(w)) return false;
        for (const Tensor& b : biases_)
            if (!all_finite(b)) return false;
        return true;
    }

    // Parameter blob, versioned and self-describing (layout "PBL1"):
    //   bytes 0..3   magic "PBL1"
    //   u32 LE       layer count
    //   per layer    u8 kind (0 affine, 1 nonlinearity)
    //                affine: u32 LE in_dim, u32 LE out_dim,
    //                        in*out f64 LE weights row-major, out f64 LE biases
    //                nonlinearity: u8 activation (0 tanh, 1 relu)
    std::vector<uint8_t> snapshot_params() const {
        std::vector<uint8_t> blob;
        blob.insert(blob.end(), {'P', 'B', 'L', '1'});
        put_u32(blob, static_cast<uint32_t>(specs_.size()));
        int affine = 0;
        for (const LayerSpec& s : specs_) {
            blob.push_back(static_cast<uint8_t>(s.kind));
            if (s.kind == LayerKind::kAffine) {
                put_u32(blob, static_cast<uint32_t>(s.in_dim));
                put_u32(blob, static_cast<uint32_t>(s.out_dim));
                for (double v : weights_[affine].data()) put_f64(blob, v);
                for (double v : biases_[affine].data()) put_f64(blob, v);
                ++affine;
            } else {
                blob.push_back(static_cast<uint8_t>(s.activation));
            }
        }
        return blob;
    }

    void load_params(const std::vector<uint8_t>& blob) {
        size_t pos = 0;
        auto fail = [](const std::string& why) -> void {
            throw StructureError("parameter blob does not match module: " + why);
        };
        if (blob.size() < 8 || std::memcmp(blob.data(), "PBL1", 4) != 0) fail("bad header");
        pos = 4;
        const uint32_t n = get_u32(blob, pos);
        if (n != specs_.size()) fail("layer count " + std::to_string(n));
        std::vector<Tensor> new_w, new_b;
        for (const LayerSpec& s : specs_) {
            if (pos >= blob.size()) fail("truncated");
            const auto kind = static_cast<LayerKind>(blob[pos++]);
            if (kind != s.kind) fail("layer kind mismatch");
            if (kind == LayerKind::kAffine) {
                const uint32_t in_dim = get_u32(blob, pos);
                const uint32_t out_dim = get_u32(blob, pos);
                if (static_cast<int>(in_dim) != s.in_dim || static_cast<int>(out_dim) != s.out_dim) {
                    fail("affine " + Tensor::shape_str(in_dim, out_dim) + " vs expected " +
                         Tensor::shape_str(s.in_dim, s.out_dim));
                }
                if (blob.size() - pos < (static_cast<size_t>(in_dim) * out_dim + out_dim) * 8) {
                    fail("truncated affine payload");
                }
                Tensor w(s.in_dim, s.out_dim);
                for (double& v : w.data()) v = get_f64(blob, pos);
                Tensor b(1, s.out_dim);
                for (double& v : b.data()) v = get_f64(blob, pos);
                new_w.push_back(std::move(w));
                new_b.push_back(std::move(b));
            } else {
                if (pos >= blob.size()) fail("truncated");
                if (static_cast<Activation>(blob[pos++]) != s.activation) fail("activation mismatch");
            }
        }
        if (pos != blob.size()) fail("trailing bytes");
        weights_ = std::move(new_w);
        biases_ = std::move(new_b);
    }

    size_t param_count() const {
        size_t n = 0;
        for (const Tensor& w : weights_) n += w.size();
        for (const Tensor& b : biases_) n += b.size();
        return n;
    }

    // Concatenated layer stack with parameters copied bitwise; the monolithic
    // counterpart of a staged pipeline.
    static StageModule merge(const std::vector<const StageModule*>& stages) {
        std::vector<LayerSpec> specs;
        for (const StageModule* m : stages)
            specs.insert(specs.end(), m->specs_.begin(), m->specs_.end());
        RandomStream throwaway(0, "merge");
        StageModule out(std::move(specs), 0, throwaway);
        out.weights_.clear();
        out.biases_.clear();
        for (const StageModule* m : stages) {
            out.weights_.insert(out.weights_.end(), m->weights_.begin(), m->weights_.end());
            out.biases_.insert(out.biases_.end(), m->biases_.begin(), m->biases_.end());
        }
        return out;
    }

private:
    void validate_specs() {
        if (specs_.empty()) throw ConfigError("stage must have at least one layer");
        int width = -1;
        for (const LayerSpec& s : specs_) {
            if (s.kind == LayerKind::kAffine) {
                if (s.in_dim < 1 || s.out_dim < 1) {
                    throw ConfigError("affine layer dims must be >= 1, got " +
                                      Tensor::shape_str(s.in_dim, s.out_dim));
                }
                if (width >= 0 && s.in_dim != width) {
                    throw ConfigError("layer widths do not chain: affine expects " +
                                      std::to_string(s.in_dim) + " after width " +
                                      std::to_string(width));
                }
                if (width < 0) in_width_ = s.in_dim;
                width = s.out_dim;
            } else if (width < 0) {
                throw ConfigError("stage must start with an affine layer");
            }
        }
        if (width < 0) throw ConfigError("stage has no affine layer");
        out_width_ = width;
    }

    static void put_u32(std::vector<uint8_t>& blob, uint32_t v) {
        for (int i = 0; i < 4; ++i) blob.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    static void put_f64(std::vector<uint8_t>& blob, double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) blob.push_back(static_cast<uint8_t>(bits >> (8 * i)));
    }
    static uint32_t get_u32(const std::vector<uint8_t>& blob, size_t& pos) {
        if (blob.size() - pos < 4) throw StructureError("parameter blob truncated");
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(blob[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    static double get_f64(const std::vector<uint8_t>& blob, size_t& pos) {
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(blob[pos + i]) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    int stage_index_ = 0;
    std::vector<LayerSpec> specs_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    int in_width_ = 0;
    int out_width_ = 0;
};

}  // namespace pipesentry
