// Dense 2-D tensor of 64-bit floats, row-major.
//
// Every kernel in this library runs a fixed loop order with plain IEEE-754
// double accumulation (no FMA contraction, no parallel reduction), so two
// runs with equal inputs produce bit-identical outputs on any IEEE platform.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pipesentry {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StructureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tensor {
public:
    Tensor() = default;

    Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
        if (rows < 1 || cols < 1) {
            throw ShapeError("tensor shape must be positive, got " + shape_str(rows, cols));
        }
        data_.assign(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0);
    }

    Tensor(std::initializer_list<std::initializer_list<double>> rows)
        : rows_(static_cast<int>(rows.size())) {
        if (rows_ == 0) throw ShapeError("tensor literal must have at least one row");
        cols_ = static_cast<int>(rows.begin()->size());
        data_.reserve(static_cast<size_t>(rows_) * static_cast<size_t>(cols_));
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != cols_) {
                throw ShapeError("ragged tensor literal");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }
    size_t size() const { return data_.size(); }

    double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape() const { return shape_str(rows_, cols_); }

    // Rows [begin, end) as a new tensor.
    Tensor slice_rows(int begin, int end) const {
        if (begin < 0 || end > rows_ || begin >= end) {
            throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + shape());
        }
        Tensor out(end - begin, cols_);
        for (int r = begin; r < end; ++r)
            for (int c = 0; c < cols_; ++c) out.at(r - begin, c) = at(r, c);
        return out;
    }

    static std::string shape_str(int r, int c) {
        return std::to_string(r) + "x" + std::to_string(c);
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Matrix product. Accumulation runs in a fixed (row, col, inner) order so the
// result is bit-reproducible; each output row depends only on the matching
// input row of `a`, which keeps micro-batched forward passes exact.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + a.shape() + " x " + b.shape());
    }
    Tensor out(a.rows(), b.cols());
    for (int r = 0; r < a.rows(); ++r) {
        for (int c = 0; c < b.cols(); ++c) {
            double acc = 0.0;
            for (int k = 0; k < a.cols(); ++k) acc += a.at(r, k) * b.at(k, c);
            out.at(r, c) = acc;
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
    return out;
}

inline Tensor identity(int n) {
    Tensor out(n, n);
    for (int i = 0; i < n; ++i) out.at(i, i) = 1.0;
    return out;
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shapes differ, " + a.shape() + " vs " + b.shape());
    }
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

inline Tensor negate(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data()) v = -v;
    return out;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

// Largest elementwise |a - b|; infinity on shape mismatch or non-finite diff.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = std::fabs(a.data()[i] - b.data()[i]);
        if (std::isnan(d)) return std::numeric_limits<double>::infinity();
        if (d > m) m = d;
    }
    return m;
}

inline bool all_finite(const Tensor& a) {
    for (double v : a.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// FNV-1a over the little-endian byte image; used for trace checksums.
inline uint64_t checksum(const Tensor& a) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t bits, int nbytes) {
        for (int i = 0; i < nbytes; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<uint64_t>(static_cast<uint32_t>(a.rows())), 4);
    mix(static_cast<uint64_t>(static_cast<uint32_t>(a.cols())), 4);
    for (double v : a.data()) {
        uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(bits));
        mix(bits, 8);
    }
    return h;
}

}  // namespace pipesentry
