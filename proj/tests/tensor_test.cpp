#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "pipesentry/ops.hpp"
#include "pipesentry/random.hpp"
#include "pipesentry/tensor.hpp"
#include "test_util.hpp"

namespace pipesentry {
namespace {

TEST(Tensor, ShapeAndIndexing) {
    Tensor t(2, 3);
    EXPECT_EQ(t.rows(), 2);
    EXPECT_EQ(t.cols(), 3);
    EXPECT_EQ(t.size(), 6u);
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
    t.at(1, 2) = 7.0;
    EXPECT_EQ(t.data()[5], 7.0);
    EXPECT_THROW(Tensor(0, 3), ShapeError);
    EXPECT_THROW(Tensor(2, -1), ShapeError);
}

TEST(Tensor, InitializerListLayout) {
    Tensor t{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
    EXPECT_EQ(t.rows(), 3);
    EXPECT_EQ(t.cols(), 2);
    EXPECT_EQ(t.at(2, 0), 5.0);
    EXPECT_EQ(t.shape(), "3x2");
}

TEST(Tensor, MatmulMatchesNaiveOracleExactly) {
    RandomStream rng(7, "t");
    const int shapes[][3] = {{1, 1, 1}, {2, 3, 4}, {5, 5, 5}, {7, 2, 9}, {4, 16, 3}};
    for (auto& s : shapes) {
        const Tensor a = gaussian(rng, s[0], s[1]);
        const Tensor b = gaussian(rng, s[1], s[2]);
        const Tensor got = matmul(a, b);
        const Tensor want = testing::naive_matmul(a, b);
        ASSERT_TRUE(bitwise_equal(got, want)) << "shape " << a.shape() << " x " << b.shape();
    }
}

TEST(Tensor, MatmulRejectsMismatchedInner) {
    Tensor a(2, 3), b(4, 2);
    EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Tensor, TransposeAndIdentity) {
    Tensor a{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
    const Tensor at = transpose(a);
    EXPECT_EQ(at.rows(), 3);
    EXPECT_EQ(at.at(2, 1), 6.0);
    EXPECT_TRUE(bitwise_equal(matmul(a, identity(3)), a));
    EXPECT_TRUE(bitwise_equal(matmul(identity(2), a), a));
}

TEST(Tensor, ElementwiseOps) {
    Tensor a{{1.0, -2.0}}, b{{0.5, 4.0}};
    EXPECT_TRUE(bitwise_equal(add(a, b), Tensor{{1.5, 2.0}}));
    EXPECT_TRUE(bitwise_equal(sub(a, b), Tensor{{0.5, -6.0}}));
    EXPECT_TRUE(bitwise_equal(hadamard(a, b), Tensor{{0.5, -8.0}}));
    EXPECT_TRUE(bitwise_equal(scale(a, -2.0), Tensor{{-2.0, 4.0}}));
    EXPECT_TRUE(bitwise_equal(negate(a), Tensor{{-1.0, 2.0}}));
    Tensor c(2, 1);
    EXPECT_THROW(add(a, c), ShapeError);
}

TEST(Tensor, BitwiseEqualIsExact) {
    Tensor a{{1.0, 2.0}};
    Tensor b = a;
    EXPECT_TRUE(bitwise_equal(a, b));
    b.at(0, 1) = std::nextafter(2.0, 3.0);
    EXPECT_FALSE(bitwise_equal(a, b));
    EXPECT_FALSE(bitwise_equal(a, Tensor(2, 1)));
}

TEST(Tensor, MaxAbsDiffHandlesShapeAndNan) {
    Tensor a{{1.0, 2.0}}, b{{1.0, 2.5}};
    EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 0.5);
    EXPECT_TRUE(std::isinf(max_abs_diff(a, Tensor(2, 1))));
    b.at(0, 0) = std::nan("");
    EXPECT_TRUE(std::isinf(max_abs_diff(a, b)));
    EXPECT_FALSE(all_finite(b));
    EXPECT_TRUE(all_finite(a));
}

TEST(Tensor, ChecksumSeparatesShapeAndContent) {
    Tensor a{{1.0, 2.0}}, b{{1.0, 2.0}};
    EXPECT_EQ(checksum(a), checksum(b));
    b.at(0, 1) = 2.5;
    EXPECT_NE(checksum(a), checksum(b));
    // Same bytes, different shape must not collide.
    Tensor row{{1.0, 2.0}};
    Tensor col{{1.0}, {2.0}};
    EXPECT_NE(checksum(row), checksum(col));
}

TEST(Random, SameSeedAndStreamReplays) {
    RandomStream a(42, "data"), b(42, "data");
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
    RandomStream c(42, "data"), d(42, "init"), e(43, "data");
    const uint64_t base = c.next_u64();
    EXPECT_NE(base, d.next_u64());
    EXPECT_NE(base, e.next_u64());
}

TEST(Random, UniformIntCoversRangeUniformly) {
    RandomStream rng(1, "t");
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(2, 5);
        ASSERT_GE(v, 2);
        ASSERT_LE(v, 5);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 4u);
}

TEST(Random, GaussianMomentsAndDeterminism) {
    RandomStream rng(42, "init");
    const Tensor draws = gaussian(rng, 1000, 100);
    double mean = 0.0;
    for (double v : draws.data()) mean += v;
    mean /= static_cast<double>(draws.size());
    double var = 0.0;
    for (double v : draws.data()) var += (v - mean) * (v - mean);
    var /= static_cast<double>(draws.size() - 1);
    EXPECT_GE(mean, -0.02);
    EXPECT_LE(mean, 0.02);
    EXPECT_GE(std::sqrt(var), 0.98);
    EXPECT_LE(std::sqrt(var), 1.02);

    RandomStream again(42, "init");
    EXPECT_TRUE(bitwise_equal(gaussian(again, 1000, 100), draws));
}

TEST(Ops, TanhAndReluValues) {
    const Tensor x{{-1.0, 0.0, 2.0}};
    const Tensor t = activation_apply(Activation::kTanh, x);
    EXPECT_DOUBLE_EQ(t.at(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(t.at(0, 0), std::tanh(-1.0));
    const Tensor r = activation_apply(Activation::kRelu, Tensor{{-1.0, 2.0}});
    EXPECT_TRUE(bitwise_equal(r, Tensor{{0.0, 2.0}}));
}

TEST(Ops, ActivationGradMatchesFiniteDifferences) {
    RandomStream rng(3, "t");
    const Tensor x = gaussian(rng, 4, 5);
    const Tensor up = gaussian(rng, 4, 5);
    const double h = 1e-6;
    for (Activation act : {Activation::kTanh, Activation::kRelu}) {
        const Tensor g = activation_grad(act, x, up);
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) {
                if (act == Activation::kRelu && std::abs(x.at(r, c)) < 1e-3) continue;
                Tensor xp = x, xm = x;
                xp.at(r, c) += h;
                xm.at(r, c) -= h;
                const double fd = (activation_apply(act, xp).at(r, c) -
                                   activation_apply(act, xm).at(r, c)) /
                                  (2.0 * h);
                ASSERT_NEAR(g.at(r, c), fd * up.at(r, c), 1e-6)
                    << to_string(act) << " at " << r << "," << c;
            }
    }
}

TEST(Ops, UniformLogitsLoseLnClasses) {
    const Tensor logits(5, 3);  // all zeros: uniform distribution over 3 classes
    const LossResult lr = softmax_cross_entropy(logits, {0, 1, 2, 0, 1});
    EXPECT_NEAR(lr.loss, std::log(3.0), 1e-12);
}

TEST(Ops, LossIsShiftInvariant) {
    RandomStream rng(9, "t");
    Tensor logits = gaussian(rng, 4, 6);
    const std::vector<int> labels{0, 5, 2, 3};
    const double base = softmax_cross_entropy(logits, labels).loss;
    for (int c = 0; c < logits.cols(); ++c) logits.at(2, c) += 50.0;
    EXPECT_NEAR(softmax_cross_entropy(logits, labels).loss, base, 1e-8);
}

TEST(Ops, LossGradMatchesFiniteDifferences) {
    RandomStream rng(11, "t");
    const Tensor logits = gaussian(rng, 3, 4);
    const std::vector<int> labels{1, 3, 0};
    const Tensor g = softmax_cross_entropy(logits, labels).grad;
    const double h = 1e-6;
    for (int r = 0; r < logits.rows(); ++r)
        for (int c = 0; c < logits.cols(); ++c) {
            Tensor lp = logits, lm = logits;
            lp.at(r, c) += h;
            lm.at(r, c) -= h;
            const double fd = (softmax_cross_entropy(lp, labels).loss -
                               softmax_cross_entropy(lm, labels).loss) /
                              (2.0 * h);
            ASSERT_NEAR(g.at(r, c), fd, 1e-6);
        }
}

TEST(Ops, RowFormMatchesMeanForm) {
    RandomStream rng(13, "t");
    const Tensor logits = gaussian(rng, 6, 5);
    const std::vector<int> labels{0, 1, 2, 3, 4, 0};
    const RowLoss rows = softmax_cross_entropy_rows(logits, labels);
    const LossResult mean = softmax_cross_entropy(logits, labels);
    double acc = 0.0;
    for (double v : rows.row_losses) acc += v;
    EXPECT_EQ(acc / logits.rows(), mean.loss);  // same summation order: exact
    EXPECT_TRUE(bitwise_equal(scale(rows.row_grads, 1.0 / logits.rows()), mean.grad));
}

TEST(Ops, LossRejectsBadLabels) {
    const Tensor logits(2, 3);
    EXPECT_THROW(softmax_cross_entropy(logits, {0}), ShapeError);
    EXPECT_THROW(softmax_cross_entropy(logits, {0, 3}), IndexError);
    EXPECT_THROW(softmax_cross_entropy(logits, {0, -1}), IndexError);
}

}  // namespace
}  // namespace pipesentry
