#include <gtest/gtest.h>

#include <cmath>

#include "pipesentry/stage.hpp"
#include "test_util.hpp"

namespace pipesentry {
namespace {

std::vector<LayerSpec> two_layer(int in, int mid, int out) {
    return {LayerSpec::affine(in, mid), LayerSpec::nonlinearity(Activation::kTanh),
            LayerSpec::affine(mid, out)};
}

TEST(StageInit, DeterministicAcrossRebuilds) {
    RandomStream a(42, "init"), b(42, "init");
    StageModule ma(two_layer(5, 7, 3), 1, a);
    StageModule mb(two_layer(5, 7, 3), 1, b);
    EXPECT_EQ(ma.snapshot_params(), mb.snapshot_params());
    RandomStream c(43, "init");
    StageModule mc(two_layer(5, 7, 3), 1, c);
    EXPECT_NE(ma.snapshot_params(), mc.snapshot_params());
}

TEST(StageInit, ZeroBiasesAndScaledWeights) {
    RandomStream rng(42, "init");
    StageModule m({LayerSpec::affine(64, 64)}, 1, rng);
    for (double v : m.biases()[0].data()) ASSERT_EQ(v, 0.0);
    double var = 0.0;
    for (double v : m.weights()[0].data()) var += v * v;
    const double std = std::sqrt(var / static_cast<double>(m.weights()[0].size()));
    const double want = 1.0 / std::sqrt(64.0);  // N(0,1)/sqrt(in_dim)
    EXPECT_GE(std, 0.9 * want);
    EXPECT_LE(std, 1.1 * want);
}

TEST(StageInit, RejectsBadSpecs) {
    RandomStream rng(1, "init");
    EXPECT_THROW(StageModule({}, 1, rng), ConfigError);
    // Widths must chain: 4->3 then affine expecting 5 is inconsistent.
    EXPECT_THROW(
        StageModule({LayerSpec::affine(4, 3), LayerSpec::affine(5, 2)}, 1, rng),
        ConfigError);
}

TEST(StageForward, ZeroWeightsLeaveBiasRows) {
    RandomStream rng(2, "init");
    StageModule m({LayerSpec::affine(3, 2)}, 1, rng);
    for (double& v : m.weights_mut()[0].data()) v = 0.0;
    m.biases_mut()[0] = Tensor{{0.5, -1.5}};
    const Tensor out = m.forward(gaussian(rng, 4, 3)).output;
    for (int r = 0; r < out.rows(); ++r) {
        ASSERT_EQ(out.at(r, 0), 0.5);
        ASSERT_EQ(out.at(r, 1), -1.5);
    }
}

TEST(StageForward, MatchesManualComposition) {
    RandomStream rng(3, "init");
    StageModule m(two_layer(4, 5, 2), 1, rng);
    const Tensor x = gaussian(rng, 3, 4);
    Tensor want = matmul(x, m.weights()[0]);
    for (int r = 0; r < want.rows(); ++r)
        for (int c = 0; c < want.cols(); ++c) want.at(r, c) += m.biases()[0].at(0, c);
    want = activation_apply(Activation::kTanh, want);
    want = matmul(want, m.weights()[1]);
    for (int r = 0; r < want.rows(); ++r)
        for (int c = 0; c < want.cols(); ++c) want.at(r, c) += m.biases()[1].at(0, c);
    EXPECT_TRUE(bitwise_equal(m.forward(x).output, want));
    EXPECT_THROW(m.forward(Tensor(3, 5)), ShapeError);
}

TEST(StageForward, MergeEqualsSequentialStages) {
    RandomStream rng(4, "init");
    StageModule s1(two_layer(4, 6, 5), 1, rng);
    StageModule s2(two_layer(5, 3, 2), 2, rng);
    const StageModule merged = StageModule::merge({&s1, &s2});
    const Tensor x = gaussian(rng, 3, 4);
    const Tensor split = s2.forward(s1.forward(x).output).output;
    EXPECT_TRUE(bitwise_equal(merged.forward(x).output, split));
    EXPECT_EQ(merged.in_width(), 4);
    EXPECT_EQ(merged.out_width(), 2);
}

TEST(StageBackward, HandComputedSingleWeight) {
    RandomStream rng(5, "init");
    StageModule m({LayerSpec::affine(1, 1)}, 1, rng);
    m.weights_mut()[0] = Tensor{{2.0}};
    const Tensor x{{1.5}};
    ForwardResult fr = m.forward(x);
    EXPECT_DOUBLE_EQ(fr.output.at(0, 0), 3.0);
    StageGrads g = m.zero_grads();
    const Tensor gin = m.backward(fr.cache, Tensor{{3.0}}, g);
    EXPECT_DOUBLE_EQ(gin.at(0, 0), 6.0);         // g * W^T
    EXPECT_DOUBLE_EQ(g.weight[0].at(0, 0), 4.5);  // x^T g
    EXPECT_DOUBLE_EQ(g.bias[0].at(0, 0), 3.0);
}

TEST(StageBackward, ZeroUpstreamGivesZeroGrads) {
    RandomStream rng(6, "init");
    StageModule m(two_layer(4, 5, 3), 1, rng);
    ForwardResult fr = m.forward(gaussian(rng, 2, 4));
    StageGrads g = m.zero_grads();
    const Tensor gin = m.backward(fr.cache, Tensor(2, 3), g);
    for (double v : gin.data()) ASSERT_EQ(v, 0.0);
    for (const Tensor& t : g.weight)
        for (double v : t.data()) ASSERT_EQ(v, 0.0);
    for (const Tensor& t : g.bias)
        for (double v : t.data()) ASSERT_EQ(v, 0.0);
}

TEST(StageBackward, RejectsStaleCacheAndBadShapes) {
    RandomStream rng(7, "init");
    StageModule m(two_layer(4, 5, 3), 1, rng);
    ForwardResult fr = m.forward(gaussian(rng, 2, 4));
    StageGrads g = m.zero_grads();
    EXPECT_THROW(m.backward(ForwardCache{}, Tensor(2, 3), g), StructureError);
    EXPECT_THROW(m.backward(fr.cache, Tensor(2, 4), g), ShapeError);
    EXPECT_THROW(m.backward(fr.cache, Tensor(3, 3), g), ShapeError);
}

TEST(StageBackward, GradientsMatchFiniteDifferences) {
    for (uint64_t seed : {100, 200, 300}) {
        testing::FdCase c = testing::make_fd_case(seed);
        RandomStream init(seed, "init");
        StageModule model(c.specs, 0, init);
        ASSERT_LT(testing::fd_worst_error(model, c.inputs, c.labels), 1e-5)
            << "seed " << seed;
    }
}

TEST(StageBackward, MicroBatchAccumulationIsExact) {
    RandomStream rng(8, "init");
    StageModule m(two_layer(4, 6, 3), 1, rng);
    const Tensor batch = gaussian(rng, 4, 4);
    const Tensor gout = gaussian(rng, 4, 3);

    StageGrads whole = m.zero_grads();
    m.backward(m.forward(batch).cache, gout, whole);

    StageGrads accum = m.zero_grads();
    for (int mu = 0; mu < 4; ++mu) {  // 4 micro-batches of one row each
        Tensor bi(1, 4), gi(1, 3);
        for (int c = 0; c < 4; ++c) bi.at(0, c) = batch.at(mu, c);
        for (int c = 0; c < 3; ++c) gi.at(0, c) = gout.at(mu, c);
        m.backward(m.forward(bi).cache, gi, accum);
    }
    for (size_t i = 0; i < whole.weight.size(); ++i) {
        ASSERT_TRUE(bitwise_equal(whole.weight[i], accum.weight[i])) << "layer " << i;
        ASSERT_TRUE(bitwise_equal(whole.bias[i], accum.bias[i])) << "layer " << i;
    }
}

TEST(StageUpdate, ScalarRule) {
    RandomStream rng(9, "init");
    StageModule m({LayerSpec::affine(1, 1)}, 1, rng);
    m.weights_mut()[0] = Tensor{{1.0}};
    StageGrads g = m.zero_grads();
    g.weight[0] = Tensor{{2.0}};
    m.apply_update(g, 0.1);
    EXPECT_DOUBLE_EQ(m.weights()[0].at(0, 0), 0.8);
}

TEST(StageUpdate, ZeroRateIsIdentity) {
    RandomStream rng(10, "init");
    StageModule m(two_layer(4, 5, 3), 1, rng);
    const auto before = m.snapshot_params();
    StageGrads g = m.zero_grads();
    for (Tensor& t : g.weight)
        for (double& v : t.data()) v = 3.7;
    m.apply_update(g, 0.0);
    EXPECT_EQ(m.snapshot_params(), before);
}

TEST(StageUpdate, TwinsStayIdentical) {
    RandomStream a(11, "init"), b(11, "init");
    StageModule ma(two_layer(4, 5, 3), 1, a);
    StageModule mb(two_layer(4, 5, 3), 1, b);
    RandomStream data(12, "data");
    for (int step = 0; step < 5; ++step) {
        const Tensor x = gaussian(data, 3, 4);
        const Tensor gout = gaussian(data, 3, 3);
        StageGrads ga = ma.zero_grads(), gb = mb.zero_grads();
        ma.backward(ma.forward(x).cache, gout, ga);
        mb.backward(mb.forward(x).cache, gout, gb);
        ma.apply_update(ga, 0.05);
        mb.apply_update(gb, 0.05);
    }
    EXPECT_EQ(ma.snapshot_params(), mb.snapshot_params());
}

TEST(StageBlob, RoundTripAndLayout) {
    RandomStream rng(13, "init");
    StageModule m(two_layer(4, 5, 3), 1, rng);
    const auto blob = m.snapshot_params();
    // Header 4 + layer count 4; affine layers add 1 + 8 + 8 bytes/param;
    // the nonlinearity adds kind + activation.
    const size_t want = 4 + 4 + (1 + 8 + 8 * (4 * 5 + 5)) + (1 + 1) + (1 + 8 + 8 * (5 * 3 + 3));
    EXPECT_EQ(blob.size(), want);
    EXPECT_EQ(blob.size(), 8 + 3 + 16 + 1 + 8 * m.param_count());

    RandomStream other(14, "init");
    StageModule twin(two_layer(4, 5, 3), 1, other);
    ASSERT_NE(twin.snapshot_params(), blob);
    twin.load_params(blob);
    EXPECT_EQ(twin.snapshot_params(), blob);
    const Tensor x = gaussian(rng, 2, 4);
    EXPECT_TRUE(bitwise_equal(twin.forward(x).output, m.forward(x).output));
}

TEST(StageBlob, RejectsForeignAndCorruptBlobs) {
    RandomStream rng(15, "init");
    StageModule m(two_layer(4, 5, 3), 1, rng);
    StageModule other({LayerSpec::affine(4, 5)}, 1, rng);
    EXPECT_THROW(other.load_params(m.snapshot_params()), StructureError);

    auto bad_magic = m.snapshot_params();
    bad_magic[0] = 'X';
    EXPECT_THROW(m.load_params(bad_magic), StructureError);

    auto truncated = m.snapshot_params();
    truncated.pop_back();
    EXPECT_THROW(m.load_params(truncated), StructureError);

    auto trailing = m.snapshot_params();
    trailing.push_back(0);
    EXPECT_THROW(m.load_params(trailing), StructureError);

    // Failed loads must not tear the module: params still intact.
    EXPECT_TRUE(m.params_finite());
    EXPECT_EQ(m.snapshot_params().size(), trailing.size() - 1);
}

TEST(StageBlob, ParamsFiniteDetectsPoison) {
    RandomStream rng(16, "init");
    StageModule m({LayerSpec::affine(2, 2)}, 1, rng);
    EXPECT_TRUE(m.params_finite());
    m.weights_mut()[0].at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(m.params_finite());
}

}  // namespace
}  // namespace pipesentry
