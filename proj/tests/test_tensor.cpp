#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kt/optim.hpp"
#include "kt/tensor.hpp"
#include "oracles.hpp"

using namespace kt;
using oracle::check_gradients;
using oracle::random_projection;
using oracle::random_tensor;

namespace {

constexpr double kGradTol = 1e-6;

std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Gemm, IdentityLeavesMatrixUnchanged) {
    Tensor eye = Tensor::from(2, 2, {1, 0, 0, 1});
    Tensor x = Tensor::from(2, 3, {1, -2, 3, 4.5, 5, -6});
    EXPECT_EQ(values_of(gemm(eye, x)), values_of(x));
}

TEST(Gemm, SmallProduct) {
    Tensor a = Tensor::from(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::from(2, 1, {1, 1});
    const Tensor c = gemm(a, b);
    ASSERT_EQ(c.rows(), 2u);
    ASSERT_EQ(c.cols(), 1u);
    EXPECT_EQ(values_of(c), (std::vector<double>{3, 7}));
}

TEST(Gemm, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros(2, 3);
    Tensor b = Tensor::zeros(2, 3);
    try {
        gemm(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2x3"), std::string::npos);
        EXPECT_NE(msg.find("by 2x3"), std::string::npos);
    }
}

TEST(Gemm, GradientMatchesFiniteDifferences) {
    Rng rng(11);
    Tensor a = random_tensor(rng, 3, 4);
    Tensor b = random_tensor(rng, 4, 2);
    const auto r = check_gradients({a, b}, [&] { return random_projection(gemm(a, b), 1); });
    EXPECT_EQ(r.checked, 20u);
    EXPECT_LT(r.worst, kGradTol);
}

TEST(Gemm, TransposedProductGradient) {
    Rng rng(12);
    Tensor a = random_tensor(rng, 3, 4);
    Tensor b = random_tensor(rng, 5, 4);
    const Tensor c = matmul_nt(a, b);
    EXPECT_NEAR(c(1, 2), [&] {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += a(1, k) * b(2, k);
        return s;
    }(), 1e-14);
    EXPECT_LT(check_gradients({a, b}, [&] { return random_projection(matmul_nt(a, b), 2); }).worst, kGradTol);
}

TEST(Activation, SigmoidValues) {
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    EXPECT_NEAR(sigmoid(Tensor::scalar(2.0)).item(), 0.881, 5e-4);
}

TEST(Activation, SigmoidSaturatesWithoutOverflow) {
    const Tensor y = sigmoid(Tensor::from(1, 4, {-1e308, -800, 800, 1e308}));
    for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(y(0, 0), 0.0);
    EXPECT_EQ(y(0, 3), 1.0);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
    Rng rng(13);
    Tensor x = random_tensor(rng, 3, 3, 1.5);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(tanh(x), 3); }).worst, kGradTol);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(sigmoid(x), 4); }).worst, kGradTol);
}

TEST(Softmax, EqualLogitsAreUniform) {
    const Tensor y = softmax_rows(Tensor::from(1, 2, {0, 0}));
    EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, SingleColumnIsOne) {
    for (double c : {-1e6, -3.0, 0.0, 42.0, 1e6}) EXPECT_EQ(softmax_rows(Tensor::from(1, 1, {c})).item(), 1.0);
}

TEST(Softmax, MatchesDirectFormula) {
    const Tensor y = softmax_rows(Tensor::from(1, 3, {1, 2, 3}));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(y(0, j), std::exp(j + 1.0) / z, 1e-12);
}

TEST(Softmax, RowsNormalizedAndShiftInvariant) {
    Rng rng(14);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor(rng, 4, 6, 3.0, false);
        const double shift = rng.normal(0.0, 50.0);
        std::vector<double> shifted(x.values().begin(), x.values().end());
        for (std::size_t i = 6; i < 12; ++i) shifted[i] += shift;  // shift row 1 only
        const Tensor a = softmax_rows(x);
        const Tensor b = softmax_rows(Tensor::from(4, 6, shifted));
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                EXPECT_GE(a(i, j), 0.0);
                EXPECT_NEAR(a(i, j), b(i, j), 1e-12);
                s += a(i, j);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
    Rng rng(15);
    Tensor x = random_tensor(rng, 3, 5);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(softmax_rows(x), 5); }).worst, kGradTol);
}

TEST(GatherRows, SingleRowTable) {
    Tensor table = Tensor::from(1, 3, {4, 5, 6}, true);
    const std::vector<int> ids{1};
    EXPECT_EQ(values_of(gather_rows(table, ids)), (std::vector<double>{4, 5, 6}));
}

TEST(GatherRows, RepeatedIdsAccumulate) {
    Tensor table = Tensor::from(3, 2, {0, 0, 0, 0, 0, 0}, true);
    const std::vector<int> ids{2, 2};
    Tensor g = Tensor::from(2, 2, {1, 2, 3, 4});
    backward(sum(mul(gather_rows(table, ids), g)));
    EXPECT_EQ(table.grad()[2], 4.0);
    EXPECT_EQ(table.grad()[3], 6.0);
    EXPECT_EQ(table.grad()[0], 0.0);
}

TEST(GatherRows, ScatterAddMatchesLoopOracle) {
    Rng rng(16);
    Tensor table = random_tensor(rng, 6, 3);
    std::vector<int> ids;
    for (int i = 0; i < 15; ++i) ids.push_back(static_cast<int>(rng.below(6)) + 1);
    Tensor cot = random_tensor(rng, ids.size(), 3, 1.0, false);
    backward(sum(mul(gather_rows(table, ids), cot)));
    std::vector<double> expected(18, 0.0);
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t j = 0; j < 3; ++j) expected[(ids[r] - 1) * 3 + j] += cot(r, j);
    for (std::size_t i = 0; i < 18; ++i) EXPECT_NEAR(table.grad()[i], expected[i], 1e-14);
}

TEST(GatherRows, OutOfRangeIdCarriesId) {
    Tensor table = Tensor::zeros(3, 2);
    for (int bad : {0, 4, -1}) {
        const std::vector<int> ids{1, bad};
        try {
            gather_rows(table, ids);
            FAIL() << "expected IndexError";
        } catch (const IndexError& e) {
            EXPECT_EQ(e.id(), bad);
        }
    }
}

TEST(ConcatCols, JoinsFeatures) {
    EXPECT_EQ(values_of(concat_cols(Tensor::from(1, 2, {1, 2}), Tensor::from(1, 1, {3}))),
              (std::vector<double>{1, 2, 3}));
}

TEST(ConcatCols, EmptyRightOperandIsIdentity) {
    Tensor x = Tensor::from(2, 2, {1, 2, 3, 4});
    const Tensor y = concat_cols(x, Tensor::zeros(2, 0));
    EXPECT_EQ(y.cols(), 2u);
    EXPECT_EQ(values_of(y), values_of(x));
}

TEST(ConcatCols, RowMismatch) { EXPECT_THROW(concat_cols(Tensor::zeros(2, 1), Tensor::zeros(3, 1)), DimensionError); }

TEST(ConcatCols, GradientSplitMatchesFiniteDifferences) {
    Rng rng(17);
    Tensor a = random_tensor(rng, 3, 2);
    Tensor b = random_tensor(rng, 3, 4);
    EXPECT_LT(check_gradients({a, b}, [&] { return random_projection(tanh(concat_cols(a, b)), 6); }).worst, kGradTol);
}

TEST(LayoutOps, GradientsMatchFiniteDifferences) {
    Rng rng(18);
    Tensor x = random_tensor(rng, 3, 6);
    Tensor row = random_tensor(rng, 1, 6);
    Tensor c0 = random_tensor(rng, 3, 1), c1 = random_tensor(rng, 3, 1);
    const std::vector<std::size_t> picks{5, 0, 2};
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(slice_cols(x, 2, 3), 7); }).worst, kGradTol);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(pick_cols(x, picks), 8); }).worst, kGradTol);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(reshape(x, 2, 9), 9); }).worst, kGradTol);
    EXPECT_LT(check_gradients({row}, [&] { return random_projection(tile_rows(row, 4), 10); }).worst, kGradTol);
    EXPECT_LT(check_gradients({c0, c1}, [&] { return random_projection(stack_cols({c0, c1, c0}), 11); }).worst, kGradTol);
    EXPECT_LT(check_gradients({x, row}, [&] { return random_projection(add_row(x, row), 12); }).worst, kGradTol);
    EXPECT_LT(check_gradients({x}, [&] { return random_projection(mul(x, sub(x, scale(x, 0.3))), 13); }).worst,
              kGradTol);
}

TEST(MemoryOps, ReadAndWriteGradients) {
    Rng rng(19);
    const std::size_t batch = 2, slots = 3, d = 4;
    Tensor memory = random_tensor(rng, batch, slots * d);
    Tensor logits = random_tensor(rng, batch, slots);
    Tensor erase_pre = random_tensor(rng, batch, d);
    Tensor add_vec = random_tensor(rng, batch, d);
    auto build = [&] {
        Tensor w = softmax_rows(logits);
        Tensor m2 = memory_write(memory, w, sigmoid(erase_pre), add_vec);
        return random_projection(memory_read(m2, w, d), 14);
    };
    EXPECT_LT(check_gradients({memory, logits, erase_pre, add_vec}, build).worst, 1e-6);
}

TEST(MemoryOps, InactiveRowsPassThrough) {
    Rng rng(20);
    Tensor memory = random_tensor(rng, 2, 6);
    Tensor w = Tensor::from(2, 3, {0.2, 0.3, 0.5, 0.2, 0.3, 0.5});
    Tensor e = Tensor::from(2, 2, {0.5, 0.5, 0.5, 0.5});
    Tensor a = Tensor::from(2, 2, {1, 1, 1, 1});
    const std::vector<unsigned char> active{0, 1};
    const Tensor out = memory_write(memory, w, e, a, active);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(out(0, j), memory(0, j));
    EXPECT_NE(out(1, 0), memory(1, 0));
}

TEST(CrossEntropy, GradientAndClamp) {
    Rng rng(21);
    Tensor logits = random_tensor(rng, 2, 3);
    const std::vector<double> y{1, 0, 1, 0, 0, 1}, w{1, 1, 0, 1, 1, 1};
    EXPECT_LT(check_gradients({logits}, [&] { return binary_cross_entropy_sum(sigmoid(logits), y, w); }).worst, 1e-6);
    const Tensor exact = binary_cross_entropy_sum(Tensor::from(1, 2, {1.0, 0.0}), std::vector<double>{1, 0},
                                                  std::vector<double>{1, 1});
    EXPECT_GE(exact.item(), 0.0);
    EXPECT_LE(exact.item(), -2.0 * std::log(1.0 - 1e-7) + 1e-15);
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6}, true);
    Tensor loss = sum(x);
    backward(loss);
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
    EXPECT_EQ(loss.grad()[0], 1.0);
}

TEST(Backward, FanOutAddsPathGradients) {
    Rng rng(22);
    Tensor x = random_tensor(rng, 2, 2);
    auto branch_a = [](const Tensor& y) { return sum(tanh(y)); };
    auto branch_b = [](const Tensor& y) { return sum(mul(y, y)); };

    Tensor y = scale(x, 1.7);
    backward(add(branch_a(y), branch_b(y)));
    const std::vector<double> both(x.grad().begin(), x.grad().end());

    x.zero_grad();
    backward(branch_a(scale(x, 1.7)));
    std::vector<double> single(x.grad().begin(), x.grad().end());
    x.zero_grad();
    backward(branch_b(scale(x, 1.7)));
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(both[i], single[i] + x.grad()[i], 1e-14);
}

TEST(Backward, NonScalarLossRejected) {
    Tensor x = Tensor::zeros(2, 1, true);
    EXPECT_THROW(backward(tanh(x)), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
    Tensor x = Tensor::zeros(1, 1, true);
    NoGradGuard guard;
    EXPECT_FALSE(tanh(x).requires_grad());
}

TEST(ClipGlobalNorm, BelowThresholdUnchanged) {
    std::vector<double> g{3, 4};
    std::vector<std::span<double>> grads{g};
    EXPECT_EQ(clip_global_norm(grads, 10.0), 1.0);
    EXPECT_EQ(g, (std::vector<double>{3, 4}));
}

TEST(ClipGlobalNorm, AboveThresholdRescaled) {
    std::vector<double> g{0, 20};
    std::vector<std::span<double>> grads{g};
    EXPECT_EQ(clip_global_norm(grads, 10.0), 0.5);
    EXPECT_EQ(g, (std::vector<double>{0, 10}));
}

TEST(ClipGlobalNorm, PostNormIsMinOfNormAndThresholdAndIdempotent) {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> g1(7), g2(3);
        const double spread = std::exp(rng.normal(0.0, 2.0));
        for (double& v : g1) v = rng.normal(0.0, spread);
        for (double& v : g2) v = rng.normal(0.0, spread);
        std::vector<std::span<double>> grads{g1, g2};
        const double before = global_norm(grads);
        const double threshold = 1.0 + 5.0 * rng.uniform();
        clip_global_norm(grads, threshold);
        const double after = global_norm(grads);
        EXPECT_NEAR(after, std::min(before, threshold), 1e-9);
        EXPECT_LE(after, threshold + 1e-12);
        const auto once1 = g1, once2 = g2;
        clip_global_norm(grads, threshold);
        for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], once1[i], 1e-15 * std::fabs(once1[i]) + 1e-300);
        for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_NEAR(g2[i], once2[i], 1e-15 * std::fabs(once2[i]) + 1e-300);
    }
}

TEST(Adam, ZeroGradientsAreNoOp) {
    ParamSet ps;
    ps.add("w", Tensor::parameter(2, 2, {1, -2, 3, 0.5}));
    AdamState state(ps);
    ps.zero_grad();
    ps.grads();
    adam_step(ps, state, 0.003);
    EXPECT_EQ(values_of(ps.get("w")), (std::vector<double>{1, -2, 3, 0.5}));
    for (double m : state.m[0]) EXPECT_EQ(m, 0.0);
    for (double v : state.v[0]) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamSet ps;
    Tensor w = Tensor::parameter(1, 1, {0.25});
    ps.add("w", w);
    AdamState state(ps);
    w.mutable_grad()[0] = 1.0;
    adam_step(ps, state, 0.003);
    // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    EXPECT_NEAR(w.item(), 0.25 - 0.003 / (1.0 + 1e-8), 1e-15);
    EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(Adam, TwoStepsMatchScalarTrace) {
    ParamSet ps;
    Tensor w = Tensor::parameter(1, 1, {1.0});
    ps.add("w", w);
    AdamState state(ps);
    const double lr = 0.01, g1 = 0.5, g2 = -2.0;
    w.mutable_grad()[0] = g1;
    adam_step(ps, state, lr);
    w.mutable_grad()[0] = g2;
    adam_step(ps, state, lr);
    // Hand trace with beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    double p = 1.0, m = 0.0, v = 0.0;
    m = 0.1 * g1;
    v = 0.001 * g1 * g1;
    p -= lr * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    m = 0.9 * m + 0.1 * g2;
    v = 0.999 * v + 0.001 * g2 * g2;
    p -= lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
    EXPECT_NEAR(w.item(), p, 1e-15);
    EXPECT_EQ(state.step_count, 2u);
}

TEST(GradientProperty, EveryOpAtTenRandomPoints) {
    // h = 1e-5, relative error < 1e-4 at 10 random points per op.
    for (std::uint64_t point = 0; point < 10; ++point) {
        Rng rng(100 + point);
        Tensor a = random_tensor(rng, 2, 3), b = random_tensor(rng, 3, 2), r = random_tensor(rng, 1, 3);
        const std::vector<int> ids{2, 1, 2};
        const std::vector<std::function<Tensor()>> graphs{
            [&] { return random_projection(gemm(a, b), point); },
            [&] { return random_projection(sigmoid(a), point); },
            [&] { return random_projection(tanh(a), point); },
            [&] { return random_projection(softmax_rows(a), point); },
            [&] { return random_projection(gather_rows(a, ids), point); },
            [&] { return random_projection(concat_cols(a, r.defined() ? tile_rows(r, 2) : a), point); },
        };
        for (const auto& g : graphs) EXPECT_LT(check_gradients({a, b, r}, g).worst, 1e-4);
    }
}
