#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tfab/wavelet.hpp"

using namespace tfab;
using wavelet::Subbands;
using wavelet::WaveletFilters;

namespace {

using Matrix = std::vector<std::vector<double>>;

/// Dense (n/2)xn analysis matrix with the given pair row on disjoint pairs.
Matrix analysis_matrix(std::size_t n, std::array<double, 2> pair) {
    Matrix m(n / 2, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n / 2; ++i) {
        m[i][2 * i] = pair[0];
        m[i][2 * i + 1] = pair[1];
    }
    return m;
}

/// A * X * B^T for X given as a 2D tensor.
Matrix sandwich(const Matrix& a, const Tensor<double>& x, const Matrix& b) {
    const std::size_t r = x.dim(0), c = x.dim(1);
    Matrix ax(a.size(), std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < r; ++k)
            for (std::size_t j = 0; j < c; ++j) ax[i][j] += a[i][k] * x.at(k, j);
    Matrix out(a.size(), std::vector<double>(b.size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            for (std::size_t k = 0; k < c; ++k) out[i][j] += ax[i][k] * b[j][k];
    return out;
}

double max_diff(const Matrix& m, const Tensor<double>& t) {
    double worst = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) worst = std::max(worst, std::abs(m[i][j] - t.at(i, j)));
    return worst;
}

Tensor<double> mat2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>({r, c}, std::move(v)); }

}  // namespace

TEST(WaveletFilters, HaarIsOrthonormal) {
    const auto f = WaveletFilters::haar();
    const double r = 1 / std::sqrt(2.0);
    EXPECT_NEAR(f.low()[0], r, 1e-15);
    EXPECT_NEAR(f.high()[1], -r, 1e-15);
    EXPECT_NEAR(f.low()[0] * f.high()[0] + f.low()[1] * f.high()[1], 0.0, 1e-12);
}

TEST(WaveletFilters, RejectsNonOrthonormal) {
    EXPECT_THROW(WaveletFilters({1.0, 1.0}, {1.0, -1.0}), ConfigError);
    EXPECT_THROW(WaveletFilters({1.0, 0.0}, {1.0, 0.0}), ConfigError);
}

TEST(Dwt2, TwoByTwoExample) {
    const auto b = wavelet::dwt2(mat2(2, 2, {1, 2, 3, 4}));
    EXPECT_NEAR(b.ll[0], 5.0, 1e-14);
    EXPECT_NEAR(b.lh[0], 2.0, 1e-14);
    EXPECT_NEAR(b.hl[0], 1.0, 1e-14);
    EXPECT_NEAR(b.hh[0], 0.0, 1e-14);
}

TEST(Dwt2, ConstantSampleHasOnlyLowBand) {
    for (auto [r, c] : {std::pair<std::size_t, std::size_t>{2, 2}, {4, 6}, {8, 16}}) {
        const auto b = wavelet::dwt2(Tensor<double>({r, c}, 1.5));
        EXPECT_EQ(b.ll.shape(), (Shape{r / 2, c / 2}));
        for (double v : b.ll.data()) EXPECT_NEAR(v, 3.0, 1e-14);
        for (std::size_t k = 1; k < 4; ++k)
            for (double v : b.band(k).data()) EXPECT_NEAR(v, 0.0, 1e-14);
    }
}

TEST(Dwt2, MatchesExplicitMatrixProducts) {
    const auto f = WaveletFilters::haar();
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = test::random_tensor({8, 16}, rng);
        const auto Lr = analysis_matrix(8, f.low_analysis()), Hr = analysis_matrix(8, f.high_analysis());
        const auto Lc = analysis_matrix(16, f.low_analysis()), Hc = analysis_matrix(16, f.high_analysis());
        const auto b = wavelet::dwt2(x);
        EXPECT_LT(max_diff(sandwich(Lr, x, Lc), b.ll), 1e-13);
        EXPECT_LT(max_diff(sandwich(Hr, x, Lc), b.lh), 1e-13);
        EXPECT_LT(max_diff(sandwich(Lr, x, Hc), b.hl), 1e-13);
        EXPECT_LT(max_diff(sandwich(Hr, x, Hc), b.hh), 1e-13);
    }
}

TEST(Dwt2, BatchedLayoutTransformsEachPlane) {
    std::mt19937_64 rng(22);
    const auto x = test::random_tensor({3, 1, 4, 6}, rng);
    const auto b = wavelet::dwt2(x);
    ASSERT_EQ(b.ll.shape(), (Shape{3, 1, 2, 3}));
    for (std::size_t n = 0; n < 3; ++n) {
        Tensor<double> plane({4, 6});
        std::copy_n(x.raw() + n * 24, 24, plane.raw());
        const auto pb = wavelet::dwt2(plane);
        for (std::size_t k = 0; k < 4; ++k)
            for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b.band(k)[n * 6 + i], pb.band(k)[i]);
    }
}

TEST(Dwt2, OddAxesRejectedWithoutPadding) {
    EXPECT_THROW(wavelet::dwt2(Tensor<double>({3, 4}), WaveletFilters::haar(), false), DimensionError);
    EXPECT_THROW(wavelet::dwt2(Tensor<double>({4}), WaveletFilters::haar()), DimensionError);
}

TEST(Dwt2, OddAxesPadByRepeatingEdge) {
    std::mt19937_64 rng(23);
    const auto x = test::random_tensor({5, 7}, rng);
    Tensor<double> padded({6, 8});
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 8; ++j) padded.at(i, j) = x.at(std::min<std::size_t>(i, 4), std::min<std::size_t>(j, 6));
    const auto b = wavelet::dwt2(x), bp = wavelet::dwt2(padded);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(b.band(k), bp.band(k));
    EXPECT_LT(max_abs_diff(wavelet::idwt2(b), x), 1e-12);
    EXPECT_LT(max_abs_diff(wavelet::idwt2_padded(b), padded), 1e-12);
    EXPECT_EQ(wavelet::idwt2(b).shape(), x.shape());
}

TEST(Idwt2, InvertsTwoByTwoExample) {
    Subbands<double> s{mat2(1, 1, {5}), mat2(1, 1, {2}), mat2(1, 1, {1}), mat2(1, 1, {0}), 2, 2};
    const auto x = wavelet::idwt2(s);
    const std::vector<double> want{1, 2, 3, 4};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x[i], want[i], 1e-14);
}

TEST(Idwt2, ZeroBandsGiveZeroSample) {
    Subbands<double> s{Tensor<double>({2, 3}), Tensor<double>({2, 3}), Tensor<double>({2, 3}), Tensor<double>({2, 3}), 4, 6};
    const auto x = wavelet::idwt2(s);
    for (double v : x.data()) EXPECT_EQ(v, 0.0);
}

TEST(Idwt2, MismatchedBandsAreDimensionError) {
    Subbands<double> s{Tensor<double>({2, 3}), Tensor<double>({2, 3}), Tensor<double>({2, 2}), Tensor<double>({2, 3}), 4, 6};
    EXPECT_THROW(wavelet::idwt2(s), DimensionError);
}

TEST(Wavelet, PerfectReconstructionBothPrecisions) {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = test::random_tensor({8, 16}, rng, -3, 3);
        EXPECT_LE(max_abs_diff(wavelet::idwt2(wavelet::dwt2(x)), x), 1e-12);
        const auto xf = x.cast<float>();
        EXPECT_LE(max_abs_diff(wavelet::idwt2(wavelet::dwt2(xf)), xf), 1e-6);
    }
}

TEST(Wavelet, ParsevalEnergy) {
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = test::random_tensor({8, 16}, rng);
        const double ex = squared_norm(x);
        EXPECT_LE(std::abs(wavelet::squared_norm(wavelet::dwt2(x)) - ex) / ex, 1e-9);
    }
}

TEST(Wavelet, AdjointIdentity) {
    std::mt19937_64 rng(26);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = test::random_tensor({4, 4}, rng);
        Subbands<double> y{test::random_tensor({2, 2}, rng), test::random_tensor({2, 2}, rng),
                           test::random_tensor({2, 2}, rng), test::random_tensor({2, 2}, rng), 4, 4};
        EXPECT_LE(wavelet::adjoint_check(x, y), 1e-10);
        // Independent evaluation of both inner products.
        const auto dx = wavelet::dwt2(x);
        const double lhs = wavelet::inner(dx, y), rhs = dot(x, wavelet::idwt2(y));
        EXPECT_NEAR(lhs, rhs, 1e-12);
    }
    const auto x = test::random_tensor({4, 4}, rng);
    Subbands<double> zero{Tensor<double>({2, 2}), Tensor<double>({2, 2}), Tensor<double>({2, 2}), Tensor<double>({2, 2}), 4, 4};
    EXPECT_EQ(wavelet::adjoint_check(x, zero), 0.0);
}

TEST(Wavelet, Linearity) {
    std::mt19937_64 rng(27);
    const auto x = test::random_tensor({6, 10}, rng), z = test::random_tensor({6, 10}, rng);
    const double a = 0.75, b = -2.5;
    const auto lhs = wavelet::dwt2(Tensor<double>(x * a + z * b));
    const auto bx = wavelet::dwt2(x), bz = wavelet::dwt2(z);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_LT(max_abs_diff(lhs.band(k), bx.band(k) * a + bz.band(k) * b), 1e-14);
}

TEST(Wavelet, TapeBackwardIsInverseTransformOfCotangent) {
    std::mt19937_64 rng(28);
    const auto x = test::random_tensor({4, 8}, rng);
    std::array<Tensor<double>, 4> w;
    for (auto& t : w) t = test::random_tensor({2, 4}, rng);
    ad::Tape<double> tape;
    auto xv = tape.leaf(x, true);
    auto sv = wavelet::dwt2(xv);
    auto loss = tape.constant(Tensor<double>({1}));
    for (std::size_t k = 0; k < 4; ++k) loss = ad::add<double>(loss, ad::sum<double>(ad::mul<double>(sv.band(k), tape.constant(w[k]))));
    tape.backward(loss);
    const Subbands<double> cot{w[0], w[1], w[2], w[3], 4, 8};
    EXPECT_LT(max_abs_diff(xv.grad(), wavelet::idwt2(cot)), 1e-14);
}

TEST(Wavelet, RoundTripLeavesGradientUnchanged) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = test::random_tensor({1, 1, 4, 8}, rng);
        const auto k = test::random_tensor({2, 1, 2, 3}, rng);
        auto loss = [&](ad::Tape<double>& tape, ad::Var<double> v) {
            return ad::sum_squares<double>(ad::activation<double>(ad::conv2d<double>(v, tape.constant(k)), ad::Activation::elu));
        };
        test::ScalarFn direct = loss;
        test::ScalarFn composed = [&](ad::Tape<double>& tape, ad::Var<double> v) { return loss(tape, wavelet::idwt2(wavelet::dwt2(v))); };
        const auto gd = test::tape_gradient(direct, x);
        EXPECT_LE(test::relative_error(test::numeric_gradient(composed, x), gd), 1e-6);
        EXPECT_LE(test::relative_error(test::tape_gradient(composed, x), gd), 1e-12);
    }
}
