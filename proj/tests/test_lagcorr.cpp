#include "fusbtd/error.hpp"
#include "fusbtd/lagcorr.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fusbtd;

namespace {

Eigen::MatrixXd white_noise(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out.data()[i] = n01(rng);
    return out;
}

MixingModel small_model() {
    MixingModel m;
    m.stack_depth = 8;
    m.artifact_gains = Eigen::Vector3d(0.7, -0.4, 1.1);
    for (const HrfParams& p : {HrfParams{1, 3, 2}, HrfParams{0.8, 5, 3}, HrfParams{1.3, 2.2, 1.5}})
        m.task_filters.push_back(gamma_hrf(p, 0.5, 5));
    return m;
}

SourceCorrSequence random_corr(int length, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    SourceCorrSequence c{Eigen::VectorXd(length)};
    c.values[0] = 1.0;
    for (int k = 1; k < length; ++k)
        c.values[k] = u(rng) / k;
    return c;
}

}  // namespace

TEST_CASE("hankelize examples") {
    Eigen::MatrixXd y(1, 4);
    y << 1, 2, 3, 4;
    const HankelStack h = hankelize(y, 2);
    Eigen::MatrixXd expected(2, 3);
    expected << 2, 3, 4, 1, 2, 3;
    CHECK(h.data == expected);

    const HankelStack h2 = hankelize(white_noise(2, 30, 1), 5);
    CHECK(h2.data.rows() == 10);
    CHECK(h2.n_columns() == 26);

    CHECK_THROWS_AS(hankelize(y, 4), DimensionError);
    CHECK_THROWS_AS(hankelize(y, 0), DimensionError);
}

TEST_CASE("hankelize/dehankelize round trip is exact") {
    for (int depth : {1, 3, 17}) {
        const Eigen::MatrixXd y = white_noise(3, 64, 7 + depth);
        const HankelStack h = hankelize(y, depth);
        // Row m L' + i holds y_m(n - i) at column n - L' + 1.
        for (int m = 0; m < 3; ++m)
            for (int i = 0; i < depth; ++i)
                for (Eigen::Index c = 0; c < h.n_columns(); ++c)
                    REQUIRE(h.data(m * depth + i, c) == y(m, c + depth - 1 - i));
        CHECK(dehankelize(h) == y);
    }
}

TEST_CASE("white-noise autocorrelation") {
    const Eigen::MatrixXd y = white_noise(1, 100000, 42);
    const LagCorrTensor t = autocorr_tensor(hankelize(y, 1), 2);
    CHECK(std::abs(t.slices[0](0, 0) - 1.0) <= 0.05);
    CHECK(std::abs(t.slices[1](0, 0)) <= 0.05);
}

TEST_CASE("zero input gives the zero tensor") {
    const LagCorrTensor t = autocorr_tensor(hankelize(Eigen::MatrixXd::Zero(2, 50), 4), 3);
    CHECK(t.squared_norm() == 0.0);
}

TEST_CASE("lag-0 slice is exactly symmetric and the estimator is unbiased") {
    const Eigen::MatrixXd y = white_noise(3, 400, 5);
    const HankelStack h = hankelize(y, 6);
    const LagCorrTensor t = autocorr_tensor(h, 4);
    CHECK((t.slices[0] - t.slices[0].transpose()).norm() == 0.0);
    // Direct evaluation of one lagged entry with the (Nv - tau) denominator.
    const int tau = 3;
    const Eigen::Index nv = h.n_columns();
    double acc = 0.0;
    for (Eigen::Index n = 0; n + tau < nv; ++n)
        acc += h.data(2, n) * h.data(9, n + tau);
    CHECK(t.slices[tau](2, 9) == doctest::Approx(acc / static_cast<double>(nv - tau)).epsilon(1e-12));
    CHECK_THROWS_AS(autocorr_tensor(hankelize(Eigen::MatrixXd::Ones(1, 5), 3), 4), EstimationError);
    CHECK_THROWS_AS(autocorr_tensor(h, 0), EstimationError);
}

TEST_CASE("core slice shift structure") {
    const SourceCorrSequence c = random_corr(40, 3);
    const int span = 12;
    for (int tau = 0; tau < 5; ++tau) {
        const Eigen::MatrixXd s = core_slice(c, span, tau);
        for (int i = 0; i < span; ++i)
            for (int j = 0; j < span; ++j)
                REQUIRE(s(i, j) == c.at(tau + i - j));
        if (tau > 0) {
            // Slice tau is slice tau - 1 shifted by one along the diagonal.
            const Eigen::MatrixXd prev = core_slice(c, span, tau - 1);
            CHECK(s.topRows(span - 1) == prev.bottomRows(span - 1));
        }
    }
    CHECK(core_slice(c, span, 0) == core_slice(c, span, 0).transpose());
    CHECK_THROWS_AS(core_slice(c, 40, 1), DimensionError);
}

TEST_CASE("model tensor examples and properties") {
    SUBCASE("impulse filters, white task source, no artifact") {
        MixingModel m;
        m.stack_depth = 3;
        Eigen::VectorXd one(1);
        one << 1.0;
        m.task_filters = {SampledFilter(one, 1.0), SampledFilter(one, 1.0)};
        m.artifact_gains = Eigen::Vector2d::Zero();
        SourceCorrSequence delta{Eigen::VectorXd::Zero(4)};
        delta.values[0] = 1.0;
        const LagCorrTensor t = model_tensor(m, delta, delta, 2, Identifiability::Skip);
        Eigen::MatrixXd expected(6, 6);
        expected << Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3),
            Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Identity(3, 3);
        CHECK(t.slices[0].isApprox(expected));
    }
    SUBCASE("blocks obey the shift property") {
        const MixingModel m = small_model();
        const int n_lags = 4;
        const int len = required_corr_length(n_lags, m.filter_order(), m.stack_depth);
        const LagCorrTensor t = model_tensor(m, random_corr(len, 1), random_corr(len, 2), n_lags);
        const int Lp = m.stack_depth;
        // Block (a, b) of slice tau at (i, j) equals slice tau+1 at (i, j+1).
        for (int tau = 0; tau + 1 < n_lags; ++tau)
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    for (int i = 0; i < Lp; ++i)
                        for (int j = 0; j + 1 < Lp; ++j)
                            CHECK(t.slices[tau](a * Lp + i, b * Lp + j) ==
                                  doctest::Approx(t.slices[tau + 1](a * Lp + i, b * Lp + j + 1)).epsilon(1e-12));
    }
    SUBCASE("bilinear in the autocorrelations and additive across terms") {
        const MixingModel m = small_model();
        const int n_lags = 3;
        const int len = required_corr_length(n_lags, m.filter_order(), m.stack_depth);
        const SourceCorrSequence c1 = random_corr(len, 4), c2 = random_corr(len, 5), c3 = random_corr(len, 6);
        SourceCorrSequence zero{Eigen::VectorXd::Zero(len)};
        SourceCorrSequence mix{2.0 * c1.values - 0.5 * c2.values};

        const auto t_mix = model_tensor(m, mix, c3, n_lags);
        const auto t1 = model_tensor(m, c1, zero, n_lags);
        const auto t2 = model_tensor(m, c2, zero, n_lags);
        const auto t3 = model_tensor(m, zero, c3, n_lags);
        for (int tau = 0; tau < n_lags; ++tau) {
            const Eigen::MatrixXd combo = 2.0 * t1.slices[tau] - 0.5 * t2.slices[tau] + t3.slices[tau];
            CHECK((t_mix.slices[tau] - combo).norm() <= 1e-12 * combo.norm());
        }
    }
    SUBCASE("too short an autocorrelation is rejected") {
        const MixingModel m = small_model();
        const SourceCorrSequence c = random_corr(5, 1);
        CHECK_THROWS_AS(model_tensor(m, c, c, 3), DimensionError);
    }
}

TEST_CASE("sample tensor of long white-source data approaches the model tensor") {
    // White sources have c = delta, so the population tensor is H H^T per lag.
    const MixingModel m = small_model();
    const int n = 100000, n_lags = 3;
    const int span = m.filter_order() + m.stack_depth;
    const Eigen::MatrixXd s = white_noise(2, n, 77);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, n);
    for (int r = 0; r < 3; ++r) {
        const auto& h = m.task_filters[r].taps;
        for (int t = 0; t < n; ++t) {
            double acc = 0.0;
            for (int l = 0; l < h.size() && l <= t; ++l)
                acc += h[l] * s(0, t - l);
            y(r, t) = acc + m.artifact_gains[r] * s(1, t);
        }
    }
    const LagCorrTensor sample = autocorr_tensor(hankelize(y, m.stack_depth), n_lags);
    SourceCorrSequence delta{Eigen::VectorXd::Zero(required_corr_length(n_lags, m.filter_order(), m.stack_depth))};
    delta.values[0] = 1.0;
    const LagCorrTensor model = model_tensor(m, delta, delta, n_lags);
    double diff = 0.0;
    for (int tau = 0; tau < n_lags; ++tau)
        diff += (sample.slices[tau] - model.slices[tau]).squaredNorm();
    CHECK(std::sqrt(diff / model.squared_norm()) <= 0.02);
    CHECK(span == 12);
}
