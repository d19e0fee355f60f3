#include "fusbtd/error.hpp"
#include "fusbtd/lagcorr.hpp"
#include "fusbtd/recovery.hpp"
#include "fusbtd/simulator.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fusbtd;

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        out.data()[i] = n01(rng);
    return out;
}

double correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::ArrayXd x = a.array() - a.mean(), y = b.array() - b.mean();
    return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

}  // namespace

TEST_CASE("retained count follows the ceiling rule") {
    CHECK(retained_count(2, 0.9) == 1);
    CHECK(retained_count(120, 0.9) == 12);
    CHECK(retained_count(121, 0.9) == 13);
    CHECK(retained_count(10, 0.0) == 10);
    CHECK(retained_count(1, 0.99) == 1);
    for (Eigen::Index n = 1; n <= 300; ++n)
        for (double f : {0.0, 0.25, 0.5, 0.9, 0.95}) {
            const Eigen::Index k = retained_count(n, f);
            CHECK(k >= 1);
            CHECK(k <= n);
            // Smallest count whose share is at least 1 - f, up to rounding.
            CHECK(static_cast<double>(k) >= (1.0 - f) * n - 1e-9);
            if (k > 1)
                CHECK(static_cast<double>(k - 1) < (1.0 - f) * n - 1e-9);
        }
    CHECK_THROWS_AS(retained_count(10, 1.0), ParameterError);
    CHECK_THROWS_AS(retained_count(10, -0.1), ParameterError);
}

TEST_CASE("truncated pseudo-inverse examples") {
    Eigen::Matrix2d a;
    a << 10, 0, 0, 1;
    const TruncatedPinv p = truncated_pinv(a, 0.9);
    CHECK(p.retained() == 1);
    CHECK(p.total == 2);
    CHECK(p.apply(Eigen::Vector2d(10, 0)).isApprox(Eigen::Vector2d(1, 0)));
    CHECK(p.apply(Eigen::Vector2d(0, 1)).norm() == doctest::Approx(0.0));

    const Eigen::MatrixXd b = gaussian(7, 7, 1) + 5.0 * Eigen::MatrixXd::Identity(7, 7);
    const Eigen::MatrixXd inv = truncated_pinv(b, 0.0).matrix();
    CHECK((b * inv - Eigen::MatrixXd::Identity(7, 7)).norm() <= 1e-10);

    CHECK_THROWS_AS(truncated_pinv(Eigen::MatrixXd::Zero(3, 2), 0.5), RankError);
}

TEST_CASE("Moore-Penrose identities hold for the truncated operator") {
    for (double f : {0.0, 0.5, 0.9}) {
        const Eigen::MatrixXd a = gaussian(30, 12, 3);
        const TruncatedPinv p = truncated_pinv(a, f);
        const Eigen::MatrixXd ap = p.matrix();
        CHECK((ap * a * ap - ap).norm() <= 1e-10 * ap.norm());
        // A A+ A reproduces A on the retained subspace.
        const Eigen::MatrixXd a_k = p.left * p.singular.asDiagonal() * p.right.transpose();
        CHECK((a_k * ap * a_k - a_k).norm() <= 1e-10 * a_k.norm());
        CHECK((a * ap).isApprox((a * ap).transpose(), 1e-10));
        for (Eigen::Index i = 1; i < p.retained(); ++i)
            CHECK(p.singular[i - 1] >= p.singular[i]);
    }
}

TEST_CASE("energy rule keeps the leading energy share") {
    Eigen::VectorXd s(4);
    s << 4, 2, 1, 1;
    const Eigen::MatrixXd a = s.asDiagonal();
    // Energies 16, 4, 1, 1 out of 22: half the energy needs one value, 80% needs two.
    CHECK(truncated_pinv(a, 0.5, TruncationRule::Energy).retained() == 1);
    CHECK(truncated_pinv(a, 0.2, TruncationRule::Energy).retained() == 2);
    CHECK(truncated_pinv(a, 0.0, TruncationRule::Energy).retained() == 4);
}

TEST_CASE("anti-diagonal collapse of a consistent Hankel matrix is exact") {
    const Eigen::VectorXd s = gaussian(1, 50, 2).row(0).transpose();
    const int depth = 6, rows = 10;
    const int cols = 50 - depth + 1;
    Eigen::MatrixXd h(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) {
            const int t = c + depth - 1 - i;
            h(i, c) = t >= 0 ? s[t] : 0.0;
        }
    CHECK((collapse_hankel_rows(h, depth, 50) - s).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("source estimation") {
    const Experiment e = make_experiment(3, 4.0, 41, kArtifactDisabled, ParadigmSettings{}, ArtifactSettings{}, 3);
    const Synthesis syn = synthesize(e);
    const Eigen::VectorXd ep = e.schedule.binary();

    SUBCASE("untruncated inversion of noise-free observations returns the paradigm") {
        // taps[0] = 0 leaves the lag-0 source column unobservable, so that row
        // estimates as zero and slightly biases the anti-diagonal average.
        RoiTimeSeries raw{syn.task_terms, 4.0, {}};
        const SourceEstimate est = estimate_sources(syn.hrfs, raw, 80, 0.0);
        CHECK(est.collapsed.size() == ep.size());
        CHECK(est.hankel_rows.rows() == 120);
        CHECK(est.hankel_rows.cols() == ep.size() - 79);
        CHECK(correlation(est.collapsed, ep) >= 0.95);
        CHECK((est.collapsed - ep).cwiseAbs().maxCoeff() <= 0.1);
    }
    SUBCASE("normalized noise-free series with the default truncation") {
        // Mean removal is outside the filter range; truncation keeps it from blowing up.
        const SourceEstimate est = estimate_sources(syn.hrfs, syn.series, 80);
        CHECK(correlation(est.collapsed, ep) >= 0.9);
    }
    SUBCASE("linearity in the observations") {
        RoiTimeSeries y1{gaussian(3, 400, 8), 4.0, {}};
        RoiTimeSeries y2{gaussian(3, 400, 9), 4.0, {}};
        RoiTimeSeries combo{2.0 * y1.data - 0.7 * y2.data, 4.0, {}};
        const auto a = estimate_sources(syn.hrfs, y1, 80).collapsed;
        const auto b = estimate_sources(syn.hrfs, y2, 80).collapsed;
        const auto c = estimate_sources(syn.hrfs, combo, 80).collapsed;
        CHECK((c - (2.0 * a - 0.7 * b)).norm() <= 1e-10 * c.norm());
    }
    SUBCASE("zero observations give a zero estimate") {
        RoiTimeSeries zero{Eigen::MatrixXd::Zero(3, 300), 4.0, {}};
        CHECK(estimate_sources(syn.hrfs, zero, 80).collapsed.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("dimension mismatches are rejected") {
        RoiTimeSeries two{Eigen::MatrixXd::Ones(2, 300), 4.0, {}};
        CHECK_THROWS_AS(estimate_sources(syn.hrfs, two, 80), DimensionError);
        CHECK_THROWS_AS(estimate_sources(syn.hrfs, syn.series, 60), DimensionError);
    }
}
