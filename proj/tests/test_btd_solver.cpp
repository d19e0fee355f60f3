#include "fusbtd/btd_solver.hpp"
#include "fusbtd/error.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace fusbtd;

namespace {

BtdDims small_dims() {
    BtdDims d;
    d.m_regions = 3;
    d.filter_length = 9;
    d.stack_depth = 16;
    d.n_lags = 9;
    d.dt = 0.5;
    return d;
}

// AR(1)-style sequences are valid autocorrelations.
SourceCorrSequence geometric_corr(int length, double r) {
    SourceCorrSequence c{Eigen::VectorXd(length)};
    for (int k = 0; k < length; ++k)
        c.values[k] = std::pow(r, k);
    return c;
}

BtdVariables truth_vars(const BtdDims& d) {
    BtdVariables v;
    v.hrfs = {HrfParams{1.2, 3.0, 2.0}, HrfParams{0.8, 5.0, 2.5}, HrfParams{1.0, 2.5, 1.2}};
    v.gains = Eigen::Vector3d(0.6, -0.3, 0.9);
    v.task_corr = geometric_corr(d.corr_length(), 0.85);
    v.artifact_corr = geometric_corr(d.corr_length(), 0.4);
    return v;
}

LagCorrTensor model_target(const BtdVariables& v, const BtdDims& d) {
    return model_tensor(mixing_model(v, d), v.task_corr, v.artifact_corr, d.n_lags);
}

LagCorrTensor random_tensor(const BtdDims& d, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    LagCorrTensor t;
    const int dim = d.m_regions * d.stack_depth;
    for (int tau = 0; tau < d.n_lags; ++tau) {
        Eigen::MatrixXd s(dim, dim);
        for (Eigen::Index i = 0; i < s.size(); ++i)
            s.data()[i] = scale * n01(rng);
        t.slices.push_back(s);
    }
    return t;
}

LagCorrTensor add(const LagCorrTensor& a, const LagCorrTensor& b, double beta = 1.0) {
    LagCorrTensor out = a;
    for (std::size_t i = 0; i < out.slices.size(); ++i)
        out.slices[i] += beta * b.slices[i];
    return out;
}

double direct_cost(const BtdVariables& v, const LagCorrTensor& target, const BtdDims& d) {
    const LagCorrTensor model = model_target(v, d);
    double acc = 0.0;
    for (int tau = 0; tau < d.n_lags; ++tau)
        acc += (target.slices[tau] - model.slices[tau]).squaredNorm();
    return acc;
}

Eigen::VectorXd central_difference(const Eigen::VectorXd& x, const BtdTarget& target, double h) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd up = x, dn = x;
        up[i] += h;
        dn[i] -= h;
        g[i] = (btd_cost_gradient(up, target).cost - btd_cost_gradient(dn, target).cost) / (2 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("dimension helpers") {
    const BtdDims d;
    CHECK(d.span() == 120);
    CHECK(d.corr_length() == 160);
    CHECK(d.d_min() == -79);
    CHECK(d.d_max() == 119);
    CHECK(d.n_free() == 4 * 3 + 2 * 159);
    BtdDims bad = d;
    bad.stack_depth = 70;
    CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("pack and unpack are inverse") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const Eigen::VectorXd x = pack(v, d);
    CHECK(x.size() == d.n_free());
    const BtdVariables w = unpack(x, d);
    for (int m = 0; m < 3; ++m) {
        CHECK(w.hrfs[m].shape == doctest::Approx(v.hrfs[m].shape).epsilon(1e-14));
        CHECK(w.hrfs[m].rate == doctest::Approx(v.hrfs[m].rate).epsilon(1e-14));
        CHECK(w.hrfs[m].amplitude == v.hrfs[m].amplitude);
    }
    CHECK(w.gains == v.gains);
    CHECK(w.task_corr.values == v.task_corr.values);
    CHECK(w.artifact_corr.values == v.artifact_corr.values);
    CHECK_THROWS_AS(unpack(Eigen::VectorXd::Zero(3), d), DimensionError);
}

TEST_CASE("cost vanishes at the generating variables") {
    for (const BtdDims& d : {small_dims(), BtdDims{}}) {
        const BtdVariables v = truth_vars(d);
        const LagCorrTensor t = model_target(v, d);
        const double norm = t.squared_norm();
        CHECK(btd_cost(v, BtdTarget(t, d)) <= 1e-20 * norm);
        CHECK(btd_cost(v, t, d) <= 1e-20 * norm);
    }
}

TEST_CASE("cost at the truth equals the squared perturbation") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const LagCorrTensor e = random_tensor(d, 9, 0.01);
    const LagCorrTensor t = add(model_target(v, d), e);
    CHECK(btd_cost(v, BtdTarget(t, d)) == doctest::Approx(e.squared_norm()).epsilon(1e-9));
}

TEST_CASE("compressed cost equals the full Frobenius cost") {
    const BtdDims d = small_dims();
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    const LagCorrTensor t = add(model_target(truth_vars(d), d), random_tensor(d, 3, 0.05));
    const BtdTarget target(t, d);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::VectorXd x = pack(truth_vars(d), d);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x[i] += 0.1 * n01(rng);
        const BtdVariables v = unpack(x, d);
        const double direct = direct_cost(v, t, d);
        CHECK(btd_cost(v, target) == doctest::Approx(direct).epsilon(1e-9));
    }
}

TEST_CASE("truth beats random perturbations") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const BtdTarget target(model_target(v, d), d);
    const Eigen::VectorXd x0 = pack(v, d);
    const double at_truth = btd_cost(v, target);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd x = x0;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x[i] += 0.05 * n01(rng);
        CHECK(btd_cost_gradient(x, target).cost > at_truth);
    }
}

TEST_CASE("sign flips of either block term leave the cost unchanged") {
    const BtdDims d = small_dims();
    const BtdTarget target(add(model_target(truth_vars(d), d), random_tensor(d, 4, 0.02)), d);
    BtdVariables v = truth_vars(d);
    v.hrfs[0].shape = 4.0;
    const double base = btd_cost(v, target);
    BtdVariables flipped_task = v;
    for (auto& p : flipped_task.hrfs)
        p.amplitude = -p.amplitude;
    BtdVariables flipped_art = v;
    flipped_art.gains = -v.gains;
    CHECK(btd_cost(flipped_task, target) == doctest::Approx(base).epsilon(1e-12));
    CHECK(btd_cost(flipped_art, target) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central differences") {
    const BtdDims d = small_dims();
    const BtdTarget target(add(model_target(truth_vars(d), d), random_tensor(d, 8, 0.05)), d);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::VectorXd x = pack(truth_vars(d), d);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            x[i] += 0.2 * n01(rng);
        const Eigen::VectorXd g = btd_cost_gradient(x, target).gradient;
        const Eigen::VectorXd fd = central_difference(x, target, 1e-6);
        CHECK((g - fd).norm() <= 1e-5 * fd.norm());
        CHECK(btd_gradient(unpack(x, d), target).isApprox(g, 1e-12));
    }
}

TEST_CASE("gradient vanishes at an exact minimum") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const LagCorrTensor t = model_target(v, d);
    const Eigen::VectorXd g = btd_gradient(v, BtdTarget(t, d));
    CHECK(g.norm() <= 1e-10 * t.squared_norm());
}

TEST_CASE("autocorrelation gradient is linear in the residual") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const LagCorrTensor model = model_target(v, d);
    const LagCorrTensor e = random_tensor(d, 21, 0.03);
    const Eigen::VectorXd g1 = btd_gradient(v, BtdTarget(add(model, e), d));
    const Eigen::VectorXd g2 = btd_gradient(v, BtdTarget(add(model, e, 2.0), d));
    const int first_corr = 4 * d.m_regions;
    const Eigen::VectorXd c1 = g1.tail(g1.size() - first_corr);
    const Eigen::VectorXd c2 = g2.tail(g2.size() - first_corr);
    CHECK((c2 - 2.0 * c1).norm() <= 1e-9 * c1.norm());
    CHECK(c1.norm() > 0.0);
}

TEST_CASE("solver started at the truth stops immediately") {
    const BtdDims d = small_dims();
    const BtdVariables v = truth_vars(d);
    const LagCorrTensor t = model_target(v, d);
    const BtdTarget target(t, d);
    const BtdSolution s = solve_single(target, SolverConfig{}, v);
    CHECK(s.iterations <= 2);
    CHECK(s.final_cost <= 1e-16 * t.squared_norm());
    CHECK(s.sampled_hrfs.size() == 3);
    for (const auto& h : s.sampled_hrfs)
        CHECK(h.taps.maxCoeff() == doctest::Approx(1.0));
}

TEST_CASE("solver is deterministic and reduces the cost") {
    const BtdDims d = small_dims();
    const BtdTarget target(add(model_target(truth_vars(d), d), random_tensor(d, 2, 0.01)), d);
    Rng rng(12);
    const BtdVariables init = random_init(target, rng);
    SolverConfig cfg;
    cfg.max_iterations = 200;
    const BtdSolution a = solve_single(target, cfg, init);
    const BtdSolution b = solve_single(target, cfg, init);
    CHECK(a.final_cost == b.final_cost);
    CHECK(pack(a.variables, d) == pack(b.variables, d));
    CHECK(a.final_cost < btd_cost(init, target));
    CHECK(a.final_cost >= 0.0);
}

TEST_CASE("random init lies in the physiological set") {
    const BtdDims d = small_dims();
    const BtdTarget target(model_target(truth_vars(d), d), d);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const BtdVariables v = random_init(target, rng);
        for (const auto& p : v.hrfs) {
            CHECK(peak_latency(p) >= 0.25 - 1e-9);
            CHECK(peak_latency(p) <= 4.5 + 1e-9);
        }
        CHECK(v.gains.minCoeff() >= 0.1);
        CHECK(v.gains.maxCoeff() <= 1.0);
        CHECK(v.task_corr.values[0] == 1.0);
        CHECK(v.artifact_corr.values[0] == 1.0);
        CHECK(v.artifact_corr.values.tail(v.artifact_corr.size() - 1).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("multi-start on a model-built target") {
    const BtdDims d;  // default dimensions
    BtdVariables v;
    v.hrfs = {invert_pl_fwhm(1.0, 1.5), invert_pl_fwhm(2.0, 2.5), invert_pl_fwhm(3.0, 3.5)};
    v.gains = Eigen::Vector3d(0.5, 0.8, 0.3);
    v.task_corr = geometric_corr(d.corr_length(), 0.9);
    v.artifact_corr = geometric_corr(d.corr_length(), 0.6);
    const LagCorrTensor t = model_target(v, d);
    const BtdTarget target(t, d);

    SolverConfig cfg;
    cfg.seed = 3;
    const auto runs = multi_start(target, cfg);
    REQUIRE(runs.size() == 20);
    // A common delay of all kernels is nearly invisible to second-order
    // statistics, so only latency differences between regions are pinned.
    const BtdSolution* best = &runs.front();
    for (const auto& r : runs) {
        CHECK(r.run_index >= 0);
        if (r.final_cost < best->final_cost)
            best = &r;
    }
    CHECK(best->final_cost <= 1e-6 * t.squared_norm());
    const auto pl = best->peak_latencies();
    CHECK(std::abs((pl[1] - pl[0]) - 1.0) <= 0.1);
    CHECK(std::abs((pl[2] - pl[1]) - 1.0) <= 0.1);

    SolverConfig one = cfg;
    one.n_starts = 1;
    one.max_iterations = 50;
    CHECK(multi_start(target, one).size() == 1);

    SolverConfig other = one;
    other.seed = 4;
    CHECK(multi_start(target, one).front().final_cost != multi_start(target, other).front().final_cost);
    CHECK(multi_start(target, one).front().final_cost == multi_start(target, one).front().final_cost);
}

TEST_CASE("non-finite targets make every run diverge") {
    const BtdDims d = small_dims();
    LagCorrTensor t = model_target(truth_vars(d), d);
    t.slices[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    SolverConfig cfg;
    cfg.n_starts = 2;
    CHECK_THROWS_AS(multi_start(BtdTarget(t, d), cfg), PipelineError);
}

TEST_CASE("solver configuration validation") {
    SolverConfig c;
    c.n_starts = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = SolverConfig{};
    c.gradient_tolerance = 0.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}
