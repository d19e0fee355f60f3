#include "fusbtd/hrf_model.hpp"

#include "fusbtd/error.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace fusbtd {

void HrfParams::validate() const {
    if (!std::isfinite(amplitude))
        throw ParameterError("HRF amplitude must be finite");
    if (!std::isfinite(shape) || shape <= 1.0)
        throw ParameterError("HRF shape must be finite and > 1, got " + std::to_string(shape));
    if (!std::isfinite(rate) || rate <= 0.0)
        throw ParameterError("HRF rate must be finite and > 0, got " + std::to_string(rate));
}

SampledFilter::SampledFilter(Eigen::VectorXd taps_, double dt_) : taps(std::move(taps_)), dt(dt_) {
    if (taps.size() < 1)
        throw ShapeError("sampled filter needs at least one tap");
    if (!taps.allFinite())
        throw ShapeError("sampled filter taps must be finite");
    if (!(dt > 0.0))
        throw ShapeError("sampling interval must be positive");
}

int MixingModel::filter_order() const {
    if (task_filters.empty())
        return 0;
    return static_cast<int>(task_filters.front().order());
}

void MixingModel::validate_structure() const {
    if (task_filters.empty())
        throw DimensionError("mixing model has no regions");
    if (artifact_gains.size() != m_regions())
        throw DimensionError("artifact gain count does not match region count");
    if (stack_depth < 1)
        throw DimensionError("stack depth must be >= 1");
    const auto len = task_filters.front().length();
    for (const auto& f : task_filters)
        if (f.length() != len)
            throw DimensionError("task filters must share a common length");
}

bool MixingModel::identifiable() const {
    const long span = filter_order() + stack_depth;
    return static_cast<long>(m_regions()) * stack_depth >= 2 * span;
}

namespace {

// log of the unit-amplitude density at t > 0
double log_gamma_density(double shape, double rate, double t) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(t) - rate * t;
}

}  // namespace

SampledFilter gamma_hrf(const HrfParams& params, double dt, int length) {
    params.validate();
    if (!(dt > 0.0))
        throw ParameterError("dt must be positive");
    if (length < 2)
        throw ParameterError("gamma kernel needs at least two samples");
    Eigen::VectorXd taps = Eigen::VectorXd::Zero(length);
    for (int k = 1; k < length; ++k)
        taps[k] = params.amplitude * std::exp(log_gamma_density(params.shape, params.rate, k * dt));
    return SampledFilter(std::move(taps), dt);
}

GammaTapDerivatives gamma_hrf_derivatives(double shape, double rate, double dt, int length) {
    GammaTapDerivatives out;
    out.taps = Eigen::VectorXd::Zero(length);
    out.d_shape = Eigen::VectorXd::Zero(length);
    out.d_rate = Eigen::VectorXd::Zero(length);
    const double psi = boost::math::digamma(shape);
    const double log_rate = std::log(rate);
    for (int k = 1; k < length; ++k) {
        const double t = k * dt;
        const double f = std::exp(log_gamma_density(shape, rate, t));
        out.taps[k] = f;
        out.d_shape[k] = f * (log_rate + std::log(t) - psi);
        out.d_rate[k] = f * (shape / rate - t);
    }
    return out;
}

double peak_latency(const HrfParams& params) {
    if (!(params.shape > 1.0))
        throw NoInteriorPeakError("shape <= 1 has no interior peak");
    if (!(params.rate > 0.0))
        throw ParameterError("rate must be positive");
    return (params.shape - 1.0) / params.rate;
}

double continuous_fwhm(double shape, double rate) {
    peak_latency(HrfParams{1.0, shape, rate});
    // With x = rate t and x0 = shape - 1, write x = x0 e^s. The log-ratio to
    // the peak is phi(s) = x0 s - x0 (e^s - 1); half maximum solves phi = -ln 2.
    const double x0 = shape - 1.0;
    const auto phi = [x0](double s) { return x0 * s - x0 * std::expm1(s) + std::log(2.0); };
    boost::math::tools::eps_tolerance<double> tol(50);

    auto solve = [&](double direction) {
        double inner = 0.0;
        double outer = direction;
        while (phi(outer) > 0.0) {
            inner = outer;
            outer *= 2.0;
            if (std::abs(outer) > 1e12)
                throw ShapeError("half-maximum crossing not bracketed");
        }
        std::uintmax_t iters = 200;
        auto [a, b] = direction < 0 ? boost::math::tools::toms748_solve(phi, outer, inner, tol, iters)
                                    : boost::math::tools::toms748_solve(phi, inner, outer, tol, iters);
        return 0.5 * (a + b);
    };
    const double s_left = solve(-1.0);
    const double s_right = solve(1.0);
    return x0 * (std::exp(s_right) - std::exp(s_left)) / rate;
}

namespace {

Eigen::Index checked_positive_peak(const SampledFilter& filter) {
    Eigen::Index k = 0;
    const double peak = filter.taps.maxCoeff(&k);
    if (!(peak > 0.0))
        throw ShapeError("filter has no positive peak");
    return k;
}

}  // namespace

double fwhm(const SampledFilter& filter) {
    const auto& h = filter.taps;
    const Eigen::Index kmax = checked_positive_peak(filter);
    const double half = 0.5 * h[kmax];
    const Eigen::Index n = h.size();

    Eigen::Index first = 0;
    while (h[first] < half)
        ++first;
    double start = filter.time(first);
    if (first > 0) {
        const double a = h[first - 1], b = h[first];
        start = filter.time(first - 1) + filter.dt * (half - a) / (b - a);
    }

    Eigen::Index last = n - 1;
    while (h[last] < half)
        --last;
    double stop = filter.time(last);
    if (last < n - 1) {
        const double a = h[last], b = h[last + 1];
        stop = filter.time(last) + filter.dt * (a - half) / (a - b);
    }
    return stop - start;
}

double argmax_time(const SampledFilter& filter) {
    Eigen::Index k = 0;
    filter.taps.maxCoeff(&k);
    return filter.time(k);
}

double sampled_peak_latency(const SampledFilter& filter) {
    const Eigen::Index k = checked_positive_peak(filter);
    const auto& h = filter.taps;
    if (k == 0 || k == h.size() - 1)
        return filter.time(k);
    const double denom = h[k - 1] - 2.0 * h[k] + h[k + 1];
    if (denom >= 0.0)
        return filter.time(k);
    const double offset = 0.5 * (h[k - 1] - h[k + 1]) / denom;
    return filter.time(k) + offset * filter.dt;
}

SampledFilter normalize_peak(const SampledFilter& filter) {
    Eigen::Index k = 0;
    filter.taps.cwiseAbs().maxCoeff(&k);
    const double peak = filter.taps[k];
    if (peak == 0.0)
        throw ShapeError("cannot normalize an all-zero filter");
    return SampledFilter(filter.taps / peak, filter.dt);
}

Eigen::MatrixXd toeplitz_filter_block(const SampledFilter& filter, int stack_depth) {
    if (stack_depth < 1)
        throw DimensionError("stack depth must be >= 1");
    const Eigen::Index taps = filter.length();
    const Eigen::Index cols = filter.order() + stack_depth;
    Eigen::MatrixXd block = Eigen::MatrixXd::Zero(stack_depth, cols);
    for (Eigen::Index i = 0; i < stack_depth; ++i)
        block.row(i).segment(i, taps) = filter.taps.transpose();
    return block;
}

Eigen::MatrixXd build_task_block(const std::vector<SampledFilter>& filters, int stack_depth) {
    if (filters.empty())
        throw DimensionError("no task filters");
    const Eigen::Index span = filters.front().order() + stack_depth;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(filters.size()) * stack_depth, span);
    for (std::size_t m = 0; m < filters.size(); ++m) {
        if (filters[m].order() + stack_depth != span)
            throw DimensionError("task filters must share a common length");
        out.middleRows(static_cast<Eigen::Index>(m) * stack_depth, stack_depth) =
            toeplitz_filter_block(filters[m], stack_depth);
    }
    return out;
}

Eigen::MatrixXd build_mixing_matrix(const MixingModel& model, Identifiability policy) {
    model.validate_structure();
    if (policy == Identifiability::Enforce && !model.identifiable())
        throw DimensionError("identifiability condition M*L' >= 2(L+L') violated");
    const int depth = model.stack_depth;
    const Eigen::Index span = model.filter_order() + depth;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(model.m_regions()) * depth, 2 * span);
    out.leftCols(span) = build_task_block(model.task_filters, depth);
    for (int m = 0; m < model.m_regions(); ++m)
        out.block(static_cast<Eigen::Index>(m) * depth, span, depth, depth).diagonal().setConstant(
            model.artifact_gains[m]);
    return out;
}

}  // namespace fusbtd
