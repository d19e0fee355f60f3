#pragma once

#include <Eigen/Dense>

#include <vector>

namespace fusbtd {

// One-gamma hemodynamic kernel
//   f(t) = amplitude * rate^shape * t^(shape-1) * exp(-rate t) / Gamma(shape)
// shape > 1 puts a zero at t = 0 and a single interior peak.
struct HrfParams {
    double amplitude = 1.0;
    double shape = 2.0;  // dimensionless, > 1
    double rate = 1.0;   // 1/s, > 0

    void validate() const;
};

// Uniformly sampled impulse response, taps[k] at t = k * dt.
struct SampledFilter {
    Eigen::VectorXd taps;
    double dt = 0.25;

    SampledFilter() = default;
    SampledFilter(Eigen::VectorXd taps_, double dt_);

    Eigen::Index length() const { return taps.size(); }
    // Filter order L, i.e. length() - 1.
    Eigen::Index order() const { return taps.size() - 1; }
    double time(Eigen::Index k) const { return static_cast<double>(k) * dt; }
};

// M x 2 bank of convolutive filters: one task HRF per region plus the
// region's gain on a directly additive artifact source.
struct MixingModel {
    std::vector<SampledFilter> task_filters;
    Eigen::VectorXd artifact_gains;
    int stack_depth = 80;

    int m_regions() const { return static_cast<int>(task_filters.size()); }
    int filter_order() const;
    // Structural checks (common filter length, matching gain count).
    void validate_structure() const;
    // M * L' >= 2 (L + L'), the identifiability condition for two sources.
    bool identifiable() const;
};

enum class Identifiability { Enforce, Skip };

SampledFilter gamma_hrf(const HrfParams& params, double dt, int length);

// Partial derivatives of the unit-amplitude kernel taps with respect to
// shape and rate. Both are zero at t = 0.
struct GammaTapDerivatives {
    Eigen::VectorXd taps;
    Eigen::VectorXd d_shape;
    Eigen::VectorXd d_rate;
};
GammaTapDerivatives gamma_hrf_derivatives(double shape, double rate, double dt, int length);

// Mode of the continuous kernel, (shape - 1) / rate.
double peak_latency(const HrfParams& params);

// Full width at half maximum of the continuous kernel (root finding on the
// log-density, so it stays accurate for very large shapes).
double continuous_fwhm(double shape, double rate);

// Sampled FWHM: first up-crossing to last down-crossing of half the peak,
// linearly interpolated between samples.
double fwhm(const SampledFilter& filter);

// Time of the sampled maximum, refined with a three-point parabola.
double sampled_peak_latency(const SampledFilter& filter);
// Time of the raw sampled maximum.
double argmax_time(const SampledFilter& filter);

// Copy scaled so that the largest-magnitude tap equals +1.
SampledFilter normalize_peak(const SampledFilter& filter);

// L' x (L + L') banded Toeplitz matrix, row i holds taps starting at column i.
Eigen::MatrixXd toeplitz_filter_block(const SampledFilter& filter, int stack_depth);

// (M L') x 2 (L + L'): task block column of Toeplitz HRF blocks next to the
// artifact block column a_m [I | 0].
Eigen::MatrixXd build_mixing_matrix(const MixingModel& model,
                                    Identifiability policy = Identifiability::Enforce);

// Task block column only, (M L') x (L + L').
Eigen::MatrixXd build_task_block(const std::vector<SampledFilter>& filters, int stack_depth);

}  // namespace fusbtd
