#pragma once

#include "fusbtd/hrf_model.hpp"
#include "fusbtd/simulator.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace fusbtd {

struct Interval {
    double start = 0.0;  // seconds
    double end = 0.0;    // seconds, exclusive

    double length() const { return end - start; }
};

// Disjoint, ordered on-intervals.
struct BinarySchedule {
    std::vector<Interval> intervals;

    void validate() const;
    static BinarySchedule from_schedule(const EpSchedule& ep);
    // Runs of samples where mask is true; sample k covers [k/fs, (k+1)/fs).
    static BinarySchedule from_mask(const std::vector<bool>& mask, double fs);
};

// Otsu threshold over the samples; samples strictly above become "on".
BinarySchedule binarize_global(std::span<const double> signal, double fs);

struct IouResult {
    std::vector<double> per_repetition;  // seconds
    double mean = 0.0;                   // seconds
    int false_positives = 0;             // estimated intervals overlapping no true one
};

// Per true repetition: IoU with the maximally overlapping estimate times the
// stimulus duration.
IouResult iou_seconds(const BinarySchedule& truth, const BinarySchedule& estimate, double duration);

struct PlError {
    std::vector<double> per_region;
    double mean = 0.0;
};

// |PL_true - PL_est| per region, peaks measured with sampled_peak_latency.
PlError pl_error(const std::vector<SampledFilter>& truth, const std::vector<SampledFilter>& estimate);
PlError fwhm_error(const std::vector<SampledFilter>& truth, const std::vector<SampledFilter>& estimate);

struct PeakDetection {
    double threshold_sd = 0.5;        // peaks must exceed mean + k * std
    double prominence_fraction = 0.5; // interval edges at this fraction of prominence
    double min_separation = 10.0;     // seconds
};

BinarySchedule reconstruct_ep_from_peaks(std::span<const double> source, double fs,
                                         const PeakDetection& options = {});

// Sample variance (n - 1) over mean.
double fano_factor_of_peaks(std::span<const double> peaks);

// Per region: max of the series in [onset, onset + window] for each stimulus,
// then the Fano factor of those peaks.
std::vector<double> fano_factor(const RoiTimeSeries& series, const BinarySchedule& ep, double window);

// Per region mean of the post-onset windows, M x (round(window * fs) + 1).
Eigen::MatrixXd averaged_response(const RoiTimeSeries& series, const BinarySchedule& ep, double window);

struct EvalReport {
    IouResult iou;
    PlError pl;
    PlError fwhm;
    std::vector<double> fano_factors;
    double baseline_iou_mean = -1.0;  // negative when no baseline was run
};

}  // namespace fusbtd
