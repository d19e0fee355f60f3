#pragma once

#include "fusbtd/btd_solver.hpp"
#include "fusbtd/metrics.hpp"
#include "fusbtd/recovery.hpp"
#include "fusbtd/simulator.hpp"
#include "fusbtd/stability.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fusbtd {

struct PipelineConfig {
    // signal geometry
    double fs = 4.0;
    int filter_length = 41;  // L + 1
    int stack_depth = 80;    // L'
    int n_lags = 41;         // K + 1
    int m_regions = 3;       // simulation only

    // decomposition
    SolverConfig solver;
    double cluster_cut = 0.5;
    double truncation_fraction = 0.9;
    TruncationRule truncation_rule = TruncationRule::Count;

    // simulation
    ParadigmSettings paradigm;
    ArtifactSettings artifact;
    double snr_db = 0.0;

    // Monte-Carlo
    int mc_iterations = 30;
    std::vector<double> snr_list{-10.0, -5.0, 0.0, 5.0, 10.0};
    double baseline_peak_latency = 2.0;
    double baseline_fwhm = 2.9;

    PeakDetection peaks;
    std::uint64_t seed = 1;
    std::string output_dir = "fusbtd_out";

    double dt() const { return 1.0 / fs; }
    BtdDims dims(int m_regions_in_data) const;
    void validate() const;
    // Stable 16-hex-digit hash of every numeric setting (output_dir excluded).
    std::string hash() const;
};

// What the simulator planted, as needed for evaluation.
struct GroundTruth {
    std::vector<HrfParams> hrfs;
    EpSchedule schedule;
    Eigen::VectorXd gains;
    double snr_db = 0.0;
    std::uint64_t seed = 0;

    std::vector<SampledFilter> sampled_hrfs(double dt, int length) const;
};

struct Simulation {
    Experiment experiment;
    Synthesis synthesis;
    GroundTruth truth;
};

Simulation simulate(const PipelineConfig& config, double snr_db, std::uint64_t seed);

struct DecompositionResult {
    BtdDims dims;
    double target_squared_norm = 0.0;
    std::vector<BtdSolution> solutions;
};

// Normalizes a copy of the series, builds the lag tensor, runs multi-start.
DecompositionResult decompose(const RoiTimeSeries& series, const PipelineConfig& config);

struct PipelineResult {
    RoiTimeSeries normalized;
    DecompositionResult decomposition;
    ClusterReport selection;
    SourceEstimate source;
    BinarySchedule binarized;
};

PipelineResult run_pipeline(const RoiTimeSeries& series, const PipelineConfig& config);

// Fixed-kernel baseline: the same gamma kernel in every region, no decomposition.
SampledFilter baseline_kernel(const PipelineConfig& config);
SourceEstimate baseline_sources(const RoiTimeSeries& normalized, const PipelineConfig& config);

EvalReport evaluate(const GroundTruth& truth, const std::vector<SampledFilter>& estimated_hrfs,
                    const BinarySchedule& estimated_ep, const PipelineConfig& config);

struct MonteCarloRow {
    double snr_db = 0.0;
    int iteration = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double pl_error = 0.0;
    double fwhm_error = 0.0;
    double iou = 0.0;
    double baseline_iou = 0.0;
    int selected_runs = 0;
};

struct MonteCarloSummary {
    double snr_db = 0.0;
    int n_ok = 0;
    int n_failed = 0;
    double pl_error_median = 0.0;
    double pl_error_std = 0.0;
    double iou_median = 0.0;
    double iou_std = 0.0;
    double baseline_iou_median = 0.0;
    double baseline_iou_std = 0.0;
};

// One scenario per iteration (kernels, paradigm, artifact) shared across the
// SNR list, so SNR levels are compared on paired data.
MonteCarloRow run_monte_carlo_iteration(const PipelineConfig& config, double snr_db, int iteration);
std::vector<MonteCarloRow> run_monte_carlo(const PipelineConfig& config);
std::vector<MonteCarloSummary> summarize(const std::vector<MonteCarloRow>& rows,
                                         const std::vector<double>& snr_list);

double median(std::vector<double> values);
double sample_std(const std::vector<double>& values);

}  // namespace fusbtd
