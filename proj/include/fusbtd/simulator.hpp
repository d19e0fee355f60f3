#pragma once

#include "fusbtd/hrf_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace fusbtd {

using Rng = std::mt19937_64;

struct Range {
    double min = 0.0;
    double max = 0.0;
};

// Binary stimulus schedule. Onsets lie on the sample grid.
struct EpSchedule {
    std::vector<double> onsets;  // seconds
    double duration = 4.0;       // seconds per stimulus
    double fs = 4.0;             // Hz
    int total_length = 0;        // samples

    int samples_per_block() const;
    // 0/1 vector of length total_length.
    Eigen::VectorXd binary() const;
};

struct ArtifactProcess {
    std::vector<double> change_times;  // seconds, first is 0
    std::vector<double> mean_levels;
    double noise_std = 1.0;
    Eigen::VectorXd samples;
};

struct ArtifactSettings {
    Range dwell{5.0, 10.0};  // seconds per mean level
    double mean_std = 1.0;
    double noise_std = 1.0;
};

struct ParadigmSettings {
    int n_reps = 20;
    double stim_duration = 4.0;
    Range rest{10.0, 15.0};
};

struct Experiment {
    EpSchedule schedule;
    std::vector<HrfParams> hrf_params;
    ArtifactProcess artifact;
    double snr_db = 0.0;  // +inf disables the artifact
    int filter_length = 41;
    std::uint64_t seed = 0;

    void validate() const;
};

struct RoiTimeSeries {
    Eigen::MatrixXd data;  // M x N
    double fs = 4.0;
    std::vector<std::string> labels;

    int m_regions() const { return static_cast<int>(data.rows()); }
    int n_samples() const { return static_cast<int>(data.cols()); }
};

// Everything the simulator knows about one synthesized dataset.
struct Synthesis {
    RoiTimeSeries series;              // normalized rows
    Eigen::MatrixXd task_terms;        // h_m * ep, un-normalized
    Eigen::MatrixXd artifact_terms;    // a_m * artifact, un-normalized
    Eigen::VectorXd gains;             // a_m before normalization
    std::vector<SampledFilter> hrfs;   // sampled true kernels
};

EpSchedule generate_ep(int n_reps, double stim_duration, Range rest, double fs, Rng& rng);

ArtifactProcess generate_artifact(int length, double fs, Range dwell, double mean_std,
                                  double noise_std, Rng& rng);

Synthesis synthesize(const Experiment& experiment);

// Rows shifted to zero mean and scaled to unit variance (population
// variance). Constant rows are only centred.
void normalize_rows(RoiTimeSeries& series);

// Shape/rate pair whose continuous kernel has the given peak latency and
// FWHM. Throws SamplingError when no solution is found.
HrfParams invert_pl_fwhm(double peak_latency_s, double fwhm_s);

struct HrfSamplingRanges {
    Range peak_latency{0.25, 4.5};
    Range fwhm{0.5, 4.5};
};

HrfParams sample_random_hrf_params(Rng& rng, const HrfSamplingRanges& ranges = {});

// Full default scenario with M randomly drawn kernels.
Experiment make_experiment(int m_regions, double fs, int filter_length, double snr_db,
                           const ParadigmSettings& paradigm, const ArtifactSettings& artifact,
                           std::uint64_t seed);

// Deterministic child seed, distinct for each (seed, stream) pair.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

inline constexpr double kArtifactDisabled = std::numeric_limits<double>::infinity();

}  // namespace fusbtd
