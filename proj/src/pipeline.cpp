#include "fusbtd/pipeline.hpp"

#include "fusbtd/error.hpp"
#include "fusbtd/lagcorr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fusbtd {

BtdDims PipelineConfig::dims(int m_regions_in_data) const {
    BtdDims d;
    d.m_regions = m_regions_in_data;
    d.filter_length = filter_length;
    d.stack_depth = stack_depth;
    d.n_lags = n_lags;
    d.dt = dt();
    return d;
}

void PipelineConfig::validate() const {
    if (!(fs > 0.0))
        throw ConfigError("fs must be positive");
    if (filter_length < 2 || stack_depth < 1 || n_lags < 1)
        throw ConfigError("filter length, stack depth and lag count must be positive");
    if (n_lags > stack_depth + 1)
        throw ConfigError("n_lags exceeds the lag window available to the stack");
    if (m_regions < 2)
        throw ConfigError("at least two regions are required");
    if (static_cast<long>(m_regions) * stack_depth < 2L * (filter_length - 1 + stack_depth))
        throw ConfigError("identifiability condition M*L' >= 2(L+L') violated");
    if (!(cluster_cut > 0.0))
        throw ConfigError("cluster cut must be positive");
    if (truncation_fraction < 0.0 || truncation_fraction >= 1.0)
        throw ConfigError("truncation fraction must lie in [0, 1)");
    if (mc_iterations < 1)
        throw ConfigError("Monte-Carlo iterations must be >= 1");
    solver.validate();
}

std::string PipelineConfig::hash() const {
    std::ostringstream s;
    s.precision(17);
    s << fs << '|' << filter_length << '|' << stack_depth << '|' << n_lags << '|' << m_regions << '|'
      << solver.max_iterations << '|' << solver.gradient_tolerance << '|' << solver.cost_tolerance << '|'
      << solver.n_starts << '|' << solver.lbfgs_memory << '|' << solver.seed << '|' << cluster_cut << '|'
      << truncation_fraction << '|' << static_cast<int>(truncation_rule) << '|' << paradigm.n_reps << '|'
      << paradigm.stim_duration << '|' << paradigm.rest.min << '|' << paradigm.rest.max << '|'
      << artifact.dwell.min << '|' << artifact.dwell.max << '|' << artifact.mean_std << '|'
      << artifact.noise_std << '|' << snr_db << '|' << mc_iterations << '|';
    for (double v : snr_list)
        s << v << ',';
    s << '|' << baseline_peak_latency << '|' << baseline_fwhm << '|' << peaks.threshold_sd << '|'
      << peaks.prominence_fraction << '|' << peaks.min_separation << '|' << seed;
    // FNV-1a 64
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s.str()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<SampledFilter> GroundTruth::sampled_hrfs(double dt, int length) const {
    std::vector<SampledFilter> out;
    for (const auto& p : hrfs)
        out.push_back(normalize_peak(gamma_hrf(p, dt, length)));
    return out;
}

Simulation simulate(const PipelineConfig& config, double snr_db, std::uint64_t seed) {
    config.validate();
    Simulation sim;
    sim.experiment = make_experiment(config.m_regions, config.fs, config.filter_length, snr_db, config.paradigm,
                                     config.artifact, seed);
    sim.synthesis = synthesize(sim.experiment);
    sim.truth.hrfs = sim.experiment.hrf_params;
    sim.truth.schedule = sim.experiment.schedule;
    sim.truth.gains = sim.synthesis.gains;
    sim.truth.snr_db = snr_db;
    sim.truth.seed = seed;
    return sim;
}

DecompositionResult decompose(const RoiTimeSeries& series, const PipelineConfig& config) {
    config.validate();
    RoiTimeSeries normalized = series;
    normalize_rows(normalized);
    DecompositionResult out;
    out.dims = config.dims(normalized.m_regions());
    const LagCorrTensor tensor = autocorr_tensor(hankelize(normalized, config.stack_depth), config.n_lags);
    const BtdTarget target(tensor, out.dims);
    out.target_squared_norm = target.squared_norm();
    out.solutions = multi_start(target, config.solver);
    return out;
}

PipelineResult run_pipeline(const RoiTimeSeries& series, const PipelineConfig& config) {
    PipelineResult out;
    out.normalized = series;
    normalize_rows(out.normalized);
    out.decomposition = decompose(out.normalized, config);
    out.selection = select_stable(out.decomposition.solutions, StabilityConfig{config.cluster_cut});
    out.source = estimate_sources(out.selection.mean_hrfs, out.normalized, config.stack_depth,
                                  config.truncation_fraction, config.truncation_rule);
    out.binarized = binarize_global(std::span<const double>(out.source.collapsed.data(), out.source.collapsed.size()),
                                    out.source.fs);
    return out;
}

SampledFilter baseline_kernel(const PipelineConfig& config) {
    const HrfParams p = invert_pl_fwhm(config.baseline_peak_latency, config.baseline_fwhm);
    return normalize_peak(gamma_hrf(p, config.dt(), config.filter_length));
}

SourceEstimate baseline_sources(const RoiTimeSeries& normalized, const PipelineConfig& config) {
    const std::vector<SampledFilter> kernels(normalized.m_regions(), baseline_kernel(config));
    return estimate_sources(kernels, normalized, config.stack_depth, config.truncation_fraction,
                            config.truncation_rule);
}

EvalReport evaluate(const GroundTruth& truth, const std::vector<SampledFilter>& estimated_hrfs,
                    const BinarySchedule& estimated_ep, const PipelineConfig& config) {
    EvalReport report;
    report.iou = iou_seconds(BinarySchedule::from_schedule(truth.schedule), estimated_ep, truth.schedule.duration);
    if (!estimated_hrfs.empty()) {
        const auto true_hrfs = truth.sampled_hrfs(config.dt(), config.filter_length);
        report.pl = pl_error(true_hrfs, estimated_hrfs);
        report.fwhm = fwhm_error(true_hrfs, estimated_hrfs);
    }
    return report;
}

MonteCarloRow run_monte_carlo_iteration(const PipelineConfig& config, double snr_db, int iteration) {
    MonteCarloRow row;
    row.snr_db = snr_db;
    row.iteration = iteration;
    row.seed = derive_seed(config.seed, static_cast<std::uint64_t>(iteration));
    try {
        const Simulation sim = simulate(config, snr_db, row.seed);
        PipelineConfig run_config = config;
        run_config.solver.seed = derive_seed(row.seed, 0xb7d);
        const PipelineResult result = run_pipeline(sim.synthesis.series, run_config);
        const EvalReport report = evaluate(sim.truth, result.selection.mean_hrfs, result.binarized, run_config);
        row.pl_error = report.pl.mean;
        row.fwhm_error = report.fwhm.mean;
        row.iou = report.iou.mean;
        row.selected_runs = static_cast<int>(result.selection.selected_runs.size());

        const SourceEstimate base = baseline_sources(result.normalized, run_config);
        const BinarySchedule base_ep =
            binarize_global(std::span<const double>(base.collapsed.data(), base.collapsed.size()), base.fs);
        row.baseline_iou = iou_seconds(BinarySchedule::from_schedule(sim.truth.schedule), base_ep,
                                       sim.truth.schedule.duration)
                               .mean;
        row.ok = true;
    } catch (const Error& e) {
        row.error = "[" + e.stage() + "] " + e.what();
    }
    return row;
}

std::vector<MonteCarloRow> run_monte_carlo(const PipelineConfig& config) {
    config.validate();
    const int n_snr = static_cast<int>(config.snr_list.size());
    const int total = n_snr * config.mc_iterations;
    std::vector<MonteCarloRow> rows(total);
#pragma omp parallel for schedule(dynamic)
    for (int task = 0; task < total; ++task)
        rows[task] = run_monte_carlo_iteration(config, config.snr_list[task / config.mc_iterations],
                                               task % config.mc_iterations);
    return rows;
}

double median(std::vector<double> values) {
    if (values.empty())
        return std::nan("");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_std(const std::vector<double>& values) {
    if (values.size() < 2)
        return 0.0;
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::vector<MonteCarloSummary> summarize(const std::vector<MonteCarloRow>& rows, const std::vector<double>& snr_list) {
    std::vector<MonteCarloSummary> out;
    for (double snr : snr_list) {
        MonteCarloSummary s;
        s.snr_db = snr;
        std::vector<double> pl, iou, base;
        for (const auto& r : rows) {
            if (r.snr_db != snr)
                continue;
            if (!r.ok) {
                ++s.n_failed;
                continue;
            }
            ++s.n_ok;
            pl.push_back(r.pl_error);
            iou.push_back(r.iou);
            base.push_back(r.baseline_iou);
        }
        s.pl_error_median = median(pl);
        s.pl_error_std = sample_std(pl);
        s.iou_median = median(iou);
        s.iou_std = sample_std(iou);
        s.baseline_iou_median = median(base);
        s.baseline_iou_std = sample_std(base);
        out.push_back(s);
    }
    return out;
}

}  // namespace fusbtd
