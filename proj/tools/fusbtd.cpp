// Command-line front end: simulate, decompose, select, recover, evaluate,
// pipeline and montecarlo. Settings come from a flat TOML file (--config)
// whose keys are the long option names; flags override the file.

#include "fusbtd/error.hpp"
#include "fusbtd/io.hpp"
#include "fusbtd/lagcorr.hpp"
#include "fusbtd/pipeline.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using namespace fusbtd;

namespace {

struct Paths {
    std::string input;
    std::string truth;
    std::string runs;
    std::string hrfs;
    std::string source;
    std::string schedule;
    std::string tensor_dir;
};

struct Flags {
    bool snr_sweep = false;
    bool peaks = false;
    bool baseline = false;
    double window = 8.0;
    std::string truncation_rule = "count";
};

io::Provenance provenance(const PipelineConfig& c) {
    return {c.hash(), c.seed};
}

std::string snr_tag(double snr) {
    if (!std::isfinite(snr))
        return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+g", snr);
    return buf;
}

void add_common_options(CLI::App& app, PipelineConfig& c, Flags& flags) {
    app.add_option("--seed", c.seed, "Master seed");
    app.add_option("-o,--output-dir", c.output_dir, "Directory for output files");
    app.add_option("--fs", c.fs, "Sampling rate (Hz)")->check(CLI::PositiveNumber);
    app.add_option("--filter-length", c.filter_length, "HRF taps (L + 1)");
    app.add_option("--stack-depth", c.stack_depth, "Hankel stack depth L'");
    app.add_option("--n-lags", c.n_lags, "Autocorrelation lags (K + 1)");
    app.add_option("--m-regions", c.m_regions, "Simulated region count");
    app.add_option("--n-starts", c.solver.n_starts, "Random starts per decomposition");
    app.add_option("--max-iterations", c.solver.max_iterations, "Optimizer iteration cap per start");
    app.add_option("--gradient-tolerance", c.solver.gradient_tolerance);
    app.add_option("--cost-tolerance", c.solver.cost_tolerance);
    app.add_option("--lbfgs-memory", c.solver.lbfgs_memory);
    app.add_option("--cluster-cut", c.cluster_cut, "Dendrogram cut height (s)");
    app.add_option("--truncation-fraction", c.truncation_fraction, "Fraction of singular values discarded");
    app.add_option("--truncation-rule", flags.truncation_rule, "count or energy")
        ->check(CLI::IsMember({"count", "energy"}));
    app.add_option("--snr", c.snr_db, "Task-to-artifact SNR (dB); inf disables the artifact");
    app.add_option("--snr-list", c.snr_list, "SNR levels for sweeps")->delimiter(',');
    app.add_option("--iterations", c.mc_iterations, "Monte-Carlo iterations per SNR");
    app.add_option("--n-reps", c.paradigm.n_reps, "Stimulus repetitions");
    app.add_option("--stim-duration", c.paradigm.stim_duration, "Stimulus duration (s)");
    app.add_option("--rest-min", c.paradigm.rest.min);
    app.add_option("--rest-max", c.paradigm.rest.max);
    app.add_option("--dwell-min", c.artifact.dwell.min);
    app.add_option("--dwell-max", c.artifact.dwell.max);
    app.add_option("--artifact-mean-std", c.artifact.mean_std);
    app.add_option("--artifact-noise-std", c.artifact.noise_std);
    app.add_option("--baseline-pl", c.baseline_peak_latency, "Fixed-HRF baseline peak latency (s)");
    app.add_option("--baseline-fwhm", c.baseline_fwhm, "Fixed-HRF baseline FWHM (s)");
    app.add_option("--peak-threshold-sd", c.peaks.threshold_sd);
    app.add_option("--peak-prominence", c.peaks.prominence_fraction);
    app.add_option("--peak-separation", c.peaks.min_separation);
}

void finalize(PipelineConfig& c, const Flags& flags) {
    c.truncation_rule = flags.truncation_rule == "energy" ? TruncationRule::Energy : TruncationRule::Count;
    c.validate();
}

std::vector<std::string> labels_or_default(const RoiTimeSeries& s) {
    std::vector<std::string> out = s.labels;
    out.resize(s.m_regions());
    for (int m = 0; m < s.m_regions(); ++m)
        if (out[m].empty())
            out[m] = "roi" + std::to_string(m + 1);
    return out;
}

RoiTimeSeries load_series(const PipelineConfig& c, const std::string& path) {
    RoiTimeSeries s = io::read_timeseries_csv(path);
    if (std::abs(s.fs - c.fs) > 1e-6 * c.fs)
        throw IngestionError(path + ": sampling rate " + io::format_double(s.fs) + " Hz does not match --fs " +
                             io::format_double(c.fs));
    return s;
}

void write_simulation(const PipelineConfig& c, double snr, const fs::path& dir) {
    io::ensure_directory(dir);
    const Simulation sim = simulate(c, snr, c.seed);
    const auto prov = provenance(c);
    io::write_file_atomic(dir / "timeseries.csv", io::timeseries_csv(sim.synthesis.series, prov));
    io::write_json(dir / "truth.json", io::to_json(sim.truth, prov));
    io::write_file_atomic(dir / "true_hrfs.csv",
                          io::filters_csv(sim.truth.sampled_hrfs(c.dt(), c.filter_length), sim.synthesis.series.labels,
                                          prov));
    std::cout << "wrote " << (dir / "timeseries.csv").string() << " (" << sim.synthesis.series.m_regions() << " x "
              << sim.synthesis.series.n_samples() << ")\n";
}

void cmd_simulate(const PipelineConfig& c, const Flags& flags) {
    if (!flags.snr_sweep) {
        write_simulation(c, c.snr_db, c.output_dir);
        return;
    }
    for (double snr : c.snr_list)
        write_simulation(c, snr, fs::path(c.output_dir) / ("snr_" + snr_tag(snr)));
}

void write_decomposition(const PipelineConfig& c, const DecompositionResult& result,
                         const std::vector<std::string>& labels) {
    const auto prov = provenance(c);
    const fs::path dir = c.output_dir;
    io::write_json(dir / "runs.json", io::to_json(result, prov));
    io::ensure_directory(dir / "runs");
    for (const auto& s : result.solutions) {
        char name[32];
        std::snprintf(name, sizeof name, "hrfs_run_%02d.csv", s.run_index);
        io::write_file_atomic(dir / "runs" / name, io::filters_csv(s.sampled_hrfs, labels, prov));
    }
}

void write_selection(const PipelineConfig& c, const ClusterReport& report, const std::vector<std::string>& labels) {
    const auto prov = provenance(c);
    const fs::path dir = c.output_dir;
    io::write_json(dir / "selection.json", io::to_json(report, prov));
    io::write_file_atomic(dir / "merges.csv", io::merges_csv(report.clustering.dendrogram, prov));
    io::write_file_atomic(dir / "mean_hrfs.csv", io::filters_csv(report.mean_hrfs, labels, prov));
}

void cmd_decompose(const PipelineConfig& c, const Paths& p) {
    io::ensure_directory(c.output_dir);
    const RoiTimeSeries series = load_series(c, p.input);
    if (!p.tensor_dir.empty()) {
        RoiTimeSeries normalized = series;
        normalize_rows(normalized);
        const auto tensor = autocorr_tensor(hankelize(normalized, c.stack_depth), c.n_lags);
        io::write_tensor(p.tensor_dir, tensor, c.dims(series.m_regions()), provenance(c));
    }
    const DecompositionResult result = decompose(series, c);
    write_decomposition(c, result, labels_or_default(series));
    std::cout << "wrote " << result.solutions.size() << " runs to " << (fs::path(c.output_dir) / "runs.json").string()
              << "\n";
}

void cmd_select(const PipelineConfig& c, const Paths& p) {
    io::ensure_directory(c.output_dir);
    const DecompositionResult result = io::decomposition_from_json(io::read_json(p.runs));
    const ClusterReport report = select_stable(result.solutions, StabilityConfig{c.cluster_cut});
    std::vector<std::string> labels;
    for (int m = 0; m < result.dims.m_regions; ++m)
        labels.push_back("roi" + std::to_string(m + 1));
    write_selection(c, report, labels);
    std::cout << "selected cluster " << report.selected << " with " << report.selected_runs.size() << " runs\n";
}

void write_recovery(const PipelineConfig& c, const SourceEstimate& source, const BinarySchedule& binarized) {
    const auto prov = provenance(c);
    const fs::path dir = c.output_dir;
    io::write_file_atomic(dir / "source.csv", io::source_csv(source, prov));
    io::write_file_atomic(dir / "schedule.csv", io::schedule_csv(binarized, prov));
}

void cmd_recover(const PipelineConfig& c, const Paths& p) {
    io::ensure_directory(c.output_dir);
    RoiTimeSeries series = load_series(c, p.input);
    normalize_rows(series);
    const auto hrfs = io::read_filters_csv(p.hrfs);
    const SourceEstimate source = estimate_sources(hrfs, series, c.stack_depth, c.truncation_fraction, c.truncation_rule);
    const BinarySchedule binarized =
        binarize_global(std::span<const double>(source.collapsed.data(), source.collapsed.size()), source.fs);
    write_recovery(c, source, binarized);
    std::cout << "recovered source of " << source.collapsed.size() << " samples, " << binarized.intervals.size()
              << " on-intervals\n";
}

BinarySchedule estimated_schedule(const PipelineConfig& c, const Eigen::VectorXd& source, double fs_source,
                                  const Flags& flags) {
    const std::span<const double> view(source.data(), source.size());
    return flags.peaks ? reconstruct_ep_from_peaks(view, fs_source, c.peaks) : binarize_global(view, fs_source);
}

// Truth from a simulator JSON, or a measured schedule CSV for real data.
struct Reference {
    std::optional<GroundTruth> truth;
    BinarySchedule schedule;
    double duration = 0.0;
};

Reference load_reference(const PipelineConfig& c, const Paths& p) {
    Reference ref;
    if (!p.truth.empty()) {
        ref.truth = io::ground_truth_from_json(io::read_json(p.truth));
        ref.schedule = BinarySchedule::from_schedule(ref.truth->schedule);
        ref.duration = ref.truth->schedule.duration;
    } else if (!p.schedule.empty()) {
        ref.schedule = io::read_schedule_csv(p.schedule);
        if (ref.schedule.intervals.empty())
            throw IngestionError(p.schedule + ": empty schedule");
        ref.duration = ref.schedule.intervals.front().length();
    } else {
        throw ConfigError("evaluation needs --truth or --schedule");
    }
    (void)c;
    return ref;
}

EvalReport evaluate_against(const PipelineConfig& c, const Reference& ref, const std::vector<SampledFilter>& hrfs,
                            const BinarySchedule& estimate) {
    EvalReport report;
    report.iou = iou_seconds(ref.schedule, estimate, ref.duration);
    if (ref.truth && !hrfs.empty()) {
        const auto true_hrfs = ref.truth->sampled_hrfs(c.dt(), c.filter_length);
        report.pl = pl_error(true_hrfs, hrfs);
        report.fwhm = fwhm_error(true_hrfs, hrfs);
    }
    return report;
}

void add_real_data_measures(EvalReport& report, const RoiTimeSeries& normalized, const Reference& ref,
                            const Flags& flags) {
    if (!ref.truth)
        report.fano_factors = fano_factor(normalized, ref.schedule, flags.window);
}

double baseline_iou(const PipelineConfig& c, const RoiTimeSeries& normalized, const Reference& ref,
                    const Flags& flags) {
    const SourceEstimate base = baseline_sources(normalized, c);
    return iou_seconds(ref.schedule, estimated_schedule(c, base.collapsed, base.fs, flags), ref.duration).mean;
}

void write_eval(const PipelineConfig& c, const EvalReport& report) {
    const auto prov = provenance(c);
    io::write_json(fs::path(c.output_dir) / "eval.json", io::to_json(report, prov));
    io::write_file_atomic(fs::path(c.output_dir) / "eval_row.csv", io::eval_row_csv(report, prov));
    std::cout << "IoU " << report.iou.mean << " s";
    if (!report.pl.per_region.empty())
        std::cout << ", PL error " << report.pl.mean << " s";
    if (report.baseline_iou_mean >= 0.0)
        std::cout << ", baseline IoU " << report.baseline_iou_mean << " s";
    std::cout << "\n";
}

void cmd_evaluate(const PipelineConfig& c, const Paths& p, const Flags& flags) {
    io::ensure_directory(c.output_dir);
    const Reference ref = load_reference(c, p);
    const auto [source, fs_source] = io::read_source_csv(p.source);
    std::vector<SampledFilter> hrfs;
    if (!p.hrfs.empty())
        hrfs = io::read_filters_csv(p.hrfs);
    EvalReport report = evaluate_against(c, ref, hrfs, estimated_schedule(c, source, fs_source, flags));
    if (!p.input.empty()) {
        RoiTimeSeries normalized = load_series(c, p.input);
        normalize_rows(normalized);
        add_real_data_measures(report, normalized, ref, flags);
        if (flags.baseline)
            report.baseline_iou_mean = baseline_iou(c, normalized, ref, flags);
    }
    write_eval(c, report);
}

void cmd_pipeline(const PipelineConfig& c, const Paths& p, const Flags& flags) {
    io::ensure_directory(c.output_dir);
    const RoiTimeSeries series = load_series(c, p.input);
    const auto labels = labels_or_default(series);
    const PipelineResult result = run_pipeline(series, c);
    write_decomposition(c, result.decomposition, labels);
    write_selection(c, result.selection, labels);
    const BinarySchedule estimate = estimated_schedule(c, result.source.collapsed, result.source.fs, flags);
    write_recovery(c, result.source, estimate);
    for (std::size_t m = 0; m < result.selection.mean_hrfs.size(); ++m)
        std::cout << labels[m] << ": PL " << sampled_peak_latency(result.selection.mean_hrfs[m]) << " s, FWHM "
                  << fwhm(result.selection.mean_hrfs[m]) << " s\n";
    if (p.truth.empty() && p.schedule.empty())
        return;
    const Reference ref = load_reference(c, p);
    EvalReport report = evaluate_against(c, ref, result.selection.mean_hrfs, estimate);
    add_real_data_measures(report, result.normalized, ref, flags);
    if (flags.baseline)
        report.baseline_iou_mean = baseline_iou(c, result.normalized, ref, flags);
    write_eval(c, report);
}

void cmd_montecarlo(const PipelineConfig& c) {
    io::ensure_directory(c.output_dir);
    const auto rows = run_monte_carlo(c);
    const auto summary = summarize(rows, c.snr_list);
    const auto prov = provenance(c);
    io::write_file_atomic(fs::path(c.output_dir) / "montecarlo.csv", io::montecarlo_csv(rows, prov));
    io::write_json(fs::path(c.output_dir) / "summary.json", io::to_json(summary, prov));
    std::printf("%8s %5s %6s %14s %12s %14s\n", "snr_db", "ok", "failed", "pl_err_median", "iou_median",
                "baseline_iou");
    for (const auto& s : summary)
        std::printf("%8g %5d %6d %14.3f %12.3f %14.3f\n", s.snr_db, s.n_ok, s.n_failed, s.pl_error_median,
                    s.iou_median, s.baseline_iou_median);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Blind HRF deconvolution of fUS region time series by block-term decomposition"};
    app.set_config("--config", "", "Flat TOML file; keys are long option names");
    app.require_subcommand(1);

    PipelineConfig config;
    Paths paths;
    Flags flags;
    add_common_options(app, config, flags);

    auto* simulate_cmd = app.add_subcommand("simulate", "Synthesize a dataset with known HRFs");
    simulate_cmd->add_flag("--snr-sweep", flags.snr_sweep, "One dataset per entry of --snr-list");

    auto* decompose_cmd = app.add_subcommand("decompose", "Multi-start BTD of a time-series CSV");
    decompose_cmd->add_option("-i,--input", paths.input, "Time-series CSV")->required()->check(CLI::ExistingFile);
    decompose_cmd->add_option("--export-tensor", paths.tensor_dir, "Also dump the lag tensor to this directory");

    auto* select_cmd = app.add_subcommand("select", "Stable-solution selection over decomposition runs");
    select_cmd->add_option("--runs", paths.runs, "runs.json from decompose")->required()->check(CLI::ExistingFile);

    auto* recover_cmd = app.add_subcommand("recover", "Estimate the task source from HRFs and observations");
    recover_cmd->add_option("-i,--input", paths.input, "Time-series CSV")->required()->check(CLI::ExistingFile);
    recover_cmd->add_option("--hrfs", paths.hrfs, "HRF CSV (t plus one column per region)")
        ->required()
        ->check(CLI::ExistingFile);

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score an estimated source against a reference");
    evaluate_cmd->add_option("--source", paths.source, "source.csv from recover")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--hrfs", paths.hrfs, "Estimated HRF CSV")->check(CLI::ExistingFile);
    evaluate_cmd->add_option("-i,--input", paths.input, "Time-series CSV, enables baseline and Fano factors")
        ->check(CLI::ExistingFile);

    auto* pipeline_cmd = app.add_subcommand("pipeline", "Decompose, select, recover and evaluate in one go");
    pipeline_cmd->add_option("-i,--input", paths.input, "Time-series CSV")->required()->check(CLI::ExistingFile);

    for (auto* cmd : {evaluate_cmd, pipeline_cmd}) {
        cmd->add_option("--truth", paths.truth, "Ground-truth JSON from simulate")->check(CLI::ExistingFile);
        cmd->add_option("--schedule", paths.schedule, "Stimulus schedule CSV (start,end)")->check(CLI::ExistingFile);
        cmd->add_flag("--peaks", flags.peaks, "Local-peak EP reconstruction instead of a global threshold");
        cmd->add_flag("--baseline", flags.baseline, "Also score the fixed-HRF baseline");
        cmd->add_option("--window", flags.window, "Post-onset window for Fano factors (s)");
    }

    auto* montecarlo_cmd = app.add_subcommand("montecarlo", "Simulation study over SNR levels");

    for (auto* cmd : app.get_subcommands({}))
        cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        finalize(config, flags);
        if (*simulate_cmd)
            cmd_simulate(config, flags);
        else if (*decompose_cmd)
            cmd_decompose(config, paths);
        else if (*select_cmd)
            cmd_select(config, paths);
        else if (*recover_cmd)
            cmd_recover(config, paths);
        else if (*evaluate_cmd)
            cmd_evaluate(config, paths, flags);
        else if (*pipeline_cmd)
            cmd_pipeline(config, paths, flags);
        else if (*montecarlo_cmd)
            cmd_montecarlo(config);
    } catch (const fusbtd::Error& e) {
        std::cerr << "error [" << e.stage() << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
