#include "fusbtd/simulator.hpp"

#include "fusbtd/error.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <string>

namespace fusbtd {

int EpSchedule::samples_per_block() const {
    return static_cast<int>(std::lround(duration * fs));
}

Eigen::VectorXd EpSchedule::binary() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(total_length);
    const int block = samples_per_block();
    for (double onset : onsets) {
        const long start = std::lround(onset * fs);
        for (long k = start; k < start + block && k < total_length; ++k)
            out[k] = 1.0;
    }
    return out;
}

void Experiment::validate() const {
    if (hrf_params.size() < 2)
        throw DimensionError("an experiment needs at least two regions");
    for (const auto& p : hrf_params)
        p.validate();
    if (schedule.total_length < 1 || schedule.onsets.empty())
        throw DimensionError("empty stimulus schedule");
    for (std::size_t i = 1; i < schedule.onsets.size(); ++i)
        if (!(schedule.onsets[i] > schedule.onsets[i - 1]))
            throw DimensionError("stimulus onsets must be strictly increasing");
    if (std::isfinite(snr_db) && artifact.samples.size() != schedule.total_length)
        throw DimensionError("artifact length does not match the schedule");
    if (filter_length < 2)
        throw DimensionError("filter length must be >= 2");
}

EpSchedule generate_ep(int n_reps, double stim_duration, Range rest, double fs, Rng& rng) {
    if (n_reps < 1)
        throw ParameterError("n_reps must be >= 1");
    if (rest.min > rest.max)
        throw ParameterError("rest range min exceeds max");
    if (!(fs > 0.0))
        throw ParameterError("sampling rate must be positive");

    std::uniform_real_distribution<double> rest_dist(rest.min, rest.max);
    EpSchedule ep;
    ep.duration = stim_duration;
    ep.fs = fs;
    const long block = ep.samples_per_block();
    long cursor = std::lround(rest_dist(rng) * fs);
    for (int r = 0; r < n_reps; ++r) {
        ep.onsets.push_back(static_cast<double>(cursor) / fs);
        cursor += block + std::lround(rest_dist(rng) * fs);
    }
    ep.total_length = static_cast<int>(cursor);
    return ep;
}

ArtifactProcess generate_artifact(int length, double fs, Range dwell, double mean_std,
                                  double noise_std, Rng& rng) {
    if (length < 1)
        throw ParameterError("artifact length must be >= 1");
    if (noise_std < 0.0 || mean_std < 0.0)
        throw ParameterError("standard deviations must be non-negative");

    ArtifactProcess art;
    art.noise_std = noise_std;
    art.samples.resize(length);

    std::uniform_real_distribution<double> dwell_dist(dwell.min, dwell.max);
    std::normal_distribution<double> unit(0.0, 1.0);

    long k = 0;
    while (k < length) {
        const double level = mean_std * unit(rng);
        art.change_times.push_back(static_cast<double>(k) / fs);
        art.mean_levels.push_back(level);
        const long span = std::max(1L, std::lround(dwell_dist(rng) * fs));
        for (long end = std::min<long>(length, k + span); k < end; ++k)
            art.samples[k] = level;
    }
    for (int i = 0; i < length; ++i)
        art.samples[i] += noise_std * unit(rng);
    return art;
}

namespace {

Eigen::VectorXd causal_convolve(const Eigen::VectorXd& h, const Eigen::VectorXd& s) {
    const Eigen::Index n = s.size();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
    for (Eigen::Index t = 0; t < n; ++t) {
        const Eigen::Index lmax = std::min<Eigen::Index>(h.size() - 1, t);
        double acc = 0.0;
        for (Eigen::Index l = 0; l <= lmax; ++l)
            acc += h[l] * s[t - l];
        out[t] = acc;
    }
    return out;
}

double population_variance(const Eigen::VectorXd& x) {
    const double mean = x.mean();
    return (x.array() - mean).square().mean();
}

}  // namespace

Synthesis synthesize(const Experiment& experiment) {
    experiment.validate();
    const auto& ep = experiment.schedule;
    const double dt = 1.0 / ep.fs;
    const Eigen::VectorXd source = ep.binary();
    const int m_regions = static_cast<int>(experiment.hrf_params.size());
    const int n = ep.total_length;
    const bool with_artifact = std::isfinite(experiment.snr_db);

    Synthesis out;
    out.task_terms.resize(m_regions, n);
    out.artifact_terms = Eigen::MatrixXd::Zero(m_regions, n);
    out.gains = Eigen::VectorXd::Zero(m_regions);

    const double artifact_var = with_artifact ? population_variance(experiment.artifact.samples) : 0.0;
    if (with_artifact && !(artifact_var > 0.0))
        throw DegenerateScenarioError("artifact source has zero variance");

    for (int m = 0; m < m_regions; ++m) {
        out.hrfs.push_back(gamma_hrf(experiment.hrf_params[m], dt, experiment.filter_length));
        out.task_terms.row(m) = causal_convolve(out.hrfs.back().taps, source).transpose();
        const double task_var = population_variance(out.task_terms.row(m).transpose());
        if (!(task_var > 0.0))
            throw DegenerateScenarioError("task term of region " + std::to_string(m) + " has zero variance");
        if (with_artifact) {
            const double ratio = std::pow(10.0, experiment.snr_db / 10.0);
            out.gains[m] = std::sqrt(task_var / (artifact_var * ratio));
            out.artifact_terms.row(m) = out.gains[m] * experiment.artifact.samples.transpose();
        }
    }

    out.series.fs = ep.fs;
    out.series.data = out.task_terms + out.artifact_terms;
    for (int m = 0; m < m_regions; ++m)
        out.series.labels.push_back("roi" + std::to_string(m + 1));
    normalize_rows(out.series);
    return out;
}

void normalize_rows(RoiTimeSeries& series) {
    for (Eigen::Index m = 0; m < series.data.rows(); ++m) {
        auto row = series.data.row(m);
        row.array() -= row.mean();
        const double sd = std::sqrt(row.squaredNorm() / static_cast<double>(row.size()));
        if (sd > 0.0)
            row /= sd;
    }
}

namespace {

// FWHM / PL as a function of log(shape - 1); depends on shape only.
double width_ratio(double log_excess) {
    const double excess = std::exp(log_excess);
    return continuous_fwhm(1.0 + excess, 1.0) / excess;
}

constexpr double kMinLogExcess = -13.815510557964274;  // log(1e-6)
constexpr double kMaxLogExcess = 9.210340371976184;    // log(1e4)

}  // namespace

HrfParams invert_pl_fwhm(double peak_latency_s, double fwhm_s) {
    if (!(peak_latency_s > 0.0) || !(fwhm_s > 0.0))
        throw SamplingError("peak latency and FWHM must be positive");
    const double target = fwhm_s / peak_latency_s;
    const auto f = [target](double z) { return width_ratio(z) - target; };
    const double lo = f(kMinLogExcess);
    const double hi = f(kMaxLogExcess);
    if (!(lo >= 0.0 && hi <= 0.0))
        throw SamplingError("no gamma kernel with PL " + std::to_string(peak_latency_s) + " s and FWHM " +
                            std::to_string(fwhm_s) + " s within shape bounds");
    std::uintmax_t iters = 200;
    auto [a, b] = boost::math::tools::toms748_solve(f, kMinLogExcess, kMaxLogExcess, lo, hi,
                                                    boost::math::tools::eps_tolerance<double>(50), iters);
    const double excess = std::exp(0.5 * (a + b));
    return HrfParams{1.0, 1.0 + excess, excess / peak_latency_s};
}

HrfParams sample_random_hrf_params(Rng& rng, const HrfSamplingRanges& ranges) {
    std::uniform_real_distribution<double> pl_dist(ranges.peak_latency.min, ranges.peak_latency.max);
    std::uniform_real_distribution<double> width_dist(ranges.fwhm.min, ranges.fwhm.max);
    constexpr int kMaxAttempts = 100;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const double pl = pl_dist(rng);
        const double width = width_dist(rng);
        try {
            return invert_pl_fwhm(pl, width);
        } catch (const SamplingError&) {
            continue;
        }
    }
    throw SamplingError("HRF parameter inversion failed after repeated draws");
}

Experiment make_experiment(int m_regions, double fs, int filter_length, double snr_db,
                           const ParadigmSettings& paradigm, const ArtifactSettings& artifact,
                           std::uint64_t seed) {
    Rng rng(seed);
    Experiment ex;
    ex.seed = seed;
    ex.snr_db = snr_db;
    ex.filter_length = filter_length;
    for (int m = 0; m < m_regions; ++m)
        ex.hrf_params.push_back(sample_random_hrf_params(rng));
    ex.schedule = generate_ep(paradigm.n_reps, paradigm.stim_duration, paradigm.rest, fs, rng);
    ex.artifact = generate_artifact(ex.schedule.total_length, fs, artifact.dwell, artifact.mean_std,
                                    artifact.noise_std, rng);
    return ex;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined state
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace fusbtd
