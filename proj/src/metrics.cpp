#include "fusbtd/metrics.hpp"

#include "fusbtd/error.hpp"
#include "fusbtd/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fusbtd {

void BinarySchedule::validate() const {
    for (std::size_t i = 0; i < intervals.size(); ++i) {
        if (!(intervals[i].end > intervals[i].start))
            throw ParameterError("interval end must exceed its start");
        if (i > 0 && intervals[i].start < intervals[i - 1].end)
            throw ParameterError("intervals must be disjoint and ordered");
    }
}

BinarySchedule BinarySchedule::from_schedule(const EpSchedule& ep) {
    BinarySchedule out;
    const double span = static_cast<double>(ep.samples_per_block()) / ep.fs;
    for (double onset : ep.onsets)
        out.intervals.push_back({onset, onset + span});
    return out;
}

BinarySchedule BinarySchedule::from_mask(const std::vector<bool>& mask, double fs) {
    BinarySchedule out;
    std::size_t k = 0;
    while (k < mask.size()) {
        if (!mask[k]) {
            ++k;
            continue;
        }
        const std::size_t first = k;
        while (k < mask.size() && mask[k])
            ++k;
        out.intervals.push_back({static_cast<double>(first) / fs, static_cast<double>(k) / fs});
    }
    return out;
}

BinarySchedule binarize_global(std::span<const double> signal, double fs) {
    if (signal.size() < 2)
        throw ThresholdError("signal too short to binarize");
    const auto threshold = otsu_threshold(signal);
    if (!threshold)
        throw ThresholdError("constant signal has no threshold");
    std::vector<bool> mask(signal.size());
    for (std::size_t k = 0; k < signal.size(); ++k)
        mask[k] = signal[k] > *threshold;
    return BinarySchedule::from_mask(mask, fs);
}

IouResult iou_seconds(const BinarySchedule& truth, const BinarySchedule& estimate, double duration) {
    if (truth.intervals.empty())
        throw ParameterError("true schedule is empty");
    IouResult out;
    std::vector<bool> matched(estimate.intervals.size(), false);
    for (const auto& t : truth.intervals) {
        double best_overlap = 0.0;
        double best_iou = 0.0;
        for (std::size_t e = 0; e < estimate.intervals.size(); ++e) {
            const auto& est = estimate.intervals[e];
            const double overlap = std::min(t.end, est.end) - std::max(t.start, est.start);
            if (overlap <= 0.0)
                continue;
            matched[e] = true;
            if (overlap > best_overlap) {
                best_overlap = overlap;
                best_iou = overlap / (std::max(t.end, est.end) - std::min(t.start, est.start));
            }
        }
        out.per_repetition.push_back(best_iou * duration);
    }
    out.mean = std::accumulate(out.per_repetition.begin(), out.per_repetition.end(), 0.0) /
               static_cast<double>(out.per_repetition.size());
    out.false_positives = static_cast<int>(std::count(matched.begin(), matched.end(), false));
    return out;
}

namespace {

template <typename Measure>
PlError paired_error(const std::vector<SampledFilter>& truth, const std::vector<SampledFilter>& estimate,
                     Measure measure) {
    if (truth.size() != estimate.size() || truth.empty())
        throw DimensionError("region counts differ: " + std::to_string(truth.size()) + " vs " +
                             std::to_string(estimate.size()));
    PlError out;
    for (std::size_t m = 0; m < truth.size(); ++m)
        out.per_region.push_back(std::abs(measure(truth[m]) - measure(estimate[m])));
    out.mean = std::accumulate(out.per_region.begin(), out.per_region.end(), 0.0) /
               static_cast<double>(out.per_region.size());
    return out;
}

}  // namespace

PlError pl_error(const std::vector<SampledFilter>& truth, const std::vector<SampledFilter>& estimate) {
    return paired_error(truth, estimate, [](const SampledFilter& f) { return sampled_peak_latency(f); });
}

PlError fwhm_error(const std::vector<SampledFilter>& truth, const std::vector<SampledFilter>& estimate) {
    return paired_error(truth, estimate, [](const SampledFilter& f) { return fwhm(f); });
}

BinarySchedule reconstruct_ep_from_peaks(std::span<const double> source, double fs, const PeakDetection& options) {
    const long n = static_cast<long>(source.size());
    const long separation = std::lround(options.min_separation * fs);
    if (n <= separation)
        throw DimensionError("signal shorter than the minimum peak separation");

    const double mean = std::accumulate(source.begin(), source.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : source)
        var += (v - mean) * (v - mean);
    const double threshold = mean + options.threshold_sd * std::sqrt(var / static_cast<double>(n));

    std::vector<long> candidates;
    for (long k = 1; k + 1 < n; ++k)
        if (source[k] > source[k - 1] && source[k] >= source[k + 1] && source[k] > threshold)
            candidates.push_back(k);

    // Tallest first, suppressing neighbours closer than the separation.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](long a, long b) { return source[a] > source[b]; });
    std::vector<long> peaks;
    for (long c : candidates) {
        const bool clear = std::none_of(peaks.begin(), peaks.end(),
                                        [&](long p) { return std::abs(p - c) < separation; });
        if (clear)
            peaks.push_back(c);
    }
    std::sort(peaks.begin(), peaks.end());

    BinarySchedule out;
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        const long p = peaks[i];
        const long lo = i == 0 ? 0 : peaks[i - 1];
        const long hi = i + 1 == peaks.size() ? n - 1 : peaks[i + 1];
        const double left_base = *std::min_element(source.begin() + lo, source.begin() + p + 1);
        const double right_base = *std::min_element(source.begin() + p, source.begin() + hi + 1);
        const double prominence = source[p] - std::max(left_base, right_base);
        const double level = source[p] - options.prominence_fraction * prominence;

        long first = p;
        while (first - 1 >= lo && source[first - 1] > level)
            --first;
        long last = p;
        while (last + 1 <= hi && source[last + 1] > level)
            ++last;
        Interval iv{static_cast<double>(first) / fs, static_cast<double>(last + 1) / fs};
        if (!out.intervals.empty() && iv.start < out.intervals.back().end)
            out.intervals.back().end = std::max(out.intervals.back().end, iv.end);
        else
            out.intervals.push_back(iv);
    }
    return out;
}

double fano_factor_of_peaks(std::span<const double> peaks) {
    if (peaks.size() < 2)
        throw UndefinedFanoError("need at least two peaks");
    const double n = static_cast<double>(peaks.size());
    const double mean = std::accumulate(peaks.begin(), peaks.end(), 0.0) / n;
    if (!(mean > 0.0))
        throw UndefinedFanoError("mean peak amplitude must be positive");
    double ss = 0.0;
    for (double p : peaks)
        ss += (p - mean) * (p - mean);
    return ss / (n - 1.0) / mean;
}

namespace {

std::vector<long> window_starts(const RoiTimeSeries& series, const BinarySchedule& ep, long width) {
    std::vector<long> starts;
    for (const auto& iv : ep.intervals) {
        const long s = std::lround(iv.start * series.fs);
        if (s < 0 || s + width >= series.n_samples())
            throw DimensionError("stimulus window at " + std::to_string(iv.start) +
                                 " s does not fit inside the recording");
        starts.push_back(s);
    }
    if (starts.empty())
        throw DimensionError("no stimuli in schedule");
    return starts;
}

}  // namespace

std::vector<double> fano_factor(const RoiTimeSeries& series, const BinarySchedule& ep, double window) {
    const long width = std::lround(window * series.fs);
    const auto starts = window_starts(series, ep, width);
    std::vector<double> out;
    for (int m = 0; m < series.m_regions(); ++m) {
        std::vector<double> peaks;
        for (long s : starts)
            peaks.push_back(series.data.row(m).segment(s, width + 1).maxCoeff());
        out.push_back(fano_factor_of_peaks(peaks));
    }
    return out;
}

Eigen::MatrixXd averaged_response(const RoiTimeSeries& series, const BinarySchedule& ep, double window) {
    const long width = std::lround(window * series.fs);
    const auto starts = window_starts(series, ep, width);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(series.m_regions(), width + 1);
    for (long s : starts)
        out += series.data.middleCols(s, width + 1);
    return out / static_cast<double>(starts.size());
}

}  // namespace fusbtd
