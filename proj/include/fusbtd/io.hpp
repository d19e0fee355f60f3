#pragma once

#include "fusbtd/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace fusbtd::io {

using nlohmann::json;

// Stamped into every output file.
struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
};

// Writes to a sibling temporary and renames it into place, so a failure never
// leaves a truncated file behind.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);
void ensure_directory(const std::filesystem::path& dir);

// Shortest decimal that round-trips.
std::string format_double(double value);

// Time series CSV: '#' comment lines, a header row, then one row per sample.
// A leading "time" (or "t") column sets fs; without it fs must be supplied.
RoiTimeSeries parse_timeseries_csv(std::istream& in, const std::string& source,
                                   std::optional<double> fs = std::nullopt);
RoiTimeSeries read_timeseries_csv(const std::filesystem::path& path, std::optional<double> fs = std::nullopt);
std::string timeseries_csv(const RoiTimeSeries& series, const Provenance& prov);

// Sampled filters, one "t" column and one column per filter.
std::string filters_csv(const std::vector<SampledFilter>& filters, const std::vector<std::string>& labels,
                        const Provenance& prov);
std::vector<SampledFilter> read_filters_csv(const std::filesystem::path& path);

std::string source_csv(const SourceEstimate& source, const Provenance& prov);
// Returns the single data column of a source CSV and its sampling rate.
std::pair<Eigen::VectorXd, double> read_source_csv(const std::filesystem::path& path);

std::string schedule_csv(const BinarySchedule& schedule, const Provenance& prov);
// "start,end" rows in seconds.
BinarySchedule read_schedule_csv(const std::filesystem::path& path);

json to_json(const HrfParams& p);
HrfParams hrf_params_from_json(const json& j);

json to_json(const GroundTruth& truth, const Provenance& prov);
GroundTruth ground_truth_from_json(const json& j);

json to_json(const BtdSolution& solution);
BtdSolution solution_from_json(const json& j, const BtdDims& dims);
json to_json(const DecompositionResult& result, const Provenance& prov);
DecompositionResult decomposition_from_json(const json& j);

json to_json(const ClusterReport& report, const Provenance& prov);
std::string merges_csv(const Dendrogram& dendrogram, const Provenance& prov);

json to_json(const EvalReport& report, const Provenance& prov);
std::string eval_row_csv(const EvalReport& report, const Provenance& prov);

std::string montecarlo_csv(const std::vector<MonteCarloRow>& rows, const Provenance& prov);
json to_json(const std::vector<MonteCarloSummary>& summary, const Provenance& prov);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

// One CSV per slice plus manifest.json with the dimensions and lags.
void write_tensor(const std::filesystem::path& dir, const LagCorrTensor& tensor, const BtdDims& dims,
                  const Provenance& prov);

}  // namespace fusbtd::io
