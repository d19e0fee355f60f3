#include "fusbtd/io.hpp"

#include "fusbtd/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace fusbtd::io {

namespace fs = std::filesystem;

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw OutputError("cannot create output directory " + dir.string());
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw OutputError("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw OutputError("write failed for " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw OutputError("cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IngestionError("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string format_double(double value) {
    if (std::isnan(value))
        return "nan";
    if (std::isinf(value))
        return value > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

std::string provenance_header(const Provenance& prov) {
    return "# config_hash=" + prov.config_hash + "\n# seed=" + std::to_string(prov.seed) + "\n";
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        std::string cell = trim(std::string_view(line).substr(start, comma - start));
        if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"')
            cell = cell.substr(1, cell.size() - 2);
        out.push_back(cell);
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;  // row-major
};

CsvTable parse_csv(std::istream& in, const std::string& source) {
    CsvTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#')
            continue;
        const auto cells = split(body);
        if (table.header.empty()) {
            table.header = cells;
            continue;
        }
        if (cells.size() != table.header.size())
            throw IngestionError(source + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& cell : cells) {
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v))
                throw IngestionError(source + ":" + std::to_string(line_no) + ": not a finite number: '" + cell +
                                     "'");
            row.push_back(v);
        }
        table.rows.push_back(std::move(row));
    }
    if (table.header.empty())
        throw IngestionError(source + ": missing header row");
    if (table.rows.empty())
        throw IngestionError(source + ": no data rows");
    return table;
}

bool is_time_column(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    return name == "time" || name == "t" || name == "time_s" || name == "t_s";
}

// Sampling rate from a time column; the grid must be uniform to 1%.
double sampling_rate(const CsvTable& table, const std::string& source) {
    const std::size_t n = table.rows.size();
    if (n < 2)
        throw IngestionError(source + ": need two samples to infer the sampling rate");
    const double step = (table.rows.back()[0] - table.rows.front()[0]) / static_cast<double>(n - 1);
    if (!(step > 0.0))
        throw IngestionError(source + ": time column must increase");
    for (std::size_t k = 1; k < n; ++k) {
        const double d = table.rows[k][0] - table.rows[k - 1][0];
        if (std::abs(d - step) > 0.01 * step)
            throw IngestionError(source + ": non-uniform time step at data row " + std::to_string(k + 1));
    }
    return 1.0 / step;
}

json provenance_json(const Provenance& prov) {
    return {{"config_hash", prov.config_hash}, {"seed", prov.seed}};
}

json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

RoiTimeSeries parse_timeseries_csv(std::istream& in, const std::string& source, std::optional<double> fs) {
    const CsvTable table = parse_csv(in, source);
    const bool has_time = is_time_column(table.header.front());
    const int first = has_time ? 1 : 0;
    const int m = static_cast<int>(table.header.size()) - first;
    if (m < 1)
        throw IngestionError(source + ": no region columns");

    RoiTimeSeries out;
    if (has_time)
        out.fs = sampling_rate(table, source);
    else if (fs)
        out.fs = *fs;
    else
        throw IngestionError(source + ": no time column and no sampling rate given");
    if (fs && has_time && std::abs(*fs - out.fs) > 1e-6 * *fs)
        throw IngestionError(source + ": time column implies fs=" + format_double(out.fs) + ", expected " +
                             format_double(*fs));

    out.labels.assign(table.header.begin() + first, table.header.end());
    out.data.resize(m, static_cast<Eigen::Index>(table.rows.size()));
    for (std::size_t n = 0; n < table.rows.size(); ++n)
        for (int r = 0; r < m; ++r)
            out.data(r, static_cast<Eigen::Index>(n)) = table.rows[n][first + r];
    return out;
}

RoiTimeSeries read_timeseries_csv(const fs::path& path, std::optional<double> fs) {
    std::ifstream in(path);
    if (!in)
        throw IngestionError("cannot open " + path.string());
    return parse_timeseries_csv(in, path.string(), fs);
}

std::string timeseries_csv(const RoiTimeSeries& series, const Provenance& prov) {
    std::string out = provenance_header(prov) + "time";
    for (int m = 0; m < series.m_regions(); ++m)
        out += "," + (m < static_cast<int>(series.labels.size()) ? series.labels[m] : "roi" + std::to_string(m + 1));
    out += '\n';
    for (int n = 0; n < series.n_samples(); ++n) {
        out += format_double(n / series.fs);
        for (int m = 0; m < series.m_regions(); ++m)
            out += "," + format_double(series.data(m, n));
        out += '\n';
    }
    return out;
}

std::string filters_csv(const std::vector<SampledFilter>& filters, const std::vector<std::string>& labels,
                        const Provenance& prov) {
    if (filters.empty())
        throw DimensionError("no filters to write");
    const int length = filters.front().length();
    for (const auto& f : filters)
        if (f.length() != length || f.dt != filters.front().dt)
            throw DimensionError("filters must share length and sampling step");
    std::string out = provenance_header(prov) + "t";
    for (std::size_t m = 0; m < filters.size(); ++m)
        out += "," + (m < labels.size() ? labels[m] : "h" + std::to_string(m + 1));
    out += '\n';
    for (int k = 0; k < length; ++k) {
        out += format_double(filters.front().time(k));
        for (const auto& f : filters)
            out += "," + format_double(f.taps[k]);
        out += '\n';
    }
    return out;
}

std::vector<SampledFilter> read_filters_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IngestionError("cannot open " + path.string());
    const CsvTable table = parse_csv(in, path.string());
    if (!is_time_column(table.header.front()) || table.header.size() < 2)
        throw IngestionError(path.string() + ": expected a 't' column followed by filter columns");
    const double dt = 1.0 / sampling_rate(table, path.string());
    std::vector<SampledFilter> out;
    for (std::size_t c = 1; c < table.header.size(); ++c) {
        Eigen::VectorXd taps(static_cast<Eigen::Index>(table.rows.size()));
        for (std::size_t k = 0; k < table.rows.size(); ++k)
            taps[static_cast<Eigen::Index>(k)] = table.rows[k][c];
        out.emplace_back(std::move(taps), dt);
    }
    return out;
}

std::string source_csv(const SourceEstimate& source, const Provenance& prov) {
    std::string out = provenance_header(prov) + "time,source\n";
    for (Eigen::Index n = 0; n < source.collapsed.size(); ++n)
        out += format_double(static_cast<double>(n) / source.fs) + "," + format_double(source.collapsed[n]) + "\n";
    return out;
}

std::pair<Eigen::VectorXd, double> read_source_csv(const fs::path& path) {
    const RoiTimeSeries s = read_timeseries_csv(path);
    if (s.m_regions() != 1)
        throw IngestionError(path.string() + ": expected exactly one source column");
    return {s.data.row(0).transpose(), s.fs};
}

std::string schedule_csv(const BinarySchedule& schedule, const Provenance& prov) {
    std::string out = provenance_header(prov) + "start,end\n";
    for (const auto& iv : schedule.intervals)
        out += format_double(iv.start) + "," + format_double(iv.end) + "\n";
    return out;
}

BinarySchedule read_schedule_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IngestionError("cannot open " + path.string());
    const CsvTable table = parse_csv(in, path.string());
    if (table.header.size() != 2)
        throw IngestionError(path.string() + ": expected start,end columns");
    BinarySchedule out;
    for (const auto& row : table.rows)
        out.intervals.push_back({row[0], row[1]});
    try {
        out.validate();
    } catch (const Error& e) {
        throw IngestionError(path.string() + ": " + e.what());
    }
    return out;
}

json to_json(const HrfParams& p) {
    return {{"theta1", p.amplitude}, {"theta2", p.shape}, {"theta3", p.rate}};
}

HrfParams hrf_params_from_json(const json& j) {
    try {
        HrfParams p{j.at("theta1").get<double>(), j.at("theta2").get<double>(), j.at("theta3").get<double>()};
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad HRF record: ") + e.what());
    }
}

json to_json(const GroundTruth& truth, const Provenance& prov) {
    json hrfs = json::array();
    for (const auto& p : truth.hrfs) {
        json r = to_json(p);
        r["peak_latency"] = peak_latency(p);
        r["fwhm"] = continuous_fwhm(p.shape, p.rate);
        hrfs.push_back(r);
    }
    return {{"provenance", provenance_json(prov)},
            {"hrfs", hrfs},
            {"onsets", truth.schedule.onsets},
            {"stimulus_duration", truth.schedule.duration},
            {"fs", truth.schedule.fs},
            {"n_samples", truth.schedule.total_length},
            {"gains", vector_json(truth.gains)},
            {"snr_db", std::isfinite(truth.snr_db) ? json(truth.snr_db) : json("inf")},
            {"seed", truth.seed}};
}

GroundTruth ground_truth_from_json(const json& j) {
    try {
        GroundTruth t;
        for (const auto& r : j.at("hrfs"))
            t.hrfs.push_back(hrf_params_from_json(r));
        t.schedule.onsets = j.at("onsets").get<std::vector<double>>();
        t.schedule.duration = j.at("stimulus_duration").get<double>();
        t.schedule.fs = j.at("fs").get<double>();
        t.schedule.total_length = j.at("n_samples").get<int>();
        t.gains = vector_from_json(j.at("gains"));
        const json& snr = j.at("snr_db");
        t.snr_db = snr.is_string() ? kArtifactDisabled : snr.get<double>();
        t.seed = j.at("seed").get<std::uint64_t>();
        return t;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad ground-truth record: ") + e.what());
    }
}

json to_json(const BtdSolution& s) {
    json hrfs = json::array();
    for (const auto& p : s.variables.hrfs) {
        json r = to_json(p);
        r["peak_latency"] = peak_latency(p);
        hrfs.push_back(r);
    }
    return {{"run_index", s.run_index},
            {"seed", s.seed},
            {"cost", s.final_cost},
            {"iterations", s.iterations},
            {"converged", s.converged},
            {"termination", s.termination},
            {"hrfs", hrfs},
            {"gains", vector_json(s.variables.gains)},
            {"task_corr", vector_json(s.variables.task_corr.values)},
            {"artifact_corr", vector_json(s.variables.artifact_corr.values)}};
}

BtdSolution solution_from_json(const json& j, const BtdDims& dims) {
    try {
        BtdSolution s;
        s.run_index = j.at("run_index").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.final_cost = j.at("cost").get<double>();
        s.iterations = j.at("iterations").get<int>();
        s.converged = j.at("converged").get<bool>();
        s.termination = j.value("termination", "");
        for (const auto& r : j.at("hrfs"))
            s.variables.hrfs.push_back(hrf_params_from_json(r));
        s.variables.gains = vector_from_json(j.at("gains"));
        s.variables.task_corr.values = vector_from_json(j.at("task_corr"));
        s.variables.artifact_corr.values = vector_from_json(j.at("artifact_corr"));
        if (static_cast<int>(s.variables.hrfs.size()) != dims.m_regions)
            throw IngestionError("run " + std::to_string(s.run_index) + " has the wrong region count");
        for (const auto& p : s.variables.hrfs)
            s.sampled_hrfs.push_back(normalize_peak(gamma_hrf(p, dims.dt, dims.filter_length)));
        return s;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad run record: ") + e.what());
    }
}

json to_json(const DecompositionResult& result, const Provenance& prov) {
    json runs = json::array();
    for (const auto& s : result.solutions)
        runs.push_back(to_json(s));
    const BtdDims& d = result.dims;
    return {{"provenance", provenance_json(prov)},
            {"dims",
             {{"m_regions", d.m_regions},
              {"filter_length", d.filter_length},
              {"stack_depth", d.stack_depth},
              {"n_lags", d.n_lags},
              {"dt", d.dt}}},
            {"target_squared_norm", result.target_squared_norm},
            {"runs", runs}};
}

DecompositionResult decomposition_from_json(const json& j) {
    try {
        DecompositionResult r;
        const json& d = j.at("dims");
        r.dims.m_regions = d.at("m_regions").get<int>();
        r.dims.filter_length = d.at("filter_length").get<int>();
        r.dims.stack_depth = d.at("stack_depth").get<int>();
        r.dims.n_lags = d.at("n_lags").get<int>();
        r.dims.dt = d.at("dt").get<double>();
        r.dims.validate();
        r.target_squared_norm = j.at("target_squared_norm").get<double>();
        for (const auto& run : j.at("runs"))
            r.solutions.push_back(solution_from_json(run, r.dims));
        return r;
    } catch (const json::exception& e) {
        throw IngestionError(std::string("bad decomposition record: ") + e.what());
    }
}

json to_json(const ClusterReport& report, const Provenance& prov) {
    json clusters = json::array();
    for (const auto& c : report.clusters) {
        std::vector<int> runs;
        for (int member : c.members)
            runs.push_back(report.features.run_indices[member]);
        clusters.push_back({{"id", c.id},
                            {"runs", runs},
                            {"diameter", c.diameter},
                            {"distance", c.distance},
                            {"eligible", c.eligible}});
    }
    json mean_hrfs = json::array();
    for (const auto& f : report.mean_hrfs) {
        mean_hrfs.push_back({{"dt", f.dt},
                             {"taps", std::vector<double>(f.taps.data(), f.taps.data() + f.taps.size())},
                             {"peak_latency", sampled_peak_latency(f)},
                             {"fwhm", fwhm(f)}});
    }
    return {{"provenance", provenance_json(prov)},
            {"retained_runs", report.retained_runs},
            {"clusters", clusters},
            {"selected_cluster", report.selected},
            {"selected_runs", report.selected_runs},
            {"mean_hrfs", mean_hrfs}};
}

std::string merges_csv(const Dendrogram& dendrogram, const Provenance& prov) {
    std::string out = provenance_header(prov) + "left,right,distance,size\n";
    for (const auto& m : dendrogram.merges)
        out += std::to_string(m.left) + "," + std::to_string(m.right) + "," + format_double(m.distance) + "," +
               std::to_string(m.size) + "\n";
    return out;
}

json to_json(const EvalReport& report, const Provenance& prov) {
    json j = {{"provenance", provenance_json(prov)},
              {"iou_seconds",
               {{"per_repetition", report.iou.per_repetition},
                {"mean", report.iou.mean},
                {"false_positives", report.iou.false_positives}}}};
    if (!report.pl.per_region.empty()) {
        j["pl_error"] = {{"per_region", report.pl.per_region}, {"mean", report.pl.mean}};
        j["fwhm_error"] = {{"per_region", report.fwhm.per_region}, {"mean", report.fwhm.mean}};
    }
    if (!report.fano_factors.empty())
        j["fano_factors"] = report.fano_factors;
    if (report.baseline_iou_mean >= 0.0)
        j["baseline_iou_mean"] = report.baseline_iou_mean;
    return j;
}

std::string eval_row_csv(const EvalReport& report, const Provenance& prov) {
    const bool has_pl = !report.pl.per_region.empty();
    std::string out = provenance_header(prov) + "iou_mean,false_positives,pl_error_mean,fwhm_error_mean,baseline_iou_mean\n";
    out += format_double(report.iou.mean) + "," + std::to_string(report.iou.false_positives) + "," +
           (has_pl ? format_double(report.pl.mean) : "") + "," + (has_pl ? format_double(report.fwhm.mean) : "") +
           "," + (report.baseline_iou_mean >= 0.0 ? format_double(report.baseline_iou_mean) : "") + "\n";
    return out;
}

std::string montecarlo_csv(const std::vector<MonteCarloRow>& rows, const Provenance& prov) {
    std::string out = provenance_header(prov) +
                      "snr_db,iteration,seed,ok,pl_error,fwhm_error,iou,baseline_iou,selected_runs,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out += format_double(r.snr_db) + "," + std::to_string(r.iteration) + "," + std::to_string(r.seed) + "," +
               (r.ok ? "1" : "0") + "," + format_double(r.pl_error) + "," + format_double(r.fwhm_error) + "," +
               format_double(r.iou) + "," + format_double(r.baseline_iou) + "," + std::to_string(r.selected_runs) +
               "," + err + "\n";
    }
    return out;
}

json to_json(const std::vector<MonteCarloSummary>& summary, const Provenance& prov) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json rows = json::array();
    for (const auto& s : summary)
        rows.push_back({{"snr_db", s.snr_db},
                        {"n_ok", s.n_ok},
                        {"n_failed", s.n_failed},
                        {"pl_error_median", num(s.pl_error_median)},
                        {"pl_error_std", num(s.pl_error_std)},
                        {"iou_median", num(s.iou_median)},
                        {"iou_std", num(s.iou_std)},
                        {"baseline_iou_median", num(s.baseline_iou_median)},
                        {"baseline_iou_std", num(s.baseline_iou_std)}});
    return {{"provenance", provenance_json(prov)}, {"per_snr", rows}};
}

json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw IngestionError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

void write_tensor(const fs::path& dir, const LagCorrTensor& tensor, const BtdDims& dims, const Provenance& prov) {
    ensure_directory(dir);
    json files = json::array();
    for (int tau = 0; tau < tensor.n_lags(); ++tau) {
        const Eigen::MatrixXd& s = tensor.slices[tau];
        std::string text = provenance_header(prov);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            for (Eigen::Index j = 0; j < s.cols(); ++j)
                text += (j ? "," : "") + format_double(s(i, j));
            text += '\n';
        }
        char name[32];
        std::snprintf(name, sizeof name, "slice_%03d.csv", tau);
        write_file_atomic(dir / name, text);
        files.push_back(name);
    }
    const json manifest = {{"provenance", provenance_json(prov)},
                           {"slice_dim", tensor.dim()},
                           {"n_lags", tensor.n_lags()},
                           {"lags", [&] {
                                std::vector<int> lags(tensor.n_lags());
                                for (int t = 0; t < tensor.n_lags(); ++t)
                                    lags[t] = t;
                                return lags;
                            }()},
                           {"m_regions", dims.m_regions},
                           {"filter_order", dims.filter_order()},
                           {"stack_depth", dims.stack_depth},
                           {"files", files}};
    write_json(dir / "manifest.json", manifest);
}

}  // namespace fusbtd::io
