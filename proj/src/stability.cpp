#include "fusbtd/stability.hpp"

#include "fusbtd/error.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace fusbtd {

std::optional<double> otsu_threshold(std::span<const double> values) {
    if (values.size() < 2)
        throw StabilityError("Otsu thresholding needs at least two values");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back())
        return std::nullopt;

    const double n = static_cast<double>(sorted.size());
    const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    double best_score = -1.0;
    double best = 0.0;
    double below_sum = 0.0;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        below_sum += sorted[i];
        if (sorted[i] == sorted[i + 1])
            continue;
        const double n0 = static_cast<double>(i + 1);
        const double n1 = n - n0;
        const double mean0 = below_sum / n0;
        const double mean1 = (total - below_sum) / n1;
        const double score = (n0 / n) * (n1 / n) * (mean0 - mean1) * (mean0 - mean1);
        if (score > best_score) {
            best_score = score;
            best = 0.5 * (sorted[i] + sorted[i + 1]);
        }
    }
    return best;
}

std::vector<int> otsu_reject(std::span<const double> costs) {
    const auto threshold = otsu_threshold(costs);
    std::vector<int> kept;
    for (std::size_t i = 0; i < costs.size(); ++i)
        if (!threshold || costs[i] <= *threshold)
            kept.push_back(static_cast<int>(i));
    if (kept.size() < 2)
        throw StabilityError("fewer than two runs survive cost-based rejection");
    return kept;
}

Dendrogram complete_linkage(const Eigen::MatrixXd& points) {
    const int n = static_cast<int>(points.rows());
    if (n < 2)
        throw StabilityError("clustering needs at least two observations");
    Dendrogram tree;
    tree.n_observations = n;

    Eigen::MatrixXd dist(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            dist(i, j) = (points.row(i) - points.row(j)).norm();

    // Active clusters tracked by their representative slot.
    std::vector<int> node(n);
    std::vector<int> size(n, 1);
    std::vector<bool> active(n, true);
    std::iota(node.begin(), node.end(), 0);

    for (int step = 0; step < n - 1; ++step) {
        double best = std::numeric_limits<double>::infinity();
        int bi = -1, bj = -1;
        for (int i = 0; i < n; ++i) {
            if (!active[i])
                continue;
            for (int j = i + 1; j < n; ++j)
                if (active[j] && dist(i, j) < best) {
                    best = dist(i, j);
                    bi = i;
                    bj = j;
                }
        }
        tree.merges.push_back(Merge{node[bi], node[bj], best, size[bi] + size[bj]});
        for (int k = 0; k < n; ++k)
            if (active[k] && k != bi && k != bj)
                dist(bi, k) = dist(k, bi) = std::max(dist(bi, k), dist(bj, k));
        active[bj] = false;
        size[bi] += size[bj];
        node[bi] = n + step;
    }
    return tree;
}

std::vector<int> Dendrogram::cut(double threshold) const {
    const int n = n_observations;
    std::vector<int> parent(n + merges.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x)
            x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::size_t k = 0; k < merges.size(); ++k) {
        if (merges[k].distance > threshold)
            continue;
        const int created = n + static_cast<int>(k);
        parent[find(merges[k].left)] = created;
        parent[find(merges[k].right)] = created;
    }
    std::map<int, int> relabel;
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        const int root = find(i);
        auto [it, inserted] = relabel.try_emplace(root, static_cast<int>(relabel.size()));
        labels[i] = it->second;
    }
    return labels;
}

Clustering cluster_latencies(const SolutionFeatures& features, double cut) {
    Clustering out;
    out.dendrogram = complete_linkage(features.peak_latencies);
    out.labels = out.dendrogram.cut(cut);
    out.n_clusters = out.labels.empty() ? 0 : *std::max_element(out.labels.begin(), out.labels.end()) + 1;
    return out;
}

double intracluster_distance(const Eigen::MatrixXd& members) {
    if (members.rows() == 0)
        throw StabilityError("empty cluster");
    double diameter = 0.0;
    for (Eigen::Index i = 0; i < members.rows(); ++i)
        for (Eigen::Index j = i + 1; j < members.rows(); ++j)
            diameter = std::max(diameter, (members.row(i) - members.row(j)).norm());
    return diameter / static_cast<double>(members.rows());
}

SampledFilter mean_curve(const std::vector<SampledFilter>& curves) {
    if (curves.empty())
        throw StabilityError("no curves to average");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(curves.front().length());
    for (const auto& c : curves) {
        if (c.length() != acc.size())
            throw DimensionError("curves to average differ in length");
        acc += normalize_peak(c).taps;
    }
    acc /= static_cast<double>(curves.size());
    return normalize_peak(SampledFilter(acc, curves.front().dt));
}

ClusterReport select_stable(const std::vector<BtdSolution>& solutions, const StabilityConfig& config) {
    if (solutions.size() < 2)
        throw StabilityError("stability selection needs at least two runs");
    ClusterReport report;

    std::vector<double> costs;
    for (const auto& s : solutions)
        costs.push_back(s.final_cost);
    report.retained_runs = otsu_reject(costs);

    const int m_regions = static_cast<int>(solutions.front().variables.hrfs.size());
    report.features.peak_latencies.resize(static_cast<Eigen::Index>(report.retained_runs.size()), m_regions);
    for (std::size_t r = 0; r < report.retained_runs.size(); ++r) {
        const auto& sol = solutions[report.retained_runs[r]];
        const auto pls = sol.peak_latencies();
        for (int m = 0; m < m_regions; ++m)
            report.features.peak_latencies(static_cast<Eigen::Index>(r), m) = pls[m];
        report.features.run_indices.push_back(sol.run_index);
    }

    report.clustering = cluster_latencies(report.features, config.cluster_cut);

    const auto& pl = report.features.peak_latencies;
    for (int id = 0; id < report.clustering.n_clusters; ++id) {
        ClusterSummary c;
        c.id = id;
        for (std::size_t r = 0; r < report.clustering.labels.size(); ++r)
            if (report.clustering.labels[r] == id)
                c.members.push_back(static_cast<int>(r));
        Eigen::MatrixXd rows(static_cast<Eigen::Index>(c.members.size()), pl.cols());
        for (std::size_t k = 0; k < c.members.size(); ++k)
            rows.row(static_cast<Eigen::Index>(k)) = pl.row(c.members[k]);
        c.distance = intracluster_distance(rows);
        c.diameter = c.distance * static_cast<double>(c.members.size());
        c.eligible = c.members.size() >= 2;
        report.clusters.push_back(std::move(c));
    }

    // Ties on d_C go to the larger cluster, then to the cluster holding the
    // lowest cost, which keeps the choice independent of run order.
    auto min_cost = [&](const ClusterSummary& c) {
        double best = std::numeric_limits<double>::infinity();
        for (int r : c.members)
            best = std::min(best, costs[report.retained_runs[r]]);
        return best;
    };
    const ClusterSummary* chosen = nullptr;
    for (const auto& c : report.clusters) {
        if (!c.eligible)
            continue;
        if (chosen == nullptr || c.distance < chosen->distance ||
            (c.distance == chosen->distance &&
             (c.members.size() > chosen->members.size() ||
              (c.members.size() == chosen->members.size() && min_cost(c) < min_cost(*chosen)))))
            chosen = &c;
    }
    if (chosen == nullptr) {
        std::ostringstream msg;
        msg << "no cluster with at least two members; retained peak latencies:\n" << pl;
        throw StabilityError(msg.str());
    }
    report.selected = chosen->id;
    for (int r : chosen->members)
        report.selected_runs.push_back(report.retained_runs[r]);

    for (int m = 0; m < m_regions; ++m) {
        std::vector<SampledFilter> curves;
        for (int run : report.selected_runs)
            curves.push_back(solutions[run].sampled_hrfs[m]);
        report.mean_hrfs.push_back(mean_curve(curves));
    }
    return report;
}

}  // namespace fusbtd
