#pragma once

#include "fusbtd/btd_solver.hpp"
#include "fusbtd/hrf_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace fusbtd {

// Exact 1-D Otsu threshold: the midpoint between consecutive sorted unique
// values that maximizes the between-class variance. Empty when all values
// are equal.
std::optional<double> otsu_threshold(std::span<const double> values);

// Indices of runs whose cost is at or below the Otsu threshold (all of them
// when the costs are identical).
std::vector<int> otsu_reject(std::span<const double> costs);

// One observation per retained run, one column per region.
struct SolutionFeatures {
    Eigen::MatrixXd peak_latencies;
    std::vector<int> run_indices;
};

// Agglomerative merge record. Leaves are 0..n-1, merge k creates node n + k.
struct Merge {
    int left = 0;
    int right = 0;
    double distance = 0.0;
    int size = 0;
};

struct Dendrogram {
    int n_observations = 0;
    std::vector<Merge> merges;

    // Flat labels from applying every merge with distance <= cut. Labels are
    // numbered by first appearance in observation order.
    std::vector<int> cut(double threshold) const;
};

// Complete linkage on Euclidean distance between rows.
Dendrogram complete_linkage(const Eigen::MatrixXd& points);

struct Clustering {
    Dendrogram dendrogram;
    std::vector<int> labels;
    int n_clusters = 0;
};

Clustering cluster_latencies(const SolutionFeatures& features, double cut = 0.5);

// Largest pairwise distance among the rows divided by the row count.
double intracluster_distance(const Eigen::MatrixXd& members);

struct ClusterSummary {
    int id = 0;
    std::vector<int> members;  // rows of the feature matrix
    double diameter = 0.0;
    double distance = 0.0;     // diameter / size
    bool eligible = false;     // non-singleton
};

struct ClusterReport {
    std::vector<int> retained_runs;  // positions in the solution list
    SolutionFeatures features;
    Clustering clustering;
    std::vector<ClusterSummary> clusters;
    int selected = -1;
    std::vector<int> selected_runs;  // positions in the solution list
    std::vector<SampledFilter> mean_hrfs;
};

struct StabilityConfig {
    double cluster_cut = 0.5;  // seconds of complete-linkage distance
};

ClusterReport select_stable(const std::vector<BtdSolution>& solutions, const StabilityConfig& config = {});

// Sample-wise mean of unit-peak curves, rescaled to a unit positive peak.
SampledFilter mean_curve(const std::vector<SampledFilter>& curves);

}  // namespace fusbtd
