#pragma once

#include "fusbtd/hrf_model.hpp"
#include "fusbtd/simulator.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fusbtd {

enum class TruncationRule {
    Count,   // discard the given fraction of singular values by number
    Energy,  // keep the smallest leading set holding (1 - fraction) of sum sigma^2
};

// Pseudo-inverse rebuilt from the leading singular triplets only.
struct TruncatedPinv {
    Eigen::MatrixXd left;       // retained left singular vectors
    Eigen::VectorXd singular;   // retained singular values, descending
    Eigen::MatrixXd right;      // retained right singular vectors
    double truncation_fraction = 0.9;
    Eigen::Index total = 0;     // singular values before truncation

    Eigen::Index retained() const { return singular.size(); }
    Eigen::MatrixXd matrix() const;
    Eigen::MatrixXd apply(const Eigen::MatrixXd& rhs) const;
};

// max(1, ceil((1 - fraction) * total))
Eigen::Index retained_count(Eigen::Index total, double truncation_fraction);

TruncatedPinv truncated_pinv(const Eigen::MatrixXd& matrix, double truncation_fraction,
                             TruncationRule rule = TruncationRule::Count);

struct SourceEstimate {
    Eigen::MatrixXd hankel_rows;  // (L + L') x (N - L' + 1)
    Eigen::VectorXd collapsed;    // length N
    double fs = 4.0;
};

// Anti-diagonal average of a source Hankel matrix whose row i, column c
// holds s(c + L' - 1 - i); keeps times 0..n_samples-1.
Eigen::VectorXd collapse_hankel_rows(const Eigen::MatrixXd& rows, int stack_depth, int n_samples);

SourceEstimate estimate_sources(const std::vector<SampledFilter>& hrfs, const RoiTimeSeries& series,
                                int stack_depth, double truncation_fraction = 0.9,
                                TruncationRule rule = TruncationRule::Count);

}  // namespace fusbtd
