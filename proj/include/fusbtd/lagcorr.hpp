#pragma once

#include "fusbtd/hrf_model.hpp"
#include "fusbtd/simulator.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fusbtd {

// Stacked delay windows. Column c corresponds to time n = c + L' - 1 and row
// m L' + i holds y_m(n - i).
struct HankelStack {
    Eigen::MatrixXd data;
    int m_regions = 0;
    int stack_depth = 0;

    Eigen::Index n_columns() const { return data.cols(); }
};

// Sample lagged autocorrelation matrices E{x(n) x(n+tau)^T}, tau = 0..K.
struct LagCorrTensor {
    std::vector<Eigen::MatrixXd> slices;

    int n_lags() const { return static_cast<int>(slices.size()); }
    Eigen::Index dim() const { return slices.empty() ? 0 : slices.front().rows(); }
    double squared_norm() const;
};

// Symmetric autocorrelation sequence; values[k] = c(k) = c(-k).
struct SourceCorrSequence {
    Eigen::VectorXd values;

    double at(long k) const { return values[k < 0 ? -k : k]; }
    Eigen::Index size() const { return values.size(); }
};

// Sequence length needed to populate every core entry: K + L + L'.
int required_corr_length(int n_lags, int filter_order, int stack_depth);

HankelStack hankelize(const RoiTimeSeries& series, int stack_depth);
HankelStack hankelize(const Eigen::MatrixXd& rows, int stack_depth);

// Inverse of hankelize by anti-diagonal averaging, M x N.
Eigen::MatrixXd dehankelize(const HankelStack& stack);

LagCorrTensor autocorr_tensor(const HankelStack& stack, int n_lags);

// (L+L') x (L+L') core block at lag tau, entry (i, j) = c(tau + i - j).
Eigen::MatrixXd core_slice(const SourceCorrSequence& corr, int span, int tau);

// H blockdiag(C_task(tau), C_art(tau)) H^T for tau = 0..n_lags-1.
LagCorrTensor model_tensor(const MixingModel& model, const SourceCorrSequence& task_corr,
                           const SourceCorrSequence& artifact_corr, int n_lags,
                           Identifiability policy = Identifiability::Enforce);

}  // namespace fusbtd
