#include "fusbtd/lagcorr.hpp"

#include "fusbtd/error.hpp"

#include <string>

namespace fusbtd {

double LagCorrTensor::squared_norm() const {
    double acc = 0.0;
    for (const auto& s : slices)
        acc += s.squaredNorm();
    return acc;
}

int required_corr_length(int n_lags, int filter_order, int stack_depth) {
    return (n_lags - 1) + filter_order + stack_depth;
}

HankelStack hankelize(const Eigen::MatrixXd& rows, int stack_depth) {
    const Eigen::Index n = rows.cols();
    if (stack_depth < 1)
        throw DimensionError("stack depth must be >= 1");
    if (n <= stack_depth)
        throw DimensionError("series length " + std::to_string(n) + " must exceed stack depth " +
                             std::to_string(stack_depth));
    HankelStack out;
    out.m_regions = static_cast<int>(rows.rows());
    out.stack_depth = stack_depth;
    const Eigen::Index cols = n - stack_depth + 1;
    out.data.resize(rows.rows() * stack_depth, cols);
    for (Eigen::Index m = 0; m < rows.rows(); ++m)
        for (Eigen::Index i = 0; i < stack_depth; ++i)
            out.data.row(m * stack_depth + i) = rows.row(m).segment(stack_depth - 1 - i, cols);
    return out;
}

HankelStack hankelize(const RoiTimeSeries& series, int stack_depth) {
    return hankelize(series.data, stack_depth);
}

Eigen::MatrixXd dehankelize(const HankelStack& stack) {
    const Eigen::Index depth = stack.stack_depth;
    const Eigen::Index cols = stack.n_columns();
    const Eigen::Index n = cols + depth - 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(stack.m_regions, n);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < depth; ++i)
        counts.segment(depth - 1 - i, cols).array() += 1.0;
    // Average deviations from one copy, so a consistent stack comes back exactly.
    for (Eigen::Index m = 0; m < stack.m_regions; ++m) {
        Eigen::RowVectorXd ref(n);
        ref.head(cols) = stack.data.row(m * depth + depth - 1);
        ref.tail(depth - 1) = stack.data.row(m * depth).tail(depth - 1);
        for (Eigen::Index i = 0; i < depth; ++i)
            out.row(m).segment(depth - 1 - i, cols) +=
                stack.data.row(m * depth + i) - ref.segment(depth - 1 - i, cols);
        out.row(m).array() /= counts.transpose().array();
        out.row(m) += ref;
    }
    return out;
}

LagCorrTensor autocorr_tensor(const HankelStack& stack, int n_lags) {
    const Eigen::Index cols = stack.n_columns();
    if (n_lags < 1)
        throw EstimationError("need at least one lag");
    if (cols <= n_lags - 1)
        throw EstimationError("too few samples: " + std::to_string(cols) + " windows for " +
                              std::to_string(n_lags) + " lags");
    LagCorrTensor out;
    out.slices.reserve(n_lags);
    const auto& x = stack.data;
    for (int tau = 0; tau < n_lags; ++tau) {
        const Eigen::Index count = cols - tau;
        Eigen::MatrixXd slice = x.leftCols(count) * x.middleCols(tau, count).transpose();
        slice /= static_cast<double>(count);
        if (tau == 0)
            slice = (0.5 * (slice + slice.transpose())).eval();
        out.slices.push_back(std::move(slice));
    }
    return out;
}

Eigen::MatrixXd core_slice(const SourceCorrSequence& corr, int span, int tau) {
    if (tau + span - 1 >= corr.size() || span - 1 >= corr.size())
        throw DimensionError("autocorrelation sequence too short for the core slice");
    Eigen::MatrixXd c(span, span);
    for (int i = 0; i < span; ++i)
        for (int j = 0; j < span; ++j)
            c(i, j) = corr.at(tau + i - j);
    return c;
}

LagCorrTensor model_tensor(const MixingModel& model, const SourceCorrSequence& task_corr,
                           const SourceCorrSequence& artifact_corr, int n_lags, Identifiability policy) {
    const Eigen::MatrixXd mixing = build_mixing_matrix(model, policy);
    const int span = model.filter_order() + model.stack_depth;
    const int needed = required_corr_length(n_lags, model.filter_order(), model.stack_depth);
    if (task_corr.size() < needed || artifact_corr.size() < needed)
        throw DimensionError("source autocorrelation needs " + std::to_string(needed) + " values");
    const auto task_cols = mixing.leftCols(span);
    const auto art_cols = mixing.rightCols(span);
    LagCorrTensor out;
    for (int tau = 0; tau < n_lags; ++tau) {
        Eigen::MatrixXd slice = task_cols * core_slice(task_corr, span, tau) * task_cols.transpose();
        slice += art_cols * core_slice(artifact_corr, span, tau) * art_cols.transpose();
        out.slices.push_back(std::move(slice));
    }
    return out;
}

}  // namespace fusbtd
