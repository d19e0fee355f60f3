#include "fusbtd/recovery.hpp"

#include "fusbtd/error.hpp"
#include "fusbtd/lagcorr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fusbtd {

Eigen::Index retained_count(Eigen::Index total, double truncation_fraction) {
    if (truncation_fraction < 0.0 || truncation_fraction >= 1.0)
        throw ParameterError("truncation fraction must lie in [0, 1)");
    // 1e-9 absorbs representation error, e.g. (1 - 0.9) * 120 = 12.000000000000002
    const double keep = std::ceil((1.0 - truncation_fraction) * static_cast<double>(total) - 1e-9);
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(keep), 1, std::max<Eigen::Index>(total, 1));
}

Eigen::MatrixXd TruncatedPinv::matrix() const {
    Eigen::VectorXd inv = singular;
    for (Eigen::Index i = 0; i < inv.size(); ++i)
        inv[i] = singular[i] > 0.0 ? 1.0 / singular[i] : 0.0;
    return right * inv.asDiagonal() * left.transpose();
}

Eigen::MatrixXd TruncatedPinv::apply(const Eigen::MatrixXd& rhs) const {
    Eigen::VectorXd inv = singular;
    for (Eigen::Index i = 0; i < inv.size(); ++i)
        inv[i] = singular[i] > 0.0 ? 1.0 / singular[i] : 0.0;
    return right * (inv.asDiagonal() * (left.transpose() * rhs));
}

TruncatedPinv truncated_pinv(const Eigen::MatrixXd& matrix, double truncation_fraction, TruncationRule rule) {
    if (matrix.size() == 0 || matrix.cwiseAbs().maxCoeff() == 0.0)
        throw RankError("cannot pseudo-invert an all-zero matrix");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(matrix, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sigma = svd.singularValues();

    TruncatedPinv out;
    out.truncation_fraction = truncation_fraction;
    out.total = sigma.size();
    Eigen::Index keep = retained_count(out.total, truncation_fraction);
    if (rule == TruncationRule::Energy) {
        const double energy = sigma.squaredNorm();
        double acc = 0.0;
        keep = 0;
        while (keep < sigma.size() && acc < (1.0 - truncation_fraction) * energy * (1.0 - 1e-12))
            acc += sigma[keep] * sigma[keep], ++keep;
        keep = std::max<Eigen::Index>(keep, 1);
    }
    // Numerically null directions are never inverted.
    const double floor = sigma[0] * static_cast<double>(std::max(matrix.rows(), matrix.cols())) *
                         std::numeric_limits<double>::epsilon();
    out.singular = sigma.head(keep);
    for (Eigen::Index i = 0; i < keep; ++i)
        if (out.singular[i] <= floor)
            out.singular[i] = 0.0;
    out.left = svd.matrixU().leftCols(keep);
    out.right = svd.matrixV().leftCols(keep);
    return out;
}

Eigen::VectorXd collapse_hankel_rows(const Eigen::MatrixXd& rows, int stack_depth, int n_samples) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n_samples);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(n_samples);
    const Eigen::Index cols = rows.cols();
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index c = 0; c < cols; ++c) {
            const Eigen::Index t = c + stack_depth - 1 - i;
            if (t < 0 || t >= n_samples)
                continue;
            sum[t] += rows(i, c);
            count[t] += 1.0;
        }
    for (Eigen::Index t = 0; t < n_samples; ++t)
        if (count[t] > 0.0)
            sum[t] /= count[t];
    return sum;
}

SourceEstimate estimate_sources(const std::vector<SampledFilter>& hrfs, const RoiTimeSeries& series,
                                int stack_depth, double truncation_fraction, TruncationRule rule) {
    if (static_cast<int>(hrfs.size()) != series.m_regions())
        throw DimensionError("one HRF per region is required");
    const Eigen::MatrixXd task_block = build_task_block(hrfs, stack_depth);
    if (static_cast<long>(series.m_regions()) * stack_depth < 2L * task_block.cols())
        throw DimensionError("identifiability condition M*L' >= 2(L+L') violated");
    const HankelStack observed = hankelize(series, stack_depth);
    const TruncatedPinv pinv = truncated_pinv(task_block, truncation_fraction, rule);

    SourceEstimate out;
    out.fs = series.fs;
    out.hankel_rows = pinv.apply(observed.data);
    out.collapsed = collapse_hankel_rows(out.hankel_rows, stack_depth, series.n_samples());
    return out;
}

}  // namespace fusbtd
