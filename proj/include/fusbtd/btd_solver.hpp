#pragma once

#include "fusbtd/hrf_model.hpp"
#include "fusbtd/lagcorr.hpp"
#include "fusbtd/simulator.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace fusbtd {

// Problem dimensions shared by the target, the variables and the solver.
struct BtdDims {
    int m_regions = 3;
    int filter_length = 41;  // L + 1
    int stack_depth = 80;    // L'
    int n_lags = 41;         // K + 1
    double dt = 0.25;

    int filter_order() const { return filter_length - 1; }
    int span() const { return filter_order() + stack_depth; }
    int corr_length() const { return required_corr_length(n_lags, filter_order(), stack_depth); }
    // Range of tau + i - j over the tensor.
    int d_min() const { return -(stack_depth - 1); }
    int d_max() const { return n_lags - 1 + stack_depth - 1; }
    int d_count() const { return d_max() - d_min() + 1; }
    int n_free() const { return 4 * m_regions + 2 * (corr_length() - 1); }

    void validate() const;
};

// Decomposition unknowns. Both source autocorrelations have c(0) = 1, which
// fixes the scale gauge; kernel amplitudes and artifact gains carry the
// per-region scale that row normalization introduces.
struct BtdVariables {
    std::vector<HrfParams> hrfs;
    Eigen::VectorXd gains;
    SourceCorrSequence task_corr;
    SourceCorrSequence artifact_corr;
};

// Packed unconstrained vector:
//   [log(shape_m - 1), log(rate_m), amplitude_m]_m, gains, task c(1..K-1),
//   artifact c(1..K-1)
Eigen::VectorXd pack(const BtdVariables& vars, const BtdDims& dims);
BtdVariables unpack(const Eigen::VectorXd& x, const BtdDims& dims);

// Lag tensor reduced to its Toeplitz-block statistics. Every model block
// entry depends only on d = tau + i - j, so the Frobenius cost splits into a
// weighted fit of the per-d means plus a constant off-structure residual.
class BtdTarget {
public:
    BtdTarget(const LagCorrTensor& tensor, const BtdDims& dims);

    const BtdDims& dims() const { return dims_; }
    double squared_norm() const { return squared_norm_; }
    double off_structure_residual() const { return off_structure_; }
    // Number of tensor entries sharing each d, indexed by d - d_min.
    const Eigen::VectorXd& weights() const { return weights_; }
    // Row a * M + b: mean of block (a, b) entries at each d.
    const Eigen::MatrixXd& block_means() const { return means_; }

private:
    BtdDims dims_;
    double squared_norm_ = 0.0;
    double off_structure_ = 0.0;
    Eigen::VectorXd weights_;
    Eigen::MatrixXd means_;
};

double btd_cost(const BtdVariables& vars, const BtdTarget& target);
double btd_cost(const BtdVariables& vars, const LagCorrTensor& target, const BtdDims& dims);

// Cost and analytic gradient with respect to the packed vector.
struct CostGradient {
    double cost = 0.0;
    Eigen::VectorXd gradient;
};
CostGradient btd_cost_gradient(const Eigen::VectorXd& x, const BtdTarget& target);
Eigen::VectorXd btd_gradient(const BtdVariables& vars, const BtdTarget& target);

struct SolverConfig {
    int max_iterations = 500;
    double gradient_tolerance = 1e-8;  // on the cost scaled by ||target||^2
    double cost_tolerance = 1e-12;     // relative decrease per iteration
    int n_starts = 20;
    int lbfgs_memory = 10;
    std::uint64_t seed = 1;

    void validate() const;
};

struct BtdSolution {
    BtdVariables variables;
    double final_cost = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<SampledFilter> sampled_hrfs;  // unit positive peak
    std::uint64_t seed = 0;
    int run_index = 0;
    std::string termination;

    // Analytic peak latency per region.
    std::vector<double> peak_latencies() const;
};

// Model mixing description implied by a set of variables.
MixingModel mixing_model(const BtdVariables& vars, const BtdDims& dims);

// Random start: kernels via sample_random_hrf_params, gains ~ U[0.1, 1],
// task autocorrelation from the target's mean-observation autocorrelation,
// artifact autocorrelation delta(k).
BtdVariables random_init(const BtdTarget& target, Rng& rng);

BtdSolution solve_single(const BtdTarget& target, const SolverConfig& config, const BtdVariables& init);

std::vector<BtdSolution> multi_start(const BtdTarget& target, const SolverConfig& config);

}  // namespace fusbtd
