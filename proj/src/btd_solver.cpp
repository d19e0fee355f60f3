#include "fusbtd/btd_solver.hpp"

#include "fusbtd/error.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

namespace fusbtd {

void BtdDims::validate() const {
    if (m_regions < 2)
        throw DimensionError("need at least two regions");
    if (filter_length < 2)
        throw DimensionError("filter length must be >= 2");
    if (stack_depth < 1 || n_lags < 1)
        throw DimensionError("stack depth and lag count must be positive");
    if (m_regions * stack_depth < 2 * span())
        throw DimensionError("identifiability condition M*L' >= 2(L+L') violated");
    if (!(dt > 0.0))
        throw DimensionError("dt must be positive");
}

void SolverConfig::validate() const {
    if (!(gradient_tolerance > 0.0) || !(cost_tolerance > 0.0))
        throw ParameterError("solver tolerances must be positive");
    if (n_starts < 1)
        throw ParameterError("n_starts must be >= 1");
    if (max_iterations < 1 || lbfgs_memory < 1)
        throw ParameterError("iteration cap and memory must be positive");
}

Eigen::VectorXd pack(const BtdVariables& vars, const BtdDims& dims) {
    const int m_regions = dims.m_regions;
    const int kc = dims.corr_length();
    if (static_cast<int>(vars.hrfs.size()) != m_regions || vars.gains.size() != m_regions ||
        vars.task_corr.size() != kc || vars.artifact_corr.size() != kc)
        throw DimensionError("variables do not match the problem dimensions");
    Eigen::VectorXd x(dims.n_free());
    for (int m = 0; m < m_regions; ++m) {
        vars.hrfs[m].validate();
        x[3 * m] = std::log(vars.hrfs[m].shape - 1.0);
        x[3 * m + 1] = std::log(vars.hrfs[m].rate);
        x[3 * m + 2] = vars.hrfs[m].amplitude;
    }
    x.segment(3 * m_regions, m_regions) = vars.gains;
    x.segment(4 * m_regions, kc - 1) = vars.task_corr.values.tail(kc - 1);
    x.segment(4 * m_regions + kc - 1, kc - 1) = vars.artifact_corr.values.tail(kc - 1);
    return x;
}

BtdVariables unpack(const Eigen::VectorXd& x, const BtdDims& dims) {
    const int m_regions = dims.m_regions;
    const int kc = dims.corr_length();
    if (x.size() != dims.n_free())
        throw DimensionError("packed vector has the wrong length");
    BtdVariables vars;
    for (int m = 0; m < m_regions; ++m)
        vars.hrfs.push_back(HrfParams{x[3 * m + 2], 1.0 + std::exp(x[3 * m]), std::exp(x[3 * m + 1])});
    vars.gains = x.segment(3 * m_regions, m_regions);
    vars.task_corr.values.resize(kc);
    vars.task_corr.values[0] = 1.0;
    vars.task_corr.values.tail(kc - 1) = x.segment(4 * m_regions, kc - 1);
    vars.artifact_corr.values.resize(kc);
    vars.artifact_corr.values[0] = 1.0;
    vars.artifact_corr.values.tail(kc - 1) = x.segment(4 * m_regions + kc - 1, kc - 1);
    return vars;
}

BtdTarget::BtdTarget(const LagCorrTensor& tensor, const BtdDims& dims) : dims_(dims) {
    dims_.validate();
    const int m_regions = dims.m_regions;
    const int depth = dims.stack_depth;
    if (tensor.n_lags() != dims.n_lags || tensor.dim() != static_cast<Eigen::Index>(m_regions) * depth)
        throw DimensionError("lag tensor does not match the problem dimensions");

    const int d0 = dims.d_min();
    weights_ = Eigen::VectorXd::Zero(dims.d_count());
    means_ = Eigen::MatrixXd::Zero(m_regions * m_regions, dims.d_count());

    for (int tau = 0; tau < dims.n_lags; ++tau) {
        for (int i = 0; i < depth; ++i)
            for (int j = 0; j < depth; ++j)
                weights_[tau + i - j - d0] += 1.0;
    }
    for (int tau = 0; tau < dims.n_lags; ++tau) {
        const auto& slice = tensor.slices[tau];
        for (int a = 0; a < m_regions; ++a)
            for (int b = 0; b < m_regions; ++b) {
                auto row = means_.row(a * m_regions + b);
                const auto block = slice.block(a * depth, b * depth, depth, depth);
                for (int j = 0; j < depth; ++j)
                    for (int i = 0; i < depth; ++i)
                        row[tau + i - j - d0] += block(i, j);
            }
    }
    for (Eigen::Index r = 0; r < means_.rows(); ++r)
        means_.row(r).array() /= weights_.transpose().array();

    squared_norm_ = tensor.squared_norm();
    for (int tau = 0; tau < dims.n_lags; ++tau) {
        const auto& slice = tensor.slices[tau];
        for (int a = 0; a < m_regions; ++a)
            for (int b = 0; b < m_regions; ++b) {
                const auto row = means_.row(a * m_regions + b);
                const auto block = slice.block(a * depth, b * depth, depth, depth);
                for (int j = 0; j < depth; ++j)
                    for (int i = 0; i < depth; ++i) {
                        const double r = block(i, j) - row[tau + i - j - d0];
                        off_structure_ += r * r;
                    }
            }
    }
}

namespace {

// Forward model in compressed form plus everything the gradient reuses.
struct ForwardState {
    std::vector<GammaTapDerivatives> kernels;  // taps scaled by amplitude, derivatives not
    std::vector<double> amplitudes;
    Eigen::MatrixXd rho;       // row a*M+b, column e + L: sum_l h_a(l) h_b(l + e)
    Eigen::MatrixXd residual;  // row a*M+b, column d - d_min: model - mean
    double cost = 0.0;
};

ForwardState forward(const BtdVariables& vars, const BtdTarget& target) {
    const BtdDims& dims = target.dims();
    const int m_regions = dims.m_regions;
    const int order = dims.filter_order();
    const int d0 = dims.d_min();
    const int nd = dims.d_count();

    ForwardState st;
    for (const auto& p : vars.hrfs) {
        st.kernels.push_back(gamma_hrf_derivatives(p.shape, p.rate, dims.dt, dims.filter_length));
        st.amplitudes.push_back(p.amplitude);
        st.kernels.back().taps *= p.amplitude;
    }

    st.rho = Eigen::MatrixXd::Zero(m_regions * m_regions, 2 * order + 1);
    for (int a = 0; a < m_regions; ++a)
        for (int b = 0; b < m_regions; ++b) {
            const auto& ha = st.kernels[a].taps;
            const auto& hb = st.kernels[b].taps;
            auto row = st.rho.row(a * m_regions + b);
            for (int e = -order; e <= order; ++e) {
                const int lo = std::max(0, -e);
                const int hi = std::min(order, order - e);
                double acc = 0.0;
                for (int l = lo; l <= hi; ++l)
                    acc += ha[l] * hb[l + e];
                row[e + order] = acc;
            }
        }

    const auto& means = target.block_means();
    const auto& w = target.weights();
    st.residual.resize(m_regions * m_regions, nd);
    double cost = target.off_structure_residual();
    for (int a = 0; a < m_regions; ++a)
        for (int b = 0; b < m_regions; ++b) {
            const int r = a * m_regions + b;
            const double gain_product = vars.gains[a] * vars.gains[b];
            for (int idx = 0; idx < nd; ++idx) {
                const int d = idx + d0;
                double g = gain_product * vars.artifact_corr.at(d);
                for (int e = -order; e <= order; ++e)
                    g += st.rho(r, e + order) * vars.task_corr.at(d - e);
                const double res = g - means(r, idx);
                st.residual(r, idx) = res;
                cost += w[idx] * res * res;
            }
        }
    st.cost = cost;
    return st;
}

Eigen::VectorXd unit_taps(const HrfParams& p, const BtdDims& dims) {
    return gamma_hrf_derivatives(p.shape, p.rate, dims.dt, dims.filter_length).taps;
}

Eigen::VectorXd backward(const BtdVariables& vars, const BtdTarget& target, const ForwardState& st) {
    const BtdDims& dims = target.dims();
    const int m_regions = dims.m_regions;
    const int order = dims.filter_order();
    const int d0 = dims.d_min();
    const int nd = dims.d_count();
    const int kc = dims.corr_length();
    const auto& w = target.weights();

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dims.n_free());
    auto g_gains = grad.segment(3 * m_regions, m_regions);
    auto g_task = grad.segment(4 * m_regions, kc - 1);
    auto g_art = grad.segment(4 * m_regions + kc - 1, kc - 1);

    // dJ/dg = 2 w (g - mean)
    Eigen::MatrixXd dg = (st.residual.array().rowwise() * (2.0 * w).transpose().array()).matrix();

    // dJ/drho(e) = sum_d dg(d) c_task(d - e)
    Eigen::MatrixXd drho = Eigen::MatrixXd::Zero(m_regions * m_regions, 2 * order + 1);
    for (int r = 0; r < m_regions * m_regions; ++r)
        for (int idx = 0; idx < nd; ++idx) {
            const int d = idx + d0;
            const double gd = dg(r, idx);
            if (gd == 0.0)
                continue;
            for (int e = -order; e <= order; ++e) {
                const int k = std::abs(d - e);
                drho(r, e + order) += gd * vars.task_corr.values[k];
                if (k > 0)
                    g_task[k - 1] += gd * st.rho(r, e + order);
            }
        }

    for (int a = 0; a < m_regions; ++a)
        for (int b = 0; b < m_regions; ++b) {
            const int r = a * m_regions + b;
            double acc_gain = 0.0;
            for (int idx = 0; idx < nd; ++idx) {
                const int d = idx + d0;
                const int k = std::abs(d);
                acc_gain += dg(r, idx) * vars.artifact_corr.values[k];
                if (k > 0)
                    g_art[k - 1] += dg(r, idx) * vars.gains[a] * vars.gains[b];
            }
            g_gains[a] += acc_gain * vars.gains[b];
            g_gains[b] += acc_gain * vars.gains[a];
        }

    // rho_ab(e) = sum_l h_a(l) h_b(l + e)
    std::vector<Eigen::VectorXd> dh(m_regions, Eigen::VectorXd::Zero(dims.filter_length));
    for (int a = 0; a < m_regions; ++a)
        for (int b = 0; b < m_regions; ++b) {
            const int r = a * m_regions + b;
            const auto& ha = st.kernels[a].taps;
            const auto& hb = st.kernels[b].taps;
            for (int e = -order; e <= order; ++e) {
                const double p = drho(r, e + order);
                if (p == 0.0)
                    continue;
                const int lo = std::max(0, -e);
                const int hi = std::min(order, order - e);
                for (int l = lo; l <= hi; ++l) {
                    dh[a][l] += p * hb[l + e];
                    dh[b][l + e] += p * ha[l];
                }
            }
        }

    for (int m = 0; m < m_regions; ++m) {
        const double shape = vars.hrfs[m].shape;
        const double rate = vars.hrfs[m].rate;
        const double amp = st.amplitudes[m];
        grad[3 * m] = amp * dh[m].dot(st.kernels[m].d_shape) * (shape - 1.0);
        grad[3 * m + 1] = amp * dh[m].dot(st.kernels[m].d_rate) * rate;
        grad[3 * m + 2] = amp != 0.0 ? dh[m].dot(st.kernels[m].taps) / amp
                                     : dh[m].dot(unit_taps(vars.hrfs[m], dims));
    }
    return grad;
}

}  // namespace

double btd_cost(const BtdVariables& vars, const BtdTarget& target) {
    return forward(vars, target).cost;
}

double btd_cost(const BtdVariables& vars, const LagCorrTensor& target, const BtdDims& dims) {
    return btd_cost(vars, BtdTarget(target, dims));
}

CostGradient btd_cost_gradient(const Eigen::VectorXd& x, const BtdTarget& target) {
    const BtdVariables vars = unpack(x, target.dims());
    const ForwardState st = forward(vars, target);
    return CostGradient{st.cost, backward(vars, target, st)};
}

Eigen::VectorXd btd_gradient(const BtdVariables& vars, const BtdTarget& target) {
    return btd_cost_gradient(pack(vars, target.dims()), target).gradient;
}

std::vector<double> BtdSolution::peak_latencies() const {
    std::vector<double> out;
    for (const auto& p : variables.hrfs)
        out.push_back(peak_latency(p));
    return out;
}

MixingModel mixing_model(const BtdVariables& vars, const BtdDims& dims) {
    MixingModel model;
    for (const auto& p : vars.hrfs)
        model.task_filters.push_back(gamma_hrf(p, dims.dt, dims.filter_length));
    model.artifact_gains = vars.gains;
    model.stack_depth = dims.stack_depth;
    return model;
}

BtdVariables random_init(const BtdTarget& target, Rng& rng) {
    const BtdDims& dims = target.dims();
    const int m_regions = dims.m_regions;
    const int kc = dims.corr_length();
    BtdVariables vars;
    for (int m = 0; m < m_regions; ++m)
        vars.hrfs.push_back(sample_random_hrf_params(rng));

    std::uniform_real_distribution<double> gain_dist(0.1, 1.0);
    vars.gains.resize(m_regions);
    for (int m = 0; m < m_regions; ++m)
        vars.gains[m] = gain_dist(rng);

    // Autocorrelation of the region-averaged observation, read off the target
    // at d >= 0 and normalized to c(0) = 1. Amplitudes give each kernel the
    // observed zero-lag power.
    const auto& means = target.block_means();
    const int d0 = dims.d_min();
    Eigen::VectorXd mean_corr = Eigen::VectorXd::Zero(kc);
    for (int k = 0; k <= dims.d_max() && k < kc; ++k)
        mean_corr[k] = means.col(k - d0).mean();
    const double power = mean_corr[0] > 0.0 ? mean_corr[0] : 1.0;
    vars.task_corr.values = mean_corr / power;
    vars.task_corr.values[0] = 1.0;
    for (auto& p : vars.hrfs) {
        const double area = gamma_hrf(p, dims.dt, dims.filter_length).taps.sum();
        p.amplitude = std::sqrt(power) / area;
    }

    vars.artifact_corr.values = Eigen::VectorXd::Zero(kc);
    vars.artifact_corr.values[0] = 1.0;
    return vars;
}

namespace {

bool has_overflowing_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, int m_regions) {
    for (int m = 0; m < m_regions; ++m)
        if (x[3 * m] > 700.0 || std::abs(x[3 * m + 1]) > 700.0)
            return true;
    return false;
}

class ScaledBtdObjective final : public ceres::FirstOrderFunction {
public:
    explicit ScaledBtdObjective(const BtdTarget& target)
        : target_(target), scale_(target.squared_norm() > 0.0 ? 1.0 / target.squared_norm() : 1.0) {}

    bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
        const Eigen::Map<const Eigen::VectorXd> x(parameters, NumParameters());
        if (!x.allFinite() || has_overflowing_kernel(x, target_.dims().m_regions))
            return false;
        const CostGradient cg = btd_cost_gradient(x, target_);
        if (!std::isfinite(cg.cost) || !cg.gradient.allFinite())
            return false;
        *cost = cg.cost * scale_;
        if (gradient != nullptr)
            Eigen::Map<Eigen::VectorXd>(gradient, NumParameters()) = cg.gradient * scale_;
        return true;
    }

    int NumParameters() const override { return target_.dims().n_free(); }

private:
    const BtdTarget& target_;
    double scale_;
};

BtdVariables canonicalize(BtdVariables vars) {
    // Each block term only sees outer products of its own column, so the
    // overall sign of the kernel amplitudes and of the gains is free.
    if (vars.gains.sum() < 0.0)
        vars.gains = -vars.gains;
    double amp_sum = 0.0;
    for (const auto& p : vars.hrfs)
        amp_sum += p.amplitude;
    if (amp_sum < 0.0)
        for (auto& p : vars.hrfs)
            p.amplitude = -p.amplitude;
    return vars;
}

}  // namespace

BtdSolution solve_single(const BtdTarget& target, const SolverConfig& config, const BtdVariables& init) {
    config.validate();
    Eigen::VectorXd x = pack(init, target.dims());

    ceres::GradientProblem problem(new ScaledBtdObjective(target));
    ceres::GradientProblemSolver::Options options;
    options.line_search_direction_type = ceres::LBFGS;
    options.max_lbfgs_rank = config.lbfgs_memory;
    options.max_num_iterations = config.max_iterations;
    options.gradient_tolerance = config.gradient_tolerance;
    options.function_tolerance = config.cost_tolerance;
    options.parameter_tolerance = 1e-14;
    options.logging_type = ceres::SILENT;
    options.minimizer_progress_to_stdout = false;

    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(options, problem, x.data(), &summary);

    if (summary.termination_type == ceres::FAILURE || !x.allFinite())
        throw DivergenceError("quasi-Newton run failed: " + summary.message);

    BtdSolution sol;
    sol.variables = canonicalize(unpack(x, target.dims()));
    sol.final_cost = btd_cost(sol.variables, target);
    if (!std::isfinite(sol.final_cost))
        throw DivergenceError("non-finite final cost");
    sol.iterations = std::max(0, static_cast<int>(summary.iterations.size()) - 1);
    sol.converged = summary.termination_type == ceres::CONVERGENCE;
    sol.termination = summary.message;
    for (const auto& p : sol.variables.hrfs)
        sol.sampled_hrfs.push_back(
            normalize_peak(gamma_hrf(p, target.dims().dt, target.dims().filter_length)));
    return sol;
}

std::vector<BtdSolution> multi_start(const BtdTarget& target, const SolverConfig& config) {
    config.validate();
    const int wanted = config.n_starts;
    const int max_draws = 2 * wanted;

    auto run = [&](int index) -> std::optional<BtdSolution> {
        const std::uint64_t seed = derive_seed(config.seed, static_cast<std::uint64_t>(index));
        Rng rng(seed);
        try {
            BtdSolution sol = solve_single(target, config, random_init(target, rng));
            sol.seed = seed;
            sol.run_index = index;
            return sol;
        } catch (const DivergenceError&) {
            return std::nullopt;
        } catch (const SamplingError&) {
            return std::nullopt;
        }
    };

    std::vector<std::optional<BtdSolution>> first(wanted);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < wanted; ++i)
        first[i] = run(i);

    std::vector<BtdSolution> out;
    for (auto& s : first)
        if (s)
            out.push_back(std::move(*s));
    // Replacement draws continue the index sequence so results stay reproducible.
    for (int index = wanted; static_cast<int>(out.size()) < wanted && index < max_draws; ++index)
        if (auto s = run(index))
            out.push_back(std::move(*s));

    if (out.empty())
        throw PipelineError("all decomposition runs diverged");
    return out;
}

}  // namespace fusbtd
