#pragma once

#include "qmamba/common.hpp"
#include "qmamba/dac_env.hpp"
#include "qmamba/q_learner.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace qmamba::train {

struct LossConfig {
    double beta = 10.0;
    double lambda = 1.0;
    double gamma = 0.99;
    int batch_size = 64;
    int epochs = 300;
    double learning_rate = 5e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossBreakdown {
    double total = 0.0;
    double td_intra = 0.0;
    double td_last = 0.0;
    double conservative = 0.0;
    /// dLoss/dQ with every target held fixed.
    Matrix grad_q;
};

/// Deliberate defects for mutation testing of the gradient checker.
enum class LossFault { none, flip_conservative_sign };

/// Target of the chosen bin of every (t, i) row: the next dimension's masked max for
/// i < K, r + gamma * next step's first-dimension max for i = K (0 after the last step).
Vector compute_targets(const Matrix& q, const env::Trajectory& traj, const std::vector<int>& masks,
                       const LossConfig& cfg);

/// Compositional conservative loss of one trajectory. Targets come from q itself unless
/// fixed_targets is given; either way they carry no gradient.
LossBreakdown q_loss(const Matrix& q, const env::Trajectory& traj, const std::vector<int>& masks,
                     const LossConfig& cfg, const Vector* fixed_targets = nullptr,
                     LossFault fault = LossFault::none);

/// Decoupled-weight-decay Adam over the tensors of a QNetwork.
class AdamW {
public:
    AdamW() = default;
    AdamW(const qnet::QNetwork& net, const LossConfig& cfg);

    void step(qnet::QNetwork& net, qnet::QNetwork& grads);

    std::int64_t step_count() const { return t_; }
    const std::vector<Vector>& moment1() const { return m_; }
    const std::vector<Vector>& moment2() const { return v_; }
    void restore(std::int64_t t, std::vector<Vector> m, std::vector<Vector> v);

private:
    double lr_ = 0.0;
    double wd_ = 0.0;
    double b1_ = 0.9;
    double b2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<Vector> m_;
    std::vector<Vector> v_;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double td_intra = 0.0;
    double td_last = 0.0;
    double conservative = 0.0;
};

/// Loss and parameter gradients of one trajectory.
struct TrajectoryGradient {
    LossBreakdown loss;
    qnet::QNetwork grads;
};

TrajectoryGradient trajectory_gradient(const qnet::QNetwork& net, const env::Trajectory& traj,
                                       const std::vector<int>& masks, const LossConfig& cfg);

/// Mean teacher-forced loss over a set of trajectories.
double dataset_loss(const qnet::QNetwork& net, const std::vector<env::Trajectory>& data,
                    const std::vector<int>& masks, const LossConfig& cfg);

using EpochCallback = std::function<void(const EpochStats&, const qnet::QNetwork&, const AdamW&)>;

/// Runs epochs first_epoch .. cfg.epochs - 1. Each epoch shuffles whole trajectories with a
/// stream derived from (cfg.seed, epoch), so a resumed run continues the same sequence.
std::vector<EpochStats> train(const std::vector<env::Trajectory>& data, qnet::QNetwork& net,
                              const std::vector<int>& masks, const LossConfig& cfg,
                              AdamW& optimizer, int first_epoch = 0,
                              const EpochCallback& on_epoch = {});

struct TabularMdp {
    int states = 1;
    int k = 1;
    int m = 2;
    double gamma = 0.9;
    /// rewards[s * joint + a], joint actions encoded with a_1 as the most significant digit.
    std::vector<double> rewards;
    /// transitions[(s * joint + a) * states + s'].
    std::vector<double> transitions;

    int joint_actions() const;
    void validate() const;
};

TabularMdp random_mdp(int states, int k, int m, double gamma, std::uint64_t seed);

struct DecompositionReport {
    bool passed = false;
    double max_value_gap = 0.0;
    int greedy_checked = 0;
    int greedy_mismatches = 0;
    int iterations_full = 0;
    int iterations_decomposed = 0;
    std::vector<double> v_full;
    std::vector<double> v_decomposed;
    /// q_levels[i][s * m^(i+1) + prefix] is Q_{i+1}(a_{1:i+1} | s).
    std::vector<std::vector<double>> q_levels;
};

/// Joint-action value iteration against per-dimension fixed-point iteration.
DecompositionReport verify_decomposition(const TabularMdp& mdp, double tol);

struct GradCheckOptions {
    double h = 1e-4;
    double rel_tol = 1e-4;
    double min_grad = 1e-6;
    LossFault fault = LossFault::none;
};

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::string worst_tensor;
    Index worst_index = 0;
    Index checked = 0;
    Index skipped_kinks = 0;
    Index coordinates = 0;
    double analytic_abs_max = 0.0;
    double fd_abs_max = 0.0;
    /// FD error at 2h over FD error at h on the coordinate with the largest gradient,
    /// measured at h = 1e-2; about 4 for a second-order scheme.
    double richardson_ratio = 0.0;
};

GradCheckReport grad_check(const qnet::QNetwork& net, const env::Trajectory& traj,
                           const std::vector<int>& masks, const LossConfig& cfg,
                           const GradCheckOptions& options = {});

}  // namespace qmamba::train
