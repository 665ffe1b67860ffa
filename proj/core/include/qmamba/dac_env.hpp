#pragma once

#include "qmamba/algorithms.hpp"
#include "qmamba/common.hpp"
#include "qmamba/problem_suite.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qmamba::env {

inline constexpr int kStateDim = 9;
using OptimizationState = std::array<double, kStateDim>;

struct StepRecord {
    OptimizationState state{};
    /// 0-based bin per hyper-parameter.
    std::vector<int> actions;
    double reward = 0.0;
    /// Best-so-far objective value after the step.
    double best_so_far_f = 0.0;
};

struct TrajectoryMeta {
    int alg_id = 0;
    int K = 0;
    int M = 16;
    int function_id = 1;
    int dim = 5;
    std::uint64_t instance_seed = 0;
    std::uint64_t episode_seed = 0;
    int T = 0;
    std::string policy_id;
    /// "exploitation" or "exploration".
    std::string role;
    double f_best_init = 0.0;
    double f_star = 0.0;
};

struct Trajectory {
    TrajectoryMeta meta;
    std::vector<StepRecord> steps;

    double total_reward() const;
};

/// Decides the bins of one generation. Stateful policies (e.g. a recurrent network) keep
/// their memory inside the callable, so each episode needs its own instance.
using Policy = std::function<std::vector<int>(const OptimizationState&, int t)>;

/// Features of the union of all sub-populations. With normalize set, s1..s3 are divided by
/// the search-space diameter and s4..s6 by (initial worst value - f_star).
OptimizationState cal_state(const alg::AlgorithmState& state, const bbob::SearchRange& range,
                            double f_star, bool normalize = true);

/// Relative improvement (f_prev - f_now) / (f_init - f_star); 0 when f_init == f_star.
double reward(double f_best_prev, double f_best_now, double f_best_init, double f_star);

/// Value of a bin on the uniform M-point grid, or the bin-th discrete choice.
double decode_action(const alg::HyperParameterSpec& spec, int bin, int M = 16);

/// Nearest grid bin for a continuous value.
int encode_value(const alg::HyperParameterSpec& spec, double value, int M = 16);

/// Number of admissible bins: M for continuous parameters, m_i for discrete ones.
int mask_bins(const alg::HyperParameterSpec& spec, int M = 16);

std::vector<int> action_masks(int alg_id, int M = 16);

std::vector<double> decode_config(const std::vector<alg::HyperParameterSpec>& specs,
                                  const std::vector<int>& bins, int M = 16);

struct EpisodeConfig {
    int alg_id = 0;
    int T = 50;
    int M = 16;
    std::uint64_t episode_seed = 0;
    bool normalize = true;
    alg::AlgorithmOptions options{};
    std::string policy_id = "unnamed";
    std::string role = "exploration";
    /// Replaces the analytic optimum as reward normaliser when set.
    std::optional<double> f_star;
};

Trajectory run_episode(const EpisodeConfig& cfg, const bbob::ProblemInstance& problem,
                       const Policy& policy);

/// Best objective value reached by `runs` uniformly random episodes. A stand-in for the
/// optimum when it is unknown.
double surrogate_optimum(const EpisodeConfig& cfg, const bbob::ProblemInstance& problem,
                         int runs);

}  // namespace qmamba::env
