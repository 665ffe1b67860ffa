#pragma once

#include "qmamba/common.hpp"
#include "qmamba/ea_components.hpp"
#include "qmamba/problem_suite.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace qmamba::alg {

/// One controllable hyper-parameter. Continuous kinds carry [lo, hi]; discrete kinds carry
/// their candidate values, which for operator selectors are the 0-based choice indices.
struct HyperParameterSpec {
    enum class Kind { continuous, discrete };

    std::string name;
    Kind kind = Kind::continuous;
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> values;
    std::vector<std::string> labels;
    /// 1-based position in the action sequence.
    int index = 1;

    bool is_discrete() const { return kind == Kind::discrete; }
    int choice_count() const { return static_cast<int>(values.size()); }
};

/// Throws std::invalid_argument for alg_id outside {0, 1, 2}.
std::vector<HyperParameterSpec> alg_spec(int alg_id);

int action_count(int alg_id);

struct AlgorithmOptions {
    /// Alg0 shrinks from 100 toward this size; 100 leaves it constant.
    Index alg0_np_final = 100;
    bool enable_sharing = true;
};

struct AlgorithmState {
    int alg_id = 0;
    std::vector<ea::Population> subpops;
    int t = 0;
    int T = 1;
    int stagnation = 0;
    std::vector<Index> np_init;
    std::vector<Index> np_final;

    double best_f = 0.0;
    Vector best_x;
    /// Best-so-far value before the most recent step.
    double previous_best_f = 0.0;
    double initial_best_f = 0.0;
    double initial_worst_f = 0.0;
    std::int64_t evaluations = 0;

    Index total_size() const;
    /// Lowest objective value among the current members of all sub-populations.
    double generation_best_f() const;
};

AlgorithmState init_state(int alg_id, const bbob::ProblemInstance& problem, int T,
                          std::uint64_t seed, const AlgorithmOptions& options = {});

/// Checks length and legality of a concrete configuration against alg_spec.
void validate_config(int alg_id, std::span<const double> config);

/// Advances one generation in place and returns the number of objective evaluations spent.
std::int64_t step(AlgorithmState& state, std::span<const double> config,
                  const bbob::ProblemInstance& problem, Rng& rng,
                  const AlgorithmOptions& options = {});

}  // namespace qmamba::alg
