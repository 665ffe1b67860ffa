#pragma once

#include "qmamba/q_learner.hpp"
#include "qmamba/trainer.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace qmamba::cli {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Runs `qmamba <args...>` in-process. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct EvalSetup {
    int alg_id = 0;
    int M = 16;
    int T = 50;
    std::vector<int> function_ids;
    std::optional<int> dim;
    std::uint64_t instance_seed = 0;
    int runs = 19;
    std::uint64_t seed = 0;
};

struct EvalRow {
    int problem = 0;
    int run = 0;
    double perf = 0.0;
    std::string policy;
};

/// Rolls out the greedy policy of net (when non-null) and the random policy on the same
/// episode seeds. Rows are ordered by problem, run, then policy.
std::vector<EvalRow> evaluate_policies(const EvalSetup& setup,
                                       std::shared_ptr<const qnet::QNetwork> net,
                                       bool include_random);

double mean(const std::vector<double>& v);
/// Sample standard deviation; 0 for fewer than two values.
double stddev(const std::vector<double>& v);

}  // namespace qmamba::cli
