#include "qmamba/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qmamba::alg {
namespace {

using ea::CrossoverVariant;
using ea::GaMutationVariant;
using ea::MutationVariant;
using ea::OperatorParams;
using ea::PartnerSelector;
using ea::Population;
using ea::SelectionVariant;
using Kind = HyperParameterSpec::Kind;

HyperParameterSpec continuous(std::string name) {
    HyperParameterSpec s;
    s.name = std::move(name);
    s.kind = Kind::continuous;
    return s;
}

HyperParameterSpec discrete(std::string name, std::vector<double> values,
                            std::vector<std::string> labels) {
    HyperParameterSpec s;
    s.name = std::move(name);
    s.kind = Kind::discrete;
    s.values = std::move(values);
    s.labels = std::move(labels);
    return s;
}

HyperParameterSpec partner_selector(std::string name) {
    return discrete(std::move(name), {0, 1}, {"uniform", "fitness_rank"});
}

HyperParameterSpec bound_selector(std::string name) {
    return discrete(std::move(name), {0, 1, 2, 3, 4},
                    {"clip", "rand", "periodic", "reflect", "halving"});
}

HyperParameterSpec sharing_target(std::string name, int count) {
    std::vector<double> values;
    std::vector<std::string> labels;
    for (int i = 0; i < count; ++i) {
        values.push_back(i);
        labels.push_back("subpop" + std::to_string(i + 1));
    }
    return discrete(std::move(name), std::move(values), std::move(labels));
}

int as_choice(double v) { return static_cast<int>(std::lround(v)); }

Population evolve_ga(const Population& pop, const OperatorParams& p, GaMutationVariant mutation,
                     int bound_method, SelectionVariant selection,
                     const bbob::ProblemInstance& problem, Rng& rng) {
    const auto range = problem.search_range();
    Matrix x = ea::crossover(CrossoverVariant::mpx, pop.x, pop.x, pop.fitness, p, rng);
    x = ea::ga_mutate(mutation, x, p, range, rng);
    x = ea::bound_control(bound_method, x, pop.x, range, rng);
    const Population offspring = ea::evaluate_population(std::move(x), problem);
    return ea::select(selection, pop, offspring, rng);
}

Population evolve_sbx(const Population& pop, const OperatorParams& p,
                      const bbob::ProblemInstance& problem, Rng& rng) {
    const auto range = problem.search_range();
    Matrix x = ea::crossover(CrossoverVariant::sbx, pop.x, pop.x, pop.fitness, p, rng);
    x = ea::ga_mutate(GaMutationVariant::gaussian, x, p, range, rng);
    x = ea::bound_control(static_cast<int>(ea::BoundMethod::clip), x, pop.x, range, rng);
    const Population offspring = ea::evaluate_population(std::move(x), problem);
    return ea::select(SelectionVariant::tournament, pop, offspring, rng);
}

Population evolve_de(const Population& pop, const OperatorParams& p, MutationVariant mutation,
                     CrossoverVariant cross, int bound_method,
                     const bbob::ProblemInstance& problem, Rng& rng) {
    const auto range = problem.search_range();
    const Matrix donor = ea::de_mutate(mutation, pop, p, rng);
    Matrix x = ea::crossover(cross, pop.x, donor, pop.fitness, p, rng);
    x = ea::bound_control(bound_method, x, pop.x, range, rng);
    const Population offspring = ea::evaluate_population(std::move(x), problem);
    return ea::select(SelectionVariant::greedy_pairwise, pop, offspring, rng);
}

void refresh_global_best(AlgorithmState& state) {
    for (const auto& p : state.subpops) {
        if (p.best_so_far_f < state.best_f) {
            state.best_f = p.best_so_far_f;
            state.best_x = p.best_so_far_x;
        }
    }
}

}  // namespace

std::vector<HyperParameterSpec> alg_spec(int alg_id) {
    std::vector<HyperParameterSpec> specs;
    switch (alg_id) {
        case 0:
            specs = {continuous("F1"), continuous("F2"), continuous("Cr")};
            break;
        case 1:
            specs = {continuous("Cr1"),       partner_selector("Xr_mpx"),
                     continuous("sigma"),     bound_selector("bc1"),
                     sharing_target("cm1", 2), continuous("F1"),
                     continuous("F2"),        continuous("Cr2"),
                     bound_selector("bc2"),   sharing_target("cm2", 2)};
            break;
        case 2:
            specs = {continuous("Cr1"),
                     partner_selector("Xr_mpx"),
                     discrete("eta_m", {1, 2, 3}, {"1", "2", "3"}),
                     discrete("eta_c", {1, 2, 3}, {"1", "2", "3"}),
                     partner_selector("Xr_sbx"),
                     continuous("sigma"),
                     continuous("F1_3"),
                     continuous("F2_3"),
                     continuous("Cr3"),
                     continuous("F1_4"),
                     continuous("F2_4"),
                     continuous("Cr4"),
                     sharing_target("cm1", 4),
                     sharing_target("cm2", 4),
                     sharing_target("cm3", 4),
                     sharing_target("cm4", 4)};
            break;
        default:
            throw std::invalid_argument("unknown algorithm id " + std::to_string(alg_id) +
                                        " (expected 0, 1 or 2)");
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        specs[i].index = static_cast<int>(i) + 1;
    }
    return specs;
}

int action_count(int alg_id) { return static_cast<int>(alg_spec(alg_id).size()); }

Index AlgorithmState::total_size() const {
    Index n = 0;
    for (const auto& p : subpops) {
        n += p.size();
    }
    return n;
}

double AlgorithmState::generation_best_f() const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : subpops) {
        best = std::min(best, p.fitness.minCoeff());
    }
    return best;
}

AlgorithmState init_state(int alg_id, const bbob::ProblemInstance& problem, int T,
                          std::uint64_t seed, const AlgorithmOptions& options) {
    if (T < 1) {
        throw std::invalid_argument("horizon T must be at least 1");
    }
    AlgorithmState state;
    state.alg_id = alg_id;
    state.T = T;
    const auto range = problem.search_range();
    const Index dim = problem.dim();

    std::vector<Index> sizes;
    switch (alg_id) {
        case 0: {
            sizes = {100};
            state.np_final = {std::min<Index>(options.alg0_np_final, 100)};
            Rng rng(derive_seed(seed, 0x1417));
            state.subpops.push_back(
                ea::evaluate_population(ea::uniform_init(100, dim, range, rng), problem));
            break;
        }
        case 1:
        case 2: {
            sizes = alg_id == 1 ? std::vector<Index>{50, 200} : std::vector<Index>{200, 100, 100, 100};
            state.np_final = alg_id == 1 ? std::vector<Index>{10, 200} : sizes;
            Index total = 0;
            for (Index s : sizes) {
                total += s;
            }
            const Matrix all = ea::halton_init(total, dim, range, derive_seed(seed, 0x4A17));
            Index offset = 0;
            for (Index s : sizes) {
                state.subpops.push_back(
                    ea::evaluate_population(all.middleRows(offset, s), problem));
                offset += s;
            }
            break;
        }
        default:
            throw std::invalid_argument("unknown algorithm id " + std::to_string(alg_id) +
                                        " (expected 0, 1 or 2)");
    }
    state.np_init = sizes;
    state.evaluations = state.total_size();
    state.best_f = std::numeric_limits<double>::infinity();
    refresh_global_best(state);
    state.previous_best_f = state.best_f;
    state.initial_best_f = state.best_f;
    state.initial_worst_f = -std::numeric_limits<double>::infinity();
    for (const auto& p : state.subpops) {
        state.initial_worst_f = std::max(state.initial_worst_f, p.fitness.maxCoeff());
    }
    return state;
}

void validate_config(int alg_id, std::span<const double> config) {
    const auto specs = alg_spec(alg_id);
    if (config.size() != specs.size()) {
        throw std::invalid_argument("Alg" + std::to_string(alg_id) + " expects " +
                                    std::to_string(specs.size()) + " values, got " +
                                    std::to_string(config.size()));
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const auto& s = specs[i];
        const double v = config[i];
        bool ok = false;
        if (s.is_discrete()) {
            ok = std::find(s.values.begin(), s.values.end(), v) != s.values.end();
        } else {
            ok = v >= s.lo && v <= s.hi;
        }
        if (!ok) {
            throw std::invalid_argument("illegal value " + std::to_string(v) + " for " + s.name);
        }
    }
}

std::int64_t step(AlgorithmState& state, std::span<const double> config,
                  const bbob::ProblemInstance& problem, Rng& rng,
                  const AlgorithmOptions& options) {
    validate_config(state.alg_id, config);
    if (state.t >= state.T) {
        throw std::logic_error("episode horizon already reached");
    }
    const std::int64_t before = state.evaluations;
    auto& pops = state.subpops;
    const int next_t = state.t + 1;

    switch (state.alg_id) {
        case 0: {
            OperatorParams p;
            p.f1 = config[0];
            p.f2 = config[1];
            p.cr = config[2];
            state.evaluations += pops[0].size();
            pops[0] = evolve_de(pops[0], p, MutationVariant::current_to_rand_1,
                                CrossoverVariant::exponential,
                                static_cast<int>(ea::BoundMethod::clip), problem, rng);
            pops[0] = ea::lpsr(pops[0], next_t, state.T, state.np_init[0], state.np_final[0]);
            break;
        }
        case 1: {
            OperatorParams ga;
            ga.cr = config[0];
            ga.partner = static_cast<PartnerSelector>(as_choice(config[1]));
            ga.sigma = config[2];
            OperatorParams de;
            de.f1 = config[5];
            de.f2 = config[6];
            de.cr = config[7];

            state.evaluations += pops[0].size() + pops[1].size();
            pops[0] = evolve_ga(pops[0], ga, GaMutationVariant::gaussian, as_choice(config[3]),
                                SelectionVariant::roulette, problem, rng);
            pops[1] = evolve_de(pops[1], de, MutationVariant::best_2, CrossoverVariant::binomial,
                                as_choice(config[8]), problem, rng);
            if (options.enable_sharing) {
                const std::vector<int> cm = {as_choice(config[4]), as_choice(config[9])};
                ea::share_information(pops, cm);
            }
            pops[0] = ea::lpsr(pops[0], next_t, state.T, state.np_init[0], state.np_final[0]);
            break;
        }
        case 2: {
            OperatorParams p1;
            p1.cr = config[0];
            p1.partner = static_cast<PartnerSelector>(as_choice(config[1]));
            p1.eta_m = as_choice(config[2]);
            OperatorParams p2;
            p2.eta_c = as_choice(config[3]);
            p2.partner = static_cast<PartnerSelector>(as_choice(config[4]));
            p2.sigma = config[5];
            OperatorParams p3;
            p3.f1 = config[6];
            p3.f2 = config[7];
            p3.cr = config[8];
            OperatorParams p4;
            p4.f1 = config[9];
            p4.f2 = config[10];
            p4.cr = config[11];

            state.evaluations += state.total_size();
            const int clip = static_cast<int>(ea::BoundMethod::clip);
            pops[0] = evolve_ga(pops[0], p1, GaMutationVariant::polynomial, clip,
                                SelectionVariant::roulette, problem, rng);
            pops[1] = evolve_sbx(pops[1], p2, problem, rng);
            pops[2] = evolve_de(pops[2], p3, MutationVariant::rand_2,
                                CrossoverVariant::exponential, clip, problem, rng);
            pops[3] = evolve_de(pops[3], p4, MutationVariant::current_to_best_1,
                                CrossoverVariant::binomial, clip, problem, rng);
            if (options.enable_sharing) {
                const std::vector<int> cm = {as_choice(config[12]), as_choice(config[13]),
                                             as_choice(config[14]), as_choice(config[15])};
                ea::share_information(pops, cm);
            }
            break;
        }
        default:
            throw std::invalid_argument("unknown algorithm id");
    }

    state.previous_best_f = state.best_f;
    refresh_global_best(state);
    state.stagnation = state.best_f < state.previous_best_f ? 0 : state.stagnation + 1;
    state.t = next_t;
    return state.evaluations - before;
}

}  // namespace qmamba::alg
