#pragma once

#include "qmamba/common.hpp"
#include "qmamba/problem_suite.hpp"

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace qmamba::ea {

using bbob::SearchRange;

/// A (sub-)population with its objective values and best-so-far record.
struct Population {
    Matrix x;
    Vector fitness;
    Index best_index = 0;
    Vector best_so_far_x;
    double best_so_far_f = std::numeric_limits<double>::infinity();

    Index size() const { return x.rows(); }
    Index dim() const { return x.cols(); }

    /// Recomputes best_index and folds the current best into the best-so-far record.
    void refresh_best();
};

/// Evaluates every row and returns a population with a fresh best-so-far record.
Population evaluate_population(Matrix x, const bbob::ProblemInstance& problem);

enum class MutationVariant { current_to_rand_1, best_2, rand_2, current_to_best_1 };
enum class CrossoverVariant { exponential, mpx, binomial, sbx };
enum class GaMutationVariant { gaussian, polynomial };
enum class SelectionVariant { greedy_pairwise, roulette, tournament };
enum class PartnerSelector { uniform = 0, fitness_rank = 1 };

/// Bound-control methods in selector order.
enum class BoundMethod { clip = 0, rand = 1, periodic = 2, reflect = 3, halving = 4 };
inline constexpr int kBoundMethodCount = 5;

/// Controllable values of one operator application.
struct OperatorParams {
    double f1 = 0.5;
    double f2 = 0.5;
    double cr = 0.5;
    double sigma = 0.1;
    int eta_m = 1;
    int eta_c = 1;
    PartnerSelector partner = PartnerSelector::uniform;

    /// Throws std::invalid_argument when a value lies outside its declared range.
    void validate() const;
};

/// First n points of the radical-inverse Halton sequence (bases 2, 3, 5, ...) scaled into
/// range. With a seed the digits are scrambled by seeded per-dimension permutations that
/// fix digit 0; without one the plain sequence starting at index 1 is returned.
Matrix halton_init(Index n, Index dim, SearchRange range, std::optional<std::uint64_t> seed);

Matrix uniform_init(Index n, Index dim, SearchRange range, Rng& rng);

/// count distinct indices from [0, pool), none equal to exclude. Rejection sampling in
/// draw order.
std::vector<Index> draw_distinct(Index pool, int count, Index exclude, Rng& rng);

/// Index of a mating partner for row i drawn from a pool with the given fitness.
Index draw_partner(const Vector& fitness, Index i, PartnerSelector selector, Rng& rng);

/// Trial vectors; random indices are distinct and exclude the base row.
Matrix de_mutate(MutationVariant variant, const Population& pop, const OperatorParams& params,
                 Rng& rng);

/// Recombines base rows x with donor rows. For exponential and binomial the donor row i
/// pairs with x row i. MPX and SBX recombine donor row i with a partner donor row chosen by
/// params.partner over donor_fitness; x is unused by them.
Matrix crossover(CrossoverVariant variant, const Matrix& x, const Matrix& donor,
                 const Vector& donor_fitness, const OperatorParams& params, Rng& rng);

/// SBX spread factor.
double sbx_beta(double u, int eta_c);

/// Polynomial mutation of one gene for a given uniform draw u.
double polynomial_mutation(double x, double u, int eta_m, SearchRange range);

Matrix ga_mutate(GaMutationVariant variant, const Matrix& x, const OperatorParams& params,
                 SearchRange range, Rng& rng);

/// Rank weights over a pool: best gets P, worst gets 1. Ties keep index order.
Vector rank_weights(const Vector& fitness);

/// count draws with replacement, probability proportional to rank_weights(fitness).
std::vector<Index> roulette_draw(const Vector& fitness, Index count, Rng& rng);

/// Survivor selection. Roulette and tournament draw parents.size() survivors from the pool
/// parents + offspring. The best-so-far record covers every evaluated offspring.
Population select(SelectionVariant variant, const Population& parents,
                  const Population& offspring, Rng& rng);

/// Repairs out-of-range coordinates; in-range coordinates pass through unchanged. parent
/// supplies the reference point for halving and must lie inside range.
Matrix bound_control(int method, const Matrix& x, const Matrix& parent, SearchRange range,
                     Rng& rng);

/// Linear population size reduction target round(np_init + (np_final - np_init) * t / T).
Index lpsr_target(int t, int T, Index np_init, Index np_final);

/// Drops the worst members until lpsr_target is reached. Kept rows retain their order.
Population lpsr(const Population& pop, int t, int T, Index np_init, Index np_final);

/// For each i with cm[i] != i, replaces the worst member of pops[i] by the best member of
/// pops[cm[i]]. All donors are read before any replacement happens.
void share_information(std::vector<Population>& pops, std::span<const int> cm);

}  // namespace qmamba::ea
