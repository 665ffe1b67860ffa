#include "qmamba/ea_components.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace qmamba;
using namespace qmamba::ea;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -5.0, double hi = 5.0) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(lo, hi);
    }
    return m;
}

Population random_population(Index np, Index dim, std::uint64_t seed) {
    Rng rng(seed);
    Population p;
    p.x = random_matrix(np, dim, rng);
    p.fitness = Vector(np);
    for (Index i = 0; i < np; ++i) {
        p.fitness[i] = p.x.row(i).squaredNorm();
    }
    p.refresh_best();
    return p;
}

// Star discrepancy over anchored boxes with corners on the point grid.
double star_discrepancy(const Matrix& pts) {
    const Index n = pts.rows();
    std::vector<double> xs{1.0};
    std::vector<double> ys{1.0};
    for (Index i = 0; i < n; ++i) {
        xs.push_back(pts(i, 0));
        ys.push_back(pts(i, 1));
    }
    double worst = 0.0;
    for (double a : xs) {
        for (double b : ys) {
            int open = 0;
            int closed = 0;
            for (Index i = 0; i < n; ++i) {
                open += (pts(i, 0) < a && pts(i, 1) < b) ? 1 : 0;
                closed += (pts(i, 0) <= a && pts(i, 1) <= b) ? 1 : 0;
            }
            const double vol = a * b;
            worst = std::max({worst, std::abs(open / double(n) - vol), std::abs(closed / double(n) - vol)});
        }
    }
    return worst;
}

}  // namespace

TEST(Halton, UnscrambledFirstPoint) {
    const Matrix h = halton_init(3, 2, {0.0, 1.0}, std::nullopt);
    EXPECT_DOUBLE_EQ(h(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(h(0, 1), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(h(1, 0), 0.25);
    EXPECT_DOUBLE_EQ(h(1, 1), 2.0 / 3.0);
}

TEST(Halton, PointsInsideRange) {
    const Matrix h = halton_init(200, 10, {-5.0, 5.0}, 17);
    EXPECT_GE(h.minCoeff(), -5.0);
    EXPECT_LE(h.maxCoeff(), 5.0);
}

TEST(Halton, LowerDiscrepancyThanUniform) {
    double halton = 0.0;
    double uniform = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        halton += star_discrepancy(halton_init(64, 2, {0.0, 1.0}, s));
        Rng rng(s);
        uniform += star_discrepancy(uniform_init(64, 2, {0.0, 1.0}, rng));
    }
    EXPECT_LT(halton, uniform);
}

TEST(DrawDistinct, DistinctAndExcluding) {
    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        const auto r = draw_distinct(6, 5, 2, rng);
        std::set<Index> s(r.begin(), r.end());
        EXPECT_EQ(s.size(), 5u);
        EXPECT_EQ(s.count(2), 0u);
    }
    EXPECT_THROW(draw_distinct(5, 5, 0, rng), std::invalid_argument);
}

TEST(DeMutate, MatchesScalarOracle) {
    for (auto v : {MutationVariant::current_to_rand_1, MutationVariant::best_2,
                   MutationVariant::rand_2, MutationVariant::current_to_best_1}) {
        const auto pop = random_population(8, 3, 5);
        OperatorParams p;
        p.f1 = 0.37;
        p.f2 = 0.81;
        Rng a(99);
        Rng b(99);
        const Matrix got = de_mutate(v, pop, p, a);
        const auto want = oracle::de_mutate(v, oracle::to_rows(pop.x),
                                            static_cast<std::size_t>(pop.best_index), p.f1, p.f2, b);
        EXPECT_LE(oracle::max_abs_diff(want, got), 1e-12);
    }
}

TEST(DeMutate, DegenerateIdentities) {
    const auto pop = random_population(8, 3, 6);
    OperatorParams zero;
    zero.f1 = 0.0;
    zero.f2 = 0.0;
    Rng rng(1);
    EXPECT_EQ(de_mutate(MutationVariant::current_to_rand_1, pop, zero, rng), pop.x);
    OperatorParams to_best;
    to_best.f1 = 1.0;
    to_best.f2 = 0.0;
    const Matrix m = de_mutate(MutationVariant::current_to_best_1, pop, to_best, rng);
    for (Index i = 0; i < m.rows(); ++i) {
        EXPECT_EQ(m.row(i), pop.x.row(pop.best_index));
    }
}

TEST(DeMutate, Best2HandExpansion) {
    Population pop;
    pop.x.resize(6, 2);
    pop.x << 0, 0, 1, 2, 3, 1, -1, 4, 2, -2, 5, 5;
    pop.fitness = Vector(6);
    for (Index i = 0; i < 6; ++i) {
        pop.fitness[i] = pop.x.row(i).squaredNorm();
    }
    pop.refresh_best();
    OperatorParams p;
    p.f1 = 0.5;
    p.f2 = 0.25;
    Rng a(8);
    const Matrix m = de_mutate(MutationVariant::best_2, pop, p, a);
    Rng b(8);
    for (Index i = 0; i < 6; ++i) {
        const auto r = draw_distinct(6, 4, i, b);
        const Vector expect = pop.x.row(0).transpose() +
                              0.5 * (pop.x.row(r[0]) - pop.x.row(r[1])).transpose() +
                              0.25 * (pop.x.row(r[2]) - pop.x.row(r[3])).transpose();
        EXPECT_LT((m.row(i).transpose() - expect).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(DeMutate, TooSmallPopulationThrows) {
    const auto pop = random_population(5, 2, 1);
    Rng rng(1);
    EXPECT_THROW(de_mutate(MutationVariant::rand_2, pop, {}, rng), std::invalid_argument);
}

TEST(Crossover, MatchesScalarOracles) {
    Rng init(21);
    const Matrix x = random_matrix(8, 3, init);
    const Matrix donor = random_matrix(8, 3, init);
    const Vector fit = donor.rowwise().squaredNorm();
    OperatorParams p;
    p.cr = 0.6;
    p.eta_c = 2;
    {
        Rng a(4), b(4);
        EXPECT_LE(oracle::max_abs_diff(
                      oracle::exponential(oracle::to_rows(x), oracle::to_rows(donor), p.cr, b),
                      crossover(CrossoverVariant::exponential, x, donor, fit, p, a)),
                  1e-12);
    }
    {
        Rng a(5), b(5);
        EXPECT_LE(oracle::max_abs_diff(
                      oracle::binomial(oracle::to_rows(x), oracle::to_rows(donor), p.cr, b),
                      crossover(CrossoverVariant::binomial, x, donor, fit, p, a)),
                  1e-12);
    }
    {
        Rng a(6), b(6);
        EXPECT_LE(oracle::max_abs_diff(oracle::mpx(oracle::to_rows(donor), p.cr, b),
                                       crossover(CrossoverVariant::mpx, x, donor, fit, p, a)),
                  1e-12);
    }
    for (int eta : {1, 2, 3}) {
        p.eta_c = eta;
        Rng a(7), b(7);
        EXPECT_LE(oracle::max_abs_diff(oracle::sbx(oracle::to_rows(donor), eta, b),
                                       crossover(CrossoverVariant::sbx, x, donor, fit, p, a)),
                  1e-12);
    }
}

TEST(Crossover, BinomialDegenerateRates) {
    Rng init(2);
    const Matrix x = random_matrix(8, 3, init);
    const Matrix donor = random_matrix(8, 3, init);
    OperatorParams p;
    p.cr = 1.0;
    Rng rng(3);
    EXPECT_EQ(crossover(CrossoverVariant::binomial, x, donor, Vector::Zero(8), p, rng), donor);
    p.cr = 0.0;
    const Matrix out = crossover(CrossoverVariant::binomial, x, donor, Vector::Zero(8), p, rng);
    for (Index i = 0; i < 8; ++i) {
        EXPECT_EQ((out.row(i).array() != x.row(i).array()).count(), 1);
    }
}

TEST(Crossover, ExponentialDegenerateRates) {
    Rng init(2);
    const Matrix x = random_matrix(8, 3, init);
    const Matrix donor = random_matrix(8, 3, init);
    OperatorParams p;
    p.cr = 1.0;
    Rng rng(3);
    EXPECT_EQ(crossover(CrossoverVariant::exponential, x, donor, Vector::Zero(8), p, rng), donor);
    p.cr = 0.0;
    const Matrix out = crossover(CrossoverVariant::exponential, x, donor, Vector::Zero(8), p, rng);
    for (Index i = 0; i < 8; ++i) {
        EXPECT_EQ((out.row(i).array() != x.row(i).array()).count(), 1);
    }
}

TEST(Crossover, MpxDegenerateRates) {
    Rng init(2);
    const Matrix x = random_matrix(8, 3, init);
    const Matrix donor = random_matrix(8, 3, init);
    const Vector fit = donor.rowwise().squaredNorm();
    OperatorParams p;
    p.cr = 0.0;
    Rng rng(3);
    EXPECT_EQ(crossover(CrossoverVariant::mpx, x, donor, fit, p, rng), donor);
}

TEST(Crossover, SbxHandComputation) {
    // u just below 1/2 gives beta = (2u)^(1/(1+eta)).
    const double u = std::nextafter(0.5, 0.0);
    for (int eta : {1, 2, 3}) {
        EXPECT_DOUBLE_EQ(sbx_beta(u, eta), std::pow(2.0 * u, 1.0 / (1.0 + eta)));
    }
    EXPECT_DOUBLE_EQ(sbx_beta(0.75, 1), std::pow(2.0, 0.5));
}

TEST(GaMutation, MatchesScalarOracles) {
    Rng init(31);
    const Matrix x = random_matrix(8, 3, init);
    OperatorParams p;
    p.sigma = 0.2;
    for (int eta : {1, 2, 3}) {
        p.eta_m = eta;
        Rng a(12), b(12);
        EXPECT_LE(oracle::max_abs_diff(oracle::polynomial(oracle::to_rows(x), eta, -5.0, 5.0, b),
                                       ga_mutate(GaMutationVariant::polynomial, x, p, {}, a)),
                  1e-12);
    }
    Rng a(13), b(13);
    EXPECT_LE(oracle::max_abs_diff(oracle::gaussian(oracle::to_rows(x), p.sigma, -5.0, 5.0, b),
                                   ga_mutate(GaMutationVariant::gaussian, x, p, {}, a)),
              1e-12);
}

TEST(GaMutation, DegenerateIdentities) {
    Rng init(1);
    const Matrix x = random_matrix(8, 3, init);
    OperatorParams p;
    p.sigma = 0.0;
    Rng rng(2);
    EXPECT_EQ(ga_mutate(GaMutationVariant::gaussian, x, p, {}, rng), x);
    for (int eta : {1, 2, 3}) {
        EXPECT_EQ(polynomial_mutation(1.25, 0.5, eta, {}), 1.25);
    }
}

TEST(GaMutation, GaussianSpreadMatchesSigma) {
    Matrix x = Matrix::Zero(100000, 1);
    OperatorParams p;
    p.sigma = 0.1;
    Rng rng(77);
    const Matrix y = ga_mutate(GaMutationVariant::gaussian, x, p, {}, rng);
    const double m = y.mean();
    const double sd = std::sqrt((y.array() - m).square().sum() / (y.size() - 1));
    EXPECT_NEAR(sd, 1.0, 0.03);
}

TEST(Selection, GreedyKeepsElementwiseBest) {
    auto parents = random_population(8, 3, 1);
    auto offspring = random_population(8, 3, 2);
    Rng rng(0);
    const auto out = select(SelectionVariant::greedy_pairwise, parents, offspring, rng);
    for (Index i = 0; i < 8; ++i) {
        EXPECT_EQ(out.fitness[i], std::min(parents.fitness[i], offspring.fitness[i]));
        EXPECT_LE(out.fitness[i], parents.fitness[i]);
    }
    EXPECT_LE(out.best_so_far_f, std::min(parents.best_so_far_f, offspring.best_so_far_f));
}

TEST(Selection, GreedyDominatingOffspringReplaceAll) {
    auto parents = random_population(8, 3, 1);
    auto offspring = parents;
    offspring.x *= 0.5;
    offspring.fitness *= 0.25;
    offspring.best_so_far_f = offspring.fitness.minCoeff();
    Rng rng(0);
    const auto out = select(SelectionVariant::greedy_pairwise, parents, offspring, rng);
    EXPECT_EQ(out.x, offspring.x);
}

TEST(Selection, RouletteFrequenciesMatchRankWeights) {
    Vector f(4);
    f << 3.0, 1.0, 4.0, 2.0;
    const Vector w = rank_weights(f);
    EXPECT_EQ(w[1], 4.0);
    EXPECT_EQ(w[2], 1.0);
    Rng rng(5);
    const auto draws = roulette_draw(f, 100000, rng);
    std::vector<double> freq(4, 0.0);
    for (auto d : draws) {
        freq[static_cast<std::size_t>(d)] += 1.0 / 100000.0;
    }
    for (Index i = 0; i < 4; ++i) {
        EXPECT_NEAR(freq[static_cast<std::size_t>(i)], w[i] / 10.0, 0.02);
    }
}

TEST(Selection, TournamentAndRouletteKeepSize) {
    auto parents = random_population(8, 3, 1);
    auto offspring = random_population(5, 3, 2);
    Rng rng(3);
    for (auto v : {SelectionVariant::roulette, SelectionVariant::tournament}) {
        const auto out = select(v, parents, offspring, rng);
        EXPECT_EQ(out.size(), 8);
        EXPECT_LE(out.best_so_far_f, offspring.best_so_far_f);
    }
}

TEST(BoundControl, MatchesScalarOracleAndStaysInRange) {
    Rng init(41);
    const Matrix x = random_matrix(8, 3, init, -12.0, 12.0);
    const Matrix parent = random_matrix(8, 3, init);
    for (int method = 0; method < kBoundMethodCount; ++method) {
        Rng a(50), b(50);
        const Matrix got = bound_control(method, x, parent, {}, a);
        EXPECT_LE(oracle::max_abs_diff(
                      oracle::bound(method, oracle::to_rows(x), oracle::to_rows(parent), -5, 5, b),
                      got),
                  1e-12)
            << method;
        EXPECT_GE(got.minCoeff(), -5.0);
        EXPECT_LE(got.maxCoeff(), 5.0);
        for (Index i = 0; i < x.size(); ++i) {
            if (std::abs(x.data()[i]) <= 5.0) {
                EXPECT_EQ(got.data()[i], x.data()[i]);
            }
        }
    }
}

TEST(BoundControl, ScalarExamples) {
    Matrix x(1, 1);
    Matrix parent(1, 1);
    parent << 1.0;
    Rng rng(0);
    x << 6.0;
    EXPECT_EQ(bound_control(0, x, parent, {}, rng)(0, 0), 5.0);
    x << 5.5;
    EXPECT_DOUBLE_EQ(bound_control(3, x, parent, {}, rng)(0, 0), 4.5);
    EXPECT_DOUBLE_EQ(bound_control(2, x, parent, {}, rng)(0, 0), -4.5);
    EXPECT_DOUBLE_EQ(bound_control(4, x, parent, {}, rng)(0, 0), 3.0);
    EXPECT_THROW(bound_control(5, x, parent, {}, rng), std::invalid_argument);
}

TEST(Lpsr, LinearTarget) {
    EXPECT_EQ(lpsr_target(0, 50, 50, 10), 50);
    EXPECT_EQ(lpsr_target(50, 50, 50, 10), 10);
    EXPECT_EQ(lpsr_target(25, 50, 50, 10), 30);
}

TEST(Lpsr, RemovesWorstMembers) {
    const auto pop = random_population(50, 2, 3);
    const auto out = lpsr(pop, 25, 50, 50, 10);
    ASSERT_EQ(out.size(), 30);
    std::vector<double> sorted(pop.fitness.data(), pop.fitness.data() + 50);
    std::sort(sorted.begin(), sorted.end());
    EXPECT_LE(out.fitness.maxCoeff(), sorted[29]);
    EXPECT_EQ(out.best_so_far_f, pop.best_so_far_f);
}

TEST(Sharing, IdentityIsNoop) {
    std::vector<Population> pops{random_population(5, 2, 1), random_population(5, 2, 2)};
    const auto before = pops;
    const std::vector<int> cm{0, 1};
    share_information(pops, cm);
    EXPECT_EQ(pops[0].x, before[0].x);
    EXPECT_EQ(pops[1].x, before[1].x);
}

TEST(Sharing, SwapUsesPreUpdateBests) {
    std::vector<Population> pops{random_population(5, 2, 1), random_population(5, 2, 2)};
    const auto before = pops;
    const std::vector<int> cm{1, 0};
    share_information(pops, cm);
    Index w0 = 0;
    Index w1 = 0;
    before[0].fitness.maxCoeff(&w0);
    before[1].fitness.maxCoeff(&w1);
    EXPECT_EQ(pops[0].x.row(w0), before[1].x.row(before[1].best_index));
    EXPECT_EQ(pops[1].x.row(w1), before[0].x.row(before[0].best_index));
    EXPECT_LE(std::min(pops[0].best_so_far_f, pops[1].best_so_far_f),
              std::min(before[0].best_so_far_f, before[1].best_so_far_f));
    const std::vector<int> bad{2, 0};
    EXPECT_THROW(share_information(pops, bad), std::out_of_range);
}

TEST(OperatorParams, ValidatesRanges) {
    OperatorParams p;
    p.cr = 1.5;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p.cr = 0.5;
    p.eta_c = 4;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}
