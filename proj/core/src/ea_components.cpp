#include "qmamba/ea_components.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qmamba::ea {
namespace {

std::vector<int> first_primes(Index count) {
    std::vector<int> primes;
    for (int candidate = 2; static_cast<Index>(primes.size()) < count; ++candidate) {
        bool prime = true;
        for (int p : primes) {
            if (p * p > candidate) {
                break;
            }
            if (candidate % p == 0) {
                prime = false;
                break;
            }
        }
        if (prime) {
            primes.push_back(candidate);
        }
    }
    return primes;
}

double radical_inverse(std::uint64_t index, int base, const std::vector<int>* perm) {
    const double inv_base = 1.0 / base;
    double scale = inv_base;
    double result = 0.0;
    while (index > 0) {
        int digit = static_cast<int>(index % static_cast<std::uint64_t>(base));
        if (perm != nullptr) {
            digit = (*perm)[static_cast<std::size_t>(digit)];
        }
        result += digit * scale;
        index /= static_cast<std::uint64_t>(base);
        scale *= inv_base;
    }
    return result;
}

Index argmax(const Vector& v) {
    Index best = 0;
    v.maxCoeff(&best);
    return best;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

void Population::refresh_best() {
    if (fitness.size() == 0) {
        throw std::invalid_argument("population is empty");
    }
    fitness.minCoeff(&best_index);
    if (fitness[best_index] < best_so_far_f) {
        best_so_far_f = fitness[best_index];
        best_so_far_x = x.row(best_index).transpose();
    }
}

Population evaluate_population(Matrix x, const bbob::ProblemInstance& problem) {
    Population pop;
    pop.fitness = problem.evaluate_rows(x);
    pop.x = std::move(x);
    pop.refresh_best();
    return pop;
}

void OperatorParams::validate() const {
    auto unit = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument(std::string(name) + " must lie in [0, 1], got " +
                                        std::to_string(v));
        }
    };
    unit(f1, "F1");
    unit(f2, "F2");
    unit(cr, "Cr");
    unit(sigma, "sigma");
    if (eta_m < 1 || eta_m > 3 || eta_c < 1 || eta_c > 3) {
        throw std::invalid_argument("eta_m and eta_c must be 1, 2 or 3");
    }
}

Matrix halton_init(Index n, Index dim, SearchRange range, std::optional<std::uint64_t> seed) {
    const auto primes = first_primes(dim);
    std::vector<std::vector<int>> perms;
    if (seed) {
        Rng rng(*seed);
        for (int base : primes) {
            std::vector<int> perm(static_cast<std::size_t>(base));
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin() + 1, perm.end(), rng.engine());
            perms.push_back(std::move(perm));
        }
    }
    Matrix out(n, dim);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < dim; ++j) {
            const auto* perm = seed ? &perms[static_cast<std::size_t>(j)] : nullptr;
            const double u =
                radical_inverse(static_cast<std::uint64_t>(i + 1), primes[static_cast<std::size_t>(j)], perm);
            out(i, j) = range.lo + range.width() * u;
        }
    }
    return out;
}

Matrix uniform_init(Index n, Index dim, SearchRange range, Rng& rng) {
    Matrix out(n, dim);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < dim; ++j) {
            out(i, j) = rng.uniform(range.lo, range.hi);
        }
    }
    return out;
}

std::vector<Index> draw_distinct(Index pool, int count, Index exclude, Rng& rng) {
    const Index available = pool - ((exclude >= 0 && exclude < pool) ? 1 : 0);
    if (available < count) {
        throw std::invalid_argument("population of " + std::to_string(pool) +
                                    " is too small to draw " + std::to_string(count) +
                                    " distinct partners");
    }
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<int>(out.size()) < count) {
        const Index r = rng.index(pool);
        if (r == exclude || std::find(out.begin(), out.end(), r) != out.end()) {
            continue;
        }
        out.push_back(r);
    }
    return out;
}

Vector rank_weights(const Vector& fitness) {
    const Index n = fitness.size();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return fitness[a] < fitness[b]; });
    Vector w(n);
    for (Index rank = 0; rank < n; ++rank) {
        w[order[static_cast<std::size_t>(rank)]] = static_cast<double>(n - rank);
    }
    return w;
}

std::vector<Index> roulette_draw(const Vector& fitness, Index count, Rng& rng) {
    const Vector w = rank_weights(fitness);
    std::vector<double> cumulative(static_cast<std::size_t>(w.size()));
    std::partial_sum(w.data(), w.data() + w.size(), cumulative.begin());
    const double total = cumulative.back();
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        out.push_back(std::min<Index>(static_cast<Index>(it - cumulative.begin()), w.size() - 1));
    }
    return out;
}

Index draw_partner(const Vector& fitness, Index i, PartnerSelector selector, Rng& rng) {
    const Index n = fitness.size();
    if (n < 2) {
        throw std::invalid_argument("mating needs at least two individuals");
    }
    if (selector == PartnerSelector::uniform) {
        return draw_distinct(n, 1, i, rng).front();
    }
    for (;;) {
        const Index r = roulette_draw(fitness, 1, rng).front();
        if (r != i) {
            return r;
        }
    }
}

Matrix de_mutate(MutationVariant variant, const Population& pop, const OperatorParams& params,
                 Rng& rng) {
    params.validate();
    const Index np = pop.size();
    const auto& x = pop.x;
    const auto best = x.row(pop.best_index);
    Matrix out(np, pop.dim());
    for (Index i = 0; i < np; ++i) {
        switch (variant) {
            case MutationVariant::current_to_rand_1: {
                const auto r = draw_distinct(np, 3, i, rng);
                out.row(i) = x.row(i) + params.f1 * (x.row(r[0]) - x.row(i)) +
                             params.f2 * (x.row(r[1]) - x.row(r[2]));
                break;
            }
            case MutationVariant::best_2: {
                const auto r = draw_distinct(np, 4, i, rng);
                out.row(i) = best + params.f1 * (x.row(r[0]) - x.row(r[1])) +
                             params.f2 * (x.row(r[2]) - x.row(r[3]));
                break;
            }
            case MutationVariant::rand_2: {
                const auto r = draw_distinct(np, 5, i, rng);
                out.row(i) = x.row(r[0]) + params.f1 * (x.row(r[1]) - x.row(r[2])) +
                             params.f2 * (x.row(r[3]) - x.row(r[4]));
                break;
            }
            case MutationVariant::current_to_best_1: {
                const auto r = draw_distinct(np, 2, i, rng);
                out.row(i) = x.row(i) + params.f1 * (best - x.row(i)) +
                             params.f2 * (x.row(r[0]) - x.row(r[1]));
                break;
            }
        }
    }
    return out;
}

double sbx_beta(double u, int eta_c) {
    const double exponent = 1.0 / (1.0 + eta_c);
    return u <= 0.5 ? std::pow(2.0 * u, exponent) : std::pow(1.0 / (2.0 - 2.0 * u), exponent);
}

double polynomial_mutation(double x, double u, int eta_m, SearchRange range) {
    const double exponent = 1.0 / (1.0 + eta_m);
    if (u <= 0.5) {
        return x + (std::pow(2.0 * u, exponent) - 1.0) * (x - range.lo);
    }
    return x + (1.0 - std::pow(2.0 - 2.0 * u, exponent)) * (range.hi - x);
}

Matrix crossover(CrossoverVariant variant, const Matrix& x, const Matrix& donor,
                 const Vector& donor_fitness, const OperatorParams& params, Rng& rng) {
    params.validate();
    const Index np = donor.rows();
    const Index dim = donor.cols();
    switch (variant) {
        case CrossoverVariant::exponential: {
            require_same_shape(x, donor, "exponential crossover");
            Matrix out = x;
            for (Index i = 0; i < np; ++i) {
                const Index k = rng.index(dim);
                Index length = 0;
                do {
                    const Index j = (k + length) % dim;
                    out(i, j) = donor(i, j);
                    ++length;
                } while (length < dim && rng.uniform() < params.cr);
            }
            return out;
        }
        case CrossoverVariant::binomial: {
            require_same_shape(x, donor, "binomial crossover");
            Matrix out = x;
            for (Index i = 0; i < np; ++i) {
                const Index jrand = rng.index(dim);
                for (Index j = 0; j < dim; ++j) {
                    const double u = rng.uniform();
                    if (u < params.cr || j == jrand) {
                        out(i, j) = donor(i, j);
                    }
                }
            }
            return out;
        }
        case CrossoverVariant::mpx: {
            if (donor_fitness.size() != np) {
                throw std::invalid_argument("mpx crossover: fitness size mismatch");
            }
            Matrix out = donor;
            for (Index i = 0; i < np; ++i) {
                const Index r1 = draw_partner(donor_fitness, i, params.partner, rng);
                for (Index j = 0; j < dim; ++j) {
                    if (rng.uniform() < params.cr) {
                        out(i, j) = donor(r1, j);
                    }
                }
            }
            return out;
        }
        case CrossoverVariant::sbx: {
            if (donor_fitness.size() != np) {
                throw std::invalid_argument("sbx crossover: fitness size mismatch");
            }
            Matrix out(np, dim);
            for (Index i = 0; i < np; ++i) {
                const Index r1 = draw_partner(donor_fitness, i, params.partner, rng);
                // which of the two SBX children row i becomes
                const double s = rng.uniform() < 0.5 ? 1.0 : -1.0;
                for (Index j = 0; j < dim; ++j) {
                    const double beta = sbx_beta(rng.uniform(), params.eta_c);
                    out(i, j) = 0.5 * ((1.0 - s * beta) * donor(i, j) + (1.0 + s * beta) * donor(r1, j));
                }
            }
            return out;
        }
    }
    throw std::invalid_argument("unknown crossover variant");
}

Matrix ga_mutate(GaMutationVariant variant, const Matrix& x, const OperatorParams& params,
                 SearchRange range, Rng& rng) {
    params.validate();
    Matrix out = x;
    switch (variant) {
        case GaMutationVariant::gaussian: {
            const double scale = params.sigma * range.width();
            for (Index i = 0; i < x.rows(); ++i) {
                for (Index j = 0; j < x.cols(); ++j) {
                    out(i, j) = x(i, j) + scale * rng.normal();
                }
            }
            return out;
        }
        case GaMutationVariant::polynomial:
            for (Index i = 0; i < x.rows(); ++i) {
                for (Index j = 0; j < x.cols(); ++j) {
                    out(i, j) = polynomial_mutation(x(i, j), rng.uniform(), params.eta_m, range);
                }
            }
            return out;
    }
    throw std::invalid_argument("unknown GA mutation variant");
}

Population select(SelectionVariant variant, const Population& parents,
                  const Population& offspring, Rng& rng) {
    Population out;
    out.best_so_far_x = parents.best_so_far_x;
    out.best_so_far_f = parents.best_so_far_f;
    if (offspring.best_so_far_f < out.best_so_far_f) {
        out.best_so_far_f = offspring.best_so_far_f;
        out.best_so_far_x = offspring.best_so_far_x;
    }

    switch (variant) {
        case SelectionVariant::greedy_pairwise: {
            if (parents.size() != offspring.size() || parents.dim() != offspring.dim()) {
                throw std::invalid_argument("greedy selection: size mismatch");
            }
            out.x = parents.x;
            out.fitness = parents.fitness;
            for (Index i = 0; i < parents.size(); ++i) {
                if (offspring.fitness[i] <= parents.fitness[i]) {
                    out.x.row(i) = offspring.x.row(i);
                    out.fitness[i] = offspring.fitness[i];
                }
            }
            break;
        }
        case SelectionVariant::roulette:
        case SelectionVariant::tournament: {
            if (parents.dim() != offspring.dim()) {
                throw std::invalid_argument("selection: dimension mismatch");
            }
            const Index np = parents.size();
            const Index pool = np + offspring.size();
            Matrix pool_x(pool, parents.dim());
            pool_x << parents.x, offspring.x;
            Vector pool_f(pool);
            pool_f << parents.fitness, offspring.fitness;

            std::vector<Index> chosen;
            if (variant == SelectionVariant::roulette) {
                chosen = roulette_draw(pool_f, np, rng);
            } else {
                chosen.reserve(static_cast<std::size_t>(np));
                for (Index k = 0; k < np; ++k) {
                    const Index a = rng.index(pool);
                    const Index b = rng.index(pool);
                    chosen.push_back(pool_f[a] <= pool_f[b] ? a : b);
                }
            }
            out.x.resize(np, parents.dim());
            out.fitness.resize(np);
            for (Index k = 0; k < np; ++k) {
                out.x.row(k) = pool_x.row(chosen[static_cast<std::size_t>(k)]);
                out.fitness[k] = pool_f[chosen[static_cast<std::size_t>(k)]];
            }
            break;
        }
    }
    out.refresh_best();
    return out;
}

Matrix bound_control(int method, const Matrix& x, const Matrix& parent, SearchRange range,
                     Rng& rng) {
    if (method < 0 || method >= kBoundMethodCount) {
        throw std::invalid_argument("bound control method must be in 0..4, got " +
                                    std::to_string(method));
    }
    require_same_shape(x, parent, "bound control");
    const auto kind = static_cast<BoundMethod>(method);
    const double lo = range.lo;
    const double hi = range.hi;
    const double width = range.width();
    Matrix out = x;
    for (Index i = 0; i < x.rows(); ++i) {
        for (Index j = 0; j < x.cols(); ++j) {
            double v = x(i, j);
            if (v >= lo && v <= hi) {
                continue;
            }
            switch (kind) {
                case BoundMethod::clip:
                    v = std::clamp(v, lo, hi);
                    break;
                case BoundMethod::rand:
                    v = rng.uniform(lo, hi);
                    break;
                case BoundMethod::periodic: {
                    double offset = std::fmod(v - lo, width);
                    if (offset < 0.0) {
                        offset += width;
                    }
                    v = lo + offset;
                    break;
                }
                case BoundMethod::reflect:
                    while (v < lo || v > hi) {
                        v = v > hi ? 2.0 * hi - v : 2.0 * lo - v;
                    }
                    break;
                case BoundMethod::halving:
                    v = v > hi ? 0.5 * (hi + parent(i, j)) : 0.5 * (lo + parent(i, j));
                    break;
            }
            out(i, j) = std::clamp(v, lo, hi);
        }
    }
    return out;
}

Index lpsr_target(int t, int T, Index np_init, Index np_final) {
    if (T <= 0) {
        return np_init;
    }
    const double frac = static_cast<double>(t) / static_cast<double>(T);
    return static_cast<Index>(std::llround(static_cast<double>(np_init) +
                                           static_cast<double>(np_final - np_init) * frac));
}

Population lpsr(const Population& pop, int t, int T, Index np_init, Index np_final) {
    const Index target = lpsr_target(t, T, np_init, np_final);
    if (target >= pop.size()) {
        return pop;
    }
    std::vector<Index> order(static_cast<std::size_t>(pop.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return pop.fitness[a] < pop.fitness[b]; });
    order.resize(static_cast<std::size_t>(target));
    std::sort(order.begin(), order.end());

    Population out;
    out.x.resize(target, pop.dim());
    out.fitness.resize(target);
    for (Index k = 0; k < target; ++k) {
        out.x.row(k) = pop.x.row(order[static_cast<std::size_t>(k)]);
        out.fitness[k] = pop.fitness[order[static_cast<std::size_t>(k)]];
    }
    out.best_so_far_x = pop.best_so_far_x;
    out.best_so_far_f = pop.best_so_far_f;
    out.refresh_best();
    return out;
}

void share_information(std::vector<Population>& pops, std::span<const int> cm) {
    if (cm.size() != pops.size()) {
        throw std::invalid_argument("share_information: one target per sub-population required");
    }
    const int n = static_cast<int>(pops.size());
    for (int target : cm) {
        if (target < 0 || target >= n) {
            throw std::out_of_range("share_information: target sub-population " +
                                    std::to_string(target) + " out of range");
        }
    }
    std::vector<Vector> best_x;
    std::vector<double> best_f;
    for (const auto& p : pops) {
        best_x.emplace_back(p.x.row(p.best_index).transpose());
        best_f.push_back(p.fitness[p.best_index]);
    }
    for (int i = 0; i < n; ++i) {
        const int source = cm[static_cast<std::size_t>(i)];
        if (source == i) {
            continue;
        }
        auto& p = pops[static_cast<std::size_t>(i)];
        const Index worst = argmax(p.fitness);
        p.x.row(worst) = best_x[static_cast<std::size_t>(source)].transpose();
        p.fitness[worst] = best_f[static_cast<std::size_t>(source)];
        p.refresh_best();
    }
}

}  // namespace qmamba::ea
