#include "qmamba/dac_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace qmamba::env {

double Trajectory::total_reward() const {
    double sum = 0.0;
    for (const auto& s : steps) {
        sum += s.reward;
    }
    return sum;
}

OptimizationState cal_state(const alg::AlgorithmState& state, const bbob::SearchRange& range,
                            double f_star, bool normalize) {
    const Index n = state.total_size();
    if (n == 0) {
        throw std::invalid_argument("cal_state: empty population");
    }
    const Index dim = state.subpops.front().dim();
    Matrix x(n, dim);
    Vector f(n);
    Index offset = 0;
    for (const auto& p : state.subpops) {
        x.middleRows(offset, p.size()) = p.x;
        f.segment(offset, p.size()) = p.fitness;
        offset += p.size();
    }
    Index gen_best = 0;
    const double gen_best_f = f.minCoeff(&gen_best);

    double pair_sum = 0.0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            pair_sum += (x.row(i) - x.row(j)).norm();
        }
    }
    const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    double to_gen = 0.0;
    double to_bsf = 0.0;
    for (Index i = 0; i < n; ++i) {
        to_gen += (x.row(i) - x.row(gen_best)).norm();
        to_bsf += (x.row(i).transpose() - state.best_x).norm();
    }
    const double nn = static_cast<double>(n);
    const double mean_f = f.mean();

    OptimizationState s{};
    s[0] = n > 1 ? pair_sum / pairs : 0.0;
    s[1] = to_gen / nn;
    s[2] = to_bsf / nn;
    s[3] = mean_f - state.best_f;
    s[4] = mean_f - gen_best_f;
    s[5] = std::sqrt((f.array() - mean_f).square().mean());
    s[6] = static_cast<double>(state.T - state.t) / state.T;
    s[7] = static_cast<double>(state.stagnation) / state.T;
    s[8] = gen_best_f < state.previous_best_f ? 1.0 : 0.0;

    if (normalize) {
        const double diameter = std::sqrt(static_cast<double>(dim)) * range.width();
        const double spread = state.initial_worst_f - f_star;
        const double f_scale = spread > 0.0 ? spread : 1.0;
        for (int k = 0; k < 3; ++k) {
            s[k] /= diameter;
        }
        for (int k = 3; k < 6; ++k) {
            s[k] /= f_scale;
        }
    }
    return s;
}

double reward(double f_best_prev, double f_best_now, double f_best_init, double f_star) {
    const double denom = f_best_init - f_star;
    if (!(denom > 0.0)) {
        return 0.0;
    }
    return (f_best_prev - f_best_now) / denom;
}

double decode_action(const alg::HyperParameterSpec& spec, int bin, int M) {
    const int bins = mask_bins(spec, M);
    if (bin < 0 || bin >= bins) {
        throw std::out_of_range("bin " + std::to_string(bin) + " outside [0, " +
                                std::to_string(bins) + ") for " + spec.name);
    }
    if (spec.is_discrete()) {
        return spec.values[static_cast<std::size_t>(bin)];
    }
    if (bin == M - 1) {
        return spec.hi;
    }
    return spec.lo + (spec.hi - spec.lo) * static_cast<double>(bin) / static_cast<double>(M - 1);
}

int encode_value(const alg::HyperParameterSpec& spec, double value, int M) {
    if (spec.is_discrete()) {
        const auto it = std::find(spec.values.begin(), spec.values.end(), value);
        if (it == spec.values.end()) {
            throw std::invalid_argument("value is not a choice of " + spec.name);
        }
        return static_cast<int>(it - spec.values.begin());
    }
    const double pos = (value - spec.lo) / (spec.hi - spec.lo) * (M - 1);
    return static_cast<int>(std::clamp<long>(std::lround(pos), 0, M - 1));
}

int mask_bins(const alg::HyperParameterSpec& spec, int M) {
    return spec.is_discrete() ? std::min(spec.choice_count(), M) : M;
}

std::vector<int> action_masks(int alg_id, int M) {
    std::vector<int> out;
    for (const auto& s : alg::alg_spec(alg_id)) {
        out.push_back(mask_bins(s, M));
    }
    return out;
}

std::vector<double> decode_config(const std::vector<alg::HyperParameterSpec>& specs,
                                  const std::vector<int>& bins, int M) {
    if (bins.size() != specs.size()) {
        throw std::invalid_argument("expected " + std::to_string(specs.size()) +
                                    " action bins, got " + std::to_string(bins.size()));
    }
    std::vector<double> out(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        out[i] = decode_action(specs[i], bins[i], M);
    }
    return out;
}

Trajectory run_episode(const EpisodeConfig& cfg, const bbob::ProblemInstance& problem,
                       const Policy& policy) {
    if (cfg.T < 1) {
        throw std::invalid_argument("run_episode: T must be at least 1");
    }
    if (cfg.M < 2) {
        throw std::invalid_argument("run_episode: M must be at least 2");
    }
    const auto specs = alg::alg_spec(cfg.alg_id);
    auto state = alg::init_state(cfg.alg_id, problem, cfg.T, derive_seed(cfg.episode_seed, 1),
                                 cfg.options);
    Rng rng(derive_seed(cfg.episode_seed, 2));
    const double f_star = cfg.f_star.value_or(problem.f_opt());
    const double f_init = state.initial_best_f;

    Trajectory traj;
    auto& m = traj.meta;
    m.alg_id = cfg.alg_id;
    m.K = static_cast<int>(specs.size());
    m.M = cfg.M;
    m.function_id = problem.function_id();
    m.dim = problem.dim();
    m.instance_seed = problem.seed();
    m.episode_seed = cfg.episode_seed;
    m.T = cfg.T;
    m.policy_id = cfg.policy_id;
    m.role = cfg.role;
    m.f_best_init = f_init;
    m.f_star = f_star;
    traj.steps.reserve(static_cast<std::size_t>(cfg.T));

    for (int t = 0; t < cfg.T; ++t) {
        StepRecord rec;
        rec.state = cal_state(state, problem.search_range(), f_star, cfg.normalize);
        rec.actions = policy(rec.state, t);
        const auto config = decode_config(specs, rec.actions, cfg.M);
        const double before = state.best_f;
        alg::step(state, config, problem, rng, cfg.options);
        rec.reward = reward(before, state.best_f, f_init, f_star);
        rec.best_so_far_f = state.best_f;
        traj.steps.push_back(std::move(rec));
    }
    return traj;
}

double surrogate_optimum(const EpisodeConfig& cfg, const bbob::ProblemInstance& problem,
                         int runs) {
    if (runs < 1) {
        throw std::invalid_argument("surrogate_optimum: runs must be positive");
    }
    const auto masks = action_masks(cfg.alg_id, cfg.M);
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < runs; ++r) {
        EpisodeConfig c = cfg;
        c.episode_seed = derive_seed(cfg.episode_seed, 0x5u, static_cast<std::uint64_t>(r));
        c.f_star = 0.0;
        Rng rng(derive_seed(c.episode_seed, 3));
        const auto traj = run_episode(c, problem, [&](const OptimizationState&, int) {
            std::vector<int> bins;
            for (int m : masks) {
                bins.push_back(static_cast<int>(rng.index(m)));
            }
            return bins;
        });
        best = std::min(best, traj.steps.back().best_so_far_f);
    }
    return best;
}

}  // namespace qmamba::env
