#include "qmamba/trainer.hpp"

#include "qmamba/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qmamba::train {
namespace {

void check_shapes(const Matrix& q, const env::Trajectory& traj, const std::vector<int>& masks) {
    const int K = traj.meta.K;
    const auto T = static_cast<Index>(traj.steps.size());
    if (static_cast<int>(masks.size()) != K) {
        throw std::invalid_argument("mask count " + std::to_string(masks.size()) +
                                    " does not match K=" + std::to_string(K));
    }
    if (q.rows() != T * K) {
        throw std::invalid_argument("Q tensor has " + std::to_string(q.rows()) +
                                    " rows, expected T*K=" + std::to_string(T * K));
    }
    for (int m : masks) {
        if (m < 1 || m > q.cols()) {
            throw std::invalid_argument("mask exceeds the bin count");
        }
    }
}

double masked_max(const Matrix& q, Index row, int admissible) {
    return q.row(row).head(admissible).maxCoeff();
}

std::vector<bool> activation_pattern(const Matrix& pre) {
    std::vector<bool> out(static_cast<std::size_t>(pre.size()));
    for (Index i = 0; i < pre.size(); ++i) {
        out[static_cast<std::size_t>(i)] = pre.data()[i] > 0.0;
    }
    return out;
}

struct Probe {
    double loss = 0.0;
    std::vector<bool> pattern;
};

Probe probe(const qnet::QNetwork& net, const env::Trajectory& traj,
            const std::vector<int>& masks, const LossConfig& cfg, const Vector& targets) {
    qnet::ForwardCache cache;
    const Matrix q = qnet::q_values_for_trajectory(net, traj, &cache);
    return {q_loss(q, traj, masks, cfg, &targets).total, activation_pattern(cache.head_pre)};
}

void add_into(qnet::QNetwork& acc, qnet::QNetwork& g) {
    auto a = acc.views();
    auto b = g.views();
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (Index k = 0; k < a[i].size(); ++k) {
            a[i].data[k] += b[i].data[k];
        }
    }
}

void scale(qnet::QNetwork& net, double factor) {
    for (auto& v : net.views()) {
        for (Index k = 0; k < v.size(); ++k) {
            v.data[k] *= factor;
        }
    }
}

}  // namespace

void LossConfig::validate() const {
    if (beta < 0.0 || lambda < 0.0) {
        throw std::invalid_argument("beta and lambda must be nonnegative");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw std::invalid_argument("gamma must lie in (0, 1]");
    }
    if (batch_size < 1 || epochs < 0) {
        throw std::invalid_argument("batch size must be positive and epochs nonnegative");
    }
    if (learning_rate < 0.0 || weight_decay < 0.0) {
        throw std::invalid_argument("learning rate and weight decay must be nonnegative");
    }
}

Vector compute_targets(const Matrix& q, const env::Trajectory& traj, const std::vector<int>& masks,
                       const LossConfig& cfg) {
    check_shapes(q, traj, masks);
    const int K = traj.meta.K;
    const auto T = static_cast<Index>(traj.steps.size());
    Vector targets(T * K);
    for (Index t = 0; t < T; ++t) {
        for (int i = 0; i < K; ++i) {
            const Index row = t * K + i;
            if (i + 1 < K) {
                targets[row] = masked_max(q, row + 1, masks[static_cast<std::size_t>(i + 1)]);
            } else {
                const double bootstrap = t + 1 < T ? masked_max(q, (t + 1) * K, masks[0]) : 0.0;
                targets[row] = traj.steps[static_cast<std::size_t>(t)].reward + cfg.gamma * bootstrap;
            }
        }
    }
    return targets;
}

LossBreakdown q_loss(const Matrix& q, const env::Trajectory& traj, const std::vector<int>& masks,
                     const LossConfig& cfg, const Vector* fixed_targets, LossFault fault) {
    check_shapes(q, traj, masks);
    const Vector targets =
        fixed_targets != nullptr ? *fixed_targets : compute_targets(q, traj, masks, cfg);
    if (targets.size() != q.rows()) {
        throw std::invalid_argument("target count does not match the Q tensor");
    }
    const int K = traj.meta.K;
    const Index M = q.cols();
    const double conservative_sign = fault == LossFault::flip_conservative_sign ? -1.0 : 1.0;

    LossBreakdown out;
    out.grad_q = Matrix::Zero(q.rows(), M);
    for (Index row = 0; row < q.rows(); ++row) {
        const Index t = row / K;
        const int i = static_cast<int>(row % K);
        const int a = traj.steps[static_cast<std::size_t>(t)].actions[static_cast<std::size_t>(i)];
        if (a < 0 || a >= masks[static_cast<std::size_t>(i)]) {
            throw std::invalid_argument("recorded action outside its admissible bins");
        }
        for (Index j = 0; j < M; ++j) {
            const double v = q(row, j);
            if (j == a) {
                const double residual = v - targets[row];
                const double w = i + 1 < K ? 1.0 : cfg.beta;
                const double term = 0.5 * w * residual * residual;
                (i + 1 < K ? out.td_intra : out.td_last) += term;
                out.grad_q(row, j) = w * residual;
            } else {
                out.conservative += 0.5 * cfg.lambda * v * v;
                out.grad_q(row, j) = conservative_sign * cfg.lambda * v;
            }
        }
    }
    out.total = out.td_intra + out.td_last + out.conservative;
    return out;
}

AdamW::AdamW(const qnet::QNetwork& net, const LossConfig& cfg)
    : lr_(cfg.learning_rate),
      wd_(cfg.weight_decay),
      b1_(cfg.beta1),
      b2_(cfg.beta2),
      eps_(cfg.eps) {
    auto copy = net;
    for (const auto& v : copy.views()) {
        m_.push_back(Vector::Zero(v.size()));
        v_.push_back(Vector::Zero(v.size()));
    }
}

void AdamW::restore(std::int64_t t, std::vector<Vector> m, std::vector<Vector> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw std::invalid_argument("optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
            throw std::invalid_argument("optimizer state does not match the model");
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

void AdamW::step(qnet::QNetwork& net, qnet::QNetwork& grads) {
    auto params = net.views();
    auto g = grads.views();
    if (params.size() != m_.size()) {
        throw std::logic_error("optimizer was built for a different model");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].data;
        const double* gi = g[i].data;
        Vector& m = m_[i];
        Vector& v = v_[i];
        for (Index k = 0; k < params[i].size(); ++k) {
            p[k] *= 1.0 - lr_ * wd_;
            m[k] = b1_ * m[k] + (1.0 - b1_) * gi[k];
            v[k] = b2_ * v[k] + (1.0 - b2_) * gi[k] * gi[k];
            p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

TrajectoryGradient trajectory_gradient(const qnet::QNetwork& net, const env::Trajectory& traj,
                                       const std::vector<int>& masks, const LossConfig& cfg) {
    qnet::ForwardCache cache;
    const Matrix q = qnet::q_values_for_trajectory(net, traj, &cache);
    TrajectoryGradient out;
    out.loss = q_loss(q, traj, masks, cfg);
    out.grads = qnet::backward(net, cache, out.loss.grad_q);
    return out;
}

double dataset_loss(const qnet::QNetwork& net, const std::vector<env::Trajectory>& data,
                    const std::vector<int>& masks, const LossConfig& cfg) {
    if (data.empty()) {
        throw std::invalid_argument("dataset is empty");
    }
    std::vector<double> losses(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        const Matrix q = qnet::q_values_for_trajectory(net, data[i]);
        losses[i] = q_loss(q, data[i], masks, cfg).total;
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(data.size());
}

std::vector<EpochStats> train(const std::vector<env::Trajectory>& data, qnet::QNetwork& net,
                              const std::vector<int>& masks, const LossConfig& cfg,
                              AdamW& optimizer, int first_epoch, const EpochCallback& on_epoch) {
    cfg.validate();
    if (data.empty()) {
        throw std::invalid_argument("cannot train on an empty dataset");
    }
    for (const auto& traj : data) {
        if (traj.meta.K != net.cfg.k || traj.meta.M != net.cfg.bins) {
            throw std::invalid_argument("dataset (K=" + std::to_string(traj.meta.K) +
                                        ", M=" + std::to_string(traj.meta.M) +
                                        ") does not match the model (K=" +
                                        std::to_string(net.cfg.k) + ", M=" +
                                        std::to_string(net.cfg.bins) + ")");
        }
    }
    std::vector<EpochStats> curve;
    const std::size_t n = data.size();
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = first_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(cfg.seed, 0x7EA1, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng.engine());

        EpochStats stats;
        stats.epoch = epoch;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t count = std::min(batch, n - start);
            std::vector<TrajectoryGradient> parts(count);
            parallel_for(count, [&](std::size_t i) {
                parts[i] = trajectory_gradient(net, data[order[start + i]], masks, cfg);
            });
            qnet::QNetwork acc = std::move(parts[0].grads);
            for (std::size_t i = 0; i < count; ++i) {
                if (i > 0) {
                    add_into(acc, parts[i].grads);
                }
                stats.mean_loss += parts[i].loss.total;
                stats.td_intra += parts[i].loss.td_intra;
                stats.td_last += parts[i].loss.td_last;
                stats.conservative += parts[i].loss.conservative;
            }
            scale(acc, 1.0 / static_cast<double>(count));
            optimizer.step(net, acc);
        }
        const double dn = static_cast<double>(n);
        stats.mean_loss /= dn;
        stats.td_intra /= dn;
        stats.td_last /= dn;
        stats.conservative /= dn;
        curve.push_back(stats);
        if (on_epoch) {
            on_epoch(stats, net, optimizer);
        }
    }
    return curve;
}

int TabularMdp::joint_actions() const {
    int joint = 1;
    for (int i = 0; i < k; ++i) {
        joint *= m;
    }
    return joint;
}

void TabularMdp::validate() const {
    if (states < 1 || k < 1 || m < 1) {
        throw std::invalid_argument("MDP sizes must be positive");
    }
    if (!(gamma >= 0.0 && gamma < 1.0)) {
        throw std::invalid_argument("MDP discount must lie in [0, 1)");
    }
    const auto joint = static_cast<std::size_t>(joint_actions());
    const auto s = static_cast<std::size_t>(states);
    if (joint * s > 10000) {
        throw std::invalid_argument("MDP too large for exact value iteration");
    }
    if (rewards.size() != s * joint || transitions.size() != s * joint * s) {
        throw std::invalid_argument("MDP table sizes do not match");
    }
    for (std::size_t row = 0; row < s * joint; ++row) {
        double sum = 0.0;
        for (std::size_t next = 0; next < s; ++next) {
            const double p = transitions[row * s + next];
            if (p < 0.0) {
                throw std::invalid_argument("negative transition probability");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-12) {
            throw std::invalid_argument("transition row " + std::to_string(row) +
                                        " does not sum to 1");
        }
    }
}

TabularMdp random_mdp(int states, int k, int m, double gamma, std::uint64_t seed) {
    TabularMdp mdp;
    mdp.states = states;
    mdp.k = k;
    mdp.m = m;
    mdp.gamma = gamma;
    Rng rng(seed);
    const auto joint = static_cast<std::size_t>(mdp.joint_actions());
    const auto s = static_cast<std::size_t>(states);
    mdp.rewards.resize(s * joint);
    for (auto& r : mdp.rewards) {
        r = rng.uniform();
    }
    mdp.transitions.resize(s * joint * s);
    for (std::size_t row = 0; row < s * joint; ++row) {
        double sum = 0.0;
        for (std::size_t next = 0; next < s; ++next) {
            const double w = rng.uniform() + 1e-3;
            mdp.transitions[row * s + next] = w;
            sum += w;
        }
        for (std::size_t next = 0; next < s; ++next) {
            mdp.transitions[row * s + next] /= sum;
        }
    }
    return mdp;
}

DecompositionReport verify_decomposition(const TabularMdp& mdp, double tol) {
    mdp.validate();
    constexpr double kStop = 1e-12;
    constexpr int kMaxIterations = 1000000;
    const int S = mdp.states;
    const int K = mdp.k;
    const int M = mdp.m;
    const int joint = mdp.joint_actions();

    auto backup = [&](int s, int a, const std::vector<double>& v) {
        const std::size_t row = static_cast<std::size_t>(s) * joint + a;
        double expect = 0.0;
        for (int next = 0; next < S; ++next) {
            expect += mdp.transitions[row * S + next] * v[static_cast<std::size_t>(next)];
        }
        return mdp.rewards[row] + mdp.gamma * expect;
    };

    DecompositionReport rep;

    // Joint-action value iteration, synchronous sweeps.
    std::vector<double> v(static_cast<std::size_t>(S), 0.0);
    std::vector<double> q_full(static_cast<std::size_t>(S) * joint, 0.0);
    for (int it = 1; it <= kMaxIterations; ++it) {
        std::vector<double> next(v.size());
        double change = 0.0;
        for (int s = 0; s < S; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < joint; ++a) {
                const double q = backup(s, a, v);
                q_full[static_cast<std::size_t>(s) * joint + a] = q;
                best = std::max(best, q);
            }
            next[static_cast<std::size_t>(s)] = best;
            change = std::max(change, std::abs(best - v[static_cast<std::size_t>(s)]));
        }
        v = std::move(next);
        rep.iterations_full = it;
        if (change < kStop) {
            break;
        }
    }

    // Per-dimension operator: Q_K from the one-step backup of max_a1 Q_1, then
    // Q_i(a_1..a_i) = max over a_{i+1} of Q_{i+1}. States are swept in place.
    rep.q_levels.resize(static_cast<std::size_t>(K));
    int width = 1;
    for (int i = 0; i < K; ++i) {
        width *= M;
        rep.q_levels[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(S) * width, 0.0);
    }
    std::vector<double> v_dec(static_cast<std::size_t>(S), 0.0);
    for (int it = 1; it <= kMaxIterations; ++it) {
        double change = 0.0;
        for (int s = 0; s < S; ++s) {
            auto& last = rep.q_levels[static_cast<std::size_t>(K - 1)];
            for (int a = 0; a < joint; ++a) {
                last[static_cast<std::size_t>(s) * joint + a] = backup(s, a, v_dec);
            }
            int level_width = joint;
            for (int i = K - 2; i >= 0; --i) {
                const int w = level_width / M;
                auto& cur = rep.q_levels[static_cast<std::size_t>(i)];
                const auto& below = rep.q_levels[static_cast<std::size_t>(i + 1)];
                for (int prefix = 0; prefix < w; ++prefix) {
                    double best = -std::numeric_limits<double>::infinity();
                    for (int a = 0; a < M; ++a) {
                        best = std::max(best, below[static_cast<std::size_t>(s) * level_width +
                                                    prefix * M + a]);
                    }
                    cur[static_cast<std::size_t>(s) * w + prefix] = best;
                }
                level_width = w;
            }
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < M; ++a) {
                best = std::max(best, rep.q_levels[0][static_cast<std::size_t>(s) * M + a]);
            }
            change = std::max(change, std::abs(best - v_dec[static_cast<std::size_t>(s)]));
            v_dec[static_cast<std::size_t>(s)] = best;
        }
        rep.iterations_decomposed = it;
        if (change < kStop) {
            break;
        }
    }

    for (int s = 0; s < S; ++s) {
        rep.max_value_gap = std::max(
            rep.max_value_gap, std::abs(v[static_cast<std::size_t>(s)] - v_dec[static_cast<std::size_t>(s)]));

        int full_best = 0;
        double first = -std::numeric_limits<double>::infinity();
        double second = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < joint; ++a) {
            const double q = q_full[static_cast<std::size_t>(s) * joint + a];
            if (q > first) {
                second = first;
                first = q;
                full_best = a;
            } else if (q > second) {
                second = q;
            }
        }
        if (joint > 1 && first - second <= 1e-9) {
            continue;
        }
        int prefix = 0;
        int level_width = 1;
        for (int i = 0; i < K; ++i) {
            level_width *= M;
            const auto& q = rep.q_levels[static_cast<std::size_t>(i)];
            int best_a = 0;
            for (int a = 1; a < M; ++a) {
                if (q[static_cast<std::size_t>(s) * level_width + prefix * M + a] >
                    q[static_cast<std::size_t>(s) * level_width + prefix * M + best_a]) {
                    best_a = a;
                }
            }
            prefix = prefix * M + best_a;
        }
        ++rep.greedy_checked;
        if (prefix != full_best) {
            ++rep.greedy_mismatches;
        }
    }
    rep.v_full = std::move(v);
    rep.v_decomposed = std::move(v_dec);
    rep.passed = rep.max_value_gap <= tol && rep.greedy_mismatches == 0;
    return rep;
}

GradCheckReport grad_check(const qnet::QNetwork& net, const env::Trajectory& traj,
                           const std::vector<int>& masks, const LossConfig& cfg,
                           const GradCheckOptions& options) {
    qnet::ForwardCache cache;
    const Matrix q0 = qnet::q_values_for_trajectory(net, traj, &cache);
    const Vector targets = compute_targets(q0, traj, masks, cfg);
    const LossBreakdown loss = q_loss(q0, traj, masks, cfg, &targets, options.fault);
    qnet::QNetwork analytic = qnet::backward(net, cache, loss.grad_q);
    const auto base_pattern = activation_pattern(cache.head_pre);

    qnet::QNetwork work = net;
    auto params = work.views();
    auto grads = analytic.views();

    GradCheckReport rep;
    struct Candidate {
        double magnitude;
        std::size_t tensor;
        Index index;
    };
    std::vector<Candidate> smooth;

    auto central = [&](std::size_t ti, Index k, double h, bool& kink) {
        double* x = params[ti].data + k;
        const double orig = *x;
        *x = orig + h;
        const Probe plus = probe(work, traj, masks, cfg, targets);
        *x = orig - h;
        const Probe minus = probe(work, traj, masks, cfg, targets);
        *x = orig;
        kink = plus.pattern != base_pattern || minus.pattern != base_pattern;
        return (plus.loss - minus.loss) / (2.0 * h);
    };

    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        for (Index k = 0; k < params[ti].size(); ++k) {
            ++rep.coordinates;
            bool kink = false;
            const double fd = central(ti, k, options.h, kink);
            if (kink) {
                ++rep.skipped_kinks;
                continue;
            }
            const double ga = grads[ti].data[k];
            rep.analytic_abs_max = std::max(rep.analytic_abs_max, std::abs(ga));
            rep.fd_abs_max = std::max(rep.fd_abs_max, std::abs(fd));
            if (std::abs(ga) <= options.min_grad && std::abs(fd) <= options.min_grad) {
                continue;
            }
            ++rep.checked;
            smooth.push_back({std::abs(ga), ti, k});
            const double rel = std::abs(ga - fd) / std::max(std::abs(ga), std::abs(fd));
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_tensor = params[ti].name;
                rep.worst_index = k;
            }
        }
    }
    rep.passed = rep.max_rel_error <= options.rel_tol;

    std::sort(smooth.begin(), smooth.end(),
              [](const Candidate& a, const Candidate& b) { return a.magnitude > b.magnitude; });
    for (std::size_t c = 0; c < std::min<std::size_t>(smooth.size(), 20); ++c) {
        const auto& cand = smooth[c];
        bool kink1 = false;
        bool kink2 = false;
        const double ga = grads[cand.tensor].data[cand.index];
        const double e1 = std::abs(central(cand.tensor, cand.index, 1e-2, kink1) - ga);
        const double e2 = std::abs(central(cand.tensor, cand.index, 2e-2, kink2) - ga);
        if (kink1 || kink2 || e1 < 1e-11) {
            continue;
        }
        rep.richardson_ratio = e2 / e1;
        break;
    }
    return rep;
}

}  // namespace qmamba::train
