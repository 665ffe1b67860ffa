#include "qmamba/algorithms.hpp"
#include "qmamba/dataset_io.hpp"
#include "qmamba/q_learner.hpp"
#include "qmamba/ssm_core.hpp"
#include "qmamba/trainer.hpp"

#include <benchmark/benchmark.h>

using namespace qmamba;

namespace {

Matrix random_rows(Index r, Index c, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-5.0, 5.0);
    }
    return m;
}

void BM_Evaluate(benchmark::State& state) {
    const auto problem = bbob::make_instance(static_cast<int>(state.range(0)), 10, 1);
    const Matrix x = random_rows(100, 10, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(problem.evaluate_rows(x));
    }
    state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_Evaluate)->Arg(1)->Arg(15)->Arg(21)->Arg(24);

ssm::SelectiveSsmParams bench_ssm() {
    Rng rng(3);
    return ssm::init_block({16, 8, 2}, rng).ssm;
}

void BM_SsmSequential(benchmark::State& state) {
    const auto p = bench_ssm();
    const Matrix xs = random_rows(state.range(0), p.d_inner(), 4) * 0.2;
    const Matrix h0 = Matrix::Zero(p.d_inner(), p.d_state());
    for (auto _ : state) {
        benchmark::DoNotOptimize(ssm::ssm_forward_sequential(p, h0, xs));
    }
}
BENCHMARK(BM_SsmSequential)->Arg(64)->Arg(2048);

void BM_SsmScan(benchmark::State& state) {
    const auto p = bench_ssm();
    const Matrix xs = random_rows(state.range(0), p.d_inner(), 4) * 0.2;
    const Matrix h0 = Matrix::Zero(p.d_inner(), p.d_state());
    for (auto _ : state) {
        benchmark::DoNotOptimize(ssm::ssm_forward_scan(p, h0, xs));
    }
}
BENCHMARK(BM_SsmScan)->Arg(64)->Arg(2048);

env::Trajectory bench_trajectory() {
    const auto problem = bbob::make_instance(1, 5, 0);
    env::EpisodeConfig ec;
    ec.episode_seed = 1;
    return env::run_episode(ec, problem, data::random_policy(1, env::action_masks(0)));
}

void BM_NetworkForward(benchmark::State& state) {
    qnet::ModelConfig mc;
    mc.d_model = static_cast<int>(state.range(0));
    const auto net = qnet::init_network(mc, 1);
    const auto traj = bench_trajectory();
    for (auto _ : state) {
        benchmark::DoNotOptimize(qnet::q_values_for_trajectory(net, traj));
    }
}
BENCHMARK(BM_NetworkForward)->Arg(16)->Arg(64);

void BM_TrajectoryGradient(benchmark::State& state) {
    qnet::ModelConfig mc;
    mc.d_model = static_cast<int>(state.range(0));
    const auto net = qnet::init_network(mc, 1);
    const auto traj = bench_trajectory();
    const auto masks = env::action_masks(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(train::trajectory_gradient(net, traj, masks, train::LossConfig{}));
    }
}
BENCHMARK(BM_TrajectoryGradient)->Arg(16)->Arg(64);

void BM_AlgorithmStep(benchmark::State& state) {
    const int alg_id = static_cast<int>(state.range(0));
    const auto problem = bbob::make_instance(10, 10, 0);
    std::vector<double> config;
    for (const auto& s : alg::alg_spec(alg_id)) {
        config.push_back(s.is_discrete() ? s.values.front() : 0.5 * (s.lo + s.hi));
    }
    Rng rng(1);
    auto st = alg::init_state(alg_id, problem, 1 << 30, 1);
    for (auto _ : state) {
        benchmark::DoNotOptimize(alg::step(st, config, problem, rng));
    }
}
BENCHMARK(BM_AlgorithmStep)->Arg(0)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
