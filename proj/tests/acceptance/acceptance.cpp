// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only when every
// selected criterion passes. `acceptance 3 5` runs criteria 3 and 5 only.

#include "qmamba/dataset_io.hpp"
#include "qmamba/ea_components.hpp"
#include "qmamba/ssm_core.hpp"
#include "qmamba/trainer.hpp"
#include "qmamba_tools/commands.hpp"
#include "qmamba_tools/csv.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace qmamba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

fs::path workdir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("qmamba_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

int qm(const std::vector<std::string>& args, std::string* err = nullptr) {
    std::ostringstream out, e;
    const int code = cli::run(args, out, e);
    if (err != nullptr) {
        *err = e.str();
    }
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

env::Trajectory random_trajectory(int alg_id, int fid, int dim, int T, std::uint64_t seed) {
    const auto problem = bbob::make_instance(fid, dim, seed);
    env::EpisodeConfig ec;
    ec.alg_id = alg_id;
    ec.T = T;
    ec.episode_seed = seed;
    ec.policy_id = "random";
    return env::run_episode(ec, problem, data::random_policy(derive_seed(seed, 3), env::action_masks(alg_id)));
}

Outcome decomposition() {
    Rng rng(0xDEC0);
    double worst = 0.0;
    int failures = 0;
    int greedy = 0;
    for (int k = 0; k < 100; ++k) {
        const int states = 1 + static_cast<int>(rng.index(4));
        const int dims = 1 + static_cast<int>(rng.index(3));
        const int bins = 2 + static_cast<int>(rng.index(2));
        const auto mdp = train::random_mdp(states, dims, bins, 0.9, derive_seed(0xDEC0, k));
        const auto r = train::verify_decomposition(mdp, 1e-8);
        worst = std::max(worst, r.max_value_gap);
        failures += r.passed ? 0 : 1;
        greedy += r.greedy_checked;
    }
    return {failures == 0 && worst <= 1e-8,
            "100 MDPs, max |V_full - V_dec| = " + fmt(worst) + ", unique greedy states checked " +
                std::to_string(greedy) + ", failures " + std::to_string(failures)};
}

Outcome gradients() {
    qnet::ModelConfig mc;
    mc.k = 3;
    mc.d_model = 8;
    mc.d_state = 4;
    const auto net = qnet::init_network(mc, 2);
    const auto traj = random_trajectory(0, 1, 5, 4, 7);
    train::GradCheckOptions opt;
    opt.h = 1e-4;
    opt.rel_tol = 1e-4;
    opt.min_grad = 1e-6;
    const auto r = train::grad_check(net, traj, env::action_masks(0), train::LossConfig{}, opt);
    return {r.passed && r.max_rel_error <= 1e-4,
            "max rel error " + fmt(r.max_rel_error) + " over " + std::to_string(r.checked) +
                " coordinates (worst " + r.worst_tensor + ")"};
}

Outcome scan() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(derive_seed(0x5CA7, seed));
        auto p = ssm::init_block({8, 4, 2}, rng).ssm;
        for (Index c = 0; c < p.b_delta.size(); ++c) {
            p.b_delta[c] = rng.uniform(-3.0, 1.0);
        }
        for (Index L : {1, 7, 64, 2048}) {
            Matrix xs(L, p.d_inner());
            for (Index i = 0; i < xs.size(); ++i) {
                xs.data()[i] = rng.normal();
            }
            Matrix h0(p.d_inner(), p.d_state());
            for (Index i = 0; i < h0.size(); ++i) {
                h0.data()[i] = rng.normal();
            }
            const auto a = ssm::ssm_forward_sequential(p, h0, xs);
            const auto b = ssm::ssm_forward_scan(p, h0, xs);
            worst = std::max({worst, (a.ys - b.ys).cwiseAbs().maxCoeff(),
                              (a.h_final - b.h_final).cwiseAbs().maxCoeff()});
        }
    }
    return {worst <= 1e-6, "lengths {1,7,64,2048} x 20 seeds, max abs diff " + fmt(worst)};
}

Outcome rewards() {
    int negative = 0;
    double worst_sum = 0.0;
    double worst_gap = 0.0;
    for (int e = 0; e < 200; ++e) {
        const int alg_id = e % 3;
        const int fid = 1 + e % 24;
        const int dim = e % 2 == 0 ? 5 : 10;
        const auto traj = random_trajectory(alg_id, fid, dim, 50, static_cast<std::uint64_t>(e));
        double sum = 0.0;
        for (const auto& s : traj.steps) {
            negative += s.reward < 0.0 ? 1 : 0;
            sum += s.reward;
        }
        worst_sum = std::max(worst_sum, sum);
        const auto& m = traj.meta;
        const double expected = (m.f_best_init - traj.steps.back().best_so_far_f) / (m.f_best_init - m.f_star);
        worst_gap = std::max(worst_gap, std::abs(sum - expected));
    }
    return {negative == 0 && worst_sum <= 1.0 + 1e-9 && worst_gap <= 1e-12,
            "200 episodes, negative rewards " + std::to_string(negative) + ", max return " +
                fmt(worst_sum) + ", max telescoping gap " + fmt(worst_gap)};
}

Outcome loss_values() {
    env::Trajectory traj;
    traj.meta.K = 1;
    traj.meta.M = 2;
    env::StepRecord s;
    s.actions = {0};
    s.reward = 0.5;
    traj.steps.push_back(s);
    Matrix q(1, 2);
    q << 1.0, 0.2;
    train::LossConfig cfg;
    cfg.beta = 10.0;
    cfg.lambda = 1.0;
    cfg.gamma = 0.99;
    const double example = train::q_loss(q, traj, {2}, cfg).total;
    traj.steps[0].reward = 0.0;
    const double zero = train::q_loss(Matrix::Zero(1, 2), traj, {2}, cfg).total;
    return {std::abs(example - 1.27) <= 1e-12 && zero == 0.0,
            "example loss " + cli::format_double(example) + ", all-zero loss " + cli::format_double(zero)};
}

Outcome end_to_end() {
    const auto dir = workdir("e2e");
    const std::string d = (dir / "data").string();
    const std::string t = (dir / "train").string();
    const std::string e = (dir / "eval").string();
    std::string err;
    if (qm({"collect", "--profile", "desk", "--seed", "1", "--out", d, "--alg", "0", "--mu", "0.5",
            "--functions", "1,4,11,12"}, &err) != 0) {
        return {false, "collect failed: " + err};
    }
    if (qm({"train", "--profile", "desk", "--seed", "1", "--data", d, "--out", t}, &err) != 0) {
        return {false, "train failed: " + err};
    }
    if (qm({"eval", "--profile", "desk", "--seed", "1", "--checkpoint", t + "/checkpoint.bin",
            "--out", e, "--functions", "2,3", "--runs", "19"}, &err) != 0) {
        return {false, "eval failed: " + err};
    }
    const auto table = cli::read_csv(fs::path(e) / "eval.csv");
    const auto problem = static_cast<std::size_t>(table.column("problem"));
    const auto run = static_cast<std::size_t>(table.column("run"));
    const auto perf = static_cast<std::size_t>(table.column("perf"));
    const auto policy = static_cast<std::size_t>(table.column("policy"));
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> paired;
    for (const auto& row : table.rows) {
        paired[{row[problem], row[run]}][row[policy]] = std::stod(row[perf]);
    }
    double diff = 0.0;
    double q_mean = 0.0;
    double r_mean = 0.0;
    for (const auto& [key, v] : paired) {
        q_mean += v.at("qmamba");
        r_mean += v.at("random");
        diff += v.at("qmamba") - v.at("random");
    }
    const double n = static_cast<double>(paired.size());
    q_mean /= n;
    r_mean /= n;
    diff /= n;
    fs::remove_all(dir);
    return {paired.size() == 38 && diff > 0.0,
            "held-out f2,f3 x 19 seeds: Q-Mamba " + cli::format_double(q_mean) + ", random " +
                cli::format_double(r_mean) + ", paired mean difference " + fmt(diff)};
}

Outcome ablation_shape() {
    const auto dir = workdir("ablate");
    std::string err;
    const int code = qm({"ablate", "--profile", "desk", "--out", dir.string(), "--d", "12", "--t", "5",
                         "--epochs", "2", "--batch", "6", "--runs", "2", "--functions", "1,4",
                         "--test-functions", "2", "--d-model", "4", "--d-state", "2"},
                        &err);
    if (code != 0) {
        return {false, "ablate failed: " + err};
    }
    const auto lb = cli::read_csv(dir / "lambda_beta.csv");
    const auto mu = cli::read_csv(dir / "mu_sweep.csv");
    const auto bins = cli::read_csv(dir / "bins.csv");
    std::set<std::string> ms;
    for (const auto& r : bins.rows) {
        ms.insert(r[static_cast<std::size_t>(bins.column("M"))]);
    }
    fs::remove_all(dir);
    const bool ok = lb.rows.size() == 6 && mu.rows.size() == 5 && ms == std::set<std::string>{"16", "32"};
    return {ok, "lambda/beta cells " + std::to_string(lb.rows.size()) + ", mu rows " +
                    std::to_string(mu.rows.size()) + ", bin counts " + std::to_string(ms.size())};
}

Outcome determinism() {
    std::vector<std::string> files;
    std::vector<std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
        const auto dir = workdir("det" + std::to_string(pass));
        const std::string d = (dir / "data").string();
        const std::string t = (dir / "train").string();
        const std::string e = (dir / "eval").string();
        std::string err;
        if (qm({"collect", "--seed", "9", "--out", d, "--d", "24", "--t", "8", "--functions", "1,4",
                "--dim", "5", "--exploitation", "filtered_random"}, &err) != 0 ||
            qm({"train", "--seed", "9", "--data", d, "--out", t, "--epochs", "3", "--batch", "8",
                "--d-model", "8", "--d-state", "4"}, &err) != 0 ||
            qm({"eval", "--seed", "9", "--checkpoint", t + "/checkpoint.bin", "--out", e,
                "--functions", "2,3", "--runs", "5", "--t", "8", "--dim", "5"}, &err) != 0) {
            return {false, "pipeline failed: " + err};
        }
        std::vector<std::string> contents;
        for (const auto& f : fs::recursive_directory_iterator(dir)) {
            if (f.is_regular_file()) {
                if (pass == 0) {
                    files.push_back(fs::relative(f.path(), dir).string());
                }
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            contents.push_back(slurp(dir / f));
        }
        if (pass == 0) {
            first = contents;
        } else {
            int differing = 0;
            for (std::size_t i = 0; i < files.size(); ++i) {
                differing += contents[i] == first[i] ? 0 : 1;
            }
            fs::remove_all(workdir("det0"));
            fs::remove_all(dir);
            return {differing == 0 && files.size() == 7,
                    std::to_string(files.size()) + " output files compared, " + std::to_string(differing) +
                        " differ"};
        }
    }
    return {false, "unreachable"};
}

Outcome operators() {
    using namespace ea;
    double worst = 0.0;
    int identity_failures = 0;
    auto track = [&](const oracle::Rows& want, const Matrix& got) {
        worst = std::max(worst, oracle::max_abs_diff(want, got));
    };
    auto random_matrix = [](Rng& rng, double lo, double hi) {
        Matrix m(8, 3);
        for (Index i = 0; i < m.size(); ++i) {
            m.data()[i] = rng.uniform(lo, hi);
        }
        return m;
    };
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng init(derive_seed(0x0FE4, seed));
        Population pop;
        pop.x = random_matrix(init, -5, 5);
        pop.fitness = pop.x.rowwise().squaredNorm();
        pop.refresh_best();
        const auto rows = oracle::to_rows(pop.x);
        const Matrix donor = random_matrix(init, -5, 5);
        const Vector fit = donor.rowwise().squaredNorm();
        const Matrix wide = random_matrix(init, -12, 12);
        OperatorParams p;
        p.f1 = init.uniform();
        p.f2 = init.uniform();
        p.cr = init.uniform();
        p.sigma = init.uniform(0.0, 0.5);
        p.eta_c = 1 + static_cast<int>(init.index(3));
        p.eta_m = 1 + static_cast<int>(init.index(3));
        const auto s = derive_seed(seed, 1);

        for (auto v : {MutationVariant::current_to_rand_1, MutationVariant::best_2, MutationVariant::rand_2,
                       MutationVariant::current_to_best_1}) {
            Rng a(s), b(s);
            track(oracle::de_mutate(v, rows, static_cast<std::size_t>(pop.best_index), p.f1, p.f2, b),
                  de_mutate(v, pop, p, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::exponential(rows, oracle::to_rows(donor), p.cr, b),
                  crossover(CrossoverVariant::exponential, pop.x, donor, fit, p, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::binomial(rows, oracle::to_rows(donor), p.cr, b),
                  crossover(CrossoverVariant::binomial, pop.x, donor, fit, p, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::mpx(oracle::to_rows(donor), p.cr, b),
                  crossover(CrossoverVariant::mpx, pop.x, donor, fit, p, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::sbx(oracle::to_rows(donor), p.eta_c, b),
                  crossover(CrossoverVariant::sbx, pop.x, donor, fit, p, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::gaussian(rows, p.sigma, -5, 5, b), ga_mutate(GaMutationVariant::gaussian, pop.x, p, {}, a));
        }
        {
            Rng a(s), b(s);
            track(oracle::polynomial(rows, p.eta_m, -5, 5, b),
                  ga_mutate(GaMutationVariant::polynomial, pop.x, p, {}, a));
        }
        for (int method = 0; method < kBoundMethodCount; ++method) {
            Rng a(s), b(s);
            track(oracle::bound(method, oracle::to_rows(wide), rows, -5, 5, b),
                  bound_control(method, wide, pop.x, {}, a));
        }

        // degenerate identities, compared exactly
        Rng rng(derive_seed(seed, 2));
        OperatorParams z = p;
        z.f1 = 0.0;
        z.f2 = 0.0;
        identity_failures += de_mutate(MutationVariant::current_to_rand_1, pop, z, rng) == pop.x ? 0 : 1;
        identity_failures += de_mutate(MutationVariant::current_to_best_1, pop, z, rng) == pop.x ? 0 : 1;
        const Matrix b2 = de_mutate(MutationVariant::best_2, pop, z, rng);
        const Matrix r2 = de_mutate(MutationVariant::rand_2, pop, z, rng);
        for (Index i = 0; i < 8; ++i) {
            identity_failures += b2.row(i) == pop.x.row(pop.best_index) ? 0 : 1;
            bool member = false;
            for (Index j = 0; j < 8; ++j) {
                member = member || (j != i && r2.row(i) == pop.x.row(j));
            }
            identity_failures += member ? 0 : 1;
        }
        OperatorParams c = p;
        c.cr = 1.0;
        identity_failures += crossover(CrossoverVariant::binomial, pop.x, donor, fit, c, rng) == donor ? 0 : 1;
        identity_failures += crossover(CrossoverVariant::exponential, pop.x, donor, fit, c, rng) == donor ? 0 : 1;
        const Matrix full_mpx = crossover(CrossoverVariant::mpx, pop.x, donor, fit, c, rng);
        for (Index i = 0; i < 8; ++i) {
            bool partner = false;
            for (Index j = 0; j < 8; ++j) {
                partner = partner || (j != i && full_mpx.row(i) == donor.row(j));
            }
            identity_failures += partner ? 0 : 1;
        }
        c.cr = 0.0;
        identity_failures += crossover(CrossoverVariant::mpx, pop.x, donor, fit, c, rng) == donor ? 0 : 1;
        for (auto v : {CrossoverVariant::binomial, CrossoverVariant::exponential}) {
            const Matrix out = crossover(v, pop.x, donor, fit, c, rng);
            for (Index i = 0; i < 8; ++i) {
                const auto from_donor = (out.row(i).array() == donor.row(i).array()).count();
                const auto from_x = (out.row(i).array() == pop.x.row(i).array()).count();
                identity_failures += from_donor == 1 && from_x == 2 ? 0 : 1;
            }
        }
        OperatorParams g = p;
        g.sigma = 0.0;
        identity_failures += ga_mutate(GaMutationVariant::gaussian, pop.x, g, {}, rng) == pop.x ? 0 : 1;
    }
    return {worst <= 1e-12 && identity_failures == 0,
            "50 random 8x3 populations, max oracle diff " + fmt(worst) + ", identity violations " +
                std::to_string(identity_failures)};
}

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
    double budget_seconds;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "decomposition equivalence", decomposition, 60.0},
        {2, "gradient correctness", gradients, 60.0},
        {3, "scan equivalence", scan, 60.0},
        {4, "reward telescoping", rewards, 0.0},
        {5, "loss unit values", loss_values, 0.0},
        {6, "desk-scale learning signal", end_to_end, 3600.0},
        {7, "ablation harness shape", ablation_shape, 0.0},
        {8, "determinism", determinism, 0.0},
        {9, "operator fidelity", operators, 0.0},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) {
        only.insert(std::atoi(argv[i]));
    }
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && only.count(c.id) == 0) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_seconds > 0.0 && secs > c.budget_seconds) {
            o.pass = false;
            o.detail += ", over the " + std::to_string(static_cast<int>(c.budget_seconds)) + " s budget";
        }
        failed += o.pass ? 0 : 1;
        char time_buf[32];
        std::snprintf(time_buf, sizeof(time_buf), "%.1f s", secs);
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
                  << " [" << time_buf << "]" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
