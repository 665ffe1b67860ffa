#include "qmamba_tools/commands.hpp"

#include "qmamba/dataset_io.hpp"
#include "qmamba/parallel.hpp"
#include "qmamba/ssm_core.hpp"
#include "qmamba_tools/csv.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>

namespace qmamba::cli {
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr const char* kCheckpointFile = "checkpoint.bin";
constexpr const char* kLossFile = "loss.csv";
constexpr const char* kTrainManifest = "train.json";

// Desk-scale model size; see README.
constexpr int kDeskDModel = 16;
constexpr int kDeskDState = 8;
constexpr int kDeskDim = 5;

struct Common {
    std::uint64_t seed = 0;
    std::string out;
    std::string profile = "paper";

    bool desk() const { return profile == "desk"; }
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
    sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
    auto* out = sub->add_option("--out", c.out, "Output directory");
    if (out_required) {
        out->required();
    }
    sub->add_option("--profile", c.profile, "Default set: desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}))
        ->capture_default_str();
}

bool given(CLI::App* sub, const std::string& name) { return sub->get_option(name)->count() > 0; }

template <typename T>
void desk_default(CLI::App* sub, const Common& c, const std::string& name, T& target, T value) {
    if (c.desk() && !given(sub, name)) {
        target = value;
    }
}

std::string join_ids(const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s += (i ? "," : "") + std::to_string(ids[i]);
    }
    return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << j.dump(2) << '\n';
    if (!os) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

qnet::QNetwork train_model(const std::vector<env::Trajectory>& data, int alg_id, int M,
                           const qnet::ModelConfig& shape, const train::LossConfig& loss) {
    qnet::ModelConfig mc = shape;
    mc.k = alg::action_count(alg_id);
    mc.bins = M;
    auto net = qnet::init_network(mc, derive_seed(loss.seed, 0x1A17));
    train::AdamW opt(net, loss);
    train::train(data, net, env::action_masks(alg_id, M), loss, opt);
    return net;
}

// ---------------------------------------------------------------------------------------
// collect

struct CollectArgs {
    Common common;
    data::CollectConfig cfg;
    std::string exploitation = "scripted_de_schedule";
    int dim = 0;
};

void setup_collect(CLI::App& app, CollectArgs& a) {
    auto* sub = app.add_subcommand("collect", "Collect an offline trajectory dataset");
    add_common(sub, a.common, true);
    auto& c = a.cfg;
    c.D = 10000;
    sub->add_option("--alg", c.alg_id, "Algorithm id (0, 1 or 2)")->capture_default_str();
    sub->add_option("--mu", c.mu, "Exploitation fraction")->capture_default_str();
    sub->add_option("--d", c.D, "Number of trajectories")->capture_default_str();
    sub->add_option("--t", c.T, "Generations per episode")->capture_default_str();
    sub->add_option("--m", c.M, "Bins per continuous hyper-parameter")->capture_default_str();
    sub->add_option("--exploitation", a.exploitation, "scripted_de_schedule or filtered_random")
        ->capture_default_str();
    sub->add_option("--functions", c.function_ids, "Training function ids")->delimiter(',');
    sub->add_option("--dim", a.dim, "Problem dimension for every function");
    sub->add_option("--instance-seed", c.instance_seed, "Problem instance seed")
        ->capture_default_str();
    sub->add_option("--jitter", c.jitter, "Scripted schedule jitter")->capture_default_str();
    sub->add_option("--calibration", c.calibration_episodes, "filtered_random calibration runs")
        ->capture_default_str();
    sub->add_option("--quantile", c.filter_quantile, "filtered_random return quantile")
        ->capture_default_str();
    sub->callback([sub, &a] {
        desk_default(sub, a.common, "--d", a.cfg.D, 500);
        desk_default(sub, a.common, "--t", a.cfg.T, 50);
        desk_default(sub, a.common, "--dim", a.dim, kDeskDim);
        desk_default(sub, a.common, "--exploitation", a.exploitation,
                     std::string("filtered_random"));
    });
}

int cmd_collect(CollectArgs& a, std::ostream& out) {
    auto& c = a.cfg;
    c.seed = a.common.seed;
    try {
        c.exploitation = data::parse_exploitation_kind(a.exploitation);
        if (a.dim > 0) {
            c.dim = a.dim;
        }
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    auto ds = data::collect(c);
    data::write_dataset(a.common.out, ds);
    const auto& m = ds.manifest;
    out << "collected " << m.D << " trajectories (" << m.exploitation_count << " exploitation, "
        << m.exploration_count << " exploration) alg=" << m.alg_id << " K=" << m.K
        << " M=" << m.M << " T=" << m.T << "\n";
    for (const auto& [policy, count] : m.policy_counts) {
        out << "  " << policy << ": " << count << "\n";
    }
    out << "functions " << join_ids(m.function_ids) << "\n";
    out << "checksum " << m.checksum << " -> " << a.common.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------------------
// train

struct TrainArgs {
    Common common;
    std::string data;
    std::string resume;
    train::LossConfig loss;
    qnet::ModelConfig model;
};

void add_loss_options(CLI::App* sub, train::LossConfig& l) {
    sub->add_option("--epochs", l.epochs)->capture_default_str();
    sub->add_option("--batch", l.batch_size)->capture_default_str();
    sub->add_option("--lr", l.learning_rate)->capture_default_str();
    sub->add_option("--wd", l.weight_decay, "AdamW weight decay")->capture_default_str();
    sub->add_option("--beta", l.beta, "Weight of the last-dimension TD term")
        ->capture_default_str();
    sub->add_option("--lambda", l.lambda, "Conservative regularisation weight")
        ->capture_default_str();
    sub->add_option("--gamma", l.gamma)->capture_default_str();
}

void add_model_options(CLI::App* sub, qnet::ModelConfig& m) {
    sub->add_option("--d-model", m.d_model)->capture_default_str();
    sub->add_option("--d-state", m.d_state)->capture_default_str();
    sub->add_option("--expand", m.expand)->capture_default_str();
    sub->add_option("--depth", m.depth, "Number of Mamba blocks")->capture_default_str();
}

void desk_training_defaults(CLI::App* sub, const Common& c, train::LossConfig& l,
                            qnet::ModelConfig& m) {
    desk_default(sub, c, "--epochs", l.epochs, 100);
    desk_default(sub, c, "--batch", l.batch_size, 32);
    desk_default(sub, c, "--d-model", m.d_model, kDeskDModel);
    desk_default(sub, c, "--d-state", m.d_state, kDeskDState);
}

void setup_train(CLI::App& app, TrainArgs& a) {
    auto* sub = app.add_subcommand("train", "Train the Q-network on a collected dataset");
    add_common(sub, a.common, true);
    sub->add_option("--data", a.data, "Dataset directory")->required();
    sub->add_option("--resume", a.resume, "Checkpoint to continue from");
    add_loss_options(sub, a.loss);
    add_model_options(sub, a.model);
    sub->callback([sub, &a] { desk_training_defaults(sub, a.common, a.loss, a.model); });
}

int cmd_train(TrainArgs& a, std::ostream& out) {
    a.loss.seed = a.common.seed;
    try {
        a.loss.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto ds = data::read_dataset(a.data);
    const auto& man = ds.manifest;
    const auto masks = env::action_masks(man.alg_id, man.M);

    qnet::QNetwork net;
    train::AdamW opt;
    int first_epoch = 0;
    if (!a.resume.empty()) {
        auto ckpt = qnet::load_checkpoint(a.resume);
        if (ckpt.model.cfg.k != man.K || ckpt.model.cfg.bins != man.M) {
            throw std::runtime_error("checkpoint model (K=" + std::to_string(ckpt.model.cfg.k) +
                                     ", M=" + std::to_string(ckpt.model.cfg.bins) +
                                     ") does not match the dataset (K=" +
                                     std::to_string(man.K) + ", M=" + std::to_string(man.M) +
                                     ")");
        }
        net = std::move(ckpt.model);
        opt = train::AdamW(net, a.loss);
        if (!ckpt.moment1.empty()) {
            opt.restore(ckpt.optimizer_step, std::move(ckpt.moment1), std::move(ckpt.moment2));
        }
        first_epoch = ckpt.epoch;
    } else {
        qnet::ModelConfig mc = a.model;
        mc.k = man.K;
        mc.bins = man.M;
        try {
            mc.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        net = qnet::init_network(mc, derive_seed(a.common.seed, 0x1A17));
        opt = train::AdamW(net, a.loss);
    }

    const fs::path dir = a.common.out;
    fs::create_directories(dir);
    nlohmann::json info;
    info["alg_id"] = man.alg_id;
    info["K"] = man.K;
    info["M"] = man.M;
    info["T"] = man.T;
    info["dataset_checksum"] = man.checksum;
    info["dataset_D"] = man.D;
    info["dataset_mu"] = man.mu;
    info["seed"] = a.common.seed;
    info["model"] = {{"d_model", net.cfg.d_model}, {"d_state", net.cfg.d_state},
                     {"expand", net.cfg.expand},   {"depth", net.cfg.depth},
                     {"head_dim", net.cfg.head_dim}, {"parameters", net.parameter_count()}};
    info["loss"] = {{"beta", a.loss.beta},           {"lambda", a.loss.lambda},
                    {"gamma", a.loss.gamma},         {"batch", a.loss.batch_size},
                    {"epochs", a.loss.epochs},       {"lr", a.loss.learning_rate},
                    {"weight_decay", a.loss.weight_decay}};
    info["resumed_from_epoch"] = first_epoch;

    CsvWriter loss_csv(dir / kLossFile, {"epoch", "loss", "td_intra", "td_last", "conservative"},
                       first_epoch > 0);
    int completed = first_epoch;
    auto on_epoch = [&](const train::EpochStats& s, const qnet::QNetwork& n,
                        const train::AdamW& o) {
        loss_csv.row({std::to_string(s.epoch), format_double(s.mean_loss),
                      format_double(s.td_intra), format_double(s.td_last),
                      format_double(s.conservative)});
        qnet::Checkpoint ck{n, s.epoch + 1, o.step_count(), o.moment1(), o.moment2()};
        qnet::save_checkpoint(dir / kCheckpointFile, ck);
        completed = s.epoch + 1;
        out << "epoch " << s.epoch << " loss " << format_double(s.mean_loss) << "\n";
    };
    if (first_epoch >= a.loss.epochs) {
        out << "checkpoint already holds " << first_epoch << " epochs; nothing to do\n";
        qnet::Checkpoint ck{net, first_epoch, opt.step_count(), opt.moment1(), opt.moment2()};
        qnet::save_checkpoint(dir / kCheckpointFile, ck);
    } else {
        train::train(ds.trajectories, net, masks, a.loss, opt, first_epoch, on_epoch);
    }
    info["epochs_completed"] = completed;
    write_json(dir / kTrainManifest, info);
    out << "checkpoint " << (dir / kCheckpointFile).string() << " after " << completed
        << " epochs\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------------------
// eval

struct EvalArgs {
    Common common;
    std::string checkpoint;
    EvalSetup setup;
    int dim = 0;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
    auto* sub = app.add_subcommand("eval", "Evaluate a trained policy against random control");
    add_common(sub, a.common, true);
    a.setup.function_ids = bbob::default_split().test_ids;
    sub->add_option("--checkpoint", a.checkpoint)->required();
    sub->add_option("--alg", a.setup.alg_id)->capture_default_str();
    sub->add_option("--runs", a.setup.runs)->capture_default_str();
    sub->add_option("--t", a.setup.T)->capture_default_str();
    sub->add_option("--functions", a.setup.function_ids, "Test function ids")->delimiter(',');
    sub->add_option("--dim", a.dim);
    sub->add_option("--instance-seed", a.setup.instance_seed)->capture_default_str();
    sub->callback([sub, &a] { desk_default(sub, a.common, "--dim", a.dim, kDeskDim); });
}

void summarize(const std::vector<EvalRow>& rows, CsvWriter& csv, std::ostream& out) {
    std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
    for (const auto& r : rows) {
        groups[{r.policy, std::to_string(r.problem)}].push_back(r.perf);
        groups[{r.policy, "all"}].push_back(r.perf);
    }
    for (const auto& [key, values] : groups) {
        const double m = mean(values);
        const double s = stddev(values);
        csv.row({key.second, key.first, format_double(m), format_double(s),
                 std::to_string(values.size())});
        out << "  " << key.first << " f" << key.second << ": " << m << " +- " << s << "\n";
    }
}

int cmd_eval(EvalArgs& a, std::ostream& out) {
    auto& s = a.setup;
    s.seed = a.common.seed;
    if (a.dim > 0) {
        s.dim = a.dim;
    }
    if (s.runs < 1 || s.T < 1 || s.function_ids.empty()) {
        throw UsageError("eval needs --runs >= 1, --t >= 1 and at least one function");
    }
    if (s.dim && !bbob::is_supported_dim(*s.dim)) {
        throw UsageError("unsupported dimension " + std::to_string(*s.dim));
    }
    if (!fs::exists(a.checkpoint)) {
        throw std::runtime_error("checkpoint not found: " + a.checkpoint);
    }
    auto ckpt = qnet::load_checkpoint(a.checkpoint);
    if (ckpt.model.cfg.k != alg::action_count(s.alg_id)) {
        throw std::runtime_error("checkpoint has K=" + std::to_string(ckpt.model.cfg.k) +
                                 " but alg " + std::to_string(s.alg_id) + " needs K=" +
                                 std::to_string(alg::action_count(s.alg_id)));
    }
    s.M = ckpt.model.cfg.bins;
    auto net = std::make_shared<const qnet::QNetwork>(std::move(ckpt.model));

    const auto start = std::chrono::steady_clock::now();
    const auto rows = evaluate_policies(s, net, true);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path dir = a.common.out;
    fs::create_directories(dir);
    {
        CsvWriter csv(dir / "eval.csv", {"problem", "run", "perf", "policy"});
        for (const auto& r : rows) {
            csv.row({std::to_string(r.problem), std::to_string(r.run), format_double(r.perf),
                     r.policy});
        }
    }
    CsvWriter summary(dir / "summary.csv", {"problem", "policy", "mean", "std", "runs"});
    out << "evaluated " << s.function_ids.size() << " problems x " << s.runs << " runs in "
        << seconds << " s\n";
    summarize(rows, summary, out);
    return kExitOk;
}

// ---------------------------------------------------------------------------------------
// ablate

struct AblateArgs {
    Common common;
    data::CollectConfig collect;
    train::LossConfig loss;
    qnet::ModelConfig model;
    EvalSetup eval;
    std::string exploitation = "scripted_de_schedule";
    int dim = 0;
};

void setup_ablate(CLI::App& app, AblateArgs& a) {
    auto* sub = app.add_subcommand("ablate", "Loss-weight, data-mix and bin-count sweeps");
    add_common(sub, a.common, true);
    a.collect.D = 10000;
    a.eval.function_ids = bbob::default_split().test_ids;
    sub->add_option("--alg", a.collect.alg_id)->capture_default_str();
    sub->add_option("--d", a.collect.D, "Trajectories per trained cell")->capture_default_str();
    sub->add_option("--t", a.collect.T)->capture_default_str();
    sub->add_option("--functions", a.collect.function_ids, "Training function ids")
        ->delimiter(',');
    sub->add_option("--test-functions", a.eval.function_ids)->delimiter(',');
    sub->add_option("--dim", a.dim);
    sub->add_option("--runs", a.eval.runs)->capture_default_str();
    sub->add_option("--exploitation", a.exploitation)->capture_default_str();
    add_loss_options(sub, a.loss);
    add_model_options(sub, a.model);
    sub->callback([sub, &a] {
        desk_training_defaults(sub, a.common, a.loss, a.model);
        desk_default(sub, a.common, "--d", a.collect.D, 100);
        desk_default(sub, a.common, "--t", a.collect.T, 20);
        desk_default(sub, a.common, "--epochs", a.loss.epochs, 10);
        desk_default(sub, a.common, "--batch", a.loss.batch_size, 16);
        desk_default(sub, a.common, "--runs", a.eval.runs, 5);
        desk_default(sub, a.common, "--dim", a.dim, kDeskDim);
        desk_default(sub, a.common, "--exploitation", a.exploitation,
                     std::string("filtered_random"));
    });
}

struct CellResult {
    double mean = 0.0;
    double std = 0.0;
    int runs = 0;
};

CellResult score_cell(const qnet::QNetwork& net, EvalSetup setup) {
    setup.M = net.cfg.bins;
    const auto rows =
        evaluate_policies(setup, std::make_shared<const qnet::QNetwork>(net), false);
    std::vector<double> per_run(static_cast<std::size_t>(setup.runs), 0.0);
    for (const auto& r : rows) {
        per_run[static_cast<std::size_t>(r.run)] += r.perf / setup.function_ids.size();
    }
    return {mean(per_run), stddev(per_run), setup.runs};
}

int cmd_ablate(AblateArgs& a, std::ostream& out) {
    auto& c = a.collect;
    c.seed = a.common.seed;
    c.mu = 0.5;
    if (a.dim > 0) {
        c.dim = a.dim;
        a.eval.dim = a.dim;
    }
    const int D = c.D;
    a.loss.seed = a.common.seed;
    try {
        c.exploitation = data::parse_exploitation_kind(a.exploitation);
        c.validate();
        a.loss.validate();
        a.model.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (a.eval.runs < 1 || a.eval.function_ids.empty()) {
        throw UsageError("ablate needs --runs >= 1 and at least one test function");
    }
    a.eval.alg_id = c.alg_id;
    a.eval.T = c.T;
    a.eval.seed = derive_seed(a.common.seed, 0xE7A1);

    // Both pools hold D trajectories so every mixing ratio can be drawn.
    data::CollectConfig base_cfg = c;
    base_cfg.D = 2 * D;
    out << "collecting base pool of " << base_cfg.D << " trajectories\n";
    const auto base = data::collect(base_cfg);
    const fs::path dir = a.common.out;
    fs::create_directories(dir);

    auto run_cell = [&](const std::vector<env::Trajectory>& data, int M, double lambda,
                        double beta) {
        train::LossConfig l = a.loss;
        l.lambda = lambda;
        l.beta = beta;
        const auto net = train_model(data, c.alg_id, M, a.model, l);
        return score_cell(net, a.eval);
    };

    const auto half = data::remix(base, 0.5, D, derive_seed(a.common.seed, 0xAB1));
    {
        CsvWriter csv(dir / "lambda_beta.csv", {"lambda", "beta", "mean", "std", "runs"});
        for (double lambda : {0.0, 1.0, 10.0}) {
            for (double beta : {1.0, 10.0}) {
                const auto r = run_cell(half.trajectories, c.M, lambda, beta);
                csv.row({format_double(lambda), format_double(beta), format_double(r.mean),
                         format_double(r.std), std::to_string(r.runs)});
                out << "lambda=" << lambda << " beta=" << beta << ": " << r.mean << " +- "
                    << r.std << "\n";
            }
        }
    }
    {
        CsvWriter csv(dir / "mu_sweep.csv", {"mu", "mean", "std", "runs"});
        for (double mu : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const auto mixed = data::remix(base, mu, D, derive_seed(a.common.seed, 0xAB2));
            const auto r = run_cell(mixed.trajectories, c.M, a.loss.lambda, a.loss.beta);
            csv.row({format_double(mu), format_double(r.mean), format_double(r.std),
                     std::to_string(r.runs)});
            out << "mu=" << mu << ": " << r.mean << " +- " << r.std << "\n";
        }
    }
    {
        CsvWriter csv(dir / "bins.csv", {"M", "mean", "std", "runs"});
        for (int M : {16, 32}) {
            data::CollectConfig bc = c;
            bc.M = M;
            const auto ds = M == c.M ? half : data::collect(bc);
            const auto r = run_cell(ds.trajectories, M, a.loss.lambda, a.loss.beta);
            csv.row({std::to_string(M), format_double(r.mean), format_double(r.std),
                     std::to_string(r.runs)});
            out << "M=" << M << ": " << r.mean << " +- " << r.std << "\n";
        }
    }
    out << "reports written to " << dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------------------
// verify

struct VerifyArgs {
    Common common;
    int mdps = 100;
    double decomp_tol = 1e-8;
    double grad_tol = 1e-4;
    int scan_seeds = 20;
    int episodes = 200;
    std::string data;
    std::string fault = "none";
};

void setup_verify(CLI::App& app, VerifyArgs& a) {
    auto* sub = app.add_subcommand("verify", "Run the self-verification suite");
    add_common(sub, a.common, false);
    sub->add_option("--mdps", a.mdps)->capture_default_str();
    sub->add_option("--decomp-tol", a.decomp_tol)->capture_default_str();
    sub->add_option("--grad-tol", a.grad_tol)->capture_default_str();
    sub->add_option("--scan-seeds", a.scan_seeds)->capture_default_str();
    sub->add_option("--episodes", a.episodes)->capture_default_str();
    sub->add_option("--data", a.data, "Dataset directory to revalidate");
    sub->add_option("--inject-fault", a.fault)
        ->check(CLI::IsMember({"none", "loss-sign"}))
        ->group("");
}

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

CheckResult check_decomposition(const VerifyArgs& a) {
    int failures = 0;
    double worst = 0.0;
    int greedy = 0;
    for (int i = 0; i < a.mdps; ++i) {
        Rng rng(derive_seed(a.common.seed, 0xDEC0, static_cast<std::uint64_t>(i)));
        const int states = 1 + static_cast<int>(rng.index(4));
        const int k = 1 + static_cast<int>(rng.index(3));
        const int m = 2 + static_cast<int>(rng.index(2));
        const auto mdp = train::random_mdp(states, k, m, 0.9, derive_seed(rng.engine()(), 1));
        const auto rep = train::verify_decomposition(mdp, a.decomp_tol);
        worst = std::max(worst, rep.max_value_gap);
        greedy += rep.greedy_checked;
        failures += rep.passed ? 0 : 1;
    }
    return {"decomposition", failures == 0,
            std::to_string(a.mdps) + " MDPs, max value gap " + format_double(worst) +
                ", greedy checks " + std::to_string(greedy) + ", failures " +
                std::to_string(failures) + ", tol " + format_double(a.decomp_tol)};
}

env::Trajectory small_trajectory(std::uint64_t seed, int T) {
    const auto problem = bbob::make_instance(1, 5, seed);
    env::EpisodeConfig ec;
    ec.alg_id = 0;
    ec.T = T;
    ec.episode_seed = derive_seed(seed, 0x6C);
    return env::run_episode(ec, problem,
                            data::random_policy(derive_seed(seed, 0x6D), env::action_masks(0)));
}

CheckResult check_gradients(const VerifyArgs& a) {
    qnet::ModelConfig mc;
    mc.k = 3;
    mc.d_model = 8;
    mc.d_state = 4;
    const auto net = qnet::init_network(mc, derive_seed(a.common.seed, 0x6A));
    const auto traj = small_trajectory(a.common.seed, 4);
    train::GradCheckOptions opts;
    opts.rel_tol = a.grad_tol;
    if (a.fault == "loss-sign") {
        opts.fault = train::LossFault::flip_conservative_sign;
    }
    const auto rep = train::grad_check(net, traj, env::action_masks(0), train::LossConfig{}, opts);
    return {"grad_check", rep.passed,
            "max rel error " + format_double(rep.max_rel_error) + " at " + rep.worst_tensor +
                "[" + std::to_string(rep.worst_index) + "], checked " +
                std::to_string(rep.checked) + " of " + std::to_string(rep.coordinates) +
                ", kinks skipped " + std::to_string(rep.skipped_kinks) +
                ", richardson ratio " + format_double(rep.richardson_ratio)};
}

CheckResult check_scan(const VerifyArgs& a) {
    double worst = 0.0;
    for (int s = 0; s < a.scan_seeds; ++s) {
        for (int L : {1, 7, 64, 2048}) {
            Rng rng(derive_seed(a.common.seed, 0x5CA, static_cast<std::uint64_t>(s * 4096 + L)));
            const auto block = ssm::init_block({8, 4, 2}, rng);
            const auto& p = block.ssm;
            Matrix h0(p.d_inner(), p.d_state());
            for (Index i = 0; i < h0.size(); ++i) {
                h0.data()[i] = rng.normal();
            }
            Matrix xs(L, p.d_inner());
            for (Index i = 0; i < xs.size(); ++i) {
                xs.data()[i] = rng.normal();
            }
            const auto seq = ssm::ssm_forward_sequential(p, h0, xs);
            const auto scan = ssm::ssm_forward_scan(p, h0, xs);
            worst = std::max(worst, (seq.ys - scan.ys).cwiseAbs().maxCoeff());
            worst = std::max(worst, (seq.h_final - scan.h_final).cwiseAbs().maxCoeff());
        }
    }
    return {"scan_equivalence", worst <= 1e-6,
            std::to_string(a.scan_seeds) + " seeds x L in {1,7,64,2048}, max abs diff " +
                format_double(worst)};
}

CheckResult check_rewards(const VerifyArgs& a) {
    const auto n = static_cast<std::size_t>(a.episodes);
    std::vector<double> worst_telescope(n, 0.0);
    std::vector<int> bad(n, 0);
    parallel_for(n, [&](std::size_t e) {
        const int fid = 1 + static_cast<int>(e % 24);
        const int alg_id = static_cast<int>(e % 3);
        const auto problem = bbob::make_instance(fid, 5, derive_seed(a.common.seed, 0x4E, e));
        env::EpisodeConfig ec;
        ec.alg_id = alg_id;
        ec.T = 20;
        ec.episode_seed = derive_seed(a.common.seed, 0x4F, e);
        const auto traj = env::run_episode(
            ec, problem, data::random_policy(derive_seed(ec.episode_seed, 3),
                                             env::action_masks(alg_id)));
        double sum = 0.0;
        for (const auto& s : traj.steps) {
            bad[e] += s.reward < 0.0 ? 1 : 0;
            sum += s.reward;
        }
        bad[e] += sum > 1.0 + 1e-9 ? 1 : 0;
        const auto& m = traj.meta;
        const double closed =
            (m.f_best_init - traj.steps.back().best_so_far_f) / (m.f_best_init - m.f_star);
        worst_telescope[e] = std::abs(sum - closed);
    });
    const double worst = *std::max_element(worst_telescope.begin(), worst_telescope.end());
    const int violations = std::accumulate(bad.begin(), bad.end(), 0);
    return {"reward_telescoping", violations == 0 && worst <= 1e-12,
            std::to_string(a.episodes) + " episodes, sign/bound violations " +
                std::to_string(violations) + ", max telescoping gap " + format_double(worst)};
}

CheckResult check_dataset(const VerifyArgs& a) {
    try {
        if (!a.data.empty()) {
            const auto ds = data::read_dataset(a.data);
            return {"dataset", true,
                    std::to_string(ds.trajectories.size()) + " trajectories revalidated in " +
                        a.data};
        }
        data::CollectConfig c;
        c.D = 8;
        c.T = 10;
        c.dim = 5;
        c.function_ids = {1, 4};
        c.seed = a.common.seed;
        auto ds = data::collect(c);
        const fs::path tmp = fs::temp_directory_path() /
                             ("qmamba-verify-" + std::to_string(a.common.seed) + "-" +
                              std::to_string(std::chrono::steady_clock::now()
                                                 .time_since_epoch()
                                                 .count()));
        data::write_dataset(tmp, ds);
        const auto back = data::read_dataset(tmp);
        fs::remove_all(tmp);
        bool same = back.trajectories.size() == ds.trajectories.size();
        for (std::size_t i = 0; same && i < ds.trajectories.size(); ++i) {
            same = data::trajectory_to_json_line(back.trajectories[i]) ==
                   data::trajectory_to_json_line(ds.trajectories[i]);
        }
        return {"dataset", same, "write/read round trip of 8 trajectories"};
    } catch (const std::exception& e) {
        return {"dataset", false, e.what()};
    }
}

int cmd_verify(VerifyArgs& a, std::ostream& out) {
    if (a.mdps < 1 || a.scan_seeds < 1 || a.episodes < 1 || !(a.decomp_tol > 0.0) ||
        !(a.grad_tol > 0.0)) {
        throw UsageError("verify counts and tolerances must be positive");
    }
    std::vector<std::function<CheckResult(const VerifyArgs&)>> checks = {
        check_decomposition, check_gradients, check_scan, check_rewards, check_dataset};
    std::vector<CheckResult> results;
    for (const auto& check : checks) {
        results.push_back(check(a));
        const auto& r = results.back();
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    }
    if (!a.common.out.empty()) {
        fs::create_directories(a.common.out);
        CsvWriter csv(fs::path(a.common.out) / "verify.csv", {"check", "status", "detail"});
        for (const auto& r : results) {
            csv.row({r.name, r.passed ? "PASS" : "FAIL", r.detail});
        }
    }
    const bool all = std::all_of(results.begin(), results.end(),
                                 [](const CheckResult& r) { return r.passed; });
    return all ? kExitOk : kExitFailure;
}

}  // namespace

double mean(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) {
        return 0.0;
    }
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) {
        ss += (x - m) * (x - m);
    }
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<EvalRow> evaluate_policies(const EvalSetup& setup,
                                       std::shared_ptr<const qnet::QNetwork> net,
                                       bool include_random) {
    const auto split = bbob::default_split();
    const auto masks = env::action_masks(setup.alg_id, setup.M);
    std::vector<bbob::ProblemInstance> problems;
    for (int fid : setup.function_ids) {
        problems.push_back(
            bbob::make_instance(fid, setup.dim.value_or(split.dims.at(fid)), setup.instance_seed));
    }
    std::vector<std::string> policies;
    if (net) {
        policies.push_back("qmamba");
    }
    if (include_random) {
        policies.push_back("random");
    }
    const std::size_t runs = static_cast<std::size_t>(setup.runs);
    const std::size_t per_problem = runs * policies.size();
    std::vector<EvalRow> rows(problems.size() * per_problem);
    parallel_for(rows.size(), [&](std::size_t job) {
        const std::size_t p = job / per_problem;
        const std::size_t run = (job % per_problem) / policies.size();
        const std::string& policy = policies[job % policies.size()];
        env::EpisodeConfig ec;
        ec.alg_id = setup.alg_id;
        ec.T = setup.T;
        ec.M = setup.M;
        ec.episode_seed = derive_seed(setup.seed, static_cast<std::uint64_t>(setup.function_ids[p]),
                                      run);
        ec.policy_id = policy;
        const env::Policy pol = policy == "qmamba"
                                    ? qnet::greedy_policy(net, masks)
                                    : data::random_policy(derive_seed(ec.episode_seed, 3), masks);
        const auto traj = env::run_episode(ec, problems[p], pol);
        rows[job] = {setup.function_ids[p], static_cast<int>(run), traj.total_reward(), policy};
    });
    return rows;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Offline meta-learned hyper-parameter control for evolutionary optimizers",
                 "qmamba"};
    app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
    app.require_subcommand(1);
    app.fallthrough();

    CollectArgs collect_args;
    TrainArgs train_args;
    EvalArgs eval_args;
    AblateArgs ablate_args;
    VerifyArgs verify_args;
    setup_collect(app, collect_args);
    setup_train(app, train_args);
    setup_eval(app, eval_args);
    setup_ablate(app, ablate_args);
    setup_verify(app, verify_args);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "collect") {
            return cmd_collect(collect_args, out);
        }
        if (name == "train") {
            return cmd_train(train_args, out);
        }
        if (name == "eval") {
            return cmd_eval(eval_args, out);
        }
        if (name == "ablate") {
            return cmd_ablate(ablate_args, out);
        }
        return cmd_verify(verify_args, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace qmamba::cli
