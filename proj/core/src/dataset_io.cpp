#include "qmamba/dataset_io.hpp"

#include "qmamba/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qmamba::data {
namespace {

using nlohmann::json;

constexpr std::uint64_t kExploitStream = 0xE7;
constexpr std::uint64_t kExploreStream = 0xE8;
constexpr std::uint64_t kCalibrationStream = 0xCA1;

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

json manifest_to_json(const DatasetManifest& m) {
    json j;
    j["version"] = m.version;
    j["D"] = m.D;
    j["mu"] = m.mu;
    j["exploitation_count"] = m.exploitation_count;
    j["exploration_count"] = m.exploration_count;
    j["policy_counts"] = m.policy_counts;
    j["alg_id"] = m.alg_id;
    j["K"] = m.K;
    j["M"] = m.M;
    j["T"] = m.T;
    j["seed"] = m.seed;
    j["function_ids"] = m.function_ids;
    j["exploitation_source"] = m.exploitation_source;
    j["checksum"] = m.checksum;
    return j;
}

DatasetManifest manifest_from_json(const json& j) {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kFormatVersion) {
        throw std::runtime_error("unsupported dataset format version " +
                                 std::to_string(m.version) + " (expected " +
                                 std::to_string(kFormatVersion) + ")");
    }
    m.D = j.at("D").get<int>();
    m.mu = j.at("mu").get<double>();
    m.exploitation_count = j.at("exploitation_count").get<int>();
    m.exploration_count = j.at("exploration_count").get<int>();
    m.policy_counts = j.at("policy_counts").get<std::map<std::string, int>>();
    m.alg_id = j.at("alg_id").get<int>();
    m.K = j.at("K").get<int>();
    m.M = j.at("M").get<int>();
    m.T = j.at("T").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.function_ids = j.at("function_ids").get<std::vector<int>>();
    m.exploitation_source = j.at("exploitation_source").get<std::string>();
    m.checksum = j.at("checksum").get<std::string>();
    return m;
}

void fill_counts(DatasetManifest& m, const std::vector<env::Trajectory>& trajs) {
    m.D = static_cast<int>(trajs.size());
    m.exploitation_count = 0;
    m.exploration_count = 0;
    m.policy_counts.clear();
    for (const auto& t : trajs) {
        (t.meta.role == "exploitation" ? m.exploitation_count : m.exploration_count) += 1;
        m.policy_counts[t.meta.policy_id] += 1;
    }
}

}  // namespace

env::Policy random_policy(std::uint64_t seed, std::vector<int> masks) {
    auto rng = std::make_shared<Rng>(seed);
    return [rng, masks = std::move(masks)](const env::OptimizationState&, int) {
        std::vector<int> bins;
        bins.reserve(masks.size());
        for (int m : masks) {
            bins.push_back(static_cast<int>(rng->index(m)));
        }
        return bins;
    };
}

ExploitationKind parse_exploitation_kind(const std::string& name) {
    if (name == "scripted_de_schedule") {
        return ExploitationKind::scripted_de_schedule;
    }
    if (name == "filtered_random") {
        return ExploitationKind::filtered_random;
    }
    throw std::invalid_argument("unknown exploitation policy '" + name +
                                "' (expected scripted_de_schedule or filtered_random)");
}

std::string to_string(ExploitationKind kind) {
    return kind == ExploitationKind::scripted_de_schedule ? "scripted_de_schedule"
                                                          : "filtered_random";
}

env::Policy scripted_de_schedule(int alg_id, int M, int T, std::uint64_t seed, double jitter) {
    const auto specs = alg::alg_spec(alg_id);
    auto rng = std::make_shared<Rng>(seed);
    std::vector<int> preferred(specs.size(), 0);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].is_discrete()) {
            preferred[i] = static_cast<int>(rng->index(env::mask_bins(specs[i], M)));
        }
    }
    return [specs, preferred, rng, M, T, jitter](const env::OptimizationState&, int t) {
        const double progress = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
        std::vector<int> bins(specs.size());
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const auto& s = specs[i];
            if (s.is_discrete()) {
                bins[i] = preferred[i];
                continue;
            }
            double value = 0.5;
            if (starts_with(s.name, "F")) {
                value = 0.9 + (0.3 - 0.9) * progress;
            } else if (starts_with(s.name, "Cr")) {
                value = 0.9;
            } else if (s.name == "sigma") {
                value = 0.3 + (0.05 - 0.3) * progress;
            }
            if (jitter > 0.0) {
                value += rng->uniform(-jitter, jitter);
            }
            value = std::clamp(value, s.lo, s.hi);
            bins[i] = env::encode_value(s, value, M);
        }
        return bins;
    };
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw std::invalid_argument("quantile of an empty sample");
    }
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void CollectConfig::validate() const {
    alg::alg_spec(alg_id);
    if (!(mu >= 0.0 && mu <= 1.0)) {
        throw std::invalid_argument("mu must lie in [0, 1]");
    }
    if (D < 1 || T < 1) {
        throw std::invalid_argument("D and T must be positive");
    }
    if (M < 2 || (M & (M - 1)) != 0) {
        throw std::invalid_argument("M must be a power of two");
    }
    if (dim && !bbob::is_supported_dim(*dim)) {
        throw std::invalid_argument("unsupported dimension " + std::to_string(*dim));
    }
    if (calibration_episodes < 1 || max_attempts < 1) {
        throw std::invalid_argument("calibration episodes and attempts must be positive");
    }
}

std::vector<bbob::ProblemInstance> training_problems(const CollectConfig& cfg) {
    const auto split = bbob::default_split();
    const auto ids = cfg.function_ids.empty() ? split.train_ids : cfg.function_ids;
    if (ids.empty()) {
        throw std::invalid_argument("no training problems");
    }
    std::vector<bbob::ProblemInstance> out;
    for (int id : ids) {
        const int dim = cfg.dim.value_or(split.dims.at(id));
        out.push_back(bbob::make_instance(id, dim, cfg.instance_seed));
    }
    return out;
}

Dataset collect(const CollectConfig& cfg) {
    cfg.validate();
    const auto problems = training_problems(cfg);
    const auto masks = env::action_masks(cfg.alg_id, cfg.M);
    const auto P = problems.size();
    const int n_exploit = static_cast<int>(std::lround(cfg.mu * cfg.D));

    auto episode = [&](std::uint64_t episode_seed, const std::string& policy_id,
                       const std::string& role, const env::Policy& policy,
                       const bbob::ProblemInstance& problem) {
        env::EpisodeConfig ec;
        ec.alg_id = cfg.alg_id;
        ec.T = cfg.T;
        ec.M = cfg.M;
        ec.episode_seed = episode_seed;
        ec.normalize = cfg.normalize;
        ec.options = cfg.options;
        ec.policy_id = policy_id;
        ec.role = role;
        return env::run_episode(ec, problem, policy);
    };

    std::vector<double> thresholds(P, 0.0);
    const bool filtered = cfg.exploitation == ExploitationKind::filtered_random;
    if (filtered && n_exploit > 0) {
        const auto per = static_cast<std::size_t>(cfg.calibration_episodes);
        std::vector<double> returns(P * per);
        parallel_for(P * per, [&](std::size_t k) {
            const std::size_t p = k / per;
            const std::uint64_t es = derive_seed(cfg.seed, kCalibrationStream, k);
            returns[k] = episode(es, "random", "exploration",
                                 random_policy(derive_seed(es, 3), masks), problems[p])
                             .total_reward();
        });
        for (std::size_t p = 0; p < P; ++p) {
            thresholds[p] = quantile(
                std::vector<double>(returns.begin() + static_cast<std::ptrdiff_t>(p * per),
                                    returns.begin() + static_cast<std::ptrdiff_t>((p + 1) * per)),
                cfg.filter_quantile);
        }
    }

    Dataset ds;
    ds.trajectories.resize(static_cast<std::size_t>(cfg.D));
    parallel_for(static_cast<std::size_t>(cfg.D), [&](std::size_t e) {
        const bool exploit = static_cast<int>(e) < n_exploit;
        const std::size_t local = exploit ? e : e - static_cast<std::size_t>(n_exploit);
        const auto& problem = problems[local % P];
        const std::uint64_t es =
            derive_seed(cfg.seed, exploit ? kExploitStream : kExploreStream, local);
        auto& out = ds.trajectories[e];
        if (!exploit) {
            out = episode(es, "random", "exploration", random_policy(derive_seed(es, 3), masks),
                          problem);
        } else if (!filtered) {
            out = episode(es, to_string(cfg.exploitation), "exploitation",
                          scripted_de_schedule(cfg.alg_id, cfg.M, cfg.T, derive_seed(es, 4),
                                               cfg.jitter),
                          problem);
        } else {
            bool have = false;
            for (int a = 0; a < cfg.max_attempts; ++a) {
                const std::uint64_t as = derive_seed(es, 5, static_cast<std::uint64_t>(a));
                auto traj = episode(as, to_string(cfg.exploitation), "exploitation",
                                    random_policy(derive_seed(as, 3), masks), problem);
                const double ret = traj.total_reward();
                if (!have || ret > out.total_reward()) {
                    out = std::move(traj);
                    have = true;
                }
                if (ret > thresholds[local % P]) {
                    break;
                }
            }
        }
    });

    auto& m = ds.manifest;
    m.mu = cfg.mu;
    m.alg_id = cfg.alg_id;
    m.K = alg::action_count(cfg.alg_id);
    m.M = cfg.M;
    m.T = cfg.T;
    m.seed = cfg.seed;
    for (const auto& p : problems) {
        m.function_ids.push_back(p.function_id());
    }
    m.exploitation_source = to_string(cfg.exploitation);
    fill_counts(m, ds.trajectories);
    return ds;
}

Dataset remix(const Dataset& source, double mu, int D, std::uint64_t seed) {
    if (!(mu >= 0.0 && mu <= 1.0) || D < 1) {
        throw std::invalid_argument("remix needs mu in [0, 1] and D >= 1");
    }
    std::vector<std::size_t> exploit;
    std::vector<std::size_t> explore;
    for (std::size_t i = 0; i < source.trajectories.size(); ++i) {
        (source.trajectories[i].meta.role == "exploitation" ? exploit : explore).push_back(i);
    }
    const auto want_exploit = static_cast<std::size_t>(std::lround(mu * D));
    const std::size_t want_explore = static_cast<std::size_t>(D) - want_exploit;
    if (want_exploit > exploit.size() || want_explore > explore.size()) {
        throw std::invalid_argument("source dataset holds " + std::to_string(exploit.size()) +
                                    " exploitation and " + std::to_string(explore.size()) +
                                    " exploration trajectories, not enough for the request");
    }
    Rng rng(derive_seed(seed, 0x3E31));
    std::shuffle(exploit.begin(), exploit.end(), rng.engine());
    std::shuffle(explore.begin(), explore.end(), rng.engine());

    Dataset out;
    out.manifest = source.manifest;
    out.manifest.mu = mu;
    for (std::size_t i = 0; i < want_exploit; ++i) {
        out.trajectories.push_back(source.trajectories[exploit[i]]);
    }
    for (std::size_t i = 0; i < want_explore; ++i) {
        out.trajectories.push_back(source.trajectories[explore[i]]);
    }
    fill_counts(out.manifest, out.trajectories);
    out.manifest.checksum.clear();
    return out;
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string trajectory_to_json_line(const env::Trajectory& traj) {
    const auto& m = traj.meta;
    json j;
    j["alg_id"] = m.alg_id;
    j["K"] = m.K;
    j["M"] = m.M;
    j["function_id"] = m.function_id;
    j["dim"] = m.dim;
    j["instance_seed"] = m.instance_seed;
    j["episode_seed"] = m.episode_seed;
    j["T"] = m.T;
    j["policy_id"] = m.policy_id;
    j["role"] = m.role;
    j["f_best_init"] = m.f_best_init;
    j["f_star"] = m.f_star;
    json steps = json::array();
    for (const auto& s : traj.steps) {
        steps.push_back({{"s", s.state}, {"a", s.actions}, {"r", s.reward}, {"f", s.best_so_far_f}});
    }
    j["steps"] = std::move(steps);
    return j.dump();
}

env::Trajectory trajectory_from_json_line(const std::string& line) {
    const json j = json::parse(line);
    env::Trajectory traj;
    auto& m = traj.meta;
    m.alg_id = j.at("alg_id").get<int>();
    m.K = j.at("K").get<int>();
    m.M = j.at("M").get<int>();
    m.function_id = j.at("function_id").get<int>();
    m.dim = j.at("dim").get<int>();
    m.instance_seed = j.at("instance_seed").get<std::uint64_t>();
    m.episode_seed = j.at("episode_seed").get<std::uint64_t>();
    m.T = j.at("T").get<int>();
    m.policy_id = j.at("policy_id").get<std::string>();
    m.role = j.at("role").get<std::string>();
    m.f_best_init = j.at("f_best_init").get<double>();
    m.f_star = j.at("f_star").get<double>();
    for (const auto& s : j.at("steps")) {
        env::StepRecord rec;
        rec.state = s.at("s").get<env::OptimizationState>();
        rec.actions = s.at("a").get<std::vector<int>>();
        rec.reward = s.at("r").get<double>();
        rec.best_so_far_f = s.at("f").get<double>();
        traj.steps.push_back(std::move(rec));
    }
    return traj;
}

void validate_trajectory(const env::Trajectory& traj) {
    const auto& m = traj.meta;
    if (static_cast<int>(traj.steps.size()) != m.T) {
        throw std::runtime_error("trajectory has " + std::to_string(traj.steps.size()) +
                                 " steps but T=" + std::to_string(m.T));
    }
    if (m.role != "exploitation" && m.role != "exploration") {
        throw std::runtime_error("unknown trajectory role '" + m.role + "'");
    }
    const auto masks = env::action_masks(m.alg_id, m.M);
    if (static_cast<int>(masks.size()) != m.K) {
        throw std::runtime_error("K does not match the algorithm");
    }
    double prev = m.f_best_init;
    double sum = 0.0;
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
        const auto& s = traj.steps[t];
        if (s.actions.size() != masks.size()) {
            throw std::runtime_error("step " + std::to_string(t) + " has the wrong action count");
        }
        for (std::size_t i = 0; i < masks.size(); ++i) {
            if (s.actions[i] < 0 || s.actions[i] >= masks[i]) {
                throw std::runtime_error("step " + std::to_string(t) + " action " +
                                         std::to_string(i) + " is out of range");
            }
        }
        if (!(s.reward >= 0.0)) {
            throw std::runtime_error("step " + std::to_string(t) + " has a negative reward");
        }
        const double expected = env::reward(prev, s.best_so_far_f, m.f_best_init, m.f_star);
        if (std::abs(expected - s.reward) > 1e-9) {
            throw std::runtime_error("step " + std::to_string(t) +
                                     " reward disagrees with the best-so-far sequence");
        }
        prev = s.best_so_far_f;
        sum += s.reward;
    }
    if (sum > 1.0 + 1e-9) {
        throw std::runtime_error("episode return " + std::to_string(sum) + " exceeds 1");
    }
}

void write_dataset(const std::filesystem::path& dir, Dataset& dataset) {
    std::filesystem::create_directories(dir);
    std::string body;
    for (const auto& t : dataset.trajectories) {
        body += trajectory_to_json_line(t);
        body += '\n';
    }
    fill_counts(dataset.manifest, dataset.trajectories);
    dataset.manifest.checksum = fnv1a_hex(body);
    {
        std::ofstream os(dir / kTrajectoryFile, std::ios::binary | std::ios::trunc);
        os << body;
        if (!os) {
            throw std::runtime_error("failed writing " + (dir / kTrajectoryFile).string());
        }
    }
    std::ofstream os(dir / kManifestFile, std::ios::binary | std::ios::trunc);
    os << manifest_to_json(dataset.manifest).dump(2) << '\n';
    if (!os) {
        throw std::runtime_error("failed writing " + (dir / kManifestFile).string());
    }
}

namespace {

std::vector<env::Trajectory> parse_lines(const std::string& body, const std::string& source) {
    std::vector<env::Trajectory> out;
    std::size_t pos = 0;
    int line_no = 0;
    while (pos < body.size()) {
        ++line_no;
        const std::size_t end = body.find('\n', pos);
        const std::string line =
            body.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = end == std::string::npos ? body.size() : end + 1;
        if (line.empty()) {
            continue;
        }
        try {
            auto traj = trajectory_from_json_line(line);
            validate_trajectory(traj);
            out.push_back(std::move(traj));
        } catch (const std::exception& e) {
            throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

std::vector<env::Trajectory> read_trajectories(const std::filesystem::path& file) {
    return parse_lines(read_file(file), file.string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    const auto manifest_path = dir / kManifestFile;
    try {
        ds.manifest = manifest_from_json(json::parse(read_file(manifest_path)));
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest_path.string() + ": " + e.what());
    }
    const auto traj_path = dir / kTrajectoryFile;
    const std::string body = read_file(traj_path);
    ds.trajectories = parse_lines(body, traj_path.string());
    if (fnv1a_hex(body) != ds.manifest.checksum) {
        throw std::runtime_error("checksum mismatch for " + traj_path.string());
    }
    DatasetManifest counted = ds.manifest;
    fill_counts(counted, ds.trajectories);
    if (counted.D != ds.manifest.D || counted.exploitation_count != ds.manifest.exploitation_count ||
        counted.exploration_count != ds.manifest.exploration_count ||
        counted.policy_counts != ds.manifest.policy_counts) {
        throw std::runtime_error("dataset composition does not match its manifest");
    }
    for (const auto& t : ds.trajectories) {
        if (t.meta.K != ds.manifest.K || t.meta.M != ds.manifest.M ||
            t.meta.alg_id != ds.manifest.alg_id) {
            throw std::runtime_error("trajectory shape does not match the manifest");
        }
    }
    return ds;
}

}  // namespace qmamba::data
