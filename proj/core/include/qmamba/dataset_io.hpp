#pragma once

#include "qmamba/algorithms.hpp"
#include "qmamba/dac_env.hpp"
#include "qmamba/problem_suite.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qmamba::data {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTrajectoryFile = "trajectories.jsonl";

/// Uniform bin in [0, m_i) for every dimension.
env::Policy random_policy(std::uint64_t seed, std::vector<int> masks);

enum class ExploitationKind { scripted_de_schedule, filtered_random };

ExploitationKind parse_exploitation_kind(const std::string& name);
std::string to_string(ExploitationKind kind);

/// Hand-written DE schedule on the bin grid. Parameters named F* anneal from 0.9 to 0.3
/// over the episode, Cr* hold at 0.9, sigma anneals from 0.3 to 0.05, and each discrete
/// parameter keeps one seeded choice. jitter is the half-width of a uniform perturbation
/// applied in value space before rounding to the nearest bin.
env::Policy scripted_de_schedule(int alg_id, int M, int T, std::uint64_t seed, double jitter);

/// Type-7 (linear interpolation) sample quantile.
double quantile(std::vector<double> values, double q);

struct CollectConfig {
    int alg_id = 0;
    int M = 16;
    int T = 50;
    int D = 500;
    double mu = 0.5;
    std::uint64_t seed = 0;
    /// Seed used to instantiate the training problems.
    std::uint64_t instance_seed = 0;
    ExploitationKind exploitation = ExploitationKind::scripted_de_schedule;
    /// Defaults to the training ids of default_split() when empty.
    std::vector<int> function_ids;
    /// Replaces the per-function dimension of the split when set.
    std::optional<int> dim;
    double jitter = 0.05;
    int calibration_episodes = 16;
    double filter_quantile = 0.5;
    int max_attempts = 8;
    bool normalize = true;
    alg::AlgorithmOptions options{};

    void validate() const;
};

struct DatasetManifest {
    int version = kFormatVersion;
    int D = 0;
    double mu = 0.0;
    int exploitation_count = 0;
    int exploration_count = 0;
    std::map<std::string, int> policy_counts;
    int alg_id = 0;
    int K = 0;
    int M = 16;
    int T = 0;
    std::uint64_t seed = 0;
    std::vector<int> function_ids;
    std::string exploitation_source;
    /// FNV-1a 64 of the trajectory file, 16 hex digits.
    std::string checksum;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<env::Trajectory> trajectories;
};

/// Instances the collector cycles over, in order.
std::vector<bbob::ProblemInstance> training_problems(const CollectConfig& cfg);

/// round(mu * D) exploitation episodes followed by the exploration episodes. Episodes run in
/// parallel; the result does not depend on the thread count.
Dataset collect(const CollectConfig& cfg);

/// New dataset of D trajectories with round(mu * D) drawn from the exploitation pool of
/// source and the rest from its exploration pool.
Dataset remix(const Dataset& source, double mu, int D, std::uint64_t seed);

std::string fnv1a_hex(const std::string& bytes);

std::string trajectory_to_json_line(const env::Trajectory& traj);
env::Trajectory trajectory_from_json_line(const std::string& line);

/// Checks lengths, action ranges, reward signs, reward consistency with the recorded
/// best-so-far sequence (1e-9) and the return bound. Throws std::runtime_error.
void validate_trajectory(const env::Trajectory& traj);

/// Writes manifest.json and trajectories.jsonl into dir, creating it if needed. The
/// manifest checksum is recomputed from the written bytes.
void write_dataset(const std::filesystem::path& dir, Dataset& dataset);

/// Reads and validates every record; errors name the offending line.
std::vector<env::Trajectory> read_trajectories(const std::filesystem::path& file);

/// Reads both files, validating version, checksum, records and composition.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace qmamba::data
