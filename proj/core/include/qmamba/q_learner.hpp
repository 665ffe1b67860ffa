#pragma once

#include "qmamba/common.hpp"
#include "qmamba/dac_env.hpp"
#include "qmamba/ssm_core.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

namespace qmamba::qnet {

/// Token value that stands for the start-of-sequence code (all bits set).
inline constexpr int kStartToken = -1;

struct ModelConfig {
    int k = 3;
    int bins = 16;
    int d_model = 64;
    int d_state = 16;
    int expand = 2;
    int depth = 1;
    int head_dim = 16;
    double leaky_slope = 0.01;

    /// log2(bins) + 1: bins use the low codes, the start token sets every bit.
    int token_bits() const;
    int input_dim() const { return env::kStateDim + token_bits(); }
    ssm::SsmConfig ssm() const { return {d_model, d_state, expand}; }
    /// Throws std::invalid_argument on non-positive sizes or a bin count that is not a
    /// power of two.
    void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// theta: input embedding, Mamba blocks, the d_model -> head_dim projection and the
/// Q-value head. Gradients use the same type.
struct QNetwork {
    ModelConfig cfg;
    Matrix w_embed;  // d_model x input_dim
    Vector b_embed;
    std::vector<ssm::MambaBlockParams> blocks;
    Matrix w_proj;  // head_dim x d_model
    Vector b_proj;
    Matrix w_head;  // bins x head_dim
    Vector b_head;

    static QNetwork zeros(const ModelConfig& cfg);
    void set_zero();
    std::vector<ssm::TensorView> views();
    Index parameter_count();
};

QNetwork init_network(const ModelConfig& cfg, std::uint64_t seed);

/// Big-endian binary code of a bin, or all ones for kStartToken.
Vector tokenize(int bin, int bits);
int detokenize(const Vector& token);

/// Per-block hidden states.
using NetworkState = std::vector<ssm::HiddenState>;

NetworkState zero_state(const ModelConfig& cfg);

struct ForwardCache {
    Matrix inputs;
    std::vector<ssm::BlockCache> blocks;
    Matrix block_out;
    Matrix proj;
    Matrix head_pre;
};

struct SequenceOutput {
    Matrix q;  // L x bins
    NetworkState h_final;
};

/// Rows of inputs are [s, token] decision steps processed in order with h threaded
/// through.
SequenceOutput forward_sequence(const QNetwork& net, const NetworkState& h0,
                                const Matrix& inputs, ForwardCache* cache = nullptr);

struct QStep {
    Vector q;
    NetworkState h;
};

/// One decision step. Pure: identical arguments give identical results.
QStep q_step(const QNetwork& net, const env::OptimizationState& state, int prev_token,
             const NetworkState& h);

/// Lowest index of the maximum among the first `admissible` entries.
int masked_argmax(const Eigen::Ref<const Vector>& q, int admissible);

struct Decoded {
    std::vector<int> bins;
    NetworkState h;
    std::vector<Vector> q;
};

/// Greedy autoregressive decode of one generation, starting from the start token.
Decoded decode_episode_actions(const QNetwork& net, const env::OptimizationState& state,
                               const std::vector<int>& masks, const NetworkState& h);

/// Teacher-forced [s, token] rows for every (t, i) of a trajectory, t-major.
Matrix teacher_inputs(const env::Trajectory& traj, const ModelConfig& cfg);

/// (T*K) x bins Q-values under teacher forcing, hidden state threaded from zero.
Matrix q_values_for_trajectory(const QNetwork& net, const env::Trajectory& traj,
                               ForwardCache* cache = nullptr);

/// Gradients of a scalar loss with respect to every parameter given dLoss/dQ.
QNetwork backward(const QNetwork& net, const ForwardCache& cache, const Matrix& grad_q);

/// Greedy policy with its own hidden state; create one per episode.
env::Policy greedy_policy(std::shared_ptr<const QNetwork> net, std::vector<int> masks);

struct Checkpoint {
    QNetwork model;
    int epoch = 0;
    std::int64_t optimizer_step = 0;
    /// Optimizer moments in views() order; empty when not saved.
    std::vector<Vector> moment1;
    std::vector<Vector> moment2;
};

/// Binary container: magic, version, model config, then named tensors with their shapes
/// as little-endian 64-bit floats.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qmamba::qnet
