#include "qmamba/q_learner.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace qmamba::qnet {
namespace {

constexpr char kMagic[8] = {'Q', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

double leaky(double v, double slope) { return v > 0.0 ? v : slope * v; }
double leaky_grad(double v, double slope) { return v > 0.0 ? 1.0 : slope; }

void fill_uniform(Matrix& m, double bound, Rng& rng) {
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-bound, bound);
    }
}

void write_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void write_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t read_uint(std::istream& is, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = is.get();
        if (c == std::char_traits<char>::eof()) {
            throw std::runtime_error("checkpoint is truncated");
        }
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

std::uint32_t read_u32(std::istream& is) { return static_cast<std::uint32_t>(read_uint(is, 4)); }
double read_f64(std::istream& is) { return std::bit_cast<double>(read_uint(is, 8)); }

void write_tensor(std::ostream& os, const std::string& name, const double* data, Index rows,
                  Index cols) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<std::uint32_t>(rows));
    write_u32(os, static_cast<std::uint32_t>(cols));
    for (Index i = 0; i < rows * cols; ++i) {
        write_f64(os, data[i]);
    }
}

struct RawTensor {
    Index rows = 0;
    Index cols = 0;
    std::vector<double> data;
};

}  // namespace

int ModelConfig::token_bits() const { return std::countr_zero(static_cast<unsigned>(bins)) + 1; }

void ModelConfig::validate() const {
    if (k < 1 || d_model < 1 || d_state < 1 || expand < 1 || depth < 1 || head_dim < 1) {
        throw std::invalid_argument("model sizes must be positive");
    }
    if (bins < 2 || !std::has_single_bit(static_cast<unsigned>(bins))) {
        throw std::invalid_argument("bin count must be a power of two, got " +
                                    std::to_string(bins));
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
        throw std::invalid_argument("leaky slope must lie in [0, 1)");
    }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.k == b.k && a.bins == b.bins && a.d_model == b.d_model && a.d_state == b.d_state &&
           a.expand == b.expand && a.depth == b.depth && a.head_dim == b.head_dim &&
           a.leaky_slope == b.leaky_slope;
}

QNetwork QNetwork::zeros(const ModelConfig& cfg) {
    cfg.validate();
    QNetwork n;
    n.cfg = cfg;
    n.w_embed = Matrix::Zero(cfg.d_model, cfg.input_dim());
    n.b_embed = Vector::Zero(cfg.d_model);
    for (int b = 0; b < cfg.depth; ++b) {
        n.blocks.push_back(ssm::MambaBlockParams::zeros(cfg.ssm()));
    }
    n.w_proj = Matrix::Zero(cfg.head_dim, cfg.d_model);
    n.b_proj = Vector::Zero(cfg.head_dim);
    n.w_head = Matrix::Zero(cfg.bins, cfg.head_dim);
    n.b_head = Vector::Zero(cfg.bins);
    return n;
}

void QNetwork::set_zero() {
    w_embed.setZero();
    b_embed.setZero();
    for (auto& b : blocks) {
        b.set_zero();
    }
    w_proj.setZero();
    b_proj.setZero();
    w_head.setZero();
    b_head.setZero();
}

std::vector<ssm::TensorView> QNetwork::views() {
    std::vector<ssm::TensorView> out;
    out.push_back({"embed.w", w_embed.data(), w_embed.rows(), w_embed.cols()});
    out.push_back({"embed.b", b_embed.data(), b_embed.size(), 1});
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        ssm::collect_views(blocks[b], "block" + std::to_string(b) + ".", out);
    }
    out.push_back({"proj.w", w_proj.data(), w_proj.rows(), w_proj.cols()});
    out.push_back({"proj.b", b_proj.data(), b_proj.size(), 1});
    out.push_back({"head.w", w_head.data(), w_head.rows(), w_head.cols()});
    out.push_back({"head.b", b_head.data(), b_head.size(), 1});
    return out;
}

Index QNetwork::parameter_count() {
    Index n = 0;
    for (const auto& v : views()) {
        n += v.size();
    }
    return n;
}

QNetwork init_network(const ModelConfig& cfg, std::uint64_t seed) {
    auto net = QNetwork::zeros(cfg);
    Rng rng(derive_seed(seed, 0xE3BED));
    fill_uniform(net.w_embed, 1.0 / std::sqrt(static_cast<double>(cfg.input_dim())), rng);
    for (auto& b : net.blocks) {
        b = ssm::init_block(cfg.ssm(), rng);
    }
    fill_uniform(net.w_proj, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);
    fill_uniform(net.w_head, 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)), rng);
    return net;
}

Vector tokenize(int bin, int bits) {
    if (bits < 1 || bits > 30) {
        throw std::invalid_argument("token width must be in 1..30");
    }
    Vector out(bits);
    if (bin == kStartToken) {
        out.setOnes();
        return out;
    }
    if (bin < 0 || bin >= (1 << (bits - 1))) {
        throw std::out_of_range("bin " + std::to_string(bin) + " does not fit a " +
                                std::to_string(bits) + "-bit token");
    }
    for (int k = 0; k < bits; ++k) {
        out[k] = static_cast<double>((bin >> (bits - 1 - k)) & 1);
    }
    return out;
}

int detokenize(const Vector& token) {
    if ((token.array() == 1.0).all()) {
        return kStartToken;
    }
    int v = 0;
    for (Index k = 0; k < token.size(); ++k) {
        if (token[k] != 0.0 && token[k] != 1.0) {
            throw std::invalid_argument("token entries must be 0 or 1");
        }
        v = (v << 1) | static_cast<int>(token[k]);
    }
    return v;
}

NetworkState zero_state(const ModelConfig& cfg) {
    return NetworkState(static_cast<std::size_t>(cfg.depth),
                        ssm::HiddenState::Zero(cfg.ssm().d_inner(), cfg.d_state));
}

SequenceOutput forward_sequence(const QNetwork& net, const NetworkState& h0,
                                const Matrix& inputs, ForwardCache* cache) {
    const auto& cfg = net.cfg;
    if (inputs.cols() != cfg.input_dim()) {
        throw std::invalid_argument("network input width mismatch");
    }
    if (h0.size() != net.blocks.size()) {
        throw std::invalid_argument("hidden state depth mismatch");
    }
    if (!inputs.allFinite()) {
        throw std::invalid_argument("network inputs contain NaN or infinity");
    }
    SequenceOutput out;
    Matrix u = (inputs * net.w_embed.transpose()).rowwise() + net.b_embed.transpose();
    if (cache != nullptr) {
        cache->inputs = inputs;
        cache->blocks.assign(net.blocks.size(), {});
    }
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        auto r = ssm::block_forward(net.blocks[b], h0[b], u,
                                    cache != nullptr ? &cache->blocks[b] : nullptr);
        u = std::move(r.out);
        out.h_final.push_back(std::move(r.h_final));
    }
    const Matrix proj = (u * net.w_proj.transpose()).rowwise() + net.b_proj.transpose();
    const Matrix pre = (proj * net.w_head.transpose()).rowwise() + net.b_head.transpose();
    const double slope = cfg.leaky_slope;
    out.q = pre.unaryExpr([slope](double v) { return leaky(v, slope); });
    if (cache != nullptr) {
        cache->block_out = std::move(u);
        cache->proj = proj;
        cache->head_pre = pre;
    }
    return out;
}

namespace {

Matrix input_row(const env::OptimizationState& state, int token, int bits) {
    Matrix row(1, env::kStateDim + bits);
    for (int k = 0; k < env::kStateDim; ++k) {
        row(0, k) = state[static_cast<std::size_t>(k)];
    }
    row.rightCols(bits) = tokenize(token, bits).transpose();
    return row;
}

}  // namespace

QStep q_step(const QNetwork& net, const env::OptimizationState& state, int prev_token,
             const NetworkState& h) {
    auto r = forward_sequence(net, h, input_row(state, prev_token, net.cfg.token_bits()));
    return {r.q.row(0).transpose(), std::move(r.h_final)};
}

int masked_argmax(const Eigen::Ref<const Vector>& q, int admissible) {
    const int n = std::min<int>(admissible, static_cast<int>(q.size()));
    if (n < 1) {
        throw std::invalid_argument("masked_argmax: no admissible bin");
    }
    int best = 0;
    for (int j = 1; j < n; ++j) {
        if (q[j] > q[best]) {
            best = j;
        }
    }
    return best;
}

Decoded decode_episode_actions(const QNetwork& net, const env::OptimizationState& state,
                               const std::vector<int>& masks, const NetworkState& h) {
    Decoded d;
    d.h = h;
    int token = kStartToken;
    for (int m : masks) {
        auto s = q_step(net, state, token, d.h);
        token = masked_argmax(s.q, m);
        d.bins.push_back(token);
        d.q.push_back(std::move(s.q));
        d.h = std::move(s.h);
    }
    return d;
}

Matrix teacher_inputs(const env::Trajectory& traj, const ModelConfig& cfg) {
    const int K = traj.meta.K;
    if (K != cfg.k) {
        throw std::invalid_argument("trajectory has K=" + std::to_string(K) +
                                    " but the model expects K=" + std::to_string(cfg.k));
    }
    const int bits = cfg.token_bits();
    const auto T = static_cast<Index>(traj.steps.size());
    Matrix inputs(T * K, cfg.input_dim());
    for (Index t = 0; t < T; ++t) {
        const auto& step = traj.steps[static_cast<std::size_t>(t)];
        if (static_cast<int>(step.actions.size()) != K) {
            throw std::invalid_argument("step action count does not match K");
        }
        for (int i = 0; i < K; ++i) {
            const int token = i == 0 ? kStartToken : step.actions[static_cast<std::size_t>(i - 1)];
            inputs.row(t * K + i) = input_row(step.state, token, bits);
        }
    }
    return inputs;
}

Matrix q_values_for_trajectory(const QNetwork& net, const env::Trajectory& traj,
                               ForwardCache* cache) {
    return forward_sequence(net, zero_state(net.cfg), teacher_inputs(traj, net.cfg), cache).q;
}

QNetwork backward(const QNetwork& net, const ForwardCache& cache, const Matrix& grad_q) {
    const double slope = net.cfg.leaky_slope;
    QNetwork g = QNetwork::zeros(net.cfg);
    const Matrix g_pre = grad_q.cwiseProduct(
        cache.head_pre.unaryExpr([slope](double v) { return leaky_grad(v, slope); }));
    g.w_head = g_pre.transpose() * cache.proj;
    g.b_head = g_pre.colwise().sum().transpose();
    const Matrix g_proj = g_pre * net.w_head;
    g.w_proj = g_proj.transpose() * cache.block_out;
    g.b_proj = g_proj.colwise().sum().transpose();
    Matrix g_u = g_proj * net.w_proj;
    for (std::size_t b = net.blocks.size(); b-- > 0;) {
        const auto& bc = cache.blocks[b];
        const ssm::HiddenState g_h_final = ssm::HiddenState::Zero(
            net.blocks[b].ssm.d_inner(), net.blocks[b].ssm.d_state());
        auto gb = ssm::block_backward(net.blocks[b], bc, g_u, g_h_final);
        g.blocks[b] = std::move(gb.params);
        g_u = std::move(gb.u);
    }
    g.w_embed = g_u.transpose() * cache.inputs;
    g.b_embed = g_u.colwise().sum().transpose();
    return g;
}

env::Policy greedy_policy(std::shared_ptr<const QNetwork> net, std::vector<int> masks) {
    auto h = std::make_shared<NetworkState>(zero_state(net->cfg));
    return [net = std::move(net), masks = std::move(masks), h](const env::OptimizationState& s,
                                                               int) {
        auto d = decode_episode_actions(*net, s, masks, *h);
        *h = std::move(d.h);
        return d.bins;
    };
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    QNetwork model = ckpt.model;
    auto views = model.views();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    os.write(kMagic, sizeof(kMagic));
    write_u32(os, kVersion);
    const auto& c = model.cfg;
    for (int v : {c.k, c.bins, c.d_model, c.d_state, c.expand, c.depth, c.head_dim}) {
        write_u32(os, static_cast<std::uint32_t>(v));
    }
    write_f64(os, c.leaky_slope);
    write_u32(os, static_cast<std::uint32_t>(ckpt.epoch));
    write_u64(os, static_cast<std::uint64_t>(ckpt.optimizer_step));

    const bool moments = !ckpt.moment1.empty();
    if (moments && (ckpt.moment1.size() != views.size() || ckpt.moment2.size() != views.size())) {
        throw std::invalid_argument("optimizer moments do not match the parameter list");
    }
    write_u32(os, static_cast<std::uint32_t>(views.size() * (moments ? 3 : 1)));
    for (const auto& v : views) {
        write_tensor(os, v.name, v.data, v.rows, v.cols);
    }
    if (moments) {
        for (std::size_t i = 0; i < views.size(); ++i) {
            write_tensor(os, "adam.m." + views[i].name, ckpt.moment1[i].data(), views[i].rows,
                         views[i].cols);
            write_tensor(os, "adam.v." + views[i].name, ckpt.moment2[i].data(), views[i].rows,
                         views[i].cols);
        }
    }
    if (!os) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    char magic[sizeof(kMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path.string() + " is not a checkpoint");
    }
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.k = static_cast<int>(read_u32(is));
    cfg.bins = static_cast<int>(read_u32(is));
    cfg.d_model = static_cast<int>(read_u32(is));
    cfg.d_state = static_cast<int>(read_u32(is));
    cfg.expand = static_cast<int>(read_u32(is));
    cfg.depth = static_cast<int>(read_u32(is));
    cfg.head_dim = static_cast<int>(read_u32(is));
    cfg.leaky_slope = read_f64(is);

    Checkpoint ckpt;
    ckpt.model = QNetwork::zeros(cfg);
    ckpt.epoch = static_cast<int>(read_u32(is));
    ckpt.optimizer_step = static_cast<std::int64_t>(read_uint(is, 8));

    std::map<std::string, RawTensor> tensors;
    const std::uint32_t count = read_u32(is);
    for (std::uint32_t n = 0; n < count; ++n) {
        const std::uint32_t len = read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        RawTensor t;
        t.rows = read_u32(is);
        t.cols = read_u32(is);
        t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
        for (auto& v : t.data) {
            v = read_f64(is);
        }
        tensors[name] = std::move(t);
    }

    auto views = ckpt.model.views();
    auto take = [&](const std::string& name, const ssm::TensorView& shape, double* dst) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw std::runtime_error("checkpoint lacks tensor " + name);
        }
        if (it->second.rows != shape.rows || it->second.cols != shape.cols) {
            throw std::runtime_error("checkpoint tensor " + name + " has the wrong shape");
        }
        std::copy(it->second.data.begin(), it->second.data.end(), dst);
    };
    for (auto& v : views) {
        take(v.name, v, v.data);
    }
    if (tensors.size() == 3 * views.size()) {
        for (auto& v : views) {
            Vector m(v.size());
            Vector s(v.size());
            take("adam.m." + v.name, v, m.data());
            take("adam.v." + v.name, v, s.data());
            ckpt.moment1.push_back(std::move(m));
            ckpt.moment2.push_back(std::move(s));
        }
    } else if (tensors.size() != views.size()) {
        throw std::runtime_error("checkpoint holds unexpected tensors");
    }
    return ckpt;
}

}  // namespace qmamba::qnet
