#include "qmamba/ssm_core.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace qmamba::ssm {
namespace {

using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kSeriesCutoff = 1e-2;

// Z = delta_c * A_cn, a_bar = exp(Z), phi = expm1(Z) / Z.
void zoh(const Matrix& A, const Eigen::Ref<const Vector>& delta, Array& z, Array& a_bar,
         Array& ph) {
    z = A.array().colwise() * delta.array();
    a_bar = z.exp();
    ph = z.expm1() / z;
    for (Index i = 0; i < z.size(); ++i) {
        if (std::abs(z.data()[i]) < kSeriesCutoff) {
            ph.data()[i] = phi(z.data()[i]);
        }
    }
}

Array phi_prime_array(const Array& z, const Array& a_bar, const Array& ph) {
    Array out = (a_bar - ph) / z;
    for (Index i = 0; i < z.size(); ++i) {
        if (std::abs(z.data()[i]) < kSeriesCutoff) {
            out.data()[i] = phi_prime(z.data()[i]);
        }
    }
    return out;
}

Matrix state_matrix(const SelectiveSsmParams& p) { return -p.a_log.array().exp().matrix(); }

void check_shapes(const SelectiveSsmParams& p, const HiddenState& h0, const Matrix& xs) {
    if (xs.cols() != p.d_inner()) {
        throw std::invalid_argument("SSM input width " + std::to_string(xs.cols()) +
                                    " does not match d_inner " + std::to_string(p.d_inner()));
    }
    if (h0.rows() != p.d_inner() || h0.cols() != p.d_state()) {
        throw std::invalid_argument("SSM hidden state has the wrong shape");
    }
}

Matrix apply_rowwise(const Matrix& m, double (*fn)(double)) {
    return m.unaryExpr([fn](double v) { return fn(v); });
}

void hash_bytes(std::uint64_t& h, const double* data, Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
}

void fill_uniform(Matrix& m, double bound, Rng& rng) {
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-bound, bound);
    }
}

}  // namespace

double silu(double v) { return v * sigmoid(v); }

double silu_prime(double v) {
    const double s = sigmoid(v);
    return s * (1.0 + v * (1.0 - s));
}

double softplus(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

double sigmoid(double v) {
    if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double phi(double z) {
    if (std::abs(z) < kSeriesCutoff) {
        return 1.0 + z * (1.0 / 2 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 +
                     z * (1.0 / 720 + z / 5040)))));
    }
    return std::expm1(z) / z;
}

double phi_prime(double z) {
    if (std::abs(z) < kSeriesCutoff) {
        return 1.0 / 2 + z * (1.0 / 3 + z * (1.0 / 8 + z * (1.0 / 30 + z * (1.0 / 144 +
                         z * (1.0 / 840)))));
    }
    return (std::exp(z) - phi(z)) / z;
}

SelectiveSsmParams SelectiveSsmParams::zeros(Index d_inner, Index d_state) {
    SelectiveSsmParams p;
    p.a_log = Matrix::Zero(d_inner, d_state);
    p.w_delta = Matrix::Zero(d_inner, d_inner);
    p.b_delta = Vector::Zero(d_inner);
    p.w_b = Matrix::Zero(d_state, d_inner);
    p.w_c = Matrix::Zero(d_state, d_inner);
    p.d_skip = Vector::Zero(d_inner);
    return p;
}

void SelectiveSsmParams::set_zero() {
    a_log.setZero();
    w_delta.setZero();
    b_delta.setZero();
    w_b.setZero();
    w_c.setZero();
    d_skip.setZero();
}

Discretized discretize(const Matrix& A, const Vector& B, const Vector& delta) {
    if (B.size() != A.cols() || delta.size() != A.rows()) {
        throw std::invalid_argument("discretize: shape mismatch");
    }
    Array z;
    Array a_bar;
    Array ph;
    zoh(A, delta, z, a_bar, ph);
    Discretized d;
    d.a_bar = a_bar.matrix();
    d.b_bar = ((ph.colwise() * delta.array()).rowwise() * B.transpose().array()).matrix();
    return d;
}

std::uint64_t fingerprint(const SelectiveSsmParams& p) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    hash_bytes(h, p.a_log.data(), p.a_log.size());
    hash_bytes(h, p.w_delta.data(), p.w_delta.size());
    hash_bytes(h, p.b_delta.data(), p.b_delta.size());
    hash_bytes(h, p.w_b.data(), p.w_b.size());
    hash_bytes(h, p.w_c.data(), p.w_c.size());
    hash_bytes(h, p.d_skip.data(), p.d_skip.size());
    return h;
}

SsmOutput ssm_forward_sequential(const SelectiveSsmParams& p, const HiddenState& h0,
                                 const Matrix& xs, SsmCache* cache) {
    check_shapes(p, h0, xs);
    const Index L = xs.rows();
    const Matrix A = state_matrix(p);
    const Matrix dt_pre = (xs * p.w_delta.transpose()).rowwise() + p.b_delta.transpose();
    const Matrix delta = apply_rowwise(dt_pre, softplus);
    const Matrix b = xs * p.w_b.transpose();
    const Matrix c = xs * p.w_c.transpose();

    SsmOutput out;
    out.ys.resize(L, p.d_inner());
    Array h = h0.array();
    if (cache != nullptr) {
        cache->hs.clear();
        cache->hs.reserve(static_cast<std::size_t>(L + 1));
        cache->hs.push_back(h0);
    }
    Array z;
    Array a_bar;
    Array ph;
    for (Index t = 0; t < L; ++t) {
        const Vector d_t = delta.row(t).transpose();
        zoh(A, d_t, z, a_bar, ph);
        const Vector drive = d_t.cwiseProduct(xs.row(t).transpose());
        h = a_bar * h + (ph.colwise() * drive.array()).rowwise() * b.row(t).array();
        out.ys.row(t) = (h.matrix() * c.row(t).transpose()).transpose() +
                        p.d_skip.cwiseProduct(xs.row(t).transpose()).transpose();
        if (cache != nullptr) {
            cache->hs.push_back(h.matrix());
        }
    }
    out.h_final = h.matrix();
    if (cache != nullptr) {
        cache->x = xs;
        cache->dt_pre = dt_pre;
        cache->delta = delta;
        cache->b = b;
        cache->c = c;
        cache->fingerprint = fingerprint(p);
    }
    return out;
}

ScanElement combine(const ScanElement& first, const ScanElement& second) {
    ScanElement out;
    out.a = first.a.cwiseProduct(second.a);
    out.b = second.a.cwiseProduct(first.b) + second.b;
    return out;
}

SsmOutput ssm_forward_scan(const SelectiveSsmParams& p, const HiddenState& h0,
                           const Matrix& xs) {
    check_shapes(p, h0, xs);
    const Index L = xs.rows();
    const Index di = p.d_inner();
    const Index ds = p.d_state();
    const Matrix A = state_matrix(p);
    const Matrix dt_pre = (xs * p.w_delta.transpose()).rowwise() + p.b_delta.transpose();
    const Matrix delta = apply_rowwise(dt_pre, softplus);
    const Matrix b = xs * p.w_b.transpose();
    const Matrix c = xs * p.w_c.transpose();

    Index size = 1;
    while (size < L) {
        size *= 2;
    }
    const ScanElement identity{Matrix::Ones(di, ds), Matrix::Zero(di, ds)};
    std::vector<ScanElement> tree(static_cast<std::size_t>(size), identity);
    std::vector<ScanElement> elements(static_cast<std::size_t>(L));
    Array z;
    Array a_bar;
    Array ph;
    for (Index t = 0; t < L; ++t) {
        const Vector d_t = delta.row(t).transpose();
        zoh(A, d_t, z, a_bar, ph);
        const Vector drive = d_t.cwiseProduct(xs.row(t).transpose());
        auto& e = elements[static_cast<std::size_t>(t)];
        e.a = a_bar.matrix();
        e.b = ((ph.colwise() * drive.array()).rowwise() * b.row(t).array()).matrix();
        tree[static_cast<std::size_t>(t)] = e;
    }

    // Up-sweep: tree[k] accumulates the composition of its left-aligned block.
    for (Index stride = 1; stride < size; stride *= 2) {
        for (Index k = 2 * stride - 1; k < size; k += 2 * stride) {
            tree[static_cast<std::size_t>(k)] =
                combine(tree[static_cast<std::size_t>(k - stride)], tree[static_cast<std::size_t>(k)]);
        }
    }
    // Down-sweep to an exclusive scan.
    tree[static_cast<std::size_t>(size - 1)] = identity;
    for (Index stride = size / 2; stride >= 1; stride /= 2) {
        for (Index k = 2 * stride - 1; k < size; k += 2 * stride) {
            const auto left = static_cast<std::size_t>(k - stride);
            const auto right = static_cast<std::size_t>(k);
            ScanElement old_left = tree[left];
            tree[left] = tree[right];
            tree[right] = combine(tree[right], old_left);
        }
    }

    SsmOutput out;
    out.ys.resize(L, di);
    for (Index t = 0; t < L; ++t) {
        const ScanElement inclusive =
            combine(tree[static_cast<std::size_t>(t)], elements[static_cast<std::size_t>(t)]);
        const Matrix h = inclusive.a.cwiseProduct(h0) + inclusive.b;
        out.ys.row(t) = (h * c.row(t).transpose()).transpose() +
                        p.d_skip.cwiseProduct(xs.row(t).transpose()).transpose();
        if (t == L - 1) {
            out.h_final = h;
        }
    }
    if (L == 0) {
        out.h_final = h0;
    }
    return out;
}

SsmGradients ssm_backward(const SelectiveSsmParams& p, const SsmCache& cache,
                          const Matrix& grad_ys, const HiddenState& grad_h_final) {
    if (cache.fingerprint != fingerprint(p)) {
        throw std::logic_error("ssm_backward: parameters changed since the forward pass");
    }
    const Index L = cache.x.rows();
    const Index di = p.d_inner();
    const Index ds = p.d_state();
    if (grad_ys.rows() != L || grad_ys.cols() != di || grad_h_final.rows() != di ||
        grad_h_final.cols() != ds) {
        throw std::invalid_argument("ssm_backward: gradient shape mismatch");
    }
    const Matrix A = state_matrix(p);

    SsmGradients g;
    g.params = SelectiveSsmParams::zeros(di, ds);
    g.xs = Matrix::Zero(L, di);
    Matrix g_dt_pre(L, di);
    Matrix g_b(L, ds);
    Matrix g_c(L, ds);
    Array g_a = Array::Zero(di, ds);

    Array gh = grad_h_final.array();
    Array z;
    Array a_bar;
    Array ph;
    for (Index t = L - 1; t >= 0; --t) {
        const Vector x_t = cache.x.row(t).transpose();
        const Vector d_t = cache.delta.row(t).transpose();
        const Vector gy = grad_ys.row(t).transpose();
        const Matrix& h = cache.hs[static_cast<std::size_t>(t + 1)];
        const Matrix& h_prev = cache.hs[static_cast<std::size_t>(t)];

        // y = h C + D x
        g_c.row(t) = (h.transpose() * gy).transpose();
        g.params.d_skip += gy.cwiseProduct(x_t);
        Vector gx = gy.cwiseProduct(p.d_skip);
        gh += (gy * cache.c.row(t)).array();

        // h = a_bar h_prev + delta phi B x
        zoh(A, d_t, z, a_bar, ph);
        const Array g_abar = gh * h_prev.array();
        const Array b_row = Array(cache.b.row(t));
        const Array phi_b = ph.rowwise() * b_row.row(0);  // phi_cn B_n
        // dL/d(bbar_cn) where bbar_cn = delta_c phi_cn B_n multiplies x_c
        const Array g_bbar = gh.colwise() * x_t.array();
        gx += ((gh * phi_b).rowwise().sum().matrix()).cwiseProduct(d_t);

        const Array dphi = phi_prime_array(z, a_bar, ph);
        const Array g_z = g_abar * a_bar +
                          ((g_bbar * dphi).colwise() * d_t.array()).rowwise() * b_row.row(0);
        const Vector g_delta = (g_bbar * phi_b).rowwise().sum().matrix() +
                               (g_z * A.array()).rowwise().sum().matrix();
        g_a += g_z.colwise() * d_t.array();
        g_b.row(t) = ((g_bbar * ph).colwise() * d_t.array()).colwise().sum().matrix();

        g_dt_pre.row(t) = g_delta.cwiseProduct(cache.dt_pre.row(t).transpose().unaryExpr(
                                                   [](double v) { return sigmoid(v); }))
                              .transpose();
        g.xs.row(t) = gx.transpose();
        gh = gh * a_bar;
    }
    g.params.a_log = (g_a * A.array()).matrix();
    g.params.w_delta = g_dt_pre.transpose() * cache.x;
    g.params.b_delta = g_dt_pre.colwise().sum().transpose();
    g.params.w_b = g_b.transpose() * cache.x;
    g.params.w_c = g_c.transpose() * cache.x;
    g.xs += g_dt_pre * p.w_delta + g_b * p.w_b + g_c * p.w_c;
    g.h0 = gh.matrix();
    return g;
}

MambaBlockParams MambaBlockParams::zeros(const SsmConfig& cfg) {
    MambaBlockParams p;
    p.w_in = Matrix::Zero(2 * cfg.d_inner(), cfg.d_model);
    p.ssm = SelectiveSsmParams::zeros(cfg.d_inner(), cfg.d_state);
    p.w_out = Matrix::Zero(cfg.d_model, cfg.d_inner());
    return p;
}

void MambaBlockParams::set_zero() {
    w_in.setZero();
    ssm.set_zero();
    w_out.setZero();
}

MambaBlockParams init_block(const SsmConfig& cfg, Rng& rng) {
    if (cfg.d_model < 1 || cfg.d_state < 1 || cfg.expand < 1) {
        throw std::invalid_argument("SSM dimensions must be positive");
    }
    auto p = MambaBlockParams::zeros(cfg);
    const double di = cfg.d_inner();
    fill_uniform(p.w_in, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), rng);
    fill_uniform(p.w_out, 1.0 / std::sqrt(di), rng);
    fill_uniform(p.ssm.w_delta, 1.0 / std::sqrt(di), rng);
    fill_uniform(p.ssm.w_b, 1.0 / std::sqrt(di), rng);
    fill_uniform(p.ssm.w_c, 1.0 / std::sqrt(di), rng);
    for (Index i = 0; i < p.ssm.a_log.size(); ++i) {
        p.ssm.a_log.data()[i] = std::log(rng.uniform(0.01, 1.0));
    }
    for (Index c = 0; c < p.ssm.b_delta.size(); ++c) {
        // step size log-uniform in [1e-3, 1e-1], stored through the inverse softplus
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        p.ssm.b_delta[c] = std::log(std::expm1(dt));
    }
    p.ssm.d_skip.setOnes();
    return p;
}

BlockOutput block_forward(const MambaBlockParams& p, const HiddenState& h0, const Matrix& u,
                          BlockCache* cache) {
    if (u.cols() != p.w_in.cols()) {
        throw std::invalid_argument("block input width does not match d_model");
    }
    const Index di = p.ssm.d_inner();
    const Matrix xz = u * p.w_in.transpose();
    const Matrix x_pre = xz.leftCols(di);
    const Matrix z = xz.rightCols(di);
    const Matrix x = apply_rowwise(x_pre, silu);
    SsmOutput s = ssm_forward_sequential(p.ssm, h0, x, cache != nullptr ? &cache->ssm : nullptr);
    const Matrix gated = s.ys.cwiseProduct(apply_rowwise(z, silu));

    BlockOutput out;
    out.out = u + gated * p.w_out.transpose();
    out.h_final = std::move(s.h_final);
    if (cache != nullptr) {
        cache->u = u;
        cache->x_pre = x_pre;
        cache->z = z;
        cache->ys = std::move(s.ys);
    }
    return out;
}

BlockGradients block_backward(const MambaBlockParams& p, const BlockCache& cache,
                              const Matrix& grad_out, const HiddenState& grad_h_final) {
    const Index di = p.ssm.d_inner();
    const Matrix silu_z = apply_rowwise(cache.z, silu);
    const Matrix gated = cache.ys.cwiseProduct(silu_z);

    BlockGradients g;
    g.params.w_out = grad_out.transpose() * gated;
    const Matrix g_gated = grad_out * p.w_out;
    const Matrix g_ys = g_gated.cwiseProduct(silu_z);
    const Matrix g_z =
        g_gated.cwiseProduct(cache.ys).cwiseProduct(apply_rowwise(cache.z, silu_prime));

    SsmGradients gs = ssm_backward(p.ssm, cache.ssm, g_ys, grad_h_final);
    const Matrix g_x_pre = gs.xs.cwiseProduct(apply_rowwise(cache.x_pre, silu_prime));

    Matrix g_xz(cache.u.rows(), 2 * di);
    g_xz.leftCols(di) = g_x_pre;
    g_xz.rightCols(di) = g_z;
    g.params.w_in = g_xz.transpose() * cache.u;
    g.params.ssm = std::move(gs.params);
    g.u = grad_out + g_xz * p.w_in;
    g.h0 = std::move(gs.h0);
    return g;
}

void collect_views(SelectiveSsmParams& p, const std::string& prefix,
                   std::vector<TensorView>& out) {
    out.push_back({prefix + "a_log", p.a_log.data(), p.a_log.rows(), p.a_log.cols()});
    out.push_back({prefix + "w_delta", p.w_delta.data(), p.w_delta.rows(), p.w_delta.cols()});
    out.push_back({prefix + "b_delta", p.b_delta.data(), p.b_delta.size(), 1});
    out.push_back({prefix + "w_b", p.w_b.data(), p.w_b.rows(), p.w_b.cols()});
    out.push_back({prefix + "w_c", p.w_c.data(), p.w_c.rows(), p.w_c.cols()});
    out.push_back({prefix + "d_skip", p.d_skip.data(), p.d_skip.size(), 1});
}

void collect_views(MambaBlockParams& p, const std::string& prefix,
                   std::vector<TensorView>& out) {
    out.push_back({prefix + "w_in", p.w_in.data(), p.w_in.rows(), p.w_in.cols()});
    collect_views(p.ssm, prefix + "ssm.", out);
    out.push_back({prefix + "w_out", p.w_out.data(), p.w_out.rows(), p.w_out.cols()});
}

}  // namespace qmamba::ssm
