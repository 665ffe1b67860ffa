#pragma once

#include "qmamba/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qmamba::ssm {

/// Flat, named view of one parameter tensor. Vectors appear as rows x 1.
struct TensorView {
    std::string name;
    double* data = nullptr;
    Index rows = 0;
    Index cols = 0;

    Index size() const { return rows * cols; }
};

struct SsmConfig {
    int d_model = 64;
    int d_state = 16;
    int expand = 2;

    int d_inner() const { return expand * d_model; }
};

/// Selective SSM over d_inner channels with a diagonal state matrix A = -exp(a_log).
/// Delta = softplus(w_delta x + b_delta), B = w_b x and C = w_c x depend on the input.
struct SelectiveSsmParams {
    Matrix a_log;    // d_inner x d_state
    Matrix w_delta;  // d_inner x d_inner
    Vector b_delta;  // d_inner
    Matrix w_b;      // d_state x d_inner
    Matrix w_c;      // d_state x d_inner
    Vector d_skip;   // d_inner

    Index d_inner() const { return a_log.rows(); }
    Index d_state() const { return a_log.cols(); }

    static SelectiveSsmParams zeros(Index d_inner, Index d_state);
    void set_zero();
};

/// Hidden state of one SSM: d_inner x d_state.
using HiddenState = Matrix;

struct Discretized {
    Matrix a_bar;
    Matrix b_bar;
};

/// Zero-order hold for a diagonal A (d_inner x d_state), input matrix row B (d_state) and
/// per-channel steps delta (d_inner): a_bar = exp(delta A), b_bar = (a_bar - 1) / A * B,
/// with the delta * B limit as A -> 0.
Discretized discretize(const Matrix& A, const Vector& B, const Vector& delta);

/// (exp(z) - 1) / z and its derivative, accurate near z = 0.
double phi(double z);
double phi_prime(double z);

/// Per-sequence intermediates kept for the backward pass.
struct SsmCache {
    Matrix x;       // L x d_inner
    Matrix dt_pre;  // L x d_inner
    Matrix delta;   // L x d_inner
    Matrix b;       // L x d_state
    Matrix c;       // L x d_state
    /// hs[t] is the state before step t; hs[L] is the final state.
    std::vector<HiddenState> hs;
    std::uint64_t fingerprint = 0;
};

struct SsmOutput {
    Matrix ys;  // L x d_inner
    HiddenState h_final;
};

std::uint64_t fingerprint(const SelectiveSsmParams& p);

/// Exact recurrence h_t = a_bar_t h_{t-1} + b_bar_t x_t, y_t = C_t h_t + D x_t over the
/// rows of xs. Fills cache when given.
SsmOutput ssm_forward_sequential(const SelectiveSsmParams& p, const HiddenState& h0,
                                 const Matrix& xs, SsmCache* cache = nullptr);

/// Element of the linear-recurrence scan: the affine map h -> a * h + b.
struct ScanElement {
    Matrix a;
    Matrix b;
};

/// Composition applying `first` then `second`: (a1 a2, a2 b1 + b2).
ScanElement combine(const ScanElement& first, const ScanElement& second);

/// Same outputs as ssm_forward_sequential via a work-efficient (up-sweep / down-sweep)
/// prefix scan. The reduction tree has a fixed shape, so results are deterministic.
SsmOutput ssm_forward_scan(const SelectiveSsmParams& p, const HiddenState& h0,
                           const Matrix& xs);

struct SsmGradients {
    SelectiveSsmParams params;
    Matrix xs;  // L x d_inner
    HiddenState h0;
};

/// Reverse-mode gradients of the sequential recurrence. Throws std::logic_error if p has
/// changed since the forward pass that produced cache.
SsmGradients ssm_backward(const SelectiveSsmParams& p, const SsmCache& cache,
                          const Matrix& grad_ys, const HiddenState& grad_h_final);

/// Gated residual block: [x_pre; z] = w_in u, x = silu(x_pre), y = SSM(x),
/// out = u + w_out (y * silu(z)).
struct MambaBlockParams {
    Matrix w_in;   // 2 d_inner x d_model
    SelectiveSsmParams ssm;
    Matrix w_out;  // d_model x d_inner

    static MambaBlockParams zeros(const SsmConfig& cfg);
    void set_zero();
};

MambaBlockParams init_block(const SsmConfig& cfg, Rng& rng);

struct BlockCache {
    Matrix u;
    Matrix x_pre;
    Matrix z;
    Matrix ys;
    SsmCache ssm;
};

struct BlockOutput {
    Matrix out;  // L x d_model
    HiddenState h_final;
};

BlockOutput block_forward(const MambaBlockParams& p, const HiddenState& h0, const Matrix& u,
                          BlockCache* cache = nullptr);

struct BlockGradients {
    MambaBlockParams params;
    Matrix u;
    HiddenState h0;
};

BlockGradients block_backward(const MambaBlockParams& p, const BlockCache& cache,
                              const Matrix& grad_out, const HiddenState& grad_h_final);

void collect_views(SelectiveSsmParams& p, const std::string& prefix,
                   std::vector<TensorView>& out);
void collect_views(MambaBlockParams& p, const std::string& prefix,
                   std::vector<TensorView>& out);

double silu(double v);
double silu_prime(double v);
double softplus(double v);
double sigmoid(double v);

}  // namespace qmamba::ssm
