#include "qmamba/ssm_core.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace qmamba;
using namespace qmamba::ssm;

namespace {

Matrix random_matrix(Index r, Index c, double scale, Rng& rng) {
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = scale * rng.uniform(-1.0, 1.0);
    }
    return m;
}

SelectiveSsmParams random_ssm(Index d_inner, Index d_state, Rng& rng) {
    auto p = SelectiveSsmParams::zeros(d_inner, d_state);
    p.a_log = random_matrix(d_inner, d_state, 1.0, rng);
    p.w_delta = random_matrix(d_inner, d_inner, 0.5, rng);
    p.b_delta = random_matrix(d_inner, 1, 0.5, rng);
    p.w_b = random_matrix(d_state, d_inner, 0.5, rng);
    p.w_c = random_matrix(d_state, d_inner, 0.5, rng);
    p.d_skip = random_matrix(d_inner, 1, 1.0, rng);
    return p;
}

double weighted(const Matrix& w, const Matrix& v) { return w.cwiseProduct(v).sum(); }

}  // namespace

TEST(Phi, SeriesAndClosedForm) {
    EXPECT_EQ(phi(0.0), 1.0);
    EXPECT_EQ(phi_prime(0.0), 0.5);
    for (double z : {-30.0, -2.0, -0.5, -1e-3, 1e-3, 0.7}) {
        EXPECT_NEAR(phi(z), std::expm1(z) / z, 1e-14 * std::max(1.0, std::abs(phi(z))));
        const double closed = (std::exp(z) * (z - 1.0) + 1.0) / (z * z);
        EXPECT_NEAR(phi_prime(z), closed, 1e-8);
    }
    for (double z : {-1e-9, 1e-12, -1e-6}) {
        EXPECT_NEAR(phi(z), 1.0 + z / 2.0, 1e-12);
        EXPECT_NEAR(phi_prime(z), 0.5 + z / 3.0, 1e-9);
    }
}

TEST(Discretize, MatchesZeroOrderHold) {
    Rng rng(4);
    Matrix A = -random_matrix(6, 3, 1.0, rng).cwiseAbs();
    A(0, 0) = 0.0;
    const Vector B = random_matrix(3, 1, 1.0, rng);
    const Vector delta = random_matrix(6, 1, 0.5, rng).cwiseAbs();
    const auto d = discretize(A, B, delta);
    for (Index c = 0; c < 6; ++c) {
        for (Index n = 0; n < 3; ++n) {
            const double a_bar = std::exp(delta[c] * A(c, n));
            EXPECT_NEAR(d.a_bar(c, n), a_bar, 1e-15);
            const double b_bar = A(c, n) == 0.0 ? delta[c] * B[n] : (a_bar - 1.0) / A(c, n) * B[n];
            EXPECT_NEAR(d.b_bar(c, n), b_bar, 1e-14);
        }
    }
}

TEST(Scan, CombineIsAssociative) {
    Rng rng(8);
    ScanElement e[3];
    for (auto& x : e) {
        x.a = random_matrix(4, 2, 1.0, rng);
        x.b = random_matrix(4, 2, 1.0, rng);
    }
    const auto left = combine(combine(e[0], e[1]), e[2]);
    const auto right = combine(e[0], combine(e[1], e[2]));
    EXPECT_LT((left.a - right.a).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((left.b - right.b).cwiseAbs().maxCoeff(), 1e-15);
    // applying first then second to h
    const Matrix h = random_matrix(4, 2, 1.0, rng);
    const auto both = combine(e[0], e[1]);
    const Matrix step = e[1].a.cwiseProduct(e[0].a.cwiseProduct(h) + e[0].b) + e[1].b;
    EXPECT_LT((both.a.cwiseProduct(h) + both.b - step).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Scan, EqualsSequentialRecurrence) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const auto p = random_ssm(6, 4, rng);
        for (Index L : {1, 2, 7, 64, 301}) {
            const Matrix xs = random_matrix(L, 6, 1.0, rng);
            const Matrix h0 = random_matrix(6, 4, 1.0, rng);
            const auto seq = ssm_forward_sequential(p, h0, xs);
            const auto par = ssm_forward_scan(p, h0, xs);
            EXPECT_LT((seq.ys - par.ys).cwiseAbs().maxCoeff(), 1e-10) << L;
            EXPECT_LT((seq.h_final - par.h_final).cwiseAbs().maxCoeff(), 1e-10) << L;
        }
    }
}

TEST(Scan, ScanIsDeterministic) {
    Rng rng(2);
    const auto p = random_ssm(4, 3, rng);
    const Matrix xs = random_matrix(129, 4, 1.0, rng);
    const Matrix h0 = Matrix::Zero(4, 3);
    EXPECT_EQ(ssm_forward_scan(p, h0, xs).ys, ssm_forward_scan(p, h0, xs).ys);
}

TEST(Recurrence, SplitSequenceContinuesHiddenState) {
    Rng rng(5);
    const auto p = random_ssm(4, 3, rng);
    const Matrix xs = random_matrix(20, 4, 1.0, rng);
    const Matrix h0 = Matrix::Zero(4, 3);
    const auto full = ssm_forward_sequential(p, h0, xs);
    const auto head = ssm_forward_sequential(p, h0, xs.topRows(8));
    const auto tail = ssm_forward_sequential(p, head.h_final, xs.bottomRows(12));
    EXPECT_LT((full.ys.bottomRows(12) - tail.ys).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((full.h_final - tail.h_final).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, SsmMatchesFiniteDifferences) {
    Rng rng(11);
    auto p = random_ssm(3, 2, rng);
    const Matrix xs = random_matrix(5, 3, 1.0, rng);
    const Matrix h0 = random_matrix(3, 2, 1.0, rng);
    const Matrix wy = random_matrix(5, 3, 1.0, rng);
    const Matrix wh = random_matrix(3, 2, 1.0, rng);
    auto objective = [&](const SelectiveSsmParams& q, const Matrix& x, const Matrix& h) {
        const auto o = ssm_forward_sequential(q, h, x);
        return weighted(wy, o.ys) + weighted(wh, o.h_final);
    };
    SsmCache cache;
    ssm_forward_sequential(p, h0, xs, &cache);
    auto g = ssm_backward(p, cache, wy, wh);

    std::vector<TensorView> pv, gv;
    collect_views(p, "ssm", pv);
    collect_views(g.params, "ssm", gv);
    const double h = 1e-6;
    for (std::size_t v = 0; v < pv.size(); ++v) {
        for (Index k = 0; k < pv[v].size(); ++k) {
            const double keep = pv[v].data[k];
            pv[v].data[k] = keep + h;
            const double up = objective(p, xs, h0);
            pv[v].data[k] = keep - h;
            const double down = objective(p, xs, h0);
            pv[v].data[k] = keep;
            EXPECT_NEAR(gv[v].data[k], (up - down) / (2 * h), 1e-6) << pv[v].name << "[" << k << "]";
        }
    }
    for (Index k = 0; k < xs.size(); ++k) {
        Matrix a = xs, b = xs;
        a.data()[k] += h;
        b.data()[k] -= h;
        EXPECT_NEAR(g.xs.data()[k], (objective(p, a, h0) - objective(p, b, h0)) / (2 * h), 1e-6);
    }
    for (Index k = 0; k < h0.size(); ++k) {
        Matrix a = h0, b = h0;
        a.data()[k] += h;
        b.data()[k] -= h;
        EXPECT_NEAR(g.h0.data()[k], (objective(p, xs, a) - objective(p, xs, b)) / (2 * h), 1e-6);
    }
}

TEST(Backward, StaleCacheIsRejected) {
    Rng rng(1);
    auto p = random_ssm(3, 2, rng);
    const Matrix xs = random_matrix(4, 3, 1.0, rng);
    SsmCache cache;
    const auto out = ssm_forward_sequential(p, Matrix::Zero(3, 2), xs, &cache);
    p.w_c(0, 0) += 1.0;
    EXPECT_THROW(ssm_backward(p, cache, out.ys, Matrix::Zero(3, 2)), std::logic_error);
}

TEST(Backward, BlockMatchesFiniteDifferences) {
    Rng rng(21);
    SsmConfig cfg{3, 2, 2};
    auto p = init_block(cfg, rng);
    p.ssm.w_b *= 4.0;
    p.ssm.b_delta.setConstant(0.3);
    const Matrix u = random_matrix(4, 3, 1.0, rng);
    const Matrix h0 = random_matrix(6, 2, 0.5, rng);
    const Matrix wo = random_matrix(4, 3, 1.0, rng);
    const Matrix wh = random_matrix(6, 2, 1.0, rng);
    auto objective = [&](const MambaBlockParams& q, const Matrix& x) {
        const auto o = block_forward(q, h0, x);
        return weighted(wo, o.out) + weighted(wh, o.h_final);
    };
    BlockCache cache;
    block_forward(p, h0, u, &cache);
    auto g = block_backward(p, cache, wo, wh);
    std::vector<TensorView> pv, gv;
    collect_views(p, "b", pv);
    collect_views(g.params, "b", gv);
    ASSERT_EQ(pv.size(), gv.size());
    const double h = 1e-6;
    for (std::size_t v = 0; v < pv.size(); ++v) {
        for (Index k = 0; k < pv[v].size(); ++k) {
            const double keep = pv[v].data[k];
            pv[v].data[k] = keep + h;
            const double up = objective(p, u);
            pv[v].data[k] = keep - h;
            const double down = objective(p, u);
            pv[v].data[k] = keep;
            EXPECT_NEAR(gv[v].data[k], (up - down) / (2 * h), 1e-6) << pv[v].name << "[" << k << "]";
        }
    }
    for (Index k = 0; k < u.size(); ++k) {
        Matrix a = u, b = u;
        a.data()[k] += h;
        b.data()[k] -= h;
        EXPECT_NEAR(g.u.data()[k], (objective(p, a) - objective(p, b)) / (2 * h), 1e-6);
    }
}

TEST(Activations, Values) {
    EXPECT_EQ(silu(0.0), 0.0);
    EXPECT_NEAR(silu(2.0), 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(silu_prime(1.3), (silu(1.3 + 1e-6) - silu(1.3 - 1e-6)) / 2e-6, 1e-8);
}
