#include "qmamba/problem_suite.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace qmamba::bbob {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

constexpr std::array<std::string_view, kFunctionCount> kNames = {
    "sphere",
    "ellipsoidal",
    "rastrigin",
    "buche_rastrigin",
    "linear_slope",
    "attractive_sector",
    "step_ellipsoidal",
    "rosenbrock",
    "rosenbrock_rotated",
    "ellipsoidal_rotated",
    "discus",
    "bent_cigar",
    "sharp_ridge",
    "different_powers",
    "rastrigin_rotated",
    "weierstrass",
    "schaffers_f7",
    "schaffers_f7_ill_conditioned",
    "griewank_rosenbrock",
    "schwefel",
    "gallagher_101",
    "gallagher_21",
    "katsuura",
    "lunacek_bi_rastrigin",
};

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Exponent i/(D-1) for 0-based i; zero when D == 1.
double ramp(Index i, Index d) {
    return d > 1 ? static_cast<double>(i) / static_cast<double>(d - 1) : 0.0;
}

double t_osz(double x) {
    if (x == 0.0) {
        return 0.0;
    }
    const double xh = std::log(std::abs(x));
    const double c1 = x > 0.0 ? 10.0 : 5.5;
    const double c2 = x > 0.0 ? 7.9 : 3.1;
    return sign_of(x) * std::exp(xh + 0.049 * (std::sin(c1 * xh) + std::sin(c2 * xh)));
}

Vector t_osz(const Vector& x) { return x.unaryExpr([](double v) { return t_osz(v); }); }

Vector t_asy(const Vector& x, double beta) {
    Vector out = x;
    const Index d = x.size();
    for (Index i = 0; i < d; ++i) {
        if (x[i] > 0.0) {
            out[i] = std::pow(x[i], 1.0 + beta * ramp(i, d) * std::sqrt(x[i]));
        }
    }
    return out;
}

// Diagonal of Lambda^alpha.
Vector lambda_diag(double alpha, Index d) {
    Vector out(d);
    for (Index i = 0; i < d; ++i) {
        out[i] = std::pow(alpha, 0.5 * ramp(i, d));
    }
    return out;
}

double rastrigin_core(const Vector& z) {
    double cos_sum = 0.0;
    for (Index i = 0; i < z.size(); ++i) {
        cos_sum += std::cos(kTwoPi * z[i]);
    }
    return 10.0 * (static_cast<double>(z.size()) - cos_sum) + z.squaredNorm();
}

double ellipsoid_core(const Vector& z) {
    double sum = 0.0;
    const Index d = z.size();
    for (Index i = 0; i < d; ++i) {
        sum += std::pow(10.0, 6.0 * ramp(i, d)) * z[i] * z[i];
    }
    return sum;
}

double rosenbrock_core(const Vector& z) {
    double sum = 0.0;
    for (Index i = 0; i + 1 < z.size(); ++i) {
        const double a = z[i] * z[i] - z[i + 1];
        const double b = z[i] - 1.0;
        sum += 100.0 * a * a + b * b;
    }
    return sum;
}

double schaffers_core(const Vector& z) {
    const Index d = z.size();
    double sum = 0.0;
    for (Index i = 0; i + 1 < d; ++i) {
        const double s = std::sqrt(z[i] * z[i] + z[i + 1] * z[i + 1]);
        const double sq = std::sqrt(s);
        const double sn = std::sin(50.0 * std::pow(s, 0.2));
        sum += sq + sq * sn * sn;
    }
    const double mean = d > 1 ? sum / static_cast<double>(d - 1) : sum;
    return mean * mean;
}

double rosenbrock_scale(Index d) { return std::max(1.0, std::sqrt(static_cast<double>(d)) / 8.0); }

constexpr double kSchwefelOptimum = 4.2096874633;

GallagherPeaks make_gallagher_peaks(int function_id, const Vector& optimum, Rng& rng) {
    const bool many = function_id == 21;
    const int count = many ? 101 : 21;
    const double alpha_first = many ? 1000.0 : 1000.0 * 1000.0;
    const double local_bound = 4.9;
    const Index d = optimum.size();

    std::vector<double> alphas(static_cast<std::size_t>(count - 1));
    for (int j = 0; j < count - 1; ++j) {
        alphas[static_cast<std::size_t>(j)] =
            std::pow(1000.0, 2.0 * j / static_cast<double>(count - 2));
    }
    std::shuffle(alphas.begin(), alphas.end(), rng.engine());

    GallagherPeaks peaks;
    peaks.weights = Vector(count);
    for (int i = 0; i < count; ++i) {
        double alpha = alpha_first;
        Vector center = optimum;
        if (i == 0) {
            peaks.weights[i] = 10.0;
        } else {
            peaks.weights[i] = 1.1 + 8.0 * (i - 1) / static_cast<double>(count - 2);
            alpha = alphas[static_cast<std::size_t>(i - 1)];
            center = Vector(d);
            for (Index j = 0; j < d; ++j) {
                center[j] = rng.uniform(-local_bound, local_bound);
            }
        }
        Vector diag = lambda_diag(alpha, d) / std::pow(alpha, 0.25);
        std::shuffle(diag.data(), diag.data() + d, rng.engine());
        peaks.centers.push_back(std::move(center));
        peaks.conditioning.push_back(std::move(diag));
    }
    return peaks;
}

}  // namespace

double boundary_penalty(const Eigen::Ref<const Vector>& x) {
    double sum = 0.0;
    for (Index i = 0; i < x.size(); ++i) {
        const double excess = std::abs(x[i]) - 5.0;
        if (excess > 0.0) {
            sum += excess * excess;
        }
    }
    return sum;
}

bool is_supported_dim(int dim) { return dim == 5 || dim == 10 || dim == 20 || dim == 50; }

std::string_view ProblemInstance::name() const {
    return kNames[static_cast<std::size_t>(function_id_ - 1)];
}

ProblemInstance ProblemInstance::from_parts(int function_id, Vector shift, Matrix rotation,
                                            Matrix second_rotation, double f_opt,
                                            std::uint64_t seed, GallagherPeaks peaks) {
    if (function_id < 1 || function_id > kFunctionCount) {
        throw std::invalid_argument("unknown BBOB function id " + std::to_string(function_id));
    }
    const Index d = shift.size();
    if (d < 2) {
        throw std::invalid_argument("BBOB instances need at least two dimensions");
    }
    if (rotation.rows() != d || rotation.cols() != d || second_rotation.rows() != d ||
        second_rotation.cols() != d) {
        throw std::invalid_argument("rotation shape does not match the shift dimension");
    }
    if ((function_id == 21 || function_id == 22) && peaks.centers.empty()) {
        throw std::invalid_argument("Gallagher instances need peak data");
    }

    ProblemInstance p;
    p.function_id_ = function_id;
    p.shift_ = std::move(shift);
    p.rotation_ = std::move(rotation);
    p.second_rotation_ = std::move(second_rotation);
    p.peaks_ = std::move(peaks);
    p.f_opt_ = f_opt;
    p.seed_ = seed;
    for (const auto& c : p.peaks_.centers) {
        p.rotated_centers_.push_back(p.rotation_ * c);
    }
    return p;
}

double ProblemInstance::evaluate(const Eigen::Ref<const Vector>& x) const {
    const Index d = shift_.size();
    if (x.size() != d) {
        throw std::invalid_argument("evaluate: expected dimension " + std::to_string(d) +
                                    ", got " + std::to_string(x.size()));
    }
    const auto& R = rotation_;
    const auto& Q = second_rotation_;
    const double dd = static_cast<double>(d);
    const Vector delta = x - shift_;
    double f = 0.0;

    switch (function_id_) {
        case 1:
            f = delta.squaredNorm();
            break;
        case 2:
            f = ellipsoid_core(t_osz(delta));
            break;
        case 3: {
            const Vector z = lambda_diag(10.0, d).cwiseProduct(t_asy(t_osz(delta), 0.2));
            f = rastrigin_core(z);
            break;
        }
        case 4: {
            Vector z = t_osz(delta);
            for (Index i = 0; i < d; ++i) {
                double s = std::pow(10.0, 0.5 * ramp(i, d));
                if (z[i] > 0.0 && i % 2 == 0) {
                    s *= 10.0;
                }
                z[i] *= s;
            }
            f = rastrigin_core(z) + 100.0 * boundary_penalty(x);
            break;
        }
        case 5: {
            for (Index i = 0; i < d; ++i) {
                const double s = sign_of(shift_[i]) * std::pow(10.0, ramp(i, d));
                const double z = shift_[i] * x[i] < 25.0 ? x[i] : shift_[i];
                f += 5.0 * std::abs(s) - s * z;
            }
            break;
        }
        case 6: {
            const Vector z = Q * lambda_diag(10.0, d).cwiseProduct(R * delta);
            double sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                const double s = z[i] * shift_[i] > 0.0 ? 100.0 : 1.0;
                sum += (s * z[i]) * (s * z[i]);
            }
            f = std::pow(t_osz(sum), 0.9);
            break;
        }
        case 7: {
            const Vector zh = lambda_diag(10.0, d).cwiseProduct(R * delta);
            Vector zt(d);
            for (Index i = 0; i < d; ++i) {
                zt[i] = std::abs(zh[i]) > 0.5 ? std::floor(0.5 + zh[i])
                                              : std::floor(0.5 + 10.0 * zh[i]) / 10.0;
            }
            const Vector z = Q * zt;
            double sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                sum += std::pow(10.0, 2.0 * ramp(i, d)) * z[i] * z[i];
            }
            f = 0.1 * std::max(std::abs(zh[0]) / 1.0e4, sum) + boundary_penalty(x);
            break;
        }
        case 8: {
            const Vector z = rosenbrock_scale(d) * delta + Vector::Ones(d);
            f = rosenbrock_core(z);
            break;
        }
        case 9: {
            const Vector z = rosenbrock_scale(d) * (R * delta) + Vector::Ones(d);
            f = rosenbrock_core(z);
            break;
        }
        case 10:
            f = ellipsoid_core(t_osz(R * delta));
            break;
        case 11: {
            const Vector z = t_osz(R * delta);
            f = 1.0e6 * z[0] * z[0] + z.tail(d - 1).squaredNorm();
            break;
        }
        case 12: {
            const Vector z = R * t_asy(R * delta, 0.5);
            f = z[0] * z[0] + 1.0e6 * z.tail(d - 1).squaredNorm();
            break;
        }
        case 13: {
            const Vector z = Q * lambda_diag(10.0, d).cwiseProduct(R * delta);
            f = z[0] * z[0] + 100.0 * z.tail(d - 1).norm();
            break;
        }
        case 14: {
            const Vector z = R * delta;
            double sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                sum += std::pow(std::abs(z[i]), 2.0 + 4.0 * ramp(i, d));
            }
            f = std::sqrt(sum);
            break;
        }
        case 15: {
            const Vector z =
                R * lambda_diag(10.0, d).cwiseProduct(Q * t_asy(t_osz(R * delta), 0.2));
            f = rastrigin_core(z);
            break;
        }
        case 16: {
            const Vector z = R * lambda_diag(0.01, d).cwiseProduct(Q * t_osz(R * delta));
            double f0 = 0.0;
            for (int k = 0; k < 12; ++k) {
                f0 += std::pow(0.5, k) * std::cos(std::numbers::pi * std::pow(3.0, k));
            }
            double sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                for (int k = 0; k < 12; ++k) {
                    sum += std::pow(0.5, k) * std::cos(kTwoPi * std::pow(3.0, k) * (z[i] + 0.5));
                }
            }
            const double inner = sum / dd - f0;
            f = 10.0 * inner * inner * inner + 10.0 / dd * boundary_penalty(x);
            break;
        }
        case 17:
        case 18: {
            const double alpha = function_id_ == 17 ? 10.0 : 1000.0;
            const Vector z = lambda_diag(alpha, d).cwiseProduct(Q * t_asy(R * delta, 0.5));
            f = schaffers_core(z) + 10.0 * boundary_penalty(x);
            break;
        }
        case 19: {
            const Vector z = rosenbrock_scale(d) * (R * delta) + Vector::Ones(d);
            double sum = 0.0;
            for (Index i = 0; i + 1 < d; ++i) {
                const double a = z[i] * z[i] - z[i + 1];
                const double b = z[i] - 1.0;
                const double s = 100.0 * a * a + b * b;
                sum += s / 4000.0 - std::cos(s);
            }
            f = 10.0 / (dd - 1.0) * sum + 10.0;
            break;
        }
        case 20: {
            Vector xh(d);
            Vector two_abs_opt(d);
            for (Index i = 0; i < d; ++i) {
                xh[i] = 2.0 * sign_of(shift_[i]) * x[i];
                two_abs_opt[i] = 2.0 * std::abs(shift_[i]);
            }
            Vector zh = xh;
            for (Index i = 1; i < d; ++i) {
                zh[i] = xh[i] + 0.25 * (xh[i - 1] - two_abs_opt[i - 1]);
            }
            const Vector z =
                100.0 * (lambda_diag(10.0, d).cwiseProduct(zh - two_abs_opt) + two_abs_opt);
            double sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                sum += z[i] * std::sin(std::sqrt(std::abs(z[i])));
            }
            f = -sum / (100.0 * dd) + 4.189828872724339 + 100.0 * boundary_penalty(z / 100.0);
            break;
        }
        case 21:
        case 22: {
            const Vector rx = R * x;
            double best = 0.0;
            for (std::size_t i = 0; i < rotated_centers_.size(); ++i) {
                const Vector diff = rx - rotated_centers_[i];
                const double quad = peaks_.conditioning[i].dot(diff.cwiseProduct(diff));
                best = std::max(best, peaks_.weights[static_cast<Index>(i)] *
                                          std::exp(-quad / (2.0 * dd)));
            }
            const double g = t_osz(10.0 - best);
            f = g * g + boundary_penalty(x);
            break;
        }
        case 23: {
            const Vector z = Q * lambda_diag(100.0, d).cwiseProduct(R * delta);
            const double exponent = 10.0 / std::pow(dd, 1.2);
            double prod = 1.0;
            for (Index i = 0; i < d; ++i) {
                double sum = 0.0;
                for (int j = 1; j <= 32; ++j) {
                    const double p2 = std::ldexp(1.0, j);
                    sum += std::abs(p2 * z[i] - std::round(p2 * z[i])) / p2;
                }
                prod *= std::pow(1.0 + static_cast<double>(i + 1) * sum, exponent);
            }
            f = 10.0 / (dd * dd) * prod - 10.0 / (dd * dd) + boundary_penalty(x);
            break;
        }
        case 24: {
            constexpr double mu0 = 2.5;
            constexpr double depth = 1.0;
            const double s = 1.0 - 1.0 / (2.0 * std::sqrt(dd + 20.0) - 8.2);
            const double mu1 = -std::sqrt((mu0 * mu0 - depth) / s);
            Vector xh(d);
            for (Index i = 0; i < d; ++i) {
                xh[i] = 2.0 * sign_of(shift_[i]) * x[i];
            }
            const Vector centred = xh - Vector::Constant(d, mu0);
            const Vector z = Q * lambda_diag(100.0, d).cwiseProduct(R * centred);
            const double sphere0 = centred.squaredNorm();
            const double sphere1 = depth * dd + s * (xh - Vector::Constant(d, mu1)).squaredNorm();
            double cos_sum = 0.0;
            for (Index i = 0; i < d; ++i) {
                cos_sum += std::cos(kTwoPi * z[i]);
            }
            f = std::min(sphere0, sphere1) + 10.0 * (dd - cos_sum) + 1.0e4 * boundary_penalty(x);
            break;
        }
        default:
            throw std::logic_error("unreachable function id");
    }
    return f + f_opt_;
}

Vector ProblemInstance::evaluate_rows(const Matrix& x) const {
    if (x.cols() != shift_.size()) {
        throw std::invalid_argument("evaluate_rows: population has " + std::to_string(x.cols()) +
                                    " columns, problem dimension is " +
                                    std::to_string(shift_.size()));
    }
    Vector out(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
        out[i] = evaluate(x.row(i).transpose());
    }
    return out;
}

Matrix random_rotation(int dim, Rng& rng) {
    Matrix g(dim, dim);
    for (Index i = 0; i < g.rows(); ++i) {
        for (Index j = 0; j < g.cols(); ++j) {
            g(i, j) = rng.normal();
        }
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < dim; ++j) {
        if (r(j, j) < 0.0) {
            q.col(j) *= -1.0;
        }
    }
    return q;
}

ProblemInstance make_instance(int function_id, int dim, std::uint64_t seed) {
    if (function_id < 1 || function_id > kFunctionCount) {
        throw std::invalid_argument("unknown BBOB function id " + std::to_string(function_id));
    }
    if (!is_supported_dim(dim)) {
        throw std::invalid_argument("unsupported dimension " + std::to_string(dim) +
                                    " (expected 5, 10, 20 or 50)");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(function_id),
                        static_cast<std::uint64_t>(dim)));

    // Uniform over the central 80% of [-5, 5].
    Vector shift(dim);
    for (Index i = 0; i < dim; ++i) {
        shift[i] = rng.uniform(-4.0, 4.0);
    }
    Matrix rotation = random_rotation(dim, rng);
    Matrix second = random_rotation(dim, rng);
    const double f_opt = rng.uniform(-100.0, 100.0);

    // Functions whose optimum is tied to a sign pattern place it accordingly.
    switch (function_id) {
        case 4:
            for (Index i = 0; i < dim; i += 2) {
                shift[i] = std::abs(shift[i]);
            }
            break;
        case 5:
            shift = shift.unaryExpr([](double v) { return v >= 0.0 ? 5.0 : -5.0; });
            break;
        case 8:
            shift *= 0.75;
            break;
        case 20:
            shift = shift.unaryExpr(
                [](double v) { return (v >= 0.0 ? 1.0 : -1.0) * kSchwefelOptimum / 2.0; });
            break;
        case 22:
            shift *= 0.98;
            break;
        case 24:
            shift = shift.unaryExpr([](double v) { return v >= 0.0 ? 1.25 : -1.25; });
            break;
        default:
            break;
    }

    GallagherPeaks peaks;
    if (function_id == 21 || function_id == 22) {
        peaks = make_gallagher_peaks(function_id, shift, rng);
    }
    return ProblemInstance::from_parts(function_id, std::move(shift), std::move(rotation),
                                       std::move(second), f_opt, seed, std::move(peaks));
}

ProblemSplit default_split() {
    ProblemSplit split;
    split.train_ids = {1, 4, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24};
    split.test_ids = {2, 3, 5, 6, 7, 8, 9, 10};
    split.dims = {{1, 50},  {2, 5},   {3, 5},   {4, 10},  {5, 50},  {6, 5},
                  {7, 20},  {8, 10},  {9, 10},  {10, 10}, {11, 5},  {12, 50},
                  {13, 10}, {14, 20}, {15, 5},  {16, 20}, {17, 50}, {18, 50},
                  {19, 10}, {20, 20}, {21, 20}, {22, 10}, {23, 20}, {24, 20}};
    return split;
}

}  // namespace qmamba::bbob
