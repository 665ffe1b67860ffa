#pragma once

#include "qmamba/common.hpp"

#include <cstdint>
#include <map>
#include <string_view>
#include <vector>

namespace qmamba::bbob {

struct SearchRange {
    double lo = -5.0;
    double hi = 5.0;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Local optima of the Gallagher functions (f21, f22). Peak 0 is the global optimum and
/// coincides with the instance shift.
struct GallagherPeaks {
    std::vector<Vector> centers;
    Vector weights;
    /// Diagonal of C_i, already divided by alpha_i^(1/4).
    std::vector<Vector> conditioning;
};

/// One shifted and rotated instance of a noiseless BBOB function. Immutable after
/// construction; evaluate() is pure and thread-safe.
class ProblemInstance {
public:
    /// Assembles an instance from explicit parts. Used by fixtures that need an identity
    /// transform or a hand-placed optimum.
    static ProblemInstance from_parts(int function_id, Vector shift, Matrix rotation,
                                      Matrix second_rotation, double f_opt,
                                      std::uint64_t seed = 0, GallagherPeaks peaks = {});

    int function_id() const { return function_id_; }
    int dim() const { return static_cast<int>(shift_.size()); }
    const Vector& shift() const { return shift_; }
    const Matrix& rotation() const { return rotation_; }
    const Matrix& second_rotation() const { return second_rotation_; }
    const GallagherPeaks& peaks() const { return peaks_; }
    double f_opt() const { return f_opt_; }
    const SearchRange& search_range() const { return range_; }
    std::uint64_t seed() const { return seed_; }
    std::string_view name() const;

    double evaluate(const Eigen::Ref<const Vector>& x) const;

    /// Row-wise objective values of an NP x dim matrix.
    Vector evaluate_rows(const Matrix& x) const;

private:
    ProblemInstance() = default;

    int function_id_ = 1;
    Vector shift_;
    Matrix rotation_;
    Matrix second_rotation_;
    GallagherPeaks peaks_;
    // cached rotation_ * center for every Gallagher peak
    std::vector<Vector> rotated_centers_;
    double f_opt_ = 0.0;
    SearchRange range_{};
    std::uint64_t seed_ = 0;
};

struct ProblemSplit {
    std::vector<int> train_ids;
    std::vector<int> test_ids;
    std::map<int, int> dims;
};

inline constexpr int kFunctionCount = 24;

bool is_supported_dim(int dim);

/// Deterministic in (function_id, dim, seed). Throws std::invalid_argument on an unknown
/// function id or an unsupported dimension.
ProblemInstance make_instance(int function_id, int dim, std::uint64_t seed);

/// Seeded Gaussian matrix orthogonalised by Householder QR with a sign-fixed diagonal.
Matrix random_rotation(int dim, Rng& rng);

/// 16 training and 8 test functions with their dimensions.
ProblemSplit default_split();

/// Boundary penalty sum(max(0, |x_i| - 5)^2).
double boundary_penalty(const Eigen::Ref<const Vector>& x);

}  // namespace qmamba::bbob
