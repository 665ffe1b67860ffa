#include "qmamba/problem_suite.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <set>

using namespace qmamba;
using nlohmann::json;

namespace {

Vector vec(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

Matrix mat(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index k = 0; k < m.cols(); ++k) {
            m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        }
    }
    return m;
}

json golden() {
    std::ifstream is(QMAMBA_TEST_DATA_DIR "/bbob_golden.json");
    return json::parse(is);
}

bbob::ProblemInstance from_case(const json& c) {
    bbob::GallagherPeaks peaks;
    if (c.contains("peaks")) {
        for (const auto& p : c["peaks"]["centers"]) {
            peaks.centers.push_back(vec(p));
        }
        peaks.weights = vec(c["peaks"]["weights"]);
        for (const auto& p : c["peaks"]["conditioning"]) {
            peaks.conditioning.push_back(vec(p));
        }
    }
    return bbob::ProblemInstance::from_parts(c["function_id"].get<int>(), vec(c["shift"]),
                                             mat(c["rotation"]), mat(c["second_rotation"]),
                                             c["f_opt"].get<double>(), 0, peaks);
}

}  // namespace

TEST(ProblemSuite, MatchesIndependentOracleOnAllFunctions) {
    const auto g = golden();
    ASSERT_EQ(g["cases"].size(), 48u);
    for (const auto& c : g["cases"]) {
        const auto p = from_case(c);
        const auto& pts = c["points"];
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const double expected = c["values"][k].get<double>();
            const double got = p.evaluate(vec(pts[k]));
            EXPECT_NEAR(got, expected, 1e-10 * std::max(1.0, std::abs(expected)))
                << "f" << c["function_id"] << " dim " << c["dim"] << " point " << k;
        }
        if (c.contains("value_at_shift")) {
            EXPECT_NEAR(p.evaluate(p.shift()), c["value_at_shift"].get<double>(), 1e-9);
        }
    }
}

TEST(ProblemSuite, OptimumValueAtShiftForShiftCentredFunctions) {
    for (int fid : {1, 2, 3, 6, 7, 10, 11, 12, 13, 14, 15, 16, 17, 18, 21, 22, 23}) {
        const auto p = bbob::make_instance(fid, 10, 3);
        EXPECT_NEAR(p.evaluate(p.shift()), p.f_opt(), 1e-8) << "f" << fid;
    }
}

TEST(ProblemSuite, ValuesNeverBelowOptimumOnRandomPoints) {
    Rng rng(11);
    for (int fid = 1; fid <= bbob::kFunctionCount; ++fid) {
        const auto p = bbob::make_instance(fid, 5, 1);
        for (int k = 0; k < 200; ++k) {
            Vector x(5);
            for (Index j = 0; j < 5; ++j) {
                x[j] = rng.uniform(-5.0, 5.0);
            }
            EXPECT_GE(p.evaluate(x), p.f_opt() - 1e-9) << "f" << fid;
        }
    }
}

TEST(ProblemSuite, InstancesAreDeterministicAndSeedDependent) {
    const auto a = bbob::make_instance(15, 10, 42);
    const auto b = bbob::make_instance(15, 10, 42);
    const auto c = bbob::make_instance(15, 10, 43);
    EXPECT_EQ(a.shift(), b.shift());
    EXPECT_EQ(a.rotation(), b.rotation());
    EXPECT_EQ(a.f_opt(), b.f_opt());
    EXPECT_NE(a.shift(), c.shift());
}

TEST(ProblemSuite, RotationsAreOrthogonal) {
    for (int d : {5, 10, 20, 50}) {
        const auto p = bbob::make_instance(10, d, 7);
        const Matrix I = Matrix::Identity(d, d);
        EXPECT_LT((p.rotation() * p.rotation().transpose() - I).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_LT((p.second_rotation() * p.second_rotation().transpose() - I).cwiseAbs().maxCoeff(),
                  1e-12);
    }
}

TEST(ProblemSuite, InstanceParametersInRange) {
    for (int fid = 1; fid <= bbob::kFunctionCount; ++fid) {
        const auto p = bbob::make_instance(fid, 10, 5);
        EXPECT_GE(p.f_opt(), -100.0);
        EXPECT_LE(p.f_opt(), 100.0);
        EXPECT_LE(p.shift().cwiseAbs().maxCoeff(), 5.0);
    }
}

TEST(ProblemSuite, DefaultSplitMatchesTable) {
    const auto s = bbob::default_split();
    EXPECT_EQ(s.train_ids.size(), 16u);
    EXPECT_EQ(s.test_ids.size(), 8u);
    std::set<int> all(s.train_ids.begin(), s.train_ids.end());
    for (int id : s.test_ids) {
        EXPECT_TRUE(all.insert(id).second);
    }
    EXPECT_EQ(all.size(), 24u);
    EXPECT_EQ(*all.begin(), 1);
    EXPECT_EQ(*all.rbegin(), 24);
    EXPECT_EQ(s.dims.at(1), 50);
    EXPECT_EQ(s.dims.at(2), 5);
    for (const auto& [id, d] : s.dims) {
        EXPECT_TRUE(bbob::is_supported_dim(d)) << id;
    }
}

TEST(ProblemSuite, RejectsBadArguments) {
    EXPECT_THROW(bbob::make_instance(0, 5, 0), std::invalid_argument);
    EXPECT_THROW(bbob::make_instance(25, 5, 0), std::invalid_argument);
    EXPECT_THROW(bbob::make_instance(1, 7, 0), std::invalid_argument);
    const auto p = bbob::make_instance(1, 5, 0);
    EXPECT_THROW(p.evaluate(Vector::Zero(4)), std::invalid_argument);
}

TEST(ProblemSuite, RowEvaluationMatchesScalar) {
    const auto p = bbob::make_instance(17, 5, 2);
    Rng rng(4);
    Matrix x(6, 5);
    for (Index i = 0; i < x.size(); ++i) {
        x.data()[i] = rng.uniform(-5.0, 5.0);
    }
    const Vector f = p.evaluate_rows(x);
    for (Index i = 0; i < 6; ++i) {
        EXPECT_EQ(f[i], p.evaluate(x.row(i).transpose()));
    }
}

TEST(ProblemSuite, BoundaryPenalty) {
    Vector x(3);
    x << 6.0, -7.0, 1.0;
    EXPECT_DOUBLE_EQ(bbob::boundary_penalty(x), 1.0 + 4.0);
    EXPECT_EQ(bbob::boundary_penalty(Vector::Constant(3, 5.0)), 0.0);
}
