#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "support/fixtures.hpp"

using namespace hgnn;
using hgnn_test::op_gradient_error;
using hgnn_test::project;
using M = Mat<double>;
using V = Var<double>;
using VarList = std::vector<V>;

namespace {

M random_mat(Index r, Index c, std::uint64_t seed, double offset = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    M m(r, c);
    for (Index i = 0; i < m.size(); ++i) {
        double x = g(rng);
        // keep entries away from activation kinks
        if (std::abs(x) < 0.05) x += x < 0 ? -0.1 : 0.1;
        m.data()[i] = x + offset;
    }
    return m;
}

M mat(std::initializer_list<std::initializer_list<double>> rows) {
    M m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (double x : r) m(i, j++) = x;
        ++i;
    }
    return m;
}

} // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    numgrad::Tape<double> t;
    const M x = random_mat(2, 4, 1);
    auto y = numgrad::matmul(t.constant(M::Identity(2, 2)), t.constant(x));
    EXPECT_EQ(y.value(), x);
}

TEST(Matmul, SmallHandProduct) {
    numgrad::Tape<double> t;
    auto y = numgrad::matmul(t.constant(mat({{1, 2}, {3, 4}})), t.constant(mat({{1}, {1}})));
    EXPECT_EQ(y.value(), mat({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    numgrad::Tape<double> t;
    try {
        numgrad::matmul(t.constant(M::Zero(2, 3)), t.constant(M::Zero(2, 3)));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    }
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
    const double err = op_gradient_error({random_mat(5, 4, 2), random_mat(4, 3, 3)},
                                         [](auto&, const VarList& v) { return project(numgrad::matmul(v[0], v[1])); });
    EXPECT_LE(err, 1e-6);
}

TEST(ConcatCols, ShapeAndEmptyIdentity) {
    numgrad::Tape<double> t;
    auto y = numgrad::concat_cols(t.constant(M::Ones(2, 3)), t.constant(M::Zero(2, 2)));
    EXPECT_EQ(y.rows(), 2);
    EXPECT_EQ(y.cols(), 5);
    const M x = random_mat(2, 3, 4);
    EXPECT_EQ(numgrad::concat_cols(t.constant(x), t.constant(M(2, 0))).value(), x);
}

TEST(ConcatCols, RowMismatchThrows) {
    numgrad::Tape<double> t;
    EXPECT_THROW(numgrad::concat_cols(t.constant(M::Zero(2, 1)), t.constant(M::Zero(3, 1))), DimensionError);
}

TEST(ConcatCols, GradientSplitMatchesFiniteDifferences) {
    const double err = op_gradient_error({random_mat(3, 2, 5), random_mat(3, 4, 6)},
                                         [](auto&, const VarList& v) { return project(numgrad::concat_cols(v[0], v[1])); });
    EXPECT_LE(err, 1e-6);
}

TEST(LeakyRelu, DefinitionAndIdentityRegion) {
    numgrad::Tape<double> t;
    EXPECT_EQ(numgrad::leaky_relu(t.constant(mat({{-1, 2}})), 0.2).value(), mat({{-0.2, 2}}));
    const M pos = random_mat(3, 3, 7).cwiseAbs();
    EXPECT_EQ(numgrad::leaky_relu(t.constant(pos), 0.2).value(), pos);
}

TEST(LeakyRelu, SubgradientAtZeroIsSlope) {
    numgrad::Tape<double> t;
    const M x0 = M::Zero(1, 1);
    auto x = t.parameter(x0);
    t.backward(numgrad::sum(numgrad::leaky_relu(x, 0.2)));
    EXPECT_DOUBLE_EQ((*t.grad(x))(0, 0), 0.2);
}

TEST(LeakyRelu, SlopeOutsideUnitIntervalRejected) {
    numgrad::Tape<double> t;
    EXPECT_THROW(numgrad::leaky_relu(t.constant(M::Zero(1, 1)), 1.5), ContractError);
    EXPECT_THROW(numgrad::leaky_relu(t.constant(M::Zero(1, 1)), 0.0), ContractError);
}

TEST(LeakyRelu, GradientAwayFromZero) {
    const double err = op_gradient_error({random_mat(4, 5, 8)},
                                         [](auto&, const VarList& v) { return project(numgrad::leaky_relu(v[0], 0.2)); });
    EXPECT_LE(err, 1e-6);
}

TEST(Relu, DefinitionIdempotenceAndZeroSubgradient) {
    numgrad::Tape<double> t;
    EXPECT_EQ(numgrad::relu(t.constant(mat({{-3, 0, 5}}))).value(), mat({{0, 0, 5}}));
    auto x = t.constant(random_mat(4, 4, 9));
    EXPECT_EQ(numgrad::relu(numgrad::relu(x)).value(), numgrad::relu(x).value());
    const M z0 = M::Zero(1, 1);
    auto z = t.parameter(z0);
    t.backward(numgrad::sum(numgrad::relu(z)));
    EXPECT_EQ((*t.grad(z))(0, 0), 0.0);
}

TEST(Relu, GradientMatchesFiniteDifferences) {
    const double err =
        op_gradient_error({random_mat(4, 5, 10)}, [](auto&, const VarList& v) { return project(numgrad::relu(v[0])); });
    EXPECT_LE(err, 1e-6);
}

TEST(SoftmaxRows, EqualRowIsUniformAndLargeShiftIsStable) {
    numgrad::Tape<double> t;
    EXPECT_EQ(numgrad::softmax_rows(t.constant(M::Constant(1, 4, 3.7))).value(), M::Constant(1, 4, 0.25));
    const M big = numgrad::softmax_rows(t.constant(mat({{1000, 1000}}))).value();
    EXPECT_EQ(big, mat({{0.5, 0.5}}));
}

TEST(SoftmaxRows, RowsSumToOneForWideInputs) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-700, 700);
    numgrad::Tape<double> t;
    for (int trial = 0; trial < 50; ++trial) {
        M x(3, 6);
        for (Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
        const M s = numgrad::softmax_rows(t.constant(x)).value();
        ASSERT_TRUE(s.allFinite());
        for (Index r = 0; r < 3; ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-9);
    }
}

TEST(SoftmaxRows, JacobianMatchesFiniteDifferences) {
    const double err = op_gradient_error({random_mat(3, 5, 12)},
                                         [](auto&, const VarList& v) { return project(numgrad::softmax_rows(v[0])); });
    EXPECT_LE(err, 1e-6);
}

TEST(MeanRows, SingletonCopiesRowAndIdenticalRowsAverageToRow) {
    numgrad::Tape<double> t;
    const M x = random_mat(4, 3, 13);
    EXPECT_EQ(numgrad::mean_rows(t.constant(x), {2}).value(), x.row(2));
    M y = x;
    y.row(1) = y.row(3);
    EXPECT_EQ(numgrad::mean_rows(t.constant(y), {1, 3}).value(), y.row(3));
}

TEST(MeanRows, EmptyOrOutOfRangeSetRejected) {
    numgrad::Tape<double> t;
    auto x = t.constant(M::Zero(3, 2));
    EXPECT_THROW(numgrad::mean_rows(x, {}), ContractError);
    EXPECT_THROW(numgrad::mean_rows(x, {3}), ContractError);
}

TEST(MeanRows, GradientDistributesEqually) {
    numgrad::Tape<double> t;
    const M x0 = M::Zero(4, 2);
    auto x = t.parameter(x0);
    t.backward(numgrad::sum(numgrad::mean_rows(x, {0, 2, 3})));
    const M g = *t.grad(x);
    EXPECT_DOUBLE_EQ(g(0, 0), 1.0 / 3);
    EXPECT_EQ(g(1, 1), 0.0);
    EXPECT_DOUBLE_EQ(g(3, 1), 1.0 / 3);
    const double err = op_gradient_error({random_mat(5, 3, 14)},
                                         [](auto&, const VarList& v) { return project(numgrad::mean_rows(v[0], {1, 4, 1})); });
    EXPECT_LE(err, 1e-6);
}

TEST(AffineCombine, BoundariesAreExactCopies) {
    numgrad::Tape<double> t;
    const M a = random_mat(3, 4, 15);
    const M b = random_mat(3, 4, 16);
    EXPECT_EQ(std::memcmp(numgrad::affine_combine(t.constant(a), t.constant(b), 1.0).value().data(), a.data(),
                          sizeof(double) * a.size()),
              0);
    EXPECT_EQ(std::memcmp(numgrad::affine_combine(t.constant(a), t.constant(b), 0.0).value().data(), b.data(),
                          sizeof(double) * b.size()),
              0);
}

TEST(AffineCombine, DefaultFusionWeight) {
    numgrad::Tape<double> t;
    EXPECT_DOUBLE_EQ(numgrad::affine_combine(t.constant(mat({{1}})), t.constant(mat({{0}})), 0.6).value()(0, 0), 0.6);
}

TEST(AffineCombine, ShapeAndRangeChecks) {
    numgrad::Tape<double> t;
    EXPECT_THROW(numgrad::affine_combine(t.constant(M::Zero(2, 2)), t.constant(M::Zero(2, 3)), 0.5), DimensionError);
    EXPECT_THROW(numgrad::affine_combine(t.constant(M::Zero(2, 2)), t.constant(M::Zero(2, 2)), 1.2), ContractError);
    const double err = op_gradient_error({random_mat(2, 3, 17), random_mat(2, 3, 18)}, [](auto&, const VarList& v) {
        return project(numgrad::affine_combine(v[0], v[1], 0.35));
    });
    EXPECT_LE(err, 1e-6);
}

TEST(CrossEntropy, UniformAndNearCertainCases) {
    numgrad::Tape<double> t;
    EXPECT_NEAR(numgrad::cross_entropy_logits(t.constant(M::Zero(1, 6)), 3).value()(0, 0), std::log(6.0), 1e-12);
    const double tiny = numgrad::cross_entropy_logits(t.constant(mat({{10, -10}})), 0).value()(0, 0);
    EXPECT_NEAR(tiny, std::log1p(std::exp(-20.0)), 1e-15);
    EXPECT_NEAR(tiny, 2.06e-9, 0.01e-9);
}

TEST(CrossEntropy, LabelOutOfRangeRejected) {
    numgrad::Tape<double> t;
    EXPECT_THROW(numgrad::cross_entropy_logits(t.constant(M::Zero(1, 3)), 3), ContractError);
    EXPECT_THROW(numgrad::cross_entropy_logits(t.constant(M::Zero(1, 3)), -1), ContractError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
    numgrad::Tape<double> t;
    const M z = random_mat(1, 5, 19);
    auto x = t.parameter(z);
    t.backward(numgrad::cross_entropy_logits(x, 2));
    M expected = numgrad::softmax_rows_value(z);
    expected(0, 2) -= 1.0;
    EXPECT_LE((*t.grad(x) - expected).cwiseAbs().maxCoeff(), 1e-15);
    const double err = op_gradient_error({z}, [](auto&, const VarList& v) { return numgrad::cross_entropy_logits(v[0], 4); });
    EXPECT_LE(err, 1e-6);
}

TEST(CrossEntropy, ShiftInvariance) {
    numgrad::Tape<double> t;
    const M z = random_mat(1, 4, 20);
    const double base = numgrad::cross_entropy_logits(t.constant(z), 1).value()(0, 0);
    const M shifted = (z.array() + 123.4).matrix();
    EXPECT_NEAR(numgrad::cross_entropy_logits(t.constant(shifted), 1).value()(0, 0), base, 1e-9);
    EXPECT_EQ(argmax_lowest(z), argmax_lowest(shifted));
}

TEST(Backward, SumGivesOnesAndDetachedParameterIsUntouched) {
    numgrad::Tape<double> t;
    const M w0 = random_mat(3, 2, 21), other0 = random_mat(2, 2, 22);
    auto w = t.parameter(w0);
    auto other = t.parameter(other0);
    t.backward(numgrad::sum(w));
    EXPECT_EQ(*t.grad(w), M::Ones(3, 2));
    EXPECT_EQ(t.grad(other), nullptr);
    EXPECT_EQ(t.grad_or_zero(other), M::Zero(2, 2));
}

TEST(Backward, NonScalarLossRejected) {
    numgrad::Tape<double> t;
    const M w0 = M::Ones(2, 2);
    auto w = t.parameter(w0);
    EXPECT_THROW(t.backward(w), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
    // loss = sum(x W) + sum(x W) reaches W twice
    const double err = op_gradient_error({random_mat(2, 3, 23), random_mat(3, 2, 24)}, [](auto&, const VarList& v) {
        auto y = numgrad::matmul(v[0], v[1]);
        return numgrad::add(project(y, 1), project(numgrad::relu(y), 2));
    });
    EXPECT_LE(err, 1e-6);
}

TEST(StructuralOps, GradientsMatchFiniteDifferences) {
    const double err = op_gradient_error({random_mat(4, 3, 25), random_mat(2, 3, 26), random_mat(1, 3, 27)},
                                         [](auto&, const VarList& v) {
                                             auto s = numgrad::stack_rows<double>({v[0], v[1]});
                                             auto g = numgrad::gather_rows(s, {5, 0, 0, 3});
                                             auto r = numgrad::reshape(numgrad::slice_rows(g, 1, 2), 3, 2);
                                             auto b = numgrad::add_row(numgrad::scale(s, 0.5), v[2]);
                                             return numgrad::add(project(r, 3), project(b, 4));
                                         });
    EXPECT_LE(err, 1e-6);
}

TEST(MeanOf, AveragesScalars) {
    numgrad::Tape<double> t;
    std::vector<V> xs = {t.constant(mat({{1}})), t.constant(mat({{2}})), t.constant(mat({{6}}))};
    EXPECT_DOUBLE_EQ(numgrad::mean_of<double>(xs).value()(0, 0), 3.0);
}

TEST(Finiteness, OpsStayFiniteOnExtremeFiniteInput) {
    numgrad::Tape<double> t;
    const M x = mat({{-700, 700, 0}});
    EXPECT_TRUE(numgrad::all_finite(numgrad::softmax_rows(t.constant(x)).value()));
    EXPECT_TRUE(numgrad::all_finite(numgrad::cross_entropy_logits(t.constant(x), 0).value()));
}
