#include "doctest.h"

#include <random>

#include "helpers.hpp"
#include "ppmlhdfe/error.hpp"

using namespace ppmlhdfe;

namespace {

FixedEffect factor(std::vector<std::int32_t> codes, Eigen::VectorXd slope = {}) {
    FixedEffect fe;
    fe.levels = *std::max_element(codes.begin(), codes.end()) + 1;
    fe.codes = std::move(codes);
    fe.slope = std::move(slope);
    fe.term.label = "t";
    return fe;
}

// Two intercept terms and one slope term over n rows.
struct Setup {
    std::vector<FixedEffect> terms;
    Eigen::VectorXd w;
    Eigen::MatrixXd D;  // explicit dummies
};

Setup random_setup(int n, std::mt19937_64& rng, bool with_slope = true) {
    std::uniform_int_distribution<int> a(0, 7), b(0, 5);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    std::normal_distribution<double> normal;
    std::vector<std::int32_t> ca(n), cb(n);
    for (int i = 0; i < n; ++i) {
        ca[i] = i < 8 ? i : a(rng);
        cb[i] = i < 6 ? i : b(rng);
    }
    Setup s;
    s.terms.push_back(factor(ca));
    s.terms.push_back(factor(cb));
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal(rng);
    if (with_slope) s.terms.push_back(factor(cb, v));
    s.w.resize(n);
    for (int i = 0; i < n; ++i) s.w[i] = u(rng);
    int cols = 0;
    for (const auto& t : s.terms) cols += t.levels;
    s.D = Eigen::MatrixXd::Zero(n, cols);
    int off = 0;
    for (const auto& t : s.terms) {
        for (int i = 0; i < n; ++i) s.D(i, off + t.codes[i]) = t.is_slope() ? t.slope[i] : 1.0;
        off += t.levels;
    }
    return s;
}

// Weighted residual from least squares on the dummies, via a pseudo-inverse.
Eigen::MatrixXd dense_residual(const Setup& s, const Eigen::MatrixXd& X) {
    Eigen::VectorXd sw = s.w.cwiseSqrt();
    Eigen::MatrixXd Dw = sw.asDiagonal() * s.D;
    Eigen::MatrixXd Xw = sw.asDiagonal() * X;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Dw);
    Eigen::MatrixXd coef = cod.solve(Xw);
    return X - s.D * coef;
}

}  // namespace

TEST_SUITE("projector") {

TEST_CASE("a single term is demeaned exactly in one pass") {
    std::vector<FixedEffect> terms{factor({0, 0, 1, 1, 1})};
    Projector p(terms);
    Eigen::VectorXd w(5);
    w << 1, 3, 1, 1, 2;
    p.set_weights(w);
    Eigen::MatrixXd x(5, 1);
    x << 4, 0, 1, 2, 3;
    auto r = p.project(x, 1e-12);
    CHECK(r.sweeps <= 2);
    // weighted means 1 and 9/4
    CHECK(x(0, 0) == doctest::Approx(3.0));
    CHECK(x(1, 0) == doctest::Approx(-1.0));
    CHECK(x(4, 0) == doctest::Approx(0.75));
}

TEST_CASE("matches least squares on explicit dummies") {
    std::mt19937_64 rng(1);
    for (bool slope : {false, true}) {
        auto s = random_setup(120, rng, slope);
        Projector p(s.terms);
        p.set_weights(s.w);
        Eigen::MatrixXd X = Eigen::MatrixXd::Random(120, 3);
        Eigen::MatrixXd expected = dense_residual(s, X);
        p.project(X, 1e-13);
        CHECK((X - expected).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("conjugate gradient agrees with the extrapolated sweeps") {
    std::mt19937_64 rng(2);
    auto s = random_setup(200, rng);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(200, 2);
    Eigen::MatrixXd Y = X;
    Projector a(s.terms);
    ProjectorOptions o;
    o.method = ProjectorMethod::conjugate_gradient;
    Projector c(s.terms, o);
    a.set_weights(s.w);
    c.set_weights(s.w);
    a.project(X, 1e-13);
    c.project(Y, 1e-13);
    CHECK((X - Y).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("projection properties") {
    std::mt19937_64 rng(3);
    auto s = random_setup(150, rng);
    Projector p(s.terms);
    p.set_weights(s.w);
    const double tol = 1e-13;
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(150, 2);
    Eigen::MatrixXd PX = X;
    p.project(PX, tol);

    SUBCASE("idempotent") {
        Eigen::MatrixXd again = PX;
        p.project(again, tol);
        CHECK((again - PX).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("orthogonal to every absorbed column") {
        Eigen::MatrixXd inner = s.D.transpose() * s.w.asDiagonal() * PX;
        CHECK(inner.cwiseAbs().maxCoeff() <= 1e-9);
    }
    SUBCASE("linear") {
        Eigen::MatrixXd comb(150, 1);
        comb.col(0) = 2.5 * X.col(0) - 0.5 * X.col(1);
        p.project(comb, tol);
        CHECK((comb.col(0) - (2.5 * PX.col(0) - 0.5 * PX.col(1))).cwiseAbs().maxCoeff() <= 1e-9);
    }
    SUBCASE("invariant to shifts inside the absorbed span") {
        Eigen::VectorXd alpha = Eigen::VectorXd::Random(s.D.cols());
        Eigen::MatrixXd shifted(150, 1);
        shifted.col(0) = X.col(0) + 10 * s.D * alpha;
        p.project(shifted, tol);
        CHECK((shifted.col(0) - PX.col(0)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("threads give identical results") {
    std::mt19937_64 rng(4);
    auto s = random_setup(300, rng);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(300, 5);
    Eigen::MatrixXd Y = X;
    Projector one(s.terms);
    ProjectorOptions o;
    o.threads = 4;
    Projector four(s.terms, o);
    one.set_weights(s.w);
    four.set_weights(s.w);
    auto r1 = one.project(X, 1e-10);
    auto r4 = four.project(Y, 1e-10);
    CHECK(X == Y);
    CHECK(r1.sweeps == r4.sweeps);
}

TEST_CASE("running out of sweeps is reported") {
    std::mt19937_64 rng(5);
    auto s = random_setup(200, rng);
    ProjectorOptions o;
    o.max_sweeps = 1;
    Projector p(s.terms, o);
    p.set_weights(s.w);
    Eigen::MatrixXd X = Eigen::MatrixXd::Random(200, 1);
    CHECK_THROWS_AS(p.project(X, 1e-14), ProjectionError);
}

TEST_CASE("decompose splits a sum of effects") {
    std::mt19937_64 rng(6);
    auto s = random_setup(100, rng);
    Projector p(s.terms);
    p.set_weights(s.w);
    Eigen::VectorXd d = s.D * Eigen::VectorXd::Random(s.D.cols());
    auto parts = p.decompose(d, 1e-14);
    REQUIRE(parts.size() == 3);
    Eigen::VectorXd sum = parts[0] + parts[1] + parts[2];
    CHECK((sum - d).cwiseAbs().maxCoeff() <= 1e-9);
    // each piece is constant within its group (or proportional to v)
    for (int i = 0; i < 100; ++i)
        for (int j = 0; j < 100; ++j)
            if (s.terms[0].codes[i] == s.terms[0].codes[j]) CHECK(parts[0][i] == doctest::Approx(parts[0][j]));
}

TEST_CASE("singletons are removed until none are left") {
    // g2 group of row 4 becomes a singleton once row 5 (a g1 singleton) goes
    auto t = testing::table_from_csv("y,g1,g2\n1,1,1\n2,1,1\n3,2,2\n4,2,3\n5,3,3\n");
    auto s = build_sample(t, SampleRequest{"y", {}, parse_absorb("g1 g2", &t)});
    auto r = drop_singletons(s);
    CHECK(r.num_singletons == 3);
    CHECK(r.sample.row_ids == std::vector<std::size_t>{0, 1});
    CHECK(r.sample.count(DropReason::singleton) == 3);

    auto none = testing::table_from_csv("y,g\n1,1\n2,2\n");
    CHECK_THROWS_AS(drop_singletons(build_sample(none, SampleRequest{"y", {}, parse_absorb("g", &none)})), DataError);
}

TEST_CASE("slope terms do not make singletons") {
    auto t = testing::table_from_csv("y,g,h,v\n1,1,1,1\n2,1,2,2\n3,1,3,3\n");
    auto s = build_sample(t, SampleRequest{"y", {}, parse_absorb("g h#c.v", &t)});
    CHECK(drop_singletons(s).num_singletons == 0);
}

TEST_CASE("bipartite components") {
    // a: 0 0 1 2 ; b: 0 1 1 2  -> {a0,a1,b0,b1} and {a2,b2}
    CHECK(bipartite_components({0, 0, 1, 2}, 3, {0, 1, 1, 2}, 3) == 2);
    CHECK(bipartite_components({0, 1, 2}, 3, {0, 0, 0}, 1) == 1);
}

TEST_CASE("degrees of freedom") {
    auto t = testing::table_from_csv(
        "y,a,b,c,v\n1,1,1,1,1\n2,1,2,1,2\n3,2,1,2,3\n4,2,2,2,1\n5,3,3,1,2\n6,3,3,2,3\n");
    SUBCASE("connected pair loses one category") {
        auto s = build_sample(t, SampleRequest{"y", {}, parse_absorb("a b", &t)});
        auto d = count_dof(s);
        REQUIRE(d.terms.size() == 2);
        CHECK(d.terms[0].categories == 3);
        CHECK(d.terms[0].redundant == 0);
        CHECK(d.terms[1].categories == 3);
        CHECK(d.terms[1].redundant == 2);  // two components: {a1,a2,b1,b2} and {a3,b3}
        CHECK(d.df_a == 4);
        CHECK(d.df_a_initial == 6);
        CHECK(d.df_a_redundant == 2);
        CHECK(d.method == "firstpair");
    }
    SUBCASE("third intercept term is charged one") {
        auto s = build_sample(t, SampleRequest{"y", {}, parse_absorb("a b c", &t)});
        auto d = count_dof(s);
        CHECK(d.terms[2].redundant == 1);
        CHECK_FALSE(d.terms[2].exact);
    }
    SUBCASE("slope terms count every group") {
        auto s = build_sample(t, SampleRequest{"y", {}, parse_absorb("a a#c.v", &t)});
        auto d = count_dof(s);
        CHECK(d.terms[1].categories == 3);
        CHECK(d.terms[1].redundant == 0);
        CHECK(d.df_a == 6);
    }
    SUBCASE("terms nested in a cluster absorb nothing") {
        SampleRequest r{"y", {}, parse_absorb("a b", &t)};
        r.cluster_vars = {"a"};
        auto d = count_dof(build_sample(t, r));
        CHECK(d.terms[0].nested);
        CHECK(d.terms[0].redundant == d.terms[0].categories);
        CHECK_FALSE(d.terms[1].nested);
        CHECK(nested_within({0, 0, 1}, 2, {5, 5, 6}));
        CHECK_FALSE(nested_within({0, 0, 1}, 2, {5, 6, 6}));
    }
}

TEST_CASE("fixed-effect sum recovery") {
    Eigen::VectorXd eta(2), delta(1), off(2);
    Eigen::MatrixXd X(2, 1);
    eta << 1, 2;
    X << 1, 2;
    delta << 0.5;
    off << 0.1, 0.2;
    Eigen::VectorXd d = recover_fe_sum(eta, X, delta, off);
    CHECK(d[0] == doctest::Approx(0.4));
    CHECK(d[1] == doctest::Approx(0.8));
}

}
