#include "moma/numerics.hpp"

#include "moma/errors.hpp"
#include "moma/rng.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace moma;

TEST_CASE("cosine similarity basics") {
    CHECK(cosine_similarity({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1, 0}, {1, 1}) == doctest::Approx(0.7071067811865476).epsilon(1e-15));

    // symmetric
    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
        Vec64 a(5), b(5);
        for (auto & x : a) x = rng.uniform(-2, 2);
        for (auto & x : b) x = rng.uniform(-2, 2);
        CHECK(cosine_similarity(a, b) == cosine_similarity(b, a));
        CHECK(cosine_similarity(a, b) <= 1.0);
        CHECK(cosine_similarity(a, b) >= -1.0);
    }
}

TEST_CASE("cosine similarity error paths") {
    CHECK_THROWS_AS(cosine_similarity({0, 0}, {1, 1}), ZeroVectorError);
    CHECK_THROWS_AS(cosine_similarity({1, 1}, {0, 0, 0}), ShapeMismatchError);
    CHECK_THROWS_AS(cosine_similarity({1, std::nan("")}, {1, 1}), InvalidInputError);
}

TEST_CASE("knn kernel weights") {
    SUBCASE("single neighbor normalizes to one") {
        const Vec64 w = knn_kernel_weights({3, 1}, {{-1, 4}});
        REQUIRE(w.size() == 1);
        CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("orthogonal pair gives the logistic of 1") {
        const Vec64 w = knn_kernel_weights({1, 0}, {{1, 0}, {0, 1}});
        CHECK(w[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    }
    SUBCASE("identical neighbors split evenly") {
        const Vec64 w = knn_kernel_weights({1, 1}, {{1, 1}, {1, 1}});
        CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("sums to one and is permutation-equivariant") {
        Rng rng(11);
        for (int t = 0; t < 50; ++t) {
            const std::size_t n = 1 + rng.next_below(6);
            Vec64 q(4);
            for (auto & x : q) x = rng.uniform(-1, 1);
            if (norm2(q) == 0.0) continue;
            std::vector<Vec64> nbrs(n, Vec64(4));
            for (auto & v : nbrs) {
                for (auto & x : v) x = rng.uniform(-1, 1) + 0.1;
            }
            const Vec64 w = knn_kernel_weights(q, nbrs);
            double sum = 0.0;
            for (double x : w) {
                CHECK(x >= 0.0);
                sum += x;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);

            // reverse the neighbor order: weights must follow
            std::vector<Vec64> rev(nbrs.rbegin(), nbrs.rend());
            const Vec64 wr = knn_kernel_weights(q, rev);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(wr[i] == doctest::Approx(w[n - 1 - i]).epsilon(1e-15));
            }
        }
    }
}

TEST_CASE("simplex projection matches hand and grid values") {
    SUBCASE("already on the simplex") {
        const WeightVector w = project_to_simplex({0.5, 0.5});
        CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("negative coordinate clips") {
        const WeightVector w = project_to_simplex({0.3, -0.1});
        const auto grid = oracle::grid_project_2d({0.3, -0.1}, 1e-4);
        CHECK(w[0] == doctest::Approx(0.7).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(w[0] == doctest::Approx(grid[0]).epsilon(1e-3));
        CHECK(w[1] == doctest::Approx(grid[1]).epsilon(1e-3));
    }
    SUBCASE("point outside lands on a vertex") {
        const WeightVector w = project_to_simplex({2.0, 0.0});
        const auto grid = oracle::grid_project_2d({2.0, 0.0}, 1e-4);
        CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(w[0] == doctest::Approx(grid[0]).epsilon(1e-3));
    }
}

TEST_CASE("simplex projection is idempotent and always feasible") {
    Rng rng(23);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.next_below(8);
        Vec64 v(n);
        for (auto & x : v) x = rng.uniform(-5, 5);
        const WeightVector w = project_to_simplex(v);
        w.validate(1e-9);
        const WeightVector w2 = project_to_simplex(w.w);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(w2[i] - w[i]) <= 1e-12);
        }
    }
}

TEST_CASE("simplex least squares trivial cases") {
    SUBCASE("single column is forced to weight one") {
        Matrix p(3, 1);
        p(0, 0) = 1.0; p(1, 0) = 2.0; p(2, 0) = 5.0;
        const Vec64 y{1.0, 1.0, 1.0};
        const auto res = solve_simplex_lsq(p, y);
        CHECK(res.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(res.proxy_error == doctest::Approx((0.0 + 1.0 + 16.0) / 3.0).epsilon(1e-12));
    }
    SUBCASE("perfect column wins") {
        Matrix p(4, 2);
        const Vec64 y{0.5, -1.0, 2.0, 0.0};
        for (std::size_t i = 0; i < 4; ++i) {
            p(i, 0) = y[i];
            p(i, 1) = y[i] + 10.0;
        }
        const auto res = solve_simplex_lsq(p, y);
        CHECK(res.weights[0] >= 0.999);
        CHECK(res.proxy_error <= 1e-6);
    }
    SUBCASE("symmetric bracketing columns average") {
        Matrix p(2, 2);
        p(0, 0) = 0.0; p(0, 1) = 2.0;
        p(1, 0) = 0.0; p(1, 1) = 2.0;
        const Vec64 y{1.0, 1.0};
        const auto res = solve_simplex_lsq(p, y);
        const auto grid = oracle::grid_search_simplex(p, y, 1e-4);
        CHECK(res.weights[0] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(res.weights[1] == doctest::Approx(0.5).epsilon(1e-6));
        CHECK(res.proxy_error == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(res.proxy_error <= grid.error + 1e-12);
    }
}

TEST_CASE("simplex least squares error paths") {
    Matrix empty(0, 0);
    CHECK_THROWS_AS(solve_simplex_lsq(empty, {}), EmptyDatasetError);

    Matrix p(2, 2, 1.0);
    p(0, 0) = std::nan("");
    CHECK_THROWS_AS(solve_simplex_lsq(p, {1.0, 1.0}), InvalidInputError);
}

TEST_CASE("simplex least squares objective history is non-increasing") {
    Rng rng(31);
    for (int t = 0; t < 20; ++t) {
        const std::size_t m = 2 + rng.next_below(20);
        const std::size_t n = 2 + rng.next_below(4);
        Matrix p(m, n);
        Vec64 y(m);
        for (auto & x : p.data) x = rng.uniform(-3, 3);
        for (auto & x : y) x = rng.uniform(-3, 3);
        const auto res = solve_simplex_lsq(p, y);
        for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
            CHECK(res.objective_history[i] <= res.objective_history[i - 1]);
        }
        res.weights.validate(1e-6);
    }
}

TEST_CASE("simplex least squares matches the 0.01 grid oracle for small N") {
    Rng rng(47);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + rng.next_below(2); // 2 or 3
        const std::size_t m = 1 + rng.next_below(30);
        Matrix p(m, n);
        Vec64 y(m);
        for (auto & x : p.data) x = rng.uniform(-2, 2);
        for (auto & x : y) x = rng.uniform(-2, 2);
        const auto res = solve_simplex_lsq(p, y);
        const auto grid = oracle::grid_search_simplex(p, y, 0.01);
        CHECK(res.proxy_error <= grid.error + 1e-4);
    }
}

TEST_CASE("blend parameters identities") {
    SUBCASE("one-hot is bit-identical") {
        const Vec64 a{0.1, -0.0, 3.5e-300, 7.0};
        const Vec64 b{9.9, 1.0, 2.0, -4.0};
        const Vec64 out = blend_parameters({a, b}, WeightVector::one_hot(2, 0));
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(std::memcmp(&out[i], &a[i], sizeof(double)) == 0);
        }
    }
    SUBCASE("idempotent on equal inputs") {
        const Vec64 a{1.0, -2.0, 0.25};
        WeightVector w;
        w.w = {0.3, 0.7};
        const Vec64 out = blend_parameters({a, a}, w);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(out[i] == doctest::Approx(a[i]).epsilon(1e-15));
        }
    }
    SUBCASE("hand arithmetic") {
        WeightVector w;
        w.w = {0.25, 0.75};
        const Vec64 out = blend_parameters({{0.0, 4.0}, {2.0, 0.0}}, w);
        CHECK(out[0] == doctest::Approx(1.5).epsilon(1e-15));
        CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("length mismatch throws") {
        WeightVector w;
        w.w = {0.5, 0.5};
        CHECK_THROWS_AS(blend_parameters({{1.0, 2.0}, {1.0}}, w), ShapeMismatchError);
        CHECK_THROWS_AS(blend_parameters({{1.0}}, w), ShapeMismatchError);
    }
}

TEST_CASE("blend parameters is linear in the weights") {
    Rng rng(53);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 2 + rng.next_below(4);
        const std::size_t len = 1 + rng.next_below(6);
        std::vector<Vec64> params(n, Vec64(len));
        for (auto & p : params) {
            for (auto & x : p) x = rng.uniform(-4, 4);
        }
        Vec64 raw_u(n), raw_v(n);
        for (auto & x : raw_u) x = rng.uniform(0, 1);
        for (auto & x : raw_v) x = rng.uniform(0, 1);
        const WeightVector u = project_to_simplex(raw_u);
        const WeightVector v = project_to_simplex(raw_v);
        const double alpha = rng.next_double();

        WeightVector mix;
        mix.w.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            mix.w[i] = alpha * u[i] + (1.0 - alpha) * v[i];
        }
        const Vec64 lhs = blend_parameters(params, mix);
        const Vec64 bu = blend_parameters(params, u);
        const Vec64 bv = blend_parameters(params, v);
        for (std::size_t e = 0; e < len; ++e) {
            CHECK(std::abs(lhs[e] - (alpha * bu[e] + (1.0 - alpha) * bv[e])) <= 1e-12);
        }
    }
}

TEST_CASE("linear system solver round trip") {
    Matrix a(3, 3);
    a(0, 0) = 4; a(0, 1) = 1; a(0, 2) = 0;
    a(1, 0) = 1; a(1, 1) = 3; a(1, 2) = 1;
    a(2, 0) = 0; a(2, 1) = 1; a(2, 2) = 2;
    const Vec64 x_true{1.0, -2.0, 0.5};
    Vec64 b(3, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            b[i] += a(i, j) * x_true[j];
        }
    }
    const Vec64 x = solve_linear_system(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-12));
    }
}
