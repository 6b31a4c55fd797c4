#pragma once

#include <cstddef>
#include <vector>

namespace moma {

using Vec64 = std::vector<double>;

// Row-major dense matrix, just big enough for the problem sizes here
// (prediction matrices of a few hundred rows by a few dozen columns).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec64 data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double & operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

// Nonnegative weights summing to one.
struct WeightVector {
    Vec64 w;

    std::size_t size() const { return w.size(); }
    double operator[](std::size_t i) const { return w[i]; }

    static WeightVector uniform(std::size_t n);
    static WeightVector one_hot(std::size_t n, std::size_t hot);

    // throws InvalidInputError unless all entries are >= 0 and the sum is
    // within `tol` of 1
    void validate(double tol = 1e-6) const;
};

double dot(const Vec64 & a, const Vec64 & b);
double norm2(const Vec64 & a);

// <a,b> / (|a||b|), clamped to [-1, 1]. Throws ZeroVectorError on a
// zero-norm input, ShapeMismatchError on length mismatch.
double cosine_similarity(const Vec64 & a, const Vec64 & b);

// Normalized exponential-cosine kernel against each neighbor:
//   k_i = exp(cos(query, n_i)) / sum_j exp(cos(query, n_j))
// The result is nonnegative and sums to 1.
Vec64 knn_kernel_weights(const Vec64 & query, const std::vector<Vec64> & neighbors);

// Euclidean projection onto { w : w_i >= 0, sum w_i = 1 } by the
// sort-and-threshold method. Idempotent.
WeightVector project_to_simplex(const Vec64 & v);

struct SimplexLsqOptions {
    // stop when the per-iteration objective decrease falls below
    // tol * max(1, initial objective); the relative form keeps the returned
    // weights invariant under a common rescaling of P and y
    double tol = 1e-10;
    std::size_t max_iters = 100000;
};

struct SimplexLsqResult {
    WeightVector weights;
    double proxy_error = 0.0;     // (1/m) |P w - y|^2 at the returned weights
    std::size_t iterations = 0;
    Vec64 objective_history;      // objective after each accepted iterate, non-increasing
};

// Minimize (1/m) |P w - y|^2 over the probability simplex by projected
// gradient descent with fixed step 1/L, L = (2/m) sigma_max(P)^2 estimated
// by power iteration. Deterministic: always starts from uniform weights.
SimplexLsqResult solve_simplex_lsq(const Matrix & P, const Vec64 & y,
                                   const SimplexLsqOptions & opts = {});

// Entry-wise weighted sum of equally sized parameter vectors. One-hot
// weights return the corresponding input bit-identically.
Vec64 blend_parameters(const std::vector<Vec64> & params, const WeightVector & w);

// Solve A x = b by Gaussian elimination with partial pivoting (A is
// overwritten). Used for closed-form head fits and linear probes.
Vec64 solve_linear_system(Matrix a, Vec64 b);

} // namespace moma
