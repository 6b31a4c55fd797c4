#include "moma/numerics.hpp"

#include "moma/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace moma {

namespace {

void require_finite(const Vec64 & v, const char * what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw InvalidInputError(std::string(what) + ": non-finite entry");
        }
    }
}

void require_finite(const Matrix & m, const char * what) {
    require_finite(m.data, what);
}

// objective (1/m) |P w - y|^2, residual written into r
double lsq_objective(const Matrix & p, const Vec64 & w, const Vec64 & y, Vec64 & r) {
    const std::size_t m = p.rows, n = p.cols;
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            s += p(i, j) * w[j];
        }
        r[i] = s - y[i];
        acc += r[i] * r[i];
    }
    return acc / static_cast<double>(m);
}

// largest eigenvalue of P^T P by power iteration
double lambda_max_ptp(const Matrix & p) {
    const std::size_t m = p.rows, n = p.cols;
    Vec64 v(n);
    for (std::size_t j = 0; j < n; ++j) {
        v[j] = 1.0 + 1e-3 * static_cast<double>(j); // deterministic, not axis-aligned
    }
    Vec64 pv(m), next(n);
    double lambda = 0.0;
    for (int iter = 0; iter < 500; ++iter) {
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += p(i, j) * v[j];
            }
            pv[i] = s;
        }
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                s += p(i, j) * pv[i];
            }
            next[j] = s;
        }
        double vv = dot(v, v);
        double new_lambda = vv > 0.0 ? dot(v, next) / vv : 0.0;
        double nn = std::sqrt(dot(next, next));
        if (nn <= 0.0) {
            return 0.0; // P^T P v vanished: matrix is (numerically) zero on this subspace
        }
        for (std::size_t j = 0; j < n; ++j) {
            v[j] = next[j] / nn;
        }
        if (iter > 0 && std::abs(new_lambda - lambda) <= 1e-12 * std::max(1.0, std::abs(new_lambda))) {
            lambda = new_lambda;
            break;
        }
        lambda = new_lambda;
    }
    return std::max(lambda, 0.0);
}

} // namespace

WeightVector WeightVector::uniform(std::size_t n) {
    WeightVector wv;
    wv.w.assign(n, 1.0 / static_cast<double>(n));
    return wv;
}

WeightVector WeightVector::one_hot(std::size_t n, std::size_t hot) {
    WeightVector wv;
    wv.w.assign(n, 0.0);
    wv.w[hot] = 1.0;
    return wv;
}

void WeightVector::validate(double tol) const {
    if (w.empty()) {
        throw InvalidInputError("weight vector: empty");
    }
    double sum = 0.0;
    for (double x : w) {
        if (!std::isfinite(x)) {
            throw InvalidInputError("weight vector: non-finite entry");
        }
        if (x < 0.0) {
            throw InvalidInputError("weight vector: negative entry");
        }
        sum += x;
    }
    if (std::abs(sum - 1.0) > tol) {
        throw InvalidInputError("weight vector: sum " + std::to_string(sum) + " != 1");
    }
}

double dot(const Vec64 & a, const Vec64 & b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm2(const Vec64 & a) {
    return std::sqrt(dot(a, a));
}

double cosine_similarity(const Vec64 & a, const Vec64 & b) {
    if (a.size() != b.size() || a.empty()) {
        throw ShapeMismatchError("cosine_similarity: lengths " + std::to_string(a.size()) +
                                 " vs " + std::to_string(b.size()));
    }
    require_finite(a, "cosine_similarity");
    require_finite(b, "cosine_similarity");
    const double na2 = dot(a, a);
    const double nb2 = dot(b, b);
    if (na2 == 0.0 || nb2 == 0.0) {
        throw ZeroVectorError("cosine_similarity: zero-norm input");
    }
    // single sqrt keeps cos(x, x) == 1 exact whenever na2*nb2 is exact
    double c = dot(a, b) / std::sqrt(na2 * nb2);
    return std::clamp(c, -1.0, 1.0);
}

Vec64 knn_kernel_weights(const Vec64 & query, const std::vector<Vec64> & neighbors) {
    if (neighbors.empty()) {
        throw InvalidInputError("knn_kernel_weights: no neighbors");
    }
    Vec64 k(neighbors.size());
    double z = 0.0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        k[i] = std::exp(cosine_similarity(query, neighbors[i]));
        z += k[i];
    }
    for (double & x : k) {
        x /= z;
    }
    return k;
}

WeightVector project_to_simplex(const Vec64 & v) {
    if (v.empty()) {
        throw InvalidInputError("project_to_simplex: empty input");
    }
    require_finite(v, "project_to_simplex");

    Vec64 u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());

    // tau from the largest j with u_j - (css_j - 1)/j > 0
    double css = 0.0, tau = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        css += u[j];
        double t = (css - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) {
            tau = t;
        }
    }

    WeightVector out;
    out.w.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.w[i] = std::max(v[i] - tau, 0.0);
    }
    return out;
}

SimplexLsqResult solve_simplex_lsq(const Matrix & P, const Vec64 & y,
                                   const SimplexLsqOptions & opts) {
    if (P.rows == 0) {
        throw EmptyDatasetError("solve_simplex_lsq: zero rows");
    }
    if (P.cols == 0) {
        throw InvalidInputError("solve_simplex_lsq: zero columns");
    }
    if (y.size() != P.rows) {
        throw ShapeMismatchError("solve_simplex_lsq: y length " + std::to_string(y.size()) +
                                 " vs " + std::to_string(P.rows) + " rows");
    }
    if (!(opts.tol > 0.0)) {
        throw InvalidInputError("solve_simplex_lsq: tol must be > 0");
    }
    require_finite(P, "solve_simplex_lsq");
    require_finite(y, "solve_simplex_lsq");

    const std::size_t m = P.rows, n = P.cols;

    SimplexLsqResult res;
    res.weights = WeightVector::uniform(n);
    Vec64 r(m);
    double obj = lsq_objective(P, res.weights.w, y, r);
    res.objective_history.push_back(obj);

    if (n == 1) { // simplex is a point
        res.proxy_error = obj;
        return res;
    }

    const double lambda = lambda_max_ptp(P);
    const double lipschitz = (2.0 / static_cast<double>(m)) * lambda;
    if (lipschitz < 1e-300) { // P is all zeros, gradient vanishes everywhere
        res.proxy_error = obj;
        return res;
    }
    double step = 1.0 / (lipschitz * (1.0 + 1e-9));

    // the objective has units of y^2, so the stopping tolerance follows the
    // problem scale; this keeps the optimizer scale-equivariant
    const double tol = opts.tol * std::max(1.0, obj);

    Vec64 grad(n), trial(n), trial_r(m);
    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
        // grad = (2/m) P^T r
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                s += P(i, j) * r[i];
            }
            grad[j] = 2.0 * s / static_cast<double>(m);
        }

        // take the step; if rounding makes the objective rise, halve until it
        // does not (the history must be non-increasing)
        double trial_obj = 0.0;
        bool accepted = false;
        double local_step = step;
        for (int halving = 0; halving < 64; ++halving) {
            for (std::size_t j = 0; j < n; ++j) {
                trial[j] = res.weights.w[j] - local_step * grad[j];
            }
            WeightVector projected = project_to_simplex(trial);
            trial_obj = lsq_objective(P, projected.w, y, trial_r);
            if (trial_obj <= obj) {
                res.weights = std::move(projected);
                std::swap(r, trial_r);
                accepted = true;
                break;
            }
            local_step *= 0.5;
        }
        if (!accepted) {
            break; // at the numerical floor
        }
        res.iterations = iter + 1;
        const double decrease = obj - trial_obj;
        obj = trial_obj;
        res.objective_history.push_back(obj);
        if (decrease < tol) {
            break;
        }
    }

    res.proxy_error = obj;
    return res;
}

Vec64 blend_parameters(const std::vector<Vec64> & params, const WeightVector & w) {
    if (params.size() != w.size() || params.empty()) {
        throw ShapeMismatchError("blend_parameters: " + std::to_string(params.size()) +
                                 " parameter vectors vs " + std::to_string(w.size()) + " weights");
    }
    const std::size_t len = params[0].size();
    for (const Vec64 & p : params) {
        if (p.size() != len) {
            throw ShapeMismatchError("blend_parameters: unequal parameter lengths");
        }
    }
    w.validate();

    // one-hot weights must reproduce the source bit-for-bit
    std::size_t nonzero = 0, hot = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (w[j] != 0.0) {
            ++nonzero;
            hot = j;
        }
    }
    if (nonzero == 1 && w[hot] == 1.0) {
        return params[hot];
    }

    Vec64 out(len, 0.0);
    for (std::size_t j = 0; j < params.size(); ++j) {
        const double wj = w[j];
        if (wj == 0.0) {
            continue;
        }
        const Vec64 & p = params[j];
        for (std::size_t e = 0; e < len; ++e) {
            out[e] += wj * p[e];
        }
    }
    return out;
}

Vec64 solve_linear_system(Matrix a, Vec64 b) {
    const std::size_t n = a.rows;
    if (a.cols != n || b.size() != n) {
        throw ShapeMismatchError("solve_linear_system: non-square system");
    }
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t i = col + 1; i < n; ++i) {
            if (std::abs(a(i, col)) > std::abs(a(pivot, col))) {
                pivot = i;
            }
        }
        if (std::abs(a(pivot, col)) < 1e-300) {
            throw InvalidInputError("solve_linear_system: singular matrix");
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(col, j), a(pivot, j));
            }
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t i = col + 1; i < n; ++i) {
            double f = a(i, col) / a(col, col);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = col; j < n; ++j) {
                a(i, j) -= f * a(col, j);
            }
            b[i] -= f * b[col];
        }
    }
    Vec64 x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            s -= a(i, j) * x[j];
        }
        x[i] = s / a(i, i);
    }
    return x;
}

} // namespace moma
