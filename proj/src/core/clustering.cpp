#include "core/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "core/rng.hpp"

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double sq_dist(const double* a, const double* b, size_t dim) {
    double acc = 0.0;
    for (size_t j = 0; j < dim; ++j) {
        const double d = a[j] - b[j];
        acc += d * d;
    }
    return acc;
}

// k-means++ for k=2: first centroid uniform, second proportional to squared
// distance from the first.
std::array<std::vector<double>, 2> seed_centroids(const std::vector<double>& points,
                                                  size_t m, size_t dim, Rng& rng) {
    std::array<std::vector<double>, 2> c;
    const size_t first = static_cast<size_t>(rng.index(m));
    c[0].assign(points.data() + first * dim, points.data() + (first + 1) * dim);
    std::vector<double> d2(m);
    double total = 0.0;
    for (size_t i = 0; i < m; ++i) {
        d2[i] = sq_dist(points.data() + i * dim, c[0].data(), dim);
        total += d2[i];
    }
    size_t second = first;
    if (total > 0.0) {
        const double target = rng.uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i < m; ++i) {
            acc += d2[i];
            if (acc >= target) {
                second = i;
                break;
            }
        }
    } else {
        second = static_cast<size_t>(rng.index(m));  // all points identical
    }
    c[1].assign(points.data() + second * dim, points.data() + (second + 1) * dim);
    return c;
}

double assign_points(const std::vector<double>& points, size_t m, size_t dim,
                     const std::array<std::vector<double>, 2>& c,
                     std::vector<int>& assignment) {
    double inertia = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const double d0 = sq_dist(points.data() + i * dim, c[0].data(), dim);
        const double d1 = sq_dist(points.data() + i * dim, c[1].data(), dim);
        assignment[i] = d1 < d0 ? 1 : 0;
        inertia += std::min(d0, d1);
    }
    return inertia;
}

void recompute_centroids(const std::vector<double>& points, size_t m, size_t dim,
                         const std::vector<int>& assignment,
                         std::array<std::vector<double>, 2>& c) {
    std::array<size_t, 2> count = {0, 0};
    c[0].assign(dim, 0.0);
    c[1].assign(dim, 0.0);
    for (size_t i = 0; i < m; ++i) {
        const int a = assignment[i];
        ++count[a];
        const double* p = points.data() + i * dim;
        for (size_t j = 0; j < dim; ++j) c[a][j] += p[j];
    }
    for (int k = 0; k < 2; ++k) {
        if (count[k] > 0) {
            for (size_t j = 0; j < dim; ++j) c[k][j] /= static_cast<double>(count[k]);
        }
    }
}

// Moves the point farthest from its own centroid into the empty cluster.
// Returns false when no repair is possible (m == 1).
bool repair_empty(const std::vector<double>& points, size_t m, size_t dim,
                  std::vector<int>& assignment, std::array<std::vector<double>, 2>& c) {
    std::array<size_t, 2> count = {0, 0};
    for (int a : assignment) ++count[a];
    if (count[0] > 0 && count[1] > 0) return true;
    if (m < 2) {
        // one singleton cluster; mirror its centroid so both are defined
        const int full = count[0] > 0 ? 0 : 1;
        c[1 - full] = c[full];
        return false;
    }
    const int empty = count[0] == 0 ? 0 : 1;
    const int full = 1 - empty;
    size_t worst = 0;
    double worst_d = -1.0;
    for (size_t i = 0; i < m; ++i) {
        const double d = sq_dist(points.data() + i * dim, c[full].data(), dim);
        if (d > worst_d) {
            worst_d = d;
            worst = i;
        }
    }
    assignment[worst] = empty;
    recompute_centroids(points, m, dim, assignment, c);
    return true;
}

}  // namespace

Clustering kmeans2(const std::vector<double>& points, size_t m, size_t dim,
                   uint64_t seed, int restarts, KmeansTrace* trace) {
    if (m < 1 || dim < 1) fail("kmeans2 needs at least one point and one dimension");
    if (points.size() != m * dim) fail("kmeans2 shape mismatch");
    if (restarts < 1) fail("kmeans2 needs at least one restart");

    Clustering best;
    best.inertia = std::numeric_limits<double>::infinity();
    Rng rng(derive_seed(seed, 0x2c1d));

    for (int r = 0; r < restarts; ++r) {
        auto c = seed_centroids(points, m, dim, rng);
        std::vector<int> assignment(m, 0);
        std::vector<int> prev;
        double inertia = 0.0;
        int iters = 0;
        std::vector<double>* t = nullptr;
        if (trace) {
            trace->restart_inertias.emplace_back();
            t = &trace->restart_inertias.back();
        }
        for (; iters < 300; ++iters) {
            inertia = assign_points(points, m, dim, c, assignment);
            if (t) t->push_back(inertia);
            if (assignment == prev) break;
            prev = assignment;
            recompute_centroids(points, m, dim, assignment, c);
            if (!repair_empty(points, m, dim, assignment, c)) break;
        }
        // make inertia consistent with the returned assignment/centroids
        recompute_centroids(points, m, dim, assignment, c);
        repair_empty(points, m, dim, assignment, c);
        inertia = 0.0;
        for (size_t i = 0; i < m; ++i) {
            inertia += sq_dist(points.data() + i * dim, c[assignment[i]].data(), dim);
        }
        if (inertia < best.inertia) {
            best.assignment = assignment;
            best.centroids = {c[0], c[1]};
            best.inertia = inertia;
            best.iterations_run = iters + 1;
        }
    }
    return best;
}

Clustering minibatch_kmeans2(const std::vector<double>& points, size_t m, size_t dim,
                             size_t batch_size, uint64_t seed,
                             double reassignment_ratio, int max_iters) {
    if (m < 1 || dim < 1) fail("minibatch_kmeans2 needs at least one point");
    if (points.size() != m * dim) fail("minibatch_kmeans2 shape mismatch");
    if (batch_size < 1 || batch_size > m) {
        fail("batch_size must lie in [1, number of points]");
    }
    Rng rng(derive_seed(seed, 0x3b7f));
    auto c = seed_centroids(points, m, dim, rng);
    std::array<double, 2> counts = {0.0, 0.0};

    std::vector<size_t> batch(batch_size);
    std::vector<int> batch_assign(batch_size);
    int iters = 0;
    for (; iters < max_iters; ++iters) {
        for (auto& b : batch) b = static_cast<size_t>(rng.index(m));
        std::array<size_t, 2> batch_counts = {0, 0};
        for (size_t s = 0; s < batch_size; ++s) {
            const double* p = points.data() + batch[s] * dim;
            const double d0 = sq_dist(p, c[0].data(), dim);
            const double d1 = sq_dist(p, c[1].data(), dim);
            batch_assign[s] = d1 < d0 ? 1 : 0;
            ++batch_counts[batch_assign[s]];
        }
        for (size_t s = 0; s < batch_size; ++s) {
            const int a = batch_assign[s];
            counts[a] += 1.0;
            const double eta = 1.0 / counts[a];
            const double* p = points.data() + batch[s] * dim;
            for (size_t j = 0; j < dim; ++j) {
                c[a][j] = (1.0 - eta) * c[a][j] + eta * p[j];
            }
        }
        for (int k = 0; k < 2; ++k) {
            const double share =
                static_cast<double>(batch_counts[k]) / static_cast<double>(batch_size);
            if (share < reassignment_ratio) {
                const size_t pick = static_cast<size_t>(rng.index(m));
                c[k].assign(points.data() + pick * dim, points.data() + (pick + 1) * dim);
                counts[k] = 0.0;
            }
        }
    }

    Clustering out;
    out.assignment.resize(m);
    out.inertia = assign_points(points, m, dim, c, out.assignment);
    out.centroids = {c[0], c[1]};
    out.iterations_run = iters;
    for (const auto& cc : out.centroids) {
        for (double v : cc) {
            if (!std::isfinite(v)) fail("non-finite centroid");
        }
    }
    return out;
}

}  // namespace tab
