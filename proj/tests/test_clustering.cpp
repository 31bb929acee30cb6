#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "core/clustering.hpp"
#include "core/rng.hpp"

using namespace tab;

namespace {

// Exhaustive 2-partition SSE over all nontrivial bipartitions; the oracle for
// small instances.
double brute_force_best_sse(const std::vector<double>& points, size_t m, size_t dim) {
    double best = std::numeric_limits<double>::infinity();
    for (uint32_t mask = 1; mask + 1 < (1u << m); ++mask) {
        std::vector<double> c0(dim, 0.0), c1(dim, 0.0);
        size_t n0 = 0, n1 = 0;
        for (size_t i = 0; i < m; ++i) {
            const double* p = points.data() + i * dim;
            if (mask & (1u << i)) {
                ++n0;
                for (size_t j = 0; j < dim; ++j) c0[j] += p[j];
            } else {
                ++n1;
                for (size_t j = 0; j < dim; ++j) c1[j] += p[j];
            }
        }
        for (size_t j = 0; j < dim; ++j) {
            c0[j] /= static_cast<double>(n0);
            c1[j] /= static_cast<double>(n1);
        }
        double sse = 0.0;
        for (size_t i = 0; i < m; ++i) {
            const double* p = points.data() + i * dim;
            const auto& c = (mask & (1u << i)) ? c0 : c1;
            for (size_t j = 0; j < dim; ++j) sse += (p[j] - c[j]) * (p[j] - c[j]);
        }
        best = std::min(best, sse);
    }
    return best;
}

double recompute_sse(const std::vector<double>& points, size_t m, size_t dim,
                     const Clustering& c) {
    double sse = 0.0;
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < dim; ++j) {
            const double d = points[i * dim + j] - c.centroids[c.assignment[i]][j];
            sse += d * d;
        }
    }
    return sse;
}

size_t agreement_up_to_swap(const std::vector<int>& a, const std::vector<int>& b) {
    size_t same = 0, swapped = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) ++same;
        if (a[i] == 1 - b[i]) ++swapped;
    }
    return std::max(same, swapped);
}

}  // namespace

TEST_CASE("well-separated 1-D points split where the gap is") {
    const std::vector<double> pts = {0.0, 0.1, 10.0, 10.1};
    const auto c = kmeans2(pts, 4, 1, 1);
    CHECK(c.assignment[0] == c.assignment[1]);
    CHECK(c.assignment[2] == c.assignment[3]);
    CHECK(c.assignment[0] != c.assignment[2]);
    CHECK(c.inertia == doctest::Approx(0.01));
}

TEST_CASE("identical points give zero inertia") {
    const std::vector<double> pts(12, 3.5);  // 6 points in 2-D
    const auto c = kmeans2(pts, 6, 2, 7);
    CHECK(c.inertia == doctest::Approx(0.0));
    for (const auto& centroid : c.centroids) {
        for (double v : centroid) CHECK(std::isfinite(v));
    }
}

TEST_CASE("single point keeps both centroids defined, one cluster empty") {
    const std::vector<double> pts = {2.0, 3.0};
    const auto c = kmeans2(pts, 1, 2, 5);
    REQUIRE(c.assignment.size() == 1);
    CHECK(c.inertia == doctest::Approx(0.0));
    for (const auto& centroid : c.centroids) {
        REQUIRE(centroid.size() == 2);
        for (double v : centroid) CHECK(std::isfinite(v));
    }
}

TEST_CASE("7 random 2-D points reach the brute-force optimum") {
    Rng rng(2023);
    std::vector<double> pts(14);
    for (auto& v : pts) v = rng.uniform();
    const auto c = kmeans2(pts, 7, 2, 3);
    const double best = brute_force_best_sse(pts, 7, 2);
    CHECK(c.inertia == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("oracle optimality on 100 seeded small instances") {
    int optimal = 0;
    int total_iters_checked = 0;
    int monotone_violations = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed * 31 + 1);
        const size_t m = 3 + rng.index(10);   // 3..12
        const size_t dim = 1 + rng.index(5);  // 1..5
        std::vector<double> pts(m * dim);
        for (auto& v : pts) v = rng.uniform(0.0, 4.0);
        KmeansTrace trace;
        const auto c = kmeans2(pts, m, dim, seed, 10, &trace);
        const double best = brute_force_best_sse(pts, m, dim);
        if (c.inertia <= best * (1.0 + 1e-9) + 1e-12) ++optimal;
        for (const auto& restart : trace.restart_inertias) {
            for (size_t i = 1; i < restart.size(); ++i) {
                ++total_iters_checked;
                if (restart[i] > restart[i - 1] + 1e-9) ++monotone_violations;
            }
        }
        CHECK(recompute_sse(pts, m, dim, c) ==
              doctest::Approx(c.inertia).epsilon(1e-6));
    }
    CHECK(optimal >= 95);
    CHECK(total_iters_checked > 0);
    CHECK(monotone_violations == 0);
}

TEST_CASE("permuting well-separated rows permutes the partition") {
    Rng rng(9);
    std::vector<double> pts;
    for (int i = 0; i < 30; ++i) {
        const double base = i < 18 ? 0.0 : 8.0;
        pts.push_back(base + rng.uniform());
        pts.push_back(base + rng.uniform());
    }
    const auto before = kmeans2(pts, 30, 2, 4);

    std::vector<size_t> perm(30);
    for (size_t i = 0; i < 30; ++i) perm[i] = i;
    Rng prng(77);
    prng.shuffle(perm);
    std::vector<double> shuffled(60);
    for (size_t i = 0; i < 30; ++i) {
        shuffled[i * 2] = pts[perm[i] * 2];
        shuffled[i * 2 + 1] = pts[perm[i] * 2 + 1];
    }
    const auto after = kmeans2(shuffled, 30, 2, 4);
    std::vector<int> mapped(30);
    for (size_t i = 0; i < 30; ++i) mapped[i] = after.assignment[i];
    std::vector<int> expect(30);
    for (size_t i = 0; i < 30; ++i) expect[i] = before.assignment[perm[i]];
    CHECK(agreement_up_to_swap(mapped, expect) == 30);
}

TEST_CASE("mini-batch with batch_size = M matches the exact split") {
    const std::vector<double> pts = {0.0, 0.1, 10.0, 10.1};
    const auto exact = kmeans2(pts, 4, 1, 1);
    const auto mb = minibatch_kmeans2(pts, 4, 1, 4, 1);
    CHECK(agreement_up_to_swap(exact.assignment, mb.assignment) == 4);
}

TEST_CASE("mini-batch agrees with exact k-means on two Gaussian clouds") {
    Rng rng(505);
    std::vector<double> pts;
    const size_t per_cloud = 200;
    for (size_t i = 0; i < 2 * per_cloud; ++i) {
        const double cx = i < per_cloud ? -2.0 : 2.0;
        pts.push_back(cx + 0.5 * rng.normal());
        pts.push_back(cx + 0.5 * rng.normal());
    }
    const size_t m = 2 * per_cloud;
    const auto exact = kmeans2(pts, m, 2, 11);
    const auto mb = minibatch_kmeans2(pts, m, 2, 64, 11, 1e-5, 100);
    const double agree =
        static_cast<double>(agreement_up_to_swap(exact.assignment, mb.assignment)) /
        static_cast<double>(m);
    CHECK(agree >= 0.95);
}

TEST_CASE("reassignment ratio 1 keeps re-seeding yet still terminates") {
    Rng rng(3);
    std::vector<double> pts(40);
    for (auto& v : pts) v = rng.uniform();
    const auto c = minibatch_kmeans2(pts, 20, 2, 5, 9, 1.0, 50);
    REQUIRE(c.assignment.size() == 20);
    for (const auto& centroid : c.centroids) {
        for (double v : centroid) CHECK(std::isfinite(v));
    }
    CHECK(c.inertia >= 0.0);
}

TEST_CASE("shape validation") {
    const std::vector<double> pts = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(kmeans2(pts, 2, 2, 1), std::runtime_error);
    CHECK_THROWS_AS(kmeans2({}, 0, 1, 1), std::runtime_error);
    CHECK_THROWS_AS(minibatch_kmeans2(pts, 3, 1, 9, 1), std::runtime_error);
}
