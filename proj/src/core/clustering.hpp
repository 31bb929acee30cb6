#pragma once

#include <cstdint>
#include <vector>

namespace tab {

struct Clustering {
    std::vector<int> assignment;            // per-point cluster id in {0,1}
    std::vector<std::vector<double>> centroids;  // 2 x dim
    double inertia = 0.0;                   // within-cluster sum of squares
    int iterations_run = 0;
};

// Per-restart inertia after each Lloyd iteration; for tests.
struct KmeansTrace {
    std::vector<std::vector<double>> restart_inertias;
};

// Two-cluster k-means over row-major points (m x dim): k-means++ seeding,
// Lloyd iterations to an assignment fixpoint (at most 300), best of
// `restarts` by inertia. Empty clusters are repaired by moving the point
// farthest from its own centroid. With m == 1 one cluster may stay empty.
Clustering kmeans2(const std::vector<double>& points, size_t m, size_t dim,
                   uint64_t seed, int restarts = 10, KmeansTrace* trace = nullptr);

// Mini-batch variant: per-centroid learning rate 1/count; centroids whose
// share of a batch falls below reassignment_ratio are re-seeded from random
// points. A final full-data pass produces the assignment and inertia.
Clustering minibatch_kmeans2(const std::vector<double>& points, size_t m, size_t dim,
                             size_t batch_size, uint64_t seed,
                             double reassignment_ratio = 1e-5, int max_iters = 100);

}  // namespace tab
