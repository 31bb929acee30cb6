#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "core/dataset.hpp"
#include "core/nn.hpp"
#include "core/tab_pipeline.hpp"

namespace tab {

struct EvalRecord {
    std::vector<int> predictions;
    std::vector<int> labels;
    std::vector<int> groups;  // empty when unavailable
    int num_groups = 0;

    size_t size() const { return predictions.size(); }
    bool has_groups() const { return !groups.empty(); }
};

// Runs the model over the full dataset (argmax predictions).
EvalRecord evaluate(const Model& model, const LabeledDataset& data, int batch_size = 512);

double mean_accuracy(const EvalRecord& r);

// Per-group accuracy; entries for groups absent from the record are -1.
std::vector<double> per_group_accuracy(const EvalRecord& r);

// Minimum per-group accuracy over groups present in the record. Groups with
// no samples cannot be estimated and are excluded.
double wga(const EvalRecord& r);

// sum_i w(g_i) * correct_i / sum_i w(g_i).
double weighted_mean_acc(const EvalRecord& r, const GroupWeights& weights);

// One grid-search candidate, aggregated across seeds.
struct GridCandidate {
    std::string method;
    std::string candidate_id;
    std::string hyperparams;
    int seed_count = 0;
    double val_acc_mean = 0.0;
    double val_wga_mean = 0.0;
    double test_wga_mean = 0.0;
    double test_acc_mean = 0.0;
};

struct GridResult {
    std::vector<GridCandidate> rows;
};

// Price of Unawareness: candidates with zero validation WGA are dropped;
// numerator = max test WGA over the rest, denominator = test WGA of the
// remaining candidate with the highest validation accuracy (ties go to the
// first-listed). Always >= 1 under this filter.
double pou(const GridResult& grid);

// Same ratio without the zero-validation-WGA filter, reported alongside for
// transparency; may be infinite.
double pou_unfiltered(const GridResult& grid);

// Mean test WGA over all candidates, no filtering.
double mms(const GridResult& grid);

struct RebalanceStats {
    double bc_fraction_before = 0.0;   // bias-conflicting share of D_train
    double bc_fraction_after = 0.0;    // share of the manifest-expanded multiset
    double identified_fraction = 0.0;  // share of true BC inside the minority clusters
};

// Uses true group labels (an evaluation-only privilege) to score how well the
// loss-history split found the bias-conflicting samples.
RebalanceStats rebalance_stats(const PseudoGroupPartition& partition,
                               const AugmentationManifest& manifest,
                               const std::vector<int>& groups,
                               const std::unordered_set<int>& bias_conflicting);

// Grid results CSV: method,candidate_id,hyperparams,seed_count,val_acc_mean,
// val_wga_mean,test_wga_mean,test_acc_mean.
void write_grid_csv(const GridResult& grid, const std::string& path);
GridResult read_grid_csv(const std::string& path);

// Per-sample EvalRecord CSV: index,label,group,prediction.
void write_eval_csv(const EvalRecord& r, const std::string& path);
EvalRecord read_eval_csv(const std::string& path);

}  // namespace tab
