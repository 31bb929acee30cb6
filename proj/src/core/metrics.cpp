#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

EvalRecord evaluate(const Model& model, const LabeledDataset& data, int batch_size) {
    EvalRecord r;
    r.labels = data.labels;
    r.groups = data.groups;
    r.num_groups = data.num_groups;
    r.predictions.reserve(data.size());
    std::vector<size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t start = 0; start < data.size(); start += batch_size) {
        const size_t bn = std::min<size_t>(batch_size, data.size() - start);
        auto be = per_sample_losses(model, data,
                                    std::span<const size_t>(idx.data() + start, bn));
        r.predictions.insert(r.predictions.end(), be.predictions.begin(),
                             be.predictions.end());
    }
    return r;
}

double mean_accuracy(const EvalRecord& r) {
    if (r.size() == 0) fail("empty eval record");
    size_t correct = 0;
    for (size_t i = 0; i < r.size(); ++i) {
        if (r.predictions[i] == r.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(r.size());
}

std::vector<double> per_group_accuracy(const EvalRecord& r) {
    if (!r.has_groups()) fail("eval record has no group labels");
    std::vector<size_t> correct(r.num_groups, 0), count(r.num_groups, 0);
    for (size_t i = 0; i < r.size(); ++i) {
        const int g = r.groups[i];
        if (g < 0 || g >= r.num_groups) fail("group id out of range");
        ++count[g];
        if (r.predictions[i] == r.labels[i]) ++correct[g];
    }
    std::vector<double> acc(r.num_groups, -1.0);
    for (int g = 0; g < r.num_groups; ++g) {
        if (count[g] > 0) acc[g] = static_cast<double>(correct[g]) / count[g];
    }
    return acc;
}

double wga(const EvalRecord& r) {
    const auto acc = per_group_accuracy(r);
    double mn = std::numeric_limits<double>::infinity();
    for (double a : acc) {
        if (a >= 0.0) mn = std::min(mn, a);
    }
    if (!std::isfinite(mn)) fail("no nonempty group");
    return mn;
}

double weighted_mean_acc(const EvalRecord& r, const GroupWeights& weights) {
    if (!r.has_groups()) fail("eval record has no group labels");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < r.size(); ++i) {
        const int g = r.groups[i];
        if (g < 0 || static_cast<size_t>(g) >= weights.weight.size()) {
            fail("missing weight for group " + std::to_string(g));
        }
        const double w = weights.weight[g];
        den += w;
        if (r.predictions[i] == r.labels[i]) num += w;
    }
    if (den <= 0.0) fail("weights sum to zero over the eval set");
    return num / den;
}

namespace {

double pou_impl(const GridResult& grid, bool filter_zero_val_wga) {
    if (grid.rows.empty()) fail("empty grid");
    std::vector<const GridCandidate*> cands;
    for (const auto& row : grid.rows) {
        if (!filter_zero_val_wga || row.val_wga_mean > 0.0) cands.push_back(&row);
    }
    if (cands.empty()) fail("no candidate with nonzero validation WGA");
    double best_test_wga = -1.0;
    for (const auto* c : cands) best_test_wga = std::max(best_test_wga, c->test_wga_mean);
    const GridCandidate* selected = cands.front();
    for (const auto* c : cands) {
        if (c->val_acc_mean > selected->val_acc_mean) selected = c;  // first wins ties
    }
    if (selected->test_wga_mean <= 0.0) {
        return best_test_wga <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    return best_test_wga / selected->test_wga_mean;
}

}  // namespace

double pou(const GridResult& grid) { return pou_impl(grid, true); }

double pou_unfiltered(const GridResult& grid) { return pou_impl(grid, false); }

double mms(const GridResult& grid) {
    if (grid.rows.empty()) fail("empty grid");
    double sum = 0.0;
    for (const auto& row : grid.rows) sum += row.test_wga_mean;
    return sum / static_cast<double>(grid.rows.size());
}

RebalanceStats rebalance_stats(const PseudoGroupPartition& partition,
                               const AugmentationManifest& manifest,
                               const std::vector<int>& groups,
                               const std::unordered_set<int>& bias_conflicting) {
    if (groups.empty()) fail("rebalance_stats needs training group labels");
    const size_t n = groups.size();
    auto is_bc = [&](size_t i) {
        if (groups[i] < 0) fail("unknown group id");
        return bias_conflicting.count(groups[i]) > 0;
    };
    size_t bc_before = 0;
    for (size_t i = 0; i < n; ++i) {
        if (is_bc(i)) ++bc_before;
    }
    size_t copies = 0, bc_copies = 0;
    for (const auto& e : manifest.entries) {
        if (e.index >= n) fail("manifest index out of range");
        copies += e.copies;
        if (is_bc(e.index)) bc_copies += e.copies;
    }
    size_t identified = 0;
    for (const auto& split : partition.classes) {
        for (size_t i : split.minority) {
            if (i >= n) fail("partition index out of range");
            if (is_bc(i)) ++identified;
        }
    }
    RebalanceStats s;
    s.bc_fraction_before = static_cast<double>(bc_before) / static_cast<double>(n);
    s.bc_fraction_after =
        static_cast<double>(bc_before + bc_copies) / static_cast<double>(n + copies);
    s.identified_fraction =
        bc_before == 0 ? 0.0 : static_cast<double>(identified) / bc_before;
    return s;
}

void write_grid_csv(const GridResult& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot open for write: " + path);
    out << "method,candidate_id,hyperparams,seed_count,val_acc_mean,val_wga_mean,"
           "test_wga_mean,test_acc_mean\n";
    for (const auto& row : grid.rows) {
        for (const std::string* s : {&row.method, &row.candidate_id, &row.hyperparams}) {
            if (s->find(',') != std::string::npos || s->find('\n') != std::string::npos) {
                fail("grid CSV fields must not contain commas or newlines");
            }
        }
        out << row.method << ',' << row.candidate_id << ',' << row.hyperparams << ','
            << row.seed_count << ',' << fmt_double(row.val_acc_mean) << ','
            << fmt_double(row.val_wga_mean) << ',' << fmt_double(row.test_wga_mean)
            << ',' << fmt_double(row.test_acc_mean) << '\n';
    }
    if (!out) fail("write failed: " + path);
}

GridResult read_grid_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) fail("empty grid CSV");
    GridResult grid;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) fail("malformed grid CSV row: " + line);
        GridCandidate c;
        c.method = f[0];
        c.candidate_id = f[1];
        c.hyperparams = f[2];
        c.seed_count = std::stoi(f[3]);
        c.val_acc_mean = std::stod(f[4]);
        c.val_wga_mean = std::stod(f[5]);
        c.test_wga_mean = std::stod(f[6]);
        c.test_acc_mean = std::stod(f[7]);
        grid.rows.push_back(std::move(c));
    }
    return grid;
}

void write_eval_csv(const EvalRecord& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail("cannot open for write: " + path);
    out << "index,label,group,prediction\n";
    for (size_t i = 0; i < r.size(); ++i) {
        out << i << ',' << r.labels[i] << ',' << (r.has_groups() ? r.groups[i] : -1)
            << ',' << r.predictions[i] << '\n';
    }
    if (!out) fail("write failed: " + path);
}

EvalRecord read_eval_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) fail("empty eval CSV");
    EvalRecord r;
    bool any_group = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) fail("malformed eval CSV row: " + line);
        r.labels.push_back(std::stoi(f[1]));
        const int g = std::stoi(f[2]);
        r.groups.push_back(g);
        if (g >= 0) any_group = true;
        r.num_groups = std::max(r.num_groups, g + 1);
        r.predictions.push_back(std::stoi(f[3]));
    }
    if (!any_group) r.groups.clear();
    return r;
}

}  // namespace tab
