#include "core/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "core/metrics.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace tab {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

struct CellRecord {
    std::string method, candidate_id, hyperparams;
    uint64_t seed = 0;
    double val_acc = 0, val_wga = 0, test_wga = 0, test_acc = 0;
    bool has_rebalance = false;
    double bc_before = 0, bc_after = 0, identified = 0;
    double wall_seconds = 0;
};

struct TaskKey {
    std::string generator;
    double p = 0;
    bool operator<(const TaskKey& o) const {
        return generator != o.generator ? generator < o.generator : p < o.p;
    }
};

std::string fmt(double v, int digits = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

}  // namespace

ReportOutput render_report(const std::string& results_dir) {
    if (!fs::exists(results_dir)) fail("results directory not found: " + results_dir);

    std::vector<fs::path> cell_files;
    for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "cell.json") {
            cell_files.push_back(entry.path());
        }
    }
    std::sort(cell_files.begin(), cell_files.end());
    if (cell_files.empty()) fail("no cell.json files under " + results_dir);

    std::map<TaskKey, std::vector<CellRecord>> by_task;
    for (const auto& path : cell_files) {
        std::ifstream in(path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail("corrupt cell JSON " + path.string() + ": " + e.what());
        }
        if (!j.value("ok", false)) continue;  // failed cells are excluded
        TaskKey key;
        key.generator = j.at("task").value("generator", "?");
        key.p = j.at("task").value("p", 0.0);
        CellRecord r;
        r.method = j.at("method").get<std::string>();
        r.candidate_id = j.at("candidate_id").get<std::string>();
        r.hyperparams = j.value("hyperparams", "");
        r.seed = j.value("seed", uint64_t{0});
        const auto& m = j.at("metrics");
        r.val_acc = m.value("val_acc", 0.0);
        r.val_wga = m.value("val_wga", 0.0);
        r.test_wga = m.value("test_wga", 0.0);
        r.test_acc = m.value("test_acc_weighted", 0.0);
        if (j.contains("rebalance")) {
            r.has_rebalance = true;
            r.bc_before = j["rebalance"].value("bc_fraction_before", 0.0);
            r.bc_after = j["rebalance"].value("bc_fraction_after", 0.0);
            r.identified = j["rebalance"].value("identified_fraction", 0.0);
        }
        r.wall_seconds = j.value("wall_seconds", 0.0);
        by_task[key].push_back(std::move(r));
    }
    if (by_task.empty()) fail("no successful cells under " + results_dir);

    std::ostringstream text, csv, sweep;
    csv << "generator,p,method,selected_candidate,wga_mean,wga_std,acc_mean,acc_std,"
           "pou,pou_unfiltered,mms,bc_before,bc_after,identified,seeds,candidates,"
           "wall_total_s\n";
    sweep << "generator,p,method,acc_mean,acc_std,wga_mean,wga_std\n";

    for (const auto& [task, records] : by_task) {
        text << "== " << task.generator << " p=" << fmt(task.p, 3) << " ==\n";
        text << "method  candidate            WGA             mean acc        PoU     "
                "MMS     cells  wall_s\n";

        // preserve first-seen method and candidate order
        std::vector<std::string> methods;
        for (const auto& r : records) {
            if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
                methods.push_back(r.method);
            }
        }
        for (const auto& method : methods) {
            std::vector<std::string> cand_order;
            std::map<std::string, std::vector<const CellRecord*>> by_cand;
            double wall_total = 0.0;
            size_t cell_count = 0;
            for (const auto& r : records) {
                if (r.method != method) continue;
                if (!by_cand.count(r.candidate_id)) cand_order.push_back(r.candidate_id);
                by_cand[r.candidate_id].push_back(&r);
                wall_total += r.wall_seconds;
                ++cell_count;
            }

            GridResult grid;
            for (const auto& cid : cand_order) {
                GridCandidate row;
                row.method = method;
                row.candidate_id = cid;
                const auto& cells = by_cand[cid];
                row.hyperparams = cells.front()->hyperparams;
                row.seed_count = static_cast<int>(cells.size());
                for (const auto* c : cells) {
                    row.val_acc_mean += c->val_acc;
                    row.val_wga_mean += c->val_wga;
                    row.test_wga_mean += c->test_wga;
                    row.test_acc_mean += c->test_acc;
                }
                row.val_acc_mean /= row.seed_count;
                row.val_wga_mean /= row.seed_count;
                row.test_wga_mean /= row.seed_count;
                row.test_acc_mean /= row.seed_count;
                grid.rows.push_back(std::move(row));
            }

            // selection: best mean validation accuracy; gdro by validation WGA
            const GridCandidate* selected = &grid.rows.front();
            for (const auto& row : grid.rows) {
                const double lhs = method == "gdro" ? row.val_wga_mean : row.val_acc_mean;
                const double rhs = method == "gdro" ? selected->val_wga_mean
                                                    : selected->val_acc_mean;
                if (lhs > rhs) selected = &row;
            }

            std::vector<double> wgas, accs, bc_b, bc_a, ident;
            for (const auto* c : by_cand[selected->candidate_id]) {
                wgas.push_back(c->test_wga);
                accs.push_back(c->test_acc);
                if (c->has_rebalance) {
                    bc_b.push_back(c->bc_before);
                    bc_a.push_back(c->bc_after);
                    ident.push_back(c->identified);
                }
            }
            const auto [wga_m, wga_s] = mean_std(wgas);
            const auto [acc_m, acc_s] = mean_std(accs);

            double pou_v = 1.0, pou_u = 1.0, mms_v = 0.0;
            try {
                pou_v = pou(grid);
            } catch (const std::exception&) {
                pou_v = std::numeric_limits<double>::quiet_NaN();
            }
            try {
                pou_u = pou_unfiltered(grid);
            } catch (const std::exception&) {
                pou_u = std::numeric_limits<double>::quiet_NaN();
            }
            mms_v = mms(grid);

            char line[256];
            std::snprintf(line, sizeof(line),
                          "%-7s %-20s %s+-%s  %s+-%s  %s  %s  %-6zu %.1f\n",
                          method.c_str(), selected->candidate_id.c_str(),
                          fmt(wga_m).c_str(), fmt(wga_s).c_str(), fmt(acc_m).c_str(),
                          fmt(acc_s).c_str(), fmt(pou_v).c_str(), fmt(mms_v).c_str(),
                          cell_count, wall_total);
            text << line;
            if (!bc_b.empty()) {
                const auto [bb, _b] = mean_std(bc_b);
                const auto [ba, _a] = mean_std(bc_a);
                const auto [idf, _i] = mean_std(ident);
                text << "        rebalance: bc_before=" << fmt(bb)
                     << " bc_after=" << fmt(ba) << " identified=" << fmt(idf) << "\n";
                csv << task.generator << ',' << fmt(task.p, 6) << ',' << method << ','
                    << selected->candidate_id << ',' << fmt(wga_m, 6) << ','
                    << fmt(wga_s, 6) << ',' << fmt(acc_m, 6) << ',' << fmt(acc_s, 6)
                    << ',' << fmt(pou_v, 6) << ',' << fmt(pou_u, 6) << ','
                    << fmt(mms_v, 6) << ',' << fmt(bb, 6) << ',' << fmt(ba, 6) << ','
                    << fmt(idf, 6) << ',' << wgas.size() << ',' << grid.rows.size()
                    << ',' << fmt(wall_total, 3) << "\n";
            } else {
                csv << task.generator << ',' << fmt(task.p, 6) << ',' << method << ','
                    << selected->candidate_id << ',' << fmt(wga_m, 6) << ','
                    << fmt(wga_s, 6) << ',' << fmt(acc_m, 6) << ',' << fmt(acc_s, 6)
                    << ',' << fmt(pou_v, 6) << ',' << fmt(pou_u, 6) << ','
                    << fmt(mms_v, 6) << ",,,," << wgas.size() << ',' << grid.rows.size()
                    << ',' << fmt(wall_total, 3) << "\n";
            }
            sweep << task.generator << ',' << fmt(task.p, 6) << ',' << method << ','
                  << fmt(acc_m, 6) << ',' << fmt(acc_s, 6) << ',' << fmt(wga_m, 6)
                  << ',' << fmt(wga_s, 6) << "\n";
        }
        text << "\n";
    }

    ReportOutput out;
    out.text = text.str();
    out.csv = csv.str();
    out.sweep_csv = sweep.str();
    return out;
}

ReportOutput write_report(const std::string& results_dir) {
    ReportOutput out = render_report(results_dir);
    auto dump = [&](const std::string& name, const std::string& content) {
        std::ofstream f(results_dir + "/" + name);
        if (!f) fail("cannot write " + name + " in " + results_dir);
        f << content;
    };
    dump("report.txt", out.text);
    dump("report.csv", out.csv);
    dump("sweep.csv", out.sweep_csv);
    return out;
}

}  // namespace tab
