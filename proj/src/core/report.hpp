#pragma once

#include <string>

namespace tab {

struct ReportOutput {
    std::string text;       // human-readable tables
    std::string csv;        // per-method summary rows
    std::string sweep_csv;  // accuracy-vs-p rows for plotting
};

// Aggregates every cell.json under results_dir (recursively, so a directory
// of sweep runs works too). Per task and method: the candidate with the best
// mean validation accuracy (validation WGA for gdro) is selected; WGA and
// accuracy are reported as mean +/- std over that candidate's seeds, next to
// PoU and MMS over the method's whole grid. Deterministic for fixed inputs.
ReportOutput render_report(const std::string& results_dir);

// Renders and writes report.txt, report.csv, and sweep.csv into results_dir.
ReportOutput write_report(const std::string& results_dir);

}  // namespace tab
