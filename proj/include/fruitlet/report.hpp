#pragma once

#include <ostream>
#include <span>

#include "fruitlet/metrics.hpp"
#include "json.hpp"

namespace fruitlet {

// Full report including per-pair match dumps.
nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

// Columns method, day_gap, precision, recall, f1, n_pairs. One row per day
// gap, then an "all" row per report.
void write_report_csv(std::ostream& out, std::span<const EvalReport> reports);

// One row per report with macro and micro metrics.
void write_comparison_table(std::ostream& out, std::span<const EvalReport> reports);

// Wide format: one row per day gap, one F1 column per report; empty cells
// where a report has no pair at that gap.
void write_day_gap_curves(std::ostream& out, std::span<const EvalReport> reports);

}  // namespace fruitlet
