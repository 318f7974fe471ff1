#ifndef STOPCAL_EVAL_HPP
#define STOPCAL_EVAL_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stopcal/risk.hpp"

namespace stopcal {

struct BudgetCurvePoint {
    std::string method;  // "crop", "supervised", "consistent", "novel_leaf"
    std::optional<double> epsilon;          // empty for crop rows
    std::optional<std::int64_t> budget;     // token budget, crop rows only
    double mean_tokens = 0.0;
    double mean_steps = 0.0;
    double outcome_fraction = 0.0;  // accuracy or consistency at the stop step
    std::size_t n_test = 0;
};

// Fixed token budgets: each trace stops at the last step whose cumulative
// token count fits the budget (minimum one step); the outcome is that step's
// label for the given mode.
std::vector<BudgetCurvePoint> crop_baseline(const TraceSet& test, std::span<const std::int64_t> budgets,
                                            ScoreMode outcome_mode);

// One point per calibration result: mean stop tokens/steps and realized
// outcome under that result's selected threshold.
std::vector<BudgetCurvePoint> efficiency_curve(const TraceSet& test, const CombinedScorer& scorer,
                                               const PcaModel& pca,
                                               std::span<const CalibrationResult> calibrations);

struct CalibrationReportRow {
    double epsilon = 0.0;
    double realized_risk = 0.0;  // hard-indicator risk on the test set at the selected threshold
    std::optional<double> selected_lambda;
    double mean_stop_step = 0.0;
    double token_savings = 0.0;  // 1 - stop tokens / full-budget tokens
};

std::vector<CalibrationReportRow> calibration_report(const TraceSet& test, const CombinedScorer& scorer,
                                                     const PcaModel& pca,
                                                     std::span<const CalibrationResult> calibrations);

std::string curve_to_csv(std::span<const BudgetCurvePoint> points);
std::string report_to_csv(std::span<const CalibrationReportRow> rows);

}  // namespace stopcal

#endif
