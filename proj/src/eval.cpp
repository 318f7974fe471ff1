#include "stopcal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace stopcal {

namespace {

bool label_at(const Trace& trace, std::size_t step_1based, ScoreMode mode) {
    const ProbeKind kind = outcome_label_kind(mode);
    const std::optional<bool> label = label_for(trace.labels[step_1based - 1], kind);
    if (!label)
        throw Error(std::string("missing ") + probe_kind_name(kind) + " label at id=" + trace.id +
                    " step=" + std::to_string(step_1based - 1));
    return *label;
}

std::int64_t tokens_through(const Trace& trace, std::size_t step_1based) {
    std::int64_t acc = 0;
    for (std::size_t i = 0; i < step_1based; ++i) acc += trace.steps[i].token_count;
    return acc;
}

const char* method_for(ScoreMode mode) {
    switch (mode) {
        case ScoreMode::correct: return "supervised";
        case ScoreMode::consistent: return "consistent";
        case ScoreMode::novel_leaf: return "novel_leaf";
    }
    return "consistent";
}

}  // namespace

std::vector<BudgetCurvePoint> crop_baseline(const TraceSet& test, std::span<const std::int64_t> budgets,
                                            ScoreMode outcome_mode) {
    if (budgets.empty()) throw Error("crop_baseline: no budgets");
    if (test.traces.empty()) throw Error("crop_baseline: empty test set");

    std::vector<BudgetCurvePoint> points;
    points.reserve(budgets.size());
    for (std::int64_t budget : budgets) {
        BudgetCurvePoint pt;
        pt.method = "crop";
        pt.budget = budget;
        pt.n_test = test.traces.size();
        double tokens = 0.0, steps = 0.0, outcome = 0.0;
        for (const Trace& t : test.traces) {
            std::size_t stop = 1;
            std::int64_t acc = t.steps[0].token_count;
            for (std::size_t i = 1; i < t.steps.size(); ++i) {
                const std::int64_t next = acc + t.steps[i].token_count;
                if (next > budget) break;
                acc = next;
                stop = i + 1;
            }
            tokens += static_cast<double>(acc);
            steps += static_cast<double>(stop);
            outcome += label_at(t, stop, outcome_mode) ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(test.traces.size());
        pt.mean_tokens = tokens / n;
        pt.mean_steps = steps / n;
        pt.outcome_fraction = outcome / n;
        points.push_back(std::move(pt));
    }
    return points;
}

std::vector<BudgetCurvePoint> efficiency_curve(const TraceSet& test, const CombinedScorer& scorer,
                                               const PcaModel& pca,
                                               std::span<const CalibrationResult> calibrations) {
    if (test.traces.empty()) throw Error("efficiency_curve: empty test set");
    for (const CalibrationResult& c : calibrations)
        if (c.spec.mode != scorer.mode)
            throw Error("efficiency_curve: calibration mode does not match scorer mode");

    std::vector<std::vector<double>> scores;
    scores.reserve(test.traces.size());
    for (const Trace& t : test.traces) scores.push_back(score_trace(scorer, t, pca));

    std::vector<BudgetCurvePoint> points;
    points.reserve(calibrations.size());
    for (const CalibrationResult& cal : calibrations) {
        BudgetCurvePoint pt;
        pt.method = method_for(scorer.mode);
        pt.epsilon = cal.spec.epsilon;
        pt.n_test = test.traces.size();
        double tokens = 0.0, steps = 0.0, outcome = 0.0;
        for (std::size_t i = 0; i < test.traces.size(); ++i) {
            const Trace& t = test.traces[i];
            const std::size_t stop = stop_index(std::span<const double>(scores[i]), cal.selected_lambda);
            tokens += static_cast<double>(tokens_through(t, stop));
            steps += static_cast<double>(stop);
            outcome += label_at(t, stop, scorer.mode) ? 1.0 : 0.0;
        }
        const double n = static_cast<double>(test.traces.size());
        pt.mean_tokens = tokens / n;
        pt.mean_steps = steps / n;
        pt.outcome_fraction = outcome / n;
        points.push_back(std::move(pt));
    }
    return points;
}

std::vector<CalibrationReportRow> calibration_report(const TraceSet& test, const CombinedScorer& scorer,
                                                     const PcaModel& pca,
                                                     std::span<const CalibrationResult> calibrations) {
    if (test.traces.empty()) throw Error("calibration_report: empty test set");

    std::vector<std::vector<double>> scores;
    scores.reserve(test.traces.size());
    for (const Trace& t : test.traces) scores.push_back(score_trace(scorer, t, pca));

    double full_tokens = 0.0;
    for (const Trace& t : test.traces) full_tokens += static_cast<double>(t.total_tokens);
    full_tokens /= static_cast<double>(test.traces.size());

    std::vector<CalibrationReportRow> rows;
    rows.reserve(calibrations.size());
    for (const CalibrationResult& cal : calibrations) {
        CalibrationReportRow row;
        row.epsilon = cal.spec.epsilon;
        row.selected_lambda = cal.selected_lambda;
        double steps = 0.0, tokens = 0.0, bad = 0.0;
        for (std::size_t i = 0; i < test.traces.size(); ++i) {
            const Trace& t = test.traces[i];
            const std::size_t stop = stop_index(std::span<const double>(scores[i]), cal.selected_lambda);
            steps += static_cast<double>(stop);
            tokens += static_cast<double>(tokens_through(t, stop));
            bad += label_at(t, stop, scorer.mode) ? 0.0 : 1.0;
        }
        const double n = static_cast<double>(test.traces.size());
        row.mean_stop_step = steps / n;
        row.realized_risk = bad / n;
        row.token_savings = full_tokens > 0.0 ? 1.0 - (tokens / n) / full_tokens : 0.0;
        rows.push_back(row);
    }
    std::sort(rows.begin(), rows.end(),
              [](const CalibrationReportRow& a, const CalibrationReportRow& b) { return a.epsilon < b.epsilon; });
    return rows;
}

std::string curve_to_csv(std::span<const BudgetCurvePoint> points) {
    std::string out = "method,epsilon,budget_tokens,mean_tokens,mean_steps,outcome_fraction,n_test\n";
    char line[256];
    for (const BudgetCurvePoint& p : points) {
        char eps[32], budget[32];
        if (p.epsilon) std::snprintf(eps, sizeof eps, "%.6f", *p.epsilon);
        else std::snprintf(eps, sizeof eps, "NONE");
        if (p.budget) std::snprintf(budget, sizeof budget, "%lld", static_cast<long long>(*p.budget));
        else std::snprintf(budget, sizeof budget, "NONE");
        std::snprintf(line, sizeof line, "%s,%s,%s,%.6f,%.6f,%.6f,%zu\n", p.method.c_str(), eps, budget,
                      p.mean_tokens, p.mean_steps, p.outcome_fraction, p.n_test);
        out += line;
    }
    return out;
}

std::string report_to_csv(std::span<const CalibrationReportRow> rows) {
    std::string out = "epsilon,realized_risk,selected_lambda,mean_stop_step,token_savings\n";
    char line[256];
    for (const CalibrationReportRow& r : rows) {
        char lambda[32];
        if (r.selected_lambda) std::snprintf(lambda, sizeof lambda, "%.6f", *r.selected_lambda);
        else std::snprintf(lambda, sizeof lambda, "NONE");
        std::snprintf(line, sizeof line, "%.6f,%.6f,%s,%.6f,%.6f\n", r.epsilon, r.realized_risk, lambda,
                      r.mean_stop_step, r.token_savings);
        out += line;
    }
    return out;
}

}  // namespace stopcal
