#ifndef STOPCAL_RISK_HPP
#define STOPCAL_RISK_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "stopcal/probe.hpp"
#include "stopcal/trace.hpp"

namespace stopcal {

enum class LossForm { paper_soft, hard_indicator };

const char* loss_form_name(LossForm f);
LossForm loss_form_from(std::string_view name);

struct RiskSpec {
    ScoreMode mode = ScoreMode::consistent;
    double delta = 0.1;    // risk tolerance on the expected loss
    double epsilon = 0.1;  // allowed probability of exceeding the tolerance
    LossForm loss_form = LossForm::paper_soft;

    void validate() const;
};

// Strictly descending thresholds in [0, 1]; larger values are more permissive
// (the monitor thinks longer).
struct LambdaGrid {
    std::vector<double> values;

    static LambdaGrid default_grid();  // 0.99 down to 0.01, step 0.01
    void validate() const;
};

struct CalibrationResult {
    RiskSpec spec;
    LambdaGrid grid;
    // Per tested grid value, in walk order (a prefix of the grid).
    std::vector<double> empirical_risk;
    std::vector<double> p_values;
    std::vector<double> stop_fraction;  // fraction of traces stopping before their budget
    std::optional<double> selected_lambda;  // nullopt: no valid threshold, never exit early
    std::size_t n = 0;
    std::map<std::string, std::string> probe_hashes;  // probe kind -> git blob sha1
};

// First step (1-based) whose smoothed score reaches lambda; T when none does.
std::size_t stop_index(std::span<const double> scores, double lambda);

// As above with the no-threshold sentinel: nullopt runs to full budget.
std::size_t stop_index(std::span<const double> scores, std::optional<double> lambda);

// Loss of stopping trace at stop_index(scores, lambda). paper_soft mixes the
// score with the label (label true -> 1 - f, false -> f); hard_indicator is
// 1{label false}. Modes consistent and novel_leaf are judged against the
// consistency label, mode correct against the correctness label.
double loss_at_stop(const Trace& trace, std::span<const double> scores,
                    std::optional<double> lambda, const RiskSpec& spec);

double empirical_risk(const TraceSet& cal, const CombinedScorer& scorer, const PcaModel& pca,
                      std::optional<double> lambda, const RiskSpec& spec);

// Exact binomial CDF P(Binom(n, rate) <= k).
double binom_tail_pvalue(std::int64_t n, double rate, std::int64_t k);

// Fixed-sequence rule on a precomputed p-value sequence: walk in order while
// p <= epsilon; return the index of the last rejected hypothesis, nullopt if
// the first test already fails.
std::optional<std::size_t> fixed_sequence_select(std::span<const double> pvalues, double epsilon);

struct CalibrateOptions {
    // Uses epsilon instead of delta as the binomial parameter (the literal
    // reading of the p-value formula). Off by default.
    bool literal_epsilon_binomial = false;
};

CalibrationResult calibrate_fixed_sequence(const TraceSet& cal, const CombinedScorer& scorer,
                                           const PcaModel& pca, const LambdaGrid& grid,
                                           const RiskSpec& spec, const CalibrateOptions& opts = {});

// Variant over already-scored traces (smoothed score vector per trace),
// shared by the coverage experiment where scores are reused across runs.
CalibrationResult calibrate_fixed_sequence_scored(std::span<const Trace> traces,
                                                  std::span<const std::vector<double>> scores,
                                                  const LambdaGrid& grid, const RiskSpec& spec,
                                                  const CalibrateOptions& opts = {});

std::string calibration_to_json_string(const CalibrationResult& result);
CalibrationResult calibration_from_json_string(std::string_view text);
void save_calibration(const CalibrationResult& result, const std::filesystem::path& path);
CalibrationResult load_calibration(const std::filesystem::path& path);

}  // namespace stopcal

#endif
