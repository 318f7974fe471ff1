#include "stopcal/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

namespace stopcal {

const char* loss_form_name(LossForm f) {
    return f == LossForm::paper_soft ? "paper_soft" : "hard_indicator";
}

LossForm loss_form_from(std::string_view name) {
    if (name == "paper_soft") return LossForm::paper_soft;
    if (name == "hard_indicator") return LossForm::hard_indicator;
    throw Error("unknown loss form: " + std::string(name));
}

void RiskSpec::validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw Error("risk spec: delta must be in (0,1)");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error("risk spec: epsilon must be in (0,1)");
}

LambdaGrid LambdaGrid::default_grid() {
    LambdaGrid g;
    g.values.reserve(99);
    for (int i = 99; i >= 1; --i) g.values.push_back(static_cast<double>(i) / 100.0);
    return g;
}

void LambdaGrid::validate() const {
    if (values.empty()) throw Error("lambda grid: empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(values[i] >= 0.0 && values[i] <= 1.0)) throw Error("lambda grid: value outside [0,1]");
        if (i > 0 && !(values[i] < values[i - 1])) throw Error("lambda grid: not strictly descending");
    }
}

std::size_t stop_index(std::span<const double> scores, double lambda) {
    if (scores.empty()) throw Error("stop_index: empty scores");
    for (std::size_t t = 0; t < scores.size(); ++t)
        if (scores[t] >= lambda) return t + 1;
    return scores.size();
}

std::size_t stop_index(std::span<const double> scores, std::optional<double> lambda) {
    if (scores.empty()) throw Error("stop_index: empty scores");
    if (!lambda) return scores.size();
    return stop_index(scores, *lambda);
}

double loss_at_stop(const Trace& trace, std::span<const double> scores,
                    std::optional<double> lambda, const RiskSpec& spec) {
    if (scores.size() != trace.steps.size()) throw Error("loss_at_stop: score/step length mismatch");
    const std::size_t t = stop_index(scores, lambda);
    const std::size_t idx = t - 1;
    const ProbeKind label_kind = outcome_label_kind(spec.mode);
    const std::optional<bool> label = label_for(trace.labels[idx], label_kind);
    if (!label)
        throw Error(std::string("missing ") + probe_kind_name(label_kind) + " label at id=" + trace.id +
                    " step=" + std::to_string(idx) + " (stop index " + std::to_string(t) + ")");
    if (spec.loss_form == LossForm::hard_indicator) return *label ? 0.0 : 1.0;
    const double f = scores[idx];
    return *label ? 1.0 - f : f;
}

double empirical_risk(const TraceSet& cal, const CombinedScorer& scorer, const PcaModel& pca,
                      std::optional<double> lambda, const RiskSpec& spec) {
    if (cal.traces.empty()) throw Error("empirical_risk: empty calibration set");
    double sum = 0.0;
    for (const Trace& t : cal.traces) {
        const auto scores = score_trace(scorer, t, pca);
        sum += loss_at_stop(t, scores, lambda, spec);
    }
    return sum / static_cast<double>(cal.traces.size());
}

double binom_tail_pvalue(std::int64_t n, double rate, std::int64_t k) {
    if (n < 1) throw Error("binom_tail_pvalue: n must be >= 1");
    if (k < 0 || k > n) throw Error("binom_tail_pvalue: achieved count out of range");
    if (!(rate > 0.0 && rate < 1.0)) throw Error("binom_tail_pvalue: rate must be in (0,1)");
    if (k == n) return 1.0;

    const double log_q = std::log1p(-rate);
    if (static_cast<double>(n) * log_q > -700.0) {
        // Multiplicative recurrence over the pmf; exact for dyadic rates on
        // small n and stable whenever the first term does not underflow.
        double term = std::pow(1.0 - rate, static_cast<double>(n));
        double sum = term;
        const double ratio = rate / (1.0 - rate);
        for (std::int64_t i = 1; i <= k; ++i) {
            term *= ratio * static_cast<double>(n - i + 1) / static_cast<double>(i);
            sum += term;
        }
        return std::min(sum, 1.0);
    }

    // Log-space accumulation for large n where (1-rate)^n underflows.
    const double log_p = std::log(rate);
    const double lg_n1 = std::lgamma(static_cast<double>(n) + 1.0);
    double max_log = -std::numeric_limits<double>::infinity();
    std::vector<double> logs(static_cast<std::size_t>(k) + 1);
    for (std::int64_t i = 0; i <= k; ++i) {
        const double li = lg_n1 - std::lgamma(static_cast<double>(i) + 1.0) -
                          std::lgamma(static_cast<double>(n - i) + 1.0) +
                          static_cast<double>(i) * log_p + static_cast<double>(n - i) * log_q;
        logs[static_cast<std::size_t>(i)] = li;
        max_log = std::max(max_log, li);
    }
    double acc = 0.0;
    for (double li : logs) acc += std::exp(li - max_log);
    return std::min(std::exp(max_log) * acc, 1.0);
}

std::optional<std::size_t> fixed_sequence_select(std::span<const double> pvalues, double epsilon) {
    std::optional<std::size_t> selected;
    for (std::size_t j = 0; j < pvalues.size(); ++j) {
        if (pvalues[j] > epsilon) break;
        selected = j;
    }
    return selected;
}

namespace {

// ceil(sum) with a guard against float noise pushing an integral sum up.
std::int64_t achieved_count(double loss_sum, std::int64_t n) {
    std::int64_t k = static_cast<std::int64_t>(std::ceil(loss_sum - 1e-9));
    return std::clamp<std::int64_t>(k, 0, n);
}

}  // namespace

CalibrationResult calibrate_fixed_sequence_scored(std::span<const Trace> traces,
                                                  std::span<const std::vector<double>> scores,
                                                  const LambdaGrid& grid, const RiskSpec& spec,
                                                  const CalibrateOptions& opts) {
    spec.validate();
    grid.validate();
    if (traces.empty()) throw Error("calibrate: empty calibration set");
    if (traces.size() != scores.size()) throw Error("calibrate: trace/score count mismatch");

    const std::int64_t n = static_cast<std::int64_t>(traces.size());
    const double rate = opts.literal_epsilon_binomial ? spec.epsilon : spec.delta;

    CalibrationResult result;
    result.spec = spec;
    result.grid = grid;
    result.n = traces.size();

    bool all_rejected = true;
    for (std::size_t j = 0; j < grid.values.size(); ++j) {
        const double lambda = grid.values[j];
        double loss_sum = 0.0;
        std::size_t early = 0;
        for (std::size_t i = 0; i < traces.size(); ++i) {
            loss_sum += loss_at_stop(traces[i], scores[i], lambda, spec);
            if (stop_index(std::span<const double>(scores[i]), lambda) < scores[i].size()) ++early;
        }
        result.empirical_risk.push_back(loss_sum / static_cast<double>(n));
        result.stop_fraction.push_back(static_cast<double>(early) / static_cast<double>(n));
        const double p = binom_tail_pvalue(n, rate, achieved_count(loss_sum, n));
        result.p_values.push_back(p);
        if (p > spec.epsilon) {
            all_rejected = false;
            if (j > 0) result.selected_lambda = grid.values[j - 1];
            break;
        }
    }
    if (all_rejected) result.selected_lambda = grid.values.back();
    return result;
}

CalibrationResult calibrate_fixed_sequence(const TraceSet& cal, const CombinedScorer& scorer,
                                           const PcaModel& pca, const LambdaGrid& grid,
                                           const RiskSpec& spec, const CalibrateOptions& opts) {
    std::vector<std::vector<double>> scores;
    scores.reserve(cal.traces.size());
    for (const Trace& t : cal.traces) scores.push_back(score_trace(scorer, t, pca));
    return calibrate_fixed_sequence_scored(cal.traces, scores, grid, spec, opts);
}

std::string calibration_to_json_string(const CalibrationResult& result) {
    nlohmann::json j = {
        {"spec",
         {{"mode", score_mode_name(result.spec.mode)},
          {"delta", result.spec.delta},
          {"epsilon", result.spec.epsilon},
          {"loss_form", loss_form_name(result.spec.loss_form)}}},
        {"grid", result.grid.values},
        {"empirical_risk", result.empirical_risk},
        {"p_values", result.p_values},
        {"stop_fraction", result.stop_fraction},
        {"selected_lambda",
         result.selected_lambda ? nlohmann::json(*result.selected_lambda) : nlohmann::json(nullptr)},
        {"n", result.n},
        {"probe_hashes", result.probe_hashes},
    };
    return j.dump(2) + "\n";
}

CalibrationResult calibration_from_json_string(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed calibration artifact: ") + e.what());
    }
    CalibrationResult result;
    try {
        const auto& s = j.at("spec");
        result.spec.mode = score_mode_from(s.at("mode").get<std::string>());
        result.spec.delta = s.at("delta").get<double>();
        result.spec.epsilon = s.at("epsilon").get<double>();
        result.spec.loss_form = loss_form_from(s.at("loss_form").get<std::string>());
        result.grid.values = j.at("grid").get<std::vector<double>>();
        result.empirical_risk = j.at("empirical_risk").get<std::vector<double>>();
        result.p_values = j.at("p_values").get<std::vector<double>>();
        result.stop_fraction = j.value("stop_fraction", std::vector<double>());
        if (!j.at("selected_lambda").is_null())
            result.selected_lambda = j["selected_lambda"].get<double>();
        result.n = j.at("n").get<std::size_t>();
        if (j.contains("probe_hashes"))
            result.probe_hashes = j["probe_hashes"].get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed calibration artifact: ") + e.what());
    }
    return result;
}

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path) {
    write_file(path.string(), calibration_to_json_string(result));
}

CalibrationResult load_calibration(const std::filesystem::path& path) {
    return calibration_from_json_string(read_file(path.string()));
}

}  // namespace stopcal
