#ifndef STOPCAL_MONITOR_HPP
#define STOPCAL_MONITOR_HPP

#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "stopcal/probe.hpp"
#include "stopcal/risk.hpp"

namespace stopcal {

struct StopDecision {
    enum class Action { continue_generation, stop, at_budget };

    std::size_t step = 0;  // 1-based
    double raw_score = 0.0;
    double smoothed_score = 0.0;
    std::optional<double> threshold;
    Action action = Action::continue_generation;
};

const char* action_name(StopDecision::Action a);

// Online decision engine over one stream of step embeddings. Reproduces
// offline stopping exactly: the smoothed score is the same causal window
// mean computed by smooth_scores, in the same summation order.
class MonitorState {
public:
    MonitorState(CombinedScorer scorer, PcaModel pca, std::optional<double> lambda,
                 std::optional<std::int64_t> token_ceiling = std::nullopt);

    // Feeds the next step. Emits stop when the smoothed score reaches the
    // threshold, at_budget when step budget_steps (or the token ceiling) is
    // reached, otherwise continue. Feeding after a terminal decision throws.
    StopDecision feed_step(std::span<const float> embedding, std::size_t budget_steps,
                           std::int64_t token_count = 0);

    bool stopped() const { return stopped_; }
    std::optional<std::size_t> stop_step() const { return stop_step_; }
    std::size_t steps_seen() const { return step_count_; }
    const CombinedScorer& scorer() const { return scorer_; }
    const PcaModel& pca() const { return pca_; }

private:
    CombinedScorer scorer_;
    PcaModel pca_;
    std::optional<double> lambda_;
    std::optional<std::int64_t> token_ceiling_;
    std::vector<double> window_;  // last <= w raw scores, chronological
    std::size_t step_count_ = 0;
    std::int64_t tokens_seen_ = 0;
    bool stopped_ = false;
    std::optional<std::size_t> stop_step_;
};

struct StreamStep {
    std::vector<float> embedding;
    std::int64_t token_count = 0;
};

using StepSource = std::function<std::optional<StreamStep>()>;

// Drives feed_step until a terminal decision. A source that runs out before
// budget_steps has its last step treated as the budget point, so every finite
// stream terminates with exactly one terminal decision.
std::pair<std::size_t, std::vector<StopDecision>> run_stream(MonitorState& state,
                                                             const StepSource& source,
                                                             std::size_t budget_steps);

}  // namespace stopcal

#endif
