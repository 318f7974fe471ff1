#include "stopcal/monitor.hpp"

#include <algorithm>

namespace stopcal {

const char* action_name(StopDecision::Action a) {
    switch (a) {
        case StopDecision::Action::continue_generation: return "continue";
        case StopDecision::Action::stop: return "stop";
        case StopDecision::Action::at_budget: return "at_budget";
    }
    return "continue";
}

MonitorState::MonitorState(CombinedScorer scorer, PcaModel pca, std::optional<double> lambda,
                           std::optional<std::int64_t> token_ceiling)
    : scorer_(std::move(scorer)), pca_(std::move(pca)), lambda_(lambda), token_ceiling_(token_ceiling) {
    scorer_.validate();
    window_.reserve(scorer_.smoothing.window);
}

StopDecision MonitorState::feed_step(std::span<const float> embedding, std::size_t budget_steps,
                                     std::int64_t token_count) {
    if (stopped_) throw Error("monitor already terminated");
    if (budget_steps < 1) throw Error("monitor: budget must be >= 1");

    ++step_count_;
    tokens_seen_ += token_count;

    const auto projected = project(pca_, embedding);
    const double raw = raw_score_step(scorer_, projected);
    if (window_.size() == scorer_.smoothing.window) window_.erase(window_.begin());
    window_.push_back(raw);
    double acc = 0.0;
    for (double s : window_) acc += s;  // chronological, same order as smooth_scores
    const double smoothed = acc / static_cast<double>(window_.size());

    StopDecision decision;
    decision.step = step_count_;
    decision.raw_score = raw;
    decision.smoothed_score = smoothed;
    decision.threshold = lambda_;
    if (lambda_ && smoothed >= *lambda_) {
        decision.action = StopDecision::Action::stop;
    } else if (step_count_ >= budget_steps ||
               (token_ceiling_ && tokens_seen_ >= *token_ceiling_)) {
        decision.action = StopDecision::Action::at_budget;
    } else {
        decision.action = StopDecision::Action::continue_generation;
    }
    if (decision.action != StopDecision::Action::continue_generation) {
        stopped_ = true;
        stop_step_ = step_count_;
    }
    return decision;
}

std::pair<std::size_t, std::vector<StopDecision>> run_stream(MonitorState& state,
                                                             const StepSource& source,
                                                             std::size_t budget_steps) {
    std::optional<StreamStep> next = source();
    if (!next) throw Error("empty stream");

    std::vector<StopDecision> decisions;
    while (next) {
        StreamStep cur = std::move(*next);
        next = source();
        // A stream that ends here makes the current step the effective budget.
        const std::size_t budget = next ? budget_steps : std::min(budget_steps, state.steps_seen() + 1);
        const StopDecision d = state.feed_step(cur.embedding, budget, cur.token_count);
        decisions.push_back(d);
        if (d.action != StopDecision::Action::continue_generation) break;
    }
    return {state.stop_step().value(), std::move(decisions)};
}

}  // namespace stopcal
