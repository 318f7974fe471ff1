#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stopcal/monitor.hpp"
#include "stopcal/simulator.hpp"
#include "test_util.hpp"

using namespace stopcal;
using stopcal::test::identity_pca;
using stopcal::test::make_probe;

namespace {

// Scorer whose raw score is sigmoid(x) over a 1-dim embedding.
CombinedScorer unit_scorer(std::size_t window) {
    CombinedScorer scorer;
    scorer.mode = ScoreMode::consistent;
    scorer.smoothing.window = window;
    scorer.probes.push_back(make_probe(ProbeKind::consistent, {1.0}, 0.0));
    return scorer;
}

float logit_f(double p) { return static_cast<float>(std::log(p / (1.0 - p))); }

StepSource vector_source(std::vector<StreamStep> steps) {
    auto idx = std::make_shared<std::size_t>(0);
    auto data = std::make_shared<std::vector<StreamStep>>(std::move(steps));
    return [idx, data]() -> std::optional<StreamStep> {
        if (*idx >= data->size()) return std::nullopt;
        return (*data)[(*idx)++];
    };
}

}  // namespace

TEST_CASE("no threshold means continue until the budget") {
    MonitorState state(unit_scorer(10), identity_pca(1), std::nullopt);
    const std::size_t T = 7;
    for (std::size_t t = 1; t <= T; ++t) {
        const std::vector<float> emb = {5.0f};  // high score, but no threshold to cross
        const StopDecision d = state.feed_step(emb, T);
        CHECK(d.step == t);
        if (t < T) CHECK(d.action == StopDecision::Action::continue_generation);
        else CHECK(d.action == StopDecision::Action::at_budget);
    }
    CHECK(state.stopped());
    CHECK(*state.stop_step() == T);
}

TEST_CASE("stops when the smoothed score crosses the threshold") {
    MonitorState state(unit_scorer(2), identity_pca(1), 0.5);
    // Raw scores 0.1 then 0.95: smoothed 0.1, then 0.525 >= 0.5.
    std::vector<float> e1 = {logit_f(0.1)}, e2 = {logit_f(0.95)};
    // Embeddings are 32-bit floats, so the logits carry float precision.
    const StopDecision d1 = state.feed_step(e1, 10);
    CHECK(d1.action == StopDecision::Action::continue_generation);
    CHECK(d1.smoothed_score == doctest::Approx(0.1).epsilon(1e-6));
    const StopDecision d2 = state.feed_step(e2, 10);
    CHECK(d2.action == StopDecision::Action::stop);
    CHECK(d2.smoothed_score == doctest::Approx(0.525).epsilon(1e-6));
    CHECK(*state.stop_step() == 2);
}

TEST_CASE("feeding after a terminal decision throws") {
    MonitorState state(unit_scorer(1), identity_pca(1), 0.0);
    const std::vector<float> emb = {0.0f};
    state.feed_step(emb, 5);
    CHECK_THROWS_WITH_AS(state.feed_step(emb, 5), "monitor already terminated", Error);
}

TEST_CASE("decision invariant: stop exactly when smoothed >= threshold") {
    Rng rng(8);
    MonitorState state(unit_scorer(3), identity_pca(1), 0.6);
    for (int t = 0; t < 50 && !state.stopped(); ++t) {
        const std::vector<float> emb = {static_cast<float>(rng.normal())};
        const StopDecision d = state.feed_step(emb, 50);
        if (d.action == StopDecision::Action::stop) CHECK(d.smoothed_score >= 0.6);
        if (d.action == StopDecision::Action::continue_generation) CHECK(d.smoothed_score < 0.6);
    }
}

TEST_CASE("online decisions equal offline stop_index on simulator traces") {
    SimConfig cfg;
    cfg.seed = 2025;
    cfg.n_traces = 100;
    cfg.max_steps = 30;
    cfg.embed_dim = 8;
    const TraceSet sim = generate(cfg).traces;
    const PcaModel pca = identity_pca(8);
    CombinedScorer scorer;
    scorer.mode = ScoreMode::consistent;
    scorer.smoothing.window = 10;
    scorer.probes.push_back(
        make_probe(ProbeKind::consistent, {0.3, -0.1, 1.7, 0.2, 0.0, 0.4, -0.6, 0.05}, -0.1));

    const std::vector<std::optional<double>> lambdas = {0.2, 0.5, 0.8, std::nullopt};
    for (const Trace& t : sim.traces) {
        const auto offline = score_trace(scorer, t, pca);
        for (const auto& lambda : lambdas) {
            MonitorState state(scorer, pca, lambda);
            std::size_t online_stop = 0;
            for (std::size_t i = 0; i < t.steps.size(); ++i) {
                const StopDecision d =
                    state.feed_step(t.steps[i].embedding, t.steps.size(), t.steps[i].token_count);
                CHECK(d.smoothed_score == offline[i]);  // bitwise equal
                if (d.action != StopDecision::Action::continue_generation) {
                    online_stop = d.step;
                    break;
                }
            }
            CHECK(online_stop == stop_index(offline, lambda));
        }
    }
}

TEST_CASE("run_stream single step with zero threshold") {
    MonitorState state(unit_scorer(1), identity_pca(1), 0.0);
    auto [stop, decisions] = run_stream(state, vector_source({{{0.0f}, 3}}), 10);
    CHECK(stop == 1);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].action == StopDecision::Action::stop);
}

TEST_CASE("run_stream reaches the budget on sub-threshold scores") {
    MonitorState state(unit_scorer(4), identity_pca(1), 0.9);
    std::vector<StreamStep> steps(8, StreamStep{{logit_f(0.2)}, 1});
    auto [stop, decisions] = run_stream(state, vector_source(steps), 8);
    CHECK(stop == 8);
    CHECK(decisions.size() == 8);
    CHECK(decisions.back().action == StopDecision::Action::at_budget);
    for (std::size_t i = 0; i + 1 < decisions.size(); ++i)
        CHECK(decisions[i].action == StopDecision::Action::continue_generation);
}

TEST_CASE("run_stream treats a short stream's last step as the budget") {
    MonitorState state(unit_scorer(4), identity_pca(1), 0.9);
    std::vector<StreamStep> steps(3, StreamStep{{logit_f(0.2)}, 1});
    auto [stop, decisions] = run_stream(state, vector_source(steps), 100);
    CHECK(stop == 3);
    CHECK(decisions.back().action == StopDecision::Action::at_budget);
}

TEST_CASE("run_stream rejects an empty stream") {
    MonitorState state(unit_scorer(1), identity_pca(1), 0.5);
    CHECK_THROWS_WITH_AS(run_stream(state, vector_source({}), 5), "empty stream", Error);
}

TEST_CASE("replaying a stream reproduces the decision sequence") {
    Rng rng(17);
    std::vector<StreamStep> steps;
    for (int i = 0; i < 12; ++i) steps.push_back({{static_cast<float>(rng.normal())}, 2});

    auto run_once = [&] {
        MonitorState state(unit_scorer(5), identity_pca(1), 0.7);
        return run_stream(state, vector_source(steps), 12);
    };
    auto [stop1, d1] = run_once();
    auto [stop2, d2] = run_once();
    CHECK(stop1 == stop2);
    REQUIRE(d1.size() == d2.size());
    for (std::size_t i = 0; i < d1.size(); ++i) {
        CHECK(d1[i].step == d2[i].step);
        CHECK(d1[i].raw_score == d2[i].raw_score);
        CHECK(d1[i].smoothed_score == d2[i].smoothed_score);
        CHECK(d1[i].action == d2[i].action);
    }
}

TEST_CASE("prefix decisions are invariant to the suffix") {
    Rng rng(23);
    std::vector<float> shared;
    for (int i = 0; i < 6; ++i) shared.push_back(static_cast<float>(rng.normal()));

    auto feed_prefix = [&](float suffix_value) {
        MonitorState state(unit_scorer(4), identity_pca(1), 0.95);
        std::vector<StopDecision> prefix;
        for (float v : shared) {
            const std::vector<float> emb = {v};
            prefix.push_back(state.feed_step(emb, 100));
        }
        const std::vector<float> tail = {suffix_value};
        state.feed_step(tail, 100);
        return prefix;
    };
    const auto a = feed_prefix(10.0f);
    const auto b = feed_prefix(-10.0f);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].smoothed_score == b[i].smoothed_score);
        CHECK(a[i].action == b[i].action);
    }
}

TEST_CASE("exactly one terminal decision per stream") {
    MonitorState state(unit_scorer(2), identity_pca(1), 0.4);
    std::vector<StreamStep> steps(20, StreamStep{{logit_f(0.55)}, 1});
    auto [stop, decisions] = run_stream(state, vector_source(steps), 20);
    (void)stop;
    std::size_t terminal = 0;
    for (const auto& d : decisions)
        if (d.action != StopDecision::Action::continue_generation) ++terminal;
    CHECK(terminal == 1);
    CHECK(decisions.back().action != StopDecision::Action::continue_generation);
}

TEST_CASE("optional token ceiling terminates the stream") {
    MonitorState state(unit_scorer(3), identity_pca(1), 0.99, std::int64_t{100});
    std::size_t steps = 0;
    StopDecision last;
    while (!state.stopped()) {
        const std::vector<float> emb = {logit_f(0.1)};
        last = state.feed_step(emb, 1000, 30);
        ++steps;
    }
    CHECK(steps == 4);  // 120 tokens >= 100 at the fourth step
    CHECK(last.action == StopDecision::Action::at_budget);
}
