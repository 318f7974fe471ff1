#include "stopcal/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

#include <json.hpp>

namespace stopcal {

void SimConfig::validate() const {
    if (n_traces == 0) throw Error("sim config: n_traces must be >= 1");
    if (max_steps < 1) throw Error("sim config: max_steps must be >= 1");
    if (embed_dim < 5) throw Error("sim config: embed_dim must be >= 5");
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw Error(std::string("sim config: ") + name + " must be in [0,1]");
    };
    prob(p_new_leaf0, "p_new_leaf0");
    prob(p_new_leaf_decay, "p_new_leaf_decay");
    prob(p_backtrack, "p_backtrack");
    prob(difficulty, "difficulty");
    if (noise_scale < 0.0) throw Error("sim config: noise_scale must be >= 0");
    if (conv_min < 1 || conv_max < conv_min || conv_min > max_steps)
        throw Error("sim config: bad convergence step range");
    if (tokens_min < 1 || tokens_max < tokens_min) throw Error("sim config: bad token range");
}

SimConfig sim_config_from_json_string(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed sim config: ") + e.what());
    }
    SimConfig c;
    c.seed = j.value("seed", c.seed);
    c.n_traces = j.value("n_traces", c.n_traces);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.p_new_leaf0 = j.value("p_new_leaf0", c.p_new_leaf0);
    c.p_new_leaf_decay = j.value("p_new_leaf_decay", c.p_new_leaf_decay);
    c.p_backtrack = j.value("p_backtrack", c.p_backtrack);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.difficulty = j.value("difficulty", c.difficulty);
    c.conv_min = j.value("conv_min", c.conv_min);
    c.conv_max = j.value("conv_max", c.conv_max);
    c.tokens_min = j.value("tokens_min", c.tokens_min);
    c.tokens_max = j.value("tokens_max", c.tokens_max);
    c.signal_scale = j.value("signal_scale", c.signal_scale);
    c.latent_scale = j.value("latent_scale", c.latent_scale);
    c.validate();
    return c;
}

std::string sim_config_to_json_string(const SimConfig& c) {
    nlohmann::json j = {
        {"seed", c.seed},
        {"n_traces", c.n_traces},
        {"max_steps", c.max_steps},
        {"p_new_leaf0", c.p_new_leaf0},
        {"p_new_leaf_decay", c.p_new_leaf_decay},
        {"p_backtrack", c.p_backtrack},
        {"noise_scale", c.noise_scale},
        {"embed_dim", c.embed_dim},
        {"difficulty", c.difficulty},
        {"conv_min", c.conv_min},
        {"conv_max", c.conv_max},
        {"tokens_min", c.tokens_min},
        {"tokens_max", c.tokens_max},
        {"signal_scale", c.signal_scale},
        {"latent_scale", c.latent_scale},
    };
    return j.dump(2) + "\n";
}

SimConfig load_sim_config(const std::filesystem::path& path) {
    return sim_config_from_json_string(read_file(path.string()));
}

namespace {

struct TraceBuild {
    Trace trace;
    SimTruth truth;
};

TraceBuild build_trace(const SimConfig& cfg, std::uint64_t seed, const std::string& id) {
    Rng rng(seed);
    const std::size_t T = cfg.max_steps;
    const std::size_t D = cfg.embed_dim;
    const std::size_t latent_dim = D - 4;

    TraceBuild out;
    out.trace.id = id;
    out.trace.question = "question " + id;
    out.truth.solvable = !rng.bernoulli(cfg.difficulty);

    const std::size_t conv_cap =
        static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.conv_min),
                                                 static_cast<std::int64_t>(std::min(cfg.conv_max, T))));

    // Node 0 is the question root.
    std::vector<int> parent{-1};
    std::vector<int> children_count{0};
    std::vector<std::vector<double>> latent{std::vector<double>(latent_dim, 0.0)};
    int cursor = 0;

    std::vector<int> node_at(T, 0);
    std::vector<std::int64_t> tokens(T, 0);
    out.truth.added_leaf.assign(T, 0);
    out.truth.was_backtrack.assign(T, 0);
    std::vector<std::uint8_t> leaf_flag(T, 0);

    for (std::size_t t = 1; t <= T; ++t) {
        const std::size_t i = t - 1;
        bool add_leaf = false;
        if (t == 1) {
            add_leaf = true;  // the first thought always grows the graph
        } else if (t <= conv_cap) {
            const double p = cfg.p_new_leaf0 * std::pow(cfg.p_new_leaf_decay, static_cast<double>(t - 1));
            add_leaf = rng.bernoulli(p);
        }
        if (add_leaf) {
            const int node = static_cast<int>(parent.size());
            parent.push_back(cursor);
            children_count.push_back(0);
            children_count[static_cast<std::size_t>(cursor)]++;
            std::vector<double> lat(latent_dim);
            for (double& v : lat) v = cfg.latent_scale * rng.normal();
            latent.push_back(std::move(lat));
            cursor = node;
            out.truth.added_leaf[i] = 1;
        } else if (cursor != 0 && rng.bernoulli(cfg.p_backtrack)) {
            std::vector<int> ancestors;
            for (int a = parent[static_cast<std::size_t>(cursor)]; a != -1;
                 a = parent[static_cast<std::size_t>(a)])
                ancestors.push_back(a);
            cursor = ancestors[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(ancestors.size()) - 1))];
            out.truth.was_backtrack[i] = 1;
        } else {
            // Redundant generation: revisit a random existing thought.
            cursor = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(parent.size()) - 1));
        }
        node_at[i] = cursor;
        leaf_flag[i] = children_count[static_cast<std::size_t>(cursor)] == 0 ? 1 : 0;
        tokens[i] = rng.uniform_int(cfg.tokens_min, cfg.tokens_max);
    }

    std::size_t converged_at = 1;
    for (std::size_t t = 1; t <= T; ++t)
        if (out.truth.added_leaf[t - 1]) converged_at = t;
    out.truth.graph_converged_at = converged_at;
    out.truth.graph.parent = parent;
    if (out.truth.solvable) {
        // The last novel thought carries the correct answer.
        out.truth.graph.answer_node = node_at[converged_at - 1];
    }

    out.trace.final_correct = out.truth.solvable;
    out.trace.steps.resize(T);
    out.trace.labels.resize(T);
    for (std::size_t t = 1; t <= T; ++t) {
        const std::size_t i = t - 1;
        const bool is_leaf = leaf_flag[i] != 0;
        const bool is_novel = out.truth.added_leaf[i] != 0;
        const bool consistent = t >= converged_at;
        const bool correct = out.truth.solvable && consistent;

        Step& st = out.trace.steps[i];
        st.token_count = tokens[i];
        st.text = (t % 2 == 1 ? "Wait, step " : "But step ") + std::to_string(t) + " visits node " +
                  std::to_string(node_at[i]) + ".";
        st.embedding.resize(D);
        const double s = cfg.signal_scale;
        st.embedding[0] = static_cast<float>(is_leaf ? s : -s);
        st.embedding[1] = static_cast<float>(is_novel ? s : -s);
        st.embedding[2] = static_cast<float>(consistent ? s : -s);
        st.embedding[3] = static_cast<float>(correct ? s : -s);
        const auto& lat = latent[static_cast<std::size_t>(node_at[i])];
        for (std::size_t j = 0; j < latent_dim; ++j)
            st.embedding[4 + j] = static_cast<float>(lat[j]);
        for (std::size_t j = 0; j < D; ++j)
            st.embedding[j] += static_cast<float>(cfg.noise_scale * rng.normal());

        StepLabels& l = out.trace.labels[i];
        l.is_leaf = is_leaf;
        l.is_novel = is_novel;
        l.consistent_with_final = consistent;
        l.correct_if_stopped = correct;
        out.trace.total_tokens += st.token_count;
    }
    return out;
}

}  // namespace

SimResult generate(const SimConfig& config) {
    config.validate();
    SimResult result;
    result.traces.dimension = config.embed_dim;
    result.traces.split_tag = Split::train;
    result.traces.traces.reserve(config.n_traces);

    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "sim-%016llx",
                  static_cast<unsigned long long>(config.seed));
    for (std::size_t i = 0; i < config.n_traces; ++i) {
        const std::string id = std::string(prefix) + "-" + std::to_string(i);
        TraceBuild b = build_trace(config, mix_seed(config.seed, i), id);
        result.truth.emplace(id, std::move(b.truth));
        result.traces.traces.push_back(std::move(b.trace));
    }
    return result;
}

void save_truth(const std::map<std::string, SimTruth>& truth, const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, t] : truth) {
        nlohmann::json rec = {
            {"solvable", t.solvable},
            {"graph_converged_at", t.graph_converged_at},
            {"added_leaf", t.added_leaf},
            {"was_backtrack", t.was_backtrack},
            {"parents", t.graph.parent},
            {"answer_node",
             t.graph.answer_node ? nlohmann::json(*t.graph.answer_node) : nlohmann::json(nullptr)},
        };
        j[id] = std::move(rec);
    }
    write_file(path.string(), j.dump(2) + "\n");
}

namespace {

std::vector<ProbeKind> probe_kinds_for(ScoreMode mode) {
    switch (mode) {
        case ScoreMode::correct: return {ProbeKind::correct};
        case ScoreMode::consistent: return {ProbeKind::consistent};
        case ScoreMode::novel_leaf: return {ProbeKind::leaf, ProbeKind::novel};
    }
    throw Error("bad mode");
}

struct RepeatOutcome {
    double test_risk = 0.0;
    std::optional<double> selected_lambda;
};

// One fresh draw + training + calibration at each epsilon + test evaluation.
std::vector<RepeatOutcome> run_repeat(const SimConfig& base, const RiskSpec& base_spec,
                                      std::span<const double> epsilons, std::uint64_t repeat,
                                      const CoverageOptions& opts) {
    auto split_config = [&](std::size_t n, std::uint64_t salt) {
        SimConfig c = base;
        c.n_traces = n;
        c.seed = mix_seed(base.seed, repeat * 4 + salt);
        return c;
    };
    const TraceSet train = generate(split_config(opts.n_train, 1)).traces;
    const TraceSet cal = generate(split_config(opts.n_cal, 2)).traces;
    const TraceSet test = generate(split_config(opts.n_test, 3)).traces;

    const std::size_t d = std::min(opts.pca_dim, train.dimension);
    const PcaModel pca = fit_pca(gather_step_matrix(train), d);

    CombinedScorer scorer;
    scorer.mode = base_spec.mode;
    scorer.smoothing.window = opts.smoothing_window;
    for (ProbeKind kind : probe_kinds_for(base_spec.mode))
        scorer.probes.push_back(train_probe(kind, train, pca, opts.hyper));

    std::vector<std::vector<double>> cal_scores;
    cal_scores.reserve(cal.traces.size());
    for (const Trace& t : cal.traces) cal_scores.push_back(score_trace(scorer, t, pca));
    std::vector<std::vector<double>> test_scores;
    test_scores.reserve(test.traces.size());
    for (const Trace& t : test.traces) test_scores.push_back(score_trace(scorer, t, pca));

    CalibrateOptions copts;
    copts.literal_epsilon_binomial = opts.literal_epsilon_binomial;

    std::vector<RepeatOutcome> outcomes;
    outcomes.reserve(epsilons.size());
    for (double eps : epsilons) {
        RiskSpec spec = base_spec;
        spec.epsilon = eps;
        const CalibrationResult res =
            calibrate_fixed_sequence_scored(cal.traces, cal_scores, opts.grid, spec, copts);
        double risk_sum = 0.0;
        for (std::size_t i = 0; i < test.traces.size(); ++i)
            risk_sum += loss_at_stop(test.traces[i], test_scores[i], res.selected_lambda, spec);
        RepeatOutcome o;
        o.test_risk = risk_sum / static_cast<double>(test.traces.size());
        o.selected_lambda = res.selected_lambda;
        outcomes.push_back(o);
    }
    return outcomes;
}

void wilson_interval(std::size_t successes, std::size_t n, double& lo, double& hi) {
    const double z = 1.959963984540054;
    const double nn = static_cast<double>(n);
    const double ph = static_cast<double>(successes) / nn;
    const double denom = 1.0 + z * z / nn;
    const double center = (ph + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z * z / (4.0 * nn * nn)) / denom;
    lo = std::max(0.0, center - half);
    hi = std::min(1.0, center + half);
}

}  // namespace

CoverageReport coverage_experiment_multi(const SimConfig& config, const RiskSpec& base_spec,
                                         std::span<const double> epsilons, std::size_t repeats,
                                         const CoverageOptions& opts) {
    config.validate();
    base_spec.validate();
    if (repeats < 50) throw Error("coverage: repeats must be >= 50");
    if (epsilons.empty()) throw Error("coverage: no epsilon levels");
    for (double e : epsilons)
        if (!(e > 0.0 && e < 1.0)) throw Error("coverage: epsilon must be in (0,1)");

    std::vector<std::vector<RepeatOutcome>> all(repeats);
    std::size_t threads = opts.threads ? opts.threads : std::thread::hardware_concurrency();
    if (threads < 1) threads = 1;
    threads = std::min(threads, repeats);

    if (threads == 1) {
        for (std::size_t r = 0; r < repeats; ++r)
            all[r] = run_repeat(config, base_spec, epsilons, r, opts);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr failure;
        std::mutex failure_mutex;
        for (std::size_t w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t r = next.fetch_add(1);
                    if (r >= repeats) return;
                    try {
                        all[r] = run_repeat(config, base_spec, epsilons, r, opts);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    CoverageReport report;
    report.base_spec = base_spec;
    report.repeats = repeats;
    std::vector<double> sorted(epsilons.begin(), epsilons.end());
    std::vector<std::size_t> order(epsilons.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sorted[a] < sorted[b]; });

    for (std::size_t oi : order) {
        CoverageRow row;
        row.epsilon = epsilons[oi];
        row.repeats = repeats;
        double risk_sum = 0.0, lambda_sum = 0.0;
        std::size_t lambda_count = 0;
        for (std::size_t r = 0; r < repeats; ++r) {
            const RepeatOutcome& o = all[r][oi];
            risk_sum += o.test_risk;
            if (o.test_risk > base_spec.delta) ++row.violations;
            if (o.selected_lambda) {
                lambda_sum += *o.selected_lambda;
                ++lambda_count;
            } else {
                ++row.none_count;
            }
        }
        row.violation_fraction = static_cast<double>(row.violations) / static_cast<double>(repeats);
        row.mean_test_risk = risk_sum / static_cast<double>(repeats);
        row.mean_selected_lambda = lambda_count ? lambda_sum / static_cast<double>(lambda_count) : 0.0;
        wilson_interval(row.violations, repeats, row.ci_low, row.ci_high);
        report.rows.push_back(row);
    }
    return report;
}

CoverageReport coverage_experiment(const SimConfig& config, const RiskSpec& spec,
                                   std::size_t repeats, const CoverageOptions& opts) {
    const double eps[1] = {spec.epsilon};
    return coverage_experiment_multi(config, spec, eps, repeats, opts);
}

std::string coverage_report_to_csv(const CoverageReport& report) {
    std::string out =
        "epsilon,repeats,violations,violation_fraction,ci_low,ci_high,none_fraction,"
        "mean_test_risk,mean_selected_lambda\n";
    char line[256];
    for (const CoverageRow& r : report.rows) {
        std::snprintf(line, sizeof line, "%.6f,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epsilon,
                      r.repeats, r.violations, r.violation_fraction, r.ci_low, r.ci_high,
                      static_cast<double>(r.none_count) / static_cast<double>(r.repeats),
                      r.mean_test_risk, r.mean_selected_lambda);
        out += line;
    }
    return out;
}

}  // namespace stopcal
