#ifndef STOPCAL_SIMULATOR_HPP
#define STOPCAL_SIMULATOR_HPP

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "stopcal/risk.hpp"
#include "stopcal/trace.hpp"

namespace stopcal {

// Synthetic reasoning-graph generator. Each trace grows a rooted tree: a step
// either adds a new leaf (a novel thought), backtracks to a uniformly random
// ancestor, or revisits an existing node (redundant generation). Leaf growth
// follows a decaying schedule and is cut off at a per-trace convergence step,
// after which the graph is frozen. The attempt implied at step t is the most
// recently added leaf, so the consistency label is exactly "the graph has
// stopped changing". A `difficulty` fraction of traces never contains the
// correct answer: their consistency labels behave normally but correctness
// stays false, even at full budget.
struct SimConfig {
    std::uint64_t seed = 1;
    std::size_t n_traces = 100;
    std::size_t max_steps = 48;  // T
    double p_new_leaf0 = 0.95;   // p_new_leaf(t) = p0 * decay^(t-1) while t <= convergence step
    double p_new_leaf_decay = 0.92;
    double p_backtrack = 0.35;
    double noise_scale = 0.25;
    std::size_t embed_dim = 64;  // D, must be >= 5
    double difficulty = 0.2;     // probability a trace is unsolvable
    std::size_t conv_min = 8;    // convergence step ~ uniform{conv_min .. conv_max}, clamped to T
    std::size_t conv_max = 24;
    std::int64_t tokens_min = 16;
    std::int64_t tokens_max = 64;
    double signal_scale = 1.0;  // planted label signal amplitude (coords 0..3)
    double latent_scale = 1.0;  // per-node latent feature scale (coords 4..D-1)

    void validate() const;
};

SimConfig sim_config_from_json_string(std::string_view text);
std::string sim_config_to_json_string(const SimConfig& config);
SimConfig load_sim_config(const std::filesystem::path& path);

struct ReasoningGraph {
    std::vector<int> parent;  // parent[0] == -1 (root is the question)
    std::optional<int> answer_node;
};

struct SimTruth {
    bool solvable = false;
    std::size_t graph_converged_at = 1;  // 1-based step of the last leaf addition
    std::vector<std::uint8_t> added_leaf;
    std::vector<std::uint8_t> was_backtrack;
    ReasoningGraph graph;
};

struct SimResult {
    TraceSet traces;
    std::map<std::string, SimTruth> truth;  // keyed by trace id
};

// Deterministic given config.seed; traces are i.i.d. across indices.
SimResult generate(const SimConfig& config);

void save_truth(const std::map<std::string, SimTruth>& truth, const std::filesystem::path& path);

struct CoverageOptions {
    std::size_t n_train = 500;
    std::size_t n_cal = 450;
    std::size_t n_test = 500;
    std::size_t pca_dim = 256;  // clamped to the simulator embedding dim
    TrainHyper hyper{0.5, 150, 1e-4, false};
    LambdaGrid grid = LambdaGrid::default_grid();
    std::size_t smoothing_window = 10;
    std::size_t threads = 0;  // 0 = hardware concurrency
    bool literal_epsilon_binomial = false;
};

struct CoverageRow {
    double epsilon = 0.0;
    std::size_t repeats = 0;
    std::size_t violations = 0;   // repeats whose test risk exceeded delta
    std::size_t none_count = 0;   // repeats where no threshold was validated
    double violation_fraction = 0.0;
    double mean_test_risk = 0.0;
    double mean_selected_lambda = 0.0;  // over repeats with a selected threshold
    double ci_low = 0.0;                // Wilson 95% interval on the violation fraction
    double ci_high = 0.0;
};

struct CoverageReport {
    RiskSpec base_spec;
    std::size_t repeats = 0;
    std::vector<CoverageRow> rows;  // sorted by epsilon
};

// Repeated draws of (train, calibration, test), probe training, calibration,
// and evaluation of the true test risk at the selected threshold. The per-ε
// guarantee says the violation fraction stays near or below ε.
CoverageReport coverage_experiment(const SimConfig& config, const RiskSpec& spec,
                                   std::size_t repeats, const CoverageOptions& opts = {});

// Shares the per-repeat draws and probe training across several ε levels;
// equivalent to running coverage_experiment once per ε with the same seed.
CoverageReport coverage_experiment_multi(const SimConfig& config, const RiskSpec& base_spec,
                                         std::span<const double> epsilons, std::size_t repeats,
                                         const CoverageOptions& opts = {});

std::string coverage_report_to_csv(const CoverageReport& report);

}  // namespace stopcal

#endif
