// stopcal: calibrated early stopping for step-wise generation.
//
// Subcommands cover the full pipeline: simulate -> featurize -> train-probe ->
// calibrate -> evaluate/monitor, plus segment (step splitting) and coverage
// (guarantee validation on the simulator).

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stopcal/eval.hpp"
#include "stopcal/monitor.hpp"
#include "stopcal/simulator.hpp"

namespace {

using namespace stopcal;

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& text) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoll(item));
    }
    return out;
}

// Builds a scorer from 1-2 probe artifacts; the mode follows the probe kinds.
CombinedScorer make_scorer(const std::vector<std::string>& probe_paths, std::size_t window,
                           std::map<std::string, std::string>* hashes_out = nullptr) {
    if (probe_paths.empty()) throw Error("at least one --probe artifact is required");
    CombinedScorer scorer;
    scorer.smoothing.window = window;
    bool has_leaf = false, has_novel = false;
    for (const std::string& path : probe_paths) {
        const std::string content = read_file(path);
        ProbeModel probe = probe_from_json_string(content);
        if (hashes_out) (*hashes_out)[probe_kind_name(probe.kind)] = git_blob_sha1(content);
        has_leaf = has_leaf || probe.kind == ProbeKind::leaf;
        has_novel = has_novel || probe.kind == ProbeKind::novel;
        scorer.probes.push_back(std::move(probe));
    }
    if (scorer.probes.size() == 1) {
        switch (scorer.probes[0].kind) {
            case ProbeKind::correct: scorer.mode = ScoreMode::correct; break;
            case ProbeKind::consistent: scorer.mode = ScoreMode::consistent; break;
            default:
                throw Error("a lone leaf or novel probe cannot score; pass both for novel_leaf mode");
        }
    } else if (scorer.probes.size() == 2 && has_leaf && has_novel) {
        scorer.mode = ScoreMode::novel_leaf;
    } else {
        throw Error("unsupported probe combination; use one correct/consistent probe or leaf+novel");
    }
    scorer.validate();
    return scorer;
}

int cmd_segment(const std::string& in_path, const std::string& out_path) {
    std::string raw;
    if (in_path == "-") {
        std::ostringstream buf;
        buf << std::cin.rdbuf();
        raw = buf.str();
    } else {
        raw = read_file(in_path);
    }
    const auto steps = segment_thoughts(raw);
    nlohmann::json j = steps;
    const std::string text = j.dump(2) + "\n";
    if (out_path == "-") std::cout << text;
    else write_file(out_path, text);
    return 0;
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, bool seed_set,
                 std::size_t n_traces, bool n_set, const std::string& out_path,
                 std::string truth_path) {
    SimConfig config;
    if (!config_path.empty()) config = load_sim_config(config_path);
    if (seed_set) config.seed = seed;
    if (n_set) config.n_traces = n_traces;
    config.validate();

    SimResult result = generate(config);
    save_traceset(result.traces, out_path);
    if (truth_path.empty()) truth_path = out_path + ".truth.json";
    save_truth(result.truth, truth_path);
    std::fprintf(stderr, "simulate: wrote %zu traces (dim %zu) to %s\n", result.traces.traces.size(),
                 result.traces.dimension, out_path.c_str());
    return 0;
}

int cmd_featurize(const std::string& in_path, std::size_t dim, const std::string& out_path) {
    const TraceSet train = load_traceset(in_path, Split::train);
    std::size_t d = dim;
    if (d > train.dimension) {
        std::fprintf(stderr, "featurize: requested dim %zu exceeds data dim %zu; clamping\n", d,
                     train.dimension);
        d = train.dimension;
    }
    const Matrix rows = gather_step_matrix(train);
    d = std::min(d, rows.rows - 1);
    const PcaModel pca = fit_pca(rows, d);
    save_pca(pca, out_path);
    std::fprintf(stderr, "featurize: %zu -> %zu dims from %zu steps\n", pca.input_dim, pca.output_dim,
                 rows.rows);
    return 0;
}

int cmd_train_probe(const std::string& kind_name, const std::string& train_path,
                    const std::string& pca_path, const TrainHyper& hyper,
                    const std::string& out_path) {
    const ProbeKind kind = probe_kind_from(kind_name);
    const TraceSet train = load_traceset(train_path, Split::train);
    const PcaModel pca = load_pca(pca_path);
    ProbeModel probe = train_probe(kind, train, pca, hyper);
    probe.pca_ref = pca_path;
    save_probe(probe, out_path);
    std::fprintf(stderr, "train-probe: %s loss %.6f -> %.6f over %d epochs\n", kind_name.c_str(),
                 probe.meta.initial_loss, probe.meta.final_loss, probe.meta.epochs_run);
    return 0;
}

int cmd_calibrate(const std::string& traces_path, const std::string& pca_path,
                  const std::vector<std::string>& probe_paths, double delta, double epsilon,
                  const std::string& loss_name, const std::string& grid_spec, std::size_t window,
                  bool literal_epsilon, const std::string& out_path) {
    const TraceSet cal = load_traceset(traces_path, Split::calibration);
    const PcaModel pca = load_pca(pca_path);
    std::map<std::string, std::string> hashes;
    const CombinedScorer scorer = make_scorer(probe_paths, window, &hashes);

    RiskSpec spec;
    spec.mode = scorer.mode;
    spec.delta = delta;
    spec.epsilon = epsilon;
    spec.loss_form = loss_form_from(loss_name);

    LambdaGrid grid = LambdaGrid::default_grid();
    if (!grid_spec.empty()) {
        grid.values = parse_double_list(grid_spec);
        grid.validate();
    }
    CalibrateOptions opts;
    opts.literal_epsilon_binomial = literal_epsilon;

    CalibrationResult result = calibrate_fixed_sequence(cal, scorer, pca, grid, spec, opts);
    result.probe_hashes = std::move(hashes);
    save_calibration(result, out_path);
    if (result.selected_lambda)
        std::fprintf(stderr, "calibrate: selected lambda %.4f (tested %zu of %zu)\n",
                     *result.selected_lambda, result.p_values.size(), grid.values.size());
    else
        std::fprintf(stderr, "calibrate: no valid threshold; monitor will never exit early\n");
    return 0;
}

int cmd_monitor(const std::string& pca_path, const std::vector<std::string>& probe_paths,
                const std::string& calibration_path, double lambda_flag, bool lambda_set,
                std::size_t window, std::size_t budget) {
    const PcaModel pca = load_pca(pca_path);
    const CombinedScorer scorer = make_scorer(probe_paths, window);

    std::optional<double> lambda;
    if (!calibration_path.empty()) {
        const CalibrationResult cal = load_calibration(calibration_path);
        lambda = cal.selected_lambda;
        if (cal.spec.mode != scorer.mode)
            throw Error("calibration mode does not match the probes supplied");
    }
    if (lambda_set) lambda = lambda_flag;

    MonitorState state(scorer, pca, lambda);
    std::string tag;
    while (std::cin >> tag) {
        if (tag != "STEP") throw Error("monitor protocol: expected STEP, got '" + tag + "'");
        std::string id;
        std::size_t dim = 0;
        if (!(std::cin >> id >> dim)) throw Error("monitor protocol: bad STEP header");
        if (dim != pca.input_dim)
            throw Error("monitor protocol: step dimension " + std::to_string(dim) +
                        " does not match pca input " + std::to_string(pca.input_dim));
        std::vector<float> embedding(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            if (!(std::cin >> embedding[j])) throw Error("monitor protocol: truncated embedding");
        }
        const StopDecision d = state.feed_step(embedding, budget);
        std::printf("DECIDE %s %zu %.6f %s\n", id.c_str(), d.step, d.smoothed_score,
                    action_name(d.action));
        std::fflush(stdout);
        if (d.action != StopDecision::Action::continue_generation) return 0;
    }
    // Driver closed the stream before a terminal decision; every step it sent
    // was answered, so this is a clean end.
    return 0;
}

int cmd_evaluate(const std::string& traces_path, const std::string& pca_path,
                 const std::vector<std::string>& probe_paths,
                 const std::vector<std::string>& calibration_paths, const std::string& budgets_spec,
                 std::size_t window, const std::string& curve_path, const std::string& report_path) {
    const TraceSet test = load_traceset(traces_path, Split::test);
    const PcaModel pca = load_pca(pca_path);
    const CombinedScorer scorer = make_scorer(probe_paths, window);

    std::vector<CalibrationResult> calibrations;
    for (const std::string& path : calibration_paths)
        calibrations.push_back(load_calibration(path));
    std::sort(calibrations.begin(), calibrations.end(),
              [](const CalibrationResult& a, const CalibrationResult& b) {
                  return a.spec.epsilon < b.spec.epsilon;
              });

    const std::vector<std::int64_t> budgets = parse_int_list(budgets_spec);
    std::vector<BudgetCurvePoint> points = crop_baseline(test, budgets, scorer.mode);
    const auto probe_points = efficiency_curve(test, scorer, pca, calibrations);
    points.insert(points.end(), probe_points.begin(), probe_points.end());
    write_file(curve_path, curve_to_csv(points));

    const auto rows = calibration_report(test, scorer, pca, calibrations);
    write_file(report_path, report_to_csv(rows));
    std::fprintf(stderr, "evaluate: %zu curve rows, %zu report rows\n", points.size(), rows.size());
    return 0;
}

int cmd_coverage(const std::string& config_path, std::uint64_t seed, bool seed_set,
                 const std::string& mode_name, const std::string& loss_name, double delta,
                 const std::string& epsilons_spec, std::size_t repeats, const CoverageOptions& opts,
                 const std::string& out_path) {
    SimConfig config;
    if (!config_path.empty()) config = load_sim_config(config_path);
    if (seed_set) config.seed = seed;

    RiskSpec spec;
    spec.mode = score_mode_from(mode_name);
    spec.loss_form = loss_form_from(loss_name);
    spec.delta = delta;
    spec.epsilon = 0.5;  // placeholder; per-row epsilons below

    const std::vector<double> epsilons = parse_double_list(epsilons_spec);
    const CoverageReport report = coverage_experiment_multi(config, spec, epsilons, repeats, opts);
    const std::string csv = coverage_report_to_csv(report);
    if (!out_path.empty()) write_file(out_path, csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"risk-controlled early stopping for step-wise generation"};
    app.require_subcommand(1);

    // segment
    auto* segment = app.add_subcommand("segment", "split raw thought text into steps");
    std::string seg_in = "-", seg_out = "-";
    segment->add_option("--in", seg_in, "input text file, or - for stdin");
    segment->add_option("--out", seg_out, "output JSON array path, or - for stdout");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a labeled synthetic trace set");
    std::string sim_config, sim_out, sim_truth;
    std::uint64_t sim_seed = 0;
    std::size_t sim_n = 0;
    simulate->add_option("--config", sim_config, "simulator config JSON");
    auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "RNG seed");
    auto* sim_n_opt = simulate->add_option("--n-traces", sim_n, "number of traces");
    simulate->add_option("--out", sim_out, "output trace file (JSON lines)")->required();
    simulate->add_option("--truth", sim_truth, "ground-truth sidecar path (default <out>.truth.json)");

    // featurize
    auto* featurize = app.add_subcommand("featurize", "fit the PCA projection on a trace set");
    std::string feat_in, feat_out;
    std::size_t feat_dim = 256;
    featurize->add_option("--in", feat_in, "training trace file")->required();
    featurize->add_option("--dim", feat_dim, "target dimension (clamped to data dim)");
    featurize->add_option("--out", feat_out, "output PCA container")->required();

    // train-probe
    auto* train = app.add_subcommand("train-probe", "train a linear probe on labeled steps");
    std::string tr_kind, tr_in, tr_pca, tr_out;
    TrainHyper tr_hyper;
    train->add_option("--kind", tr_kind, "correct|consistent|leaf|novel")->required();
    train->add_option("--train", tr_in, "training trace file")->required();
    train->add_option("--pca", tr_pca, "PCA container")->required();
    train->add_option("--lr", tr_hyper.lr, "learning rate");
    train->add_option("--epochs", tr_hyper.epochs, "gradient descent epochs");
    train->add_option("--l2", tr_hyper.l2, "l2 strength");
    train->add_flag("--balance", tr_hyper.balance_classes, "inverse-frequency class weights");
    train->add_option("--out", tr_out, "output probe artifact")->required();

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "select an exit threshold with the risk guarantee");
    std::string cal_traces, cal_pca, cal_loss = "paper_soft", cal_grid, cal_out;
    std::vector<std::string> cal_probes;
    double cal_delta = 0.1, cal_epsilon = 0.1;
    std::size_t cal_window = 10;
    bool cal_literal = false;
    calibrate->add_option("--traces", cal_traces, "calibration trace file")->required();
    calibrate->add_option("--pca", cal_pca, "PCA container")->required();
    calibrate->add_option("--probe", cal_probes, "probe artifact (repeat for leaf+novel)")->required();
    calibrate->add_option("--delta", cal_delta, "risk tolerance")->required();
    calibrate->add_option("--epsilon", cal_epsilon, "error level")->required();
    calibrate->add_option("--loss", cal_loss, "paper_soft|hard_indicator");
    calibrate->add_option("--grid", cal_grid, "comma list of descending thresholds");
    calibrate->add_option("--window", cal_window, "smoothing window");
    calibrate->add_flag("--literal-epsilon", cal_literal, "use epsilon as the binomial parameter");
    calibrate->add_option("--out", cal_out, "output calibration JSON")->required();

    // monitor
    auto* monitor = app.add_subcommand("monitor", "online stop/continue decisions over stdin steps");
    std::string mon_pca, mon_cal;
    std::vector<std::string> mon_probes;
    double mon_lambda = 0.0;
    std::size_t mon_window = 10, mon_budget = 0;
    monitor->add_option("--pca", mon_pca, "PCA container")->required();
    monitor->add_option("--probe", mon_probes, "probe artifact (repeat for leaf+novel)")->required();
    monitor->add_option("--calibration", mon_cal, "calibration JSON providing the threshold");
    auto* mon_lambda_opt = monitor->add_option("--lambda", mon_lambda, "threshold override");
    monitor->add_option("--window", mon_window, "smoothing window");
    monitor->add_option("--budget", mon_budget, "step budget")->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "crop baseline and calibrated efficiency curves");
    std::string ev_traces, ev_pca, ev_budgets = "512,1024,2048,4096,8192";
    std::string ev_curve = "curve.csv", ev_report = "report.csv";
    std::vector<std::string> ev_probes, ev_cals;
    std::size_t ev_window = 10;
    evaluate->add_option("--traces", ev_traces, "test trace file")->required();
    evaluate->add_option("--pca", ev_pca, "PCA container")->required();
    evaluate->add_option("--probe", ev_probes, "probe artifact (repeat for leaf+novel)")->required();
    evaluate->add_option("--calibration", ev_cals, "calibration JSON (repeat per epsilon)")->required();
    evaluate->add_option("--budgets", ev_budgets, "comma list of crop token budgets");
    evaluate->add_option("--window", ev_window, "smoothing window");
    evaluate->add_option("--curve-out", ev_curve, "curve CSV path");
    evaluate->add_option("--report-out", ev_report, "calibration report CSV path");

    // coverage
    auto* coverage = app.add_subcommand("coverage", "empirical check of the calibration guarantee");
    std::string cov_config, cov_mode = "consistent", cov_loss = "hard_indicator";
    std::string cov_epsilons = "0.05,0.1,0.2,0.5", cov_out;
    std::uint64_t cov_seed = 0;
    double cov_delta = 0.1;
    std::size_t cov_repeats = 200;
    CoverageOptions cov_opts;
    coverage->add_option("--config", cov_config, "simulator config JSON");
    auto* cov_seed_opt = coverage->add_option("--seed", cov_seed, "RNG seed");
    coverage->add_option("--mode", cov_mode, "correct|consistent|novel_leaf");
    coverage->add_option("--loss", cov_loss, "paper_soft|hard_indicator");
    coverage->add_option("--delta", cov_delta, "risk tolerance");
    coverage->add_option("--epsilons", cov_epsilons, "comma list of error levels");
    coverage->add_option("--repeats", cov_repeats, "number of repeats");
    coverage->add_option("--n-train", cov_opts.n_train, "training traces per repeat");
    coverage->add_option("--n-cal", cov_opts.n_cal, "calibration traces per repeat");
    coverage->add_option("--n-test", cov_opts.n_test, "test traces per repeat");
    coverage->add_option("--threads", cov_opts.threads, "worker threads (0 = auto)");
    coverage->add_option("--epochs", cov_opts.hyper.epochs, "probe training epochs");
    coverage->add_option("--out", cov_out, "also write the CSV report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*segment) return cmd_segment(seg_in, seg_out);
        if (*simulate)
            return cmd_simulate(sim_config, sim_seed, sim_seed_opt->count() > 0, sim_n,
                                sim_n_opt->count() > 0, sim_out, sim_truth);
        if (*featurize) return cmd_featurize(feat_in, feat_dim, feat_out);
        if (*train) return cmd_train_probe(tr_kind, tr_in, tr_pca, tr_hyper, tr_out);
        if (*calibrate)
            return cmd_calibrate(cal_traces, cal_pca, cal_probes, cal_delta, cal_epsilon, cal_loss,
                                 cal_grid, cal_window, cal_literal, cal_out);
        if (*monitor)
            return cmd_monitor(mon_pca, mon_probes, mon_cal, mon_lambda, mon_lambda_opt->count() > 0,
                               mon_window, mon_budget);
        if (*evaluate)
            return cmd_evaluate(ev_traces, ev_pca, ev_probes, ev_cals, ev_budgets, ev_window, ev_curve,
                                ev_report);
        if (*coverage)
            return cmd_coverage(cov_config, cov_seed, cov_seed_opt->count() > 0, cov_mode, cov_loss,
                                cov_delta, cov_epsilons, cov_repeats, cov_opts, cov_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
