#include "stopcal/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace stopcal {

const char* probe_kind_name(ProbeKind k) {
    switch (k) {
        case ProbeKind::correct: return "correct";
        case ProbeKind::consistent: return "consistent";
        case ProbeKind::leaf: return "leaf";
        case ProbeKind::novel: return "novel";
    }
    return "consistent";
}

ProbeKind probe_kind_from(std::string_view name) {
    if (name == "correct") return ProbeKind::correct;
    if (name == "consistent") return ProbeKind::consistent;
    if (name == "leaf") return ProbeKind::leaf;
    if (name == "novel") return ProbeKind::novel;
    throw Error("unknown probe kind: " + std::string(name));
}

std::optional<bool> label_for(const StepLabels& labels, ProbeKind kind) {
    switch (kind) {
        case ProbeKind::correct: return labels.correct_if_stopped;
        case ProbeKind::consistent: return labels.consistent_with_final;
        case ProbeKind::leaf: return labels.is_leaf;
        case ProbeKind::novel: return labels.is_novel;
    }
    return std::nullopt;
}

const char* score_mode_name(ScoreMode m) {
    switch (m) {
        case ScoreMode::correct: return "correct";
        case ScoreMode::consistent: return "consistent";
        case ScoreMode::novel_leaf: return "novel_leaf";
    }
    return "consistent";
}

ScoreMode score_mode_from(std::string_view name) {
    if (name == "correct") return ScoreMode::correct;
    if (name == "consistent") return ScoreMode::consistent;
    if (name == "novel_leaf") return ScoreMode::novel_leaf;
    throw Error("unknown score mode: " + std::string(name));
}

ProbeKind outcome_label_kind(ScoreMode m) {
    // novel_leaf decisions are judged against the consistency label.
    return m == ScoreMode::correct ? ProbeKind::correct : ProbeKind::consistent;
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z), overflow-safe.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double logistic_loss_and_grad(const Matrix& x, std::span<const int> y,
                              std::span<const double> example_weights,
                              std::span<const double> w, double b, double l2,
                              std::span<double> grad_w, double& grad_b) {
    const std::size_t n = x.rows, d = x.cols;
    if (y.size() != n || example_weights.size() != n || w.size() != d || grad_w.size() != d)
        throw Error("logistic_loss_and_grad: shape mismatch");
    double weight_total = 0.0;
    for (double ew : example_weights) weight_total += ew;
    if (weight_total <= 0.0) throw Error("logistic_loss_and_grad: zero total weight");

    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_b = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data.data() + i * d;
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * xi[j];
        const double ew = example_weights[i];
        loss += ew * (softplus(z) - static_cast<double>(y[i]) * z);
        const double g = ew * (sigmoid(z) - static_cast<double>(y[i]));
        for (std::size_t j = 0; j < d; ++j) grad_w[j] += g * xi[j];
        grad_b += g;
    }
    loss /= weight_total;
    grad_b /= weight_total;
    double reg = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        grad_w[j] = grad_w[j] / weight_total + l2 * w[j];
        reg += w[j] * w[j];
    }
    return loss + 0.5 * l2 * reg;
}

ProbeModel train_probe(ProbeKind kind, const TraceSet& train, const PcaModel& pca,
                       const TrainHyper& hyper) {
    if (train.dimension != pca.input_dim)
        throw Error("train_probe: trace dimension does not match pca input dimension");

    std::size_t n = 0;
    for (const Trace& t : train.traces) n += t.steps.size();
    if (n == 0) throw Error("train_probe: no training steps");

    Matrix x(n, pca.output_dim);
    std::vector<int> y(n);
    std::size_t row = 0;
    std::size_t positives = 0;
    for (const Trace& t : train.traces) {
        for (std::size_t i = 0; i < t.steps.size(); ++i) {
            const std::optional<bool> label = label_for(t.labels[i], kind);
            if (!label)
                throw Error(std::string("missing ") + probe_kind_name(kind) + " label at id=" + t.id +
                            " step=" + std::to_string(i));
            auto proj = project(pca, std::span<const float>(t.steps[i].embedding));
            std::copy(proj.begin(), proj.end(), x.data.begin() + static_cast<std::ptrdiff_t>(row * pca.output_dim));
            y[row] = *label ? 1 : 0;
            positives += y[row];
            ++row;
        }
    }
    if (positives == 0 || positives == n) throw Error("degenerate labels: single class in training data");

    std::vector<double> ew(n, 1.0);
    if (hyper.balance_classes) {
        const double wp = static_cast<double>(n) / (2.0 * static_cast<double>(positives));
        const double wn = static_cast<double>(n) / (2.0 * static_cast<double>(n - positives));
        for (std::size_t i = 0; i < n; ++i) ew[i] = y[i] ? wp : wn;
    }

    ProbeModel probe;
    probe.kind = kind;
    probe.hyper = hyper;
    probe.weights.assign(pca.output_dim, 0.0);
    probe.bias = 0.0;

    std::vector<double> grad_w(pca.output_dim);
    double grad_b = 0.0;
    double loss = logistic_loss_and_grad(x, y, ew, probe.weights, probe.bias, hyper.l2, grad_w, grad_b);
    probe.meta.initial_loss = loss;

    double lr = hyper.lr;
    std::vector<double> next_w(pca.output_dim);
    std::vector<double> next_grad_w(pca.output_dim);
    int halvings = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        for (std::size_t j = 0; j < pca.output_dim; ++j) next_w[j] = probe.weights[j] - lr * grad_w[j];
        const double next_b = probe.bias - lr * grad_b;
        double next_grad_b = 0.0;
        const double next_loss =
            logistic_loss_and_grad(x, y, ew, next_w, next_b, hyper.l2, next_grad_w, next_grad_b);
        if (next_loss > loss) {
            // Step overshot; halve the rate and retry from the same point.
            lr *= 0.5;
            if (++halvings > 60) break;
            continue;
        }
        probe.weights.swap(next_w);
        probe.bias = next_b;
        grad_w.swap(next_grad_w);
        grad_b = next_grad_b;
        loss = next_loss;
        probe.meta.epochs_run = epoch + 1;
    }
    probe.meta.final_loss = loss;
    return probe;
}

double score_step(const ProbeModel& probe, std::span<const double> projected) {
    if (projected.size() != probe.weights.size()) throw Error("score_step: dimension mismatch");
    double z = probe.bias;
    for (std::size_t j = 0; j < projected.size(); ++j) z += probe.weights[j] * projected[j];
    return sigmoid(z);
}

void CombinedScorer::validate() const {
    auto has = [&](ProbeKind k) {
        return std::any_of(probes.begin(), probes.end(),
                           [&](const ProbeModel& p) { return p.kind == k; });
    };
    if (smoothing.window < 1) throw Error("scorer: smoothing window must be >= 1");
    switch (mode) {
        case ScoreMode::correct:
            if (probes.size() != 1 || !has(ProbeKind::correct))
                throw Error("scorer: mode correct requires exactly the correct probe");
            break;
        case ScoreMode::consistent:
            if (probes.size() != 1 || !has(ProbeKind::consistent))
                throw Error("scorer: mode consistent requires exactly the consistent probe");
            break;
        case ScoreMode::novel_leaf:
            if (probes.size() != 2 || !has(ProbeKind::leaf) || !has(ProbeKind::novel))
                throw Error("scorer: mode novel_leaf requires the leaf and novel probes");
            break;
    }
}

const ProbeModel& CombinedScorer::probe(ProbeKind kind) const {
    for (const ProbeModel& p : probes)
        if (p.kind == kind) return p;
    throw Error(std::string("scorer: missing ") + probe_kind_name(kind) + " probe");
}

double raw_score_step(const CombinedScorer& scorer, std::span<const double> projected) {
    switch (scorer.mode) {
        case ScoreMode::correct: return score_step(scorer.probe(ProbeKind::correct), projected);
        case ScoreMode::consistent: return score_step(scorer.probe(ProbeKind::consistent), projected);
        case ScoreMode::novel_leaf: {
            const double leaf = score_step(scorer.probe(ProbeKind::leaf), projected);
            const double novel = score_step(scorer.probe(ProbeKind::novel), projected);
            return leaf * (1.0 - novel);
        }
    }
    throw Error("scorer: bad mode");
}

std::vector<double> raw_scores(const CombinedScorer& scorer, const Trace& trace, const PcaModel& pca) {
    scorer.validate();
    std::vector<double> out;
    out.reserve(trace.steps.size());
    for (const Step& st : trace.steps) {
        const auto proj = project(pca, std::span<const float>(st.embedding));
        out.push_back(raw_score_step(scorer, proj));
    }
    return out;
}

std::vector<double> score_trace(const CombinedScorer& scorer, const Trace& trace, const PcaModel& pca) {
    return smooth_scores(raw_scores(scorer, trace, pca), scorer.smoothing);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw Error("auroc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t pos = 0;
    for (int l : labels) pos += l ? 1 : 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw Error("auroc requires both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Mann-Whitney U via midranks; ties contribute 1/2 exactly.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::string probe_to_json_string(const ProbeModel& probe) {
    nlohmann::json j = {
        {"kind", probe_kind_name(probe.kind)},
        {"d", probe.weights.size()},
        {"weights", probe.weights},
        {"bias", probe.bias},
        {"pca_path", probe.pca_ref},
        {"hyper",
         {{"lr", probe.hyper.lr},
          {"epochs", probe.hyper.epochs},
          {"l2", probe.hyper.l2},
          {"balance_classes", probe.hyper.balance_classes}}},
        {"metrics",
         {{"initial_loss", probe.meta.initial_loss},
          {"final_loss", probe.meta.final_loss},
          {"epochs_run", probe.meta.epochs_run}}},
    };
    return j.dump(2) + "\n";
}

ProbeModel probe_from_json_string(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed probe artifact: ") + e.what());
    }
    ProbeModel probe;
    try {
        probe.kind = probe_kind_from(j.at("kind").get<std::string>());
        probe.weights = j.at("weights").get<std::vector<double>>();
        probe.bias = j.at("bias").get<double>();
        probe.pca_ref = j.value("pca_path", std::string());
        if (j.contains("hyper")) {
            const auto& h = j["hyper"];
            probe.hyper.lr = h.value("lr", probe.hyper.lr);
            probe.hyper.epochs = h.value("epochs", probe.hyper.epochs);
            probe.hyper.l2 = h.value("l2", probe.hyper.l2);
            probe.hyper.balance_classes = h.value("balance_classes", false);
        }
        if (j.contains("metrics")) {
            const auto& m = j["metrics"];
            probe.meta.initial_loss = m.value("initial_loss", 0.0);
            probe.meta.final_loss = m.value("final_loss", 0.0);
            probe.meta.epochs_run = m.value("epochs_run", 0);
        }
        if (j.contains("d") && j["d"].get<std::size_t>() != probe.weights.size())
            throw Error("probe artifact: d does not match weights length");
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed probe artifact: ") + e.what());
    }
    for (double w : probe.weights)
        if (!std::isfinite(w)) throw Error("probe artifact: non-finite weight");
    if (!std::isfinite(probe.bias)) throw Error("probe artifact: non-finite bias");
    return probe;
}

void save_probe(const ProbeModel& probe, const std::filesystem::path& path) {
    write_file(path.string(), probe_to_json_string(probe));
}

ProbeModel load_probe(const std::filesystem::path& path) {
    return probe_from_json_string(read_file(path.string()));
}

}  // namespace stopcal
