#ifndef STOPCAL_PROBE_HPP
#define STOPCAL_PROBE_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stopcal/features.hpp"
#include "stopcal/trace.hpp"

namespace stopcal {

enum class ProbeKind { correct, consistent, leaf, novel };

const char* probe_kind_name(ProbeKind k);
ProbeKind probe_kind_from(std::string_view name);

// Reads the label a probe kind trains against.
std::optional<bool> label_for(const StepLabels& labels, ProbeKind kind);

struct TrainHyper {
    double lr = 0.1;
    int epochs = 500;
    double l2 = 1e-4;
    bool balance_classes = false;  // inverse-frequency example weights
};

struct TrainMeta {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    int epochs_run = 0;
};

// Linear scorer over PCA-projected step embeddings: sigmoid(w.x + b).
struct ProbeModel {
    ProbeKind kind = ProbeKind::consistent;
    std::vector<double> weights;
    double bias = 0.0;
    std::string pca_ref;  // path of the PcaModel the probe was trained against
    TrainHyper hyper;
    TrainMeta meta;
};

// L2-regularized logistic loss and its analytic gradient over a feature
// matrix. Exposed so tests can check the gradient against finite differences.
double logistic_loss_and_grad(const Matrix& x, std::span<const int> y,
                              std::span<const double> example_weights,
                              std::span<const double> w, double b, double l2,
                              std::span<double> grad_w, double& grad_b);

// Full-batch gradient descent on the regularized logistic loss. Every step of
// every trace must carry the label `kind` requires; both classes must appear.
ProbeModel train_probe(ProbeKind kind, const TraceSet& train, const PcaModel& pca,
                       const TrainHyper& hyper);

double score_step(const ProbeModel& probe, std::span<const double> projected);

enum class ScoreMode { correct, consistent, novel_leaf };

const char* score_mode_name(ScoreMode m);
ScoreMode score_mode_from(std::string_view name);

// Which per-step label an exit decision in this mode is judged against.
ProbeKind outcome_label_kind(ScoreMode m);

// The probes a mode requires plus the smoothing applied to its output.
// Modes correct/consistent take exactly their probe; novel_leaf takes the
// leaf and novel probes and scores leaf * (1 - novel).
struct CombinedScorer {
    ScoreMode mode = ScoreMode::consistent;
    std::vector<ProbeModel> probes;
    SmoothingSpec smoothing;

    void validate() const;
    const ProbeModel& probe(ProbeKind kind) const;
};

// Per-step scores before smoothing.
std::vector<double> raw_scores(const CombinedScorer& scorer, const Trace& trace, const PcaModel& pca);
double raw_score_step(const CombinedScorer& scorer, std::span<const double> projected);

// Smoothed exit scores, one per step, in [0, 1].
std::vector<double> score_trace(const CombinedScorer& scorer, const Trace& trace, const PcaModel& pca);

// Probability that a random positive outranks a random negative, ties 1/2.
double auroc(std::span<const double> scores, std::span<const int> labels);

std::string probe_to_json_string(const ProbeModel& probe);
ProbeModel probe_from_json_string(std::string_view text);
void save_probe(const ProbeModel& probe, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace stopcal

#endif
