#ifndef STOPCAL_TRACE_HPP
#define STOPCAL_TRACE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stopcal/common.hpp"

namespace stopcal {

// One reasoning step. The step index is its position in Trace::steps.
struct Step {
    std::string text;
    std::vector<float> embedding;
    std::int64_t token_count = 0;
};

// Per-step labels. Any subset may be present; operations that need a missing
// label fail loudly rather than imputing.
struct StepLabels {
    std::optional<bool> correct_if_stopped;
    std::optional<bool> consistent_with_final;
    std::optional<bool> is_leaf;
    std::optional<bool> is_novel;
};

struct Trace {
    std::string id;
    std::string question;
    std::vector<Step> steps;
    std::vector<StepLabels> labels;  // aligned to steps
    std::optional<bool> final_correct;
    std::int64_t total_tokens = 0;  // sum of step token counts

    std::size_t length() const { return steps.size(); }
};

enum class Split { train, calibration, test };

const char* split_name(Split s);
Split split_from(std::string_view name);

struct TraceSet {
    std::vector<Trace> traces;
    std::size_t dimension = 0;
    Split split_tag = Split::train;
};

// Splits raw thought text into steps. Sections are delimited by "\n\n"; a
// boundary is kept only when the section it closes contains the whole word
// "wait" or "but" (case-insensitive); other sections merge into the next one.
// Joining the result with "\n\n" reconstructs the input exactly.
std::vector<std::string> segment_thoughts(std::string_view raw_text);

// Enforces the Trace invariants against a declared embedding dimension.
void validate_trace(const Trace& trace, std::size_t dimension);

// Trace files are JSON lines plus a binary embedding sidecar at
// sidecar_path(path). See README for the exact layout.
std::filesystem::path sidecar_path(const std::filesystem::path& trace_path);
TraceSet load_traceset(const std::filesystem::path& path, Split split_tag);
void save_traceset(const TraceSet& set, const std::filesystem::path& path);

}  // namespace stopcal

#endif
