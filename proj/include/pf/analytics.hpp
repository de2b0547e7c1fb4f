#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pf/layout.hpp"
#include "pf/model.hpp"

namespace pf {

enum class EpisodeMode { PulseFocus, PlanFocusNoGating, FreeCoT };

const char* episode_mode_name(EpisodeMode m);
std::optional<EpisodeMode> episode_mode_from_name(std::string_view name);

// Where a decode step sat in the transcript grammar.
enum class StepMode { Outside, Tag, Plan, Focus, Summary, Answer, Free };

const char* step_mode_name(StepMode m);
std::optional<StepMode> step_mode_from_name(std::string_view name);

// One decode step of a trace. Either reduced_row (full per-position mean
// attention row, length = prompt_len + step_index + 1) or the precomputed
// image_mass/text_mass pair must be present; replayed mass-only traces
// carry no rows.
struct TraceStep {
    int step_index = 0;
    std::string token_text;
    StepMode mode = StepMode::Outside;
    std::vector<int> focus;  // focus-block images while mode == Focus
    bool gated = false;      // a gate was actually applied at this step
    bool injected = false;   // token came from controller-injected closure text

    std::vector<double> reduced_row;                       // may be empty
    std::optional<std::vector<double>> image_mass;         // [j-1] for j in 1..N
    std::optional<double> text_mass;
    std::vector<std::vector<std::vector<double>>> raw_rows;  // [sel layer][head][pos]
};

struct TraceMetadata {
    double lambda = 0.0;
    EpisodeMode mode = EpisodeMode::PulseFocus;
    std::uint64_t model_seed = 0;
    std::uint64_t sampling_seed = 0;
    std::string model_digest;
    std::vector<int> selected_layers;
    std::string tag;  // free-form grouping key for bias aggregation
};

struct AttentionTrace {
    TokenLayout layout;
    std::vector<TraceStep> steps;
    TraceMetadata meta;
};

// Per-step image masses a[k][j] (subset sums over each S_j) plus the text
// complement. Computed from reduced rows when present, otherwise taken from
// the precomputed masses.
struct PulseSeries {
    int num_images = 0;
    std::vector<std::vector<double>> image_mass;  // [step][j-1]
    std::vector<double> text_mass;                // [step]
};

PulseSeries pulse_series(const AttentionTrace& trace);

struct PositionalBiasReport {
    struct Row {
        int position = 0;   // image position j
        double mean = 0.0;  // mean over qualifying traces of time-averaged mass
        double stddev = 0.0;  // population std across group means
        int sample_count = 0;
    };
    std::vector<Row> rows;
};

// Aggregates time-averaged per-image mass across traces. Position j
// statistics are restricted to traces with at least j images; the standard
// deviation is taken across the per-group means of `group_keys` (one key
// per trace; a single group yields std 0). Throws on empty input or when
// any trace has fewer than 2 images.
PositionalBiasReport positional_bias(const std::vector<AttentionTrace>& traces,
                                     const std::vector<std::string>& group_keys);

struct ColouringRecord {
    int step = 0;
    std::optional<int> dominant;  // argmax_j a[k][j]; nullopt when image mass is 0
    double ratio = 0.0;           // a_max / total image mass (0 when undefined)
    bool diffuse = false;         // ratio below threshold (or no image mass)
};

constexpr double kDefaultDiffuseThreshold = 0.5;

std::vector<ColouringRecord> colouring(const AttentionTrace& trace,
                                       double threshold = kDefaultDiffuseThreshold);

struct FocusAlignmentReport {
    struct Block {
        int ordinal = 0;         // focus block number within the episode
        std::vector<int> focus;  // images the block referenced
        int first_step = 0;
        int last_step = 0;
        int steps_counted = 0;  // steps with nonzero image mass
        double alignment = 0.0;  // mean of focused mass / total image mass
    };
    std::vector<Block> blocks;
    double episode_mean = 0.0;                // mean over blocks
    std::optional<double> baseline_delta;     // filled by compare_alignment
};

// Focus blocks are maximal runs of Focus-mode steps; steps without image
// mass are excluded from the block mean. A trace with no focus blocks
// yields an empty report.
FocusAlignmentReport focus_alignment(const AttentionTrace& trace);

// delta = ours.episode_mean - baseline.episode_mean, recorded on `ours`.
void compare_alignment(FocusAlignmentReport& ours, const FocusAlignmentReport& baseline);

// Max abs difference between the mean of retained raw (layer,head) rows
// and the stored reduced row; nullopt when no step retains raw rows.
std::optional<double> verify_reduction(const AttentionTrace& trace);

}  // namespace pf
