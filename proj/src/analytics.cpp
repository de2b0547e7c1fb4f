#include "pf/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "pf/gating.hpp"
#include "pf/kernels.hpp"

namespace pf {

const char* episode_mode_name(EpisodeMode m) {
    switch (m) {
        case EpisodeMode::PulseFocus: return "pulsefocus";
        case EpisodeMode::PlanFocusNoGating: return "plan-focus-nogate";
        case EpisodeMode::FreeCoT: return "free-cot";
    }
    return "?";
}

std::optional<EpisodeMode> episode_mode_from_name(std::string_view name) {
    if (name == "pulsefocus") return EpisodeMode::PulseFocus;
    if (name == "plan-focus-nogate") return EpisodeMode::PlanFocusNoGating;
    if (name == "free-cot") return EpisodeMode::FreeCoT;
    return std::nullopt;
}

const char* step_mode_name(StepMode m) {
    switch (m) {
        case StepMode::Outside: return "outside";
        case StepMode::Tag: return "tag";
        case StepMode::Plan: return "plan";
        case StepMode::Focus: return "focus";
        case StepMode::Summary: return "summary";
        case StepMode::Answer: return "answer";
        case StepMode::Free: return "free";
    }
    return "?";
}

std::optional<StepMode> step_mode_from_name(std::string_view name) {
    if (name == "outside") return StepMode::Outside;
    if (name == "tag") return StepMode::Tag;
    if (name == "plan") return StepMode::Plan;
    if (name == "focus") return StepMode::Focus;
    if (name == "summary") return StepMode::Summary;
    if (name == "answer") return StepMode::Answer;
    if (name == "free") return StepMode::Free;
    return std::nullopt;
}

namespace {

// Per-step masses from whichever representation the step carries.
void step_masses(const AttentionTrace& trace, const TraceStep& step,
                 std::vector<double>& image_out, double& text_out) {
    const int n = trace.layout.num_images();
    image_out.assign(static_cast<std::size_t>(n), 0.0);
    if (!step.reduced_row.empty()) {
        for (int j = 1; j <= n; ++j)
            image_out[static_cast<std::size_t>(j - 1)] =
                focus_mass(step.reduced_row, trace.layout, j);
        // Direct text-side summation; conservation against the image side is
        // a checked invariant, not an identity.
        double text = 0.0;
        for (std::size_t p = 0; p < step.reduced_row.size(); ++p)
            if (!trace.layout.is_image_position(p)) text += step.reduced_row[p];
        text_out = text;
        return;
    }
    if (step.image_mass && step.text_mass) {
        if (step.image_mass->size() != static_cast<std::size_t>(n))
            throw std::invalid_argument("trace step: image mass count does not match layout N");
        image_out = *step.image_mass;
        text_out = *step.text_mass;
        return;
    }
    throw std::invalid_argument("trace step carries neither a reduced row nor masses");
}

}  // namespace

PulseSeries pulse_series(const AttentionTrace& trace) {
    PulseSeries series;
    series.num_images = trace.layout.num_images();
    series.image_mass.reserve(trace.steps.size());
    series.text_mass.reserve(trace.steps.size());
    std::vector<double> img;
    double text = 0.0;
    for (const TraceStep& step : trace.steps) {
        // Rows must at least cover the prompt layout or the subset sums
        // would silently truncate; trace_io enforces the stricter
        // prompt+step+1 growth for files.
        if (!step.reduced_row.empty() && step.reduced_row.size() < trace.layout.total_len())
            throw std::invalid_argument("trace step " + std::to_string(step.step_index) +
                                        ": row shorter than the prompt layout");
        step_masses(trace, step, img, text);
        series.image_mass.push_back(img);
        series.text_mass.push_back(text);
    }
    return series;
}

PositionalBiasReport positional_bias(const std::vector<AttentionTrace>& traces,
                                     const std::vector<std::string>& group_keys) {
    if (traces.empty()) throw std::invalid_argument("positional_bias: no traces");
    if (group_keys.size() != traces.size())
        throw std::invalid_argument("positional_bias: one group key per trace required");

    int max_n = 0;
    for (const AttentionTrace& t : traces) {
        if (t.layout.num_images() < 2)
            throw std::invalid_argument("positional_bias: traces need at least 2 images");
        max_n = std::max(max_n, t.layout.num_images());
    }

    // Per-trace time average of a[k][j] over all decode steps.
    std::vector<std::vector<double>> trace_means(traces.size());
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const PulseSeries series = pulse_series(traces[t]);
        if (series.image_mass.empty())
            throw std::invalid_argument("positional_bias: trace has no steps");
        std::vector<double> mean(static_cast<std::size_t>(series.num_images), 0.0);
        for (const auto& row : series.image_mass)
            kernels::add(mean.data(), row.data(), row.size());
        kernels::scale(mean.data(), 1.0 / static_cast<double>(series.image_mass.size()),
                       mean.size());
        trace_means[t] = std::move(mean);
    }

    PositionalBiasReport report;
    for (int j = 1; j <= max_n; ++j) {
        double total = 0.0;
        int count = 0;
        std::map<std::string, std::pair<double, int>> groups;  // key -> (sum, n)
        for (std::size_t t = 0; t < traces.size(); ++t) {
            if (traces[t].layout.num_images() < j) continue;
            const double v = trace_means[t][static_cast<std::size_t>(j - 1)];
            total += v;
            ++count;
            auto& g = groups[group_keys[t]];
            g.first += v;
            g.second += 1;
        }
        if (count == 0) continue;
        const double mean = total / count;

        double var = 0.0;
        for (const auto& [key, g] : groups) {
            const double gmean = g.first / g.second;
            var += (gmean - mean) * (gmean - mean);
        }
        var /= static_cast<double>(groups.size());  // population std across groups

        report.rows.push_back({j, mean, std::sqrt(var), count});
    }
    return report;
}

std::vector<ColouringRecord> colouring(const AttentionTrace& trace, double threshold) {
    const PulseSeries series = pulse_series(trace);
    std::vector<ColouringRecord> records;
    records.reserve(series.image_mass.size());
    for (std::size_t k = 0; k < series.image_mass.size(); ++k) {
        const auto& masses = series.image_mass[k];
        ColouringRecord rec;
        rec.step = trace.steps[k].step_index;
        const double total = masses.empty() ? 0.0 : kernels::sum(masses.data(), masses.size());
        if (total > 0.0) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < masses.size(); ++j)
                if (masses[j] > masses[best]) best = j;  // ties keep the earliest image
            rec.dominant = static_cast<int>(best) + 1;
            rec.ratio = masses[best] / total;
            rec.diffuse = rec.ratio < threshold;
        } else {
            rec.dominant = std::nullopt;
            rec.ratio = 0.0;
            rec.diffuse = true;
        }
        records.push_back(rec);
    }
    return records;
}

FocusAlignmentReport focus_alignment(const AttentionTrace& trace) {
    const PulseSeries series = pulse_series(trace);
    FocusAlignmentReport report;

    std::size_t k = 0;
    int ordinal = 0;
    while (k < trace.steps.size()) {
        if (trace.steps[k].mode != StepMode::Focus) {
            ++k;
            continue;
        }
        const std::vector<int> focus = trace.steps[k].focus;
        FocusAlignmentReport::Block block;
        block.ordinal = ordinal++;
        block.focus = focus;
        block.first_step = trace.steps[k].step_index;
        double sum = 0.0;
        int counted = 0;
        while (k < trace.steps.size() && trace.steps[k].mode == StepMode::Focus &&
               trace.steps[k].focus == focus) {
            block.last_step = trace.steps[k].step_index;
            const auto& masses = series.image_mass[k];
            const double total =
                masses.empty() ? 0.0 : kernels::sum(masses.data(), masses.size());
            if (total > 0.0) {
                double focused = 0.0;
                for (int j : focus) focused += masses[static_cast<std::size_t>(j - 1)];
                sum += focused / total;
                ++counted;
            }
            ++k;
        }
        block.steps_counted = counted;
        block.alignment = counted > 0 ? sum / counted : 0.0;
        report.blocks.push_back(std::move(block));
    }

    double total = 0.0;
    int used = 0;
    for (const auto& b : report.blocks)
        if (b.steps_counted > 0) {
            total += b.alignment;
            ++used;
        }
    report.episode_mean = used > 0 ? total / used : 0.0;
    return report;
}

void compare_alignment(FocusAlignmentReport& ours, const FocusAlignmentReport& baseline) {
    ours.baseline_delta = ours.episode_mean - baseline.episode_mean;
}

std::optional<double> verify_reduction(const AttentionTrace& trace) {
    double worst = -1.0;
    for (const TraceStep& step : trace.steps) {
        if (step.raw_rows.empty() || step.reduced_row.empty()) continue;
        std::size_t rows = 0;
        std::vector<double> mean(step.reduced_row.size(), 0.0);
        for (const auto& layer : step.raw_rows)
            for (const auto& row : layer) {
                if (row.size() != mean.size())
                    throw std::invalid_argument("raw row length differs from reduced row");
                kernels::add(mean.data(), row.data(), row.size());
                ++rows;
            }
        if (rows == 0) continue;
        kernels::scale(mean.data(), 1.0 / static_cast<double>(rows), mean.size());
        for (std::size_t p = 0; p < mean.size(); ++p)
            worst = std::max(worst, std::abs(mean[p] - step.reduced_row[p]));
    }
    if (worst < 0.0) return std::nullopt;
    return worst;
}

}  // namespace pf
