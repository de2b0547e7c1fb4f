// pulsefocus: run interleaved plan/focus episodes on the seeded toy model,
// validate transcripts, and reduce attention traces to plot-ready CSVs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pf/analytics.hpp"
#include "pf/controller.hpp"
#include "pf/format.hpp"
#include "pf/gating.hpp"
#include "pf/kernels.hpp"
#include "pf/model.hpp"
#include "pf/trace_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFindings = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitGrammarError = 3;

struct RunSpec {
    std::string preset = "tiny";
    int layers = 0, heads = 0, head_dim = 0, vocab = 0, max_seq = 0;
    std::uint64_t seed = 7;
    std::uint64_t sampling_seed = 0;
    double temperature = 0.0;  // 0 = greedy
    int images = 3;
    int image_tokens = 32;
    std::string prompt_file;
    std::string question;
    std::string mode = "pulsefocus";
    double lambda = 2.0;
    int plan_max = 256;
    int focus_max = 192;
    int max_cycles = 12;
    int total_cap = 256 * 12 + 192 * 12 + 512;
    std::string scripted;
    std::string out_dir = ".";
    std::string trace_path;
    std::string transcript_path;
    std::string tag;
    bool retain_raw = false;
    bool mass_only = false;
};

pf::ModelConfig config_from_spec(const RunSpec& spec) {
    int layers = spec.layers, heads = spec.heads, head_dim = spec.head_dim;
    int vocab = spec.vocab, max_seq = spec.max_seq;
    if (spec.preset == "tiny") {
        if (!layers) layers = 2;
        if (!heads) heads = 4;
        if (!head_dim) head_dim = 16;
        if (!vocab) vocab = 320;
        if (!max_seq) max_seq = 8192;
    } else if (spec.preset == "small") {
        if (!layers) layers = 4;
        if (!heads) heads = 8;
        if (!head_dim) head_dim = 32;
        if (!vocab) vocab = 320;
        if (!max_seq) max_seq = 8192;
    } else {
        throw CLI::ValidationError("--preset", "unknown preset '" + spec.preset + "'");
    }
    return pf::ModelConfig::make(layers, heads, head_dim, vocab, max_seq, spec.seed);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << content;
}

pf::PromptSpec prompt_spec_from(const RunSpec& spec) {
    pf::PromptSpec prompt;
    prompt.images = spec.images;
    prompt.image_tokens = spec.image_tokens;
    if (!spec.prompt_file.empty()) prompt.prompt_text = read_file(spec.prompt_file);
    if (!spec.question.empty()) prompt.question = spec.question;
    return prompt;
}

int cmd_run(const RunSpec& spec) {
    const pf::ModelConfig cfg = config_from_spec(spec);
    cfg.validate();

    pf::GateConfig gate{spec.lambda};
    gate.validate();
    pf::BudgetConfig budget;
    budget.plan_max_tokens = spec.plan_max;
    budget.focus_max_tokens = spec.focus_max;
    budget.max_cycles = spec.max_cycles;
    budget.total_token_cap = spec.total_cap;
    budget.validate();

    const auto mode = pf::episode_mode_from_name(spec.mode);
    if (!mode) throw CLI::ValidationError("--mode", "unknown mode '" + spec.mode + "'");

    const auto [tokens, layout] = pf::build_image_prompt(cfg, prompt_spec_from(spec));

    pf::Model model(cfg);
    std::unique_ptr<pf::TokenSource> source;
    if (!spec.scripted.empty())
        source = std::make_unique<pf::ScriptedSource>(read_file(spec.scripted));
    else if (spec.temperature > 0.0)
        source = std::make_unique<pf::TemperatureSource>(spec.temperature, spec.sampling_seed);
    else
        source = std::make_unique<pf::GreedySource>();

    pf::EpisodeResult result = pf::run_episode(model, tokens, layout, *source, gate, budget,
                                               *mode, spec.sampling_seed, spec.retain_raw);
    result.trace.meta.tag = spec.tag;

    fs::create_directories(spec.out_dir);
    const std::string trace_path =
        spec.trace_path.empty() ? (fs::path(spec.out_dir) / "episode.trace").string()
                                : spec.trace_path;
    const std::string transcript_path =
        spec.transcript_path.empty() ? (fs::path(spec.out_dir) / "transcript.txt").string()
                                     : spec.transcript_path;
    pf::write_trace(result.trace, trace_path, spec.mass_only);
    write_file(transcript_path, result.transcript);

    const pf::FocusAlignmentReport alignment = pf::focus_alignment(result.trace);
    std::string alignment_str = "n/a";
    if (!alignment.blocks.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", alignment.episode_mean);
        alignment_str = buf;
    }
    std::printf("steps=%zu cycles=%d terminated=%s mean_alignment=%s trace=%s transcript=%s\n",
                result.trace.steps.size(), result.budget_state.cycles_completed,
                result.budget_state.terminated_reason
                    ? pf::termination_reason_name(*result.budget_state.terminated_reason)
                    : "none",
                alignment_str.c_str(), trace_path.c_str(), transcript_path.c_str());

    if (result.budget_state.terminated_reason == pf::TerminationReason::GrammarError)
        return kExitGrammarError;
    return kExitOk;
}

struct AnalyzeSpec {
    std::string trace_path;
    std::string baseline_path;
    std::string out_dir = ".";
    bool pulse = false;
    bool colouring = false;
    bool alignment = false;
    double threshold = pf::kDefaultDiffuseThreshold;
};

std::string out_path(const std::string& out_dir, const std::string& trace_path,
                     const char* suffix) {
    const std::string stem = fs::path(trace_path).stem().string();
    return (fs::path(out_dir) / (stem + suffix)).string();
}

int cmd_analyze(const AnalyzeSpec& spec) {
    const pf::AttentionTrace trace = pf::read_trace(spec.trace_path);
    const bool all = !spec.pulse && !spec.colouring && !spec.alignment;
    fs::create_directories(spec.out_dir);

    const pf::PulseSeries series = pf::pulse_series(trace);
    std::printf("source=replay trace=%s steps=%zu images=%d mode=%s lambda=%s\n",
                spec.trace_path.c_str(), trace.steps.size(), trace.layout.num_images(),
                pf::episode_mode_name(trace.meta.mode),
                pf::format_csv_float(trace.meta.lambda).c_str());

    if (all || spec.pulse) {
        std::ofstream out(out_path(spec.out_dir, spec.trace_path, "_pulse.csv"));
        pf::write_pulse_csv(series, trace, out);
        std::printf("wrote %s\n", out_path(spec.out_dir, spec.trace_path, "_pulse.csv").c_str());
    }
    if (all || spec.colouring) {
        const auto records = pf::colouring(trace, spec.threshold);
        std::ofstream out(out_path(spec.out_dir, spec.trace_path, "_colouring.csv"));
        pf::write_colouring_csv(records, trace, out);
        std::printf("wrote %s\n",
                    out_path(spec.out_dir, spec.trace_path, "_colouring.csv").c_str());
    }
    if (all || spec.alignment) {
        bool annotated = trace.steps.empty();
        for (const pf::TraceStep& step : trace.steps)
            if (step.mode != pf::StepMode::Free) annotated = true;
        if (!annotated)
            throw pf::TraceError("alignment requested but the trace carries no block annotations",
                                 0);
        pf::FocusAlignmentReport report = pf::focus_alignment(trace);
        if (!spec.baseline_path.empty()) {
            const pf::AttentionTrace baseline = pf::read_trace(spec.baseline_path);
            const pf::FocusAlignmentReport base_report = pf::focus_alignment(baseline);
            pf::compare_alignment(report, base_report);
        }
        std::ofstream out(out_path(spec.out_dir, spec.trace_path, "_alignment.csv"));
        pf::write_alignment_csv(report, out);
        std::printf("wrote %s (episode_mean=%s%s%s)\n",
                    out_path(spec.out_dir, spec.trace_path, "_alignment.csv").c_str(),
                    pf::format_csv_float(report.episode_mean).c_str(),
                    report.baseline_delta ? " delta=" : "",
                    report.baseline_delta ? pf::format_csv_float(*report.baseline_delta).c_str()
                                          : "");
    }

    const auto reduction = pf::verify_reduction(trace);
    if (reduction)
        std::printf("reduction check: max |mean(raw) - reduced| = %.3e\n", *reduction);
    else
        std::printf("reduction check skipped (no raw rows retained)\n");
    return kExitOk;
}

int cmd_bias(std::vector<std::string> paths, const std::string& group_by,
             const std::string& out_file) {
    if (paths.empty()) throw CLI::ValidationError("bias", "no trace files given");
    std::sort(paths.begin(), paths.end());

    std::vector<pf::AttentionTrace> traces;
    std::vector<std::string> keys;
    for (const std::string& p : paths) {
        traces.push_back(pf::read_trace(p));
        if (group_by == "tag")
            keys.push_back(traces.back().meta.tag.empty() ? "(untagged)"
                                                          : traces.back().meta.tag);
        else if (group_by == "file")
            keys.push_back(p);
        else if (group_by == "none")
            keys.push_back("all");
        else
            throw CLI::ValidationError("--group-by", "expected tag|file|none");
    }

    const pf::PositionalBiasReport report = pf::positional_bias(traces, keys);
    std::ofstream out(out_file);
    if (!out) throw std::runtime_error("cannot open output: " + out_file);
    pf::write_bias_csv(report, out);
    std::printf("aggregated %zu traces over %zu positions -> %s\n", traces.size(),
                report.rows.size(), out_file.c_str());
    return kExitOk;
}

int cmd_validate(const std::string& path, int num_images) {
    const std::string text = read_file(path);
    const pf::ValidationReport report = pf::validate_transcript(text, num_images);
    for (const pf::Finding& f : report.findings) {
        const char* sev = f.severity == pf::Severity::Error     ? "error"
                          : f.severity == pf::Severity::Warning ? "warning"
                                                                : "note";
        std::printf("%s: %s (offset %zu)\n", sev, f.message.c_str(), f.offset);
    }
    std::printf("%s: %zu errors, %zu warnings, %zu notes\n", path.c_str(),
                report.count(pf::Severity::Error), report.count(pf::Severity::Warning),
                report.count(pf::Severity::Note));
    return report.valid() ? kExitOk : kExitFindings;
}

int cmd_plot_data(const std::string& trace_path, std::string out_file,
                  const std::string& out_dir) {
    const pf::AttentionTrace trace = pf::read_trace(trace_path);
    const pf::PulseSeries series = pf::pulse_series(trace);
    fs::create_directories(out_dir);
    if (out_file.empty()) out_file = out_path(out_dir, trace_path, "_plot.csv");
    std::ofstream out(out_file);
    if (!out) throw std::runtime_error("cannot open output: " + out_file);
    pf::write_plot_data_csv(series, out);
    std::printf("wrote %s\n", out_file.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interleaved plan/focus decoding with soft attention gating, plus attention "
                 "trace analytics"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file mirroring the long options (INI format)");

    std::string kernels = "auto";
    app.add_option("--kernels", kernels, "Kernel backend: auto|scalar|avx2")
        ->capture_default_str();

    RunSpec run_spec;
    if (const char* env = std::getenv("PULSEFOCUS_OUT_DIR")) run_spec.out_dir = env;

    CLI::App* run = app.add_subcommand("run", "Run one decode episode and write trace + transcript");
    run->add_option("--preset", run_spec.preset, "Model preset: tiny|small")
        ->capture_default_str();
    run->add_option("--layers", run_spec.layers, "Override: decoder layers");
    run->add_option("--heads", run_spec.heads, "Override: attention heads");
    run->add_option("--head-dim", run_spec.head_dim, "Override: head dimension");
    run->add_option("--vocab", run_spec.vocab, "Override: vocabulary size");
    run->add_option("--max-seq", run_spec.max_seq, "Override: maximum sequence length");
    run->add_option("--seed", run_spec.seed, "Model weight seed")->capture_default_str();
    run->add_option("--sampling-seed", run_spec.sampling_seed, "Sampler seed")
        ->capture_default_str();
    run->add_option("--temperature", run_spec.temperature,
                    "Sampling temperature; 0 = greedy argmax")
        ->capture_default_str();
    run->add_option("--images", run_spec.images, "Number of images in the prompt")
        ->capture_default_str();
    run->add_option("--image-tokens", run_spec.image_tokens, "Visual tokens per image")
        ->capture_default_str();
    run->add_option("--prompt-file", run_spec.prompt_file,
                    "Prompt template file (default: built-in template)");
    run->add_option("--question", run_spec.question, "Trailing question text");
    run->add_option("--mode", run_spec.mode, "pulsefocus|plan-focus-nogate|free-cot")
        ->capture_default_str();
    run->add_option("--lambda", run_spec.lambda, "Gate strength")->capture_default_str();
    run->add_option("--plan-max", run_spec.plan_max, "Plan block token budget")
        ->capture_default_str();
    run->add_option("--focus-max", run_spec.focus_max, "Focus block token budget")
        ->capture_default_str();
    run->add_option("--max-cycles", run_spec.max_cycles, "Plan/focus cycle cap")
        ->capture_default_str();
    run->add_option("--total-cap", run_spec.total_cap, "Episode-wide generated token cap")
        ->capture_default_str();
    run->add_option("--scripted", run_spec.scripted,
                    "Scripted transcript file teacher-forced through the model");
    run->add_option("--out-dir", run_spec.out_dir,
                    "Output directory (env PULSEFOCUS_OUT_DIR)")
        ->capture_default_str();
    run->add_option("--trace", run_spec.trace_path, "Trace output path");
    run->add_option("--transcript", run_spec.transcript_path, "Transcript output path");
    run->add_option("--tag", run_spec.tag, "Grouping tag stored in the trace header");
    run->add_flag("--retain-raw", run_spec.retain_raw,
                  "Record raw per-(layer,head) rows in the trace");
    run->add_flag("--mass-only", run_spec.mass_only,
                  "Write per-image masses instead of full rows");

    AnalyzeSpec analyze_spec;
    if (const char* env = std::getenv("PULSEFOCUS_OUT_DIR")) analyze_spec.out_dir = env;
    CLI::App* analyze = app.add_subcommand("analyze", "Reduce a trace to report CSVs");
    analyze->add_option("trace", analyze_spec.trace_path, "Trace file")->required();
    analyze->add_flag("--pulse", analyze_spec.pulse, "Per-step image mass series");
    analyze->add_flag("--colouring", analyze_spec.colouring, "Dominant-image colouring");
    analyze->add_flag("--alignment", analyze_spec.alignment, "Focus alignment report");
    analyze->add_option("--baseline", analyze_spec.baseline_path,
                        "Baseline trace for the alignment delta");
    analyze->add_option("--threshold", analyze_spec.threshold, "Diffuseness threshold")
        ->capture_default_str();
    analyze->add_option("--out-dir", analyze_spec.out_dir, "Output directory")
        ->capture_default_str();

    std::vector<std::string> bias_paths;
    std::string group_by = "tag";
    std::string bias_out = "bias.csv";
    CLI::App* bias = app.add_subcommand("bias", "Aggregate positional bias across traces");
    bias->add_option("traces", bias_paths, "Trace files")->required();
    bias->add_option("--group-by", group_by, "Std grouping: tag|file|none")
        ->capture_default_str();
    bias->add_option("--out", bias_out, "Output CSV path")->capture_default_str();

    std::string validate_path;
    int validate_images = 0;
    CLI::App* validate = app.add_subcommand("validate", "Validate a transcript file");
    validate->add_option("transcript", validate_path, "Transcript file")->required();
    validate->add_option("--num-images,-n", validate_images, "Image count N")->required();

    std::string plot_trace, plot_out, plot_dir = ".";
    if (const char* env = std::getenv("PULSEFOCUS_OUT_DIR")) plot_dir = env;
    CLI::App* plot = app.add_subcommand("plot-data", "Emit long-format pulse CSV for plotting");
    plot->add_option("trace", plot_trace, "Trace file")->required();
    plot->add_option("--out", plot_out, "Output CSV path");
    plot->add_option("--out-dir", plot_dir, "Output directory")->capture_default_str();

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitBadInput;
    }

    try {
        pf::kernels::set_backend(kernels.c_str());
        if (run->parsed()) return cmd_run(run_spec);
        if (analyze->parsed()) return cmd_analyze(analyze_spec);
        if (bias->parsed()) return cmd_bias(bias_paths, group_by, bias_out);
        if (validate->parsed()) return cmd_validate(validate_path, validate_images);
        if (plot->parsed()) return cmd_plot_data(plot_trace, plot_out, plot_dir);
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadInput;
    }
    return kExitOk;
}
