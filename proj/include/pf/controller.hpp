#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pf/analytics.hpp"
#include "pf/format.hpp"
#include "pf/gating.hpp"
#include "pf/model.hpp"

namespace pf {

// Byte-level codec: token ids below 256 are that byte; ids at or above 256
// are image filler ids that only appear in prompts and decode to nothing.
// Keeps every scripted transcript tokenizable and makes block boundaries
// fall on token boundaries.
namespace codec {
constexpr int kByteVocab = 256;
std::vector<int> encode(std::string_view text);
std::string decode_token(int token);
}  // namespace codec

struct BudgetConfig {
    int plan_max_tokens = 256;
    int focus_max_tokens = 192;
    int max_cycles = 12;
    // Episode-wide safety net over generated tokens.
    int total_token_cap = 256 * 12 + 192 * 12 + 512;

    void validate() const;  // throws on non-positive values
};

enum class TerminationReason { AnswerEmitted, EndDirective, BudgetExhausted, GrammarError };

const char* termination_reason_name(TerminationReason r);

struct BudgetState {
    int tokens_in_current_block = 0;
    int cycles_completed = 0;
    std::optional<TerminationReason> terminated_reason;
};

// Where the next token comes from: a sampler over the model's logits, or a
// scripted byte stream teacher-forced through the real model.
class TokenSource {
public:
    virtual ~TokenSource() = default;
    // nullopt = the source is exhausted.
    virtual std::optional<int> next_token(std::span<const double> logits) = 0;
    // Forced-closure resync: the controller injected `literal` into the
    // transcript; a scripted source skips its own copy, samplers ignore it.
    virtual void skip_past(std::string_view literal);
};

class GreedySource final : public TokenSource {
public:
    std::optional<int> next_token(std::span<const double> logits) override;
};

class TemperatureSource final : public TokenSource {
public:
    TemperatureSource(double temperature, std::uint64_t seed);
    std::optional<int> next_token(std::span<const double> logits) override;

private:
    double temperature_;
    std::uint64_t state_;
};

class ScriptedSource final : public TokenSource {
public:
    explicit ScriptedSource(std::string script);
    std::optional<int> next_token(std::span<const double> logits) override;
    void skip_past(std::string_view literal) override;

private:
    std::string script_;
    std::size_t pos_ = 0;
};

struct EpisodeResult {
    std::string transcript;
    std::vector<BlockEvent> events;
    AttentionTrace trace;
    BudgetState budget_state;
    std::optional<std::string> answer;  // trimmed <answer> body
};

// Gate for the upcoming decode step. Non-null only in PulseFocus mode with
// lambda > 0, while the parser sits inside a focus block body and the token
// does not begin a tag; tag-delimiter tokens are never gated.
std::optional<GateVector> gate_schedule(EpisodeMode mode, const GateConfig& gate_cfg,
                                        StreamParser::Mode parser_mode, bool in_tag,
                                        char token_first_char, const std::vector<int>& focus,
                                        const TokenLayout& layout, std::size_t attended_len);

// Runs one episode: drives decode steps, feeds generated text through the
// grammar, gates focus-block bodies (PulseFocus), enforces the per-block
// and cycle budgets, and terminates on END / <answer> / budget exhaustion /
// an unrecoverable grammar error. The returned transcript always parses
// cleanly in the grammar-enforcing modes (forced closures keep it valid).
EpisodeResult run_episode(const Model& model, const std::vector<int>& prompt_tokens,
                          const TokenLayout& layout, TokenSource& source,
                          const GateConfig& gate_cfg, const BudgetConfig& budget_cfg,
                          EpisodeMode mode, std::uint64_t sampling_seed = 0,
                          bool retain_raw = false);

inline constexpr const char* kDefaultPromptTemplate =
    "You are given a set of photographs. Examine them one at a time: write a "
    "<plan> block that ends with 'Next focus: Ix' (or END when done), then a "
    "<focus:Ix> block with your observation. Finish with a Summary: line and "
    "an <answer> block.\n";

inline constexpr const char* kDefaultQuestion =
    "How many objects appear across the photographs?\n";

struct PromptSpec {
    int images = 3;
    int image_tokens = 32;
    std::string prompt_text = kDefaultPromptTemplate;
    std::string question = kDefaultQuestion;
};

// Prompt = template text, image segments, question text. Image filler ids
// are drawn from [256, vocab) with the model seed, so a (config, spec) pair
// pins the prompt bit-exactly.
std::pair<std::vector<int>, TokenLayout> build_image_prompt(const ModelConfig& cfg,
                                                            const PromptSpec& spec);

}  // namespace pf
