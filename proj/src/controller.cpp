#include "pf/controller.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "pf/kernels.hpp"

namespace pf {

namespace codec {

std::vector<int> encode(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(static_cast<unsigned char>(c));
    return out;
}

std::string decode_token(int token) {
    if (token < 0) throw std::invalid_argument("codec: negative token id");
    if (token >= kByteVocab) return {};
    return std::string(1, static_cast<char>(static_cast<unsigned char>(token)));
}

}  // namespace codec

void BudgetConfig::validate() const {
    if (plan_max_tokens <= 0 || focus_max_tokens <= 0 || max_cycles <= 0 ||
        total_token_cap <= 0)
        throw std::invalid_argument("budget config: all limits must be positive");
}

const char* termination_reason_name(TerminationReason r) {
    switch (r) {
        case TerminationReason::AnswerEmitted: return "answer";
        case TerminationReason::EndDirective: return "end-directive";
        case TerminationReason::BudgetExhausted: return "budget-exhausted";
        case TerminationReason::GrammarError: return "grammar-error";
    }
    return "?";
}

void TokenSource::skip_past(std::string_view) {}

std::optional<int> GreedySource::next_token(std::span<const double> logits) {
    const std::size_t n = std::min<std::size_t>(logits.size(), codec::kByteVocab);
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (logits[i] > logits[best]) best = i;
    return static_cast<int>(best);
}

TemperatureSource::TemperatureSource(double temperature, std::uint64_t seed)
    : temperature_(temperature), state_(seed ^ 0x9e3779b97f4a7c15ull) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
}

std::optional<int> TemperatureSource::next_token(std::span<const double> logits) {
    const std::size_t n = std::min<std::size_t>(logits.size(), codec::kByteVocab);
    std::vector<double> probs(logits.begin(), logits.begin() + n);
    for (double& v : probs) v /= temperature_;
    kernels::softmax(probs.data(), n);

    // splitmix64 step; portable and seed-stable
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z ^= z >> 31;
    const double u = static_cast<double>(z >> 11) * 0x1.0p-53;

    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(n - 1);
}

ScriptedSource::ScriptedSource(std::string script) : script_(std::move(script)) {}

std::optional<int> ScriptedSource::next_token(std::span<const double>) {
    if (pos_ >= script_.size()) return std::nullopt;
    return static_cast<unsigned char>(script_[pos_++]);
}

void ScriptedSource::skip_past(std::string_view literal) {
    const std::size_t found = script_.find(literal, pos_);
    pos_ = found == std::string::npos ? script_.size() : found + literal.size();
}

std::optional<GateVector> gate_schedule(EpisodeMode mode, const GateConfig& gate_cfg,
                                        StreamParser::Mode parser_mode, bool in_tag,
                                        char token_first_char, const std::vector<int>& focus,
                                        const TokenLayout& layout, std::size_t attended_len) {
    if (mode != EpisodeMode::PulseFocus) return std::nullopt;
    if (gate_cfg.lambda == 0.0) return std::nullopt;
    if (parser_mode != StreamParser::Mode::InFocus) return std::nullopt;
    if (in_tag || token_first_char == '<') return std::nullopt;
    return build_gate(layout, FocusSet{focus}, gate_cfg, attended_len);
}

namespace {

struct EpisodeRunner {
    const Model& model;
    const TokenLayout& layout;
    TokenSource& source;
    const GateConfig& gate_cfg;
    const BudgetConfig& budget;
    const EpisodeMode mode;
    const bool retain_raw;

    DecodeSession session;
    StreamParser parser;
    EpisodeResult result;

    int generated_tokens = 0;
    int effective_total_cap = 0;
    std::size_t block_body_start = 0;  // transcript offset of the open block's body
    bool last_closed_was_plan = false;
    bool end_directive_pending = false;  // Directive(End) seen inside the open plan
    std::vector<bool> focused_ever;      // [j-1]: image appeared in a focus block
    std::vector<std::ptrdiff_t> char_to_step;
    std::string answer_text;

    EpisodeRunner(const Model& m, const std::vector<int>& prompt, const TokenLayout& lay,
                  TokenSource& src, const GateConfig& gc, const BudgetConfig& bc,
                  EpisodeMode md, bool raw)
        : model(m),
          layout(lay),
          source(src),
          gate_cfg(gc),
          budget(bc),
          mode(md),
          retain_raw(raw),
          session(prefill(m, prompt, lay)),
          parser(lay.num_images()) {
        focused_ever.assign(static_cast<std::size_t>(lay.num_images()), false);
        const int room = model.config().max_seq_len - static_cast<int>(prompt.size()) - 64;
        effective_total_cap = std::min(budget.total_token_cap, room);
        if (effective_total_cap <= 0)
            throw std::invalid_argument("episode: prompt leaves no room under max_seq_len");
    }

    bool grammar_enforced() const { return mode != EpisodeMode::FreeCoT; }

    StepMode classify(char c) const {
        if (!grammar_enforced()) return StepMode::Free;
        if (parser.in_tag() || c == '<') return StepMode::Tag;
        switch (parser.mode()) {
            case StreamParser::Mode::InPlan: return StepMode::Plan;
            case StreamParser::Mode::InFocus: return StepMode::Focus;
            case StreamParser::Mode::InSummary: return StepMode::Summary;
            case StreamParser::Mode::InAnswer: return StepMode::Answer;
            default: return StepMode::Outside;
        }
    }

    // Feeds one byte to the model (when the sequence still has room) and
    // appends it to the transcript bookkeeping. Parser feeding is the
    // caller's job. Returns false when the model step was skipped.
    bool model_step(char c, const GateVector* gate, StepMode annotation, bool injected) {
        const int token = static_cast<unsigned char>(c);
        bool stepped = false;
        if (session.current_len() < static_cast<std::size_t>(model.config().max_seq_len)) {
            StepAttention attn =
                session.decode_step(token, gate, retain_raw);
            TraceStep step;
            step.step_index = attn.step_index;
            step.token_text = std::string(1, c);
            step.mode = annotation;
            if (annotation == StepMode::Focus) step.focus = parser.focus_indices();
            step.gated = gate != nullptr;
            step.injected = injected;
            step.reduced_row = std::move(attn.reduced_row);
            step.raw_rows = std::move(attn.raw_rows);
            result.trace.steps.push_back(std::move(step));
            char_to_step.push_back(static_cast<std::ptrdiff_t>(result.trace.steps.size()) - 1);
            stepped = true;
        } else {
            char_to_step.push_back(-1);
        }
        result.transcript += c;
        return stepped;
    }

    void fill_token_spans(std::vector<BlockEvent>& events) const {
        for (BlockEvent& ev : events) {
            if (ev.char_begin >= ev.char_end) continue;
            if (ev.char_end > char_to_step.size()) continue;  // span past model-fed text
            ev.token_begin = char_to_step[ev.char_begin];
            ev.token_end = char_to_step[ev.char_end - 1] + 1;
        }
    }

    // Processes parser events: budgets, cycle counting, termination marks.
    void handle_events(std::vector<BlockEvent>&& events, bool injected) {
        fill_token_spans(events);
        for (BlockEvent& ev : events) {
            ev.injected = injected;
            switch (ev.kind) {
                case EventKind::BlockStart:
                    result.budget_state.tokens_in_current_block = 0;
                    block_body_start = ev.char_end;
                    end_directive_pending = false;
                    if (ev.block == BlockKind::Focus)
                        for (int j : ev.images) focused_ever[static_cast<std::size_t>(j - 1)] = true;
                    break;
                case EventKind::Directive:
                    end_directive_pending = ev.directive.is_end;
                    break;
                case EventKind::BlockEnd:
                    if (ev.block == BlockKind::Plan) {
                        last_closed_was_plan = true;
                        if (end_directive_pending && !result.budget_state.terminated_reason)
                            result.budget_state.terminated_reason =
                                TerminationReason::EndDirective;
                    } else if (ev.block == BlockKind::Focus) {
                        if (last_closed_was_plan) {
                            ++result.budget_state.cycles_completed;
                            if (result.budget_state.cycles_completed >= budget.max_cycles &&
                                !result.budget_state.terminated_reason)
                                result.budget_state.terminated_reason =
                                    TerminationReason::BudgetExhausted;
                        }
                        last_closed_was_plan = false;
                    } else {
                        last_closed_was_plan = false;
                        if (ev.block == BlockKind::Answer &&
                            !result.budget_state.terminated_reason)
                            result.budget_state.terminated_reason =
                                TerminationReason::AnswerEmitted;
                    }
                    result.budget_state.tokens_in_current_block = 0;
                    break;
                case EventKind::AnswerText: answer_text += ev.text; break;
                default: break;
            }
            result.events.push_back(std::move(ev));
        }
    }

    // Injects controller-authored text: fed to the model ungated, appended
    // to the transcript, parsed, events marked injected.
    void inject(std::string_view text) {
        for (char c : text) {
            const StepMode annotation = classify(c);
            model_step(c, nullptr, annotation, /*injected=*/true);
            std::vector<BlockEvent> events;
            parser.feed(std::string_view(&c, 1), events);
            handle_events(std::move(events), /*injected=*/true);
        }
    }

    void force_close_open_block() {
        // A dangling partial tag cannot be extended with closure text; cut
        // it back to the last clean boundary first.
        if (parser.in_tag()) rollback_to_clean_state();
        switch (parser.mode()) {
            case StreamParser::Mode::InPlan: {
                const std::string body = result.transcript.substr(block_body_start);
                std::string closure;
                if (!extract_plan_directive(body)) {
                    int next = 0;
                    for (int j = 1; j <= layout.num_images(); ++j)
                        if (!focused_ever[static_cast<std::size_t>(j - 1)]) {
                            next = j;
                            break;
                        }
                    closure = next > 0 ? " Next focus: I" + std::to_string(next) : " END";
                }
                closure += "</plan>";
                inject(closure);
                source.skip_past("</plan>");
                break;
            }
            case StreamParser::Mode::InFocus:
                inject("</focus>");
                source.skip_past("</focus>");
                break;
            case StreamParser::Mode::InAnswer:
                inject("</answer>");
                source.skip_past("</answer>");
                break;
            default: break;  // summary and outside text need no closure
        }
    }

    void finish_parser() {
        if (!grammar_enforced()) return;
        std::vector<BlockEvent> events;
        parser.feed_end(events);
        handle_events(std::move(events), /*injected=*/false);
    }

    void terminate(TerminationReason reason) {
        if (!result.budget_state.terminated_reason)
            result.budget_state.terminated_reason = reason;
    }

    // Rolls the transcript back to the last cleanly parsed boundary after a
    // grammar error: the offending token never entered the transcript and a
    // dangling partial tag is cut. The parser is rebuilt over the prefix
    // (cheap at transcript scale; chunking invariance makes the replayed
    // events identical to the ones already collected).
    void rollback_to_clean_state() {
        std::size_t cut = result.transcript.size();
        if (parser.in_tag()) cut = std::min(cut, parser.tag_start());
        result.transcript.resize(cut);
        char_to_step.resize(cut);
        StreamParser fresh(layout.num_images());
        std::vector<BlockEvent> replay;
        fresh.feed(result.transcript, replay);
        parser = std::move(fresh);
    }

    void run_grammar_modes() {
        while (!result.budget_state.terminated_reason) {
            if (generated_tokens >= effective_total_cap) {
                force_close_open_block();
                terminate(TerminationReason::BudgetExhausted);
                break;
            }
            if (!parser.in_tag()) {
                const int cap = parser.mode() == StreamParser::Mode::InPlan
                                    ? budget.plan_max_tokens
                                : parser.mode() == StreamParser::Mode::InFocus
                                    ? budget.focus_max_tokens
                                    : 0;
                if (cap > 0 && result.budget_state.tokens_in_current_block >= cap) {
                    force_close_open_block();
                    continue;  // termination may have been set by the closure
                }
            }

            const auto token = source.next_token(session.last_logits());
            if (!token) {
                force_close_open_block();
                terminate(TerminationReason::BudgetExhausted);
                break;
            }
            const std::string text = codec::decode_token(*token);
            if (text.empty()) continue;  // non-byte id: nothing to feed downstream
            const char c = text[0];

            const auto gate =
                gate_schedule(mode, gate_cfg, parser.mode(), parser.in_tag(), c,
                              parser.focus_indices(), layout, session.current_len() + 1);
            const StepMode annotation = classify(c);

            StreamParser snapshot = parser;
            std::vector<BlockEvent> events;
            bool parse_ok = true;
            try {
                parser.feed(text, events);
            } catch (const ParseError&) {
                parser = std::move(snapshot);
                parse_ok = false;
            }

            if (!parse_ok) {
                rollback_to_clean_state();
                force_close_open_block();
                terminate(TerminationReason::GrammarError);
                break;
            }

            model_step(c, gate ? &*gate : nullptr, annotation, /*injected=*/false);
            ++generated_tokens;

            const bool opened_block = std::any_of(
                events.begin(), events.end(),
                [](const BlockEvent& ev) { return ev.kind == EventKind::BlockStart; });
            handle_events(std::move(events), /*injected=*/false);
            if (opened_block) {
                result.budget_state.tokens_in_current_block = 0;
            } else if (!parser.in_tag() && (parser.mode() == StreamParser::Mode::InPlan ||
                                            parser.mode() == StreamParser::Mode::InFocus)) {
                ++result.budget_state.tokens_in_current_block;
            }
        }
        if (parser.mode() != StreamParser::Mode::Terminated) finish_parser();
    }

    void run_free() {
        while (true) {
            if (generated_tokens >= effective_total_cap) {
                terminate(TerminationReason::BudgetExhausted);
                break;
            }
            const auto token = source.next_token(session.last_logits());
            if (!token) {
                terminate(TerminationReason::BudgetExhausted);
                break;
            }
            const std::string text = codec::decode_token(*token);
            if (text.empty()) continue;
            model_step(text[0], nullptr, StepMode::Free, /*injected=*/false);
            ++generated_tokens;
        }
    }

    EpisodeResult run() {
        result.trace.layout = layout;
        result.trace.meta.lambda = gate_cfg.lambda;
        result.trace.meta.mode = mode;
        result.trace.meta.model_seed = model.config().rng_seed;
        result.trace.meta.model_digest = model.config().digest();
        result.trace.meta.selected_layers = select_diagnostic_layers(model.config().num_layers);

        if (grammar_enforced())
            run_grammar_modes();
        else
            run_free();

        if (!answer_text.empty() || parser.mode() == StreamParser::Mode::Terminated) {
            std::string trimmed = answer_text;
            const auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
            while (!trimmed.empty() && is_ws(trimmed.front())) trimmed.erase(trimmed.begin());
            while (!trimmed.empty() && is_ws(trimmed.back())) trimmed.pop_back();
            if (!trimmed.empty()) result.answer = trimmed;
        }
        return result;
    }
};

}  // namespace

EpisodeResult run_episode(const Model& model, const std::vector<int>& prompt_tokens,
                          const TokenLayout& layout, TokenSource& source,
                          const GateConfig& gate_cfg, const BudgetConfig& budget_cfg,
                          EpisodeMode mode, std::uint64_t sampling_seed, bool retain_raw) {
    gate_cfg.validate();
    budget_cfg.validate();
    EpisodeRunner runner(model, prompt_tokens, layout, source, gate_cfg, budget_cfg, mode,
                         retain_raw);
    runner.result.trace.meta.sampling_seed = sampling_seed;
    return runner.run();
}

std::pair<std::vector<int>, TokenLayout> build_image_prompt(const ModelConfig& cfg,
                                                            const PromptSpec& spec) {
    if (spec.images < 0 || spec.image_tokens <= 0)
        throw std::invalid_argument("prompt spec: bad image counts");
    if (spec.images > 0 && cfg.vocab_size <= codec::kByteVocab)
        throw std::invalid_argument(
            "prompt spec: image prompts need vocab_size > 256 for image filler ids");

    std::vector<int> tokens = codec::encode(spec.prompt_text);
    std::vector<Segment> segments;
    std::size_t cursor = tokens.size();
    if (cursor > 0) segments.push_back({SegmentKind::Text, 0, 0, cursor});

    std::mt19937_64 rng(cfg.rng_seed ^ 0xa5a5a5a5a5a5a5a5ull);
    const int span = cfg.vocab_size - codec::kByteVocab;
    for (int j = 1; j <= spec.images; ++j) {
        for (int t = 0; t < spec.image_tokens; ++t)
            tokens.push_back(codec::kByteVocab + static_cast<int>(rng() % span));
        segments.push_back({SegmentKind::Image, j, cursor,
                            cursor + static_cast<std::size_t>(spec.image_tokens)});
        cursor += static_cast<std::size_t>(spec.image_tokens);
    }
    const std::vector<int> question = codec::encode(spec.question);
    if (!question.empty()) {
        tokens.insert(tokens.end(), question.begin(), question.end());
        segments.push_back({SegmentKind::Text, 0, cursor, cursor + question.size()});
    }
    return {std::move(tokens), TokenLayout(std::move(segments))};
}

}  // namespace pf
