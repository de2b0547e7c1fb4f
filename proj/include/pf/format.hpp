#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pf {

// Output grammar (full EBNF in docs/grammar.md):
//
//   transcript := (plan | focus | text)* summary? answer? ws*
//   plan       := "<plan>" body "</plan>"         body ends with a directive
//   focus      := "<focus:I" idx ("," "I" idx)? ">" body "</focus>"
//   summary    := "Summary:" text                 untagged trailer
//   answer     := "<answer>" text "</answer>"
//   directive  := "Next focus: I" idx (" and I" idx)? | "END"
//
// Tags and the directive literals are case-sensitive. The grammar is flat:
// no block ever contains another.

enum class BlockKind { Plan, Focus, Summary, Answer };

struct PlanDirective {
    bool is_end = false;
    std::vector<int> images;  // 1 or 2 indices when !is_end
};

// Extracts the directive that ends a plan body (trailing whitespace
// tolerated); nullopt when the body does not end with one.
std::optional<PlanDirective> extract_plan_directive(std::string_view body);

enum class EventKind {
    BlockStart,
    BlockEnd,
    Directive,
    Text,        // maximal body / inter-block text run
    AnswerText,  // text run inside <answer>
    Mismatch,    // focus opened on different images than the plan directive
};

struct BlockEvent {
    EventKind kind = EventKind::Text;
    BlockKind block = BlockKind::Plan;  // BlockStart / BlockEnd
    std::vector<int> images;            // Focus start/end; Mismatch actual
    PlanDirective directive;            // Directive events
    std::vector<int> planned;           // Mismatch planned ({} = END was planned)
    std::string text;                   // Text / AnswerText payload
    std::size_t char_begin = 0;
    std::size_t char_end = 0;
    std::ptrdiff_t token_begin = -1;  // filled by the controller
    std::ptrdiff_t token_end = -1;
    bool injected = false;  // produced by controller-injected closure text
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t offset)
        : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Incremental character-level parser. A value type: copy it to snapshot,
// assign back to roll a failed feed back. Tags may be split across chunk
// boundaries; the emitted event stream is identical for every chunking of
// the same input (text runs are flushed only at tag boundaries).
class StreamParser {
public:
    enum class Mode { OutsideBlock, InPlan, InFocus, InSummary, InAnswer, Terminated };

    explicit StreamParser(int num_images);

    // Appends events to `out`. Throws ParseError on malformed input; events
    // emitted before the offending character remain in `out` and the state
    // keeps everything consumed before it.
    void feed(std::string_view chunk, std::vector<BlockEvent>& out);
    std::vector<BlockEvent> feed(std::string_view chunk);

    // End of stream: flushes trailing text, closes a Summary trailer.
    // Throws ParseError on an unterminated tag or unclosed block.
    void feed_end(std::vector<BlockEvent>& out);

    Mode mode() const { return mode_; }
    bool in_tag() const { return !tag_buf_.empty(); }
    std::size_t tag_start() const { return tag_start_; }
    std::size_t offset() const { return offset_; }
    const std::vector<int>& focus_indices() const { return focus_images_; }

private:
    void consume(char c, std::vector<BlockEvent>& out);
    void flush_text(std::vector<BlockEvent>& out);
    void complete_tag(std::vector<BlockEvent>& out);
    void open_block(BlockKind kind, std::vector<int> images, std::vector<BlockEvent>& out);

    int num_images_;
    Mode mode_ = Mode::OutsideBlock;
    std::size_t offset_ = 0;

    std::string tag_buf_;
    std::size_t tag_start_ = 0;

    std::string pending_text_;
    std::size_t pending_start_ = 0;

    std::string plan_body_;
    std::size_t body_start_ = 0;

    std::vector<int> focus_images_;
    std::optional<PlanDirective> pending_directive_;

    // "Summary:" literal matcher; active only while an outside-block text
    // run is still all-whitespace.
    int summary_matched_ = 0;  // -1 once the run can no longer open a summary
    std::string summary_buf_;
};

// Reconstructs the transcript from an event stream; byte-exact inverse of
// parsing for grammar-valid input. Throws std::invalid_argument on an
// event sequence no parse could have produced.
std::string serialize(const std::vector<BlockEvent>& events);

enum class Severity { Error, Warning, Note };

struct Finding {
    Severity severity = Severity::Note;
    std::string message;
    std::size_t offset = 0;
};

struct ValidationReport {
    std::vector<Finding> findings;
    std::vector<BlockEvent> events;  // events parsed before any hard error

    bool valid() const;  // no Error-severity findings
    std::size_t count(Severity s) const;
};

// Full-text validation: hard grammar violations become Error findings,
// plan/focus mismatches and directive-less plans become Warnings, an
// absence of focus blocks is a Note.
ValidationReport validate_transcript(std::string_view text, int num_images);

}  // namespace pf
