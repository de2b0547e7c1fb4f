#include "pf/format.hpp"

#include <algorithm>
#include <cctype>

namespace pf {

namespace {

constexpr std::string_view kSummaryLiteral = "Summary:";
constexpr std::string_view kDirectivePrefix = "Next focus: ";
constexpr std::size_t kMaxTagLen = 32;

inline bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Strict index literal: "I" then digits, no leading zero. Returns the value
// and advances `pos` past it; -1 when the text at `pos` is not an index.
int parse_index(std::string_view s, std::size_t& pos) {
    if (pos >= s.size() || s[pos] != 'I') return -1;
    std::size_t p = pos + 1;
    if (p >= s.size() || !std::isdigit(static_cast<unsigned char>(s[p]))) return -1;
    if (s[p] == '0') return -1;  // forbids I0 and I05 alike
    long value = 0;
    while (p < s.size() && std::isdigit(static_cast<unsigned char>(s[p]))) {
        value = value * 10 + (s[p] - '0');
        if (value > 1'000'000) return -1;
        ++p;
    }
    pos = p;
    return static_cast<int>(value);
}

std::optional<PlanDirective> extract_directive_at(std::string_view body, std::size_t& start,
                                                  std::size_t& end) {
    std::size_t trimmed = body.size();
    while (trimmed > 0 && is_ws(body[trimmed - 1])) --trimmed;
    body = body.substr(0, trimmed);
    end = trimmed;

    if (body.size() >= 3 && body.substr(body.size() - 3) == "END" &&
        (body.size() == 3 || is_ws(body[body.size() - 4]))) {
        start = body.size() - 3;
        return PlanDirective{true, {}};
    }

    const std::size_t pos = body.rfind(kDirectivePrefix);
    if (pos == std::string_view::npos) return std::nullopt;

    std::size_t p = pos + kDirectivePrefix.size();
    PlanDirective dir;
    int first = parse_index(body, p);
    if (first < 0) return std::nullopt;
    dir.images.push_back(first);
    if (p < body.size()) {
        constexpr std::string_view kAnd = " and ";
        if (body.substr(p, kAnd.size()) != kAnd) return std::nullopt;
        p += kAnd.size();
        int second = parse_index(body, p);
        if (second < 0 || second == first) return std::nullopt;
        dir.images.push_back(second);
    }
    if (p != body.size()) return std::nullopt;  // directive must end the body
    start = pos;
    return dir;
}

bool same_image_set(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    return sa == sb;
}

std::string join_images(const std::vector<int>& images) {
    std::string out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (i) out += ",";
        out += "I" + std::to_string(images[i]);
    }
    return out;
}

}  // namespace

std::optional<PlanDirective> extract_plan_directive(std::string_view body) {
    std::size_t start = 0, end = 0;
    return extract_directive_at(body, start, end);
}

StreamParser::StreamParser(int num_images) : num_images_(num_images) {
    if (num_images < 0) throw std::invalid_argument("parser: negative image count");
}

void StreamParser::feed(std::string_view chunk, std::vector<BlockEvent>& out) {
    for (char c : chunk) {
        consume(c, out);
        ++offset_;
    }
}

std::vector<BlockEvent> StreamParser::feed(std::string_view chunk) {
    std::vector<BlockEvent> out;
    feed(chunk, out);
    return out;
}

void StreamParser::flush_text(std::vector<BlockEvent>& out) {
    if (pending_text_.empty()) return;
    BlockEvent ev;
    ev.kind = mode_ == Mode::InAnswer ? EventKind::AnswerText : EventKind::Text;
    ev.text = std::move(pending_text_);
    ev.char_begin = pending_start_;
    ev.char_end = pending_start_ + ev.text.size();
    pending_text_.clear();
    out.push_back(std::move(ev));
}

void StreamParser::consume(char c, std::vector<BlockEvent>& out) {
    if (!tag_buf_.empty()) {
        tag_buf_ += c;
        if (c == '>') {
            complete_tag(out);
        } else if (tag_buf_.size() > kMaxTagLen) {
            throw ParseError("malformed tag: no '>' within " + std::to_string(kMaxTagLen) +
                                 " characters",
                             tag_start_);
        }
        return;
    }

    if (c == '<') {
        if (mode_ == Mode::Terminated)
            throw ParseError("content after transcript terminated", offset_);
        if (mode_ == Mode::OutsideBlock && !summary_buf_.empty()) {
            pending_text_ += summary_buf_;
            summary_buf_.clear();
            summary_matched_ = -1;
        }
        flush_text(out);
        tag_buf_ = "<";
        tag_start_ = offset_;
        return;
    }

    if (mode_ == Mode::Terminated) {
        if (!is_ws(c)) throw ParseError("content after transcript terminated", offset_);
        if (pending_text_.empty()) pending_start_ = offset_;
        pending_text_ += c;
        return;
    }

    if (mode_ == Mode::OutsideBlock && summary_matched_ >= 0) {
        if (pending_text_.empty() && summary_buf_.empty()) pending_start_ = offset_;
        if (summary_matched_ == 0 && is_ws(c)) {
            pending_text_ += c;
            return;
        }
        if (c == kSummaryLiteral[static_cast<std::size_t>(summary_matched_)]) {
            summary_buf_ += c;
            if (++summary_matched_ == static_cast<int>(kSummaryLiteral.size())) {
                // Leading whitespace stays a Text event; the literal opens
                // the summary trailer.
                const std::size_t literal_start = offset_ + 1 - kSummaryLiteral.size();
                flush_text(out);
                summary_buf_.clear();
                BlockEvent ev;
                ev.kind = EventKind::BlockStart;
                ev.block = BlockKind::Summary;
                ev.char_begin = literal_start;
                ev.char_end = offset_ + 1;
                out.push_back(std::move(ev));
                mode_ = Mode::InSummary;
                pending_start_ = offset_ + 1;
            }
        } else {
            pending_text_ += summary_buf_;
            summary_buf_.clear();
            summary_matched_ = -1;
            pending_text_ += c;
        }
        return;
    }

    if (pending_text_.empty()) pending_start_ = offset_;
    pending_text_ += c;
    if (mode_ == Mode::InPlan) plan_body_ += c;
}

void StreamParser::open_block(BlockKind kind, std::vector<int> images,
                              std::vector<BlockEvent>& out) {
    BlockEvent ev;
    ev.kind = EventKind::BlockStart;
    ev.block = kind;
    ev.images = std::move(images);
    ev.char_begin = tag_start_;
    ev.char_end = offset_ + 1;
    out.push_back(std::move(ev));
}

void StreamParser::complete_tag(std::vector<BlockEvent>& out) {
    const std::string tag = tag_buf_;
    const bool in_block =
        mode_ == Mode::InPlan || mode_ == Mode::InFocus || mode_ == Mode::InAnswer;

    auto require_open_position = [&](const char* what) {
        if (in_block) throw ParseError(std::string("nested block open: ") + what, tag_start_);
        if (mode_ == Mode::InSummary)
            throw ParseError(std::string(what) + " after the summary trailer", tag_start_);
        if (mode_ == Mode::Terminated)
            throw ParseError("content after transcript terminated", tag_start_);
    };

    if (tag == "<plan>") {
        require_open_position("<plan>");
        open_block(BlockKind::Plan, {}, out);
        mode_ = Mode::InPlan;
        plan_body_.clear();
        body_start_ = offset_ + 1;
        pending_start_ = offset_ + 1;
    } else if (tag == "</plan>") {
        if (mode_ != Mode::InPlan)
            throw ParseError("'</plan>' without matching <plan>", tag_start_);
        std::size_t dstart = 0, dend = 0;
        if (auto dir = extract_directive_at(plan_body_, dstart, dend)) {
            BlockEvent dev;
            dev.kind = EventKind::Directive;
            dev.directive = *dir;
            dev.char_begin = body_start_ + dstart;
            dev.char_end = body_start_ + dend;
            out.push_back(std::move(dev));
            pending_directive_ = *dir;
        } else {
            pending_directive_.reset();
        }
        BlockEvent ev;
        ev.kind = EventKind::BlockEnd;
        ev.block = BlockKind::Plan;
        ev.char_begin = tag_start_;
        ev.char_end = offset_ + 1;
        out.push_back(std::move(ev));
        mode_ = Mode::OutsideBlock;
        summary_matched_ = 0;
        pending_start_ = offset_ + 1;
    } else if (tag.rfind("<focus:", 0) == 0) {
        require_open_position("<focus:...>");
        std::string_view inner{tag};
        inner = inner.substr(7, tag.size() - 8);  // strip "<focus:" and ">"
        std::vector<int> images;
        std::size_t p = 0;
        while (true) {
            int idx = parse_index(inner, p);
            if (idx < 0) throw ParseError("malformed tag " + tag, tag_start_);
            images.push_back(idx);
            if (p == inner.size()) break;
            if (inner[p] != ',') throw ParseError("malformed tag " + tag, tag_start_);
            ++p;
            if (images.size() == 2)
                throw ParseError("focus tag references more than 2 images", tag_start_);
        }
        for (int idx : images)
            if (idx > num_images_)
                throw ParseError("focus index I" + std::to_string(idx) +
                                     " out of range (N=" + std::to_string(num_images_) + ")",
                                 tag_start_);
        if (images.size() == 2 && images[0] == images[1])
            throw ParseError("duplicate image index in focus tag", tag_start_);

        open_block(BlockKind::Focus, images, out);
        if (pending_directive_) {
            const std::vector<int> planned =
                pending_directive_->is_end ? std::vector<int>{} : pending_directive_->images;
            if (pending_directive_->is_end || !same_image_set(planned, images)) {
                BlockEvent mev;
                mev.kind = EventKind::Mismatch;
                mev.planned = planned;
                mev.images = images;
                mev.char_begin = tag_start_;
                mev.char_end = offset_ + 1;
                out.push_back(std::move(mev));
            }
            pending_directive_.reset();
        }
        mode_ = Mode::InFocus;
        focus_images_ = images;
        pending_start_ = offset_ + 1;
    } else if (tag == "</focus>") {
        if (mode_ != Mode::InFocus)
            throw ParseError("'</focus>' without matching <focus:...>", tag_start_);
        BlockEvent ev;
        ev.kind = EventKind::BlockEnd;
        ev.block = BlockKind::Focus;
        ev.images = focus_images_;
        ev.char_begin = tag_start_;
        ev.char_end = offset_ + 1;
        out.push_back(std::move(ev));
        focus_images_.clear();
        mode_ = Mode::OutsideBlock;
        summary_matched_ = 0;
        pending_start_ = offset_ + 1;
    } else if (tag == "<answer>") {
        if (in_block) throw ParseError("nested block open: <answer>", tag_start_);
        if (mode_ == Mode::Terminated)
            throw ParseError("content after transcript terminated", tag_start_);
        if (mode_ == Mode::InSummary) {
            BlockEvent sev;
            sev.kind = EventKind::BlockEnd;
            sev.block = BlockKind::Summary;
            sev.char_begin = tag_start_;
            sev.char_end = tag_start_;
            out.push_back(std::move(sev));
        }
        open_block(BlockKind::Answer, {}, out);
        mode_ = Mode::InAnswer;
        pending_start_ = offset_ + 1;
    } else if (tag == "</answer>") {
        if (mode_ != Mode::InAnswer)
            throw ParseError("'</answer>' without matching <answer>", tag_start_);
        BlockEvent ev;
        ev.kind = EventKind::BlockEnd;
        ev.block = BlockKind::Answer;
        ev.char_begin = tag_start_;
        ev.char_end = offset_ + 1;
        out.push_back(std::move(ev));
        mode_ = Mode::Terminated;
        pending_start_ = offset_ + 1;
    } else {
        throw ParseError("malformed tag " + tag, tag_start_);
    }
    tag_buf_.clear();
}

void StreamParser::feed_end(std::vector<BlockEvent>& out) {
    if (in_tag()) throw ParseError("unterminated tag at end of input", tag_start_);
    switch (mode_) {
        case Mode::InPlan:
        case Mode::InFocus:
        case Mode::InAnswer:
            throw ParseError("unclosed block at end of input", offset_);
        case Mode::InSummary: {
            flush_text(out);
            BlockEvent ev;
            ev.kind = EventKind::BlockEnd;
            ev.block = BlockKind::Summary;
            ev.char_begin = offset_;
            ev.char_end = offset_;
            out.push_back(std::move(ev));
            break;
        }
        case Mode::OutsideBlock:
            pending_text_ += summary_buf_;
            summary_buf_.clear();
            flush_text(out);
            break;
        case Mode::Terminated:
            flush_text(out);
            break;
    }
    mode_ = Mode::Terminated;
}

std::string serialize(const std::vector<BlockEvent>& events) {
    std::string out;
    std::optional<BlockKind> open;
    for (const BlockEvent& ev : events) {
        switch (ev.kind) {
            case EventKind::BlockStart:
                if (open) throw std::invalid_argument("serialize: block start inside a block");
                switch (ev.block) {
                    case BlockKind::Plan: out += "<plan>"; break;
                    case BlockKind::Focus:
                        if (ev.images.empty() || ev.images.size() > 2)
                            throw std::invalid_argument(
                                "serialize: focus block must carry 1 or 2 images");
                        out += "<focus:" + join_images(ev.images) + ">";
                        break;
                    case BlockKind::Summary: out += kSummaryLiteral; break;
                    case BlockKind::Answer: out += "<answer>"; break;
                }
                open = ev.block;
                break;
            case EventKind::BlockEnd:
                if (open != ev.block)
                    throw std::invalid_argument("serialize: block end without matching start");
                switch (ev.block) {
                    case BlockKind::Plan: out += "</plan>"; break;
                    case BlockKind::Focus: out += "</focus>"; break;
                    case BlockKind::Summary: break;
                    case BlockKind::Answer: out += "</answer>"; break;
                }
                open.reset();
                break;
            case EventKind::Text:
                if (open == BlockKind::Answer)
                    throw std::invalid_argument("serialize: Text event inside <answer>");
                out += ev.text;
                break;
            case EventKind::AnswerText:
                if (open != BlockKind::Answer)
                    throw std::invalid_argument("serialize: AnswerText outside <answer>");
                out += ev.text;
                break;
            case EventKind::Directive:
                if (open != BlockKind::Plan)
                    throw std::invalid_argument("serialize: directive outside a plan block");
                break;  // directive text lives in the body
            case EventKind::Mismatch:
                if (open != BlockKind::Focus)
                    throw std::invalid_argument("serialize: mismatch outside a focus block");
                break;
        }
    }
    if (open) throw std::invalid_argument("serialize: unclosed block");
    return out;
}

bool ValidationReport::valid() const {
    return count(Severity::Error) == 0;
}

std::size_t ValidationReport::count(Severity s) const {
    std::size_t n = 0;
    for (const Finding& f : findings)
        if (f.severity == s) ++n;
    return n;
}

ValidationReport validate_transcript(std::string_view text, int num_images) {
    ValidationReport report;
    StreamParser parser(num_images);
    bool hard_error = false;
    try {
        parser.feed(text, report.events);
        parser.feed_end(report.events);
    } catch (const ParseError& e) {
        report.findings.push_back({Severity::Error, e.what(), e.offset()});
        hard_error = true;
    }

    bool any_focus = false;
    bool directive_seen = false;
    for (const BlockEvent& ev : report.events) {
        switch (ev.kind) {
            case EventKind::BlockStart:
                if (ev.block == BlockKind::Plan) directive_seen = false;
                if (ev.block == BlockKind::Focus) any_focus = true;
                break;
            case EventKind::Directive: directive_seen = true; break;
            case EventKind::BlockEnd:
                if (ev.block == BlockKind::Plan && !directive_seen)
                    report.findings.push_back({Severity::Warning,
                                               "plan block lacks a 'Next focus:'/'END' directive",
                                               ev.char_begin});
                break;
            case EventKind::Mismatch: {
                const std::string planned =
                    ev.planned.empty() ? std::string("END") : join_images(ev.planned);
                report.findings.push_back(
                    {Severity::Warning,
                     "plan directive targeted " + planned + " but focus opened " +
                         join_images(ev.images),
                     ev.char_begin});
                break;
            }
            default: break;
        }
    }
    if (!hard_error && !any_focus)
        report.findings.push_back({Severity::Note, "transcript contains no focus blocks", 0});

    std::stable_sort(report.findings.begin(), report.findings.end(),
                     [](const Finding& a, const Finding& b) { return a.offset < b.offset; });
    return report;
}

}  // namespace pf
