#include "pf/layout.hpp"

#include <algorithm>
#include <stdexcept>

namespace pf {

TokenLayout::TokenLayout(std::vector<Segment> segments) : segments_(std::move(segments)) {
    std::size_t cursor = 0;
    std::vector<int> seen;
    for (const Segment& s : segments_) {
        if (s.begin != cursor)
            throw std::invalid_argument("layout: segments must be contiguous from 0");
        if (s.end < s.begin) throw std::invalid_argument("layout: inverted segment");
        if (s.kind == SegmentKind::Image) {
            if (s.image_index < 1)
                throw std::invalid_argument("layout: image index must be >= 1");
            seen.push_back(s.image_index);
        } else if (s.image_index != 0) {
            throw std::invalid_argument("layout: text segment carries an image index");
        }
        cursor = s.end;
    }
    total_len_ = cursor;

    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (seen[i] != static_cast<int>(i) + 1)
            throw std::invalid_argument("layout: image indices must be exactly 1..N");
    }
    num_images_ = static_cast<int>(seen.size());

    image_spans_.assign(static_cast<std::size_t>(num_images_), {0, 0});
    for (const Segment& s : segments_)
        if (s.kind == SegmentKind::Image)
            image_spans_[static_cast<std::size_t>(s.image_index - 1)] = {s.begin, s.end};
}

TokenLayout TokenLayout::text_only(std::size_t len) {
    if (len == 0) return TokenLayout{};
    return TokenLayout{{Segment{SegmentKind::Text, 0, 0, len}}};
}

bool TokenLayout::is_image_position(std::size_t p) const { return image_at(p) != 0; }

int TokenLayout::image_at(std::size_t p) const {
    if (p >= total_len_) return 0;
    for (const Segment& s : segments_)
        if (p >= s.begin && p < s.end)
            return s.kind == SegmentKind::Image ? s.image_index : 0;
    return 0;
}

std::pair<std::size_t, std::size_t> TokenLayout::image_span(int j) const {
    if (j < 1 || j > num_images_)
        throw std::out_of_range("layout: image index out of range");
    return image_spans_[static_cast<std::size_t>(j - 1)];
}

std::string TokenLayout::describe() const {
    std::string out;
    for (const Segment& s : segments_) {
        if (!out.empty()) out += ",";
        if (s.kind == SegmentKind::Text)
            out += "text[" + std::to_string(s.begin) + "," + std::to_string(s.end) + ")";
        else
            out += "image" + std::to_string(s.image_index) + "[" + std::to_string(s.begin) +
                   "," + std::to_string(s.end) + ")";
    }
    return out;
}

}  // namespace pf
