#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace pf {

enum class SegmentKind { Text, Image };

struct Segment {
    SegmentKind kind = SegmentKind::Text;
    int image_index = 0;  // 1..N for Image segments, 0 for Text
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
};

// Position map of a prompt: contiguous non-overlapping segments covering
// [0, total_len). Image j's segment is its visual-token position set S_j;
// image indices run 1..N, each appearing exactly once. Positions at or past
// total_len (tokens generated during decode) classify as text.
class TokenLayout {
public:
    TokenLayout() = default;
    explicit TokenLayout(std::vector<Segment> segments);

    static TokenLayout text_only(std::size_t len);

    std::size_t total_len() const { return total_len_; }
    int num_images() const { return num_images_; }
    const std::vector<Segment>& segments() const { return segments_; }

    bool is_image_position(std::size_t p) const;
    // Image index at position p, or 0 for text (including p >= total_len).
    int image_at(std::size_t p) const;
    // S_j as [begin, end); j must be in 1..N.
    std::pair<std::size_t, std::size_t> image_span(int j) const;

    std::string describe() const;

private:
    std::vector<Segment> segments_;
    std::vector<std::pair<std::size_t, std::size_t>> image_spans_;  // [j-1]
    std::size_t total_len_ = 0;
    int num_images_ = 0;
};

}  // namespace pf
