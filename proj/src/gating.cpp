#include "pf/gating.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pf {

void GateConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw std::invalid_argument("gate config: lambda must be finite and >= 0");
}

bool FocusSet::contains(int j) const {
    return std::find(indices.begin(), indices.end(), j) != indices.end();
}

namespace {

void check_focus_range(const TokenLayout& layout, const FocusSet& focus) {
    for (int j : focus.indices)
        if (j < 1 || j > layout.num_images())
            throw std::out_of_range("focus index out of range 1..N");
}

}  // namespace

GateVector build_gate(const TokenLayout& layout, const FocusSet& focus, const GateConfig& cfg,
                      std::size_t attended_len) {
    cfg.validate();
    check_focus_range(layout, focus);

    GateVector gate(attended_len, 0.0);
    if (cfg.lambda == 0.0) return gate;
    const std::size_t covered = std::min(attended_len, layout.total_len());
    for (const Segment& s : layout.segments()) {
        if (s.kind != SegmentKind::Image || focus.contains(s.image_index)) continue;
        const std::size_t end = std::min(s.end, covered);
        for (std::size_t p = s.begin; p < end; ++p) gate[p] = -cfg.lambda;
    }
    return gate;
}

std::vector<double> gated_distribution_oracle(std::span<const double> baseline,
                                              const TokenLayout& layout, const FocusSet& focus,
                                              double lambda) {
    check_focus_range(layout, focus);
    double total = 0.0;
    for (double v : baseline) total += v;
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("oracle: baseline row is not normalized");

    const double damp = std::exp(-lambda);
    double off_mass = 0.0;
    for (std::size_t p = 0; p < baseline.size(); ++p) {
        const int j = layout.image_at(p);
        if (j != 0 && !focus.contains(j)) off_mass += baseline[p];
    }
    const double z = 1.0 - (1.0 - damp) * off_mass;

    std::vector<double> gated(baseline.size());
    for (std::size_t p = 0; p < baseline.size(); ++p) {
        const int j = layout.image_at(p);
        const bool suppressed = j != 0 && !focus.contains(j);
        gated[p] = baseline[p] * (suppressed ? damp : 1.0) / z;
    }
    return gated;
}

double focus_mass(std::span<const double> row, const TokenLayout& layout, int image_index) {
    auto [begin, end] = layout.image_span(image_index);  // throws on bad index
    end = std::min(end, row.size());
    double mass = 0.0;
    for (std::size_t p = begin; p < end; ++p) mass += row[p];
    return mass;
}

}  // namespace pf
