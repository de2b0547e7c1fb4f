#pragma once

#include <span>
#include <vector>

#include "pf/layout.hpp"

namespace pf {

struct GateConfig {
    double lambda = 2.0;  // gate strength; 0 reduces gating to a no-op

    void validate() const;  // throws on lambda < 0 or non-finite
};

// Image indices the current focus block references. The controller produces
// sets of size 1 or 2; the gating math accepts any non-empty subset of 1..N.
struct FocusSet {
    std::vector<int> indices;

    bool contains(int j) const;
};

// Per-position additive offsets for the pre-softmax attention logits:
// 0 on text positions and on focused images' positions, -lambda on every
// other image position. Positions at or past the prompt layout (generated
// tokens) are text, hence 0.
using GateVector = std::vector<double>;

// Throws std::out_of_range when a focus index is outside 1..layout.N.
GateVector build_gate(const TokenLayout& layout, const FocusSet& focus, const GateConfig& cfg,
                      std::size_t attended_len);

// Closed form of the gated attention distribution, computed without logits:
//   gated_p = baseline_p * exp(-lambda * [p on a non-focused image]) / Z,
//   Z = 1 - (1 - exp(-lambda)) * M,
// where M is the baseline mass on non-focused image positions. Exactly the
// softmax of log(baseline) + gate offsets. Used as the independent oracle
// against the model's actual gated softmax.
// Throws std::invalid_argument unless baseline sums to 1 (±1e-9).
std::vector<double> gated_distribution_oracle(std::span<const double> baseline,
                                              const TokenLayout& layout, const FocusSet& focus,
                                              double lambda);

// Attention mass on image j: sum of row entries over S_j. Positions past
// the row length contribute nothing (row may be shorter than the layout
// during early prompts in tests). Throws std::out_of_range on bad j.
double focus_mass(std::span<const double> row, const TokenLayout& layout, int image_index);

}  // namespace pf
