#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pf/layout.hpp"

namespace pf {

struct ModelConfig {
    int num_layers = 0;
    int num_heads = 0;
    int head_dim = 0;
    int hidden_dim = 0;  // must equal num_heads * head_dim
    int vocab_size = 0;
    int max_seq_len = 0;
    std::uint64_t rng_seed = 0;

    static ModelConfig make(int layers, int heads, int head_dim, int vocab, int max_seq,
                            std::uint64_t seed);

    // Throws std::invalid_argument on zero-size dims or when hidden_dim is
    // not num_heads * head_dim.
    void validate() const;

    // FNV-1a hex over the config fields; identifies a weight set.
    std::string digest() const;
};

// Post-softmax attention recorded at one decode step. Rows cover positions
// [0, attended_len) where attended_len = session length after the step;
// each row sums to 1 (±1e-6). reduced_row is the arithmetic mean over all
// heads of the selected diagnostic layers.
struct StepAttention {
    int step_index = 0;
    std::size_t attended_len = 0;
    std::vector<int> selected_layers;
    // raw_rows[i][h] = full row of (selected_layers[i], head h).
    // Populated only when the step ran with retain_raw.
    std::vector<std::vector<std::vector<double>>> raw_rows;
    std::vector<double> reduced_row;
};

// Diagnostic layers at 0%, 50% and 100% depth: {0, (L-1)/2, L-1}, deduplicated.
std::vector<int> select_diagnostic_layers(int num_layers);

class DecodeSession;

// Seeded desk-scale decoder-only transformer. Weights are drawn once at
// construction from a splitmix/mt19937_64 chain seeded with cfg.rng_seed
// (scaled-uniform init, documented in docs/model.md); identical (config,
// seed) gives bit-identical weights and outputs on the same build.
// Immutable after construction and shareable across sessions.
class Model {
public:
    explicit Model(ModelConfig cfg);
    ~Model();
    Model(Model&&) noexcept;
    Model& operator=(Model&&) noexcept;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const;

    // First drawn parameter (embedding[0]); determinism probe for tests.
    double first_weight() const;

    // Full non-cached forward pass: logits for every position of `tokens`,
    // no gating. Independent route for the KV-cache equivalence check.
    std::vector<std::vector<double>> forward_full(const std::vector<int>& tokens) const;

    struct Impl;

private:
    friend class DecodeSession;
    std::unique_ptr<Impl> impl_;
};

// Single-threaded incremental decode state over one Model. Distinct
// sessions never share mutable state.
class DecodeSession {
public:
    std::size_t current_len() const { return len_; }
    const TokenLayout& layout() const { return layout_; }
    const std::vector<double>& last_logits() const { return last_logits_; }

    // Appends `token` at position current_len(). When `gate` is non-null its
    // offsets are added to the pre-softmax attention logits of every head in
    // every layer; it must have length current_len()+1 (the attended length
    // of this step). Returns logits for the next token plus the recorded
    // attention. Throws on overflow past max_seq_len or gate length mismatch.
    StepAttention decode_step(int token, const std::vector<double>* gate = nullptr,
                              bool retain_raw = false);

private:
    friend DecodeSession prefill(const Model&, const std::vector<int>&, TokenLayout);
    DecodeSession(const Model& model, TokenLayout layout);

    // One position of the forward pass; records attention when `record`.
    StepAttention step_internal(int token, const std::vector<double>* gate, bool record,
                                bool retain_raw);

    const Model* model_;
    TokenLayout layout_;
    std::size_t len_ = 0;
    int steps_taken_ = 0;
    std::vector<double> last_logits_;
    std::vector<std::vector<double>> k_cache_;  // [layer], pos-major rows of hidden_dim
    std::vector<std::vector<double>> v_cache_;
};

// Fills the KV cache with `tokens` (length must equal layout.total_len and
// fit max_seq_len). The returned session is ready for decode_step; its
// last_logits() predict the first generated token.
DecodeSession prefill(const Model& model, const std::vector<int>& tokens, TokenLayout layout);

}  // namespace pf
