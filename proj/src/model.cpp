#include "pf/model.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "pf/kernels.hpp"

namespace pf {

namespace {

// Uniform in [0,1) from the top 53 bits of the engine output; portable
// across standard libraries, unlike std::uniform_real_distribution.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void fill_uniform(std::mt19937_64& rng, std::vector<double>& w, double bound) {
    for (double& v : w) v = (2.0 * unit_uniform(rng) - 1.0) * bound;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

constexpr double kNormEps = 1e-8;
constexpr double kPosScale = 0.5;

void rmsnorm(const double* x, double* out, int n) {
    const double ms = kernels::dot(x, x, static_cast<std::size_t>(n)) / n;
    const double inv = 1.0 / std::sqrt(ms + kNormEps);
    for (int i = 0; i < n; ++i) out[i] = x[i] * inv;
}

}  // namespace

ModelConfig ModelConfig::make(int layers, int heads, int head_dim, int vocab, int max_seq,
                              std::uint64_t seed) {
    ModelConfig c;
    c.num_layers = layers;
    c.num_heads = heads;
    c.head_dim = head_dim;
    c.hidden_dim = heads * head_dim;
    c.vocab_size = vocab;
    c.max_seq_len = max_seq;
    c.rng_seed = seed;
    return c;
}

void ModelConfig::validate() const {
    if (num_layers <= 0 || num_heads <= 0 || head_dim <= 0 || hidden_dim <= 0 ||
        vocab_size <= 0 || max_seq_len <= 0)
        throw std::invalid_argument("model config: all dimensions must be positive");
    if (hidden_dim % num_heads != 0 || hidden_dim != num_heads * head_dim)
        throw std::invalid_argument("model config: hidden_dim must be num_heads * head_dim");
}

std::string ModelConfig::digest() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d|%d|%d|%d|%d|%d|%llu", num_layers, num_heads, head_dim,
                  hidden_dim, vocab_size, max_seq_len,
                  static_cast<unsigned long long>(rng_seed));
    std::uint64_t h = 1469598103934665603ull;
    for (const char* p = buf; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 1099511628211ull;
    }
    char out[20];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

std::vector<int> select_diagnostic_layers(int num_layers) {
    if (num_layers < 1) throw std::invalid_argument("select_diagnostic_layers: need >= 1 layer");
    std::vector<int> layers{0, (num_layers - 1) / 2, num_layers - 1};
    std::vector<int> out;
    for (int l : layers)
        if (out.empty() || out.back() != l) out.push_back(l);
    return out;
}

struct LayerWeights {
    std::vector<double> wq, wk, wv, wo;  // [hidden][hidden], row-major [out][in]
    std::vector<double> w1;              // [4*hidden][hidden]
    std::vector<double> w2;              // [hidden][4*hidden]
};

struct Model::Impl {
    ModelConfig cfg;
    std::vector<double> embedding;  // [vocab][hidden]
    std::vector<LayerWeights> layers;
    std::vector<double> unembed;  // [vocab][hidden]
    std::vector<double> pos_enc;  // [max_seq][hidden], sinusoidal, scaled
    std::vector<int> diag_layers;

    explicit Impl(ModelConfig c) : cfg(c) {
        c.validate();
        const int H = cfg.hidden_dim;
        std::mt19937_64 rng(cfg.rng_seed);

        // Draw order: embedding, then per layer wq/wk/wv/wo/w1/w2, then
        // unembed. Matrices use bound sqrt(3/in_dim); embedding uses 1.0.
        embedding.resize(static_cast<std::size_t>(cfg.vocab_size) * H);
        fill_uniform(rng, embedding, 1.0);

        const double proj_bound = std::sqrt(3.0 / H);
        const double mlp_in_bound = std::sqrt(3.0 / H);
        const double mlp_out_bound = std::sqrt(3.0 / (4.0 * H));
        layers.resize(static_cast<std::size_t>(cfg.num_layers));
        for (LayerWeights& lw : layers) {
            lw.wq.resize(static_cast<std::size_t>(H) * H);
            lw.wk.resize(static_cast<std::size_t>(H) * H);
            lw.wv.resize(static_cast<std::size_t>(H) * H);
            lw.wo.resize(static_cast<std::size_t>(H) * H);
            lw.w1.resize(static_cast<std::size_t>(4 * H) * H);
            lw.w2.resize(static_cast<std::size_t>(H) * 4 * H);
            fill_uniform(rng, lw.wq, proj_bound);
            fill_uniform(rng, lw.wk, proj_bound);
            fill_uniform(rng, lw.wv, proj_bound);
            fill_uniform(rng, lw.wo, proj_bound);
            fill_uniform(rng, lw.w1, mlp_in_bound);
            fill_uniform(rng, lw.w2, mlp_out_bound);
        }
        unembed.resize(static_cast<std::size_t>(cfg.vocab_size) * H);
        fill_uniform(rng, unembed, proj_bound);

        pos_enc.resize(static_cast<std::size_t>(cfg.max_seq_len) * H);
        for (int p = 0; p < cfg.max_seq_len; ++p)
            for (int i = 0; i < H; ++i) {
                const double rate = std::pow(10000.0, -2.0 * (i / 2) / H);
                const double angle = p * rate;
                pos_enc[static_cast<std::size_t>(p) * H + i] =
                    kPosScale * ((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
            }

        diag_layers = select_diagnostic_layers(cfg.num_layers);
    }

    void matvec(const std::vector<double>& w, const double* x, double* out, int rows,
                int cols) const {
        for (int r = 0; r < rows; ++r)
            out[r] = kernels::dot(w.data() + static_cast<std::size_t>(r) * cols, x,
                                  static_cast<std::size_t>(cols));
    }

    void embed(int token, std::size_t pos, double* x) const {
        if (token < 0 || token >= cfg.vocab_size)
            throw std::invalid_argument("token id out of vocab range");
        const int H = cfg.hidden_dim;
        const double* e = embedding.data() + static_cast<std::size_t>(token) * H;
        const double* pe = pos_enc.data() + pos * H;
        for (int i = 0; i < H; ++i) x[i] = e[i] + pe[i];
    }
};

Model::Model(ModelConfig cfg) {
    cfg.validate();
    impl_ = std::make_unique<Impl>(cfg);
}

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

const ModelConfig& Model::config() const { return impl_->cfg; }

double Model::first_weight() const { return impl_->embedding[0]; }

DecodeSession::DecodeSession(const Model& model, TokenLayout layout)
    : model_(&model), layout_(std::move(layout)) {
    const auto& cfg = model.impl_->cfg;
    k_cache_.resize(static_cast<std::size_t>(cfg.num_layers));
    v_cache_.resize(static_cast<std::size_t>(cfg.num_layers));
}

StepAttention DecodeSession::step_internal(int token, const std::vector<double>* gate,
                                           bool record, bool retain_raw) {
    const Model::Impl& m = *model_->impl_;
    const int H = m.cfg.hidden_dim;
    const int heads = m.cfg.num_heads;
    const int dh = m.cfg.head_dim;
    const std::size_t pos = len_;
    const std::size_t attended = pos + 1;

    if (attended > static_cast<std::size_t>(m.cfg.max_seq_len))
        throw std::invalid_argument("decode: sequence overflow past max_seq_len");
    if (gate && gate->size() != attended)
        throw std::invalid_argument("decode: gate length mismatch (need current attended length)");

    StepAttention rec;
    rec.step_index = steps_taken_;
    rec.attended_len = attended;
    if (record) {
        rec.selected_layers = m.diag_layers;
        rec.reduced_row.assign(attended, 0.0);
        if (retain_raw) rec.raw_rows.resize(m.diag_layers.size());
    }

    std::vector<double> x(static_cast<std::size_t>(H));
    m.embed(token, pos, x.data());

    std::vector<double> h(static_cast<std::size_t>(H));
    std::vector<double> q(static_cast<std::size_t>(H)), kv(static_cast<std::size_t>(H));
    std::vector<double> attn_out(static_cast<std::size_t>(H));
    std::vector<double> proj(static_cast<std::size_t>(H));
    std::vector<double> scores(attended);
    std::vector<double> up(static_cast<std::size_t>(4) * H);

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::size_t diag_slot = 0;

    for (int l = 0; l < m.cfg.num_layers; ++l) {
        const LayerWeights& lw = m.layers[static_cast<std::size_t>(l)];
        rmsnorm(x.data(), h.data(), H);

        m.matvec(lw.wq, h.data(), q.data(), H, H);
        m.matvec(lw.wk, h.data(), kv.data(), H, H);
        auto& kc = k_cache_[static_cast<std::size_t>(l)];
        kc.insert(kc.end(), kv.begin(), kv.end());
        m.matvec(lw.wv, h.data(), kv.data(), H, H);
        auto& vc = v_cache_[static_cast<std::size_t>(l)];
        vc.insert(vc.end(), kv.begin(), kv.end());

        const bool is_diag = record && diag_slot < m.diag_layers.size() &&
                             m.diag_layers[diag_slot] == l;

        std::fill(attn_out.begin(), attn_out.end(), 0.0);
        for (int hh = 0; hh < heads; ++hh) {
            const double* qh = q.data() + static_cast<std::size_t>(hh) * dh;
            for (std::size_t p = 0; p < attended; ++p) {
                const double* kp = kc.data() + p * H + static_cast<std::size_t>(hh) * dh;
                scores[p] = kernels::dot(qh, kp, static_cast<std::size_t>(dh)) * inv_sqrt_dh;
            }
            if (gate) kernels::add(scores.data(), gate->data(), attended);
            kernels::softmax(scores.data(), attended);

            if (is_diag) {
                kernels::add(rec.reduced_row.data(), scores.data(), attended);
                if (retain_raw) rec.raw_rows[diag_slot].push_back(scores);
            }

            double* oh = attn_out.data() + static_cast<std::size_t>(hh) * dh;
            for (std::size_t p = 0; p < attended; ++p)
                kernels::axpy(scores[p], vc.data() + p * H + static_cast<std::size_t>(hh) * dh,
                              oh, static_cast<std::size_t>(dh));
        }
        if (is_diag) ++diag_slot;

        m.matvec(lw.wo, attn_out.data(), proj.data(), H, H);
        kernels::add(x.data(), proj.data(), static_cast<std::size_t>(H));

        rmsnorm(x.data(), h.data(), H);
        m.matvec(lw.w1, h.data(), up.data(), 4 * H, H);
        for (double& u : up) u = silu(u);
        m.matvec(lw.w2, up.data(), proj.data(), H, 4 * H);
        kernels::add(x.data(), proj.data(), static_cast<std::size_t>(H));
    }

    if (record) {
        const double inv = 1.0 / (static_cast<double>(m.diag_layers.size()) * heads);
        kernels::scale(rec.reduced_row.data(), inv, attended);
    }

    rmsnorm(x.data(), h.data(), H);
    last_logits_.resize(static_cast<std::size_t>(m.cfg.vocab_size));
    m.matvec(m.unembed, h.data(), last_logits_.data(), m.cfg.vocab_size, H);

    len_ = attended;
    if (record) ++steps_taken_;
    return rec;
}

StepAttention DecodeSession::decode_step(int token, const std::vector<double>* gate,
                                         bool retain_raw) {
    return step_internal(token, gate, /*record=*/true, retain_raw);
}

DecodeSession prefill(const Model& model, const std::vector<int>& tokens, TokenLayout layout) {
    const auto& cfg = model.config();
    if (tokens.size() != layout.total_len())
        throw std::invalid_argument("prefill: token count does not match layout total_len");
    if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len))
        throw std::invalid_argument("prefill: sequence overflow past max_seq_len");

    DecodeSession session(model, std::move(layout));
    for (int t : tokens) session.step_internal(t, nullptr, /*record=*/false, false);
    return session;
}

std::vector<std::vector<double>> Model::forward_full(const std::vector<int>& tokens) const {
    const Model::Impl& m = *impl_;
    const int H = m.cfg.hidden_dim;
    const int heads = m.cfg.num_heads;
    const int dh = m.cfg.head_dim;
    const std::size_t n = tokens.size();
    if (n > static_cast<std::size_t>(m.cfg.max_seq_len))
        throw std::invalid_argument("forward_full: sequence overflow past max_seq_len");

    // Batch route: materialize q/k/v for the whole sequence per layer and
    // softmax full causal score rows. Deliberately a different loop
    // structure from the cached path.
    std::vector<std::vector<double>> xs(n, std::vector<double>(static_cast<std::size_t>(H)));
    for (std::size_t p = 0; p < n; ++p) m.embed(tokens[p], p, xs[p].data());

    std::vector<double> h(static_cast<std::size_t>(H));
    std::vector<std::vector<double>> qs(n, std::vector<double>(static_cast<std::size_t>(H)));
    std::vector<std::vector<double>> ks(n, std::vector<double>(static_cast<std::size_t>(H)));
    std::vector<std::vector<double>> vs(n, std::vector<double>(static_cast<std::size_t>(H)));
    std::vector<double> scores(n), attn_out(static_cast<std::size_t>(H));
    std::vector<double> proj(static_cast<std::size_t>(H)), up(static_cast<std::size_t>(4) * H);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < m.cfg.num_layers; ++l) {
        const LayerWeights& lw = m.layers[static_cast<std::size_t>(l)];
        for (std::size_t p = 0; p < n; ++p) {
            rmsnorm(xs[p].data(), h.data(), H);
            m.matvec(lw.wq, h.data(), qs[p].data(), H, H);
            m.matvec(lw.wk, h.data(), ks[p].data(), H, H);
            m.matvec(lw.wv, h.data(), vs[p].data(), H, H);
        }
        for (std::size_t p = 0; p < n; ++p) {
            std::fill(attn_out.begin(), attn_out.end(), 0.0);
            for (int hh = 0; hh < heads; ++hh) {
                const double* qh = qs[p].data() + static_cast<std::size_t>(hh) * dh;
                for (std::size_t j = 0; j <= p; ++j)
                    scores[j] = kernels::dot(
                                    qh, ks[j].data() + static_cast<std::size_t>(hh) * dh,
                                    static_cast<std::size_t>(dh)) *
                                inv_sqrt_dh;
                kernels::softmax(scores.data(), p + 1);
                double* oh = attn_out.data() + static_cast<std::size_t>(hh) * dh;
                for (std::size_t j = 0; j <= p; ++j)
                    kernels::axpy(scores[j],
                                  vs[j].data() + static_cast<std::size_t>(hh) * dh, oh,
                                  static_cast<std::size_t>(dh));
            }
            m.matvec(lw.wo, attn_out.data(), proj.data(), H, H);
            kernels::add(xs[p].data(), proj.data(), static_cast<std::size_t>(H));

            rmsnorm(xs[p].data(), h.data(), H);
            m.matvec(lw.w1, h.data(), up.data(), 4 * H, H);
            for (double& u : up) u = silu(u);
            m.matvec(lw.w2, up.data(), proj.data(), H, 4 * H);
            kernels::add(xs[p].data(), proj.data(), static_cast<std::size_t>(H));
        }
    }

    std::vector<std::vector<double>> logits(
        n, std::vector<double>(static_cast<std::size_t>(m.cfg.vocab_size)));
    for (std::size_t p = 0; p < n; ++p) {
        rmsnorm(xs[p].data(), h.data(), H);
        m.matvec(m.unembed, h.data(), logits[p].data(), m.cfg.vocab_size, H);
    }
    return logits;
}

}  // namespace pf
