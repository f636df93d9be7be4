#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trustsum/common.hpp"
#include "trustsum/corpus.hpp"

namespace trustsum {

// Decoder-only single-block model: learned token + positional embeddings,
// pre-layer-norm multi-head causal attention, GELU feed-forward, then a
// linear vocabulary projection (no final layer norm). Conditioning is by
// prefix concatenation [BOS] X [SEP] Y. Dropout sites: attention output and
// feed-forward activation.
struct ModelConfig {
    int vocab_size = 0;
    int d_model = 32;
    int n_heads = 2;
    int ffn_dim = 64;
    int ctx_len = 64;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab_size < kNumReserved) throw std::invalid_argument("vocab_size must be at least 5");
        if (d_model < 1 || n_heads < 1 || ffn_dim < 1 || ctx_len < 2)
            throw std::invalid_argument("model dimensions must be positive");
        if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("dropout_rate must be in [0,1)");
    }
};

constexpr double kLayerNormEps = 1e-5;

// Flat parameter vector offsets. Checkpoint order is exactly this order.
struct ParamLayout {
    int k = 0, d = 0, heads = 0, ffn = 0, ctx = 0, head_dim = 0;
    std::size_t tok_emb = 0, pos_emb = 0;
    std::size_t wq = 0, wk = 0, wv = 0, wo = 0;
    std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
    std::size_t ln1_g = 0, ln1_b = 0, ln2_g = 0, ln2_b = 0;
    std::size_t w_out = 0, b_out = 0;
    std::size_t total = 0;

    static ParamLayout from(const ModelConfig& config) {
        config.validate();
        ParamLayout l;
        l.k = config.vocab_size;
        l.d = config.d_model;
        l.heads = config.n_heads;
        l.ffn = config.ffn_dim;
        l.ctx = config.ctx_len;
        l.head_dim = l.d / l.heads;
        const auto k = static_cast<std::size_t>(l.k);
        const auto d = static_cast<std::size_t>(l.d);
        const auto f = static_cast<std::size_t>(l.ffn);
        const auto c = static_cast<std::size_t>(l.ctx);
        std::size_t at = 0;
        auto view = [&at](std::size_t count) {
            std::size_t offset = at;
            at += count;
            return offset;
        };
        l.tok_emb = view(k * d);
        l.pos_emb = view(c * d);
        l.wq = view(d * d);
        l.wk = view(d * d);
        l.wv = view(d * d);
        l.wo = view(d * d);
        l.w1 = view(d * f);
        l.b1 = view(f);
        l.w2 = view(f * d);
        l.b2 = view(d);
        l.ln1_g = view(d);
        l.ln1_b = view(d);
        l.ln2_g = view(d);
        l.ln2_b = view(d);
        l.w_out = view(d * k);
        l.b_out = view(k);
        l.total = at;
        return l;
    }
};

inline std::size_t param_count(const ModelConfig& config) { return ParamLayout::from(config).total; }

struct Params {
    std::vector<double> flat;

    bool operator==(const Params&) const = default;
};

// Weights uniform(-0.05, 0.05) drawn from the config seed in layout order
// (tok_emb, pos_emb, wq, wk, wv, wo, w1, w2, w_out); biases and layer-norm
// biases zero; layer-norm gains one.
inline Params init_params(const ModelConfig& config) {
    const ParamLayout l = ParamLayout::from(config);
    Params params;
    params.flat.assign(l.total, 0.0);
    Rng rng(config.seed);
    auto fill_uniform = [&](std::size_t offset, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) params.flat[offset + i] = rng.uniform(-0.05, 0.05);
    };
    const auto k = static_cast<std::size_t>(l.k);
    const auto d = static_cast<std::size_t>(l.d);
    const auto f = static_cast<std::size_t>(l.ffn);
    const auto c = static_cast<std::size_t>(l.ctx);
    fill_uniform(l.tok_emb, k * d);
    fill_uniform(l.pos_emb, c * d);
    fill_uniform(l.wq, d * d);
    fill_uniform(l.wk, d * d);
    fill_uniform(l.wv, d * d);
    fill_uniform(l.wo, d * d);
    fill_uniform(l.w1, d * f);
    fill_uniform(l.w2, f * d);
    fill_uniform(l.w_out, d * k);
    for (std::size_t i = 0; i < d; ++i) {
        params.flat[l.ln1_g + i] = 1.0;
        params.flat[l.ln2_g + i] = 1.0;
    }
    return params;
}

// Seeded keep/drop bits for both dropout sites, sized for a full-context
// prefix so the same draw applies to any prefix length. Inverted scaling
// (1/(1-p)) keeps inference mask-free.
struct DropoutMask {
    double rate = 0.0;
    std::vector<std::uint8_t> attn_keep;  // ctx_len * d_model
    std::vector<std::uint8_t> ffn_keep;   // ctx_len * ffn_dim

    double keep_scale() const { return rate == 0.0 ? 1.0 : 1.0 / (1.0 - rate); }
};

// One draw from the dropout posterior. Bits are drawn row-major, the
// attention site first; rate 0 gives the all-keep mask for any seed.
inline DropoutMask sample_posterior_draw(const ModelConfig& config, std::uint64_t draw_seed) {
    config.validate();
    DropoutMask mask;
    mask.rate = config.dropout_rate;
    const std::size_t n_attn = static_cast<std::size_t>(config.ctx_len) * static_cast<std::size_t>(config.d_model);
    const std::size_t n_ffn = static_cast<std::size_t>(config.ctx_len) * static_cast<std::size_t>(config.ffn_dim);
    mask.attn_keep.resize(n_attn);
    mask.ffn_keep.resize(n_ffn);
    Rng rng(draw_seed);
    for (auto& bit : mask.attn_keep) bit = rng.uniform01() >= mask.rate ? 1 : 0;
    for (auto& bit : mask.ffn_keep) bit = rng.uniform01() >= mask.rate ? 1 : 0;
    return mask;
}

using Distribution = std::vector<double>;

inline bool is_valid_distribution(const Distribution& dist, double tol = 1e-9) {
    double sum = 0.0;
    for (double p : dist) {
        if (!(p >= 0.0)) return false;
        sum += p;
    }
    return std::fabs(sum - 1.0) <= tol;
}

namespace detail {

inline void check_finite(double value, const char* layer) {
    if (!std::isfinite(value)) throw std::runtime_error(std::string("numerical overflow in ") + layer);
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_grad(double x) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// All per-position intermediates of one forward pass, kept for backward.
struct BlockCache {
    int len = 0;
    std::vector<int> ids;
    std::vector<double> h0, x1hat, rstd1, a_in;
    std::vector<double> q, k, v;
    std::vector<double> att;  // len * heads * len, lower-triangular rows
    std::vector<double> head_mix, att_proj, att_drop;
    std::vector<double> h1, x2hat, rstd2, f_in;
    std::vector<double> ffn_pre, ffn_act, ffn_drop, ffn_out;
    std::vector<double> h2;
    std::vector<double> logits, probs;  // len * k
};

inline void layer_norm_row(const double* x, const double* gain, const double* bias, int d,
                           double* xhat_out, double* rstd_out, double* y_out) {
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += x[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    *rstd_out = rstd;
    for (int i = 0; i < d; ++i) {
        const double xh = (x[i] - mean) * rstd;
        xhat_out[i] = xh;
        y_out[i] = gain[i] * xh + bias[i];
    }
}

// y[j] += sum_i x[i] * W[i*cols + j]
inline void mat_vec_acc(const double* w, const double* x, int rows, int cols, double* y) {
    for (int i = 0; i < rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* wrow = w + static_cast<std::size_t>(i) * cols;
        for (int j = 0; j < cols; ++j) y[j] += xi * wrow[j];
    }
}

inline void softmax_row(const double* logits, int k, double* probs) {
    double mx = logits[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
        const double e = std::exp(logits[j] - mx);
        probs[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j < k; ++j) probs[j] *= inv;
}

inline void validate_prefix(const ModelConfig& config, std::span<const int> prefix) {
    if (prefix.empty()) throw std::invalid_argument("empty prefix");
    if (static_cast<int>(prefix.size()) > config.ctx_len) throw std::runtime_error("context overflow");
    for (int id : prefix)
        if (id < 0 || id >= config.vocab_size) throw std::invalid_argument("token id out of range");
}

// Full forward with cache. Positions are processed stage by stage so the
// causal structure is explicit: attention row t touches keys/values <= t only.
inline BlockCache run_forward(const Params& params, const ModelConfig& config,
                              std::span<const int> prefix, const DropoutMask* mask) {
    validate_prefix(config, prefix);
    const ParamLayout lay = ParamLayout::from(config);
    if (params.flat.size() != lay.total) throw std::invalid_argument("params do not match config");
    if (mask != nullptr) {
        const std::size_t need_attn =
            static_cast<std::size_t>(lay.ctx) * static_cast<std::size_t>(lay.d);
        const std::size_t need_ffn =
            static_cast<std::size_t>(lay.ctx) * static_cast<std::size_t>(lay.ffn);
        if (mask->attn_keep.size() < need_attn || mask->ffn_keep.size() < need_ffn)
            throw std::invalid_argument("dropout mask too small");
    }

    const int L = static_cast<int>(prefix.size());
    const int d = lay.d, H = lay.heads, hd = lay.head_dim, F = lay.ffn, K = lay.k;
    const double* p = params.flat.data();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double scale = mask ? mask->keep_scale() : 1.0;

    BlockCache c;
    c.len = L;
    c.ids.assign(prefix.begin(), prefix.end());
    c.h0.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.x1hat.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.rstd1.assign(L, 0.0);
    c.a_in.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.q.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.k.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.v.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.att.assign(static_cast<std::size_t>(L) * H * L, 0.0);
    c.head_mix.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.att_proj.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.att_drop.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.h1.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.x2hat.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.rstd2.assign(L, 0.0);
    c.f_in.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.ffn_pre.assign(static_cast<std::size_t>(L) * F, 0.0);
    c.ffn_act.assign(static_cast<std::size_t>(L) * F, 0.0);
    c.ffn_drop.assign(static_cast<std::size_t>(L) * F, 0.0);
    c.ffn_out.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.h2.assign(static_cast<std::size_t>(L) * d, 0.0);
    c.logits.assign(static_cast<std::size_t>(L) * K, 0.0);
    c.probs.assign(static_cast<std::size_t>(L) * K, 0.0);

    for (int t = 0; t < L; ++t) {
        const double* emb = p + lay.tok_emb + static_cast<std::size_t>(prefix[t]) * d;
        const double* pos = p + lay.pos_emb + static_cast<std::size_t>(t) * d;
        double* h0 = c.h0.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) h0[i] = emb[i] + pos[i];

        layer_norm_row(h0, p + lay.ln1_g, p + lay.ln1_b, d,
                       c.x1hat.data() + static_cast<std::size_t>(t) * d, &c.rstd1[t],
                       c.a_in.data() + static_cast<std::size_t>(t) * d);

        const double* a_in = c.a_in.data() + static_cast<std::size_t>(t) * d;
        mat_vec_acc(p + lay.wq, a_in, d, d, c.q.data() + static_cast<std::size_t>(t) * d);
        mat_vec_acc(p + lay.wk, a_in, d, d, c.k.data() + static_cast<std::size_t>(t) * d);
        mat_vec_acc(p + lay.wv, a_in, d, d, c.v.data() + static_cast<std::size_t>(t) * d);
    }

    std::vector<double> scores;
    for (int t = 0; t < L; ++t) {
        double* mix = c.head_mix.data() + static_cast<std::size_t>(t) * d;
        for (int h = 0; h < H; ++h) {
            const double* qt = c.q.data() + static_cast<std::size_t>(t) * d + h * hd;
            scores.assign(static_cast<std::size_t>(t) + 1, 0.0);
            for (int u = 0; u <= t; ++u) {
                const double* ku = c.k.data() + static_cast<std::size_t>(u) * d + h * hd;
                double s = 0.0;
                for (int i = 0; i < hd; ++i) s += qt[i] * ku[i];
                scores[u] = s * inv_sqrt_hd;
            }
            double* att = c.att.data() + (static_cast<std::size_t>(t) * H + h) * L;
            softmax_row(scores.data(), t + 1, att);
            for (int u = 0; u <= t; ++u) {
                const double a = att[u];
                const double* vu = c.v.data() + static_cast<std::size_t>(u) * d + h * hd;
                for (int i = 0; i < hd; ++i) mix[h * hd + i] += a * vu[i];
            }
        }
    }

    double stage_sum = 0.0;
    for (int t = 0; t < L; ++t) {
        const double* mix = c.head_mix.data() + static_cast<std::size_t>(t) * d;
        double* proj = c.att_proj.data() + static_cast<std::size_t>(t) * d;
        mat_vec_acc(p + lay.wo, mix, d, d, proj);
        double* drop = c.att_drop.data() + static_cast<std::size_t>(t) * d;
        double* h1 = c.h1.data() + static_cast<std::size_t>(t) * d;
        const double* h0 = c.h0.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            double keep = 1.0;
            if (mask) keep = mask->attn_keep[static_cast<std::size_t>(t) * d + i] ? scale : 0.0;
            drop[i] = proj[i] * keep;
            h1[i] = h0[i] + drop[i];
            stage_sum += h1[i];
        }
    }
    check_finite(stage_sum, "attention");

    stage_sum = 0.0;
    for (int t = 0; t < L; ++t) {
        const double* h1 = c.h1.data() + static_cast<std::size_t>(t) * d;
        layer_norm_row(h1, p + lay.ln2_g, p + lay.ln2_b, d,
                       c.x2hat.data() + static_cast<std::size_t>(t) * d, &c.rstd2[t],
                       c.f_in.data() + static_cast<std::size_t>(t) * d);
        double* pre = c.ffn_pre.data() + static_cast<std::size_t>(t) * F;
        const double* b1 = p + lay.b1;
        for (int j = 0; j < F; ++j) pre[j] = b1[j];
        mat_vec_acc(p + lay.w1, c.f_in.data() + static_cast<std::size_t>(t) * d, d, F, pre);
        double* act = c.ffn_act.data() + static_cast<std::size_t>(t) * F;
        double* adrop = c.ffn_drop.data() + static_cast<std::size_t>(t) * F;
        for (int j = 0; j < F; ++j) {
            act[j] = gelu(pre[j]);
            double keep = 1.0;
            if (mask) keep = mask->ffn_keep[static_cast<std::size_t>(t) * F + j] ? scale : 0.0;
            adrop[j] = act[j] * keep;
        }
        double* out = c.ffn_out.data() + static_cast<std::size_t>(t) * d;
        const double* b2 = p + lay.b2;
        for (int i = 0; i < d; ++i) out[i] = b2[i];
        mat_vec_acc(p + lay.w2, adrop, F, d, out);
        double* h2 = c.h2.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            h2[i] = h1[i] + out[i];
            stage_sum += h2[i];
        }
    }
    check_finite(stage_sum, "feed-forward");

    stage_sum = 0.0;
    for (int t = 0; t < L; ++t) {
        double* logits = c.logits.data() + static_cast<std::size_t>(t) * K;
        const double* b_out = p + lay.b_out;
        for (int j = 0; j < K; ++j) logits[j] = b_out[j];
        mat_vec_acc(p + lay.w_out, c.h2.data() + static_cast<std::size_t>(t) * d, d, K, logits);
        for (int j = 0; j < K; ++j) stage_sum += logits[j];
        softmax_row(logits, K, c.probs.data() + static_cast<std::size_t>(t) * K);
    }
    check_finite(stage_sum, "output projection");

    return c;
}

}  // namespace detail

// One softmax-normalized distribution per prefix position; position t sees
// positions <= t only. No mask means deterministic inference-mode forward.
inline std::vector<Distribution> forward(const Params& params, const ModelConfig& config,
                                         std::span<const int> prefix,
                                         const DropoutMask* mask = nullptr) {
    detail::BlockCache c = detail::run_forward(params, config, prefix, mask);
    std::vector<Distribution> out(static_cast<std::size_t>(c.len));
    const int K = config.vocab_size;
    for (int t = 0; t < c.len; ++t)
        out[static_cast<std::size_t>(t)].assign(c.probs.begin() + static_cast<std::ptrdiff_t>(t) * K,
                                                c.probs.begin() + static_cast<std::ptrdiff_t>(t + 1) * K);
    return out;
}

// Final-position distribution only. Keys/values still cover the whole prefix,
// but queries, the feed-forward and the output projection run for the last
// position alone, which is what decode loops need.
inline Distribution forward_last(const Params& params, const ModelConfig& config,
                                 std::span<const int> prefix, const DropoutMask* mask = nullptr) {
    detail::validate_prefix(config, prefix);
    const ParamLayout lay = ParamLayout::from(config);
    if (params.flat.size() != lay.total) throw std::invalid_argument("params do not match config");

    const int L = static_cast<int>(prefix.size());
    const int d = lay.d, H = lay.heads, hd = lay.head_dim, F = lay.ffn, K = lay.k;
    const double* p = params.flat.data();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double scale = mask ? mask->keep_scale() : 1.0;
    const int t = L - 1;

    std::vector<double> h0(static_cast<std::size_t>(L) * d);
    std::vector<double> kbuf(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> vbuf(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> xhat(d), a_in(d);
    double rstd = 0.0;
    std::vector<double> q(d, 0.0);

    for (int u = 0; u < L; ++u) {
        const double* emb = p + lay.tok_emb + static_cast<std::size_t>(prefix[u]) * d;
        const double* pos = p + lay.pos_emb + static_cast<std::size_t>(u) * d;
        double* row = h0.data() + static_cast<std::size_t>(u) * d;
        for (int i = 0; i < d; ++i) row[i] = emb[i] + pos[i];
        detail::layer_norm_row(row, p + lay.ln1_g, p + lay.ln1_b, d, xhat.data(), &rstd, a_in.data());
        detail::mat_vec_acc(p + lay.wk, a_in.data(), d, d, kbuf.data() + static_cast<std::size_t>(u) * d);
        detail::mat_vec_acc(p + lay.wv, a_in.data(), d, d, vbuf.data() + static_cast<std::size_t>(u) * d);
        if (u == t) detail::mat_vec_acc(p + lay.wq, a_in.data(), d, d, q.data());
    }

    std::vector<double> mix(d, 0.0), scores(static_cast<std::size_t>(L));
    std::vector<double> att(static_cast<std::size_t>(L));
    for (int h = 0; h < H; ++h) {
        for (int u = 0; u <= t; ++u) {
            const double* ku = kbuf.data() + static_cast<std::size_t>(u) * d + h * hd;
            double s = 0.0;
            for (int i = 0; i < hd; ++i) s += q[h * hd + i] * ku[i];
            scores[static_cast<std::size_t>(u)] = s * inv_sqrt_hd;
        }
        detail::softmax_row(scores.data(), t + 1, att.data());
        for (int u = 0; u <= t; ++u) {
            const double a = att[static_cast<std::size_t>(u)];
            const double* vu = vbuf.data() + static_cast<std::size_t>(u) * d + h * hd;
            for (int i = 0; i < hd; ++i) mix[h * hd + i] += a * vu[i];
        }
    }

    std::vector<double> proj(d, 0.0), h1(d);
    detail::mat_vec_acc(p + lay.wo, mix.data(), d, d, proj.data());
    double stage_sum = 0.0;
    for (int i = 0; i < d; ++i) {
        double keep = 1.0;
        if (mask) keep = mask->attn_keep[static_cast<std::size_t>(t) * d + i] ? scale : 0.0;
        h1[i] = h0[static_cast<std::size_t>(t) * d + i] + proj[i] * keep;
        stage_sum += h1[i];
    }
    detail::check_finite(stage_sum, "attention");

    std::vector<double> f_in(d);
    detail::layer_norm_row(h1.data(), p + lay.ln2_g, p + lay.ln2_b, d, xhat.data(), &rstd, f_in.data());
    std::vector<double> pre(static_cast<std::size_t>(F));
    for (int j = 0; j < F; ++j) pre[static_cast<std::size_t>(j)] = p[lay.b1 + static_cast<std::size_t>(j)];
    detail::mat_vec_acc(p + lay.w1, f_in.data(), d, F, pre.data());
    std::vector<double> adrop(static_cast<std::size_t>(F));
    stage_sum = 0.0;
    for (int j = 0; j < F; ++j) {
        double keep = 1.0;
        if (mask) keep = mask->ffn_keep[static_cast<std::size_t>(t) * F + j] ? scale : 0.0;
        adrop[static_cast<std::size_t>(j)] = detail::gelu(pre[static_cast<std::size_t>(j)]) * keep;
        stage_sum += adrop[static_cast<std::size_t>(j)];
    }
    detail::check_finite(stage_sum, "feed-forward");

    std::vector<double> h2(d);
    for (int i = 0; i < d; ++i) h2[static_cast<std::size_t>(i)] = h1[static_cast<std::size_t>(i)] + p[lay.b2 + static_cast<std::size_t>(i)];
    detail::mat_vec_acc(p + lay.w2, adrop.data(), F, d, h2.data());

    Distribution logits(static_cast<std::size_t>(K));
    for (int j = 0; j < K; ++j) logits[static_cast<std::size_t>(j)] = p[lay.b_out + static_cast<std::size_t>(j)];
    detail::mat_vec_acc(p + lay.w_out, h2.data(), d, K, logits.data());
    stage_sum = 0.0;
    for (int j = 0; j < K; ++j) stage_sum += logits[static_cast<std::size_t>(j)];
    detail::check_finite(stage_sum, "output projection");

    Distribution probs(static_cast<std::size_t>(K));
    detail::softmax_row(logits.data(), K, probs.data());
    return probs;
}

inline std::vector<int> build_prefix(std::span<const int> document, std::span<const int> summary_part) {
    std::vector<int> prefix;
    prefix.reserve(document.size() + summary_part.size() + 2);
    prefix.push_back(kBosId);
    prefix.insert(prefix.end(), document.begin(), document.end());
    prefix.push_back(kSepId);
    prefix.insert(prefix.end(), summary_part.begin(), summary_part.end());
    return prefix;
}

// Teacher-forced log P(Y|X) in nats; Y must end with EOS. Loss positions are
// exactly the summary tokens after [SEP].
inline double sequence_log_prob(const Params& params, const ModelConfig& config,
                                std::span<const int> document, std::span<const int> summary) {
    if (summary.empty() || summary.back() != kEosId)
        throw std::invalid_argument("summary must terminate with EOS");
    const std::vector<int> prefix = build_prefix(document, summary);
    detail::BlockCache c = detail::run_forward(params, config, prefix, nullptr);
    const int K = config.vocab_size;
    const int base = static_cast<int>(document.size()) + 1;  // position of [SEP]
    double total = 0.0;
    for (std::size_t j = 0; j < summary.size(); ++j) {
        const double* logits = c.logits.data() + (static_cast<std::size_t>(base) + j) * K;
        double mx = logits[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, logits[i]);
        double sum = 0.0;
        for (int i = 0; i < K; ++i) sum += std::exp(logits[i] - mx);
        total += logits[summary[j]] - mx - std::log(sum);
    }
    return total;
}

// Monte-Carlo posterior-predictive at the final prefix position: the mean of
// S masked passes with draw seeds base_seed..base_seed+S-1. With dropout off
// every draw is the deterministic pass, so it is returned directly.
inline Distribution predictive_marginal(const Params& params, const ModelConfig& config,
                                        std::span<const int> prefix, int draws,
                                        std::uint64_t base_seed) {
    if (draws < 1) throw std::invalid_argument("draw count must be >= 1");
    if (config.dropout_rate == 0.0) return forward_last(params, config, prefix);
    Distribution mean(static_cast<std::size_t>(config.vocab_size), 0.0);
    for (int s = 0; s < draws; ++s) {
        const DropoutMask mask = sample_posterior_draw(config, base_seed + static_cast<std::uint64_t>(s));
        const Distribution draw = forward_last(params, config, prefix, &mask);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += draw[j];
    }
    const double inv = 1.0 / draws;
    for (double& m : mean) m *= inv;
    return mean;
}

struct BackwardResult {
    std::vector<double> grad;
    double nll = 0.0;
    double entropy_sum = 0.0;
};

// Reverse-mode gradient of nll_weight * NLL(Y|X) + entropy_weight * sum_t U_t,
// where U_t is the predictive entropy at the teacher-forced target positions.
// Gradient layout matches Params. The log P gradient needed by the
// score-function risk estimator is the nll_weight = -1 case.
inline BackwardResult backward(const Params& params, const ModelConfig& config,
                               std::span<const int> document, std::span<const int> summary,
                               const DropoutMask* mask, double nll_weight, double entropy_weight) {
    if (summary.empty() || summary.back() != kEosId)
        throw std::invalid_argument("summary must terminate with EOS");
    const std::vector<int> prefix = build_prefix(document, summary);
    detail::BlockCache c = detail::run_forward(params, config, prefix, mask);

    const ParamLayout lay = ParamLayout::from(config);
    const int L = c.len, d = lay.d, H = lay.heads, hd = lay.head_dim, F = lay.ffn, K = lay.k;
    const double* p = params.flat.data();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
    const double scale = mask ? mask->keep_scale() : 1.0;
    const int base = static_cast<int>(document.size()) + 1;
    const int m = static_cast<int>(summary.size());

    BackwardResult result;
    result.grad.assign(lay.total, 0.0);
    double* g = result.grad.data();

    // dL/dlogits at the m target positions; everything else stays zero.
    std::vector<double> d_logits(static_cast<std::size_t>(L) * K, 0.0);
    for (int j = 0; j < m; ++j) {
        const int t = base + j;
        const double* probs = c.probs.data() + static_cast<std::size_t>(t) * K;
        const int target = summary[static_cast<std::size_t>(j)];
        double entropy = 0.0;
        for (int i = 0; i < K; ++i)
            if (probs[i] > 0.0) entropy -= probs[i] * std::log(probs[i]);
        result.entropy_sum += entropy;
        result.nll -= std::log(std::max(probs[target], 1e-300));
        double* dl = d_logits.data() + static_cast<std::size_t>(t) * K;
        for (int i = 0; i < K; ++i) {
            double grad = nll_weight * (probs[i] - (i == target ? 1.0 : 0.0));
            if (entropy_weight != 0.0 && probs[i] > 0.0)
                grad += entropy_weight * (-probs[i] * (std::log(probs[i]) + entropy));
            dl[i] = grad;
        }
    }

    // output projection
    std::vector<double> d_h2(static_cast<std::size_t>(L) * d, 0.0);
    for (int j = 0; j < m; ++j) {
        const int t = base + j;
        const double* dl = d_logits.data() + static_cast<std::size_t>(t) * K;
        const double* h2 = c.h2.data() + static_cast<std::size_t>(t) * d;
        double* dh2 = d_h2.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            const double* wrow = p + lay.w_out + static_cast<std::size_t>(i) * K;
            double* gw = g + lay.w_out + static_cast<std::size_t>(i) * K;
            const double h2i = h2[i];
            double acc = 0.0;
            for (int kk = 0; kk < K; ++kk) {
                acc += wrow[kk] * dl[kk];
                gw[kk] += h2i * dl[kk];
            }
            dh2[i] += acc;
        }
        double* gb = g + lay.b_out;
        for (int kk = 0; kk < K; ++kk) gb[kk] += dl[kk];
    }

    // feed-forward sublayer (h2 = h1 + W2 gelu-drop(W1 f_in + b1) + b2)
    std::vector<double> d_h1(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_fin(d), d_pre(static_cast<std::size_t>(F)), d_adrop(static_cast<std::size_t>(F));
    for (int t = 0; t < L; ++t) {
        const double* dh2 = d_h2.data() + static_cast<std::size_t>(t) * d;
        double* dh1 = d_h1.data() + static_cast<std::size_t>(t) * d;
        bool any = false;
        for (int i = 0; i < d; ++i)
            if (dh2[i] != 0.0) {
                any = true;
                break;
            }
        for (int i = 0; i < d; ++i) dh1[i] += dh2[i];
        if (!any) continue;

        const double* adrop = c.ffn_drop.data() + static_cast<std::size_t>(t) * F;
        std::fill(d_adrop.begin(), d_adrop.end(), 0.0);
        for (int j = 0; j < F; ++j) {
            const double* wrow = p + lay.w2 + static_cast<std::size_t>(j) * d;
            double* gw = g + lay.w2 + static_cast<std::size_t>(j) * d;
            const double aj = adrop[j];
            double acc = 0.0;
            for (int i = 0; i < d; ++i) {
                acc += wrow[i] * dh2[i];
                gw[i] += aj * dh2[i];
            }
            d_adrop[static_cast<std::size_t>(j)] = acc;
        }
        for (int i = 0; i < d; ++i) g[lay.b2 + static_cast<std::size_t>(i)] += dh2[i];

        const double* pre = c.ffn_pre.data() + static_cast<std::size_t>(t) * F;
        for (int j = 0; j < F; ++j) {
            double keep = 1.0;
            if (mask) keep = mask->ffn_keep[static_cast<std::size_t>(t) * F + j] ? scale : 0.0;
            d_pre[static_cast<std::size_t>(j)] =
                d_adrop[static_cast<std::size_t>(j)] * keep * detail::gelu_grad(pre[j]);
        }

        const double* f_in = c.f_in.data() + static_cast<std::size_t>(t) * d;
        std::fill(d_fin.begin(), d_fin.end(), 0.0);
        for (int i = 0; i < d; ++i) {
            const double* wrow = p + lay.w1 + static_cast<std::size_t>(i) * F;
            double* gw = g + lay.w1 + static_cast<std::size_t>(i) * F;
            const double fi = f_in[i];
            double acc = 0.0;
            for (int j = 0; j < F; ++j) {
                acc += wrow[j] * d_pre[static_cast<std::size_t>(j)];
                gw[j] += fi * d_pre[static_cast<std::size_t>(j)];
            }
            d_fin[static_cast<std::size_t>(i)] = acc;
        }
        for (int j = 0; j < F; ++j) g[lay.b1 + static_cast<std::size_t>(j)] += d_pre[static_cast<std::size_t>(j)];

        // layer norm 2
        const double* xhat = c.x2hat.data() + static_cast<std::size_t>(t) * d;
        const double rstd = c.rstd2[static_cast<std::size_t>(t)];
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dxh = d_fin[static_cast<std::size_t>(i)] * p[lay.ln2_g + static_cast<std::size_t>(i)];
            g[lay.ln2_g + static_cast<std::size_t>(i)] += d_fin[static_cast<std::size_t>(i)] * xhat[i];
            g[lay.ln2_b + static_cast<std::size_t>(i)] += d_fin[static_cast<std::size_t>(i)];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int i = 0; i < d; ++i) {
            const double dxh = d_fin[static_cast<std::size_t>(i)] * p[lay.ln2_g + static_cast<std::size_t>(i)];
            dh1[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }

    // attention sublayer (h1 = h0 + drop(Wo . heads(ln1(h0))))
    std::vector<double> d_h0(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_mix(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_q(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_k(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_v(static_cast<std::size_t>(L) * d, 0.0);
    std::vector<double> d_att(static_cast<std::size_t>(L));

    for (int t = 0; t < L; ++t) {
        const double* dh1 = d_h1.data() + static_cast<std::size_t>(t) * d;
        double* dh0 = d_h0.data() + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) dh0[i] += dh1[i];

        // through dropout into the output projection
        const double* mix = c.head_mix.data() + static_cast<std::size_t>(t) * d;
        double* dmix = d_mix.data() + static_cast<std::size_t>(t) * d;
        std::vector<double> d_proj(static_cast<std::size_t>(d));
        bool any = false;
        for (int i = 0; i < d; ++i) {
            double keep = 1.0;
            if (mask) keep = mask->attn_keep[static_cast<std::size_t>(t) * d + i] ? scale : 0.0;
            d_proj[static_cast<std::size_t>(i)] = dh1[i] * keep;
            if (d_proj[static_cast<std::size_t>(i)] != 0.0) any = true;
        }
        if (!any) continue;
        for (int i = 0; i < d; ++i) {
            const double* wrow = p + lay.wo + static_cast<std::size_t>(i) * d;
            double* gw = g + lay.wo + static_cast<std::size_t>(i) * d;
            const double mi = mix[i];
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                acc += wrow[j] * d_proj[static_cast<std::size_t>(j)];
                gw[j] += mi * d_proj[static_cast<std::size_t>(j)];
            }
            dmix[i] = acc;
        }
    }

    for (int t = 0; t < L; ++t) {
        const double* dmix = d_mix.data() + static_cast<std::size_t>(t) * d;
        for (int h = 0; h < H; ++h) {
            const double* att = c.att.data() + (static_cast<std::size_t>(t) * H + h) * L;
            const double* dm = dmix + h * hd;
            bool any = false;
            for (int i = 0; i < hd; ++i)
                if (dm[i] != 0.0) {
                    any = true;
                    break;
                }
            if (!any) continue;

            double dot = 0.0;
            for (int u = 0; u <= t; ++u) {
                const double* vu = c.v.data() + static_cast<std::size_t>(u) * d + h * hd;
                double da = 0.0;
                for (int i = 0; i < hd; ++i) {
                    da += vu[i] * dm[i];
                }
                d_att[static_cast<std::size_t>(u)] = da;
                dot += att[u] * da;
                double* dv = d_v.data() + static_cast<std::size_t>(u) * d + h * hd;
                for (int i = 0; i < hd; ++i) dv[i] += att[u] * dm[i];
            }
            const double* qt = c.q.data() + static_cast<std::size_t>(t) * d + h * hd;
            double* dq = d_q.data() + static_cast<std::size_t>(t) * d + h * hd;
            for (int u = 0; u <= t; ++u) {
                const double ds = att[u] * (d_att[static_cast<std::size_t>(u)] - dot) * inv_sqrt_hd;
                if (ds == 0.0) continue;
                const double* ku = c.k.data() + static_cast<std::size_t>(u) * d + h * hd;
                double* dk = d_k.data() + static_cast<std::size_t>(u) * d + h * hd;
                for (int i = 0; i < hd; ++i) {
                    dq[i] += ds * ku[i];
                    dk[i] += ds * qt[i];
                }
            }
        }
    }

    // q/k/v projections and layer norm 1 back to embeddings
    std::vector<double> d_ain(d);
    for (int t = 0; t < L; ++t) {
        const double* a_in = c.a_in.data() + static_cast<std::size_t>(t) * d;
        const double* dq = d_q.data() + static_cast<std::size_t>(t) * d;
        const double* dk = d_k.data() + static_cast<std::size_t>(t) * d;
        const double* dv = d_v.data() + static_cast<std::size_t>(t) * d;
        std::fill(d_ain.begin(), d_ain.end(), 0.0);
        for (int i = 0; i < d; ++i) {
            const double ai = a_in[i];
            const double* wq_row = p + lay.wq + static_cast<std::size_t>(i) * d;
            const double* wk_row = p + lay.wk + static_cast<std::size_t>(i) * d;
            const double* wv_row = p + lay.wv + static_cast<std::size_t>(i) * d;
            double* gq = g + lay.wq + static_cast<std::size_t>(i) * d;
            double* gk = g + lay.wk + static_cast<std::size_t>(i) * d;
            double* gv = g + lay.wv + static_cast<std::size_t>(i) * d;
            double acc = 0.0;
            for (int j = 0; j < d; ++j) {
                acc += wq_row[j] * dq[j] + wk_row[j] * dk[j] + wv_row[j] * dv[j];
                gq[j] += ai * dq[j];
                gk[j] += ai * dk[j];
                gv[j] += ai * dv[j];
            }
            d_ain[static_cast<std::size_t>(i)] = acc;
        }

        const double* xhat = c.x1hat.data() + static_cast<std::size_t>(t) * d;
        const double rstd = c.rstd1[static_cast<std::size_t>(t)];
        double* dh0 = d_h0.data() + static_cast<std::size_t>(t) * d;
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            const double dxh = d_ain[static_cast<std::size_t>(i)] * p[lay.ln1_g + static_cast<std::size_t>(i)];
            g[lay.ln1_g + static_cast<std::size_t>(i)] += d_ain[static_cast<std::size_t>(i)] * xhat[i];
            g[lay.ln1_b + static_cast<std::size_t>(i)] += d_ain[static_cast<std::size_t>(i)];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int i = 0; i < d; ++i) {
            const double dxh = d_ain[static_cast<std::size_t>(i)] * p[lay.ln1_g + static_cast<std::size_t>(i)];
            dh0[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }

        double* g_tok = g + lay.tok_emb + static_cast<std::size_t>(c.ids[static_cast<std::size_t>(t)]) * d;
        double* g_pos = g + lay.pos_emb + static_cast<std::size_t>(t) * d;
        for (int i = 0; i < d; ++i) {
            g_tok[i] += dh0[i];
            g_pos[i] += dh0[i];
        }
    }

    double grad_sum = 0.0;
    for (double gi : result.grad) grad_sum += gi;
    detail::check_finite(grad_sum, "gradient accumulation");
    return result;
}

// --------------------------------------------------------------------------
// checkpoint container: magic, version, config, vocab, raw parameter doubles

constexpr char kCheckpointMagic[4] = {'T', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    Vocab vocab;
    Params params;
};

namespace detail {

template <class T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
        throw std::runtime_error("truncated checkpoint: " + path);
    return value;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    if (ckpt.vocab.size() != ckpt.config.vocab_size)
        throw std::invalid_argument("vocab size does not match config");
    if (ckpt.params.flat.size() != param_count(ckpt.config))
        throw std::invalid_argument("param count does not match config");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 4);
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, static_cast<std::uint32_t>(ckpt.config.vocab_size));
    detail::write_pod(out, static_cast<std::uint32_t>(ckpt.config.d_model));
    detail::write_pod(out, static_cast<std::uint32_t>(ckpt.config.n_heads));
    detail::write_pod(out, static_cast<std::uint32_t>(ckpt.config.ffn_dim));
    detail::write_pod(out, static_cast<std::uint32_t>(ckpt.config.ctx_len));
    detail::write_pod(out, ckpt.config.dropout_rate);
    detail::write_pod(out, ckpt.config.seed);
    for (const auto& token : ckpt.vocab.tokens) {
        detail::write_pod(out, static_cast<std::uint32_t>(token.size()));
        out.write(token.data(), static_cast<std::streamsize>(token.size()));
    }
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.params.flat.size()));
    out.write(reinterpret_cast<const char*>(ckpt.params.flat.data()),
              static_cast<std::streamsize>(ckpt.params.flat.size() * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = detail::read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    Checkpoint ckpt;
    ckpt.config.vocab_size = static_cast<int>(detail::read_pod<std::uint32_t>(in, path));
    ckpt.config.d_model = static_cast<int>(detail::read_pod<std::uint32_t>(in, path));
    ckpt.config.n_heads = static_cast<int>(detail::read_pod<std::uint32_t>(in, path));
    ckpt.config.ffn_dim = static_cast<int>(detail::read_pod<std::uint32_t>(in, path));
    ckpt.config.ctx_len = static_cast<int>(detail::read_pod<std::uint32_t>(in, path));
    ckpt.config.dropout_rate = detail::read_pod<double>(in, path);
    ckpt.config.seed = detail::read_pod<std::uint64_t>(in, path);
    ckpt.config.validate();
    for (int i = 0; i < ckpt.config.vocab_size; ++i) {
        const auto len = detail::read_pod<std::uint32_t>(in, path);
        std::string token(len, '\0');
        if (!in.read(token.data(), len)) throw std::runtime_error("truncated checkpoint: " + path);
        ckpt.vocab.tokens.push_back(std::move(token));
    }
    ckpt.vocab.rebuild_index();
    const auto count = detail::read_pod<std::uint64_t>(in, path);
    if (count != param_count(ckpt.config))
        throw std::runtime_error("checkpoint parameter count mismatch: " + path);
    ckpt.params.flat.resize(count);
    if (!in.read(reinterpret_cast<char*>(ckpt.params.flat.data()),
                 static_cast<std::streamsize>(count * sizeof(double))))
        throw std::runtime_error("truncated checkpoint: " + path);
    return ckpt;
}

// Model config JSON: all fields optional, missing ones keep the base's
// values; unknown keys rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& root, ModelConfig config = {}) {
    static const std::unordered_set<std::string> known = {
        "vocab_size", "d_model", "n_heads", "ffn_dim", "ctx_len", "dropout_rate", "seed"};
    if (!root.is_object()) throw std::runtime_error("model config must be a JSON object");
    for (const auto& [key, value] : root.items()) {
        if (!known.count(key)) throw std::runtime_error("unknown model config key: " + key);
        (void)value;
    }
    if (root.contains("vocab_size")) config.vocab_size = root["vocab_size"].get<int>();
    if (root.contains("d_model")) config.d_model = root["d_model"].get<int>();
    if (root.contains("n_heads")) config.n_heads = root["n_heads"].get<int>();
    if (root.contains("ffn_dim")) config.ffn_dim = root["ffn_dim"].get<int>();
    if (root.contains("ctx_len")) config.ctx_len = root["ctx_len"].get<int>();
    if (root.contains("dropout_rate")) config.dropout_rate = root["dropout_rate"].get<double>();
    if (root.contains("seed")) config.seed = root["seed"].get<std::uint64_t>();
    return config;
}

inline ModelConfig load_model_config(const std::string& path, ModelConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model config: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed model config JSON in " + path + ": " + e.what());
    }
    return model_config_from_json(root, base);
}

}  // namespace trustsum
