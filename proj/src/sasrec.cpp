#include "sccf/sasrec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sccf {

namespace {

std::string layer_param(size_t layer, const char* which) {
    return "sasrec.l" + std::to_string(layer) + "." + which;
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t width) {
    Tensor out({x.shape[0], width});
    for (size_t i = 0; i < x.shape[0]; ++i) {
        const float* src = x.row_ptr(i) + c0;
        float* dst = out.row_ptr(i);
        std::copy(src, src + width, dst);
    }
    return out;
}

void add_into_cols(Tensor& dst, const Tensor& src, size_t c0) {
    for (size_t i = 0; i < src.shape[0]; ++i) {
        const float* s = src.row_ptr(i);
        float* d = dst.row_ptr(i) + c0;
        for (size_t j = 0; j < src.shape[1]; ++j) d[j] += s[j];
    }
}

void accumulate(Tensor& dst, const Tensor& src) {
    for (size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
}

Tensor apply_mask(const Tensor& x, const Tensor& mask) {
    Tensor out = x;
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= mask.data[i];
    return out;
}

}  // namespace

// Per-layer forward cache for the hand-written backward pass.
struct SasrecModel::LayerCache {
    Tensor x_in;                  // sublayer input
    Tensor q, k, v;               // projections, all heads packed
    std::vector<Tensor> attn;     // softmax weights per head [t,t]
    Tensor concat;                // concatenated head outputs, pre-W^O
    Tensor attn_out;              // after W^O, pre-dropout
    Tensor drop1;                 // dropout mask of the attention sublayer
    Tensor res1;                  // x_in + dropped attention output
    Tensor x_mid;                 // LayerNorm(res1)
    Tensor h1;                    // x_mid*W_1 + b_1, pre-RELU
    Tensor h1r;                   // RELU(h1)
    Tensor ffn_out;               // h1r*W_2 + b_2, pre-dropout
    Tensor drop2;
    Tensor res2;                  // x_mid + dropped ffn output
};

struct SasrecModel::SeqCache {
    Tensor x0;          // embeddings before dropout
    Tensor emb_mask;    // embedding dropout mask
    Tensor x0_dropped;  // first block input
    std::vector<LayerCache> layers;
    Tensor x_out;       // final block output
};

SasrecModel::SasrecModel(size_t n_items, const SasrecConfig& cfg, SeededRng& rng) : items_(n_items), cfg_(cfg) {
    const size_t d = cfg_.dim;
    const size_t w = ffn_width();
    if (d % cfg_.n_heads != 0) throw ConfigError("sasrec: dim must be divisible by n_heads");
    store_.add("sasrec.P", truncated_normal_init({n_items, d}, -0.01f, 0.01f, rng));
    store_.add("sasrec.E", truncated_normal_init({cfg_.max_len, d}, -0.01f, 0.01f, rng));
    for (size_t l = 0; l < cfg_.n_layers; ++l) {
        store_.add(layer_param(l, "wq"), truncated_normal_init({d, d}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "wk"), truncated_normal_init({d, d}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "wv"), truncated_normal_init({d, d}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "wo"), truncated_normal_init({d, d}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "ffn1"), truncated_normal_init({d, w}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "ffn1b"), Tensor({w}));
        store_.add(layer_param(l, "ffn2"), truncated_normal_init({w, d}, -0.01f, 0.01f, rng));
        store_.add(layer_param(l, "ffn2b"), Tensor({d}));
        store_.add(layer_param(l, "ln1g"), Tensor::full({d}, 1.0f));
        store_.add(layer_param(l, "ln1b"), Tensor({d}));
        store_.add(layer_param(l, "ln2g"), Tensor::full({d}, 1.0f));
        store_.add(layer_param(l, "ln2b"), Tensor({d}));
    }
}

SasrecModel::SasrecModel(ParameterStore store, const SasrecConfig& cfg) : cfg_(cfg), store_(std::move(store)) {
    const Tensor& p = store_.get("sasrec.P");
    items_ = p.shape[0];
    cfg_.dim = p.shape[1];
    cfg_.max_len = store_.get("sasrec.E").shape[0];
    size_t layers = 0;
    while (store_.has(layer_param(layers, "wq"))) ++layers;
    cfg_.n_layers = layers;
    cfg_.ffn_width = store_.get(layer_param(0, "ffn1")).shape[1];
    if (cfg_.dim % cfg_.n_heads != 0) throw ConfigError("sasrec: dim must be divisible by n_heads");
}

std::vector<std::string> SasrecModel::parameter_names() const { return store_.names(); }

Tensor SasrecModel::embed_sequence(std::span<const uint32_t> seq) const {
    if (seq.empty()) throw std::runtime_error("sasrec embed_sequence: empty sequence");
    std::span<const uint32_t> view = seq;
    if (view.size() > cfg_.max_len) view = view.subspan(view.size() - cfg_.max_len);
    const size_t t = view.size(), d = cfg_.dim;
    const Tensor& p = store_.get("sasrec.P");
    const Tensor& e = store_.get("sasrec.E");
    Tensor out({t, d});
    for (size_t i = 0; i < t; ++i) {
        const float* prow = p.row_ptr(view[i]);
        const float* erow = e.row_ptr(i);
        float* orow = out.row_ptr(i);
        for (size_t j = 0; j < d; ++j) orow[j] = prow[j] + erow[j];
    }
    return out;
}

Tensor SasrecModel::attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const size_t t = q.shape[0], dh = q.shape[1];
    Tensor scores({t, t});
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t i = 0; i < t; ++i) {
        float* row = scores.row_ptr(i);
        for (size_t j = 0; j < t; ++j) {
            row[j] = j > i ? -std::numeric_limits<float>::infinity()
                           : static_cast<float>(dot(q.row_ptr(i), k.row_ptr(j), dh) * inv_sqrt);
        }
    }
    return matmul(softmax_rows(scores), v);
}

Tensor SasrecModel::run_block(size_t layer, const Tensor& x, bool training, SeededRng* rng,
                              LayerCache* cache) const {
    const size_t t = x.shape[0], d = cfg_.dim;
    const size_t heads = cfg_.n_heads, dh = d / heads;
    const Tensor& wq = store_.get(layer_param(layer, "wq"));
    const Tensor& wk = store_.get(layer_param(layer, "wk"));
    const Tensor& wv = store_.get(layer_param(layer, "wv"));
    const Tensor& wo = store_.get(layer_param(layer, "wo"));

    Tensor q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
    Tensor concat({t, d});
    std::vector<Tensor> attn_weights;
    attn_weights.reserve(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t h = 0; h < heads; ++h) {
        const size_t c0 = h * dh;
        Tensor scores({t, t});
        for (size_t i = 0; i < t; ++i) {
            const float* qrow = q.row_ptr(i) + c0;
            float* srow = scores.row_ptr(i);
            for (size_t j = 0; j < t; ++j) {
                srow[j] = j > i ? -std::numeric_limits<float>::infinity()
                                : static_cast<float>(dot(qrow, k.row_ptr(j) + c0, dh) * inv_sqrt);
            }
        }
        Tensor a = softmax_rows(scores);
        // concat[:, c0:c0+dh] = a * v[:, c0:c0+dh]
        for (size_t i = 0; i < t; ++i) {
            const float* arow = a.row_ptr(i);
            float* crow = concat.row_ptr(i) + c0;
            for (size_t j = 0; j <= i; ++j) {
                const float aij = arow[j];
                const float* vrow = v.row_ptr(j) + c0;
                for (size_t cidx = 0; cidx < dh; ++cidx) crow[cidx] += aij * vrow[cidx];
            }
        }
        attn_weights.push_back(std::move(a));
    }
    Tensor attn_out = matmul(concat, wo);

    Tensor drop1 = Tensor::full({t, d}, 1.0f);
    if (training && rng) drop1 = dropout_mask({t, d}, cfg_.dropout_rate, *rng, true);
    Tensor res1 = x;
    for (size_t i = 0; i < res1.numel(); ++i) res1.data[i] += attn_out.data[i] * drop1.data[i];
    Tensor x_mid = layer_norm(res1, store_.get(layer_param(layer, "ln1g")), store_.get(layer_param(layer, "ln1b")));

    const Tensor& w1 = store_.get(layer_param(layer, "ffn1"));
    const Tensor& b1 = store_.get(layer_param(layer, "ffn1b"));
    const Tensor& w2 = store_.get(layer_param(layer, "ffn2"));
    const Tensor& b2 = store_.get(layer_param(layer, "ffn2b"));
    Tensor h1 = matmul(x_mid, w1);
    for (size_t i = 0; i < t; ++i) {
        float* row = h1.row_ptr(i);
        for (size_t j = 0; j < h1.shape[1]; ++j) row[j] += b1.data[j];
    }
    Tensor h1r = h1;
    for (float& vv : h1r.data) vv = std::max(vv, 0.0f);
    Tensor ffn_out = matmul(h1r, w2);
    for (size_t i = 0; i < t; ++i) {
        float* row = ffn_out.row_ptr(i);
        for (size_t j = 0; j < d; ++j) row[j] += b2.data[j];
    }

    Tensor drop2 = Tensor::full({t, d}, 1.0f);
    if (training && rng) drop2 = dropout_mask({t, d}, cfg_.dropout_rate, *rng, true);
    Tensor res2 = x_mid;
    for (size_t i = 0; i < res2.numel(); ++i) res2.data[i] += ffn_out.data[i] * drop2.data[i];
    Tensor x_out = layer_norm(res2, store_.get(layer_param(layer, "ln2g")), store_.get(layer_param(layer, "ln2b")));

    if (cache) {
        cache->x_in = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn_weights);
        cache->concat = std::move(concat);
        cache->attn_out = std::move(attn_out);
        cache->drop1 = std::move(drop1);
        cache->res1 = std::move(res1);
        cache->x_mid = std::move(x_mid);
        cache->h1 = std::move(h1);
        cache->h1r = std::move(h1r);
        cache->ffn_out = std::move(ffn_out);
        cache->drop2 = std::move(drop2);
        cache->res2 = std::move(res2);
        return x_out;
    }
    return x_out;
}

Tensor SasrecModel::self_attention_block(size_t layer, const Tensor& x, bool training, SeededRng* rng) const {
    // attention sublayer only, with its wrapper; used directly by tests
    const size_t t = x.shape[0], d = cfg_.dim;
    const size_t heads = cfg_.n_heads, dh = d / heads;
    Tensor q = matmul(x, store_.get(layer_param(layer, "wq")));
    Tensor k = matmul(x, store_.get(layer_param(layer, "wk")));
    Tensor v = matmul(x, store_.get(layer_param(layer, "wv")));
    Tensor concat({t, d});
    for (size_t h = 0; h < heads; ++h) {
        const size_t c0 = h * dh;
        Tensor out_h = attention(slice_cols(q, c0, dh), slice_cols(k, c0, dh), slice_cols(v, c0, dh));
        add_into_cols(concat, out_h, c0);
    }
    Tensor sub = matmul(concat, store_.get(layer_param(layer, "wo")));
    Tensor mask = Tensor::full({t, d}, 1.0f);
    if (training && rng) mask = dropout_mask({t, d}, cfg_.dropout_rate, *rng, true);
    Tensor res = x;
    for (size_t i = 0; i < res.numel(); ++i) res.data[i] += sub.data[i] * mask.data[i];
    return layer_norm(res, store_.get(layer_param(layer, "ln1g")), store_.get(layer_param(layer, "ln1b")));
}

Tensor SasrecModel::pffn_block(size_t layer, const Tensor& x, bool training, SeededRng* rng) const {
    const size_t t = x.shape[0], d = cfg_.dim;
    const Tensor& w1 = store_.get(layer_param(layer, "ffn1"));
    const Tensor& b1 = store_.get(layer_param(layer, "ffn1b"));
    const Tensor& w2 = store_.get(layer_param(layer, "ffn2"));
    const Tensor& b2 = store_.get(layer_param(layer, "ffn2b"));
    Tensor h1 = matmul(x, w1);
    for (size_t i = 0; i < t; ++i) {
        float* row = h1.row_ptr(i);
        for (size_t j = 0; j < h1.shape[1]; ++j) row[j] = std::max(row[j] + b1.data[j], 0.0f);
    }
    Tensor sub = matmul(h1, w2);
    for (size_t i = 0; i < t; ++i) {
        float* row = sub.row_ptr(i);
        for (size_t j = 0; j < d; ++j) row[j] += b2.data[j];
    }
    Tensor mask = Tensor::full({t, d}, 1.0f);
    if (training && rng) mask = dropout_mask({t, d}, cfg_.dropout_rate, *rng, true);
    Tensor res = x;
    for (size_t i = 0; i < res.numel(); ++i) res.data[i] += sub.data[i] * mask.data[i];
    return layer_norm(res, store_.get(layer_param(layer, "ln2g")), store_.get(layer_param(layer, "ln2b")));
}

Tensor SasrecModel::forward_cached(std::span<const uint32_t> seq, bool training, SeededRng* rng,
                                   SeqCache* cache) const {
    Tensor x0 = embed_sequence(seq);
    Tensor emb_mask = Tensor::full(x0.shape, 1.0f);
    if (training && rng) emb_mask = dropout_mask(x0.shape, cfg_.dropout_rate, *rng, true);
    Tensor x = apply_mask(x0, emb_mask);
    if (cache) {
        cache->x0 = x0;
        cache->emb_mask = emb_mask;
        cache->x0_dropped = x;
        cache->layers.resize(cfg_.n_layers);
    }
    for (size_t l = 0; l < cfg_.n_layers; ++l) {
        x = run_block(l, x, training, rng, cache ? &cache->layers[l] : nullptr);
    }
    if (cache) cache->x_out = x;
    return x;
}

Tensor SasrecModel::forward(std::span<const uint32_t> seq, bool training, SeededRng* rng) const {
    return forward_cached(seq, training, rng, nullptr);
}

Tensor SasrecModel::user_repr(std::span<const uint32_t> seq) const {
    Tensor x = forward(seq);
    const size_t t = x.shape[0], d = cfg_.dim;
    Tensor rep({d});
    std::copy(x.row_ptr(t - 1), x.row_ptr(t - 1) + d, rep.data.begin());
    return rep;
}

std::vector<double> SasrecModel::score_all(const Tensor& m_u) const {
    const Tensor& p = store_.get("sasrec.P");
    std::vector<double> scores(items_);
    for (size_t i = 0; i < items_; ++i) scores[i] = dot(m_u.data.data(), p.row_ptr(i), cfg_.dim);
    return scores;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

// Training view of one user: inputs are the prefix minus its last item
// (truncated to the last max_len positions), targets the shifted prefix.
struct TrainView {
    std::span<const uint32_t> inputs;
    std::span<const uint32_t> targets;
};

TrainView make_view(std::span<const uint32_t> prefix, size_t max_len) {
    const size_t total = prefix.size() - 1;  // input/target pairs available
    const size_t t = std::min(total, max_len);
    const size_t start = total - t;
    return {prefix.subspan(start, t), prefix.subspan(start + 1, t)};
}

}  // namespace

double SasrecModel::seq_loss(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives,
                             double inv_m, SeededRng* rng) const {
    if (prefix.size() < 2) throw std::logic_error("sasrec seq_loss needs at least 2 prefix items");
    const TrainView view = make_view(prefix, cfg_.max_len);
    const size_t t = view.inputs.size();
    if (negatives.size() != t * cfg_.neg_per_pos) throw std::logic_error("sasrec: negatives size mismatch");

    Tensor x = forward(view.inputs, rng != nullptr, rng);
    const Tensor& p = store_.get("sasrec.P");
    double loss = 0.0;
    for (size_t pos = 0; pos < t; ++pos) {
        const float* out = x.row_ptr(pos);
        loss -= log_sigmoid(dot(out, p.row_ptr(view.targets[pos]), cfg_.dim));
        for (size_t j = 0; j < cfg_.neg_per_pos; ++j) {
            loss -= log_one_minus_sigmoid(dot(out, p.row_ptr(negatives[pos * cfg_.neg_per_pos + j]), cfg_.dim));
        }
    }
    return loss * inv_m;
}

double SasrecModel::seq_loss_and_grads(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives,
                                       double inv_m, GradMap& grads, SeededRng* rng) const {
    if (prefix.size() < 2) throw std::logic_error("sasrec seq_loss_and_grads needs at least 2 prefix items");
    const TrainView view = make_view(prefix, cfg_.max_len);
    const size_t t = view.inputs.size(), d = cfg_.dim;
    if (negatives.size() != t * cfg_.neg_per_pos) throw std::logic_error("sasrec: negatives size mismatch");

    SeqCache cache;
    Tensor x = forward_cached(view.inputs, rng != nullptr, rng, &cache);
    const Tensor& p = store_.get("sasrec.P");

    // Head: per-position positive plus sampled negatives.
    double loss = 0.0;
    Tensor dx(x.shape);
    Tensor& dp = grads.at("sasrec.P");
    for (size_t pos = 0; pos < t; ++pos) {
        const float* out = x.row_ptr(pos);
        float* dout = dx.row_ptr(pos);
        const uint32_t target = view.targets[pos];
        const double r_pos = dot(out, p.row_ptr(target), d);
        loss -= log_sigmoid(r_pos);
        const float c_pos = static_cast<float>((sigmoid(r_pos) - 1.0) * inv_m);
        axpy(c_pos, p.row_ptr(target), dout, d);
        axpy(c_pos, out, dp.row_ptr(target), d);
        for (size_t j = 0; j < cfg_.neg_per_pos; ++j) {
            const uint32_t neg = negatives[pos * cfg_.neg_per_pos + j];
            const double r_neg = dot(out, p.row_ptr(neg), d);
            loss -= log_one_minus_sigmoid(r_neg);
            const float c_neg = static_cast<float>(sigmoid(r_neg) * inv_m);
            axpy(c_neg, p.row_ptr(neg), dout, d);
            axpy(c_neg, out, dp.row_ptr(neg), d);
        }
    }

    // Blocks in reverse.
    for (size_t l = cfg_.n_layers; l-- > 0;) {
        const LayerCache& c = cache.layers[l];
        const size_t heads = cfg_.n_heads, dh = d / heads;

        // LN2
        Tensor dres2 = layer_norm_backward(c.res2, store_.get(layer_param(l, "ln2g")), dx,
                                           grads.at(layer_param(l, "ln2g")), grads.at(layer_param(l, "ln2b")));
        // residual: res2 = x_mid + drop2 .* ffn_out
        Tensor dffn_out = apply_mask(dres2, c.drop2);
        Tensor dx_mid = dres2;

        // ffn_out = h1r*W2 + b2
        accumulate(grads.at(layer_param(l, "ffn2")), matmul_tn(c.h1r, dffn_out));
        {
            Tensor& db2 = grads.at(layer_param(l, "ffn2b"));
            for (size_t i = 0; i < t; ++i) {
                const float* row = dffn_out.row_ptr(i);
                for (size_t j = 0; j < d; ++j) db2.data[j] += row[j];
            }
        }
        Tensor dh1r = matmul_nt(dffn_out, store_.get(layer_param(l, "ffn2")));
        // relu
        Tensor dh1 = dh1r;
        for (size_t i = 0; i < dh1.numel(); ++i) {
            if (c.h1.data[i] <= 0.0f) dh1.data[i] = 0.0f;
        }
        // h1 = x_mid*W1 + b1
        accumulate(grads.at(layer_param(l, "ffn1")), matmul_tn(c.x_mid, dh1));
        {
            Tensor& db1 = grads.at(layer_param(l, "ffn1b"));
            for (size_t i = 0; i < t; ++i) {
                const float* row = dh1.row_ptr(i);
                for (size_t j = 0; j < dh1.shape[1]; ++j) db1.data[j] += row[j];
            }
        }
        accumulate(dx_mid, matmul_nt(dh1, store_.get(layer_param(l, "ffn1"))));

        // LN1
        Tensor dres1 = layer_norm_backward(c.res1, store_.get(layer_param(l, "ln1g")), dx_mid,
                                           grads.at(layer_param(l, "ln1g")), grads.at(layer_param(l, "ln1b")));
        // residual: res1 = x_in + drop1 .* attn_out
        Tensor dattn_out = apply_mask(dres1, c.drop1);
        Tensor dx_in = dres1;

        // attn_out = concat * W^O
        accumulate(grads.at(layer_param(l, "wo")), matmul_tn(c.concat, dattn_out));
        Tensor dconcat = matmul_nt(dattn_out, store_.get(layer_param(l, "wo")));

        Tensor dq({t, d}), dk({t, d}), dv({t, d});
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        for (size_t h = 0; h < heads; ++h) {
            const size_t c0 = h * dh;
            const Tensor& a = c.attn[h];
            // dA = dconcat_h * V_h^T ; dV_h = A^T * dconcat_h
            Tensor da({t, t});
            for (size_t i = 0; i < t; ++i) {
                const float* drow = dconcat.row_ptr(i) + c0;
                float* darow = da.row_ptr(i);
                for (size_t j = 0; j <= i; ++j) darow[j] = static_cast<float>(dot(drow, c.v.row_ptr(j) + c0, dh));
                const float* arow = a.row_ptr(i);
                for (size_t j = 0; j <= i; ++j) {
                    float* dvrow = dv.row_ptr(j) + c0;
                    for (size_t cidx = 0; cidx < dh; ++cidx) dvrow[cidx] += arow[j] * drow[cidx];
                }
            }
            // softmax backward: dS = A .* (dA - rowsum(dA .* A))
            Tensor ds({t, t});
            for (size_t i = 0; i < t; ++i) {
                const float* arow = a.row_ptr(i);
                const float* darow = da.row_ptr(i);
                double inner = 0.0;
                for (size_t j = 0; j <= i; ++j) inner += static_cast<double>(darow[j]) * arow[j];
                float* dsrow = ds.row_ptr(i);
                for (size_t j = 0; j <= i; ++j) dsrow[j] = static_cast<float>(arow[j] * (darow[j] - inner));
            }
            // S = Q_h K_h^T * inv_sqrt (causal): dQ_h = dS*K_h*inv_sqrt, dK_h = dS^T*Q_h*inv_sqrt
            for (size_t i = 0; i < t; ++i) {
                const float* dsrow = ds.row_ptr(i);
                float* dqrow = dq.row_ptr(i) + c0;
                for (size_t j = 0; j <= i; ++j) {
                    const float w = static_cast<float>(dsrow[j] * inv_sqrt);
                    if (w == 0.0f) continue;
                    const float* krow = c.k.row_ptr(j) + c0;
                    for (size_t cidx = 0; cidx < dh; ++cidx) dqrow[cidx] += w * krow[cidx];
                    float* dkrow = dk.row_ptr(j) + c0;
                    const float* qrow = c.q.row_ptr(i) + c0;
                    for (size_t cidx = 0; cidx < dh; ++cidx) dkrow[cidx] += w * qrow[cidx];
                }
            }
        }
        // projections
        accumulate(grads.at(layer_param(l, "wq")), matmul_tn(c.x_in, dq));
        accumulate(grads.at(layer_param(l, "wk")), matmul_tn(c.x_in, dk));
        accumulate(grads.at(layer_param(l, "wv")), matmul_tn(c.x_in, dv));
        accumulate(dx_in, matmul_nt(dq, store_.get(layer_param(l, "wq"))));
        accumulate(dx_in, matmul_nt(dk, store_.get(layer_param(l, "wk"))));
        accumulate(dx_in, matmul_nt(dv, store_.get(layer_param(l, "wv"))));

        dx = std::move(dx_in);
    }

    // Embedding dropout, then scatter into P and E.
    Tensor dx0 = apply_mask(dx, cache.emb_mask);
    Tensor& de = grads.at("sasrec.E");
    for (size_t i = 0; i < t; ++i) {
        axpy(1.0f, dx0.row_ptr(i), dp.row_ptr(view.inputs[i]), d);
        axpy(1.0f, dx0.row_ptr(i), de.row_ptr(i), d);
    }
    return loss * inv_m;
}

double SasrecModel::train_epoch(const Corpus& corpus, const Split& split, SeededRng& rng) {
    // skip users with nothing to predict or nothing left to sample negatives from
    std::vector<uint32_t> users;
    std::vector<uint32_t> dedup;
    for (uint32_t u = 0; u < corpus.n_users(); ++u) {
        if (!split.usable[u] || split.train_len[u] < 2) continue;
        const auto& seq = corpus.sequences[u];
        dedup.assign(seq.begin(), seq.begin() + split.train_len[u]);
        std::sort(dedup.begin(), dedup.end());
        dedup.erase(std::unique(dedup.begin(), dedup.end()), dedup.end());
        if (dedup.size() < items_) users.push_back(u);
    }
    rng.shuffle(users);

    GradMap grads;
    for (const auto& name : store_.names()) grads.emplace(name, Tensor(store_.get(name).shape));

    double loss_sum = 0.0;
    size_t instance_sum = 0;
    std::vector<uint32_t> negatives;
    std::vector<uint32_t> sorted_prefix;
    for (size_t b0 = 0; b0 < users.size(); b0 += cfg_.batch_size) {
        const size_t b1 = std::min(users.size(), b0 + cfg_.batch_size);
        // first pass: batch instance count for the loss normalization
        size_t batch_instances = 0;
        for (size_t bi = b0; bi < b1; ++bi) {
            const size_t pairs = std::min<size_t>(split.train_len[users[bi]] - 1, cfg_.max_len);
            batch_instances += pairs * (1 + cfg_.neg_per_pos);
        }
        const double inv_m = 1.0 / static_cast<double>(batch_instances);

        for (auto& [name, g] : grads) std::fill(g.data.begin(), g.data.end(), 0.0f);
        double batch_loss = 0.0;
        for (size_t bi = b0; bi < b1; ++bi) {
            const uint32_t u = users[bi];
            const auto& seq = corpus.sequences[u];
            std::span<const uint32_t> prefix(seq.data(), split.train_len[u]);

            sorted_prefix.assign(prefix.begin(), prefix.end());
            std::sort(sorted_prefix.begin(), sorted_prefix.end());
            const size_t pairs = std::min<size_t>(prefix.size() - 1, cfg_.max_len);
            negatives.clear();
            while (negatives.size() < pairs * cfg_.neg_per_pos) {
                const uint32_t j = static_cast<uint32_t>(rng.uniform_below(items_));
                if (!std::binary_search(sorted_prefix.begin(), sorted_prefix.end(), j)) negatives.push_back(j);
            }
            batch_loss += seq_loss_and_grads(prefix, negatives, inv_m, grads, &rng);
        }

        if (cfg_.l2 > 0.0f) {
            double sq = 0.0;
            for (const auto& name : store_.names()) {
                const Tensor& w = store_.get(name);
                Tensor& g = grads.at(name);
                for (size_t i = 0; i < w.numel(); ++i) {
                    sq += static_cast<double>(w.data[i]) * w.data[i];
                    g.data[i] += 2.0f * cfg_.l2 * w.data[i];
                }
            }
            batch_loss += cfg_.l2 * sq;
        }
        store_.adam_step(grads, cfg_.adam);
        loss_sum += batch_loss * static_cast<double>(batch_instances);
        instance_sum += batch_instances;
    }
    return instance_sum == 0 ? 0.0 : loss_sum / static_cast<double>(instance_sum);
}

ScoredCandidateList SasrecModel::candidates(const Corpus& corpus, const Split& split, uint32_t user,
                                            size_t n) const {
    const auto& seq = corpus.sequences[user];
    std::span<const uint32_t> prefix(seq.data(), split.train_len[user]);
    const Tensor rep = user_repr(prefix);
    std::vector<double> scores = score_all(rep);
    std::vector<uint8_t> eligible(items_, 1);
    for (uint32_t t = 0; t < exclusion_len(split, user); ++t) eligible[seq[t]] = 0;
    return top_n(scores, eligible, n);
}

}  // namespace sccf
