#include "sccf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sccf/checkpoint.hpp"

namespace sccf {

CandidateUnion candidate_union(const ScoredCandidateList& c_ui, const ScoredCandidateList& c_uu,
                               const std::vector<double>& ui_scores, const std::map<uint32_t, double>& uu_scores) {
    std::vector<uint32_t> items;
    items.reserve(c_ui.size() + c_uu.size());
    for (const auto& c : c_ui) items.push_back(c.item);
    for (const auto& c : c_uu) items.push_back(c.item);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());

    CandidateUnion u;
    u.reserve(items.size());
    for (uint32_t item : items) {
        UnionEntry e;
        e.item = item;
        e.r_ui = ui_scores[item];
        auto it = uu_scores.find(item);
        e.r_uu = it == uu_scores.end() ? 0.0 : it->second;
        u.push_back(e);
    }
    return u;
}

void normalize_scores(CandidateUnion& u, int which) {
    if (u.empty()) return;
    double mean = 0.0;
    for (const auto& e : u) mean += which == 0 ? e.r_ui : e.r_uu;
    mean /= static_cast<double>(u.size());
    double var = 0.0;
    for (const auto& e : u) {
        const double c = (which == 0 ? e.r_ui : e.r_uu) - mean;
        var += c * c;
    }
    var /= static_cast<double>(u.size());
    const double sd = std::sqrt(var);
    for (auto& e : u) {
        double& z = which == 0 ? e.z_ui : e.z_uu;
        z = sd < 1e-9 ? 0.0 : ((which == 0 ? e.r_ui : e.r_uu) - mean) / sd;
    }
}

// ---------------------------------------------------------------------------
// FusionNet
// ---------------------------------------------------------------------------

static std::string fusion_param(size_t layer, const char* which) {
    return "fusion.l" + std::to_string(layer) + "." + which;
}

FusionNet::FusionNet(size_t input_dim, const FusionConfig& cfg, SeededRng& rng)
    : input_dim_(input_dim), cfg_(cfg) {
    size_t in = input_dim;
    for (size_t l = 0; l < cfg_.hidden.size(); ++l) {
        const size_t out = cfg_.hidden[l];
        store_.add(fusion_param(l, "w"), truncated_normal_init({in, out}, -0.01f, 0.01f, rng));
        store_.add(fusion_param(l, "b"), Tensor({out}));
        in = out;
    }
    store_.add(fusion_param(cfg_.hidden.size(), "w"), truncated_normal_init({in, 1}, -0.01f, 0.01f, rng));
    store_.add(fusion_param(cfg_.hidden.size(), "b"), Tensor({1}));
}

FusionNet::FusionNet(ParameterStore store, const FusionConfig& cfg) : cfg_(cfg), store_(std::move(store)) {
    input_dim_ = store_.get("fusion.l0.w").shape[0];
    cfg_.hidden.clear();
    size_t l = 0;
    while (store_.has(fusion_param(l + 1, "w"))) {
        cfg_.hidden.push_back(store_.get(fusion_param(l, "w")).shape[1]);
        ++l;
    }
}

double FusionNet::forward(std::span<const float> input) const {
    if (input.size() != input_dim_) throw ConfigError("fusion forward: input width mismatch");
    std::vector<float> act(input.begin(), input.end());
    std::vector<float> next;
    for (size_t l = 0; l < n_layers(); ++l) {
        const Tensor& w = store_.get(fusion_param(l, "w"));
        const Tensor& b = store_.get(fusion_param(l, "b"));
        const size_t out = w.shape[1];
        next.assign(out, 0.0f);
        for (size_t j = 0; j < out; ++j) {
            double acc = b.data[j];
            for (size_t i = 0; i < w.shape[0]; ++i) acc += static_cast<double>(act[i]) * w.at(i, j);
            next[j] = static_cast<float>(l + 1 < n_layers() ? std::max(acc, 0.0) : acc);
        }
        act.swap(next);
    }
    return act[0];
}

double FusionNet::forward_cached(std::span<const float> input, std::vector<std::vector<float>>& acts,
                                 std::vector<std::vector<float>>& pre) const {
    if (input.size() != input_dim_) throw ConfigError("fusion forward: input width mismatch");
    acts.clear();
    pre.clear();
    acts.emplace_back(input.begin(), input.end());
    for (size_t l = 0; l < n_layers(); ++l) {
        const Tensor& w = store_.get(fusion_param(l, "w"));
        const Tensor& b = store_.get(fusion_param(l, "b"));
        const size_t out = w.shape[1];
        std::vector<float> z(out);
        for (size_t j = 0; j < out; ++j) {
            double acc = b.data[j];
            for (size_t i = 0; i < w.shape[0]; ++i) acc += static_cast<double>(acts[l][i]) * w.at(i, j);
            z[j] = static_cast<float>(acc);
        }
        pre.push_back(z);
        if (l + 1 < n_layers()) {
            for (float& v : z) v = std::max(v, 0.0f);
        }
        acts.push_back(std::move(z));
    }
    return acts.back()[0];
}

void FusionNet::backward_cached(const std::vector<std::vector<float>>& acts,
                                const std::vector<std::vector<float>>& pre, double upstream,
                                GradMap& grads) const {
    std::vector<float> delta{static_cast<float>(upstream)};
    for (size_t l = n_layers(); l-- > 0;) {
        const Tensor& w = store_.get(fusion_param(l, "w"));
        Tensor& gw = grads.at(fusion_param(l, "w"));
        Tensor& gb = grads.at(fusion_param(l, "b"));
        const size_t out = w.shape[1], in = w.shape[0];
        for (size_t j = 0; j < out; ++j) {
            const float dj = delta[j];
            if (dj == 0.0f) continue;
            gb.data[j] += dj;
            for (size_t i = 0; i < in; ++i) gw.at(i, j) += dj * acts[l][i];
        }
        if (l == 0) break;
        std::vector<float> prev(in, 0.0f);
        for (size_t i = 0; i < in; ++i) {
            if (pre[l - 1][i] <= 0.0f) continue;  // relu gate of the previous layer
            double acc = 0.0;
            for (size_t j = 0; j < out; ++j) acc += static_cast<double>(delta[j]) * w.at(i, j);
            prev[i] = static_cast<float>(acc);
        }
        delta.swap(prev);
    }
}

double FusionNet::forward_with_grads(std::span<const float> input, double upstream, GradMap& grads) const {
    std::vector<std::vector<float>> acts, pre;
    const double logit = forward_cached(input, acts, pre);
    backward_cached(acts, pre, upstream, grads);
    return logit;
}

double FusionNet::bce_backward(std::span<const float> input, bool positive, double inv, GradMap& grads) const {
    std::vector<std::vector<float>> acts, pre;
    const double logit = forward_cached(input, acts, pre);
    const double coef = (positive ? sigmoid(logit) - 1.0 : sigmoid(logit)) * inv;
    backward_cached(acts, pre, coef, grads);
    return -(positive ? log_sigmoid(logit) : log_one_minus_sigmoid(logit)) * inv;
}

GradMap FusionNet::zero_grads() const {
    GradMap grads;
    for (const auto& name : store_.names()) grads.emplace(name, Tensor(store_.get(name).shape));
    return grads;
}

// ---------------------------------------------------------------------------
// SCCF pipeline
// ---------------------------------------------------------------------------

namespace {

void fill_features(const Tensor& m_u, const Tensor& items, const UnionEntry& e, std::vector<float>& buf) {
    const size_t d = m_u.numel();
    buf.resize(2 * d + 2);
    std::copy(m_u.data.begin(), m_u.data.end(), buf.begin());
    const float* q = items.row_ptr(e.item);
    std::copy(q, q + d, buf.begin() + d);
    buf[2 * d] = static_cast<float>(e.z_ui);
    buf[2 * d + 1] = static_cast<float>(e.z_uu);
}

CandidateUnion build_union_at(const SccfContext& ctx, uint32_t user, uint32_t history_len, Tensor* m_u_out) {
    const Corpus& corpus = *ctx.corpus;
    const Split& split = *ctx.split;
    const auto& seq = corpus.sequences[user];
    if (history_len == 0) return {};
    std::span<const uint32_t> history(seq.data(), history_len);
    std::span<const uint32_t> excluded(seq.data(), std::min(exclusion_len(split, user), history_len));
    return build_union_spans(ctx, user, history, excluded, m_u_out);
}

}  // namespace

CandidateUnion build_union_spans(const SccfContext& ctx, uint32_t self, std::span<const uint32_t> history,
                                 std::span<const uint32_t> excluded, Tensor* m_u_out) {
    if (history.empty()) return {};
    Tensor m_u = ctx.ui->serving_repr(history);
    std::vector<double> ui_scores = ctx.ui->score_all(m_u);
    std::vector<uint8_t> eligible(ctx.ui->n_items(), 1);
    for (uint32_t item : excluded) eligible[item] = 0;
    ScoredCandidateList c_ui = top_n(ui_scores, eligible, ctx.list_n);

    // fresh neighbors for the current representation
    std::map<uint32_t, double> uu_scores;
    ScoredCandidateList c_uu;
    const double norm = l2_norm(m_u.data.data(), m_u.numel());
    if (norm > 1e-12 && ctx.beta > 0) {
        std::vector<float> unit(m_u.numel());
        for (size_t j = 0; j < unit.size(); ++j) unit[j] = static_cast<float>(m_u.data[j] / norm);
        NeighborList neighbors = top_beta_by_query(*ctx.index, unit.data(), self, ctx.beta);
        uu_scores = user_based_scores(*ctx.index, neighbors, excluded);
        ScoredCandidateList ranked;
        ranked.reserve(uu_scores.size());
        for (const auto& [item, s] : uu_scores) ranked.push_back({item, s});
        std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.item < b.item;
        });
        if (ranked.size() > ctx.list_n) ranked.resize(ctx.list_n);
        c_uu = std::move(ranked);
    }

    CandidateUnion u = candidate_union(c_ui, c_uu, ui_scores, uu_scores);
    normalize_scores(u, 0);
    normalize_scores(u, 1);
    if (m_u_out) *m_u_out = std::move(m_u);
    return u;
}

CandidateUnion build_union(const SccfContext& ctx, uint32_t user, Tensor* m_u_out) {
    return build_union_at(ctx, user, ctx.split->train_len[user], m_u_out);
}

FusionTrainReport fusion_train(FusionNet& net, const SccfContext& ctx, SeededRng& rng) {
    struct Instance {
        Tensor m_u;
        CandidateUnion items;
        size_t positive_slot;
    };
    const Corpus& corpus = *ctx.corpus;
    const Split& split = *ctx.split;
    const Tensor& q_table = ctx.ui->item_embeddings();

    FusionTrainReport report;
    std::vector<Instance> train_set, holdout_set;
    for (uint32_t u = 0; u < corpus.n_users(); ++u) {
        if (!split.usable[u]) continue;
        // The training-time history stops before the validation label.
        const uint32_t hist_len = exclusion_len(split, u);
        if (hist_len == 0) continue;
        const bool holdout = rng.uniform01() < net.config().holdout_fraction;
        Tensor m_u;
        CandidateUnion items = build_union_at(ctx, u, hist_len, &m_u);
        const int64_t positive = split.val_item[u];
        auto slot = std::find_if(items.begin(), items.end(),
                                 [&](const UnionEntry& e) { return e.item == positive; });
        if (items.empty() || slot == items.end()) {
            ++report.n_skipped;
            continue;
        }
        const size_t positive_slot = static_cast<size_t>(slot - items.begin());
        Instance inst{std::move(m_u), std::move(items), positive_slot};
        if (holdout) {
            holdout_set.push_back(std::move(inst));
        } else {
            train_set.push_back(std::move(inst));
        }
    }
    report.n_train_users = train_set.size() + holdout_set.size();
    report.n_holdout_users = holdout_set.size();
    if (train_set.empty()) throw std::runtime_error("fusion_train: no usable training users");

    auto instance_loss = [&](const Instance& inst, GradMap* grads) {
        const double inv = 1.0 / static_cast<double>(inst.items.size());
        double loss = 0.0;
        std::vector<float> buf;
        for (size_t s = 0; s < inst.items.size(); ++s) {
            fill_features(inst.m_u, q_table, inst.items[s], buf);
            const bool positive = s == inst.positive_slot;
            if (grads) {
                loss += net.bce_backward(buf, positive, inv, *grads);
            } else {
                const double logit = net.forward(buf);
                loss -= (positive ? log_sigmoid(logit) : log_one_minus_sigmoid(logit)) * inv;
            }
        }
        return loss;
    };

    const FusionConfig& cfg = net.config();
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_holdout = std::numeric_limits<double>::infinity();
    size_t best_epoch = 0, since_best = 0;
    std::map<std::string, Tensor> best_params = net.store().entries();
    double train_loss = 0.0;

    for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        train_loss = 0.0;
        for (size_t idx : order) {
            GradMap grads = net.zero_grads();
            double loss = instance_loss(train_set[idx], &grads);
            if (cfg.l2 > 0.0f) {
                double sq = 0.0;
                for (const auto& name : net.store().names()) {
                    const Tensor& w = net.store().get(name);
                    Tensor& g = grads.at(name);
                    for (size_t i = 0; i < w.numel(); ++i) {
                        sq += static_cast<double>(w.data[i]) * w.data[i];
                        g.data[i] += 2.0f * cfg.l2 * w.data[i];
                    }
                }
                loss += cfg.l2 * sq;
            }
            net.store().adam_step(grads, cfg.adam);
            train_loss += loss;
        }
        train_loss /= static_cast<double>(train_set.size());

        if (!holdout_set.empty()) {
            double holdout_loss = 0.0;
            for (const auto& inst : holdout_set) holdout_loss += instance_loss(inst, nullptr);
            holdout_loss /= static_cast<double>(holdout_set.size());
            if (holdout_loss < best_holdout - 1e-9) {
                best_holdout = holdout_loss;
                best_epoch = epoch;
                since_best = 0;
                best_params = net.store().entries();
            } else if (++since_best >= cfg.patience) {
                break;
            }
        } else {
            best_epoch = epoch;
        }
    }
    if (!holdout_set.empty()) {
        for (auto& [name, t] : best_params) net.store().get(name) = t;
        report.best_holdout_loss = best_holdout;
    }
    report.best_epoch = best_epoch;
    report.final_train_loss = train_loss;
    return report;
}

ScoredCandidateList sccf_candidates(const FusionNet& net, const SccfContext& ctx, uint32_t user, size_t n) {
    Tensor m_u;
    CandidateUnion items = build_union(ctx, user, &m_u);
    if (items.empty()) return {};
    const Tensor& q_table = ctx.ui->item_embeddings();
    ScoredCandidateList scored;
    scored.reserve(items.size());
    std::vector<float> buf;
    for (const auto& e : items) {
        fill_features(m_u, q_table, e, buf);
        scored.push_back({e.item, net.forward(buf)});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (scored.size() > n) scored.resize(n);
    return scored;
}

void save_fusion(const std::string& path, const FusionNet& net) { save_checkpoint(path, net.store()); }

FusionNet load_fusion(const std::string& path, const FusionConfig& cfg) {
    return FusionNet(load_checkpoint(path), cfg);
}

}  // namespace sccf
