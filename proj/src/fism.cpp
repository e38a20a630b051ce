#include "sccf/fism.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sccf {

ScoredCandidateList top_n(const std::vector<double>& scores, const std::vector<uint8_t>& eligible, size_t n) {
    std::vector<uint32_t> idx;
    idx.reserve(scores.size());
    for (uint32_t i = 0; i < scores.size(); ++i) {
        if (eligible[i]) idx.push_back(i);
    }
    const size_t keep = std::min(n, idx.size());
    auto better = [&](uint32_t a, uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + keep, idx.end(), better);
    ScoredCandidateList out;
    out.reserve(keep);
    for (size_t i = 0; i < keep; ++i) out.push_back({idx[i], scores[idx[i]]});
    return out;
}

FismModel::FismModel(size_t n_items, const FismConfig& cfg, SeededRng& rng) : items_(n_items), cfg_(cfg) {
    store_.add("fism.P", truncated_normal_init({n_items, cfg.dim}, -0.01f, 0.01f, rng));
}

FismModel::FismModel(ParameterStore store, const FismConfig& cfg) : cfg_(cfg), store_(std::move(store)) {
    const Tensor& p = store_.get("fism.P");
    items_ = p.shape[0];
    cfg_.dim = p.shape[1];
}

Tensor FismModel::user_repr(std::span<const uint32_t> history, std::optional<uint32_t> exclude,
                            std::optional<size_t> window) const {
    std::span<const uint32_t> view = history;
    if (window && *window < view.size()) view = view.subspan(view.size() - *window);

    const Tensor& p = store_.get("fism.P");
    const size_t d = cfg_.dim;
    std::vector<double> acc(d, 0.0);
    size_t count = 0;
    for (uint32_t item : view) {
        if (exclude && item == *exclude) continue;
        const float* row = p.row_ptr(item);
        for (size_t j = 0; j < d; ++j) acc[j] += row[j];
        ++count;
    }
    if (count == 0) throw std::runtime_error("fism user_repr: no history");
    const double scale = std::pow(static_cast<double>(count), -static_cast<double>(cfg_.alpha));
    Tensor out({d});
    for (size_t j = 0; j < d; ++j) out.data[j] = static_cast<float>(acc[j] * scale);
    return out;
}

double FismModel::score(const Tensor& m_u, uint32_t item) const {
    if (item >= items_) throw std::logic_error("fism score: item index out of range");
    return dot(m_u.data.data(), store_.get("fism.P").row_ptr(item), cfg_.dim);
}

std::vector<double> FismModel::score_all(const Tensor& m_u) const {
    const Tensor& p = store_.get("fism.P");
    std::vector<double> scores(items_);
    for (size_t i = 0; i < items_; ++i) scores[i] = dot(m_u.data.data(), p.row_ptr(i), cfg_.dim);
    return scores;
}

double FismModel::batch_loss(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives) const {
    const Tensor& p = store_.get("fism.P");
    const size_t d = cfg_.dim;
    const size_t len = prefix.size();
    if (len < 2) throw std::logic_error("fism batch needs at least 2 prefix items");
    std::vector<double> pooled(d, 0.0);
    for (uint32_t item : prefix) {
        const float* row = p.row_ptr(item);
        for (size_t j = 0; j < d; ++j) pooled[j] += row[j];
    }
    const double scale_pos = std::pow(static_cast<double>(len - 1), -static_cast<double>(cfg_.alpha));
    const double scale_neg = std::pow(static_cast<double>(len), -static_cast<double>(cfg_.alpha));

    double loss = 0.0;
    for (uint32_t item : prefix) {
        const float* row = p.row_ptr(item);
        double sp = 0.0, self = 0.0;
        for (size_t j = 0; j < d; ++j) {
            sp += pooled[j] * row[j];
            self += static_cast<double>(row[j]) * row[j];
        }
        loss -= log_sigmoid(scale_pos * (sp - self));
    }
    for (uint32_t item : negatives) {
        const float* row = p.row_ptr(item);
        double sp = 0.0;
        for (size_t j = 0; j < d; ++j) sp += pooled[j] * row[j];
        loss -= log_one_minus_sigmoid(scale_neg * sp);
    }
    loss /= static_cast<double>(len + negatives.size());
    if (cfg_.l2 > 0.0f) {
        double sq = 0.0;
        for (float v : p.data) sq += static_cast<double>(v) * v;
        loss += cfg_.l2 * sq;
    }
    return loss;
}

double FismModel::batch_loss_and_grads(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives,
                                       std::map<uint32_t, std::vector<float>>& row_grads) const {
    const Tensor& p = store_.get("fism.P");
    const size_t d = cfg_.dim;
    const size_t len = prefix.size();
    if (len < 2) throw std::logic_error("fism batch needs at least 2 prefix items");
    const double inv_m = 1.0 / static_cast<double>(len + negatives.size());

    std::vector<double> pooled(d, 0.0);
    for (uint32_t item : prefix) {
        const float* row = p.row_ptr(item);
        for (size_t j = 0; j < d; ++j) pooled[j] += row[j];
    }
    const double scale_pos = std::pow(static_cast<double>(len - 1), -static_cast<double>(cfg_.alpha));
    const double scale_neg = std::pow(static_cast<double>(len), -static_cast<double>(cfg_.alpha));

    double loss = 0.0;
    std::vector<double> coef_pos(len);
    for (size_t t = 0; t < len; ++t) {
        const float* row = p.row_ptr(prefix[t]);
        double sp = 0.0, self = 0.0;
        for (size_t j = 0; j < d; ++j) {
            sp += pooled[j] * row[j];
            self += static_cast<double>(row[j]) * row[j];
        }
        const double r = scale_pos * (sp - self);
        loss -= log_sigmoid(r);
        coef_pos[t] = (sigmoid(r) - 1.0) * inv_m;
    }
    std::vector<double> coef_neg(negatives.size());
    for (size_t t = 0; t < negatives.size(); ++t) {
        const float* row = p.row_ptr(negatives[t]);
        double sp = 0.0;
        for (size_t j = 0; j < d; ++j) sp += pooled[j] * row[j];
        const double r = scale_neg * sp;
        loss -= log_one_minus_sigmoid(r);
        coef_neg[t] = sigmoid(r) * inv_m;
    }
    loss *= inv_m;

    auto grad_row = [&](uint32_t item) -> std::vector<float>& {
        auto [it, fresh] = row_grads.try_emplace(item);
        if (fresh) it->second.assign(d, 0.0f);
        return it->second;
    };

    // common_pos = Σ_t coef_pos[t] * p_{i_t}; common_neg = Σ_t coef_neg[t] * p_{j_t}
    std::vector<double> common_pos(d, 0.0), common_neg(d, 0.0);
    for (size_t t = 0; t < len; ++t) {
        const float* row = p.row_ptr(prefix[t]);
        for (size_t j = 0; j < d; ++j) common_pos[j] += coef_pos[t] * row[j];
    }
    for (size_t t = 0; t < negatives.size(); ++t) {
        const float* row = p.row_ptr(negatives[t]);
        for (size_t j = 0; j < d; ++j) common_neg[j] += coef_neg[t] * row[j];
    }

    // History rows: every positive i != k contributes coef_i*scale_pos*p_i,
    // the own slot contributes coef_k*scale_pos*(pooled - p_k), and every
    // negative adds coef_j*scale_neg*p_j.
    for (size_t t = 0; t < len; ++t) {
        const uint32_t k = prefix[t];
        const float* row = p.row_ptr(k);
        auto& g = grad_row(k);
        const double ck = coef_pos[t];
        for (size_t j = 0; j < d; ++j) {
            const double from_others = scale_pos * (common_pos[j] - ck * row[j]);
            const double own = ck * scale_pos * (pooled[j] - row[j]);
            g[j] += static_cast<float>(from_others + own + scale_neg * common_neg[j]);
        }
    }
    // Negative rows: d r_j / d p_j = scale_neg * pooled.
    for (size_t t = 0; t < negatives.size(); ++t) {
        auto& g = grad_row(negatives[t]);
        const double cj = coef_neg[t];
        for (size_t j = 0; j < d; ++j) g[j] += static_cast<float>(cj * scale_neg * pooled[j]);
    }

    if (cfg_.l2 > 0.0f) {
        double sq = 0.0;
        for (float v : p.data) sq += static_cast<double>(v) * v;
        loss += cfg_.l2 * sq;
        for (uint32_t i = 0; i < items_; ++i) {
            auto& g = grad_row(i);
            const float* row = p.row_ptr(i);
            for (size_t j = 0; j < d; ++j) g[j] += 2.0f * cfg_.l2 * row[j];
        }
    }
    return loss;
}

double FismModel::train_epoch(const Corpus& corpus, const Split& split, SeededRng& rng) {
    std::vector<uint32_t> users;
    for (uint32_t u = 0; u < corpus.n_users(); ++u) {
        if (split.usable[u] && split.train_len[u] >= 2) users.push_back(u);
    }
    rng.shuffle(users);

    double loss_sum = 0.0;
    size_t instance_sum = 0;
    std::vector<uint32_t> negatives;
    std::vector<uint32_t> sorted_prefix;
    for (uint32_t u : users) {
        const auto& seq = corpus.sequences[u];
        std::span<const uint32_t> prefix(seq.data(), split.train_len[u]);

        sorted_prefix.assign(prefix.begin(), prefix.end());
        std::sort(sorted_prefix.begin(), sorted_prefix.end());
        negatives.clear();
        const size_t want = prefix.size() * cfg_.neg_per_pos;
        if (sorted_prefix.size() < items_) {
            while (negatives.size() < want) {
                const uint32_t j = static_cast<uint32_t>(rng.uniform_below(items_));
                if (!std::binary_search(sorted_prefix.begin(), sorted_prefix.end(), j)) negatives.push_back(j);
            }
        }

        std::map<uint32_t, std::vector<float>> row_grads;
        const double loss = batch_loss_and_grads(prefix, negatives, row_grads);

        SparseRowGrads srg;
        srg.rows.reserve(row_grads.size());
        srg.values.reserve(row_grads.size() * cfg_.dim);
        for (auto& [row, g] : row_grads) {
            srg.rows.push_back(row);
            srg.values.insert(srg.values.end(), g.begin(), g.end());
        }
        SparseGradMap sparse;
        sparse.emplace("fism.P", std::move(srg));
        store_.adam_step({}, sparse, cfg_.adam);

        const size_t m_u = prefix.size() + negatives.size();
        loss_sum += loss * static_cast<double>(m_u);
        instance_sum += m_u;
    }
    return instance_sum == 0 ? 0.0 : loss_sum / static_cast<double>(instance_sum);
}

ScoredCandidateList FismModel::candidates(const Corpus& corpus, const Split& split, uint32_t user, size_t n) const {
    const auto& seq = corpus.sequences[user];
    std::span<const uint32_t> prefix(seq.data(), split.train_len[user]);
    const Tensor m_u = user_repr(prefix, std::nullopt, cfg_.window);
    std::vector<double> scores = score_all(m_u);
    std::vector<uint8_t> eligible(items_, 1);
    for (uint32_t t = 0; t < exclusion_len(split, user); ++t) eligible[seq[t]] = 0;
    return top_n(scores, eligible, n);
}

}  // namespace sccf
