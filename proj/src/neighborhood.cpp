#include "sccf/neighborhood.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sccf/checkpoint.hpp"

namespace sccf {

UserIndex build_user_index(const UiModel& model, const Corpus& corpus, const Split& split, size_t window) {
    const size_t n = corpus.n_users(), d = model.dim();
    UserIndex index;
    index.reps = Tensor({std::max<size_t>(n, 1), d});
    index.valid.assign(n, 0);
    index.recency.resize(n);
    index.window = window;
    index.build_timestamp =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();

    for (uint32_t u = 0; u < n; ++u) {
        const uint32_t len = split.train_len[u];
        if (!split.usable[u] || len == 0) {
            ++index.n_warnings;
            continue;
        }
        const auto& seq = corpus.sequences[u];
        std::span<const uint32_t> prefix(seq.data(), len);
        Tensor rep = model.serving_repr(prefix);
        const double norm = l2_norm(rep.data.data(), d);
        if (norm < 1e-12) {
            ++index.n_warnings;
            continue;
        }
        float* row = index.reps.row_ptr(u);
        for (size_t j = 0; j < d; ++j) row[j] = static_cast<float>(rep.data[j] / norm);
        index.valid[u] = 1;
        const size_t w = std::min<size_t>(window, len);
        index.recency[u].assign(prefix.end() - w, prefix.end());
    }
    return index;
}

double cosine_sim(const UserIndex& index, uint32_t u, uint32_t v) {
    return dot(index.reps.row_ptr(u), index.reps.row_ptr(v), index.dim());
}

NeighborList top_beta_by_query(const UserIndex& index, const float* unit_query, uint32_t self, size_t beta) {
    const size_t n = index.n_users();
    std::vector<uint32_t> others;
    others.reserve(n);
    for (uint32_t v = 0; v < n; ++v) {
        if (v != self && index.valid[v]) others.push_back(v);
    }
    std::vector<double> sims(n, 0.0);
    for (uint32_t v : others) sims[v] = dot(unit_query, index.reps.row_ptr(v), index.dim());

    const size_t keep = std::min(beta, others.size());
    auto better = [&](uint32_t a, uint32_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    };
    std::partial_sort(others.begin(), others.begin() + keep, others.end(), better);
    NeighborList out;
    out.reserve(keep);
    for (size_t i = 0; i < keep; ++i) out.push_back({others[i], sims[others[i]]});
    return out;
}

NeighborList top_beta_neighbors(const UserIndex& index, uint32_t u, size_t beta) {
    return top_beta_by_query(index, index.reps.row_ptr(u), u, beta);
}

std::map<uint32_t, double> user_based_scores(const UserIndex& index, const NeighborList& neighbors,
                                             std::span<const uint32_t> excluded) {
    std::map<uint32_t, double> scores;
    for (const Neighbor& nb : neighbors) {
        for (uint32_t item : index.recency[nb.user]) scores[item] += nb.sim;
    }
    for (uint32_t item : excluded) scores.erase(item);
    return scores;
}

std::map<uint32_t, double> user_based_scores(const UserIndex& index, const Corpus& corpus, const Split& split,
                                             uint32_t u, const NeighborList& neighbors) {
    const auto& seq = corpus.sequences[u];
    return user_based_scores(index, neighbors,
                             std::span<const uint32_t>(seq.data(), exclusion_len(split, u)));
}

ScoredCandidateList uu_candidates(const UserIndex& index, const Corpus& corpus, const Split& split, uint32_t u,
                                  size_t beta, size_t n) {
    if (beta == 0) return {};
    const NeighborList neighbors = top_beta_neighbors(index, u, beta);
    const auto scores = user_based_scores(index, corpus, split, u, neighbors);
    ScoredCandidateList ranked;
    ranked.reserve(scores.size());
    for (const auto& [item, s] : scores) ranked.push_back({item, s});
    std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (ranked.size() > n) ranked.resize(n);
    return ranked;
}

double userknn_sim(const Corpus& corpus, const Split& split, uint32_t u, uint32_t v) {
    const uint32_t lu = split.train_len[u], lv = split.train_len[v];
    if (lu == 0 || lv == 0) return 0.0;
    const auto& su = corpus.sequences[u];
    const auto& sv = corpus.sequences[v];
    std::vector<uint32_t> a(su.begin(), su.begin() + lu), b(sv.begin(), sv.begin() + lv);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    size_t inter = 0;
    for (size_t i = 0, j = 0; i < a.size() && j < b.size();) {
        if (a[i] < b[j]) {
            ++i;
        } else if (b[j] < a[i]) {
            ++j;
        } else {
            ++inter;
            ++i;
            ++j;
        }
    }
    return static_cast<double>(inter) / (static_cast<double>(lu) * static_cast<double>(lv));
}

ScoredCandidateList pop_candidates(const Corpus& corpus, const Split& split, uint32_t u, size_t n) {
    std::vector<double> counts(corpus.n_items(), 0.0);
    for (uint32_t v = 0; v < corpus.n_users(); ++v) {
        const auto& seq = corpus.sequences[v];
        for (uint32_t t = 0; t < split.train_len[v]; ++t) counts[seq[t]] += 1.0;
    }
    std::vector<uint8_t> eligible(corpus.n_items(), 1);
    const auto& seq = corpus.sequences[u];
    for (uint32_t t = 0; t < exclusion_len(split, u); ++t) eligible[seq[t]] = 0;
    return top_n(counts, eligible, n);
}

void save_index(const std::string& path, const UserIndex& index) {
    std::map<std::string, Tensor> tensors;
    tensors["index.reps"] = index.reps;
    Tensor valid({std::max<size_t>(index.n_users(), 1)});
    for (size_t u = 0; u < index.n_users(); ++u) valid.data[u] = index.valid[u];
    tensors["index.valid"] = std::move(valid);
    size_t total = 0;
    for (const auto& r : index.recency) total += r.size();
    Tensor lens({std::max<size_t>(index.n_users(), 1)});
    Tensor flat({std::max<size_t>(total, 1)});
    size_t pos = 0;
    for (size_t u = 0; u < index.n_users(); ++u) {
        lens.data[u] = static_cast<float>(index.recency[u].size());
        for (uint32_t item : index.recency[u]) flat.data[pos++] = static_cast<float>(item);
    }
    tensors["index.recency_lens"] = std::move(lens);
    tensors["index.recency_flat"] = std::move(flat);
    tensors["index.window"] = Tensor({1}, {static_cast<float>(index.window)});
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open index for writing: " + path);
    // the container's trailing counter carries the build timestamp
    write_container(out, tensors, static_cast<uint64_t>(index.build_timestamp));
}

UserIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open index: " + path);
    std::map<std::string, Tensor> tensors;
    uint64_t step = 0;
    read_container(in, file_size_bytes(path), tensors, step);
    UserIndex index;
    index.reps = tensors.at("index.reps");
    const Tensor& valid = tensors.at("index.valid");
    const Tensor& lens = tensors.at("index.recency_lens");
    const Tensor& flat = tensors.at("index.recency_flat");
    const size_t n = index.reps.shape[0];
    index.valid.resize(n);
    index.recency.resize(n);
    size_t pos = 0;
    for (size_t u = 0; u < n; ++u) {
        index.valid[u] = valid.data[u] != 0.0f;
        const size_t len = static_cast<size_t>(lens.data[u]);
        index.recency[u].resize(len);
        for (size_t t = 0; t < len; ++t) index.recency[u][t] = static_cast<uint32_t>(flat.data[pos++]);
    }
    index.window = static_cast<size_t>(tensors.at("index.window").data[0]);
    index.build_timestamp = static_cast<int64_t>(step);
    return index;
}

}  // namespace sccf
