#pragma once

#include <map>

#include "sccf/ui_model.hpp"

namespace sccf {

// Snapshot of unit-normalized user representations with each user's recency
// window (the latest items of the train history, at most `window` of them).
// The serve loop mutates rows in place as events arrive.
struct UserIndex {
    Tensor reps;                                 // [n, d], unit rows where valid
    std::vector<uint8_t> valid;                  // zero-norm or empty-history users excluded
    std::vector<std::vector<uint32_t>> recency;  // per-user latest-`window` item lists
    size_t window = 15;
    int64_t build_timestamp = 0;
    size_t n_warnings = 0;

    size_t n_users() const { return valid.size(); }
    size_t dim() const { return reps.shape.size() > 1 ? reps.shape[1] : 0; }
};

struct Neighbor {
    uint32_t user;
    double sim;
};

// Descending by similarity, ties by lower user index, self excluded.
using NeighborList = std::vector<Neighbor>;

UserIndex build_user_index(const UiModel& model, const Corpus& corpus, const Split& split, size_t window = 15);

// Dot product of the unit rows.
double cosine_sim(const UserIndex& index, uint32_t u, uint32_t v);

// Exact brute-force top-beta cosine search over all other users.
NeighborList top_beta_neighbors(const UserIndex& index, uint32_t u, size_t beta);

// Same search for an external unit query vector; `self` (when < n) is
// skipped. The serve loop and the fusion trainer query with fresh
// representations that are not index rows yet.
NeighborList top_beta_by_query(const UserIndex& index, const float* unit_query, uint32_t self, size_t beta);

// User-based preference: sum of sim(u,v) over neighbors whose
// recency window contains the item; the user's own train items are removed.
std::map<uint32_t, double> user_based_scores(const UserIndex& index, const Corpus& corpus, const Split& split,
                                             uint32_t u, const NeighborList& neighbors);

// Lower-level variant with an explicit exclusion set.
std::map<uint32_t, double> user_based_scores(const UserIndex& index, const NeighborList& neighbors,
                                             std::span<const uint32_t> excluded);

ScoredCandidateList uu_candidates(const UserIndex& index, const Corpus& corpus, const Split& split, uint32_t u,
                                  size_t beta, size_t n);

// |R_u ∩ R_v| / (|R_u|·|R_v|) over train prefixes; the denominator is the
// plain size product, not the square-rooted set cosine.
double userknn_sim(const Corpus& corpus, const Split& split, uint32_t u, uint32_t v);

// Non-personalized popularity baseline over train interactions.
ScoredCandidateList pop_candidates(const Corpus& corpus, const Split& split, uint32_t u, size_t n);

void save_index(const std::string& path, const UserIndex& index);
UserIndex load_index(const std::string& path);

}  // namespace sccf
