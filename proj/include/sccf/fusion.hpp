#pragma once

#include "sccf/neighborhood.hpp"
#include "sccf/ui_model.hpp"

namespace sccf {

struct FusionConfig {
    std::vector<size_t> hidden = {64, 32};
    float l2 = 0.0f;
    size_t patience = 5;
    size_t list_n = 100;  // per-channel candidate list size N
    size_t beta = 100;    // neighbors for the user-based channel
    size_t max_epochs = 500;
    float holdout_fraction = 0.1f;
    AdamConfig adam;
};

// One union item with both channel scores. Both preferences are computed
// directly (the dot product and the neighbor sum are defined on every item),
// so nothing is imputed.
struct UnionEntry {
    uint32_t item;
    double r_ui = 0.0;
    double r_uu = 0.0;
    double z_ui = 0.0;
    double z_uu = 0.0;
};

// Keyed by item, ascending.
using CandidateUnion = std::vector<UnionEntry>;

CandidateUnion candidate_union(const ScoredCandidateList& c_ui, const ScoredCandidateList& c_uu,
                               const std::vector<double>& ui_scores, const std::map<uint32_t, double>& uu_scores);

// Per-user z-scores over the union (population std); std below 1e-9 maps the
// whole channel to zeros. which: 0 = UI, 1 = UU.
void normalize_scores(CandidateUnion& u, int which);

// Raw-logit MLP over [m_u ⊕ q_i ⊕ z_ui ⊕ z_uu]; sigmoid lives in the loss.
class FusionNet {
  public:
    FusionNet(size_t input_dim, const FusionConfig& cfg, SeededRng& rng);
    FusionNet(ParameterStore store, const FusionConfig& cfg);

    size_t input_dim() const { return input_dim_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    const FusionConfig& config() const { return cfg_; }

    double forward(std::span<const float> input) const;

    // Accumulates parameter gradients of upstream * d logit / d theta.
    double forward_with_grads(std::span<const float> input, double upstream, GradMap& grads) const;

    // One BCE term: loss = -inv * log sigma(±logit), gradients accumulated.
    double bce_backward(std::span<const float> input, bool positive, double inv, GradMap& grads) const;

    GradMap zero_grads() const;

  private:
    size_t n_layers() const { return cfg_.hidden.size() + 1; }
    double forward_cached(std::span<const float> input, std::vector<std::vector<float>>& acts,
                          std::vector<std::vector<float>>& pre) const;
    void backward_cached(const std::vector<std::vector<float>>& acts, const std::vector<std::vector<float>>& pre,
                         double upstream, GradMap& grads) const;
    size_t input_dim_ = 0;
    FusionConfig cfg_;
    ParameterStore store_;
};

// Everything the fused scorer needs at query time.
struct SccfContext {
    const UiModel* ui = nullptr;
    const UserIndex* index = nullptr;
    const Corpus* corpus = nullptr;
    const Split* split = nullptr;
    size_t list_n = 100;
    size_t beta = 100;
};

// Builds the per-user union: top-N of each channel, true scores for every
// union member, z-scored. Returns the serving representation through m_u_out
// when non-null. Empty when the user has no usable candidates.
CandidateUnion build_union(const SccfContext& ctx, uint32_t user, Tensor* m_u_out = nullptr);

// Span variant for live callers (the serve loop) whose histories are not the
// corpus sequences. `self` is the index row to skip in the neighbor search;
// pass a value >= index size for external users. Only ui/index/list_n/beta
// of the context are used.
CandidateUnion build_union_spans(const SccfContext& ctx, uint32_t self, std::span<const uint32_t> history,
                                 std::span<const uint32_t> excluded, Tensor* m_u_out = nullptr);

struct FusionTrainReport {
    size_t n_train_users = 0;    // users whose validation item made the union
    size_t n_holdout_users = 0;  // subset of those held out for early stop
    size_t n_skipped = 0;        // positives missing from the union
    size_t best_epoch = 0;
    double best_holdout_loss = 0.0;
    double final_train_loss = 0.0;
};

// Trains the integrating net: the single positive is the validation item,
// all other union items are negatives, per-user loss normalized by |C_I^u|;
// users whose positive missed the union contribute nothing. A seeded 10%
// user holdout drives early stop (patience on holdout loss); the best
// parameters are restored. When holdout_fraction is 0 every user trains and
// the loop runs for exactly max_epochs (the final-retrain path).
FusionTrainReport fusion_train(FusionNet& net, const SccfContext& ctx, SeededRng& rng);

// Fused top-N over the union: never an item outside it.
ScoredCandidateList sccf_candidates(const FusionNet& net, const SccfContext& ctx, uint32_t user, size_t n);

void save_fusion(const std::string& path, const FusionNet& net);
FusionNet load_fusion(const std::string& path, const FusionConfig& cfg);

}  // namespace sccf
