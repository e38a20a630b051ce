#pragma once

#include <optional>
#include <span>

#include "sccf/candidates.hpp"
#include "sccf/corpus.hpp"
#include "sccf/tensor.hpp"
#include "sccf/ui_model.hpp"

namespace sccf {

struct FismConfig {
    size_t dim = 128;
    float alpha = 0.5f;
    size_t neg_per_pos = 1;
    size_t window = 15;  // recency window for serving-time representations
    float l2 = 0.0f;     // FISM trains without regularization by default
    AdamConfig adam;
};

// Factored item similarity model with a single homogeneous item embedding
// table: the user representation pools interacted-item vectors with 1/|H|^α
// normalization and preference is a plain dot product.
class FismModel : public UiModel {
  public:
    FismModel(size_t n_items, const FismConfig& cfg, SeededRng& rng);
    FismModel(ParameterStore store, const FismConfig& cfg);

    size_t n_items() const override { return items_; }
    size_t dim() const override { return cfg_.dim; }
    std::string kind() const override { return "fism"; }
    const FismConfig& config() const { return cfg_; }
    FismConfig& mutable_config() { return cfg_; }
    const Tensor& item_embeddings() const override { return store_.get("fism.P"); }
    Tensor serving_repr(std::span<const uint32_t> history) const override {
        return user_repr(history, std::nullopt, cfg_.window);
    }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    // m_u over the windowed history minus `exclude`. Throws when the pooled
    // set ends up empty.
    Tensor user_repr(std::span<const uint32_t> history, std::optional<uint32_t> exclude = std::nullopt,
                     std::optional<size_t> window = std::nullopt) const;

    double score(const Tensor& m_u, uint32_t item) const;
    std::vector<double> score_all(const Tensor& m_u) const override;

    // One pass over all users in a seeded random permutation; one Adam step
    // per user batch. Returns the mean per-instance loss.
    double train_epoch(const Corpus& corpus, const Split& split, SeededRng& rng);

    // Top-N over R_u^-: every item outside the user's train prefix, scored
    // with the serving representation (recency window applied).
    ScoredCandidateList candidates(const Corpus& corpus, const Split& split, uint32_t user,
                                   size_t n) const override;

    // Forward loss of one user batch with explicit negatives; negatives[p*k+j]
    // is the j-th negative for positive position p. Used by training and by
    // the finite-difference oracle (which needs fixed negatives).
    double batch_loss(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives) const;

    // Same pass with analytic gradients accumulated per touched row of P.
    double batch_loss_and_grads(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives,
                                std::map<uint32_t, std::vector<float>>& row_grads) const;

  private:
    size_t items_;
    FismConfig cfg_;
    ParameterStore store_;
};

}  // namespace sccf
