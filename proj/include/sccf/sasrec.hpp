#pragma once

#include <span>

#include "sccf/candidates.hpp"
#include "sccf/corpus.hpp"
#include "sccf/tensor.hpp"
#include "sccf/ui_model.hpp"

namespace sccf {

struct SasrecConfig {
    size_t max_len = 200;  // L: 200 for MovieLens-scale data, 50 for sparse sets
    size_t dim = 64;
    size_t n_layers = 2;
    size_t n_heads = 1;
    float dropout_rate = 0.2f;
    size_t neg_per_pos = 1;
    size_t ffn_width = 0;  // 0 means d, the width printed in the FFN equation
    size_t batch_size = 128;
    float l2 = 0.0f;
    AdamConfig adam;
};

// Left-to-right self-attentive sequential model: item + learned position
// embeddings, stacked blocks of causal multi-head attention and a
// position-wise feed-forward net, each wrapped as
// LayerNorm(x + Dropout(sublayer(x))). The last-position output of the final
// block is the user representation. All backward passes are hand-written.
class SasrecModel : public UiModel {
  public:
    SasrecModel(size_t n_items, const SasrecConfig& cfg, SeededRng& rng);
    SasrecModel(ParameterStore store, const SasrecConfig& cfg);

    size_t n_items() const override { return items_; }
    size_t dim() const override { return cfg_.dim; }
    std::string kind() const override { return "sasrec"; }
    size_t ffn_width() const { return cfg_.ffn_width == 0 ? cfg_.dim : cfg_.ffn_width; }
    const SasrecConfig& config() const { return cfg_; }
    SasrecConfig& mutable_config() { return cfg_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    const Tensor& item_embeddings() const override { return store_.get("sasrec.P"); }
    Tensor serving_repr(std::span<const uint32_t> history) const override { return user_repr(history); }

    // Keeps the last max_len items; row i is p_seq[i] + e_i with positions
    // indexed from the start of the truncated window.
    Tensor embed_sequence(std::span<const uint32_t> seq) const;

    // Scaled dot-product attention with the causal mask: entry (i, j) with
    // j > i is -inf before the row softmax.
    static Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v);

    // One attention sublayer including the wrapper. rng may be null when
    // training is false.
    Tensor self_attention_block(size_t layer, const Tensor& x, bool training = false,
                                SeededRng* rng = nullptr) const;
    Tensor pffn_block(size_t layer, const Tensor& x, bool training = false, SeededRng* rng = nullptr) const;

    // Full stack on the (truncated) sequence; returns all position outputs.
    Tensor forward(std::span<const uint32_t> seq, bool training = false, SeededRng* rng = nullptr) const;

    // Last-position row of the final block output, dropout off.
    Tensor user_repr(std::span<const uint32_t> seq) const;

    std::vector<double> score_all(const Tensor& m_u) const override;

    // Next-item loss over one training sequence: inputs are the prefix minus
    // its last item, targets the shifted prefix; negatives[pos*neg_per_pos+j]
    // pairs with position pos. inv_m scales instance losses (and gradients in
    // the grads variant) so batches can normalize by their total instance
    // count. Dropout is active only when rng is non-null.
    double seq_loss(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives, double inv_m,
                    SeededRng* rng = nullptr) const;
    double seq_loss_and_grads(std::span<const uint32_t> prefix, std::span<const uint32_t> negatives,
                              double inv_m, GradMap& grads, SeededRng* rng = nullptr) const;

    // Mini-batches of batch_size sequences, one Adam step per batch, users in
    // a seeded random permutation. Returns mean per-instance loss.
    double train_epoch(const Corpus& corpus, const Split& split, SeededRng& rng);

    ScoredCandidateList candidates(const Corpus& corpus, const Split& split, uint32_t user,
                                   size_t n) const override;

    std::vector<std::string> parameter_names() const;

  private:
    struct LayerCache;
    struct SeqCache;
    Tensor run_block(size_t layer, const Tensor& x, bool training, SeededRng* rng, LayerCache* cache) const;
    Tensor forward_cached(std::span<const uint32_t> seq, bool training, SeededRng* rng, SeqCache* cache) const;

    size_t items_ = 0;
    SasrecConfig cfg_;
    ParameterStore store_;
};

}  // namespace sccf
