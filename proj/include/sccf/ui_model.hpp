#pragma once

#include <span>

#include "sccf/candidates.hpp"
#include "sccf/corpus.hpp"
#include "sccf/tensor.hpp"

namespace sccf {

// Common surface of the inductive user-item models. Representations are
// inferred from history alone, so new interactions never require retraining.
class UiModel {
  public:
    virtual ~UiModel() = default;
    virtual size_t n_items() const = 0;
    virtual size_t dim() const = 0;
    virtual std::string kind() const = 0;

    // Serving-time representation: FISM pools the recency window, SASRec
    // runs the full (truncated) sequence.
    virtual Tensor serving_repr(std::span<const uint32_t> history) const = 0;
    virtual std::vector<double> score_all(const Tensor& rep) const = 0;
    virtual const Tensor& item_embeddings() const = 0;
    virtual ScoredCandidateList candidates(const Corpus& corpus, const Split& split, uint32_t user,
                                           size_t n) const = 0;
};

}  // namespace sccf
