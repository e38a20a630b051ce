#pragma once

#include <cstdint>
#include <vector>

namespace sccf {

struct ScoredCandidate {
    uint32_t item;
    double score;
};

// Ordered (item, score) pairs, descending score, ties by lower item index.
using ScoredCandidateList = std::vector<ScoredCandidate>;

// Top-n selection over a full score vector. Items with eligible[i] == 0 are
// skipped. Returns fewer than n entries when the eligible set is smaller.
ScoredCandidateList top_n(const std::vector<double>& scores, const std::vector<uint8_t>& eligible, size_t n);

}  // namespace sccf
