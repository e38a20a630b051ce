#pragma once

#include <array>
#include <functional>

#include "sccf/fusion.hpp"
#include "sccf/neighborhood.hpp"
#include "sccf/ui_model.hpp"

namespace sccf {

struct EvalReport {
    std::vector<size_t> ks{20, 50, 100};
    std::map<size_t, double> hr;
    std::map<size_t, double> ndcg;
    size_t n_evaluated = 0;
};

struct LatencyReport {
    double infer_ms = 0.0;
    double identify_ms = 0.0;
    double total_ms = 0.0;
    size_t trials = 0;
};

// Full item-score vector for one user; entries may be -inf for items a
// scorer cannot rank (the fused scorer outside its union).
using Scorer = std::function<std::vector<double>(uint32_t user)>;

enum class EvalTarget { validation, test };

// 1-based rank of the target among all items outside the user's exclusion
// set. Equal scores rank ahead of the target (conservative ties).
size_t rank_of_target(const std::vector<double>& scores, const Corpus& corpus, const Split& split, uint32_t user,
                      uint32_t target);

double hr_at_k(const std::vector<size_t>& ranks, size_t k);
double ndcg_at_k(const std::vector<size_t>& ranks, size_t k);

// Runs the scorer for every usable user and aggregates HR/NDCG at ks.
EvalReport evaluate(const Scorer& scorer, const Corpus& corpus, const Split& split, EvalTarget target,
                    const std::vector<size_t>& ks = {20, 50, 100});

std::string eval_tsv(const EvalReport& report);

// Ready-made scorers for the CLI modes.
Scorer make_ui_scorer(const UiModel& model, const Corpus& corpus, const Split& split);
Scorer make_uu_scorer(const UserIndex& index, const Corpus& corpus, const Split& split, size_t beta);
Scorer make_pop_scorer(const Corpus& corpus, const Split& split);
Scorer make_userknn_scorer(const Corpus& corpus, const Split& split, size_t beta);
Scorer make_sccf_scorer(const FusionNet& net, const SccfContext& ctx);

// Histogram of user-item cosine similarities: the ground-truth target item,
// and the mean over each candidate list. Bin width 0.05 over [-1, 1].
struct SimilarityHistogram {
    static constexpr size_t n_bins = 40;
    std::array<size_t, n_bins> gt{};
    std::array<size_t, n_bins> ui{};
    std::array<size_t, n_bins> uu{};
    static size_t bin_of(double cosine);
    static double bin_left(size_t bin) { return -1.0 + 0.05 * static_cast<double>(bin); }
};

SimilarityHistogram similarity_distribution(const UiModel& model, const UserIndex& index, const Corpus& corpus,
                                            const Split& split, EvalTarget target, size_t list_n, size_t beta);

std::string similarity_tsv(const SimilarityHistogram& h);

// Real-time update benchmark. Each trial replays one held-out interaction
// for a sampled user: the SCCF path times representation re-inference and
// top-beta identification; the UserKNN path recomputes the printed-formula
// similarity against all users over dense item-dimension bit rows (its
// inferring time is 0 by definition).
enum class BenchMethod { sccf, userknn };

LatencyReport latency_bench(BenchMethod method, const UiModel* model, const UserIndex* index,
                            const Corpus& corpus, const Split& split, size_t beta, size_t trials = 200,
                            size_t warmup = 20);

std::string latency_tsv(const std::string& method, const LatencyReport& r);

// Sweep executor: runs every cell, isolating failures so one bad cell does
// not kill the grid. The runner returns a TSV fragment for the cell.
struct SweepResult {
    std::string cell;
    bool ok = false;
    std::string output;  // metrics TSV or the error message
};

std::vector<SweepResult> run_sweep(const std::vector<std::string>& cells,
                                   const std::function<std::string(const std::string&)>& runner);

}  // namespace sccf
