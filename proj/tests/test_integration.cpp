// End-to-end pipeline on a structured synthetic corpus: clustered tastes with
// a sequential pattern inside each cluster. Guards the wiring between the
// trained models, the neighborhood index, and the fusion net; the real-scale
// effectiveness gates live in the acceptance suite.
#include <cmath>

#include "doctest.h"
#include "sccf/engine.hpp"

using namespace sccf;

namespace {

// Users of group g walk the cycle g*span .. g*span+span-1 from a random
// offset, so the next item is a deterministic function of the current one.
Corpus cyclic_corpus(size_t n_users, size_t groups, size_t span, size_t len, uint64_t seed) {
    SeededRng rng(seed);
    Corpus c;
    const size_t n_items = groups * span;
    for (size_t i = 0; i < n_items; ++i) {
        c.item_ids.push_back("i" + std::to_string(i));
        c.item_index[c.item_ids.back()] = static_cast<uint32_t>(i);
    }
    for (size_t u = 0; u < n_users; ++u) {
        c.user_ids.push_back("u" + std::to_string(u));
        c.user_index[c.user_ids.back()] = static_cast<uint32_t>(u);
        const size_t g = u % groups;
        const size_t offset = rng.uniform_below(span);
        std::vector<uint32_t> seq;
        for (size_t t = 0; t < len; ++t) seq.push_back(static_cast<uint32_t>(g * span + (offset + t) % span));
        c.sequences.push_back(std::move(seq));
    }
    return c;
}

double hr20(const EvalReport& r) { return r.hr.at(20); }

}  // namespace

TEST_CASE("trained pipeline beats the popularity baseline and fusion holds the base") {
    Corpus corpus = cyclic_corpus(240, 4, 30, 12, 77);
    Split split = leave_one_out(corpus);

    EvalReport pop = evaluate(make_pop_scorer(corpus, split), corpus, split, EvalTarget::validation);

    // FISM: group affinity is enough to concentrate mass on the right 30 items
    FismConfig fc;
    fc.dim = 16;
    fc.window = 15;
    fc.adam.base_lr = 0.01f;
    SeededRng frng(101);
    FismModel fism(corpus.n_items(), fc, frng);
    SeededRng ftrain(102);
    for (int e = 0; e < 40; ++e) fism.train_epoch(corpus, split, ftrain);
    EvalReport fism_report = evaluate(make_ui_scorer(fism, corpus, split), corpus, split, EvalTarget::validation);
    CHECK(hr20(fism_report) > hr20(pop) + 0.1);

    // SASRec: the next item is deterministic given the last one
    SasrecConfig sc;
    sc.dim = 16;
    sc.n_layers = 1;
    sc.n_heads = 1;
    sc.max_len = 12;
    sc.dropout_rate = 0.1f;
    sc.adam.base_lr = 0.01f;
    SeededRng srng(103);
    SasrecModel sasrec(corpus.n_items(), sc, srng);
    SeededRng strain(104);
    for (int e = 0; e < 60; ++e) sasrec.train_epoch(corpus, split, strain);
    EvalReport sas_report = evaluate(make_ui_scorer(sasrec, corpus, split), corpus, split, EvalTarget::validation);
    CHECK(hr20(sas_report) > hr20(pop) + 0.1);
    CHECK(sas_report.ndcg.at(20) > fism_report.ndcg.at(20));  // sequential signal pays off

    // the user-based channel is informative on clustered tastes
    UserIndex index = build_user_index(fism, corpus, split, 15);
    EvalReport uu_report = evaluate(make_uu_scorer(index, corpus, split, 20), corpus, split, EvalTarget::validation);
    CHECK(hr20(uu_report) > hr20(pop));

    // fused pipeline: tuned fusion must at least hold the base model
    FusionConfig fuc;
    fuc.hidden = {32, 16};
    fuc.list_n = 30;
    fuc.beta = 20;
    fuc.max_epochs = 80;
    fuc.adam.base_lr = 0.01f;
    SeededRng grng(105);
    FusionNet net(2 * fism.dim() + 2, fuc, grng);
    SccfContext ctx{&fism, &index, &corpus, &split, fuc.list_n, fuc.beta};
    SeededRng gtrain(106);
    FusionTrainReport report = fusion_train(net, ctx, gtrain);
    CHECK(report.n_train_users > 150);

    EvalReport fused = evaluate(make_sccf_scorer(net, ctx), corpus, split, EvalTarget::validation);
    CHECK(fused.ndcg.at(20) >= 0.9 * fism_report.ndcg.at(20));
    CHECK(hr20(fused) >= 0.9 * hr20(fism_report));
}
