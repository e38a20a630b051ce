#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "sccf/fism.hpp"
#include "sccf/fusion.hpp"

using namespace sccf;

namespace {

ScoredCandidateList list_of(const std::vector<uint32_t>& items) {
    ScoredCandidateList out;
    double s = static_cast<double>(items.size());
    for (uint32_t i : items) out.push_back({i, s--});
    return out;
}

Corpus toy_corpus(const std::vector<std::vector<uint32_t>>& seqs, size_t n_items) {
    Corpus c;
    for (size_t u = 0; u < seqs.size(); ++u) {
        c.user_ids.push_back("u" + std::to_string(u));
        c.user_index[c.user_ids.back()] = static_cast<uint32_t>(u);
    }
    for (size_t i = 0; i < n_items; ++i) {
        c.item_ids.push_back("i" + std::to_string(i));
        c.item_index[c.item_ids.back()] = static_cast<uint32_t>(i);
    }
    c.sequences = seqs;
    return c;
}

}  // namespace

TEST_CASE("candidate union") {
    std::vector<double> ui_scores{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05};
    std::map<uint32_t, double> uu_scores{{5, 1.0}, {6, 0.9}, {7, 0.8}, {8, 0.7}, {9, 0.6}};

    SUBCASE("disjoint lists merge to full size") {
        auto u = candidate_union(list_of({0, 1, 2, 3, 4}), list_of({5, 6, 7, 8, 9}), ui_scores, uu_scores);
        CHECK(u.size() == 10);
    }

    SUBCASE("identical lists collapse") {
        auto u = candidate_union(list_of({0, 1, 2, 3, 4}), list_of({0, 1, 2, 3, 4}), ui_scores, uu_scores);
        CHECK(u.size() == 5);
    }

    SUBCASE("partial overlap") {
        auto u = candidate_union(list_of({0, 1, 2, 3, 4}), list_of({3, 4, 5, 6, 7}), ui_scores, uu_scores);
        CHECK(u.size() == 8);
    }

    SUBCASE("both channels carry true scores for every member") {
        auto u = candidate_union(list_of({0, 5}), list_of({5, 6}), ui_scores, uu_scores);
        REQUIRE(u.size() == 3);
        CHECK(u[0].item == 0);
        CHECK(u[0].r_ui == doctest::Approx(0.9));
        CHECK(u[0].r_uu == doctest::Approx(0.0));  // no neighbor window holds item 0
        CHECK(u[1].item == 5);
        CHECK(u[1].r_ui == doctest::Approx(0.4));
        CHECK(u[1].r_uu == doctest::Approx(1.0));
        CHECK(u[2].item == 6);
        CHECK(u[2].r_uu == doctest::Approx(0.9));
    }

    SUBCASE("both lists empty gives an empty union") {
        auto u = candidate_union({}, {}, ui_scores, uu_scores);
        CHECK(u.empty());
    }
}

TEST_CASE("score normalization") {
    SUBCASE("constant scores map to zeros") {
        CandidateUnion u;
        for (uint32_t i = 0; i < 4; ++i) u.push_back({i, 2.5, 0.0, 0.0, 0.0});
        normalize_scores(u, 0);
        for (const auto& e : u) CHECK(e.z_ui == 0.0);
    }

    SUBCASE("pair normalizes to -1, 1 with population std") {
        CandidateUnion u;
        u.push_back({0, 1.0, 0.0, 0.0, 0.0});
        u.push_back({1, 3.0, 0.0, 0.0, 0.0});
        normalize_scores(u, 0);
        CHECK(u[0].z_ui == doctest::Approx(-1.0));
        CHECK(u[1].z_ui == doctest::Approx(1.0));
    }

    SUBCASE("mean 0 and unit variance on random unions") {
        SeededRng rng(3);
        CandidateUnion u;
        for (uint32_t i = 0; i < 37; ++i) u.push_back({i, rng.uniform01() * 10 - 5, rng.uniform01(), 0.0, 0.0});
        normalize_scores(u, 0);
        normalize_scores(u, 1);
        double mean_ui = 0.0, var_ui = 0.0;
        for (const auto& e : u) mean_ui += e.z_ui;
        mean_ui /= static_cast<double>(u.size());
        for (const auto& e : u) var_ui += (e.z_ui - mean_ui) * (e.z_ui - mean_ui);
        var_ui /= static_cast<double>(u.size());
        CHECK(std::abs(mean_ui) < 1e-6);
        CHECK(var_ui == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("fusion net forward") {
    FusionConfig cfg;
    cfg.hidden = {3};

    SUBCASE("zero weights output the final bias") {
        SeededRng rng(5);
        FusionNet net(4, cfg, rng);
        for (const auto& name : net.store().names()) {
            Tensor& t = net.store().get(name);
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        }
        net.store().get("fusion.l1.b").data[0] = 0.75f;
        std::vector<float> x{1.0f, -2.0f, 0.5f, 3.0f};
        CHECK(net.forward(x) == doctest::Approx(0.75));
    }

    SUBCASE("hand-set single-hidden-unit net") {
        FusionConfig one;
        one.hidden = {1};
        SeededRng rng(7);
        FusionNet net(4, one, rng);
        // h = relu(x . w0 + b0); out = h*w1 + b1
        net.store().get("fusion.l0.w").data = {1.0f, 0.5f, -1.0f, 2.0f};
        net.store().get("fusion.l0.b").data = {0.1f};
        net.store().get("fusion.l1.w").data = {3.0f};
        net.store().get("fusion.l1.b").data = {-0.2f};
        std::vector<float> x{1.0f, 2.0f, 0.5f, 0.25f};
        // pre = 1 + 1 - 0.5 + 0.5 + 0.1 = 2.1; out = 3*2.1 - 0.2 = 6.1
        CHECK(net.forward(x) == doctest::Approx(6.1));
        // negative pre-activation gates to the bias path
        std::vector<float> y{-10.0f, 0.0f, 0.0f, 0.0f};
        CHECK(net.forward(y) == doctest::Approx(-0.2));
    }

    SUBCASE("deterministic") {
        SeededRng rng(9);
        FusionNet net(6, cfg, rng);
        std::vector<float> x{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
        CHECK(net.forward(x) == net.forward(x));
    }

    SUBCASE("width mismatch is a configuration error") {
        SeededRng rng(11);
        FusionNet net(4, cfg, rng);
        std::vector<float> x{1.0f};
        CHECK_THROWS_AS(net.forward(x), ConfigError);
    }
}

TEST_CASE("fusion gradients pass the finite-difference oracle") {
    FusionConfig cfg;
    cfg.hidden = {5, 3};
    SeededRng rng(13);
    FusionNet net(6, cfg, rng);
    // O(1)-scale weights keep gradients above the float32 noise floor
    for (const auto& name : net.store().names()) {
        Tensor& t = net.store().get(name);
        t = truncated_normal_init(t.shape, -0.5f, 0.5f, rng);
    }

    // small batch of fixed feature vectors, first one positive
    std::vector<std::vector<float>> inputs;
    SeededRng gen(17);
    for (int i = 0; i < 4; ++i) {
        std::vector<float> x(6);
        for (float& v : x) v = static_cast<float>(gen.uniform01() * 2 - 1);
        inputs.push_back(std::move(x));
    }
    const double inv = 1.0 / static_cast<double>(inputs.size());

    auto loss_fn = [&] {
        double loss = 0.0;
        for (size_t i = 0; i < inputs.size(); ++i) {
            const double logit = net.forward(inputs[i]);
            loss -= (i == 0 ? log_sigmoid(logit) : log_one_minus_sigmoid(logit)) * inv;
        }
        return loss;
    };

    GradMap grads = net.zero_grads();
    for (size_t i = 0; i < inputs.size(); ++i) net.bce_backward(inputs[i], i == 0, inv, grads);

    SeededRng pick(19);
    auto report = finite_diff_check(loss_fn, net.store(), grads, 1e-3, 1e-3, pick, 120);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-3);
}

// Fixture: FISM UI model plus a hand-built index over a small corpus.
struct FusionFixture {
    Corpus corpus;
    Split split;
    FismModel model;
    UserIndex index;

    FusionFixture()
        : corpus(toy_corpus({{0, 1, 2, 3}, {1, 0, 2, 3}, {2, 3, 0, 1}, {3, 2, 0, 1}}, 6)),
          split(leave_one_out(corpus)),
          model(make_model()) {
        index = build_user_index(model, corpus, split, 15);
    }

    static FismModel make_model() {
        SeededRng rng(23);
        FismConfig cfg;
        cfg.dim = 4;
        cfg.window = 15;
        return FismModel(6, cfg, rng);
    }

    SccfContext ctx() const { return SccfContext{&model, &index, &corpus, &split, 3, 2}; }
};

TEST_CASE("fusion training and fused candidates") {
    FusionFixture fx;

    SUBCASE("skip-rule accounting matches a direct count") {
        FusionConfig cfg;
        cfg.hidden = {4};
        cfg.list_n = 3;
        cfg.beta = 2;
        cfg.max_epochs = 3;
        cfg.holdout_fraction = 0.0f;
        SeededRng rng(29);
        FusionNet net(2 * 4 + 2, cfg, rng);
        SccfContext ctx = fx.ctx();
        SeededRng train_rng(31);
        auto report = fusion_train(net, ctx, train_rng);

        // independent count: users whose validation item is in their union
        size_t expect = 0;
        for (uint32_t u = 0; u < fx.corpus.n_users(); ++u) {
            auto uni = build_union(ctx, u);
            bool found = false;
            for (const auto& e : uni) found |= e.item == static_cast<uint32_t>(fx.split.val_item[u]);
            if (found) ++expect;
        }
        CHECK(report.n_train_users == expect);
        CHECK(report.n_train_users + report.n_skipped == fx.corpus.n_users());
    }

    SUBCASE("pass-through net ranks by the UI channel") {
        // A linear net that returns exactly z_ui: zero hidden... use a single
        // hidden layer wide enough to carry the value through the relu in
        // both signs: h = relu(+z), relu(-z); out = h0 - h1 = z.
        FusionConfig cfg;
        cfg.hidden = {2};
        SeededRng rng(37);
        FusionNet net(2 * 4 + 2, cfg, rng);
        for (const auto& name : net.store().names()) {
            Tensor& t = net.store().get(name);
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        }
        Tensor& w0 = net.store().get("fusion.l0.w");  // [10, 2]
        w0.at(8, 0) = 1.0f;   // +z_ui
        w0.at(8, 1) = -1.0f;  // -z_ui
        Tensor& w1 = net.store().get("fusion.l1.w");  // [2, 1]
        w1.at(0, 0) = 1.0f;
        w1.at(1, 0) = -1.0f;

        SccfContext ctx = fx.ctx();
        Tensor m_u;
        auto uni = build_union(ctx, 0, &m_u);
        auto fused = sccf_candidates(net, ctx, 0, uni.size());
        REQUIRE(!fused.empty());
        // expected: union sorted by z_ui descending == sorted by r_ui descending
        std::vector<std::pair<double, uint32_t>> oracle;
        for (const auto& e : uni) oracle.emplace_back(-e.z_ui, e.item);
        std::sort(oracle.begin(), oracle.end());
        REQUIRE(fused.size() == oracle.size());
        for (size_t i = 0; i < fused.size(); ++i) CHECK(fused[i].item == oracle[i].second);
    }

    SUBCASE("fused list is a subset of the union and never repeats R_u^+") {
        FusionConfig cfg;
        cfg.hidden = {4};
        SeededRng rng(41);
        FusionNet net(2 * 4 + 2, cfg, rng);
        SccfContext ctx = fx.ctx();
        auto uni = build_union(ctx, 1);
        auto fused = sccf_candidates(net, ctx, 1, 100);
        CHECK(fused.size() == uni.size());
        for (const auto& c : fused) {
            bool in_union = false;
            for (const auto& e : uni) in_union |= e.item == c.item;
            CHECK(in_union);
            for (uint32_t t = 0; t < fx.split.train_len[1]; ++t) CHECK(c.item != fx.corpus.sequences[1][t]);
        }
    }

    SUBCASE("matches an exhaustive fusion-score oracle") {
        FusionConfig cfg;
        cfg.hidden = {4, 3};
        SeededRng rng(43);
        FusionNet net(2 * 4 + 2, cfg, rng);
        SccfContext ctx = fx.ctx();
        Tensor m_u;
        auto uni = build_union(ctx, 2, &m_u);
        auto fused = sccf_candidates(net, ctx, 2, uni.size());

        std::vector<std::pair<double, uint32_t>> oracle;
        std::vector<float> buf(2 * 4 + 2);
        for (const auto& e : uni) {
            std::copy(m_u.data.begin(), m_u.data.end(), buf.begin());
            const float* q = fx.model.item_embeddings().row_ptr(e.item);
            std::copy(q, q + 4, buf.begin() + 4);
            buf[8] = static_cast<float>(e.z_ui);
            buf[9] = static_cast<float>(e.z_uu);
            oracle.emplace_back(-net.forward(buf), e.item);
        }
        std::sort(oracle.begin(), oracle.end());
        REQUIRE(fused.size() == oracle.size());
        for (size_t i = 0; i < fused.size(); ++i) CHECK(fused[i].item == oracle[i].second);
    }

    SUBCASE("training ranks the positive above union negatives") {
        FusionConfig cfg;
        cfg.hidden = {8};
        cfg.list_n = 3;
        cfg.beta = 2;
        cfg.max_epochs = 400;
        cfg.holdout_fraction = 0.0f;
        cfg.adam.base_lr = 0.01f;
        SeededRng rng(47);
        FusionNet net(2 * 4 + 2, cfg, rng);
        SccfContext ctx = fx.ctx();
        SeededRng train_rng(53);
        auto report = fusion_train(net, ctx, train_rng);
        CHECK(report.n_train_users > 0);
        CHECK(report.final_train_loss < 0.2);

        // the trained net must place each training user's positive at the
        // top of its fused list, not merely shrink the loss
        size_t top1 = 0, total = 0;
        for (uint32_t u = 0; u < fx.corpus.n_users(); ++u) {
            auto uni = build_union(ctx, u);
            bool has_positive = false;
            for (const auto& e : uni) has_positive |= e.item == static_cast<uint32_t>(fx.split.val_item[u]);
            if (!has_positive) continue;
            ++total;
            auto fused = sccf_candidates(net, ctx, u, 1);
            REQUIRE(!fused.empty());
            if (fused[0].item == static_cast<uint32_t>(fx.split.val_item[u])) ++top1;
        }
        REQUIRE(total == report.n_train_users);
        CHECK(top1 == total);
    }
}

TEST_CASE("fusion checkpoint round trip") {
    FusionConfig cfg;
    cfg.hidden = {4, 2};
    SeededRng rng(59);
    FusionNet net(10, cfg, rng);
    const std::string path = "fusion_roundtrip_test.bin";
    save_fusion(path, net);
    FusionNet back = load_fusion(path, cfg);
    CHECK(back.input_dim() == net.input_dim());
    CHECK(back.config().hidden == std::vector<size_t>{4, 2});
    for (const auto& name : net.store().names()) {
        CHECK(back.store().get(name).data == net.store().get(name).data);
    }
    std::remove(path.c_str());
}
