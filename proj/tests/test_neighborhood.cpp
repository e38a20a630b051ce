#include <algorithm>
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "sccf/fism.hpp"
#include "sccf/neighborhood.hpp"

using namespace sccf;

namespace {

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

// Index with hand-set representation rows (normalized on construction).
UserIndex hand_index(const std::vector<std::vector<float>>& rows,
                     const std::vector<std::vector<uint32_t>>& recency = {}) {
    UserIndex index;
    const size_t n = rows.size(), d = rows[0].size();
    index.reps = Tensor({n, d});
    index.valid.assign(n, 1);
    index.recency.resize(n);
    for (size_t u = 0; u < n; ++u) {
        double norm = 0.0;
        for (float v : rows[u]) norm += static_cast<double>(v) * v;
        norm = std::sqrt(norm);
        for (size_t j = 0; j < d; ++j) index.reps.at(u, j) = static_cast<float>(rows[u][j] / norm);
        if (u < recency.size()) index.recency[u] = recency[u];
    }
    return index;
}

FismModel hand_fism(const std::vector<std::vector<float>>& rows, float alpha) {
    const size_t m = rows.size(), d = rows[0].size();
    Tensor p({m, d});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < d; ++j) p.at(i, j) = rows[i][j];
    }
    ParameterStore store;
    store.add("fism.P", std::move(p));
    FismConfig cfg;
    cfg.alpha = alpha;
    return FismModel(std::move(store), cfg);
}

}  // namespace

TEST_CASE("build_user_index") {
    auto model = hand_fism({{1.0f, 0.0f}, {0.0f, 2.0f}, {3.0f, 3.0f}, {1.0f, 1.0f}}, 0.5f);
    Corpus corpus = toy_corpus({{0, 1, 2, 3}, {0, 1, 2, 3}, {2, 0, 1, 3}}, 4);
    Split split = leave_one_out(corpus);  // prefixes {0,1}, {0,1}, {2,0}
    UserIndex index = build_user_index(model, corpus, split, 15);

    SUBCASE("rows are unit length") {
        for (uint32_t u = 0; u < 3; ++u) {
            REQUIRE(index.valid[u]);
            CHECK(l2_norm(index.reps.row_ptr(u), 2) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }

    SUBCASE("identical windows give identical rows") {
        for (size_t j = 0; j < 2; ++j) CHECK(index.reps.at(0, j) == index.reps.at(1, j));
    }

    SUBCASE("rows equal the hand-normalized serving representation") {
        std::vector<uint32_t> prefix{0, 1};
        Tensor rep = model.user_repr(prefix, std::nullopt, 15);
        const double norm = l2_norm(rep.data.data(), 2);
        for (size_t j = 0; j < 2; ++j) CHECK(index.reps.at(0, j) == doctest::Approx(rep.data[j] / norm));
    }

    SUBCASE("recency windows hold the latest train items") {
        CHECK(index.recency[2] == std::vector<uint32_t>{2, 0});
        UserIndex small = build_user_index(model, corpus, split, 1);
        CHECK(small.recency[2] == std::vector<uint32_t>{0});
    }

    SUBCASE("zero representations are excluded with a warning") {
        auto zero_model = hand_fism({{0.0f, 0.0f}, {1.0f, 0.0f}, {1.0f, 0.0f}, {1.0f, 0.0f}}, 0.5f);
        Corpus zc = toy_corpus({{0, 0, 0, 0}, {1, 2, 3, 0}}, 4);
        Split zs = leave_one_out(zc);
        UserIndex zi = build_user_index(zero_model, zc, zs, 15);
        CHECK(zi.valid[0] == 0);
        CHECK(zi.valid[1] == 1);
        CHECK(zi.n_warnings == 1);
    }
}

TEST_CASE("cosine similarity") {
    UserIndex index = hand_index({{1.0f, 0.0f}, {0.0f, 1.0f}, {1.0f, 1.0f}});

    SUBCASE("self similarity is 1") { CHECK(cosine_sim(index, 0, 0) == doctest::Approx(1.0)); }
    SUBCASE("orthogonal rows score 0") { CHECK(cosine_sim(index, 0, 1) == doctest::Approx(0.0)); }
    SUBCASE("hand cosine sqrt(2)/2") {
        CHECK(cosine_sim(index, 0, 2) == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-6));
    }
}

TEST_CASE("top-beta neighbors") {
    UserIndex index = hand_index({{1.0f, 0.0f}, {0.9f, 0.1f}, {0.0f, 1.0f}, {0.5f, 0.5f}});

    SUBCASE("matches an exhaustive sort oracle") {
        NeighborList nb = top_beta_neighbors(index, 0, 3);
        std::vector<std::pair<double, uint32_t>> oracle;
        for (uint32_t v = 1; v < 4; ++v) oracle.emplace_back(-cosine_sim(index, 0, v), v);
        std::sort(oracle.begin(), oracle.end());
        REQUIRE(nb.size() == 3);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(nb[i].user == oracle[i].second);
            CHECK(nb[i].sim == doctest::Approx(-oracle[i].first));
        }
    }

    SUBCASE("self never appears") {
        NeighborList nb = top_beta_neighbors(index, 1, 10);
        for (const auto& x : nb) CHECK(x.user != 1);
        CHECK(nb.size() == 3);  // beta >= n returns all others
    }

    SUBCASE("beta=1 returns the argmax") {
        NeighborList nb = top_beta_neighbors(index, 0, 1);
        REQUIRE(nb.size() == 1);
        CHECK(nb[0].user == 1);
    }

    SUBCASE("normalization invariance: scaling inputs changes nothing") {
        std::vector<std::vector<float>> rows{{2.0f, 0.0f}, {1.8f, 0.2f}, {0.0f, 5.0f}, {0.25f, 0.25f}};
        UserIndex scaled = hand_index(rows);
        NeighborList a = top_beta_neighbors(index, 0, 3);
        NeighborList b = top_beta_neighbors(scaled, 0, 3);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].user == b[i].user);
    }

    SUBCASE("brute force equals full sort on a large random index") {
        SeededRng rng(91);
        const size_t n = 10000, d = 8;
        Tensor rows = truncated_normal_init({n, d}, -1.0f, 1.0f, rng);
        UserIndex big;
        big.reps = Tensor({n, d});
        big.valid.assign(n, 1);
        big.recency.resize(n);
        for (size_t u = 0; u < n; ++u) {
            const double norm = l2_norm(rows.row_ptr(u), d);
            for (size_t j = 0; j < d; ++j) big.reps.at(u, j) = static_cast<float>(rows.at(u, j) / norm);
        }
        NeighborList nb = top_beta_neighbors(big, 17, 25);
        std::vector<std::pair<double, uint32_t>> oracle;
        for (uint32_t v = 0; v < n; ++v) {
            if (v == 17) continue;
            oracle.emplace_back(-cosine_sim(big, 17, v), v);
        }
        std::sort(oracle.begin(), oracle.end());
        REQUIRE(nb.size() == 25);
        for (size_t i = 0; i < 25; ++i) CHECK(nb[i].user == oracle[i].second);
    }
}

TEST_CASE("user-based scores") {
    Corpus corpus = toy_corpus({{9, 9, 9}, {0, 1, 2}, {1, 3, 2}}, 10);
    corpus.sequences[0] = {8, 9, 7};  // focal user's own history
    Split split;
    split.train_len = {2, 2, 2};
    split.val_item = {9, 2, 2};
    split.test_item = {7, 2, 2};
    split.usable = {1, 1, 1};

    SUBCASE("single neighbor weights its window items") {
        UserIndex index = hand_index({{1, 0}, {1, 0}, {0, 1}}, {{}, {0, 1}, {}});
        NeighborList nb{{1, 0.8}};
        auto scores = user_based_scores(index, corpus, split, 0, nb);
        REQUIRE(scores.size() == 2);
        CHECK(scores.at(0) == doctest::Approx(0.8));
        CHECK(scores.at(1) == doctest::Approx(0.8));
    }

    SUBCASE("shared item sums both similarities") {
        UserIndex index = hand_index({{1, 0}, {1, 0}, {0, 1}}, {{}, {4, 5}, {5, 6}});
        NeighborList nb{{1, 0.5}, {2, 0.3}};
        auto scores = user_based_scores(index, corpus, split, 0, nb);
        CHECK(scores.at(5) == doctest::Approx(0.8));
        CHECK(scores.at(4) == doctest::Approx(0.5));
        CHECK(scores.at(6) == doctest::Approx(0.3));
    }

    SUBCASE("own history items are removed") {
        UserIndex index = hand_index({{1, 0}, {1, 0}}, {{}, {8, 3}});
        NeighborList nb{{1, 0.9}};
        auto scores = user_based_scores(index, corpus, split, 0, nb);
        CHECK(scores.count(8) == 0);  // 8 is in u0's train prefix
        CHECK(scores.count(3) == 1);
    }

    SUBCASE("scores stay within [0, beta]") {
        SeededRng rng(7);
        UserIndex index = hand_index({{1, 0}, {0.6f, 0.8f}, {0, 1}, {0.8f, 0.6f}},
                                     {{}, {3, 4}, {4, 5}, {3, 5}});
        NeighborList nb = top_beta_neighbors(index, 0, 3);
        auto scores = user_based_scores(index, corpus, split, 0, nb);
        for (const auto& [item, s] : scores) {
            CHECK(s >= -3.0);
            CHECK(s <= 3.0);
        }
    }
}

TEST_CASE("uu candidates") {
    Corpus corpus = toy_corpus({{0, 9}, {1, 2}, {3, 4}, {5, 6}}, 10);
    Split split;
    split.train_len = {1, 2, 2, 2};
    split.val_item = {9, 2, 4, 6};
    split.test_item = {9, 2, 4, 6};
    split.usable = {1, 1, 1, 1};
    UserIndex index =
        hand_index({{1, 0}, {0.9f, 0.1f}, {0.5f, 0.5f}, {0, 1}}, {{0}, {1, 2}, {3, 4}, {5, 6}});

    SUBCASE("matches the brute-force oracle") {
        auto list = uu_candidates(index, corpus, split, 0, 3, 10);
        NeighborList nb = top_beta_neighbors(index, 0, 3);
        auto scores = user_based_scores(index, corpus, split, 0, nb);
        std::vector<std::pair<double, uint32_t>> oracle;
        for (const auto& [item, s] : scores) oracle.emplace_back(-s, item);
        std::sort(oracle.begin(), oracle.end());
        REQUIRE(list.size() == oracle.size());
        for (size_t i = 0; i < list.size(); ++i) {
            CHECK(list[i].item == oracle[i].second);
            CHECK(list[i].score == doctest::Approx(-oracle[i].first));
        }
    }

    SUBCASE("beta=0 gives an empty list") { CHECK(uu_candidates(index, corpus, split, 0, 0, 10).empty()); }

    SUBCASE("windows inside the user's own history give an empty list") {
        UserIndex own = hand_index({{1, 0}, {1, 0}}, {{0}, {0}});
        Corpus c2 = toy_corpus({{0, 9}, {0, 9}}, 10);
        Split s2;
        s2.train_len = {1, 1};
        s2.val_item = {9, 9};
        s2.test_item = {9, 9};
        s2.usable = {1, 1};
        CHECK(uu_candidates(own, c2, s2, 0, 1, 10).empty());
    }
}

TEST_CASE("userknn similarity uses the plain product denominator") {
    Corpus corpus = toy_corpus({{0, 1, 5}, {0, 1, 5}, {2, 3, 5}, {0, 9}}, 10);
    Split split;
    split.train_len = {2, 2, 2, 1};
    split.val_item = {5, 5, 5, 9};
    split.test_item = {5, 5, 5, 9};
    split.usable = {1, 1, 1, 1};

    SUBCASE("identical 2-item histories") { CHECK(userknn_sim(corpus, split, 0, 1) == doctest::Approx(0.5)); }
    SUBCASE("disjoint histories") { CHECK(userknn_sim(corpus, split, 0, 2) == doctest::Approx(0.0)); }
    SUBCASE("singleton match") { CHECK(userknn_sim(corpus, split, 3, 3) == doctest::Approx(1.0)); }
    SUBCASE("empty history gives 0") {
        Split s2 = split;
        s2.train_len[0] = 0;
        CHECK(userknn_sim(corpus, s2, 0, 1) == 0.0);
    }
}

TEST_CASE("pop candidates") {
    // item 0 appears in three train prefixes, item 1 in one
    Corpus corpus = toy_corpus({{0, 7}, {0, 7}, {0, 1, 7}, {2, 7}}, 8);
    Split split;
    split.train_len = {1, 1, 2, 1};
    split.val_item = {7, 7, 7, 7};
    split.test_item = {7, 7, 7, 7};
    split.usable = {1, 1, 1, 1};

    SUBCASE("counts order the list") {
        auto list = pop_candidates(corpus, split, 3, 3);
        REQUIRE(list.size() >= 2);
        CHECK(list[0].item == 0);
        CHECK(list[0].score == doctest::Approx(3.0));
        CHECK(list[1].item == 1);
    }

    SUBCASE("own history excluded even when most popular") {
        auto list = pop_candidates(corpus, split, 0, 3);
        for (const auto& c : list) CHECK(c.item != 0);
        CHECK(list[0].item == 1);
    }

    SUBCASE("matches a counting oracle") {
        auto list = pop_candidates(corpus, split, 3, 8);
        std::vector<double> counts(8, 0.0);
        for (uint32_t u = 0; u < 4; ++u) {
            for (uint32_t t = 0; t < split.train_len[u]; ++t) counts[corpus.sequences[u][t]] += 1.0;
        }
        for (const auto& c : list) CHECK(c.score == doctest::Approx(counts[c.item]));
        for (size_t i = 0; i + 1 < list.size(); ++i) CHECK(list[i].score >= list[i + 1].score);
    }
}

TEST_CASE("index round trip") {
    UserIndex index = hand_index({{1, 0}, {0.6f, 0.8f}}, {{3, 4}, {5}});
    index.valid[1] = 0;
    index.window = 15;
    index.build_timestamp = 1754802000;
    const std::string path = "index_roundtrip_test.bin";
    save_index(path, index);
    UserIndex back = load_index(path);
    CHECK(back.reps.data == index.reps.data);
    CHECK(back.valid == index.valid);
    CHECK(back.recency == index.recency);
    CHECK(back.window == index.window);
    CHECK(back.build_timestamp == index.build_timestamp);
    std::remove(path.c_str());
}
