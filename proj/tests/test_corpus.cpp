#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "sccf/corpus.hpp"

using namespace sccf;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::ofstream out(name);
    out << content;
    return name;
}

// Raw events with one interaction per (user, item, ts) triple.
std::vector<Interaction> make_events(const std::vector<std::tuple<std::string, std::string, int64_t>>& rows) {
    std::vector<Interaction> out;
    for (const auto& [u, i, ts] : rows) out.push_back({u, i, 1.0, ts});
    return out;
}

}  // namespace

TEST_CASE("movielens loader") {
    SUBCASE("ml-1m line parses directly") {
        const auto path = write_temp("ml1m_ok.dat", "1::1193::5::978300760\n");
        auto events = load_movielens(path);
        REQUIRE(events.size() == 1);
        CHECK(events[0].user == "1");
        CHECK(events[0].item == "1193");
        CHECK(events[0].value == 5.0);
        CHECK(events[0].timestamp == 978300760);
        std::remove(path.c_str());
    }

    SUBCASE("ml-20m csv with header") {
        const auto path = write_temp("ml20m_ok.csv", "userId,movieId,rating,timestamp\n1,2,3.5,1112486027\n");
        auto events = load_movielens(path);
        REQUIRE(events.size() == 1);
        CHECK(events[0].user == "1");
        CHECK(events[0].item == "2");
        CHECK(events[0].timestamp == 1112486027);
        std::remove(path.c_str());
    }

    SUBCASE("malformed line names its line number") {
        const auto path = write_temp("ml1m_bad.dat", "a::b::c\n");
        try {
            load_movielens(path);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line_number == 1);
        }
        std::remove(path.c_str());
    }

    SUBCASE("empty file gives empty list") {
        const auto path = write_temp("ml1m_empty.dat", "");
        CHECK(load_movielens(path).empty());
        std::remove(path.c_str());
    }

    SUBCASE("input order preserved") {
        const auto path = write_temp("ml1m_order.dat", "9::1::1::30\n8::2::1::10\n7::3::1::20\n");
        auto events = load_movielens(path);
        REQUIRE(events.size() == 3);
        CHECK(events[0].user == "9");
        CHECK(events[1].user == "8");
        CHECK(events[2].user == "7");
        std::remove(path.c_str());
    }
}

TEST_CASE("amazon loader") {
    SUBCASE("csv row parses") {
        const auto path = write_temp("amz_ok.csv", "A1,B1,4.0,1400000000\n");
        auto events = load_amazon(path);
        REQUIRE(events.size() == 1);
        CHECK(events[0].user == "A1");
        CHECK(events[0].item == "B1");
        CHECK(events[0].value == 4.0);
        CHECK(events[0].timestamp == 1400000000);
        std::remove(path.c_str());
    }

    SUBCASE("duplicate rows retained by the loader") {
        const auto path = write_temp("amz_dup.csv", "A1,B1,4.0,1400000000\nA1,B1,5.0,1400000001\n");
        CHECK(load_amazon(path).size() == 2);
        std::remove(path.c_str());
    }

    SUBCASE("missing column is an error") {
        const auto path = write_temp("amz_bad.csv", "A1,B1,4.0\n");
        CHECK_THROWS_AS(load_amazon(path), ParseError);
        std::remove(path.c_str());
    }

    SUBCASE("header row skipped") {
        const auto path = write_temp("amz_hdr.csv", "user,item,rating,timestamp\nA1,B1,4.0,1400000000\n");
        CHECK(load_amazon(path).size() == 1);
        std::remove(path.c_str());
    }
}

TEST_CASE("preprocess") {
    SUBCASE("boundary of the k-core: exactly 5 kept") {
        // One focal user with 5 items; 4 filler users make every item reach
        // degree 5 and each filler user rates all 5 items.
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int i = 0; i < 5; ++i) rows.emplace_back("focal", "i" + std::to_string(i), 100 + i);
        for (int f = 0; f < 4; ++f) {
            for (int i = 0; i < 5; ++i) rows.emplace_back("f" + std::to_string(f), "i" + std::to_string(i), 10 * f + i);
        }
        Corpus c = preprocess(make_events(rows), 5);
        CHECK(c.n_users() == 5);
        CHECK(c.n_items() == 5);
        REQUIRE(c.user_index.count("focal"));
        CHECK(c.sequences[c.user_index.at("focal")].size() == 5);
    }

    SUBCASE("iterative filter cascades") {
        // The rare item i4 dies first; the focal user then sits exactly at
        // the boundary and must survive with its remaining 5 actions.
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int i = 0; i < 5; ++i) rows.emplace_back("focal", "i" + std::to_string(i), 100 + i);
        // i0..i3 reach degree 5 via fillers, i4 stays at degree 2 (focal + one filler).
        for (int f = 0; f < 4; ++f) {
            for (int i = 0; i < 4; ++i) rows.emplace_back("f" + std::to_string(f), "i" + std::to_string(i), 10 * f + i);
        }
        rows.emplace_back("f0", "i4", 99);
        // Fillers need 5 actions themselves: give each filler a shared extra item.
        for (int f = 0; f < 4; ++f) rows.emplace_back("f" + std::to_string(f), "extra", 200 + f);
        rows.emplace_back("focal", "extra", 300);
        Corpus c = preprocess(make_events(rows), 5);
        // i4 (degree 2) dies; focal falls to 5 (i0..i3 + extra) and survives.
        CHECK_FALSE(c.item_index.count("i4"));
        REQUIRE(c.user_index.count("focal"));
        CHECK(c.sequences[c.user_index.at("focal")].size() == 5);
    }

    SUBCASE("second user pass drops users pushed under k") {
        // Items all have degree >= 5 only while weak users are present;
        // verify a user below k after item drops is removed.
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        // 5 strong users each rate items a..e (degree 5 each).
        const char* items = "abcde";
        for (int u = 0; u < 5; ++u) {
            for (int i = 0; i < 5; ++i) rows.emplace_back("s" + std::to_string(u), std::string(1, items[i]), u * 10 + i);
        }
        // Weak user rates a,b + three singleton items -> singletons die,
        // weak user falls to 2 < 5 and must be dropped.
        rows.emplace_back("weak", "a", 1);
        rows.emplace_back("weak", "b", 2);
        rows.emplace_back("weak", "x1", 3);
        rows.emplace_back("weak", "x2", 4);
        rows.emplace_back("weak", "x3", 5);
        Corpus c = preprocess(make_events(rows), 5);
        CHECK_FALSE(c.user_index.count("weak"));
        CHECK(c.n_users() == 5);
        CHECK(c.n_items() == 5);
    }

    SUBCASE("duplicates collapse to the earliest occurrence") {
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int u = 0; u < 5; ++u) {
            for (int i = 0; i < 5; ++i) rows.emplace_back("u" + std::to_string(u), "i" + std::to_string(i), 100 + i);
        }
        rows.emplace_back("u0", "i3", 1);  // duplicate, earlier timestamp
        Corpus c = preprocess(make_events(rows), 5);
        const auto& seq = c.sequences[c.user_index.at("u0")];
        REQUIRE(seq.size() == 5);
        // i3 now carries timestamp 1 and must sort first for u0.
        CHECK(c.item_ids[seq[0]] == "i3");
    }

    SUBCASE("sequences sorted by timestamp, ties by input order") {
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int u = 0; u < 5; ++u) {
            rows.emplace_back("u" + std::to_string(u), "first", 50);
            rows.emplace_back("u" + std::to_string(u), "tie_a", 100);
            rows.emplace_back("u" + std::to_string(u), "tie_b", 100);
            rows.emplace_back("u" + std::to_string(u), "early", 10);
            rows.emplace_back("u" + std::to_string(u), "late", 200);
        }
        Corpus c = preprocess(make_events(rows), 5);
        const auto& seq = c.sequences[c.user_index.at("u0")];
        REQUIRE(seq.size() == 5);
        CHECK(c.item_ids[seq[0]] == "early");
        CHECK(c.item_ids[seq[1]] == "first");
        CHECK(c.item_ids[seq[2]] == "tie_a");
        CHECK(c.item_ids[seq[3]] == "tie_b");
        CHECK(c.item_ids[seq[4]] == "late");
    }

    SUBCASE("empty result is an explicit error") {
        auto events = make_events({{"u", "i", 1}});
        CHECK_THROWS_WITH_AS(preprocess(events, 5), "corpus empty after preprocessing", std::runtime_error);
    }

    SUBCASE("preprocessing is idempotent") {
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int u = 0; u < 8; ++u) {
            for (int i = 0; i < 6; ++i) {
                if ((u + i) % 7 == 3) continue;
                rows.emplace_back("u" + std::to_string(u), "i" + std::to_string(i), u * 31 + i * 7);
            }
        }
        rows.emplace_back("solo", "i0", 3);
        Corpus once = preprocess(make_events(rows), 5);

        std::vector<Interaction> replay;
        for (size_t u = 0; u < once.n_users(); ++u) {
            int64_t ts = 0;
            for (uint32_t item : once.sequences[u]) replay.push_back({once.user_ids[u], once.item_ids[item], 1.0, ts++});
        }
        Corpus twice = preprocess(replay, 5);
        REQUIRE(twice.n_users() == once.n_users());
        REQUIRE(twice.n_items() == once.n_items());
        for (size_t u = 0; u < once.n_users(); ++u) {
            const auto& a = once.sequences[u];
            const auto& b = twice.sequences[twice.user_index.at(once.user_ids[u])];
            REQUIRE(a.size() == b.size());
            for (size_t t = 0; t < a.size(); ++t) CHECK(once.item_ids[a[t]] == twice.item_ids[b[t]]);
        }
    }

    SUBCASE("degree invariants after preprocessing") {
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int u = 0; u < 12; ++u) {
            for (int i = 0; i < 9; ++i) {
                if ((u * i) % 5 == 2) continue;
                rows.emplace_back("u" + std::to_string(u), "i" + std::to_string(i), u + i * 3);
            }
        }
        Corpus c = preprocess(make_events(rows), 5);
        REQUIRE(c.n_users() > 0);
        for (const auto& seq : c.sequences) CHECK(seq.size() >= 5);
        std::vector<size_t> item_deg(c.n_items(), 0);
        for (const auto& seq : c.sequences) {
            for (uint32_t it : seq) ++item_deg[it];
        }
        for (size_t deg : item_deg) CHECK(deg >= 5);
    }

    SUBCASE("re-run yields identical dense indices") {
        std::vector<std::tuple<std::string, std::string, int64_t>> rows;
        for (int u = 0; u < 6; ++u) {
            for (int i = 0; i < 6; ++i) rows.emplace_back("u" + std::to_string(u), "i" + std::to_string(i), 1000 - u - i);
        }
        auto events = make_events(rows);
        Corpus a = preprocess(events, 5);
        Corpus b = preprocess(events, 5);
        CHECK(a.user_ids == b.user_ids);
        CHECK(a.item_ids == b.item_ids);
        CHECK(a.sequences == b.sequences);
    }
}

TEST_CASE("leave one out") {
    Corpus c;
    c.user_ids = {"u"};
    c.item_ids = {"a", "b", "c", "d"};
    c.user_index["u"] = 0;
    for (size_t i = 0; i < 4; ++i) c.item_index[c.item_ids[i]] = static_cast<uint32_t>(i);
    c.sequences = {{0, 1, 2, 3}};

    SUBCASE("definition") {
        Split s = leave_one_out(c);
        CHECK(s.train_len[0] == 2);
        CHECK(s.val_item[0] == 2);
        CHECK(s.test_item[0] == 3);
        CHECK(s.n_excluded == 0);
    }

    SUBCASE("final-evaluation mode merges validation into train") {
        Split s = leave_one_out(c, true);
        CHECK(s.train_len[0] == 3);
        CHECK(s.test_item[0] == 3);
    }

    SUBCASE("short sequences are excluded with a count") {
        Corpus shorty = c;
        shorty.user_ids.push_back("v");
        shorty.user_index["v"] = 1;
        shorty.sequences.push_back({0, 1});
        Split s = leave_one_out(shorty);
        CHECK(s.usable[0] == 1);
        CHECK(s.usable[1] == 0);
        CHECK(s.n_excluded == 1);
    }
}

TEST_CASE("corpus cache round trip") {
    std::vector<std::tuple<std::string, std::string, int64_t>> rows;
    for (int u = 0; u < 7; ++u) {
        for (int i = 0; i < 7; ++i) rows.emplace_back("user_" + std::to_string(u), "item_" + std::to_string(i), u * 100 + i);
    }
    Corpus c = preprocess(make_events(rows), 5);
    const std::string path = "corpus_cache_test.bin";
    save_corpus(path, c);
    Corpus back = load_corpus(path);
    CHECK(back.user_ids == c.user_ids);
    CHECK(back.item_ids == c.item_ids);
    CHECK(back.sequences == c.sequences);
    std::remove(path.c_str());

    const auto s = c.stats();
    CHECK(s.n_users == 7);
    CHECK(s.n_items == 7);
    CHECK(s.n_actions == 49);
    CHECK(s.avg_length == doctest::Approx(7.0));
    CHECK(s.density == doctest::Approx(1.0));
}
