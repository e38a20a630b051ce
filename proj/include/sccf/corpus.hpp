#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sccf {

// One implicit-feedback event as read from disk.
struct Interaction {
    std::string user;
    std::string item;
    double value = 1.0;
    int64_t timestamp = 0;
};

struct CorpusStats {
    size_t n_users = 0;
    size_t n_items = 0;
    size_t n_actions = 0;
    double avg_length = 0.0;
    double density = 0.0;
};

// Preprocessed interaction data: dense vocabularies and per-user
// chronological item sequences.
struct Corpus {
    std::vector<std::string> user_ids;  // dense user index -> external id
    std::vector<std::string> item_ids;  // dense item index -> external id
    std::unordered_map<std::string, uint32_t> user_index;
    std::unordered_map<std::string, uint32_t> item_index;
    std::vector<std::vector<uint32_t>> sequences;  // S_u, sorted by timestamp

    size_t n_users() const { return user_ids.size(); }
    size_t n_items() const { return item_ids.size(); }
    CorpusStats stats() const;
};

// Leave-one-out split. For user u the train prefix is
// sequences[u][0, train_len[u]); the validation item is the one just before
// the last and the test item is the last. Final-evaluation mode merges the
// validation item back into the train prefix.
struct Split {
    std::vector<uint32_t> train_len;
    std::vector<int64_t> val_item;   // -1 when user excluded
    std::vector<int64_t> test_item;  // -1 when user excluded
    std::vector<uint8_t> usable;
    size_t n_excluded = 0;
    bool final_mode = false;
};

class ParseError : public std::runtime_error {
  public:
    ParseError(const std::string& msg, size_t line)
        : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    size_t line_number;
};

// MovieLens loaders: ML-1M `user::item::rating::timestamp` lines, or the
// ML-20M CSV with a `userId,movieId,rating,timestamp` header. The format is
// detected from the first line. Input order is preserved.
std::vector<Interaction> load_movielens(const std::string& path);

// Amazon ratings CSV `user,item,rating,timestamp`; an optional header row is
// skipped. Duplicate (user,item) rows are retained here and collapsed later.
std::vector<Interaction> load_amazon(const std::string& path);

// Binarize, collapse duplicate (user,item) events to the earliest occurrence,
// apply the k-core filter iteratively until stable, then drop users with
// fewer than k actions once more. Sequences are sorted by timestamp with
// ties broken by input order; dense indices follow first appearance in the
// retained input.
Corpus preprocess(const std::vector<Interaction>& raw, size_t k = 5);

// Users with sequences shorter than 3 are excluded (counted in n_excluded).
Split leave_one_out(const Corpus& corpus, bool final_mode = false);

// Items never recommended to u: the tuning-time train prefix. In final mode
// the merged prefix ends with the validation item, which stays in the
// ranking universe, so the exclusion set is one shorter than train_len.
inline uint32_t exclusion_len(const Split& split, uint32_t u) {
    const uint32_t len = split.train_len[u];
    return split.final_mode && len > 0 ? len - 1 : len;
}

// Binary cache: vocab tables as length-prefixed string lists followed by a
// tensor container holding the sequence data.
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

// Table-style stats row: name, users, items, actions, avg length, density.
std::string stats_tsv_row(const std::string& name, const CorpusStats& s);

}  // namespace sccf
