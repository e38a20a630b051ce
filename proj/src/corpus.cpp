#include "sccf/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sccf/checkpoint.hpp"

namespace sccf {

CorpusStats Corpus::stats() const {
    CorpusStats s;
    s.n_users = n_users();
    s.n_items = n_items();
    for (const auto& seq : sequences) s.n_actions += seq.size();
    if (s.n_users > 0) s.avg_length = static_cast<double>(s.n_actions) / static_cast<double>(s.n_users);
    if (s.n_users > 0 && s.n_items > 0)
        s.density = static_cast<double>(s.n_actions) / (static_cast<double>(s.n_users) * static_cast<double>(s.n_items));
    return s;
}

// ---------------------------------------------------------------------------
// loaders
// ---------------------------------------------------------------------------

static bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [p, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && p == end;
}

static bool parse_i64(const std::string& s, int64_t& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto [p, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && p == end;
}

static std::vector<std::string> split_by(const std::string& line, const std::string& sep) {
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
        const size_t next = line.find(sep, pos);
        if (next == std::string::npos) {
            fields.push_back(line.substr(pos));
            break;
        }
        fields.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return fields;
}

static std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

static Interaction parse_fields(const std::vector<std::string>& f, size_t line_no) {
    Interaction ev;
    ev.user = f[0];
    ev.item = f[1];
    if (!parse_double(f[2], ev.value)) throw ParseError("bad rating field '" + f[2] + "'", line_no);
    double ts = 0;
    // ML-20M timestamps are integral but amazon exports occasionally carry
    // a trailing ".0"; accept either.
    if (!parse_i64(f[3], ev.timestamp)) {
        if (!parse_double(f[3], ts)) throw ParseError("bad timestamp field '" + f[3] + "'", line_no);
        ev.timestamp = static_cast<int64_t>(ts);
    }
    if (ev.timestamp < 0) throw ParseError("negative timestamp", line_no);
    if (ev.user.empty() || ev.item.empty()) throw ParseError("empty user/item id", line_no);
    return ev;
}

std::vector<Interaction> load_movielens(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<Interaction> out;
    std::string line;
    size_t line_no = 0;
    bool csv_header_checked = false;
    bool csv_mode = false;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        if (!csv_header_checked) {
            csv_header_checked = true;
            if (line.rfind("userId,", 0) == 0) {
                csv_mode = true;
                continue;  // ML-20M header row
            }
            csv_mode = line.find("::") == std::string::npos;
        }
        const auto fields = split_by(line, csv_mode ? "," : "::");
        if (fields.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(fields.size()), line_no);
        out.push_back(parse_fields(fields, line_no));
    }
    return out;
}

std::vector<Interaction> load_amazon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<Interaction> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_by(line, ",");
        if (fields.size() != 4) throw ParseError("expected 4 columns, got " + std::to_string(fields.size()), line_no);
        if (line_no == 1) {
            double probe;
            if (!parse_double(fields[2], probe) && fields[2].find("rating") != std::string::npos) continue;
        }
        out.push_back(parse_fields(fields, line_no));
    }
    return out;
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

Corpus preprocess(const std::vector<Interaction>& raw, size_t k) {
    struct Event {
        uint32_t user;
        uint32_t item;
        int64_t timestamp;
        size_t input_order;
    };

    // Intern ids, binarize, and collapse duplicate (user,item) pairs to the
    // earliest occurrence. R_u^+ is a set.
    std::unordered_map<std::string, uint32_t> umap, imap;
    std::vector<std::string> unames, inames;
    std::vector<Event> events;
    std::unordered_map<uint64_t, size_t> seen;  // (user,item) -> events slot
    for (size_t idx = 0; idx < raw.size(); ++idx) {
        const Interaction& ev = raw[idx];
        auto [uit, unew] = umap.emplace(ev.user, static_cast<uint32_t>(unames.size()));
        if (unew) unames.push_back(ev.user);
        auto [iit, inew] = imap.emplace(ev.item, static_cast<uint32_t>(inames.size()));
        if (inew) inames.push_back(ev.item);
        const uint32_t u = uit->second, i = iit->second;
        const uint64_t key = (static_cast<uint64_t>(u) << 32) | i;
        auto [sit, fresh] = seen.emplace(key, events.size());
        if (fresh) {
            events.push_back({u, i, ev.timestamp, idx});
        } else if (ev.timestamp < events[sit->second].timestamp) {
            events[sit->second].timestamp = ev.timestamp;
            events[sit->second].input_order = idx;
        }
    }

    // Iterative k-core over users and items.
    std::vector<uint8_t> alive(events.size(), 1);
    std::vector<size_t> udeg(unames.size(), 0), ideg(inames.size(), 0);
    bool changed = true;
    while (changed) {
        std::fill(udeg.begin(), udeg.end(), 0);
        std::fill(ideg.begin(), ideg.end(), 0);
        for (size_t e = 0; e < events.size(); ++e) {
            if (!alive[e]) continue;
            ++udeg[events[e].user];
            ++ideg[events[e].item];
        }
        changed = false;
        for (size_t e = 0; e < events.size(); ++e) {
            if (!alive[e]) continue;
            if (udeg[events[e].user] < k || ideg[events[e].item] < k) {
                alive[e] = 0;
                changed = true;
            }
        }
    }

    // One further user pass ("discard users with fewer than 5 actions once
    // more"); item degrees may drop below k afterwards.
    std::fill(udeg.begin(), udeg.end(), 0);
    for (size_t e = 0; e < events.size(); ++e) {
        if (alive[e]) ++udeg[events[e].user];
    }
    for (size_t e = 0; e < events.size(); ++e) {
        if (alive[e] && udeg[events[e].user] < k) alive[e] = 0;
    }

    // Dense indices in first-appearance order over the retained input.
    std::vector<size_t> order(events.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return events[a].input_order < events[b].input_order; });

    Corpus corpus;
    std::vector<int64_t> new_user(unames.size(), -1), new_item(inames.size(), -1);
    for (size_t e : order) {
        if (!alive[e]) continue;
        const Event& ev = events[e];
        if (new_user[ev.user] < 0) {
            new_user[ev.user] = static_cast<int64_t>(corpus.user_ids.size());
            corpus.user_ids.push_back(unames[ev.user]);
            corpus.sequences.emplace_back();
        }
        if (new_item[ev.item] < 0) {
            new_item[ev.item] = static_cast<int64_t>(corpus.item_ids.size());
            corpus.item_ids.push_back(inames[ev.item]);
        }
    }
    if (corpus.user_ids.empty()) throw std::runtime_error("corpus empty after preprocessing");

    // Chronological per-user sequences, ties broken by input order.
    std::vector<size_t> kept;
    kept.reserve(events.size());
    for (size_t e = 0; e < events.size(); ++e) {
        if (alive[e]) kept.push_back(e);
    }
    std::sort(kept.begin(), kept.end(), [&](size_t a, size_t b) {
        if (events[a].timestamp != events[b].timestamp) return events[a].timestamp < events[b].timestamp;
        return events[a].input_order < events[b].input_order;
    });
    for (size_t e : kept) {
        const Event& ev = events[e];
        corpus.sequences[static_cast<size_t>(new_user[ev.user])].push_back(
            static_cast<uint32_t>(new_item[ev.item]));
    }

    for (size_t u = 0; u < corpus.user_ids.size(); ++u) corpus.user_index[corpus.user_ids[u]] = static_cast<uint32_t>(u);
    for (size_t i = 0; i < corpus.item_ids.size(); ++i) corpus.item_index[corpus.item_ids[i]] = static_cast<uint32_t>(i);
    return corpus;
}

Split leave_one_out(const Corpus& corpus, bool final_mode) {
    Split split;
    split.final_mode = final_mode;
    const size_t n = corpus.n_users();
    split.train_len.assign(n, 0);
    split.val_item.assign(n, -1);
    split.test_item.assign(n, -1);
    split.usable.assign(n, 0);
    for (size_t u = 0; u < n; ++u) {
        const auto& seq = corpus.sequences[u];
        if (seq.size() < 3) {
            ++split.n_excluded;
            continue;
        }
        split.usable[u] = 1;
        split.test_item[u] = seq.back();
        split.val_item[u] = seq[seq.size() - 2];
        split.train_len[u] = static_cast<uint32_t>(seq.size() - (final_mode ? 1 : 2));
    }
    return split;
}

// ---------------------------------------------------------------------------
// binary cache
// ---------------------------------------------------------------------------

static void put_u32_raw(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t get_u32_raw(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("corpus cache: truncated read");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

static void write_string_list(std::ostream& out, const std::vector<std::string>& v) {
    put_u32_raw(out, static_cast<uint32_t>(v.size()));
    for (const auto& s : v) {
        put_u32_raw(out, static_cast<uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
}

static std::vector<std::string> read_string_list(std::istream& in, uint64_t& consumed) {
    const uint32_t n = get_u32_raw(in);
    consumed += 4;
    std::vector<std::string> v(n);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t len = get_u32_raw(in);
        v[i].assign(len, '\0');
        in.read(v[i].data(), len);
        if (!in) throw std::runtime_error("corpus cache: truncated string");
        consumed += 4 + len;
    }
    return v;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open corpus cache for writing: " + path);
    write_string_list(out, corpus.user_ids);
    write_string_list(out, corpus.item_ids);

    size_t total = 0;
    for (const auto& seq : corpus.sequences) total += seq.size();
    Tensor lens({std::max<size_t>(corpus.n_users(), 1)});
    Tensor flat({std::max<size_t>(total, 1)});
    size_t pos = 0;
    for (size_t u = 0; u < corpus.n_users(); ++u) {
        lens.data[u] = static_cast<float>(corpus.sequences[u].size());
        for (uint32_t it : corpus.sequences[u]) flat.data[pos++] = static_cast<float>(it);
    }
    std::map<std::string, Tensor> tensors;
    tensors["corpus.seq_lens"] = std::move(lens);
    tensors["corpus.seq_flat"] = std::move(flat);
    tensors["corpus.n_actions"] = Tensor({1}, {static_cast<float>(total)});
    write_container(out, tensors, 0);
    if (!out) throw std::runtime_error("corpus cache write failed: " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus cache: " + path);
    const uint64_t total_bytes = file_size_bytes(path);
    uint64_t consumed = 0;
    Corpus corpus;
    corpus.user_ids = read_string_list(in, consumed);
    corpus.item_ids = read_string_list(in, consumed);
    std::map<std::string, Tensor> tensors;
    uint64_t step = 0;
    read_container(in, total_bytes - consumed, tensors, step);

    const Tensor& lens = tensors.at("corpus.seq_lens");
    const Tensor& flat = tensors.at("corpus.seq_flat");
    corpus.sequences.resize(corpus.user_ids.size());
    size_t pos = 0;
    for (size_t u = 0; u < corpus.user_ids.size(); ++u) {
        const size_t len = static_cast<size_t>(lens.data[u]);
        corpus.sequences[u].resize(len);
        for (size_t t = 0; t < len; ++t) corpus.sequences[u][t] = static_cast<uint32_t>(flat.data[pos++]);
    }
    for (size_t u = 0; u < corpus.user_ids.size(); ++u) corpus.user_index[corpus.user_ids[u]] = static_cast<uint32_t>(u);
    for (size_t i = 0; i < corpus.item_ids.size(); ++i) corpus.item_index[corpus.item_ids[i]] = static_cast<uint32_t>(i);
    return corpus;
}

std::string stats_tsv_row(const std::string& name, const CorpusStats& s) {
    std::ostringstream out;
    char avg[32], dens[32];
    std::snprintf(avg, sizeof(avg), "%.1f", s.avg_length);
    std::snprintf(dens, sizeof(dens), "%.2f%%", s.density * 100.0);
    out << name << '\t' << s.n_users << '\t' << s.n_items << '\t' << s.n_actions << '\t' << avg << '\t' << dens;
    return out.str();
}

}  // namespace sccf
