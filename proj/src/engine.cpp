#include "sccf/engine.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sccf/neighborhood.hpp"

namespace sccf {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, size_t line) {
    std::string msg = "config: bad value '" + value + "' for key '" + key + "'";
    if (line > 0) msg += " at line " + std::to_string(line);
    throw ConfigError(msg);
}

size_t parse_size(const std::string& key, const std::string& value, size_t line) {
    size_t out = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value, line);
    return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value, size_t line) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || p != value.data() + value.size()) bad_value(key, value, line);
    return out;
}

float parse_float(const std::string& key, const std::string& value, size_t line) {
    try {
        size_t pos = 0;
        const float out = std::stof(value, &pos);
        if (pos != value.size()) bad_value(key, value, line);
        return out;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, value, line);
    }
}

bool parse_bool(const std::string& key, const std::string& value, size_t line) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    bad_value(key, value, line);
}

std::vector<size_t> parse_size_list(const std::string& key, const std::string& value, size_t line) {
    std::vector<size_t> out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(parse_size(key, part, line));
    if (out.empty()) bad_value(key, value, line);
    return out;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

}  // namespace

void EngineConfig::apply(const std::string& key, const std::string& value, size_t line) {
    if (key == "dataset.kind") {
        if (value != "ml-1m" && value != "ml-20m" && value != "amazon") bad_value(key, value, line);
        dataset_kind = value;
    } else if (key == "dataset.path") {
        dataset_path = value;
    } else if (key == "out.dir") {
        out_dir = value;
    } else if (key == "model") {
        if (value != "fism" && value != "sasrec") bad_value(key, value, line);
        model = value;
    } else if (key == "seed") {
        seed = parse_u64(key, value, line);
    } else if (key == "train.epochs") {
        train_epochs = parse_size(key, value, line);
    } else if (key == "train.lr") {
        train_lr = parse_float(key, value, line);
    } else if (key == "train.beta1") {
        train_beta1 = parse_float(key, value, line);
    } else if (key == "train.beta2") {
        train_beta2 = parse_float(key, value, line);
    } else if (key == "train.eps") {
        train_eps = parse_float(key, value, line);
    } else if (key == "train.decay") {
        train_decay = parse_bool(key, value, line);
    } else if (key == "fism.alpha") {
        fism.alpha = parse_float(key, value, line);
    } else if (key == "fism.dim") {
        fism.dim = parse_size(key, value, line);
    } else if (key == "fism.neg_per_pos") {
        fism.neg_per_pos = parse_size(key, value, line);
    } else if (key == "fism.window") {
        fism.window = parse_size(key, value, line);
    } else if (key == "fism.l2") {
        fism.l2 = parse_float(key, value, line);
    } else if (key == "sasrec.layers") {
        sasrec.n_layers = parse_size(key, value, line);
    } else if (key == "sasrec.heads") {
        sasrec.n_heads = parse_size(key, value, line);
    } else if (key == "sasrec.maxlen") {
        sasrec.max_len = parse_size(key, value, line);
    } else if (key == "sasrec.dropout") {
        sasrec.dropout_rate = parse_float(key, value, line);
    } else if (key == "sasrec.dim") {
        sasrec.dim = parse_size(key, value, line);
    } else if (key == "sasrec.neg_per_pos") {
        sasrec.neg_per_pos = parse_size(key, value, line);
    } else if (key == "sasrec.ffn_width") {
        sasrec.ffn_width = parse_size(key, value, line);
    } else if (key == "sasrec.batch") {
        sasrec.batch_size = parse_size(key, value, line);
    } else if (key == "sasrec.l2") {
        sasrec.l2 = parse_float(key, value, line);
    } else if (key == "uu.beta") {
        uu_beta = parse_size(key, value, line);
    } else if (key == "uu.window") {
        uu_window = parse_size(key, value, line);
    } else if (key == "fusion.hidden") {
        fusion_hidden = parse_size_list(key, value, line);
    } else if (key == "fusion.l2") {
        fusion_l2 = parse_float(key, value, line);
    } else if (key == "fusion.patience") {
        fusion_patience = parse_size(key, value, line);
    } else if (key == "fusion.N") {
        fusion_n = parse_size(key, value, line);
    } else if (key == "fusion.epochs") {
        fusion_epochs = parse_size(key, value, line);
    } else if (key == "fusion.holdout") {
        fusion_holdout = parse_float(key, value, line);
    } else if (key == "fusion.lr") {
        fusion_lr = parse_float(key, value, line);
    } else {
        std::string msg = "config: unknown key '" + key + "'";
        if (line > 0) msg += " at line " + std::to_string(line);
        throw ConfigError(msg);
    }
}

EngineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    EngineConfig cfg;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected 'key = value' at line " + std::to_string(line_no));
        cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no);
    }
    return cfg;
}

std::string EngineConfig::resolved() const {
    std::ostringstream out;
    out << "dataset.kind = " << dataset_kind << "\n";
    out << "dataset.path = " << dataset_path << "\n";
    out << "out.dir = " << out_dir << "\n";
    out << "model = " << model << "\n";
    out << "seed = " << seed << "\n";
    out << "train.epochs = " << train_epochs << "\n";
    out << "train.lr = " << train_lr << "\n";
    out << "train.beta1 = " << train_beta1 << "\n";
    out << "train.beta2 = " << train_beta2 << "\n";
    out << "train.eps = " << train_eps << "\n";
    out << "train.decay = " << (train_decay ? "true" : "false") << "\n";
    out << "fism.alpha = " << fism.alpha << "\n";
    out << "fism.dim = " << fism.dim << "\n";
    out << "fism.neg_per_pos = " << fism.neg_per_pos << "\n";
    out << "fism.window = " << fism.window << "\n";
    out << "fism.l2 = " << fism.l2 << "\n";
    out << "sasrec.layers = " << sasrec.n_layers << "\n";
    out << "sasrec.heads = " << sasrec.n_heads << "\n";
    out << "sasrec.maxlen = " << sasrec.max_len << "\n";
    out << "sasrec.dropout = " << sasrec.dropout_rate << "\n";
    out << "sasrec.dim = " << sasrec.dim << "\n";
    out << "sasrec.neg_per_pos = " << sasrec.neg_per_pos << "\n";
    out << "sasrec.ffn_width = " << sasrec.ffn_width << "\n";
    out << "sasrec.batch = " << sasrec.batch_size << "\n";
    out << "sasrec.l2 = " << sasrec.l2 << "\n";
    out << "uu.beta = " << uu_beta << "\n";
    out << "uu.window = " << uu_window << "\n";
    out << "fusion.hidden = ";
    for (size_t i = 0; i < fusion_hidden.size(); ++i) out << (i ? "," : "") << fusion_hidden[i];
    out << "\n";
    out << "fusion.l2 = " << fusion_l2 << "\n";
    out << "fusion.patience = " << fusion_patience << "\n";
    out << "fusion.N = " << fusion_n << "\n";
    out << "fusion.epochs = " << fusion_epochs << "\n";
    out << "fusion.holdout = " << fusion_holdout << "\n";
    out << "fusion.lr = " << fusion_lr << "\n";
    return out.str();
}

AdamConfig EngineConfig::adam(size_t total_steps) const {
    AdamConfig a;
    a.base_lr = train_lr;
    a.beta1 = train_beta1;
    a.beta2 = train_beta2;
    a.eps = train_eps;
    a.decay.linear = train_decay;
    a.decay.total_steps = total_steps;
    return a;
}

FismConfig EngineConfig::fism_config(size_t total_steps) const {
    FismConfig c = fism;
    c.adam = adam(total_steps);
    return c;
}

SasrecConfig EngineConfig::sasrec_config(size_t total_steps) const {
    SasrecConfig c = sasrec;
    c.adam = adam(total_steps);
    return c;
}

FusionConfig EngineConfig::fusion_config() const {
    FusionConfig c;
    c.hidden = fusion_hidden;
    c.l2 = fusion_l2;
    c.patience = fusion_patience;
    c.list_n = fusion_n;
    c.beta = uu_beta;
    c.max_epochs = fusion_epochs;
    c.holdout_fraction = fusion_holdout;
    c.adam.base_lr = fusion_lr;
    c.adam.beta1 = train_beta1;
    c.adam.beta2 = train_beta2;
    c.adam.eps = train_eps;
    return c;
}

void log_line(const std::string& level, const std::string& msg) {
    const auto now =
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch());
    std::cerr << now.count() << " " << level << " " << msg << "\n";
}

// ---------------------------------------------------------------------------
// serve loop
// ---------------------------------------------------------------------------

ServeState::ServeState(std::shared_ptr<const UiModel> model, std::shared_ptr<const FusionNet> fusion,
                       Corpus corpus, const Split& split, UserIndex index, size_t list_n, size_t beta,
                       std::string flush_path)
    : model_(std::move(model)),
      fusion_(std::move(fusion)),
      corpus_(std::move(corpus)),
      index_(std::move(index)),
      list_n_(list_n),
      beta_(beta),
      flush_path_(std::move(flush_path)) {
    history_.resize(corpus_.n_users());
    for (uint32_t u = 0; u < corpus_.n_users(); ++u) {
        const auto& seq = corpus_.sequences[u];
        history_[u].assign(seq.begin(), seq.begin() + split.train_len[u]);
    }
    seen_event_.assign(corpus_.n_users(), 0);
}

uint32_t ServeState::intern_user(const std::string& user) {
    auto it = corpus_.user_index.find(user);
    if (it != corpus_.user_index.end()) return it->second;
    const uint32_t u = static_cast<uint32_t>(corpus_.n_users());
    corpus_.user_ids.push_back(user);
    corpus_.user_index[user] = u;
    corpus_.sequences.emplace_back();
    history_.emplace_back();
    seen_event_.push_back(0);
    index_.valid.push_back(0);  // zero representation until the first event
    index_.recency.emplace_back();
    index_.reps.data.insert(index_.reps.data.end(), index_.dim(), 0.0f);
    index_.reps.shape[0] += 1;
    return u;
}

std::string ServeState::handle_event(const std::string& user, const std::string& item, int64_t ts) {
    (void)ts;  // ordering is the caller's contract; the timestamp is logged only
    auto item_it = corpus_.item_index.find(item);
    if (item_it == corpus_.item_index.end()) return "ERR unknown-item";
    const uint32_t u = intern_user(user);
    history_[u].push_back(item_it->second);
    seen_event_[u] = 1;
    ++n_events_;

    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    const Tensor rep = model_->serving_repr(history_[u]);
    const double norm = l2_norm(rep.data.data(), rep.numel());
    float* row = index_.reps.row_ptr(u);
    if (norm > 1e-12) {
        for (size_t j = 0; j < index_.dim(); ++j) row[j] = static_cast<float>(rep.data[j] / norm);
        index_.valid[u] = 1;
    }
    const auto t1 = Clock::now();
    const NeighborList nb = top_beta_by_query(index_, row, u, beta_);
    const auto t2 = Clock::now();
    (void)nb;

    const size_t w = std::min(index_.window, history_[u].size());
    index_.recency[u].assign(history_[u].end() - w, history_[u].end());

    const auto us = [](Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration_cast<std::chrono::microseconds>(b - a).count();
    };
    return "OK " + std::to_string(us(t0, t1)) + " " + std::to_string(us(t1, t2));
}

std::string ServeState::handle_reco(const std::string& user, size_t n) {
    auto it = corpus_.user_index.find(user);
    if (it == corpus_.user_index.end()) return "ERR cold-user";
    const uint32_t u = it->second;
    if (history_[u].empty()) return "ERR cold-user";

    SccfContext ctx;
    ctx.ui = model_.get();
    ctx.index = &index_;
    ctx.list_n = list_n_;
    ctx.beta = beta_;
    Tensor m_u;
    const CandidateUnion uni = build_union_spans(ctx, u, history_[u], history_[u], &m_u);

    ScoredCandidateList scored;
    scored.reserve(uni.size());
    std::vector<float> buf;
    const Tensor& q_table = model_->item_embeddings();
    const size_t d = model_->dim();
    for (const auto& e : uni) {
        buf.assign(2 * d + 2, 0.0f);
        std::copy(m_u.data.begin(), m_u.data.end(), buf.begin());
        const float* q = q_table.row_ptr(e.item);
        std::copy(q, q + d, buf.begin() + d);
        buf[2 * d] = static_cast<float>(e.z_ui);
        buf[2 * d + 1] = static_cast<float>(e.z_uu);
        scored.push_back({e.item, fusion_->forward(buf)});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.item < b.item;
    });
    if (scored.size() > n) scored.resize(n);

    std::ostringstream out;
    out << "ITEMS";
    char buf2[64];
    for (const auto& c : scored) {
        std::snprintf(buf2, sizeof(buf2), " %s:%.6g", corpus_.item_ids[c.item].c_str(), c.score);
        out << buf2;
    }
    return out.str();
}

std::string ServeState::handle_line(const std::string& line) {
    std::istringstream in(line);
    std::string verb;
    if (!(in >> verb)) return "ERR parse";
    if (verb == "EVENT") {
        std::string user, item, ts_str, extra;
        if (!(in >> user >> item >> ts_str) || (in >> extra)) return "ERR parse";
        int64_t ts = 0;
        auto [p, ec] = std::from_chars(ts_str.data(), ts_str.data() + ts_str.size(), ts);
        if (ec != std::errc() || p != ts_str.data() + ts_str.size()) return "ERR parse";
        return handle_event(user, item, ts);
    }
    if (verb == "RECO") {
        std::string user, n_str, extra;
        if (!(in >> user >> n_str) || (in >> extra)) return "ERR parse";
        size_t n = 0;
        auto [p, ec] = std::from_chars(n_str.data(), n_str.data() + n_str.size(), n);
        if (ec != std::errc() || p != n_str.data() + n_str.size() || n == 0) return "ERR parse";
        return handle_reco(user, n);
    }
    if (verb == "FLUSH") {
        std::string extra;
        if (in >> extra) return "ERR parse";
        try {
            save_index(flush_path_, index_);
        } catch (const std::exception& e) {
            return std::string("ERR flush ") + e.what();
        }
        return "OK";
    }
    return "ERR parse";
}

void serve_loop(ServeState& state, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out << state.handle_line(line) << "\n";
        out.flush();
    }
}

void serve_tcp(ServeState& state, uint16_t port) {
    const int server = ::socket(AF_INET, SOCK_STREAM, 0);
    if (server < 0) throw std::runtime_error("socket() failed");
    const int opt = 1;
    ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(server, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
        throw std::runtime_error("bind() failed on port " + std::to_string(port));
    if (::listen(server, 1) < 0) throw std::runtime_error("listen() failed");
    log_line("info", "serving on port " + std::to_string(port));

    while (true) {
        const int client = ::accept(server, nullptr, nullptr);
        if (client < 0) continue;
        std::string pending;
        char chunk[4096];
        for (;;) {
            const ssize_t got = ::read(client, chunk, sizeof(chunk));
            if (got <= 0) break;
            pending.append(chunk, static_cast<size_t>(got));
            size_t nl;
            while ((nl = pending.find('\n')) != std::string::npos) {
                std::string line = pending.substr(0, nl);
                pending.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (line.empty()) continue;
                const std::string reply = state.handle_line(line) + "\n";
                size_t off = 0;
                while (off < reply.size()) {
                    const ssize_t sent = ::write(client, reply.data() + off, reply.size() - off);
                    if (sent <= 0) break;
                    off += static_cast<size_t>(sent);
                }
            }
        }
        ::close(client);
    }
}

}  // namespace sccf
