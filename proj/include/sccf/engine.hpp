#pragma once

#include <iosfwd>
#include <memory>
#include <optional>

#include "sccf/evalharness.hpp"
#include "sccf/fism.hpp"
#include "sccf/fusion.hpp"
#include "sccf/sasrec.hpp"

namespace sccf {

// Fully resolved run configuration. Parsed from `key = value` lines with `#`
// comments; unknown keys and type mismatches are rejected with the line.
struct EngineConfig {
    std::string dataset_kind = "ml-1m";  // ml-1m | ml-20m | amazon
    std::string dataset_path;
    std::string out_dir = ".";
    std::string model = "fism";  // fism | sasrec
    uint64_t seed = 42;

    // training
    size_t train_epochs = 100;
    float train_lr = 0.001f;
    float train_beta1 = 0.9f;
    float train_beta2 = 0.999f;
    float train_eps = 1e-8f;
    bool train_decay = true;

    FismConfig fism;
    SasrecConfig sasrec;

    size_t uu_beta = 100;
    size_t uu_window = 15;

    std::vector<size_t> fusion_hidden{64, 32};
    float fusion_l2 = 0.0f;
    size_t fusion_patience = 5;
    size_t fusion_n = 100;
    size_t fusion_epochs = 500;
    float fusion_holdout = 0.1f;
    float fusion_lr = 0.001f;

    void apply(const std::string& key, const std::string& value, size_t line = 0);
    std::string resolved() const;  // canonical key = value dump

    AdamConfig adam(size_t total_steps) const;
    FismConfig fism_config(size_t total_steps) const;
    SasrecConfig sasrec_config(size_t total_steps) const;
    FusionConfig fusion_config() const;
};

EngineConfig load_config(const std::string& path);

// One-line `ts level msg` logger on stderr.
void log_line(const std::string& level, const std::string& msg);

// ---------------------------------------------------------------------------
// serve loop
// ---------------------------------------------------------------------------

// Live serving state: frozen model checkpoints plus mutable per-user
// histories and index rows. EVENT users unknown to the corpus are admitted
// as cold-start users with an empty history and a zero representation.
class ServeState {
  public:
    // Live histories start as the split's train prefixes, matching the index
    // rows; events append on top.
    ServeState(std::shared_ptr<const UiModel> model, std::shared_ptr<const FusionNet> fusion, Corpus corpus,
               const Split& split, UserIndex index, size_t list_n, size_t beta, std::string flush_path);

    // Protocol: `EVENT <user> <item> <ts>`, `RECO <user> <n>`, `FLUSH`.
    // Returns the reply line (no trailing newline).
    std::string handle_line(const std::string& line);

    const UserIndex& index() const { return index_; }
    size_t n_events() const { return n_events_; }

  private:
    std::string handle_event(const std::string& user, const std::string& item, int64_t ts);
    std::string handle_reco(const std::string& user, size_t n);
    uint32_t intern_user(const std::string& user);

    std::shared_ptr<const UiModel> model_;
    std::shared_ptr<const FusionNet> fusion_;
    Corpus corpus_;
    UserIndex index_;
    std::vector<std::vector<uint32_t>> history_;
    std::vector<uint8_t> seen_event_;
    size_t list_n_;
    size_t beta_;
    std::string flush_path_;
    size_t n_events_ = 0;
};

// Reads protocol lines from `in`, writes one reply line per request to `out`.
void serve_loop(ServeState& state, std::istream& in, std::ostream& out);

// Same grammar over a TCP socket, one client at a time. Blocks forever.
[[noreturn]] void serve_tcp(ServeState& state, uint16_t port);

}  // namespace sccf
