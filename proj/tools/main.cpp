#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "sccf/checkpoint.hpp"
#include "sccf/engine.hpp"

using namespace sccf;

namespace {

Corpus prep_corpus(const std::string& kind, const std::string& in_path, size_t k) {
    std::vector<Interaction> raw;
    if (kind == "ml-1m" || kind == "ml-20m") {
        raw = load_movielens(in_path);
    } else {
        raw = load_amazon(in_path);
    }
    log_line("info", "loaded " + std::to_string(raw.size()) + " raw interactions");
    return preprocess(raw, k);
}

std::shared_ptr<UiModel> load_ui_model(const std::string& path, const EngineConfig& cfg) {
    ParameterStore store = load_checkpoint(path);
    if (store.has("fism.P")) return std::make_shared<FismModel>(std::move(store), cfg.fism_config(0));
    if (store.has("sasrec.P")) return std::make_shared<SasrecModel>(std::move(store), cfg.sasrec_config(0));
    throw std::runtime_error("checkpoint holds neither fism.P nor sasrec.P: " + path);
}

size_t count_trainable(const Corpus& corpus, const Split& split) {
    size_t n = 0;
    for (uint32_t u = 0; u < corpus.n_users(); ++u) {
        if (split.usable[u] && split.train_len[u] >= 2) ++n;
    }
    return n;
}

int train_ui(const EngineConfig& cfg, const std::string& corpus_path, const std::string& out_path,
             bool final_mode) {
    Corpus corpus = load_corpus(corpus_path);
    Split split = leave_one_out(corpus, final_mode);
    SeededRng rng(cfg.seed);
    const size_t trainable = count_trainable(corpus, split);

    if (cfg.model == "fism") {
        const size_t total_steps = cfg.train_epochs * trainable;
        FismConfig fc = cfg.fism_config(total_steps);
        FismModel model(corpus.n_items(), fc, rng);
        SeededRng train_rng(cfg.seed + 1);
        for (size_t epoch = 1; epoch <= cfg.train_epochs; ++epoch) {
            const double loss = model.train_epoch(corpus, split, train_rng);
            log_line("info", "epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
        }
        save_checkpoint(out_path, model.store());
    } else {
        const size_t batches = (trainable + cfg.sasrec.batch_size - 1) / cfg.sasrec.batch_size;
        SasrecConfig sc = cfg.sasrec_config(cfg.train_epochs * batches);
        SasrecModel model(corpus.n_items(), sc, rng);
        SeededRng train_rng(cfg.seed + 1);
        for (size_t epoch = 1; epoch <= cfg.train_epochs; ++epoch) {
            const double loss = model.train_epoch(corpus, split, train_rng);
            log_line("info", "epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
        }
        save_checkpoint(out_path, model.store());
    }
    log_line("info", "checkpoint written to " + out_path);
    return 0;
}

struct AssertSpec {
    std::string metric;  // hr | ndcg
    size_t k;
    double threshold;
};

AssertSpec parse_assert(const std::string& expr) {
    // form: hr@50>=0.33 or ndcg@20>=0.1
    const auto at = expr.find('@');
    const auto ge = expr.find(">=");
    if (at == std::string::npos || ge == std::string::npos || ge < at)
        throw std::runtime_error("bad --assert expression: " + expr);
    AssertSpec spec;
    spec.metric = expr.substr(0, at);
    spec.k = std::stoul(expr.substr(at + 1, ge - at - 1));
    spec.threshold = std::stod(expr.substr(ge + 2));
    if (spec.metric != "hr" && spec.metric != "ndcg") throw std::runtime_error("bad metric in --assert: " + expr);
    return spec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SCCF candidate-generation engine"};
    app.require_subcommand(1);

    EngineConfig cfg;
    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file")->expected(1);

    // prep
    auto* prep = app.add_subcommand("prep", "preprocess a raw dataset into a corpus cache");
    std::string prep_dataset = "ml-1m", prep_in, prep_out = "corpus.bin";
    size_t prep_k = 5;
    prep->add_option("--dataset", prep_dataset, "ml-1m | ml-20m | amazon")->required();
    prep->add_option("--in", prep_in, "raw ratings file")->required();
    prep->add_option("--out", prep_out, "corpus cache path");
    prep->add_option("--k", prep_k, "k-core threshold");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "print the Table-style stats row of a corpus cache");
    std::string st_corpus, st_name = "corpus";
    stats_cmd->add_option("--corpus", st_corpus)->required();
    stats_cmd->add_option("--name", st_name, "row label");

    // train-ui
    auto* train = app.add_subcommand("train-ui", "train the FISM or SASRec user-item model");
    std::string tr_corpus, tr_out = "model.ckpt", tr_model;
    size_t tr_epochs = 0;
    bool tr_final = false;
    uint64_t tr_seed = 0;
    train->add_option("--corpus", tr_corpus)->required();
    train->add_option("--model", tr_model, "fism | sasrec");
    train->add_option("--out", tr_out);
    train->add_option("--epochs", tr_epochs, "override train.epochs");
    train->add_option("--seed", tr_seed, "override seed");
    train->add_flag("--final", tr_final, "merge validation items into training");

    // build-index
    auto* bindex = app.add_subcommand("build-index", "build the user representation index");
    std::string bi_model, bi_corpus, bi_out = "index.bin";
    size_t bi_window = 0;
    bool bi_final = false;
    bindex->add_option("--model", bi_model)->required();
    bindex->add_option("--corpus", bi_corpus)->required();
    bindex->add_option("--out", bi_out);
    bindex->add_option("--window", bi_window, "override uu.window");
    bindex->add_flag("--final", bi_final);

    // train-fusion
    auto* tfusion = app.add_subcommand("train-fusion", "train the integrating network");
    std::string tf_ui, tf_index, tf_corpus, tf_out = "fusion.ckpt";
    bool tf_final = false;
    uint64_t tf_seed = 0;
    tfusion->add_option("--ui", tf_ui, "UI model checkpoint")->required();
    tfusion->add_option("--index", tf_index)->required();
    tfusion->add_option("--corpus", tf_corpus)->required();
    tfusion->add_option("--out", tf_out);
    tfusion->add_option("--seed", tf_seed);
    tfusion->add_flag("--final", tf_final, "retrain on the merged split for the tuned epoch count");

    // eval
    auto* eval = app.add_subcommand("eval", "leave-one-out evaluation");
    std::string ev_corpus, ev_mode = "fism", ev_model, ev_index, ev_fusion;
    bool ev_final = false;
    std::vector<std::string> ev_asserts;
    eval->add_option("--corpus", ev_corpus)->required();
    eval->add_option("--mode", ev_mode, "pop | userknn | fism | sasrec | uu | sccf");
    eval->add_option("--model", ev_model, "UI checkpoint (fism/sasrec/uu/sccf modes)");
    eval->add_option("--index", ev_index, "user index (uu/sccf modes)");
    eval->add_option("--fusion", ev_fusion, "fusion checkpoint (sccf mode)");
    eval->add_flag("--final", ev_final, "evaluate the test item on the merged split");
    eval->add_option("--assert", ev_asserts, "metric@k>=x; nonzero exit when violated");

    // bench
    auto* bench = app.add_subcommand("bench", "real-time update latency benchmark");
    std::string bn_corpus, bn_model, bn_index, bn_method = "sccf";
    size_t bn_trials = 200, bn_beta = 0;
    bench->add_option("--corpus", bn_corpus)->required();
    bench->add_option("--method", bn_method, "sccf | userknn");
    bench->add_option("--model", bn_model, "UI checkpoint (sccf method)");
    bench->add_option("--index", bn_index, "user index (sccf method)");
    bench->add_option("--trials", bn_trials);
    bench->add_option("--beta", bn_beta, "override uu.beta");

    // serve
    auto* serve = app.add_subcommand("serve", "real-time serve loop over stdin/stdout or TCP");
    std::string sv_corpus, sv_model, sv_index, sv_fusion, sv_flush = "index.live.bin";
    uint16_t sv_port = 0;
    serve->add_option("--corpus", sv_corpus)->required();
    serve->add_option("--model", sv_model)->required();
    serve->add_option("--index", sv_index)->required();
    serve->add_option("--fusion", sv_fusion)->required();
    serve->add_option("--flush-out", sv_flush, "path written by FLUSH");
    serve->add_option("--port", sv_port, "serve a TCP socket instead of stdin/stdout");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sweep: train + evaluate each cell");
    std::string sw_corpus, sw_grid, sw_model;
    size_t sw_epochs = 0;
    sweep_cmd->add_option("--corpus", sw_corpus)->required();
    sweep_cmd->add_option("--grid", sw_grid, "semicolon-separated key=v1,v2 lists")->required();
    sweep_cmd->add_option("--model", sw_model, "fism | sasrec");
    sweep_cmd->add_option("--epochs", sw_epochs, "epochs per cell");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "similarity-distribution histogram");
    std::string an_corpus, an_model, an_index;
    bool an_final = false;
    analyze->add_option("--corpus", an_corpus)->required();
    analyze->add_option("--model", an_model)->required();
    analyze->add_option("--index", an_index)->required();
    analyze->add_flag("--final", an_final);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage errors
    }

    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        log_line("info", "resolved config:\n" + cfg.resolved());

        if (prep->parsed()) {
            cfg.dataset_kind = prep_dataset == "ml-20m" ? "ml-20m" : (prep_dataset == "ml-1m" ? "ml-1m" : "amazon");
            Corpus corpus = prep_corpus(cfg.dataset_kind, prep_in, prep_k);
            save_corpus(prep_out, corpus);
            std::cout << "dataset\tusers\titems\tactions\tavg_length\tdensity\n";
            std::cout << stats_tsv_row(prep_dataset, corpus.stats()) << "\n";
            log_line("info", "corpus cached to " + prep_out);
            return 0;
        }

        if (stats_cmd->parsed()) {
            Corpus corpus = load_corpus(st_corpus);
            std::cout << "dataset\tusers\titems\tactions\tavg_length\tdensity\n";
            std::cout << stats_tsv_row(st_name, corpus.stats()) << "\n";
            return 0;
        }

        if (train->parsed()) {
            if (!tr_model.empty()) cfg.apply("model", tr_model);
            if (tr_epochs > 0) cfg.train_epochs = tr_epochs;
            if (tr_seed > 0) cfg.seed = tr_seed;
            log_line("info", "with overrides:\n" + cfg.resolved());
            return train_ui(cfg, tr_corpus, tr_out, tr_final);
        }

        if (bindex->parsed()) {
            Corpus corpus = load_corpus(bi_corpus);
            Split split = leave_one_out(corpus, bi_final);
            auto model = load_ui_model(bi_model, cfg);
            const size_t window = bi_window > 0 ? bi_window : cfg.uu_window;
            UserIndex index = build_user_index(*model, corpus, split, window);
            save_index(bi_out, index);
            log_line("info", "index over " + std::to_string(index.n_users()) + " users written to " + bi_out +
                                 " (" + std::to_string(index.n_warnings) + " warnings)");
            return 0;
        }

        if (tfusion->parsed()) {
            if (tf_seed > 0) cfg.seed = tf_seed;
            Corpus corpus = load_corpus(tf_corpus);
            Split split = leave_one_out(corpus, tf_final);
            auto model = load_ui_model(tf_ui, cfg);
            UserIndex index = load_index(tf_index);
            SccfContext ctx{model.get(), &index, &corpus, &split, cfg.fusion_n, cfg.uu_beta};

            FusionConfig fc = cfg.fusion_config();
            SeededRng rng(cfg.seed + 2);
            FusionNet tuned(2 * model->dim() + 2, fc, rng);
            SeededRng train_rng(cfg.seed + 3);
            FusionTrainReport report = fusion_train(tuned, ctx, train_rng);
            log_line("info", "fusion tuned: " + std::to_string(report.n_train_users) + " users, best epoch " +
                                 std::to_string(report.best_epoch) + ", skipped " +
                                 std::to_string(report.n_skipped));

            if (tf_final) {
                // retrain on every user for the tuned epoch count
                FusionConfig fin = fc;
                fin.holdout_fraction = 0.0f;
                fin.max_epochs = std::max<size_t>(report.best_epoch, 1);
                SeededRng rng2(cfg.seed + 2);
                FusionNet final_net(2 * model->dim() + 2, fin, rng2);
                SeededRng train_rng2(cfg.seed + 3);
                FusionTrainReport r2 = fusion_train(final_net, ctx, train_rng2);
                log_line("info", "fusion retrained on merged split: train loss " +
                                     std::to_string(r2.final_train_loss));
                save_fusion(tf_out, final_net);
            } else {
                save_fusion(tf_out, tuned);
            }
            log_line("info", "fusion checkpoint written to " + tf_out);
            return 0;
        }

        if (eval->parsed()) {
            Corpus corpus = load_corpus(ev_corpus);
            Split split = leave_one_out(corpus, ev_final);
            const EvalTarget target = ev_final ? EvalTarget::test : EvalTarget::validation;

            std::shared_ptr<UiModel> model;
            UserIndex index;
            std::unique_ptr<FusionNet> fusion;
            SccfContext ctx;
            Scorer scorer;
            if (ev_mode == "pop") {
                scorer = make_pop_scorer(corpus, split);
            } else if (ev_mode == "userknn") {
                scorer = make_userknn_scorer(corpus, split, cfg.uu_beta);
            } else if (ev_mode == "fism" || ev_mode == "sasrec") {
                model = load_ui_model(ev_model, cfg);
                scorer = make_ui_scorer(*model, corpus, split);
            } else if (ev_mode == "uu") {
                index = load_index(ev_index);
                scorer = make_uu_scorer(index, corpus, split, cfg.uu_beta);
            } else if (ev_mode == "sccf") {
                model = load_ui_model(ev_model, cfg);
                index = load_index(ev_index);
                fusion = std::make_unique<FusionNet>(load_fusion(ev_fusion, cfg.fusion_config()));
                ctx = SccfContext{model.get(), &index, &corpus, &split, cfg.fusion_n, cfg.uu_beta};
                scorer = make_sccf_scorer(*fusion, ctx);
            } else {
                throw std::runtime_error("unknown eval mode: " + ev_mode);
            }

            EvalReport report = evaluate(scorer, corpus, split, target);
            std::cout << eval_tsv(report);
            log_line("info", "evaluated " + std::to_string(report.n_evaluated) + " users");

            bool ok = true;
            for (const auto& expr : ev_asserts) {
                const AssertSpec spec = parse_assert(expr);
                const double got = spec.metric == "hr" ? report.hr.at(spec.k) : report.ndcg.at(spec.k);
                const bool pass = got >= spec.threshold;
                log_line(pass ? "info" : "error", "assert " + expr + (pass ? " passed" : " FAILED") +
                                                      " (got " + std::to_string(got) + ")");
                ok = ok && pass;
            }
            return ok ? 0 : 1;
        }

        if (bench->parsed()) {
            Corpus corpus = load_corpus(bn_corpus);
            Split split = leave_one_out(corpus);
            const size_t beta = bn_beta > 0 ? bn_beta : cfg.uu_beta;
            if (bn_method == "sccf") {
                auto model = load_ui_model(bn_model, cfg);
                UserIndex index = load_index(bn_index);
                LatencyReport r = latency_bench(BenchMethod::sccf, model.get(), &index, corpus, split, beta,
                                                bn_trials);
                std::cout << latency_tsv("sccf", r);
            } else if (bn_method == "userknn") {
                LatencyReport r =
                    latency_bench(BenchMethod::userknn, nullptr, nullptr, corpus, split, beta, bn_trials);
                std::cout << latency_tsv("userknn", r);
            } else {
                throw std::runtime_error("unknown bench method: " + bn_method);
            }
            return 0;
        }

        if (serve->parsed()) {
            Corpus corpus = load_corpus(sv_corpus);
            Split split = leave_one_out(corpus, true);  // serve on the merged split
            auto model = load_ui_model(sv_model, cfg);
            UserIndex index = load_index(sv_index);
            auto fusion = std::make_shared<FusionNet>(load_fusion(sv_fusion, cfg.fusion_config()));
            ServeState state(model, fusion, std::move(corpus), split, std::move(index), cfg.fusion_n,
                             cfg.uu_beta, sv_flush);
            if (sv_port > 0) {
                serve_tcp(state, sv_port);
            }
            serve_loop(state, std::cin, std::cout);
            return 0;
        }

        if (sweep_cmd->parsed()) {
            if (!sw_model.empty()) cfg.apply("model", sw_model);
            if (sw_epochs > 0) cfg.train_epochs = sw_epochs;
            // grid: "fism.dim=16,32;uu.beta=50,100" -> cartesian product
            std::vector<std::pair<std::string, std::vector<std::string>>> axes;
            std::stringstream gs(sw_grid);
            std::string axis;
            while (std::getline(gs, axis, ';')) {
                const auto eq = axis.find('=');
                if (eq == std::string::npos) throw std::runtime_error("bad grid axis: " + axis);
                std::vector<std::string> values;
                std::stringstream vs(axis.substr(eq + 1));
                std::string v;
                while (std::getline(vs, v, ',')) values.push_back(v);
                axes.emplace_back(axis.substr(0, eq), values);
            }
            std::vector<std::string> cells{""};
            for (const auto& [key, values] : axes) {
                std::vector<std::string> next;
                for (const auto& base : cells) {
                    for (const auto& v : values) next.push_back(base.empty() ? key + "=" + v : base + ";" + key + "=" + v);
                }
                cells = std::move(next);
            }

            Corpus corpus = load_corpus(sw_corpus);
            auto runner = [&](const std::string& cell) {
                EngineConfig cell_cfg = cfg;
                std::stringstream cs(cell);
                std::string kv;
                while (std::getline(cs, kv, ';')) {
                    const auto eq = kv.find('=');
                    cell_cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
                }
                Split split = leave_one_out(corpus);
                SeededRng rng(cell_cfg.seed);
                SeededRng train_rng(cell_cfg.seed + 1);
                std::shared_ptr<UiModel> model;
                if (cell_cfg.model == "fism") {
                    auto m = std::make_shared<FismModel>(
                        corpus.n_items(), cell_cfg.fism_config(cell_cfg.train_epochs * count_trainable(corpus, split)), rng);
                    for (size_t e = 0; e < cell_cfg.train_epochs; ++e) m->train_epoch(corpus, split, train_rng);
                    model = m;
                } else {
                    const size_t batches =
                        (count_trainable(corpus, split) + cell_cfg.sasrec.batch_size - 1) / cell_cfg.sasrec.batch_size;
                    auto m = std::make_shared<SasrecModel>(
                        corpus.n_items(), cell_cfg.sasrec_config(cell_cfg.train_epochs * batches), rng);
                    for (size_t e = 0; e < cell_cfg.train_epochs; ++e) m->train_epoch(corpus, split, train_rng);
                    model = m;
                }
                EvalReport report = evaluate(make_ui_scorer(*model, corpus, split), corpus, split,
                                             EvalTarget::validation);
                char buf[128];
                std::snprintf(buf, sizeof(buf), "%.4f\t%.4f", report.hr.at(50), report.ndcg.at(50));
                return std::string(buf);
            };

            std::cout << "cell\thr@50\tndcg@50\n";
            for (const auto& r : run_sweep(cells, runner)) {
                if (r.ok) {
                    std::cout << r.cell << "\t" << r.output << "\n";
                } else {
                    std::cout << r.cell << "\tERROR\t" << r.output << "\n";
                }
            }
            return 0;
        }

        if (analyze->parsed()) {
            Corpus corpus = load_corpus(an_corpus);
            Split split = leave_one_out(corpus, an_final);
            auto model = load_ui_model(an_model, cfg);
            UserIndex index = load_index(an_index);
            const EvalTarget target = an_final ? EvalTarget::test : EvalTarget::validation;
            SimilarityHistogram h =
                similarity_distribution(*model, index, corpus, split, target, cfg.fusion_n, cfg.uu_beta);
            std::cout << similarity_tsv(h);
            return 0;
        }
    } catch (const std::exception& e) {
        log_line("error", e.what());
        return 1;
    }
    return 0;
}
