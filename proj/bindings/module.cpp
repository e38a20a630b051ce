#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sccf/checkpoint.hpp"
#include "sccf/engine.hpp"

namespace py = pybind11;
using namespace sccf;

namespace {

py::array_t<float> tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

Tensor numpy_to_tensor(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    std::vector<size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<size_t>(a.shape(i));
    Tensor t(std::move(shape));
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

std::vector<Interaction> events_from_tuples(
    const std::vector<std::tuple<std::string, std::string, double, int64_t>>& rows) {
    std::vector<Interaction> out;
    out.reserve(rows.size());
    for (const auto& [u, i, v, ts] : rows) out.push_back({u, i, v, ts});
    return out;
}

py::dict report_to_dict(const EvalReport& r) {
    py::dict hr, ndcg;
    for (size_t k : r.ks) {
        hr[py::int_(k)] = r.hr.at(k);
        ndcg[py::int_(k)] = r.ndcg.at(k);
    }
    py::dict out;
    out["hr"] = hr;
    out["ndcg"] = ndcg;
    out["n_evaluated"] = r.n_evaluated;
    return out;
}

py::list candidates_to_list(const ScoredCandidateList& list) {
    py::list out;
    for (const auto& c : list) out.append(py::make_tuple(c.item, c.score));
    return out;
}

}  // namespace

PYBIND11_MODULE(_sccf, m) {
    m.doc() = "SCCF candidate-generation engine: FISM/SASRec user-item models, a "
              "real-time user-neighborhood component, and the integrating network";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ParseError>(m, "ParseError");

    // ---------------- numerics ----------------
    py::class_<SeededRng>(m, "SeededRng")
        .def(py::init<uint64_t>(), py::arg("seed"))
        .def("uniform01", &SeededRng::uniform01)
        .def("normal", &SeededRng::normal)
        .def("uniform_below", &SeededRng::uniform_below);

    m.def(
        "truncated_normal",
        [](const std::vector<size_t>& shape, float low, float high, uint64_t seed) {
            SeededRng rng(seed);
            return tensor_to_numpy(truncated_normal_init(shape, low, high, rng));
        },
        py::arg("shape"), py::arg("low") = -0.01f, py::arg("high") = 0.01f, py::arg("seed") = 42);
    m.def("softmax_rows",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
              return tensor_to_numpy(softmax_rows(numpy_to_tensor(x)));
          });
    m.def(
        "layer_norm",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& gain,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& bias, float eps) {
            return tensor_to_numpy(layer_norm(numpy_to_tensor(x), numpy_to_tensor(gain), numpy_to_tensor(bias), eps));
        },
        py::arg("x"), py::arg("gain"), py::arg("bias"), py::arg("eps") = 1e-8f);

    // ---------------- corpus ----------------
    py::class_<CorpusStats>(m, "CorpusStats")
        .def_readonly("n_users", &CorpusStats::n_users)
        .def_readonly("n_items", &CorpusStats::n_items)
        .def_readonly("n_actions", &CorpusStats::n_actions)
        .def_readonly("avg_length", &CorpusStats::avg_length)
        .def_readonly("density", &CorpusStats::density);

    py::class_<Corpus>(m, "Corpus")
        .def_property_readonly("n_users", &Corpus::n_users)
        .def_property_readonly("n_items", &Corpus::n_items)
        .def_readonly("user_ids", &Corpus::user_ids)
        .def_readonly("item_ids", &Corpus::item_ids)
        .def("sequence", [](const Corpus& c, uint32_t u) { return c.sequences.at(u); })
        .def("stats", &Corpus::stats);

    py::class_<Split>(m, "Split")
        .def_readonly("train_len", &Split::train_len)
        .def_readonly("val_item", &Split::val_item)
        .def_readonly("test_item", &Split::test_item)
        .def_readonly("n_excluded", &Split::n_excluded)
        .def_readonly("final_mode", &Split::final_mode);

    m.def("load_movielens", &load_movielens, py::arg("path"));
    m.def("load_amazon", &load_amazon, py::arg("path"));
    m.def(
        "preprocess",
        [](const std::vector<std::tuple<std::string, std::string, double, int64_t>>& rows, size_t k) {
            return preprocess(events_from_tuples(rows), k);
        },
        py::arg("events"), py::arg("k") = 5,
        "Events are (user, item, value, timestamp) tuples; applies binarization, the iterative "
        "k-core filter, the extra user pass, and chronological ordering.");
    m.def(
        "preprocess_file",
        [](const std::string& path, const std::string& kind, size_t k) {
            return preprocess(kind == "amazon" ? load_amazon(path) : load_movielens(path), k);
        },
        py::arg("path"), py::arg("kind") = "ml-1m", py::arg("k") = 5);
    m.def("leave_one_out", &leave_one_out, py::arg("corpus"), py::arg("final_mode") = false);
    m.def("save_corpus", &save_corpus);
    m.def("load_corpus", &load_corpus);

    // ---------------- models ----------------
    py::class_<FismModel, std::shared_ptr<FismModel>>(m, "FismModel")
        .def(py::init([](size_t n_items, size_t dim, float alpha, size_t window, uint64_t seed) {
                 FismConfig cfg;
                 cfg.dim = dim;
                 cfg.alpha = alpha;
                 cfg.window = window;
                 SeededRng rng(seed);
                 return FismModel(n_items, cfg, rng);
             }),
             py::arg("n_items"), py::arg("dim") = 128, py::arg("alpha") = 0.5f, py::arg("window") = 15,
             py::arg("seed") = 42)
        .def_property_readonly("n_items", &FismModel::n_items)
        .def_property_readonly("dim", &FismModel::dim)
        .def("user_repr",
             [](const FismModel& model, const std::vector<uint32_t>& history, std::optional<uint32_t> exclude,
                std::optional<size_t> window) { return tensor_to_numpy(model.user_repr(history, exclude, window)); },
             py::arg("history"), py::arg("exclude") = std::nullopt, py::arg("window") = std::nullopt)
        .def("score_all",
             [](const FismModel& model, const std::vector<uint32_t>& history) {
                 return model.score_all(model.serving_repr(history));
             })
        .def("train_epoch",
             [](FismModel& model, const Corpus& corpus, const Split& split, uint64_t seed, float lr,
                size_t neg_per_pos) {
                 model.mutable_config().neg_per_pos = neg_per_pos;
                 model.mutable_config().adam.base_lr = lr;
                 SeededRng rng(seed);
                 return model.train_epoch(corpus, split, rng);
             },
             py::arg("corpus"), py::arg("split"), py::arg("seed"), py::arg("lr") = 0.001f,
             py::arg("neg_per_pos") = 1)
        .def("candidates",
             [](const FismModel& model, const Corpus& corpus, const Split& split, uint32_t user, size_t n) {
                 return candidates_to_list(model.candidates(corpus, split, user, n));
             })
        .def("save", [](const FismModel& model, const std::string& path) { save_checkpoint(path, model.store()); })
        .def_static("load", [](const std::string& path, size_t window) {
            FismConfig cfg;
            cfg.window = window;
            return FismModel(load_checkpoint(path), cfg);
        }, py::arg("path"), py::arg("window") = 15);

    py::class_<SasrecModel, std::shared_ptr<SasrecModel>>(m, "SasrecModel")
        .def(py::init([](size_t n_items, size_t dim, size_t layers, size_t heads, size_t max_len,
                         float dropout, uint64_t seed) {
                 SasrecConfig cfg;
                 cfg.dim = dim;
                 cfg.n_layers = layers;
                 cfg.n_heads = heads;
                 cfg.max_len = max_len;
                 cfg.dropout_rate = dropout;
                 SeededRng rng(seed);
                 return SasrecModel(n_items, cfg, rng);
             }),
             py::arg("n_items"), py::arg("dim") = 64, py::arg("layers") = 2, py::arg("heads") = 1,
             py::arg("max_len") = 200, py::arg("dropout") = 0.2f, py::arg("seed") = 42)
        .def_property_readonly("n_items", &SasrecModel::n_items)
        .def_property_readonly("dim", &SasrecModel::dim)
        .def("user_repr",
             [](const SasrecModel& model, const std::vector<uint32_t>& seq) {
                 return tensor_to_numpy(model.user_repr(seq));
             })
        .def("score_all",
             [](const SasrecModel& model, const std::vector<uint32_t>& seq) {
                 return model.score_all(model.user_repr(seq));
             })
        .def("train_epoch",
             [](SasrecModel& model, const Corpus& corpus, const Split& split, uint64_t seed, float lr) {
                 model.mutable_config().adam.base_lr = lr;
                 SeededRng rng(seed);
                 return model.train_epoch(corpus, split, rng);
             },
             py::arg("corpus"), py::arg("split"), py::arg("seed"), py::arg("lr") = 0.001f)
        .def("candidates",
             [](const SasrecModel& model, const Corpus& corpus, const Split& split, uint32_t user, size_t n) {
                 return candidates_to_list(model.candidates(corpus, split, user, n));
             })
        .def("save", [](const SasrecModel& model, const std::string& path) { save_checkpoint(path, model.store()); })
        .def_static("load", [](const std::string& path) {
            return SasrecModel(load_checkpoint(path), SasrecConfig{});
        });

    // ---------------- neighborhood ----------------
    py::class_<UserIndex>(m, "UserIndex")
        .def_property_readonly("n_users", &UserIndex::n_users)
        .def_property_readonly("dim", &UserIndex::dim)
        .def_readonly("window", &UserIndex::window)
        .def_readonly("n_warnings", &UserIndex::n_warnings)
        .def("rep", [](const UserIndex& idx, uint32_t u) {
            py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(idx.dim())});
            std::copy(idx.reps.row_ptr(u), idx.reps.row_ptr(u) + idx.dim(), out.mutable_data());
            return out;
        })
        .def("recency", [](const UserIndex& idx, uint32_t u) { return idx.recency.at(u); });

    m.def(
        "build_user_index",
        [](const py::object& model, const Corpus& corpus, const Split& split, size_t window) {
            if (py::isinstance<FismModel>(model))
                return build_user_index(model.cast<const FismModel&>(), corpus, split, window);
            return build_user_index(model.cast<const SasrecModel&>(), corpus, split, window);
        },
        py::arg("model"), py::arg("corpus"), py::arg("split"), py::arg("window") = 15);
    m.def("cosine_sim", &cosine_sim);
    m.def(
        "top_beta_neighbors",
        [](const UserIndex& index, uint32_t u, size_t beta) {
            py::list out;
            for (const auto& nb : top_beta_neighbors(index, u, beta)) out.append(py::make_tuple(nb.user, nb.sim));
            return out;
        },
        py::arg("index"), py::arg("user"), py::arg("beta"));
    m.def(
        "uu_candidates",
        [](const UserIndex& index, const Corpus& corpus, const Split& split, uint32_t u, size_t beta, size_t n) {
            return candidates_to_list(uu_candidates(index, corpus, split, u, beta, n));
        });
    m.def("userknn_sim", &userknn_sim);
    m.def("pop_candidates", [](const Corpus& corpus, const Split& split, uint32_t u, size_t n) {
        return candidates_to_list(pop_candidates(corpus, split, u, n));
    });
    m.def("save_index", &save_index);
    m.def("load_index", &load_index);

    // ---------------- fusion ----------------
    py::class_<FusionNet, std::shared_ptr<FusionNet>>(m, "FusionNet")
        .def(py::init([](size_t input_dim, const std::vector<size_t>& hidden, uint64_t seed) {
                 FusionConfig cfg;
                 cfg.hidden = hidden;
                 SeededRng rng(seed);
                 return FusionNet(input_dim, cfg, rng);
             }),
             py::arg("input_dim"), py::arg("hidden") = std::vector<size_t>{64, 32}, py::arg("seed") = 42)
        .def_property_readonly("input_dim", &FusionNet::input_dim)
        .def("forward",
             [](const FusionNet& net, const std::vector<float>& input) { return net.forward(input); })
        .def("save", [](const FusionNet& net, const std::string& path) { save_fusion(path, net); })
        .def_static("load", [](const std::string& path) { return load_fusion(path, FusionConfig{}); });

    m.def(
        "fusion_train",
        [](FusionNet& net, const py::object& model, const UserIndex& index, const Corpus& corpus,
           const Split& split, size_t list_n, size_t beta, size_t max_epochs, float lr, float holdout,
           uint64_t seed) {
            const UiModel* ui = py::isinstance<FismModel>(model)
                                    ? static_cast<const UiModel*>(&model.cast<const FismModel&>())
                                    : static_cast<const UiModel*>(&model.cast<const SasrecModel&>());
            SccfContext ctx{ui, &index, &corpus, &split, list_n, beta};
            FusionConfig cfg = net.config();
            cfg.list_n = list_n;
            cfg.beta = beta;
            cfg.max_epochs = max_epochs;
            cfg.adam.base_lr = lr;
            cfg.holdout_fraction = holdout;
            FusionNet tuned(net.store(), cfg);
            SeededRng rng(seed);
            const FusionTrainReport r = fusion_train(tuned, ctx, rng);
            net.store() = tuned.store();
            py::dict out;
            out["n_train_users"] = r.n_train_users;
            out["n_holdout_users"] = r.n_holdout_users;
            out["n_skipped"] = r.n_skipped;
            out["best_epoch"] = r.best_epoch;
            out["final_train_loss"] = r.final_train_loss;
            return out;
        },
        py::arg("net"), py::arg("model"), py::arg("index"), py::arg("corpus"), py::arg("split"),
        py::arg("list_n") = 100, py::arg("beta") = 100, py::arg("max_epochs") = 500, py::arg("lr") = 0.001f,
        py::arg("holdout") = 0.1f, py::arg("seed") = 42);

    m.def(
        "sccf_candidates",
        [](const FusionNet& net, const py::object& model, const UserIndex& index, const Corpus& corpus,
           const Split& split, uint32_t user, size_t n, size_t list_n, size_t beta) {
            const UiModel* ui = py::isinstance<FismModel>(model)
                                    ? static_cast<const UiModel*>(&model.cast<const FismModel&>())
                                    : static_cast<const UiModel*>(&model.cast<const SasrecModel&>());
            SccfContext ctx{ui, &index, &corpus, &split, list_n, beta};
            return candidates_to_list(sccf_candidates(net, ctx, user, n));
        },
        py::arg("net"), py::arg("model"), py::arg("index"), py::arg("corpus"), py::arg("split"),
        py::arg("user"), py::arg("n") = 100, py::arg("list_n") = 100, py::arg("beta") = 100);

    // ---------------- evaluation ----------------
    m.def(
        "evaluate_ui",
        [](const py::object& model, const Corpus& corpus, const Split& split, bool test_target) {
            const UiModel* ui = py::isinstance<FismModel>(model)
                                    ? static_cast<const UiModel*>(&model.cast<const FismModel&>())
                                    : static_cast<const UiModel*>(&model.cast<const SasrecModel&>());
            return report_to_dict(evaluate(make_ui_scorer(*ui, corpus, split), corpus, split,
                                           test_target ? EvalTarget::test : EvalTarget::validation));
        },
        py::arg("model"), py::arg("corpus"), py::arg("split"), py::arg("test_target") = false);
    m.def(
        "evaluate_sccf",
        [](const FusionNet& net, const py::object& model, const UserIndex& index, const Corpus& corpus,
           const Split& split, size_t list_n, size_t beta, bool test_target) {
            const UiModel* ui = py::isinstance<FismModel>(model)
                                    ? static_cast<const UiModel*>(&model.cast<const FismModel&>())
                                    : static_cast<const UiModel*>(&model.cast<const SasrecModel&>());
            SccfContext ctx{ui, &index, &corpus, &split, list_n, beta};
            return report_to_dict(evaluate(make_sccf_scorer(net, ctx), corpus, split,
                                           test_target ? EvalTarget::test : EvalTarget::validation));
        },
        py::arg("net"), py::arg("model"), py::arg("index"), py::arg("corpus"), py::arg("split"),
        py::arg("list_n") = 100, py::arg("beta") = 100, py::arg("test_target") = false);
    m.def("evaluate_pop", [](const Corpus& corpus, const Split& split) {
        return report_to_dict(evaluate(make_pop_scorer(corpus, split), corpus, split, EvalTarget::validation));
    });
    m.def(
        "latency_bench",
        [](const std::string& method, const py::object& model, const py::object& index, const Corpus& corpus,
           const Split& split, size_t beta, size_t trials) {
            LatencyReport r;
            if (method == "sccf") {
                const FismModel& fm = model.cast<const FismModel&>();
                const UserIndex& idx = index.cast<const UserIndex&>();
                r = latency_bench(BenchMethod::sccf, &fm, &idx, corpus, split, beta, trials);
            } else {
                r = latency_bench(BenchMethod::userknn, nullptr, nullptr, corpus, split, beta, trials);
            }
            py::dict out;
            out["infer_ms"] = r.infer_ms;
            out["identify_ms"] = r.identify_ms;
            out["total_ms"] = r.total_ms;
            return out;
        },
        py::arg("method"), py::arg("model"), py::arg("index"), py::arg("corpus"), py::arg("split"),
        py::arg("beta") = 100, py::arg("trials") = 200);

    // ---------------- serving ----------------
    py::class_<ServeState>(m, "ServeState")
        .def(py::init([](const py::object& model, const FusionNet& fusion, const Corpus& corpus,
                         const Split& split, const UserIndex& index, size_t list_n, size_t beta,
                         const std::string& flush_path) {
                 std::shared_ptr<const UiModel> ui;
                 if (py::isinstance<FismModel>(model)) {
                     ui = std::make_shared<FismModel>(model.cast<const FismModel&>());
                 } else {
                     ui = std::make_shared<SasrecModel>(model.cast<const SasrecModel&>());
                 }
                 auto net = std::make_shared<FusionNet>(fusion);
                 return ServeState(ui, net, corpus, split, index, list_n, beta, flush_path);
             }),
             py::arg("model"), py::arg("fusion"), py::arg("corpus"), py::arg("split"), py::arg("index"),
             py::arg("list_n") = 100, py::arg("beta") = 100, py::arg("flush_path") = "index.live.bin")
        .def("handle_line", &ServeState::handle_line);
}
