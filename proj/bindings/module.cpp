#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "embridge/experiment.hpp"
#include "embridge/metrics.hpp"
#include "embridge/serialize.hpp"
#include "embridge/verify.hpp"

namespace py = pybind11;

namespace eb = embridge;

namespace {

eb::ProxyAlignMode parse_mode(const std::string& mode) {
  if (mode == "osr") return eb::ProxyAlignMode::kOsr;
  if (mode == "direct") return eb::ProxyAlignMode::kDirect;
  throw eb::ConfigError("mode must be \"osr\" or \"direct\", got \"" + mode +
                        "\"");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "embedding-bridge core operations";

  py::register_exception<eb::Error>(m, "BridgeError");

  m.def(
      "normalize", [](const eb::Vec& v) { return eb::normalize(v); },
      py::arg("v"));
  m.def(
      "cosine_sim",
      [](const eb::Vec& a, const eb::Vec& b) { return eb::cosine_sim(a, b); },
      py::arg("a"), py::arg("b"));
  m.def(
      "project_orthogonal",
      [](const eb::Vec& x, const eb::Vec& v) {
        return eb::project_orthogonal(x, v);
      },
      py::arg("x"), py::arg("v"));

  m.def("info_nce", &eb::info_nce, py::arg("queries"), py::arg("keys"),
        py::arg("tau"));
  m.def(
      "info_nce_grad",
      [](const eb::Mat& q, const eb::Mat& k, double tau) {
        eb::Tape t;
        eb::Tape::NodeId qn = t.leaf(q, true);
        eb::Tape::NodeId kn = t.leaf(k, true);
        eb::Tape::NodeId loss = eb::info_nce_node(t, qn, kn, tau);
        t.backward(loss);
        return py::make_tuple(t.scalar(loss), eb::Mat(t.grad(qn)),
                              eb::Mat(t.grad(kn)));
      },
      py::arg("queries"), py::arg("keys"), py::arg("tau"),
      "Returns (loss, grad_queries, grad_keys).");

  m.def("align_part", &eb::align_part, py::arg("x"), py::arg("c"),
        py::arg("tau"));
  m.def("neg_part", &eb::neg_part, py::arg("x"), py::arg("keys"),
        py::arg("tau"));
  m.def(
      "anchor_direction",
      [](const eb::Vec& x, const eb::Vec& c, double tau,
         double eps_dir) -> py::object {
        std::optional<eb::Vec> d = eb::anchor_direction(x, c, tau, eps_dir);
        if (!d) return py::none();
        return py::cast(*d);
      },
      py::arg("x"), py::arg("c"), py::arg("tau"),
      py::arg("eps_dir") = eb::kEpsDir);

  m.def(
      "osr_loss",
      [](const eb::Mat& xb, const eb::Mat& anchors, const eb::Mat& proxies,
         double tau) {
        eb::OsrValue v = eb::osr_loss(xb, anchors, proxies, tau);
        py::dict d;
        d["loss"] = v.loss;
        d["skipped"] = v.skipped;
        return d;
      },
      py::arg("xb"), py::arg("anchors"), py::arg("proxies"), py::arg("tau"));

  m.def(
      "combined_loss",
      [](const eb::Mat& xb, const eb::Mat& anchors, const eb::Mat& proxies,
         double lambda, double tau, const std::string& mode) {
        eb::CombinedOptions opt;
        opt.tau = tau;
        opt.lambda = lambda;
        opt.mode = parse_mode(mode);
        eb::LossReport r =
            eb::combined_loss(xb, anchors, proxies, lambda, tau, &opt);
        py::dict d;
        d["total"] = r.total;
        d["infonce"] = r.infonce_component;
        d["osr"] = r.osr_component;
        d["per_sample_align"] = r.per_sample_align;
        d["per_sample_neg"] = r.per_sample_neg;
        d["skipped"] = r.skipped_samples;
        return d;
      },
      py::arg("xb"), py::arg("anchors"), py::arg("proxies"),
      py::arg("lambda_"), py::arg("tau"), py::arg("mode") = "osr");

  m.def(
      "lambda_bound",
      [](const eb::Vec& c_bar, const eb::Vec& g_T) {
        eb::LambdaBound b = eb::lambda_bound(c_bar, g_T);
        py::dict d;
        d["value"] = b.value;
        d["degenerate_direction"] = b.degenerate_direction;
        d["infinite"] = b.infinite;
        return d;
      },
      py::arg("c_bar"), py::arg("g_T"));

  m.def(
      "recall_at_k",
      [](const eb::Mat& queries, const eb::Mat& gallery,
         const std::vector<int>& truth, const std::vector<int>& ks) {
        eb::RetrievalResult r = eb::recall_at_k(queries, gallery, truth, ks);
        py::dict d;
        for (size_t i = 0; i < r.ks.size(); ++i)
          d[py::int_(r.ks[i])] = r.recall[i];
        return d;
      },
      py::arg("queries"), py::arg("gallery"), py::arg("truth"), py::arg("ks"));
  m.def("top1_zero_shot", &eb::top1_zero_shot, py::arg("queries"),
        py::arg("prototypes"), py::arg("labels"));

  m.def(
      "verify_lemma",
      [](const std::vector<int>& dims, int trials_per_dim, uint64_t seed) {
        eb::LemmaReport r = eb::verify_lemma1(dims, trials_per_dim, seed);
        py::dict d;
        d["trials"] = r.probes.size();
        d["worst_margin"] = r.worst_margin;
        d["all_satisfied"] = r.all_satisfied;
        d["contraction_ok"] = r.contraction_ok;
        return d;
      },
      py::arg("dims"), py::arg("trials_per_dim"), py::arg("seed"));

  m.def("default_config",
        []() { return eb::config_to_json(eb::default_config()); });
  m.def(
      "world_summary",
      [](const std::string& config_json) {
        eb::ExperimentConfig cfg = eb::parse_config(config_json);
        eb::World w = eb::generate_world(cfg.world);
        py::dict d;
        d["hash"] = eb::world_hash(w);
        d["intra_class_cos"] = w.intra_class_cos;
        d["inter_class_cos"] = w.inter_class_cos;
        d["train_samples"] = w.train_ca.size();
        d["eval_samples"] = w.eval_set.size();
        return d;
      },
      py::arg("config_json"));
  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        eb::ExperimentConfig cfg = eb::parse_config(config_json);
        if (cfg.mode == "train") return eb::run_train(cfg);
        if (cfg.mode == "eval") return eb::run_eval(cfg);
        eb::run_experiment(cfg);
        return std::string();
      },
      py::arg("config_json"),
      "Runs one experiment; returns the metrics JSON for train/eval modes.");
}
