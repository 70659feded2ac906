#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cli.hpp"
#include "elegant/closedset.hpp"
#include "elegant/eclipse.hpp"
#include "elegant/errors.hpp"
#include "elegant/prompts.hpp"
#include "elegant/scene.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using namespace elegant;

BBox to_box(const std::array<double, 4>& b) { return BBox::make(b[0], b[1], b[2], b[3]); }

// Structured arguments cross the boundary as JSON text; the Python layer
// does the dumps/loads.
std::vector<closedset::Prediction> predictions_from_json(const std::string& text) {
  std::vector<closedset::Prediction> out;
  for (const auto& p : json::parse(text)) {
    closedset::Prediction pred{p.at("subject").get<Entity>(), normalize_label(p.at("predicate").get<std::string>()),
                               p.at("object").get<Entity>()};
    pred.status = triplet_status_from_string(p.value("status", "verified_direct"));
    pred.confidence = p.value("confidence", 1.0);
    out.push_back(std::move(pred));
  }
  return out;
}

std::vector<closedset::GroundTruthTriplet> gts_from_json(const std::string& text) {
  std::vector<closedset::GroundTruthTriplet> out;
  for (const auto& g : json::parse(text)) {
    out.push_back({g.at("subject").get<Entity>(), normalize_label(g.at("predicate").get<std::string>()),
                   g.at("object").get<Entity>()});
  }
  return out;
}

closedset::MatchMode match_mode(const std::string& name, double iou_threshold) {
  if (name == "gt_boxes") return closedset::MatchMode::gt_boxes();
  if (name == "detected") return closedset::MatchMode::detected(iou_threshold);
  throw ValidationError("unknown match mode '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the elegant scene-graph engine";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<CannotCalibrateError>(m, "CannotCalibrateError", PyExc_ValueError);
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<json::exception>(m, "JsonError", PyExc_ValueError);

  m.def("penalty", [](double x, double m_star, double alpha) {
    return eclipse::penalty(x, eclipse::PenaltyParams::make(m_star, alpha));
  }, py::arg("x"), py::arg("m_star"), py::arg("alpha"));

  m.def("iou", [](const std::array<double, 4>& a, const std::array<double, 4>& b) {
    return iou(to_box(a), to_box(b));
  }, py::arg("a"), py::arg("b"));

  m.def("clip_score", [](std::vector<double> image, std::vector<double> text) {
    return eclipse::clip_score({std::move(image)}, {std::move(text)});
  }, py::arg("image_embedding"), py::arg("text_embedding"));

  m.def("triplet_caption", [](const std::string& s, const std::string& r, const std::string& o) {
    return eclipse::triplet_caption({s, r, o});
  });

  m.def("dataset_eclipse_json", [](const std::string& graphs_json, const std::vector<std::vector<double>>& scores,
                                   double alpha, const std::string& aggregation) {
    const auto graphs = json::parse(graphs_json).get<std::vector<LocalSceneGraph>>();
    if (aggregation != "per_local" && aggregation != "per_image") {
      throw ValidationError("unknown aggregation '" + aggregation + "'");
    }
    const auto agg = aggregation == "per_image" ? eclipse::Aggregation::per_image : eclipse::Aggregation::per_local;
    return eclipse::to_json(eclipse::dataset_eclipse(graphs, scores, alpha, agg)).dump();
  });

  m.def("recall_at_k_json", [](const std::string& preds, const std::string& gts, std::size_t k,
                               const std::string& mode, double iou_threshold) {
    const auto ranked = closedset::rank_predictions(predictions_from_json(preds));
    return closedset::recall_at_k(ranked, gts_from_json(gts), k, match_mode(mode, iou_threshold));
  });

  m.def("mean_recall_at_k_json", [](const std::string& preds, const std::string& gts, std::size_t k,
                                    const std::string& vocab, const std::string& mode, double iou_threshold) {
    const auto ranked = closedset::rank_predictions(predictions_from_json(preds));
    return closedset::mean_recall_at_k(ranked, gts_from_json(gts), k, closedset::RelationVocab::builtin(vocab),
                                       match_mode(mode, iou_threshold));
  });

  m.def("parse_triplets_json", [](const std::string& completion, const std::string& subject,
                                  const std::string& objects) {
    const auto s = json::parse(subject).get<Entity>();
    const auto objs = json::parse(objects).get<std::vector<Entity>>();
    const auto r = prompts::parse_triplets(completion, s, objs);
    json out = {{"accepted", r.accepted}, {"skipped", json::array()}};
    for (const auto& f : r.skipped) {
      out["skipped"].push_back({{"fragment", f.fragment}, {"reason", prompts::to_string(f.reason)}});
    }
    return out.dump();
  });

  m.def("render_thinker_open", [](const std::string& subject, const std::vector<std::string>& labels) {
    return prompts::render_thinker_open(subject, labels);
  });
  m.def("render_thinker_closed", [](const std::string& subject, const std::vector<std::string>& labels,
                                    const std::string& vocab) {
    return prompts::render_thinker_closed(subject, labels, closedset::RelationVocab::builtin(vocab).predicates(),
                                          vocab);
  });
  m.def("render_verify", [](const std::string& s, const std::string& r, const std::string& o) {
    return prompts::render_verify({s, r, o});
  });
  m.def("render_rationale", [](const std::string& s, const std::string& o) {
    return prompts::render_rationale(s, o);
  });
  m.def("render_calibration", [](const std::string& rationale, const std::string& s, const std::string& r,
                                 const std::string& o) {
    return prompts::render_calibration(rationale, {s, r, o});
  });
  m.def("render_vqa", [](const std::string& context, const std::string& question) {
    return prompts::render_vqa(context, question);
  });

  m.def("run_cli", [](std::vector<std::string> argv, const std::map<std::string, std::string>& env) {
    argv.insert(argv.begin(), "elegant");
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run_cli(argv, env, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("argv"), py::arg("env") = std::map<std::string, std::string>{});
}
