#include "elegant/closedset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "elegant/errors.hpp"
#include "elegant/numeric.hpp"
#include "prompt_assets.hpp"

namespace elegant::closedset {

RelationVocab RelationVocab::make(std::string id, std::span<const std::string> predicates) {
  if (predicates.empty()) throw ValidationError("vocab " + id + ": empty");
  RelationVocab v;
  v.id_ = std::move(id);
  std::set<std::string> seen;
  for (const auto& p : predicates) {
    auto norm = normalize_label(p);
    if (norm.empty()) throw ValidationError("vocab " + v.id_ + ": empty predicate");
    if (!seen.insert(norm).second) {
      throw ValidationError("vocab " + v.id_ + ": duplicate predicate '" + norm + "'");
    }
    v.predicates_.push_back(std::move(norm));
  }
  return v;
}

namespace {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!normalize_label(line).empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

const RelationVocab& RelationVocab::builtin(std::string_view id) {
  static const std::map<std::string, RelationVocab, std::less<>> kVocabs = [] {
    std::map<std::string, RelationVocab, std::less<>> out;
    for (const auto& [name, text] : assets::vocabularies()) {
      out.emplace(std::string(name), make(std::string(name), split_lines(text)));
    }
    return out;
  }();
  auto it = kVocabs.find(id);
  if (it == kVocabs.end()) {
    throw ValidationError("unknown vocabulary '" + std::string(id) + "'");
  }
  return it->second;
}

RelationVocab RelationVocab::from_file(const std::filesystem::path& path, std::string id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return make(std::move(id), split_lines(buf.str()));
}

bool RelationVocab::contains(std::string_view predicate) const {
  const auto norm = normalize_label(predicate);
  return std::find(predicates_.begin(), predicates_.end(), norm) != predicates_.end();
}

std::vector<Prediction> predictions_from(std::span<const LocalSceneGraph> graphs,
                                         double fallback_confidence) {
  std::vector<Prediction> out;
  for (const auto& g : graphs) {
    for (const auto& r : g.relations) {
      if (!is_verified(r.status)) continue;
      const Entity* obj = g.find_object(r.object_id);
      if (obj == nullptr) throw ValidationError("relation with unresolved object");
      out.push_back({g.subject, r.predicate, *obj, r.status,
                     r.confidence.value_or(fallback_confidence)});
    }
  }
  return out;
}

std::vector<Prediction> rank_predictions(std::vector<Prediction> predictions) {
  auto status_rank = [](TripletStatus s) {
    return s == TripletStatus::verified_direct ? 0 : s == TripletStatus::verified_coca ? 1 : 2;
  };
  std::stable_sort(predictions.begin(), predictions.end(),
                   [&](const Prediction& a, const Prediction& b) {
                     if (a.confidence != b.confidence) return a.confidence > b.confidence;
                     return std::tuple(status_rank(a.status), a.subject.id, a.predicate,
                                       a.object.id) <
                            std::tuple(status_rank(b.status), b.subject.id, b.predicate,
                                       b.object.id);
                   });
  return predictions;
}

bool match(const Prediction& pred, const GroundTruthTriplet& gt, const MatchMode& mode) {
  if (pred.predicate != gt.predicate) return false;
  if (mode.kind == MatchMode::Kind::gt_boxes) {
    return pred.subject.id == gt.subject.id && pred.object.id == gt.object.id;
  }
  return pred.subject.label == gt.subject.label && pred.object.label == gt.object.label &&
         iou(pred.subject.bbox, gt.subject.bbox) >= mode.iou_threshold &&
         iou(pred.object.bbox, gt.object.bbox) >= mode.iou_threshold;
}

namespace {

// Size of a maximum one-to-one matching between the top-K predictions and
// the GTs (Kuhn's augmenting paths; instances are small).
std::size_t max_matches(std::span<const Prediction> ranked,
                        std::span<const GroundTruthTriplet> gts, std::size_t k,
                        const MatchMode& mode,
                        const std::string* only_predicate = nullptr) {
  const std::size_t top = std::min(k, ranked.size());
  std::vector<std::vector<std::size_t>> adj(top);
  for (std::size_t i = 0; i < top; ++i) {
    if (only_predicate && ranked[i].predicate != *only_predicate) continue;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (match(ranked[i], gts[g], mode)) adj[i].push_back(g);
    }
  }
  constexpr std::size_t kFree = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(gts.size(), kFree);
  std::vector<char> seen;
  std::function<bool(std::size_t)> augment = [&](std::size_t i) {
    for (std::size_t g : adj[i]) {
      if (seen[g]) continue;
      seen[g] = 1;
      if (owner[g] == kFree || augment(owner[g])) {
        owner[g] = i;
        return true;
      }
    }
    return false;
  };
  std::size_t matched = 0;
  for (std::size_t i = 0; i < top; ++i) {
    if (adj[i].empty()) continue;
    seen.assign(gts.size(), 0);
    if (augment(i)) ++matched;
  }
  return matched;
}

// Per-predicate recall for one image, keyed by predicate.
std::map<std::string, double> per_category_recall(std::span<const Prediction> ranked,
                                                  std::span<const GroundTruthTriplet> gts,
                                                  std::size_t k,
                                                  const RelationVocab& vocab,
                                                  const MatchMode& mode) {
  std::map<std::string, double> out;
  for (const auto& predicate : vocab.predicates()) {
    std::vector<GroundTruthTriplet> subset;
    for (const auto& gt : gts) {
      if (gt.predicate == predicate) subset.push_back(gt);
    }
    if (subset.empty()) continue;
    const auto hits = max_matches(ranked, subset, k, mode, &predicate);
    out[predicate] = 100.0 * static_cast<double>(hits) / static_cast<double>(subset.size());
  }
  return out;
}

}  // namespace

std::optional<double> recall_at_k(std::span<const Prediction> ranked,
                                  std::span<const GroundTruthTriplet> gts, std::size_t k,
                                  const MatchMode& mode) {
  if (k == 0) throw ValidationError("recall_at_k: K must be >= 1");
  if (gts.empty()) return std::nullopt;
  const auto hits = max_matches(ranked, gts, k, mode);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(gts.size());
}

std::optional<double> mean_recall_at_k(std::span<const Prediction> ranked,
                                       std::span<const GroundTruthTriplet> gts,
                                       std::size_t k, const RelationVocab& vocab,
                                       const MatchMode& mode) {
  if (k == 0) throw ValidationError("mean_recall_at_k: K must be >= 1");
  const auto per_cat = per_category_recall(ranked, gts, k, vocab, mode);
  if (per_cat.empty()) return std::nullopt;
  CompensatedSum sum;
  for (const auto& [pred, r] : per_cat) sum.add(r);
  return sum.value() / static_cast<double>(per_cat.size());
}

DiversityStats diversity_stats(std::span<const Prediction> predictions) {
  std::set<std::string> entities;
  std::set<std::string> relations;
  std::set<std::tuple<std::string, std::string, std::string>> triplets;
  for (const auto& p : predictions) {
    entities.insert(p.subject.label);
    entities.insert(p.object.label);
    relations.insert(p.predicate);
    triplets.emplace(p.subject.label, p.predicate, p.object.label);
  }
  return {entities.size(), relations.size(), triplets.size()};
}

RecallReport evaluate(std::span<const ImageEval> images, std::span<const std::size_t> ks,
                      const RelationVocab& vocab, const MatchMode& mode) {
  RecallReport report;
  report.vocab_id = vocab.id();
  report.images = images.size();

  std::vector<std::vector<Prediction>> ranked;
  ranked.reserve(images.size());
  std::vector<Prediction> all_predictions;
  for (const auto& img : images) {
    for (const auto& gt : img.gts) {
      if (!vocab.contains(gt.predicate)) {
        throw ValidationError("image " + img.image_id + ": ground-truth predicate '" +
                              gt.predicate + "' not in vocabulary " + vocab.id());
      }
    }
    if (!img.gts.empty()) ++report.images_with_gt;
    ranked.push_back(rank_predictions(img.predictions));
    all_predictions.insert(all_predictions.end(), img.predictions.begin(),
                           img.predictions.end());
  }
  report.diversity = diversity_stats(all_predictions);

  for (const std::size_t k : ks) {
    RecallRow row{k, std::nullopt, std::nullopt};
    CompensatedSum recall_sum;
    std::size_t recall_n = 0;
    std::map<std::string, std::pair<CompensatedSum, std::size_t>> per_cat;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (auto r = recall_at_k(ranked[i], images[i].gts, k, mode)) {
        recall_sum.add(*r);
        ++recall_n;
      }
      for (const auto& [pred, r] : per_category_recall(ranked[i], images[i].gts, k, vocab, mode)) {
        auto& [sum, n] = per_cat[pred];
        sum.add(r);
        ++n;
      }
    }
    if (recall_n > 0) row.recall = recall_sum.value() / static_cast<double>(recall_n);
    if (!per_cat.empty()) {
      CompensatedSum mean_sum;
      for (const auto& [pred, acc] : per_cat) {
        mean_sum.add(acc.first.value() / static_cast<double>(acc.second));
      }
      row.mean_recall = mean_sum.value() / static_cast<double>(per_cat.size());
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string format_percent(std::optional<double> value) {
  if (!value) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *value);
  return buf;
}

nlohmann::json to_json(const RecallReport& report) {
  auto opt = [](std::optional<double> v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"k", r.k}, {"recall", opt(r.recall)}, {"mean_recall", opt(r.mean_recall)}});
  }
  return {{"vocab_id", report.vocab_id},
          {"images", report.images},
          {"images_with_gt", report.images_with_gt},
          {"rows", std::move(rows)},
          {"diversity",
           {{"entity_categories", report.diversity.entity_categories},
            {"relation_categories", report.diversity.relation_categories},
            {"triplet_categories", report.diversity.triplet_categories}}}};
}

std::string to_csv(const RecallReport& report) {
  std::string out = "k,recall,mean_recall\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.k) + "," + format_percent(r.recall) + "," +
           format_percent(r.mean_recall) + "\n";
  }
  return out;
}

}  // namespace elegant::closedset
