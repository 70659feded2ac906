#include "elegant/eclipse.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "elegant/digest.hpp"
#include "elegant/errors.hpp"
#include "elegant/numeric.hpp"
#include "elegant/parallel.hpp"

namespace elegant::eclipse {

PenaltyParams PenaltyParams::make(double m_star, double alpha) {
  PenaltyParams p{m_star, alpha};
  p.validate();
  return p;
}

void PenaltyParams::validate() const {
  if (!(std::isfinite(m_star) && m_star > 1.0)) {
    throw ValidationError("penalty: m* must be > 1, got " + std::to_string(m_star));
  }
  if (!(std::isfinite(alpha) && alpha > 0.0)) {
    throw ValidationError("penalty: alpha must be > 0, got " + std::to_string(alpha));
  }
}

namespace {

// Half-open pixel range [first, last) whose centres fall in [lo, hi).
std::pair<int, int> pixel_span(double lo, double hi, int extent) {
  const int first = std::clamp(static_cast<int>(std::ceil(lo - 0.5)), 0, extent);
  const int last = std::clamp(static_cast<int>(std::ceil(hi - 0.5)), 0, extent);
  return {first, std::max(first, last)};
}

}  // namespace

Image mask_image(const Image& image, const BBox& subject_box, const BBox& object_box) {
  for (const BBox* b : {&subject_box, &object_box}) {
    if (!b->valid() || !b->within(image.width, image.height)) {
      throw ValidationError("mask_image: box outside image bounds");
    }
  }
  Image out(image.width, image.height, image.channels);
  const std::size_t px = static_cast<std::size_t>(image.channels);
  for (const BBox* b : {&subject_box, &object_box}) {
    const auto [x0, x1] = pixel_span(b->x_min, b->x_max, image.width);
    const auto [y0, y1] = pixel_span(b->y_min, b->y_max, image.height);
    for (int y = y0; y < y1; ++y) {
      std::copy_n(image.at(x0, y), static_cast<std::size_t>(x1 - x0) * px, out.at(x0, y));
    }
  }
  return out;
}

std::string triplet_caption(const TripletLabels& labels) {
  if (labels.subject.empty() || labels.predicate.empty() || labels.object.empty()) {
    throw ValidationError("caption: empty label");
  }
  return "The " + labels.subject + " is " + labels.predicate + " the " + labels.object + ".";
}

double clip_score(const backends::EmbeddingVector& image_embedding,
                  const backends::EmbeddingVector& text_embedding) {
  const auto& a = image_embedding.values;
  const auto& b = text_embedding.values;
  if (a.size() != b.size()) {
    throw ValidationError("clip_score: dimension mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw ValidationError("clip_score: cosine undefined for a zero vector");
  }
  const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return std::max(100.0 * cosine, 0.0);
}

std::optional<double> graph_clip_score(std::span<const double> scores) {
  if (scores.empty()) return std::nullopt;
  return compensated_mean(scores);
}

double penalty(double x, const PenaltyParams& params) {
  params.validate();
  if (!(std::isfinite(x) && x >= 1.0)) {
    throw ValidationError("penalty: length must be >= 1, got " + std::to_string(x));
  }
  if (x == 1.0) return 0.0;
  // With mu = m*-1 and u = (x-m*)/mu the barrier term is mu*(u - ln(1+u)),
  // which avoids cancellation around the minimum.
  const double mu = params.m_star - 1.0;
  const double u = (x - params.m_star) / mu;
  double gap;
  if (std::abs(u) < 0.1) {
    // u - ln(1+u) = sum_{k>=2} (-1)^k u^k / k
    gap = 0.0;
    double term = u;
    for (int k = 2; k <= 24; ++k) {
      term *= -u;
      gap -= term / k;
    }
  } else {
    gap = u - std::log1p(u);
  }
  return std::exp(-params.alpha * mu * gap);
}

double mean_prediction_length(std::span<const LocalSceneGraph> graphs) {
  CompensatedSum sum;
  std::size_t n = 0;
  for (const auto& g : graphs) {
    if (g.relations.empty()) continue;
    sum.add(static_cast<double>(g.relations.size()));
    ++n;
  }
  if (n == 0) throw CannotCalibrateError("every graph is empty; m* is undefined");
  return sum.value() / static_cast<double>(n);
}

namespace {

GraphScore score_unit(std::string image_id, std::optional<EntityId> subject_id,
                      std::vector<double> scores, const PenaltyParams& params) {
  GraphScore out;
  out.image_id = std::move(image_id);
  out.subject_id = subject_id;
  out.size = scores.size();
  if (auto mean = graph_clip_score(scores)) {
    out.mean_clip = *mean;
    out.penalty = penalty(static_cast<double>(out.size), params);
    out.eclipse = out.penalty * out.mean_clip;
  }
  out.triplet_scores = std::move(scores);
  return out;
}

}  // namespace

GraphScore eclipse(const LocalSceneGraph& graph, std::span<const double> scores,
                   const PenaltyParams& params) {
  params.validate();
  if (scores.size() != graph.relations.size()) {
    throw ValidationError("eclipse: " + std::to_string(scores.size()) + " scores for " +
                          std::to_string(graph.relations.size()) + " relations");
  }
  return score_unit(graph.image_id, graph.subject.id,
                    std::vector<double>(scores.begin(), scores.end()), params);
}

DatasetEclipse dataset_eclipse(std::span<const LocalSceneGraph> graphs,
                               std::span<const std::vector<double>> scores, double alpha,
                               Aggregation aggregation) {
  if (graphs.size() != scores.size()) {
    throw ValidationError("dataset_eclipse: graph/score count mismatch");
  }
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    if (graphs[i].relations.size() != scores[i].size()) {
      throw ValidationError("dataset_eclipse: score/relation count mismatch for image " +
                            graphs[i].image_id);
    }
  }

  struct Unit {
    std::string image_id;
    std::optional<EntityId> subject_id;
    std::vector<double> scores;
  };
  std::vector<Unit> units;
  if (aggregation == Aggregation::per_local) {
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      units.push_back({graphs[i].image_id, graphs[i].subject.id, scores[i]});
    }
  } else {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      auto [it, fresh] = index.emplace(graphs[i].image_id, units.size());
      if (fresh) units.push_back({graphs[i].image_id, std::nullopt, {}});
      auto& pooled = units[it->second].scores;
      pooled.insert(pooled.end(), scores[i].begin(), scores[i].end());
    }
  }

  CompensatedSum length_sum;
  std::size_t nonempty = 0;
  for (const auto& u : units) {
    if (u.scores.empty()) continue;
    length_sum.add(static_cast<double>(u.scores.size()));
    ++nonempty;
  }
  if (nonempty == 0) throw CannotCalibrateError("every graph is empty; m* is undefined");

  DatasetEclipse out;
  out.alpha = alpha;
  out.m_star = length_sum.value() / static_cast<double>(nonempty);
  const auto params = PenaltyParams::make(out.m_star, alpha);

  CompensatedSum eclipse_sum;
  for (auto& u : units) {
    out.per_graph.push_back(
        score_unit(std::move(u.image_id), u.subject_id, std::move(u.scores), params));
    eclipse_sum.add(out.per_graph.back().eclipse);
  }
  out.dataset_eclipse = eclipse_sum.value() / static_cast<double>(out.per_graph.size());
  return out;
}

nlohmann::json to_json(const DatasetEclipse& report) {
  nlohmann::json per_graph = nlohmann::json::array();
  for (const auto& g : report.per_graph) {
    nlohmann::json item = {{"image_id", g.image_id},
                           {"size", g.size},
                           {"mean_clip", g.mean_clip},
                           {"penalty", g.penalty},
                           {"eclipse", g.eclipse}};
    item["subject_id"] = g.subject_id ? nlohmann::json(*g.subject_id) : nlohmann::json(nullptr);
    per_graph.push_back(std::move(item));
  }
  return {{"alpha", report.alpha},
          {"m_star", report.m_star},
          {"per_graph", std::move(per_graph)},
          {"dataset_eclipse", report.dataset_eclipse}};
}

TripletScorer::TripletScorer(backends::Embedder& embedder, ImageSource images)
    : embedder_(embedder), images_(std::move(images)) {}

const Image& TripletScorer::image(const std::string& image_id) {
  std::lock_guard lock(mutex_);
  auto it = image_cache_.find(image_id);
  if (it == image_cache_.end()) it = image_cache_.emplace(image_id, images_(image_id)).first;
  return it->second;
}

TripletScore TripletScorer::score_one(const LocalSceneGraph& graph, const Triplet& t) {
  const Entity* obj = graph.find_object(t.object_id);
  if (obj == nullptr) throw ValidationError("relation with unresolved object");
  const Image masked = mask_image(image(graph.image_id), graph.subject.bbox, obj->bbox);
  const std::string payload = encode_pnm(masked);
  const std::string image_key = "image:" + sha256_hex(payload);
  const std::string caption = triplet_caption(graph.labels_of(t));
  const std::string text_key = "text:" + caption;

  auto cached = [this](const std::string& key, auto&& compute) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = embedding_cache_.find(key); it != embedding_cache_.end()) return it->second;
    }
    auto v = compute();
    std::lock_guard lock(mutex_);
    return embedding_cache_.emplace(key, std::move(v)).first->second;
  };
  const auto e_img = cached(image_key, [&] { return embedder_.embed_image(masked); });
  const auto e_txt = cached(text_key, [&] { return embedder_.embed_text(caption); });
  return {t, clip_score(e_img, e_txt), caption, image_key.substr(6)};
}

std::vector<TripletScore> TripletScorer::score(const LocalSceneGraph& graph) {
  std::vector<TripletScore> out;
  out.reserve(graph.relations.size());
  for (const auto& t : graph.relations) out.push_back(score_one(graph, t));
  return out;
}

std::vector<std::vector<TripletScore>> TripletScorer::score_all(
    std::span<const LocalSceneGraph> graphs, std::size_t parallelism) {
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  std::vector<std::vector<TripletScore>> out(graphs.size());
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    out[g].resize(graphs[g].relations.size());
    for (std::size_t r = 0; r < graphs[g].relations.size(); ++r) jobs.emplace_back(g, r);
  }
  parallel_for(jobs.size(), parallelism, [&](std::size_t i) {
    const auto [g, r] = jobs[i];
    out[g][r] = score_one(graphs[g], graphs[g].relations[r]);
  });
  return out;
}

}  // namespace elegant::eclipse
