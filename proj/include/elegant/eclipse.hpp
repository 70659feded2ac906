#pragma once

// Entity-level CLIPScore: per-triplet masked-image CLIPScore, graph means,
// and the log-barrier length penalty centred on the dataset mean length.

#include <cstddef>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elegant/backends.hpp"
#include "elegant/raster.hpp"
#include "elegant/scene.hpp"
#include "json.hpp"

namespace elegant::eclipse {

struct PenaltyParams {
  double m_star = 2.0;  // mean prediction length, > 1
  double alpha = 0.01;  // penalty strength, > 0

  static PenaltyParams make(double m_star, double alpha);
  void validate() const;
};

/// Keeps pixels whose centre lies in either box (half-open on the max
/// edge); everything else becomes 0.
Image mask_image(const Image& image, const BBox& subject_box, const BBox& object_box);

/// "The {s} is {r} the {o}."
std::string triplet_caption(const TripletLabels& labels);

/// max(100 * cos(e_img, e_txt), 0).
double clip_score(const backends::EmbeddingVector& image_embedding,
                  const backends::EmbeddingVector& text_embedding);

/// Arithmetic mean; nullopt for an empty graph.
std::optional<double> graph_clip_score(std::span<const double> scores);

/// P(x) = exp(-alpha * (x + (m*-1) ln((m*-1)/(x-1)) - m*)) for x > 1, and
/// its limit 0 at x = 1.
double penalty(double x, const PenaltyParams& params);

/// Mean relation count over graphs that have at least one relation.
double mean_prediction_length(std::span<const LocalSceneGraph> graphs);

struct GraphScore {
  std::string image_id;
  std::optional<EntityId> subject_id;  // absent for per-image aggregates
  std::size_t size = 0;
  std::vector<double> triplet_scores;
  double mean_clip = 0.0;
  double penalty = 0.0;
  double eclipse = 0.0;
};

/// penalty(|G|) * mean score; 0 for an empty graph.
GraphScore eclipse(const LocalSceneGraph& graph, std::span<const double> scores,
                   const PenaltyParams& params);

enum class Aggregation { per_local, per_image };

struct DatasetEclipse {
  double alpha = 0.0;
  double m_star = 0.0;
  std::vector<GraphScore> per_graph;
  double dataset_eclipse = 0.0;
};

/// Two passes: m* from the non-empty units, then the mean ECLIPSE over all
/// units (empty ones count as 0). `scores[i]` belongs to `graphs[i]`.
DatasetEclipse dataset_eclipse(std::span<const LocalSceneGraph> graphs,
                               std::span<const std::vector<double>> scores, double alpha,
                               Aggregation aggregation = Aggregation::per_local);

nlohmann::json to_json(const DatasetEclipse& report);

struct TripletScore {
  Triplet triplet;
  double clip_score = 0.0;
  std::string caption;
  std::string masked_image_sha256;
};

/// Computes per-triplet CLIPScores through an embedder. Masked-image and
/// caption embeddings are memoized by content, so identical (image, box
/// pair) requests hit the backend once.
class TripletScorer {
 public:
  using ImageSource = std::function<Image(const std::string& image_id)>;

  TripletScorer(backends::Embedder& embedder, ImageSource images);

  std::vector<TripletScore> score(const LocalSceneGraph& graph);
  /// Scores every graph, fanning embedding calls out over `parallelism`
  /// workers. Output order follows the input.
  std::vector<std::vector<TripletScore>> score_all(std::span<const LocalSceneGraph> graphs,
                                                   std::size_t parallelism = 1);

 private:
  const Image& image(const std::string& image_id);
  TripletScore score_one(const LocalSceneGraph& graph, const Triplet& t);

  backends::Embedder& embedder_;
  ImageSource images_;
  std::mutex mutex_;
  std::map<std::string, Image> image_cache_;
  std::map<std::string, backends::EmbeddingVector> embedding_cache_;
};

}  // namespace elegant::eclipse
