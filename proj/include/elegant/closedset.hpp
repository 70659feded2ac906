#pragma once

// Closed-set evaluation: relation vocabularies, confidence ranking, triplet
// matching, Recall@K / mean Recall@K, and prediction diversity counts.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elegant/scene.hpp"
#include "json.hpp"

namespace elegant::closedset {

class RelationVocab {
 public:
  /// Normalizes every predicate; throws on an empty list or duplicates.
  static RelationVocab make(std::string id, std::span<const std::string> predicates);
  /// "visualds20" or "recode24".
  static const RelationVocab& builtin(std::string_view id);
  /// One predicate per line; blank lines ignored.
  static RelationVocab from_file(const std::filesystem::path& path, std::string id);

  const std::string& id() const { return id_; }
  const std::vector<std::string>& predicates() const { return predicates_; }
  bool contains(std::string_view predicate) const;

 private:
  std::string id_;
  std::vector<std::string> predicates_;
};

/// A verified triplet with both ends resolved, ready for ranking/matching.
struct Prediction {
  Entity subject;
  std::string predicate;
  Entity object;
  TripletStatus status = TripletStatus::verified_direct;
  double confidence = 1.0;
};

struct GroundTruthTriplet {
  Entity subject;
  std::string predicate;
  Entity object;
};

/// Flattens the verified relations of local graphs. A relation without a
/// confidence gets `fallback_confidence`.
std::vector<Prediction> predictions_from(std::span<const LocalSceneGraph> graphs,
                                         double fallback_confidence = 1.0);

/// Confidence descending; ties: verified_direct before verified_coca, then
/// (subject id, predicate, object id) ascending.
std::vector<Prediction> rank_predictions(std::vector<Prediction> predictions);

struct MatchMode {
  enum class Kind { gt_boxes, detected };
  Kind kind = Kind::gt_boxes;
  double iou_threshold = 0.5;

  static MatchMode gt_boxes() { return {}; }
  static MatchMode detected(double iou_threshold = 0.5) {
    return {Kind::detected, iou_threshold};
  }
};

bool match(const Prediction& pred, const GroundTruthTriplet& gt, const MatchMode& mode);

/// Percent of GTs recovered by a maximum one-to-one matching over the first K
/// ranked predictions. nullopt when there are no GTs.
std::optional<double> recall_at_k(std::span<const Prediction> ranked,
                                  std::span<const GroundTruthTriplet> gts, std::size_t k,
                                  const MatchMode& mode = {});

/// Mean of per-predicate recall over the vocabulary predicates that have at
/// least one GT. nullopt when no predicate has GTs.
std::optional<double> mean_recall_at_k(std::span<const Prediction> ranked,
                                       std::span<const GroundTruthTriplet> gts,
                                       std::size_t k, const RelationVocab& vocab,
                                       const MatchMode& mode = {});

struct DiversityStats {
  std::size_t entity_categories = 0;
  std::size_t relation_categories = 0;
  std::size_t triplet_categories = 0;

  friend bool operator==(const DiversityStats&, const DiversityStats&) = default;
};

DiversityStats diversity_stats(std::span<const Prediction> predictions);

struct ImageEval {
  std::string image_id;
  std::vector<Prediction> predictions;  // any order; ranked internally
  std::vector<GroundTruthTriplet> gts;
};

struct RecallRow {
  std::size_t k = 0;
  std::optional<double> recall;
  std::optional<double> mean_recall;
};

struct RecallReport {
  std::string vocab_id;
  std::vector<RecallRow> rows;
  DiversityStats diversity;
  std::size_t images = 0;
  std::size_t images_with_gt = 0;
};

/// Dataset-level R@K is the mean of per-image recall over images with GTs.
/// mR@K averages, for each predicate, its per-image recall over images that
/// contain that predicate, then averages over predicates seen in the GTs.
/// Throws ValidationError if a GT predicate lies outside the vocabulary.
RecallReport evaluate(std::span<const ImageEval> images, std::span<const std::size_t> ks,
                      const RelationVocab& vocab, const MatchMode& mode = {});

nlohmann::json to_json(const RecallReport& report);
/// Header `k,recall,mean_recall`, values in percent with two decimals.
std::string to_csv(const RecallReport& report);
std::string format_percent(std::optional<double> value);

}  // namespace elegant::closedset
