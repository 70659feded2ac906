#pragma once

// Domain types shared by every stage: boxes, entities, triplets, and the
// local/global scene graphs built from them.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace elegant {

using EntityId = std::int64_t;

/// Trims, collapses runs of whitespace to one space, and lowercases (ASCII).
std::string normalize_label(std::string_view text);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned box in continuous image coordinates.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  /// Throws ValidationError unless the box is finite, non-degenerate and
  /// non-negative.
  static BBox make(double x_min, double y_min, double x_max, double y_max);

  bool valid() const;
  bool within(double width, double height) const;
  bool contains(Point p) const;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Analytic intersection-over-union. Edge-touching boxes give exactly 0.
double iou(const BBox& a, const BBox& b);

enum class EntitySource { detected, ground_truth };

struct Entity {
  EntityId id = 0;
  std::string label;
  BBox bbox;
  double confidence = 1.0;
  EntitySource source = EntitySource::detected;

  friend bool operator==(const Entity&, const Entity&) = default;
};

/// Normalizes the label and checks the entity invariants.
Entity make_entity(EntityId id, std::string_view label, const BBox& bbox,
                   double confidence, EntitySource source);

enum class TripletStatus { candidate, verified_direct, verified_coca, rejected };

struct Triplet {
  EntityId subject_id = 0;
  std::string predicate;
  EntityId object_id = 0;
  TripletStatus status = TripletStatus::candidate;
  std::optional<double> confidence;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

Triplet make_triplet(EntityId subject_id, std::string_view predicate,
                     EntityId object_id,
                     TripletStatus status = TripletStatus::candidate,
                     std::optional<double> confidence = std::nullopt);

inline bool is_verified(TripletStatus s) {
  return s == TripletStatus::verified_direct ||
         s == TripletStatus::verified_coca;
}

/// Label view of a triplet, used by every prompt and caption renderer.
struct TripletLabels {
  std::string subject;
  std::string predicate;
  std::string object;
};

struct LocalSceneGraph {
  std::string image_id;
  Entity subject;
  std::vector<Entity> objects;
  std::vector<Triplet> relations;

  const Entity* find_object(EntityId id) const;
  TripletLabels labels_of(const Triplet& t) const;

  /// Throws ValidationError when any graph invariant is violated.
  void validate() const;

  friend bool operator==(const LocalSceneGraph&,
                         const LocalSceneGraph&) = default;
};

struct GlobalSceneGraph {
  std::string image_id;
  std::map<EntityId, LocalSceneGraph> locals;

  std::size_t triplet_count() const;

  friend bool operator==(const GlobalSceneGraph&,
                         const GlobalSceneGraph&) = default;
};

/// Throws ConflictError on a repeated subject id and ValidationError on
/// mixed image ids.
GlobalSceneGraph merge_global(std::vector<LocalSceneGraph> locals);

std::string to_string(EntitySource s);
std::string to_string(TripletStatus s);
EntitySource entity_source_from_string(std::string_view s);
TripletStatus triplet_status_from_string(std::string_view s);

// Canonical JSON. Boxes are [x_min, y_min, x_max, y_max]; enums are
// lowercase strings.
void to_json(nlohmann::json& j, const BBox& b);
void from_json(const nlohmann::json& j, BBox& b);
void to_json(nlohmann::json& j, const Entity& e);
void from_json(const nlohmann::json& j, Entity& e);
void to_json(nlohmann::json& j, const Triplet& t);
void from_json(const nlohmann::json& j, Triplet& t);
void to_json(nlohmann::json& j, const LocalSceneGraph& g);
void from_json(const nlohmann::json& j, LocalSceneGraph& g);
void to_json(nlohmann::json& j, const GlobalSceneGraph& g);
void from_json(const nlohmann::json& j, GlobalSceneGraph& g);

}  // namespace elegant
