#pragma once

// Local scene graph generation: subject selection, IoU pair gating,
// relationship proposal by the thinker, verification by the verifier, and
// the co-calibration rescue of negative verdicts.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "elegant/backends.hpp"
#include "elegant/closedset.hpp"
#include "elegant/errors.hpp"
#include "elegant/prompts.hpp"
#include "elegant/scene.hpp"
#include "json.hpp"

namespace elegant::pipeline {

struct SubjectSpec {
  enum class Kind { label, box, point };
  Kind kind = Kind::label;
  std::variant<std::string, BBox, Point> value;

  static SubjectSpec by_label(std::string label) { return {Kind::label, std::move(label)}; }
  static SubjectSpec by_box(BBox box) { return {Kind::box, box}; }
  static SubjectSpec by_point(Point p) { return {Kind::point, p}; }

  void validate() const;
};

void to_json(nlohmann::json& j, const SubjectSpec& s);
void from_json(const nlohmann::json& j, SubjectSpec& s);

/// Open: free-form predicates. Closed: thinker sees the vocabulary and
/// anything outside it is dropped.
struct GenerationMode {
  std::optional<closedset::RelationVocab> vocab;

  static GenerationMode open() { return {}; }
  static GenerationMode closed(closedset::RelationVocab v) { return {std::move(v)}; }
  bool is_closed() const { return vocab.has_value(); }
};

enum class CalibrationRoute { thinker, verifier };

struct PipelineConfig {
  bool coca_enabled = true;
  CalibrationRoute calibration_route = CalibrationRoute::thinker;
  double coca_confidence = 0.5;
  std::size_t max_in_flight = 4;
};

struct Answer {
  std::string text;
  std::optional<double> yes_probability;
  prompts::YesNo parsed = prompts::YesNo::unknown;

  friend bool operator==(const Answer&, const Answer&) = default;
};

struct VerificationTrace {
  std::string image_id;
  Triplet triplet;  // final status and confidence filled in
  TripletLabels labels;
  Answer verify_answer;
  std::optional<std::string> rationale;
  std::optional<Answer> calibration_answer;
  std::optional<CalibrationRoute> calibration_route;

  TripletStatus final_status() const { return triplet.status; }
  /// Status/answer consistency. With CoCa disabled a negative verdict
  /// carries no rationale.
  bool consistent(bool coca_enabled = true) const;
};

void to_json(nlohmann::json& j, const VerificationTrace& t);
void from_json(const nlohmann::json& j, VerificationTrace& t);

/// A backend failure during generation, with whatever traces completed.
class GenerationError : public BackendError {
 public:
  GenerationError(const std::string& what, std::vector<VerificationTrace> partial,
                  std::exception_ptr cause)
      : BackendError(what), partial_(std::move(partial)), cause_(std::move(cause)) {}

  const std::vector<VerificationTrace>& partial_traces() const { return partial_; }
  std::exception_ptr cause() const { return cause_; }

 private:
  std::vector<VerificationTrace> partial_;
  std::exception_ptr cause_;
};

Entity select_subject(std::span<const Entity> entities, const SubjectSpec& spec);

/// Entities other than the subject whose box overlaps it (IoU > 0), in
/// input order.
std::vector<Entity> candidate_objects(const Entity& subject, std::span<const Entity> entities);

/// Triplets as "A {s} is {r} a {o}", joined into the VQA context prompt.
std::string build_vqa_prompt(const std::string& question,
                             std::span<const LocalSceneGraph> graphs,
                             const prompts::TemplateSet& templates = prompts::TemplateSet::builtin());

struct LocalResult {
  LocalSceneGraph graph;
  std::vector<VerificationTrace> traces;
};

struct SubjectFailure {
  EntityId subject_id = 0;
  std::string message;
};

struct GlobalResult {
  GlobalSceneGraph graph;
  std::vector<VerificationTrace> traces;
  std::vector<SubjectFailure> failures;
};

struct Backends {
  std::shared_ptr<backends::Observer> observer;
  std::shared_ptr<backends::Thinker> thinker;
  std::shared_ptr<backends::Verifier> verifier;
};

class Engine {
 public:
  Engine(Backends backends, PipelineConfig config = {},
         const prompts::TemplateSet& templates = prompts::TemplateSet::builtin());

  const PipelineConfig& config() const { return config_; }

  std::vector<Triplet> propose(const Entity& subject, std::span<const Entity> objects,
                               const GenerationMode& mode);

  VerificationTrace verify_with_coca(const Triplet& candidate, const TripletLabels& labels,
                                     const backends::ImageRef& image);

  /// Detects with the observer unless `entities` is given (ground-truth
  /// injection), then builds the subject's local graph.
  LocalResult generate_local(const backends::ImageRef& image, const SubjectSpec& spec,
                             const GenerationMode& mode,
                             std::optional<std::vector<Entity>> entities = std::nullopt);

  /// Local graph for an already-resolved subject and entity set.
  LocalResult generate_for_subject(const backends::ImageRef& image, const Entity& subject,
                                   std::span<const Entity> entities,
                                   const GenerationMode& mode);

  /// Every entity in turn as the subject. Per-subject failures are recorded
  /// and do not stop the others.
  GlobalResult generate_global(const backends::ImageRef& image, const GenerationMode& mode,
                               std::optional<std::vector<Entity>> entities = std::nullopt);

  std::vector<Entity> detect(const backends::ImageRef& image, const GenerationMode& mode);

 private:
  Backends backends_;
  PipelineConfig config_;
  prompts::TemplateSet templates_;
};

std::string to_string(CalibrationRoute route);
CalibrationRoute calibration_route_from_string(std::string_view s);

}  // namespace elegant::pipeline
