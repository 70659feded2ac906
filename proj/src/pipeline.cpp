#include "elegant/pipeline.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "elegant/parallel.hpp"

namespace elegant::pipeline {

using backends::ImageRef;
using prompts::YesNo;

std::string to_string(CalibrationRoute route) {
  return route == CalibrationRoute::thinker ? "thinker" : "verifier";
}

CalibrationRoute calibration_route_from_string(std::string_view s) {
  if (s == "thinker") return CalibrationRoute::thinker;
  if (s == "verifier") return CalibrationRoute::verifier;
  throw ValidationError("unknown calibration route '" + std::string(s) + "'");
}

void SubjectSpec::validate() const {
  const bool ok = (kind == Kind::label && std::holds_alternative<std::string>(value)) ||
                  (kind == Kind::box && std::holds_alternative<BBox>(value)) ||
                  (kind == Kind::point && std::holds_alternative<Point>(value));
  if (!ok) throw ValidationError("subject spec: value does not match kind");
  if (kind == Kind::label && normalize_label(std::get<std::string>(value)).empty()) {
    throw ValidationError("subject spec: empty label");
  }
  if (kind == Kind::box && !std::get<BBox>(value).valid()) {
    throw ValidationError("subject spec: invalid box");
  }
}

void to_json(nlohmann::json& j, const SubjectSpec& s) {
  switch (s.kind) {
    case SubjectSpec::Kind::label:
      j = {{"kind", "label"}, {"value", std::get<std::string>(s.value)}};
      break;
    case SubjectSpec::Kind::box:
      j = {{"kind", "box"}, {"value", std::get<BBox>(s.value)}};
      break;
    case SubjectSpec::Kind::point: {
      const auto p = std::get<Point>(s.value);
      j = {{"kind", "point"}, {"value", {p.x, p.y}}};
      break;
    }
  }
}

void from_json(const nlohmann::json& j, SubjectSpec& s) {
  const auto kind = j.at("kind").get<std::string>();
  const auto& v = j.at("value");
  if (kind == "label") {
    s = SubjectSpec::by_label(v.get<std::string>());
  } else if (kind == "box") {
    s = SubjectSpec::by_box(v.get<BBox>());
  } else if (kind == "point") {
    if (!v.is_array() || v.size() != 2) throw ValidationError("point must be [x, y]");
    s = SubjectSpec::by_point({v[0].get<double>(), v[1].get<double>()});
  } else {
    throw ValidationError("unknown subject kind '" + kind + "'");
  }
  s.validate();
}

bool VerificationTrace::consistent(bool coca_enabled) const {
  const TripletStatus status = triplet.status;
  if (verify_answer.parsed == YesNo::yes) {
    return status == TripletStatus::verified_direct && !rationale && !calibration_answer;
  }
  if (!coca_enabled) {
    return status == TripletStatus::rejected && !rationale && !calibration_answer;
  }
  if (!rationale || !calibration_answer) return false;
  return calibration_answer->parsed == YesNo::yes ? status == TripletStatus::verified_coca
                                                  : status == TripletStatus::rejected;
}

namespace {

nlohmann::json answer_json(const Answer& a) {
  nlohmann::json j = {{"text", a.text}, {"parsed", prompts::to_string(a.parsed)}};
  if (a.yes_probability) j["yes_probability"] = *a.yes_probability;
  return j;
}

Answer answer_from_json(const nlohmann::json& j) {
  Answer a;
  a.text = j.at("text").get<std::string>();
  a.parsed = prompts::parse_yes_no(a.text);
  if (j.contains("yes_probability") && !j["yes_probability"].is_null()) {
    a.yes_probability = j["yes_probability"].get<double>();
  }
  return a;
}

}  // namespace

void to_json(nlohmann::json& j, const VerificationTrace& t) {
  j = {{"image_id", t.image_id},
       {"triplet", t.triplet},
       {"labels",
        {{"subject", t.labels.subject},
         {"predicate", t.labels.predicate},
         {"object", t.labels.object}}},
       {"verify_answer", answer_json(t.verify_answer)},
       {"final_status", to_string(t.triplet.status)}};
  if (t.rationale) j["rationale"] = *t.rationale;
  if (t.calibration_answer) j["calibration_answer"] = answer_json(*t.calibration_answer);
  if (t.calibration_route) j["calibration_route"] = to_string(*t.calibration_route);
}

void from_json(const nlohmann::json& j, VerificationTrace& t) {
  t.image_id = j.at("image_id").get<std::string>();
  t.triplet = j.at("triplet").get<Triplet>();
  const auto& l = j.at("labels");
  t.labels = {l.at("subject").get<std::string>(), l.at("predicate").get<std::string>(),
              l.at("object").get<std::string>()};
  t.verify_answer = answer_from_json(j.at("verify_answer"));
  t.rationale.reset();
  t.calibration_answer.reset();
  t.calibration_route.reset();
  if (j.contains("rationale")) t.rationale = j["rationale"].get<std::string>();
  if (j.contains("calibration_answer")) {
    t.calibration_answer = answer_from_json(j["calibration_answer"]);
  }
  if (j.contains("calibration_route")) {
    t.calibration_route = calibration_route_from_string(j["calibration_route"].get<std::string>());
  }
}

Entity select_subject(std::span<const Entity> entities, const SubjectSpec& spec) {
  spec.validate();
  const Entity* best = nullptr;
  switch (spec.kind) {
    case SubjectSpec::Kind::label: {
      const auto label = normalize_label(std::get<std::string>(spec.value));
      for (const auto& e : entities) {
        if (e.label == label && (best == nullptr || e.confidence > best->confidence)) best = &e;
      }
      break;
    }
    case SubjectSpec::Kind::box: {
      const auto& box = std::get<BBox>(spec.value);
      double best_iou = 0.0;
      for (const auto& e : entities) {
        const double v = iou(box, e.bbox);
        if (v <= 0.0) continue;
        if (best == nullptr || v > best_iou || (v == best_iou && e.confidence > best->confidence)) {
          best = &e;
          best_iou = v;
        }
      }
      break;
    }
    case SubjectSpec::Kind::point: {
      const auto p = std::get<Point>(spec.value);
      for (const auto& e : entities) {
        if (!e.bbox.contains(p)) continue;
        if (best == nullptr || e.bbox.area() < best->bbox.area() ||
            (e.bbox.area() == best->bbox.area() && e.confidence > best->confidence)) {
          best = &e;
        }
      }
      break;
    }
  }
  if (best == nullptr) throw SubjectNotFoundError("no entity matches the subject spec");
  return *best;
}

std::vector<Entity> candidate_objects(const Entity& subject, std::span<const Entity> entities) {
  std::vector<Entity> out;
  for (const auto& e : entities) {
    if (e.id != subject.id && iou(subject.bbox, e.bbox) > 0.0) out.push_back(e);
  }
  return out;
}

std::string build_vqa_prompt(const std::string& question,
                             std::span<const LocalSceneGraph> graphs,
                             const prompts::TemplateSet& templates) {
  std::string context;
  for (const auto& g : graphs) {
    for (const auto& r : g.relations) {
      const auto l = g.labels_of(r);
      if (!context.empty()) context += ". ";
      context += "A " + l.subject + " is " + l.predicate + " a " + l.object;
    }
  }
  return prompts::render_vqa(context, question, templates);
}

Engine::Engine(Backends backends, PipelineConfig config, const prompts::TemplateSet& templates)
    : backends_(std::move(backends)), config_(config), templates_(templates) {
  if (config_.max_in_flight == 0) throw ValidationError("max_in_flight must be >= 1");
  if (!(config_.coca_confidence >= 0.0 && config_.coca_confidence <= 1.0)) {
    throw ValidationError("coca_confidence must lie in [0,1]");
  }
}

std::vector<Entity> Engine::detect(const ImageRef& image, const GenerationMode&) {
  if (!backends_.observer) throw ValidationError("no observer backend configured");
  return backends_.observer->detect(image, std::nullopt);
}

std::vector<Triplet> Engine::propose(const Entity& subject, std::span<const Entity> objects,
                                     const GenerationMode& mode) {
  if (objects.empty()) return {};
  if (!backends_.thinker) throw ValidationError("no thinker backend configured");
  std::vector<std::string> labels;
  labels.reserve(objects.size());
  for (const auto& o : objects) labels.push_back(o.label);

  const std::string prompt =
      mode.is_closed()
          ? prompts::render_thinker_closed(subject.label, labels, mode.vocab->predicates(),
                                           mode.vocab->id(), templates_)
          : prompts::render_thinker_open(subject.label, labels, templates_);
  const auto report = prompts::parse_triplets(backends_.thinker->complete(prompt), subject, objects);

  std::vector<Triplet> out;
  std::set<std::tuple<EntityId, std::string, EntityId>> seen;
  for (const auto& t : report.accepted) {
    if (mode.is_closed() && !mode.vocab->contains(t.predicate)) continue;
    if (seen.emplace(t.subject_id, t.predicate, t.object_id).second) out.push_back(t);
  }
  return out;
}

VerificationTrace Engine::verify_with_coca(const Triplet& candidate, const TripletLabels& labels,
                                           const ImageRef& image) {
  if (candidate.status != TripletStatus::candidate) {
    throw ValidationError("verify_with_coca expects a candidate triplet");
  }
  if (!backends_.verifier) throw ValidationError("no verifier backend configured");

  VerificationTrace trace;
  trace.image_id = image.image_id;
  trace.triplet = candidate;
  trace.labels = labels;
  try {
    const auto direct = backends_.verifier->answer(image, prompts::render_verify(labels, templates_));
    trace.verify_answer = {direct.text, direct.yes_probability, prompts::parse_yes_no(direct.text)};
    if (trace.verify_answer.parsed == YesNo::yes) {
      trace.triplet.status = TripletStatus::verified_direct;
      trace.triplet.confidence = direct.yes_probability.value_or(1.0);
      return trace;
    }
    if (!config_.coca_enabled) {
      trace.triplet.status = TripletStatus::rejected;
      return trace;
    }

    const auto why = backends_.verifier->answer(
        image, prompts::render_rationale(labels.subject, labels.object, templates_));
    trace.rationale = why.text;

    const auto question = prompts::render_calibration(why.text, labels, templates_);
    trace.calibration_route = config_.calibration_route;
    Answer calibration;
    if (config_.calibration_route == CalibrationRoute::thinker) {
      if (!backends_.thinker) throw ValidationError("no thinker backend configured");
      calibration.text = backends_.thinker->complete(question);
    } else {
      const auto a = backends_.verifier->answer(image, question);
      calibration.text = a.text;
      calibration.yes_probability = a.yes_probability;
    }
    calibration.parsed = prompts::parse_yes_no(calibration.text);
    trace.calibration_answer = calibration;

    if (calibration.parsed == YesNo::yes) {
      trace.triplet.status = TripletStatus::verified_coca;
      trace.triplet.confidence = config_.coca_confidence;
    } else {
      trace.triplet.status = TripletStatus::rejected;
    }
    return trace;
  } catch (const GenerationError&) {
    throw;
  } catch (const BackendError& e) {
    throw GenerationError(e.what(), {trace}, std::current_exception());
  }
}

LocalResult Engine::generate_for_subject(const ImageRef& image, const Entity& subject,
                                         std::span<const Entity> entities,
                                         const GenerationMode& mode) {
  const auto objects = candidate_objects(subject, entities);
  std::vector<Triplet> candidates;
  try {
    candidates = propose(subject, objects, mode);
  } catch (const BackendError& e) {
    throw GenerationError(e.what(), {}, std::current_exception());
  }

  std::vector<std::optional<VerificationTrace>> done(candidates.size());
  std::vector<std::exception_ptr> failed(candidates.size());
  parallel_for(candidates.size(), config_.max_in_flight, [&](std::size_t i) {
    const Entity* obj = nullptr;
    for (const auto& o : objects) {
      if (o.id == candidates[i].object_id) obj = &o;
    }
    try {
      done[i] = verify_with_coca(candidates[i],
                                 {subject.label, candidates[i].predicate, obj->label}, image);
    } catch (...) {
      failed[i] = std::current_exception();
    }
  });

  std::vector<VerificationTrace> traces;
  std::exception_ptr first_failure;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (done[i]) {
      traces.push_back(std::move(*done[i]));
      continue;
    }
    if (!first_failure) first_failure = failed[i];
    try {
      std::rethrow_exception(failed[i]);
    } catch (const GenerationError& e) {
      traces.insert(traces.end(), e.partial_traces().begin(), e.partial_traces().end());
    } catch (...) {
    }
  }
  if (first_failure) {
    std::string what;
    try {
      std::rethrow_exception(first_failure);
    } catch (const BackendError& e) {
      what = e.what();
    }  // anything else is a programming/validation error and propagates as is
    throw GenerationError(what, std::move(traces), first_failure);
  }

  LocalResult result;
  result.graph.image_id = image.image_id;
  result.graph.subject = subject;
  std::set<EntityId> referenced;
  for (const auto& t : traces) {
    if (!is_verified(t.triplet.status)) continue;
    result.graph.relations.push_back(t.triplet);
    referenced.insert(t.triplet.object_id);
  }
  std::sort(result.graph.relations.begin(), result.graph.relations.end(),
            [](const Triplet& a, const Triplet& b) {
              return std::tie(a.object_id, a.predicate) < std::tie(b.object_id, b.predicate);
            });
  for (const auto& o : objects) {
    if (referenced.contains(o.id)) result.graph.objects.push_back(o);
  }
  std::sort(result.graph.objects.begin(), result.graph.objects.end(),
            [](const Entity& a, const Entity& b) { return a.id < b.id; });
  result.traces = std::move(traces);
  return result;
}

LocalResult Engine::generate_local(const ImageRef& image, const SubjectSpec& spec,
                                   const GenerationMode& mode,
                                   std::optional<std::vector<Entity>> entities) {
  const auto ents = entities ? std::move(*entities) : detect(image, mode);
  const Entity subject = select_subject(ents, spec);
  return generate_for_subject(image, subject, ents, mode);
}

GlobalResult Engine::generate_global(const ImageRef& image, const GenerationMode& mode,
                                     std::optional<std::vector<Entity>> entities) {
  const auto ents = entities ? std::move(*entities) : detect(image, mode);
  GlobalResult result;
  std::vector<LocalSceneGraph> locals;
  for (const auto& subject : ents) {
    try {
      auto local = generate_for_subject(image, subject, ents, mode);
      locals.push_back(std::move(local.graph));
      result.traces.insert(result.traces.end(), local.traces.begin(), local.traces.end());
    } catch (const GenerationError& e) {
      result.failures.push_back({subject.id, e.what()});
      result.traces.insert(result.traces.end(), e.partial_traces().begin(),
                           e.partial_traces().end());
    } catch (const Error& e) {
      result.failures.push_back({subject.id, e.what()});
    }
  }
  result.graph = merge_global(std::move(locals));
  result.graph.image_id = image.image_id;
  return result;
}

}  // namespace elegant::pipeline
