#include "elegant/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "elegant/errors.hpp"

namespace elegant {

std::string normalize_label(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

BBox BBox::make(double x_min, double y_min, double x_max, double y_max) {
  BBox b{x_min, y_min, x_max, y_max};
  if (!b.valid()) {
    throw ValidationError("invalid box [" + std::to_string(x_min) + ", " +
                          std::to_string(y_min) + ", " + std::to_string(x_max) +
                          ", " + std::to_string(y_max) + "]");
  }
  return b;
}

bool BBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min >= 0.0 && y_min >= 0.0 &&
         x_min < x_max && y_min < y_max;
}

bool BBox::within(double width, double height) const {
  return x_max <= width && y_max <= height;
}

bool BBox::contains(Point p) const {
  return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
}

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw ValidationError("iou: degenerate box");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

Entity make_entity(EntityId id, std::string_view label, const BBox& bbox,
                   double confidence, EntitySource source) {
  Entity e{id, normalize_label(label), bbox, confidence, source};
  if (e.label.empty()) {
    throw ValidationError("entity " + std::to_string(id) + ": empty label");
  }
  if (!bbox.valid()) {
    throw ValidationError("entity " + std::to_string(id) + ": invalid box");
  }
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ValidationError("entity " + std::to_string(id) +
                          ": confidence outside [0,1]");
  }
  return e;
}

Triplet make_triplet(EntityId subject_id, std::string_view predicate,
                     EntityId object_id, TripletStatus status,
                     std::optional<double> confidence) {
  Triplet t{subject_id, normalize_label(predicate), object_id, status,
            confidence};
  if (t.predicate.empty()) throw ValidationError("triplet: empty predicate");
  if (subject_id == object_id) {
    throw ValidationError("triplet: subject and object are the same entity " +
                          std::to_string(subject_id));
  }
  if (confidence && !(*confidence >= 0.0 && *confidence <= 1.0)) {
    throw ValidationError("triplet: confidence outside [0,1]");
  }
  return t;
}

const Entity* LocalSceneGraph::find_object(EntityId id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

TripletLabels LocalSceneGraph::labels_of(const Triplet& t) const {
  const Entity* obj = find_object(t.object_id);
  if (obj == nullptr) {
    throw ValidationError("relation references unknown object " +
                          std::to_string(t.object_id));
  }
  return {subject.label, t.predicate, obj->label};
}

void LocalSceneGraph::validate() const {
  std::set<EntityId> ids{subject.id};
  for (const auto& o : objects) {
    if (!ids.insert(o.id).second) {
      throw ConflictError("graph " + image_id + ": duplicate entity id " +
                          std::to_string(o.id));
    }
  }
  for (const auto& r : relations) {
    if (r.subject_id != subject.id) {
      throw ValidationError("graph " + image_id +
                            ": relation subject differs from graph subject");
    }
    if (r.object_id == subject.id || find_object(r.object_id) == nullptr) {
      throw ValidationError("graph " + image_id +
                            ": relation object not among objects");
    }
    if (!is_verified(r.status)) {
      throw ValidationError("graph " + image_id + ": unverified relation");
    }
  }
}

std::size_t GlobalSceneGraph::triplet_count() const {
  std::size_t n = 0;
  for (const auto& [id, g] : locals) n += g.relations.size();
  return n;
}

GlobalSceneGraph merge_global(std::vector<LocalSceneGraph> locals) {
  GlobalSceneGraph out;
  for (auto& g : locals) {
    if (out.locals.empty()) {
      out.image_id = g.image_id;
    } else if (g.image_id != out.image_id) {
      throw ValidationError("merge_global: mixed image ids '" + out.image_id +
                            "' and '" + g.image_id + "'");
    }
    const EntityId sid = g.subject.id;
    if (!out.locals.emplace(sid, std::move(g)).second) {
      throw ConflictError("merge_global: duplicate subject " +
                          std::to_string(sid));
    }
  }
  return out;
}

std::string to_string(EntitySource s) {
  return s == EntitySource::detected ? "detected" : "ground_truth";
}

std::string to_string(TripletStatus s) {
  switch (s) {
    case TripletStatus::candidate: return "candidate";
    case TripletStatus::verified_direct: return "verified_direct";
    case TripletStatus::verified_coca: return "verified_coca";
    case TripletStatus::rejected: return "rejected";
  }
  return "candidate";
}

EntitySource entity_source_from_string(std::string_view s) {
  if (s == "detected") return EntitySource::detected;
  if (s == "ground_truth") return EntitySource::ground_truth;
  throw ValidationError("unknown entity source '" + std::string(s) + "'");
}

TripletStatus triplet_status_from_string(std::string_view s) {
  if (s == "candidate") return TripletStatus::candidate;
  if (s == "verified_direct") return TripletStatus::verified_direct;
  if (s == "verified_coca") return TripletStatus::verified_coca;
  if (s == "rejected") return TripletStatus::rejected;
  throw ValidationError("unknown triplet status '" + std::string(s) + "'");
}

void to_json(nlohmann::json& j, const BBox& b) {
  j = nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

void from_json(const nlohmann::json& j, BBox& b) {
  if (!j.is_array() || j.size() != 4) {
    throw ValidationError("bbox must be an array of 4 numbers");
  }
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError("bbox entries must be numbers");
  }
  b = BBox::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                 j[3].get<double>());
}

void to_json(nlohmann::json& j, const Entity& e) {
  j = {{"id", e.id},
       {"label", e.label},
       {"bbox", e.bbox},
       {"confidence", e.confidence},
       {"source", to_string(e.source)}};
}

void from_json(const nlohmann::json& j, Entity& e) {
  e = make_entity(j.at("id").get<EntityId>(), j.at("label").get<std::string>(),
                  j.at("bbox").get<BBox>(), j.value("confidence", 1.0),
                  entity_source_from_string(
                      j.value("source", std::string("detected"))));
}

void to_json(nlohmann::json& j, const Triplet& t) {
  j = {{"subject_id", t.subject_id},
       {"predicate", t.predicate},
       {"object_id", t.object_id},
       {"status", to_string(t.status)}};
  if (t.confidence) j["confidence"] = *t.confidence;
}

void from_json(const nlohmann::json& j, Triplet& t) {
  std::optional<double> conf;
  if (j.contains("confidence") && !j["confidence"].is_null()) {
    conf = j["confidence"].get<double>();
  }
  t = make_triplet(j.at("subject_id").get<EntityId>(),
                   j.at("predicate").get<std::string>(),
                   j.at("object_id").get<EntityId>(),
                   triplet_status_from_string(
                       j.value("status", std::string("candidate"))),
                   conf);
}

void to_json(nlohmann::json& j, const LocalSceneGraph& g) {
  j = {{"image_id", g.image_id},
       {"subject", g.subject},
       {"objects", g.objects},
       {"relations", g.relations}};
}

void from_json(const nlohmann::json& j, LocalSceneGraph& g) {
  g.image_id = j.at("image_id").get<std::string>();
  g.subject = j.at("subject").get<Entity>();
  g.objects = j.at("objects").get<std::vector<Entity>>();
  g.relations = j.at("relations").get<std::vector<Triplet>>();
  g.validate();
}

void to_json(nlohmann::json& j, const GlobalSceneGraph& g) {
  auto locals = nlohmann::json::array();
  for (const auto& [id, local] : g.locals) locals.push_back(local);
  j = {{"image_id", g.image_id}, {"locals", std::move(locals)}};
}

void from_json(const nlohmann::json& j, GlobalSceneGraph& g) {
  auto locals = j.at("locals").get<std::vector<LocalSceneGraph>>();
  g = merge_global(std::move(locals));
  if (g.locals.empty()) g.image_id = j.at("image_id").get<std::string>();
}

}  // namespace elegant
