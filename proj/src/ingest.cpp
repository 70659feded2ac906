#include "elegant/ingest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "elegant/digest.hpp"
#include "elegant/errors.hpp"

namespace elegant::ingest {

namespace fs = std::filesystem;
using nlohmann::json;

AnnotationError::AnnotationError(std::string image_id, std::string field_path,
                                 const std::string& reason)
    : ValidationError("image '" + image_id + "' at " + field_path + ": " + reason),
      image_id_(std::move(image_id)),
      field_path_(std::move(field_path)) {}

const Entity* AnnotatedImage::find_entity(EntityId id) const {
  for (const auto& e : entities) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

namespace {

template <class T>
T field(const json& obj, const char* key, const std::string& image_id, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw AnnotationError(image_id, path + "." + key, "missing field");
  }
  try {
    return obj[key].get<T>();
  } catch (const json::exception&) {
    throw AnnotationError(image_id, path + "." + key, "wrong type");
  }
}

AnnotatedImage parse_image(const json& item, std::size_t index) {
  const std::string root = "[" + std::to_string(index) + "]";
  AnnotatedImage img;
  img.image_id = field<std::string>(item, "image_id", "#" + std::to_string(index), root);
  img.width = field<int>(item, "width", img.image_id, root);
  img.height = field<int>(item, "height", img.image_id, root);
  if (img.width <= 0 || img.height <= 0) {
    throw AnnotationError(img.image_id, root + ".width", "image dimensions must be positive");
  }
  img.uri = item.value("uri", std::string());

  const json entities = item.value("entities", json::array());
  if (!entities.is_array()) throw AnnotationError(img.image_id, root + ".entities", "not an array");
  std::set<EntityId> ids;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const std::string path = root + ".entities[" + std::to_string(i) + "]";
    const auto& e = entities[i];
    const auto id = field<EntityId>(e, "id", img.image_id, path);
    if (!ids.insert(id).second) {
      throw AnnotationError(img.image_id, path + ".id", "duplicate entity id " + std::to_string(id));
    }
    const auto label = field<std::string>(e, "label", img.image_id, path);
    BBox box;
    try {
      box = e.at("bbox").get<BBox>();
    } catch (const std::exception& err) {
      throw AnnotationError(img.image_id, path + ".bbox", err.what());
    }
    if (!box.within(img.width, img.height)) {
      throw AnnotationError(img.image_id, path + ".bbox", "box exceeds image bounds");
    }
    const double conf = e.contains("confidence") ? field<double>(e, "confidence", img.image_id, path) : 1.0;
    try {
      img.entities.push_back(make_entity(id, label, box, conf, EntitySource::ground_truth));
    } catch (const ValidationError& err) {
      throw AnnotationError(img.image_id, path, err.what());
    }
  }

  const json triplets = item.value("triplets", json::array());
  if (!triplets.is_array()) throw AnnotationError(img.image_id, root + ".triplets", "not an array");
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const std::string path = root + ".triplets[" + std::to_string(i) + "]";
    const auto& t = triplets[i];
    const auto sid = field<EntityId>(t, "subject_id", img.image_id, path);
    const auto oid = field<EntityId>(t, "object_id", img.image_id, path);
    const auto predicate = normalize_label(field<std::string>(t, "predicate", img.image_id, path));
    const Entity* s = img.find_entity(sid);
    if (s == nullptr) {
      throw AnnotationError(img.image_id, path + ".subject_id",
                            "dangling reference to entity " + std::to_string(sid));
    }
    const Entity* o = img.find_entity(oid);
    if (o == nullptr) {
      throw AnnotationError(img.image_id, path + ".object_id",
                            "dangling reference to entity " + std::to_string(oid));
    }
    if (predicate.empty()) throw AnnotationError(img.image_id, path + ".predicate", "empty predicate");
    if (sid == oid) throw AnnotationError(img.image_id, path, "subject and object are the same entity");
    img.gt_triplets.push_back({*s, predicate, *o});
  }
  return img;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <class T>
std::vector<T> parse_jsonl(std::string_view text, const char* what) {
  std::vector<T> out;
  std::istringstream in{std::string(text)};
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) {
      throw ValidationError(std::string(what) + " line " + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      out.push_back(j.get<T>());
    } catch (const json::exception& e) {
      throw ValidationError(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<AnnotatedImage> parse_annotations(const json& doc) {
  if (!doc.is_array()) throw AnnotationError("", "$", "annotation file must be a JSON array");
  std::vector<AnnotatedImage> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    auto img = parse_image(doc[i], i);
    if (!seen.insert(img.image_id).second) {
      throw AnnotationError(img.image_id, "[" + std::to_string(i) + "].image_id", "duplicate image id");
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<AnnotatedImage> load_annotations(const fs::path& path) {
  const auto text = read_file(path);
  json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw ValidationError("annotation file is not valid JSON: " + path.string());
  return parse_annotations(doc);
}

json to_json(const AnnotatedImage& image) {
  json entities = json::array();
  for (const auto& e : image.entities) {
    entities.push_back({{"id", e.id}, {"label", e.label}, {"bbox", e.bbox}, {"confidence", e.confidence}});
  }
  json triplets = json::array();
  for (const auto& t : image.gt_triplets) {
    triplets.push_back({{"subject_id", t.subject.id}, {"predicate", t.predicate}, {"object_id", t.object.id}});
  }
  return {{"image_id", image.image_id}, {"width", image.width},  {"height", image.height},
          {"uri", image.uri},           {"entities", entities}, {"triplets", triplets}};
}

std::string graphs_to_jsonl(std::span<const LocalSceneGraph> graphs) {
  std::string out;
  for (const auto& g : graphs) out += json(g).dump() + "\n";
  return out;
}

std::vector<LocalSceneGraph> parse_graphs_jsonl(std::string_view text) {
  return parse_jsonl<LocalSceneGraph>(text, "graphs");
}

std::vector<LocalSceneGraph> load_graphs(const fs::path& path) {
  return parse_graphs_jsonl(read_file(path));
}

std::string traces_to_jsonl(std::span<const pipeline::VerificationTrace> traces) {
  std::string out;
  for (const auto& t : traces) out += json(t).dump() + "\n";
  return out;
}

std::vector<pipeline::VerificationTrace> parse_traces_jsonl(std::string_view text) {
  return parse_jsonl<pipeline::VerificationTrace>(text, "traces");
}

std::vector<pipeline::VerificationTrace> load_traces(const fs::path& path) {
  return parse_traces_jsonl(read_file(path));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_atomic(const fs::path& path, std::string_view content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

RunDirLock::RunDirLock(const fs::path& run_dir) : lock_path_(run_dir / ".lock") {
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw IoError("run directory is locked by another writer: " + run_dir.string());
  ::close(fd);
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

json to_json(const RunRecord& r) {
  return {{"run_id", r.run_id},
          {"manifest_sha256", r.manifest_sha256},
          {"files", r.files},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.value("run_id", std::string());
  r.manifest_sha256 = j.value("manifest_sha256", std::string());
  r.files = j.value("files", std::vector<std::string>{});
  r.started_at = j.value("started_at", std::string());
  r.finished_at = j.value("finished_at", std::string());
  return r;
}

RunRecord persist_results(const RunOutputs& outputs, const fs::path& run_dir) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());
  RunDirLock lock(run_dir);

  RunRecord record;
  const auto index_path = run_dir / "run.json";
  if (fs::exists(index_path)) {
    json prev = json::parse(read_file(index_path), nullptr, false);
    if (!prev.is_discarded()) record = run_record_from_json(prev);
    fs::remove(index_path, ec);
    if (ec) throw IoError("cannot remove stale index " + index_path.string());
  }
  record.started_at = utc_now();

  std::set<std::string> files(record.files.begin(), record.files.end());
  auto emit = [&](const std::string& name, std::string_view content) {
    write_atomic(run_dir / name, content);
    files.insert(name);
  };

  if (outputs.manifest) {
    emit("manifest.json", *outputs.manifest);
    record.manifest_sha256 = sha256_hex(*outputs.manifest);
  }
  if (outputs.config) emit("config.json", outputs.config->dump(2) + "\n");
  if (outputs.graphs) emit("graphs.jsonl", graphs_to_jsonl(*outputs.graphs));
  if (outputs.traces) emit("traces.jsonl", traces_to_jsonl(*outputs.traces));
  if (outputs.eclipse_report) emit("eclipse_report.json", outputs.eclipse_report->dump(2) + "\n");
  if (outputs.recall_report) emit("recall_report.json", outputs.recall_report->dump(2) + "\n");
  if (outputs.recall_csv) emit("recall_report.csv", *outputs.recall_csv);

  record.files.assign(files.begin(), files.end());
  record.run_id = record.manifest_sha256.empty() ? "adhoc" : record.manifest_sha256.substr(0, 16);
  record.finished_at = utc_now();
  write_atomic(index_path, to_json(record).dump(2) + "\n");
  return record;
}

}  // namespace elegant::ingest
