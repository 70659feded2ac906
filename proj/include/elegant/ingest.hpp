#pragma once

// Canonical annotation loading and run-output persistence.
//
// Annotation file: a JSON array of
//   {image_id, width, height, uri,
//    entities: [{id, label, bbox: [x0, y0, x1, y1], confidence?}],
//    triplets: [{subject_id, predicate, object_id}]}

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "elegant/backends.hpp"
#include "elegant/closedset.hpp"
#include "elegant/pipeline.hpp"
#include "elegant/scene.hpp"
#include "json.hpp"

namespace elegant::ingest {

/// Schema or invariant violation, located by image id and JSON path.
class AnnotationError : public ValidationError {
 public:
  AnnotationError(std::string image_id, std::string field_path, const std::string& reason);

  const std::string& image_id() const { return image_id_; }
  const std::string& field_path() const { return field_path_; }

 private:
  std::string image_id_;
  std::string field_path_;
};

struct AnnotatedImage {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::string uri;
  std::vector<Entity> entities;
  std::vector<closedset::GroundTruthTriplet> gt_triplets;

  backends::ImageRef ref() const { return {image_id, uri, std::nullopt, width, height}; }
  const Entity* find_entity(EntityId id) const;
};

std::vector<AnnotatedImage> parse_annotations(const nlohmann::json& doc);
std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path);
nlohmann::json to_json(const AnnotatedImage& image);

std::string graphs_to_jsonl(std::span<const LocalSceneGraph> graphs);
std::vector<LocalSceneGraph> parse_graphs_jsonl(std::string_view text);
std::vector<LocalSceneGraph> load_graphs(const std::filesystem::path& path);

std::string traces_to_jsonl(std::span<const pipeline::VerificationTrace> traces);
std::vector<pipeline::VerificationTrace> parse_traces_jsonl(std::string_view text);
std::vector<pipeline::VerificationTrace> load_traces(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

/// Writes `<path>.tmp` then renames over `path`. On failure the temp file is
/// removed and IoError is thrown.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// Exclusive lock on a run directory via an O_EXCL lock file.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& run_dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

struct RunOutputs {
  std::optional<std::string> manifest;  // raw bytes, stored as manifest.json
  std::optional<nlohmann::json> config;  // resolved config, stored as config.json
  std::optional<std::vector<LocalSceneGraph>> graphs;
  std::optional<std::vector<pipeline::VerificationTrace>> traces;
  std::optional<nlohmann::json> eclipse_report;
  std::optional<nlohmann::json> recall_report;
  std::optional<std::string> recall_csv;
};

struct RunRecord {
  std::string run_id;
  std::string manifest_sha256;
  std::vector<std::string> files;
  std::string started_at;
  std::string finished_at;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

/// Writes every present output atomically, then the run.json index last.
/// Any existing index is removed first and files it listed are kept in the
/// new one, so a failed write never leaves an index behind.
RunRecord persist_results(const RunOutputs& outputs, const std::filesystem::path& run_dir);

}  // namespace elegant::ingest
