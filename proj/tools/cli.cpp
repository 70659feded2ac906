#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "CLI11.hpp"
#include "elegant/closedset.hpp"
#include "elegant/eclipse.hpp"
#include "elegant/errors.hpp"
#include "elegant/ingest.hpp"
#include "elegant/pipeline.hpp"
#include "elegant/prompts.hpp"

namespace elegant::cli {

namespace fs = std::filesystem;
using backends::Role;
using nlohmann::json;

namespace {

constexpr Role kRoles[] = {Role::observer, Role::thinker, Role::verifier, Role::embedder};

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string env_key(Role role, const char* suffix) {
  return "ELEGANT_" + upper(backends::to_string(role)) + "_" + suffix;
}

// Raw flag storage; presence is read back from the parsed subcommand.
struct Flags {
  std::string config, mode, vocab, calibration_route, aggregation, match;
  std::string mock_fixtures, record_fixtures, prompts_dir, out_dir;
  std::string manifest, graphs, annotations, question, image_id, output;
  std::vector<double> alpha;
  std::vector<std::size_t> k;
  std::size_t parallelism = 0;
  double iou = 0.0, timeout = 0.0, m_star = 0.0, x_min = 1.0, x_max = 0.0;
  int retries = 0;
  std::size_t steps = 400;
  bool no_coca = false, mock_lenient = false;
  std::map<Role, std::string> urls;
};

bool given(const CLI::App* app, const std::string& name) {
  const auto* opt = app->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

// --- resolution: defaults < env < config file < flags ----------------------

void apply_env(CliConfig& cfg, const Env& env) {
  for (Role r : kRoles) {
    if (auto it = env.find(env_key(r, "URL")); it != env.end() && !it->second.empty()) {
      cfg.backends[r].url = it->second;
    }
  }
  if (auto it = env.find("ELEGANT_MOCK_FIXTURES"); it != env.end() && !it->second.empty()) {
    cfg.mock_fixtures = it->second;
  }
}

template <class T>
T config_value(const json& doc, const char* key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: '") + key + "' has the wrong type");
  }
}

void apply_config_file(CliConfig& cfg, const fs::path& path) {
  json doc = json::parse(ingest::read_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw ValidationError("config file is not a JSON object: " + path.string());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    return fs::path(p).is_absolute() ? p : (base / p).string();
  };
  static const std::set<std::string> kKnown = {
      "mode",        "vocab",       "alpha",         "k",             "parallelism",
      "coca",        "calibration_route", "aggregation", "match",     "iou_threshold",
      "backends",    "mock_fixtures", "mock_lenient", "record_fixtures", "prompts_dir",
      "out_dir"};
  for (const auto& [key, value] : doc.items()) {
    if (!kKnown.contains(key)) throw ValidationError("config: unknown key '" + key + "'");
  }
  if (doc.contains("mode")) cfg.mode = config_value<std::string>(doc, "mode");
  if (doc.contains("vocab")) cfg.vocab = config_value<std::string>(doc, "vocab");
  if (doc.contains("alpha")) {
    cfg.alphas = doc["alpha"].is_array() ? config_value<std::vector<double>>(doc, "alpha")
                                         : std::vector<double>{config_value<double>(doc, "alpha")};
  }
  if (doc.contains("k")) {
    cfg.ks = doc["k"].is_array() ? config_value<std::vector<std::size_t>>(doc, "k")
                                 : std::vector<std::size_t>{config_value<std::size_t>(doc, "k")};
  }
  if (doc.contains("parallelism")) cfg.parallelism = config_value<std::size_t>(doc, "parallelism");
  if (doc.contains("coca")) cfg.coca = config_value<bool>(doc, "coca");
  if (doc.contains("calibration_route")) {
    cfg.calibration_route = config_value<std::string>(doc, "calibration_route");
  }
  if (doc.contains("aggregation")) cfg.aggregation = config_value<std::string>(doc, "aggregation");
  if (doc.contains("match")) cfg.match = config_value<std::string>(doc, "match");
  if (doc.contains("iou_threshold")) cfg.iou_threshold = config_value<double>(doc, "iou_threshold");
  if (doc.contains("mock_fixtures")) {
    cfg.mock_fixtures = resolve(config_value<std::string>(doc, "mock_fixtures"));
  }
  if (doc.contains("mock_lenient")) cfg.mock_lenient = config_value<bool>(doc, "mock_lenient");
  if (doc.contains("record_fixtures")) {
    cfg.record_fixtures = resolve(config_value<std::string>(doc, "record_fixtures"));
  }
  if (doc.contains("prompts_dir")) {
    cfg.prompts_dir = resolve(config_value<std::string>(doc, "prompts_dir"));
  }
  if (doc.contains("out_dir")) cfg.out_dir = resolve(config_value<std::string>(doc, "out_dir"));

  if (doc.contains("backends")) {
    const auto& b = doc["backends"];
    if (!b.is_object()) throw ValidationError("config: 'backends' must be an object");
    for (const auto& [name, entry] : b.items()) {
      const Role role = backends::role_from_string(name);
      if (!entry.is_object()) throw ValidationError("config: backends." + name + " must be an object");
      if (entry.contains("token")) {
        throw ValidationError("config: tokens are read only from " + env_key(role, "TOKEN"));
      }
      auto& bc = cfg.backends[role];
      for (const auto& [key, value] : entry.items()) {
        if (key == "url") {
          bc.url = config_value<std::string>(entry, "url");
        } else if (key == "timeout_s") {
          bc.timeout_s = config_value<double>(entry, "timeout_s");
        } else if (key == "max_retries") {
          bc.max_retries = config_value<int>(entry, "max_retries");
        } else if (key == "backoff_initial_s") {
          bc.backoff_initial_s = config_value<double>(entry, "backoff_initial_s");
        } else {
          throw ValidationError("config: unknown key backends." + name + "." + key);
        }
      }
    }
  }
}

void apply_flags(CliConfig& cfg, const Flags& f, const CLI::App* app) {
  if (given(app, "--mode")) cfg.mode = f.mode;
  if (given(app, "--vocab")) cfg.vocab = f.vocab;
  if (given(app, "--alpha")) cfg.alphas = f.alpha;
  if (given(app, "--k")) cfg.ks = f.k;
  if (given(app, "--parallelism")) cfg.parallelism = f.parallelism;
  if (given(app, "--no-coca")) cfg.coca = false;
  if (given(app, "--calibration-route")) cfg.calibration_route = f.calibration_route;
  if (given(app, "--aggregation")) cfg.aggregation = f.aggregation;
  if (given(app, "--match")) cfg.match = f.match;
  if (given(app, "--iou-threshold")) cfg.iou_threshold = f.iou;
  if (given(app, "--mock-fixtures")) cfg.mock_fixtures = f.mock_fixtures;
  if (given(app, "--mock-lenient")) cfg.mock_lenient = true;
  if (given(app, "--record-fixtures")) cfg.record_fixtures = f.record_fixtures;
  if (given(app, "--prompts-dir")) cfg.prompts_dir = f.prompts_dir;
  if (given(app, "--out-dir")) cfg.out_dir = f.out_dir;
  for (Role r : kRoles) {
    if (given(app, "--backend-" + backends::to_string(r) + "-url")) cfg.backends[r].url = f.urls.at(r);
  }
  if (given(app, "--timeout")) {
    for (Role r : kRoles) cfg.backends[r].timeout_s = f.timeout;
  }
  if (given(app, "--retries")) {
    for (Role r : kRoles) cfg.backends[r].max_retries = f.retries;
  }
}

void finalize(CliConfig& cfg, const Env& env) {
  for (Role r : kRoles) {
    auto& bc = cfg.backends[r];
    bc.mode = cfg.mock_fixtures ? backends::BackendMode::mock : backends::BackendMode::live;
    if (auto it = env.find(env_key(r, "TOKEN")); it != env.end() && !it->second.empty()) {
      bc.token = it->second;
    }
  }
  if (cfg.parallelism == 0) throw ValidationError("--parallelism must be >= 1");
  if (cfg.alphas.empty()) throw ValidationError("--alpha needs at least one value");
  for (double a : cfg.alphas) {
    if (!(a > 0.0)) throw ValidationError("--alpha values must be > 0");
  }
  if (cfg.ks.empty()) throw ValidationError("--k needs at least one value");
  for (auto k : cfg.ks) {
    if (k == 0) throw ValidationError("--k values must be >= 1");
  }
  pipeline::calibration_route_from_string(cfg.calibration_route);
  if (cfg.aggregation != "per_local" && cfg.aggregation != "per_image") {
    throw ValidationError("--aggregation must be per_local or per_image");
  }
  if (cfg.match != "gt-boxes" && cfg.match != "detected") {
    throw ValidationError("--match must be gt-boxes or detected");
  }
  if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0)) {
    throw ValidationError("--iou-threshold must lie in (0, 1]");
  }
  if (cfg.mock_fixtures && cfg.record_fixtures) {
    throw ValidationError("--mock-fixtures and --record-fixtures are mutually exclusive");
  }
}

// --- mode and vocabulary ------------------------------------------------------

struct ModeSpec {
  enum class Kind { open, closed, gt_boxes } kind = Kind::open;
  std::optional<std::string> vocab;
};

ModeSpec parse_mode(const CliConfig& cfg) {
  ModeSpec m;
  if (cfg.mode == "open") return m;
  if (cfg.mode == "gt-boxes") {
    m.kind = ModeSpec::Kind::gt_boxes;
    return m;
  }
  if (cfg.mode == "closed" || cfg.mode.rfind("closed:", 0) == 0) {
    m.kind = ModeSpec::Kind::closed;
    if (cfg.mode.size() > 7) m.vocab = cfg.mode.substr(7);
    if (m.vocab && cfg.vocab && *m.vocab != *cfg.vocab) {
      throw ValidationError("--mode " + cfg.mode + " conflicts with --vocab " + *cfg.vocab);
    }
    if (!m.vocab) m.vocab = cfg.vocab;
    if (!m.vocab) throw ValidationError("closed mode needs a vocabulary (closed:<id> or --vocab)");
    return m;
  }
  throw ValidationError("--mode must be open, gt-boxes or closed:<vocab>, got '" + cfg.mode + "'");
}

closedset::RelationVocab resolve_vocab(const std::string& spec) {
  if (fs::exists(spec)) return closedset::RelationVocab::from_file(spec, fs::path(spec).stem().string());
  return closedset::RelationVocab::builtin(spec);
}

// --- backends -----------------------------------------------------------------

class RoutingTransport : public backends::Transport {
 public:
  explicit RoutingTransport(std::map<Role, std::shared_ptr<backends::Transport>> routes)
      : routes_(std::move(routes)) {}

  backends::Reply post(Role role, const json& request) override {
    auto it = routes_.find(role);
    if (it == routes_.end()) {
      throw ValidationError("no backend configured for role " + backends::to_string(role));
    }
    return it->second->post(role, request);
  }

 private:
  std::map<Role, std::shared_ptr<backends::Transport>> routes_;
};

struct Wiring {
  std::shared_ptr<backends::Transport> transport;
  std::shared_ptr<backends::RecordingTransport> recorder;
  std::shared_ptr<backends::ExchangeLog> log = std::make_shared<backends::ExchangeLog>();
};

Wiring wire_backends(const CliConfig& cfg, std::initializer_list<Role> needed) {
  Wiring w;
  if (cfg.mock_fixtures) {
    w.transport = backends::MockTransport::from_file(*cfg.mock_fixtures, !cfg.mock_lenient);
    return w;
  }
  std::map<Role, std::shared_ptr<backends::Transport>> routes;
  for (Role r : needed) {
    const auto& bc = cfg.backends.at(r);
    if (bc.url.empty()) {
      throw ValidationError("no URL for the " + backends::to_string(r) + " backend (--backend-" +
                            backends::to_string(r) + "-url or " + env_key(r, "URL") + ")");
    }
    routes[r] = std::make_shared<backends::HttpTransport>(bc);
  }
  w.transport = std::make_shared<RoutingTransport>(std::move(routes));
  if (cfg.record_fixtures) {
    w.recorder = std::make_shared<backends::RecordingTransport>(w.transport);
    w.transport = w.recorder;
  }
  return w;
}

// New recordings are merged into an existing fixture file so several
// subcommands can share one.
void save_recording(const Wiring& w, const CliConfig& cfg) {
  if (!w.recorder || !cfg.record_fixtures) return;
  const fs::path path = *cfg.record_fixtures;
  std::map<std::pair<Role, std::string>, backends::FixtureEntry> keyed;
  std::vector<backends::FixtureEntry> unkeyed;
  if (fs::exists(path)) {
    for (auto& e : backends::load_fixtures(path)) {
      if (e.request_sha256) {
        keyed[{e.role, *e.request_sha256}] = std::move(e);
      } else {
        unkeyed.push_back(std::move(e));
      }
    }
  }
  for (auto& e : w.recorder->fixtures()) keyed[{e.role, *e.request_sha256}] = std::move(e);
  std::vector<backends::FixtureEntry> merged;
  for (auto& [key, e] : keyed) merged.push_back(std::move(e));
  merged.insert(merged.end(), unkeyed.begin(), unkeyed.end());
  ingest::write_atomic(path, backends::fixtures_to_json(merged).dump(2) + "\n");
}

// --- manifest -----------------------------------------------------------------

struct ManifestImage {
  backends::ImageRef ref;
  fs::path file;
  std::optional<pipeline::SubjectSpec> subject;
};

struct Manifest {
  std::string bytes;
  std::vector<ManifestImage> images;

  const ManifestImage& find(const std::string& image_id) const {
    for (const auto& m : images) {
      if (m.ref.image_id == image_id) return m;
    }
    throw ValidationError("image '" + image_id + "' is not in the manifest");
  }
};

// {"images": [{image_id, uri, width?, height?, subject?}]}; uri is relative
// to the manifest's directory unless absolute.
Manifest load_manifest(const fs::path& path) {
  Manifest m;
  m.bytes = ingest::read_file(path);
  json doc = json::parse(m.bytes, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("images") || !doc["images"].is_array()) {
    throw ValidationError("manifest must be an object with an 'images' array: " + path.string());
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc["images"].size(); ++i) {
    const auto& item = doc["images"][i];
    const std::string where = "manifest images[" + std::to_string(i) + "]";
    if (!item.is_object() || !item.contains("image_id") || !item.contains("uri")) {
      throw ValidationError(where + ": image_id and uri are required");
    }
    ManifestImage mi;
    try {
      mi.ref.image_id = item["image_id"].get<std::string>();
      mi.ref.uri = item["uri"].get<std::string>();
      mi.ref.width = item.value("width", 0);
      mi.ref.height = item.value("height", 0);
      if (item.contains("subject")) mi.subject = item["subject"].get<pipeline::SubjectSpec>();
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!seen.insert(mi.ref.image_id).second) {
      throw ValidationError(where + ": duplicate image_id " + mi.ref.image_id);
    }
    mi.file = fs::path(mi.ref.uri).is_absolute() ? fs::path(mi.ref.uri) : path.parent_path() / mi.ref.uri;
    if (mi.ref.width <= 0 || mi.ref.height <= 0) {
      const Image img = load_pnm(mi.file);
      mi.ref.width = img.width;
      mi.ref.height = img.height;
    }
    m.images.push_back(std::move(mi));
  }
  return m;
}

const prompts::TemplateSet& templates_for(const CliConfig& cfg, std::optional<prompts::TemplateSet>& holder) {
  if (!cfg.prompts_dir) return prompts::TemplateSet::builtin();
  holder = prompts::TemplateSet::from_directory(*cfg.prompts_dir);
  return *holder;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// --- subcommands --------------------------------------------------------------

int cmd_generate(const CliConfig& cfg, const Flags& f, std::ostream& out, std::ostream& err) {
  require(f.manifest, "--manifest");
  const Manifest manifest = load_manifest(f.manifest);
  const ModeSpec mode = parse_mode(cfg);

  pipeline::GenerationMode gen_mode = pipeline::GenerationMode::open();
  if (mode.kind == ModeSpec::Kind::closed) {
    gen_mode = pipeline::GenerationMode::closed(resolve_vocab(*mode.vocab));
  }
  std::map<std::string, ingest::AnnotatedImage> annotations;
  if (mode.kind != ModeSpec::Kind::open) {
    require(f.annotations, "--annotations");
    for (auto& a : ingest::load_annotations(f.annotations)) annotations.emplace(a.image_id, std::move(a));
  }

  std::optional<prompts::TemplateSet> holder;
  const auto& templates = templates_for(cfg, holder);
  Wiring w = mode.kind == ModeSpec::Kind::open
                 ? wire_backends(cfg, {Role::observer, Role::thinker, Role::verifier})
                 : wire_backends(cfg, {Role::thinker, Role::verifier});
  pipeline::PipelineConfig pc;
  pc.coca_enabled = cfg.coca;
  pc.calibration_route = pipeline::calibration_route_from_string(cfg.calibration_route);
  pc.max_in_flight = cfg.parallelism;
  pipeline::Engine engine({std::make_shared<backends::WireObserver>(w.transport, w.log),
                           std::make_shared<backends::WireThinker>(w.transport, w.log),
                           std::make_shared<backends::WireVerifier>(w.transport, w.log)},
                          pc, templates);

  std::vector<LocalSceneGraph> graphs;
  std::vector<pipeline::VerificationTrace> traces;
  std::vector<std::string> failures;
  try {
    for (const auto& img : manifest.images) {
      std::optional<std::vector<Entity>> injected;
      if (mode.kind != ModeSpec::Kind::open) {
        auto it = annotations.find(img.ref.image_id);
        if (it == annotations.end()) {
          throw ValidationError("no annotations for image '" + img.ref.image_id + "'");
        }
        injected = it->second.entities;
      }
      if (img.subject) {
        auto local = engine.generate_local(img.ref, *img.subject, gen_mode, injected);
        graphs.push_back(std::move(local.graph));
        traces.insert(traces.end(), local.traces.begin(), local.traces.end());
      } else {
        auto global = engine.generate_global(img.ref, gen_mode, injected);
        for (auto& [id, g] : global.graph.locals) graphs.push_back(std::move(g));
        traces.insert(traces.end(), global.traces.begin(), global.traces.end());
        for (const auto& fail : global.failures) {
          failures.push_back(img.ref.image_id + " subject " + std::to_string(fail.subject_id) + ": " +
                             fail.message);
        }
      }
    }
  } catch (...) {
    save_recording(w, cfg);
    throw;
  }
  save_recording(w, cfg);

  std::size_t relations = 0;
  for (const auto& g : graphs) relations += g.relations.size();
  if (cfg.out_dir) {
    ingest::RunOutputs outputs;
    outputs.manifest = manifest.bytes;
    outputs.config = to_json(cfg);
    outputs.graphs = graphs;
    outputs.traces = traces;
    ingest::persist_results(outputs, *cfg.out_dir);
  } else {
    out << ingest::graphs_to_jsonl(graphs);
  }
  err << "generated " << graphs.size() << " local graphs with " << relations << " relations from "
      << manifest.images.size() << " images\n";
  for (const auto& fail : failures) err << "failed: " << fail << "\n";
  return failures.empty() ? ExitCode::ok : ExitCode::backend;
}

int cmd_eval_open(const CliConfig& cfg, const Flags& f, std::ostream& out, std::ostream&) {
  require(f.graphs, "--graphs");
  require(f.manifest, "--manifest");
  const auto graphs = ingest::load_graphs(f.graphs);
  const Manifest manifest = load_manifest(f.manifest);
  Wiring w = wire_backends(cfg, {Role::embedder});
  backends::WireEmbedder embedder(w.transport, w.log);
  eclipse::TripletScorer scorer(embedder, [&](const std::string& image_id) {
    const auto& entry = manifest.find(image_id);
    Image img = load_pnm(entry.file);
    if (img.width != entry.ref.width || img.height != entry.ref.height) {
      throw ValidationError("image '" + image_id + "' size differs from the manifest");
    }
    return img;
  });

  std::vector<std::vector<double>> scores;
  try {
    for (const auto& per_graph : scorer.score_all(graphs, cfg.parallelism)) {
      auto& row = scores.emplace_back();
      for (const auto& s : per_graph) row.push_back(s.clip_score);
    }
  } catch (...) {
    save_recording(w, cfg);
    throw;
  }
  save_recording(w, cfg);

  const auto agg =
      cfg.aggregation == "per_image" ? eclipse::Aggregation::per_image : eclipse::Aggregation::per_local;
  json reports = json::array();
  for (double alpha : cfg.alphas) {
    const auto report = eclipse::dataset_eclipse(graphs, scores, alpha, agg);
    out << "alpha=" << fmt("%g", alpha) << " m_star=" << fmt("%.6f", report.m_star)
        << " eclipse=" << fmt("%.6f", report.dataset_eclipse) << "\n";
    reports.push_back(eclipse::to_json(report));
  }
  if (cfg.out_dir) {
    ingest::RunOutputs outputs;
    outputs.manifest = manifest.bytes;
    outputs.config = to_json(cfg);
    outputs.eclipse_report = json{{"aggregation", cfg.aggregation}, {"reports", std::move(reports)}};
    ingest::persist_results(outputs, *cfg.out_dir);
  }
  return ExitCode::ok;
}

int cmd_eval_closed(const CliConfig& cfg, const Flags& f, std::ostream& out, std::ostream&) {
  require(f.graphs, "--graphs");
  require(f.annotations, "--annotations");
  std::optional<std::string> vocab_spec = cfg.vocab;
  if (!vocab_spec && cfg.mode.rfind("closed:", 0) == 0) vocab_spec = cfg.mode.substr(7);
  const auto vocab = resolve_vocab(vocab_spec.value_or("visualds20"));
  const auto graphs = ingest::load_graphs(f.graphs);
  const auto annotations = ingest::load_annotations(f.annotations);

  std::map<std::string, std::vector<LocalSceneGraph>> by_image;
  for (const auto& g : graphs) by_image[g.image_id].push_back(g);
  std::vector<closedset::ImageEval> evals;
  for (const auto& a : annotations) {
    closedset::ImageEval e;
    e.image_id = a.image_id;
    e.gts = a.gt_triplets;
    if (auto it = by_image.find(a.image_id); it != by_image.end()) {
      e.predictions = closedset::predictions_from(it->second);
      by_image.erase(it);
    }
    evals.push_back(std::move(e));
  }
  if (!by_image.empty()) {
    throw ValidationError("graphs reference image '" + by_image.begin()->first +
                          "' which has no annotations");
  }
  const auto mode = cfg.match == "detected" ? closedset::MatchMode::detected(cfg.iou_threshold)
                                            : closedset::MatchMode::gt_boxes();
  const auto report = closedset::evaluate(evals, cfg.ks, vocab, mode);
  const auto csv = closedset::to_csv(report);
  out << csv;
  if (cfg.out_dir) {
    ingest::RunOutputs outputs;
    outputs.config = to_json(cfg);
    outputs.recall_report = closedset::to_json(report);
    outputs.recall_csv = csv;
    ingest::persist_results(outputs, *cfg.out_dir);
  }
  return ExitCode::ok;
}

int cmd_stats(const CliConfig& cfg, const Flags& f, std::ostream& out, std::ostream&) {
  require(f.graphs, "--graphs");
  const auto graphs = ingest::load_graphs(f.graphs);
  const auto preds = closedset::predictions_from(graphs);
  std::size_t direct = 0, coca = 0, nonempty = 0;
  for (const auto& g : graphs) {
    if (!g.relations.empty()) ++nonempty;
    for (const auto& t : g.relations) {
      if (t.status == TripletStatus::verified_direct) ++direct;
      if (t.status == TripletStatus::verified_coca) ++coca;
    }
  }
  const auto d = closedset::diversity_stats(preds);
  json stats = {{"graphs", graphs.size()},
                {"nonempty_graphs", nonempty},
                {"triplets", preds.size()},
                {"verified_direct", direct},
                {"verified_coca", coca},
                {"entity_categories", d.entity_categories},
                {"relation_categories", d.relation_categories},
                {"triplet_categories", d.triplet_categories}};
  out << stats.dump(2) << "\n";
  if (cfg.out_dir) {
    fs::create_directories(*cfg.out_dir);
    ingest::write_atomic(fs::path(*cfg.out_dir) / "stats.json", stats.dump(2) + "\n");
  }
  return ExitCode::ok;
}

int cmd_penalty_curve(const CliConfig& cfg, const Flags& f, const CLI::App* app, std::ostream& out) {
  if (!given(app, "--m-star")) throw ValidationError("--m-star is required");
  const double x_max = given(app, "--x-max") ? f.x_max : 5.0 * f.m_star;
  if (!(f.x_min >= 1.0 && x_max > f.x_min)) throw ValidationError("need 1 <= --x-min < --x-max");
  if (f.steps == 0) throw ValidationError("--steps must be >= 1");
  std::string csv = "alpha,x,penalty\n";
  for (double alpha : cfg.alphas) {
    const auto params = eclipse::PenaltyParams::make(f.m_star, alpha);
    for (std::size_t i = 0; i <= f.steps; ++i) {
      const double x = f.x_min + (x_max - f.x_min) * static_cast<double>(i) / static_cast<double>(f.steps);
      csv += fmt("%g", alpha) + "," + fmt("%.10g", x) + "," + fmt("%.12g", eclipse::penalty(x, params)) + "\n";
    }
  }
  if (f.output.empty()) {
    out << csv;
  } else {
    ingest::write_atomic(f.output, csv);
  }
  return ExitCode::ok;
}

int cmd_vqa_prompt(const CliConfig& cfg, const Flags& f, std::ostream& out) {
  require(f.question, "--question");
  require(f.graphs, "--graphs");
  auto graphs = ingest::load_graphs(f.graphs);
  if (!f.image_id.empty()) {
    std::erase_if(graphs, [&](const LocalSceneGraph& g) { return g.image_id != f.image_id; });
  }
  std::optional<prompts::TemplateSet> holder;
  out << pipeline::build_vqa_prompt(f.question, graphs, templates_for(cfg, holder)) << "\n";
  return ExitCode::ok;
}

// --- flag registration --------------------------------------------------------

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file");
  sub->add_option("--out-dir", f.out_dir, "Run directory for outputs");
}

void add_backend_flags(CLI::App* sub, Flags& f, std::initializer_list<Role> roles) {
  for (Role r : roles) {
    sub->add_option("--backend-" + backends::to_string(r) + "-url", f.urls[r],
                    "Base URL of the " + backends::to_string(r) + " service");
  }
  sub->add_option("--mock-fixtures", f.mock_fixtures, "Replay backend responses from a fixture file");
  sub->add_flag("--mock-lenient", f.mock_lenient, "Allow default fixture responses");
  sub->add_option("--record-fixtures", f.record_fixtures, "Record live backend traffic as fixtures");
  sub->add_option("--timeout", f.timeout, "Per-request timeout in seconds");
  sub->add_option("--retries", f.retries, "Retries for transport failures");
  sub->add_option("--parallelism", f.parallelism, "Concurrent backend calls");
}

}  // namespace

json to_json(const CliConfig& c) {
  json backends_json = json::object();
  for (const auto& [role, bc] : c.backends) {
    backends_json[backends::to_string(role)] = {
        {"url", bc.url},
        {"timeout_s", bc.timeout_s},
        {"max_retries", bc.max_retries},
        {"backoff_initial_s", bc.backoff_initial_s},
        {"mode", bc.mode == backends::BackendMode::mock ? "mock" : "live"},
        {"token_supplied", bc.token.has_value()}};
  }
  auto opt = [](const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); };
  return {{"mode", c.mode},
          {"vocab", opt(c.vocab)},
          {"alpha", c.alphas},
          {"k", c.ks},
          {"parallelism", c.parallelism},
          {"coca", c.coca},
          {"calibration_route", c.calibration_route},
          {"aggregation", c.aggregation},
          {"match", c.match},
          {"iou_threshold", c.iou_threshold},
          {"backends", backends_json},
          {"mock_fixtures", opt(c.mock_fixtures)},
          {"mock_lenient", c.mock_lenient},
          {"record_fixtures", opt(c.record_fixtures)},
          {"prompts_dir", opt(c.prompts_dir)},
          {"out_dir", opt(c.out_dir)}};
}

Env environment_from(char** envp) {
  Env env;
  for (char** p = envp; p != nullptr && *p != nullptr; ++p) {
    std::string entry(*p);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) env.emplace(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return env;
}

int run_cli(const std::vector<std::string>& argv, const Env& env, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Local scene graph generation and evaluation", "elegant"};
  app.require_subcommand(1, 1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "Build scene graphs for every image in a manifest");
  add_common(gen, f);
  add_backend_flags(gen, f, {Role::observer, Role::thinker, Role::verifier});
  gen->add_option("--manifest", f.manifest, "Image manifest JSON");
  gen->add_option("--annotations", f.annotations, "Ground-truth annotations (gt-boxes/closed modes)");
  gen->add_option("--mode", f.mode, "open | gt-boxes | closed:<vocab>");
  gen->add_option("--vocab", f.vocab, "Vocabulary id or file for closed mode");
  gen->add_flag("--no-coca", f.no_coca, "Disable co-calibration of negative verdicts");
  gen->add_option("--calibration-route", f.calibration_route, "thinker | verifier");
  gen->add_option("--prompts-dir", f.prompts_dir, "Override prompt templates");

  auto* eo = app.add_subcommand("eval-open", "ECLIPSE report for generated graphs");
  add_common(eo, f);
  add_backend_flags(eo, f, {Role::embedder});
  eo->add_option("--graphs", f.graphs, "graphs.jsonl");
  eo->add_option("--manifest", f.manifest, "Image manifest JSON");
  eo->add_option("--alpha", f.alpha, "Penalty strengths")->delimiter(',');
  eo->add_option("--aggregation", f.aggregation, "per_local | per_image");

  auto* ec = app.add_subcommand("eval-closed", "Recall@K and mean Recall@K against annotations");
  add_common(ec, f);
  ec->add_option("--graphs", f.graphs, "graphs.jsonl");
  ec->add_option("--annotations", f.annotations, "Ground-truth annotations");
  ec->add_option("--vocab", f.vocab, "Vocabulary id or file");
  ec->add_option("--mode", f.mode, "Generation mode the graphs came from");
  ec->add_option("--k", f.k, "Cut-offs")->delimiter(',');
  ec->add_option("--match", f.match, "gt-boxes | detected");
  ec->add_option("--iou-threshold", f.iou, "Box IoU needed in detected matching");

  auto* st = app.add_subcommand("stats", "Triplet and category counts");
  add_common(st, f);
  st->add_option("--graphs", f.graphs, "graphs.jsonl");

  auto* pc = app.add_subcommand("penalty-curve", "CSV of the length penalty over a grid");
  pc->add_option("--config", f.config, "JSON config file");
  pc->add_option("--m-star", f.m_star, "Mean prediction length (> 1)");
  pc->add_option("--alpha", f.alpha, "Penalty strengths")->delimiter(',');
  pc->add_option("--x-min", f.x_min, "Grid start (>= 1)");
  pc->add_option("--x-max", f.x_max, "Grid end (default 5 m*)");
  pc->add_option("--steps", f.steps, "Grid intervals");
  pc->add_option("--output", f.output, "Write CSV here instead of stdout");

  auto* vq = app.add_subcommand("vqa-prompt", "Scene-graph context prompt for a question");
  vq->add_option("--config", f.config, "JSON config file");
  vq->add_option("--question", f.question, "Question text");
  vq->add_option("--graphs", f.graphs, "graphs.jsonl");
  vq->add_option("--image-id", f.image_id, "Only use graphs for this image");
  vq->add_option("--prompts-dir", f.prompts_dir, "Override prompt templates");

  std::vector<const char*> args;
  args.reserve(argv.size() + 1);
  if (argv.empty()) args.push_back("elegant");
  for (const auto& a : argv) args.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(args.size()), args.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ExitCode::ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return ExitCode::usage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  try {
    CliConfig cfg;
    apply_env(cfg, env);
    if (!f.config.empty()) apply_config_file(cfg, f.config);
    apply_flags(cfg, f, sub);
    finalize(cfg, env);

    const std::string name = sub->get_name();
    if (name == "generate") return cmd_generate(cfg, f, out, err);
    if (name == "eval-open") return cmd_eval_open(cfg, f, out, err);
    if (name == "eval-closed") return cmd_eval_closed(cfg, f, out, err);
    if (name == "stats") return cmd_stats(cfg, f, out, err);
    if (name == "penalty-curve") return cmd_penalty_curve(cfg, f, sub, out);
    return cmd_vqa_prompt(cfg, f, out);
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return ExitCode::backend;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return ExitCode::io;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return ExitCode::io;
  } catch (const Error& e) {
    err << "invalid input: " << e.what() << "\n";
    return ExitCode::validation;
  } catch (const std::exception& e) {
    err << "invalid input: " << e.what() << "\n";
    return ExitCode::validation;
  }
}

int run_cli(const std::vector<std::string>& argv, const Env& env) {
  return run_cli(argv, env, std::cout, std::cerr);
}

}  // namespace elegant::cli
