// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "elegant/closedset.hpp"
#include "elegant/eclipse.hpp"
#include "elegant/ingest.hpp"
#include "elegant/pipeline.hpp"
#include "elegant/prompts.hpp"
#include "elegant/raster.hpp"
#include "elegant/wire.hpp"
#include "fake_backends.hpp"
#include "fake_model_server.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace {

using namespace elegant;
namespace fs = std::filesystem;
using nlohmann::json;
using testing::ent;

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ = failed_ || !ok;
  }
  bool passed() const { return !failed_; }
  std::size_t checks() const { return checks_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  bool failed_ = false;
  std::size_t checks_ = 0;
  std::vector<std::string> failures_;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- penalty -----------------------------------------------------------------

void penalty_exactness(Check& c) {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> m(1.01, 50.0), log_a(std::log(1e-4), std::log(2.0));
  for (int i = 0; i < 50; ++i) {
    const auto p = eclipse::PenaltyParams::make(m(rng), std::exp(log_a(rng)));
    const double v = eclipse::penalty(p.m_star, p);
    c.expect(std::abs(v - 1.0) <= 1e-12, "P(m*) = " + num(v) + " for m*=" + num(p.m_star));
  }
  const auto p = eclipse::PenaltyParams::make(3.0, 0.01);
  const double p2 = eclipse::penalty(2.0, p), p4 = eclipse::penalty(4.0, p);
  c.expect(std::abs(p2 - testing::penalty_oracle(2.0, 3.0, 0.01)) <= 1e-9, "P(2) = " + num(p2));
  c.expect(std::abs(p4 - testing::penalty_oracle(4.0, 3.0, 0.01)) <= 1e-9, "P(4) = " + num(p4));
  c.expect(std::abs(p2 - 0.996145) < 5e-7 && std::abs(p4 - 0.998111) < 5e-7, "P(2)/P(4) leading digits");
}

void penalty_shape(Check& c) {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> m(1.2, 25.0), log_a(std::log(1e-3), std::log(1.0)), unit(0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const auto p = eclipse::PenaltyParams::make(m(rng), std::exp(log_a(rng)));
    std::vector<double> xs;
    const double lo = 1.0 + 1e-6, hi = 5.0 * p.m_star;
    for (int k = 1; k <= 2000; ++k) xs.push_back(lo + (hi - lo) * k / 2000.0);
    xs.push_back(p.m_star);
    std::sort(xs.begin(), xs.end());
    double best_x = 0, best = -1, prev = -1, prev_x = 0;
    for (double x : xs) {
      const double v = eclipse::penalty(x, p);
      c.expect(v >= 0.0 && v <= 1.0, "range at x=" + num(x));
      if (prev >= 0) {
        if (x <= p.m_star) c.expect(v > prev, "not increasing before m* at x=" + num(x));
        if (prev_x >= p.m_star) c.expect(v < prev, "not decreasing after m* at x=" + num(x));
      }
      if (v > best) best = v, best_x = x;
      prev = v;
      prev_x = x;
    }
    c.expect(best_x == p.m_star && best == 1.0, "peak not at m*");
    for (int d = 0; d < 20; ++d) {
      const double delta = (0.001 + 0.998 * unit(rng)) * (p.m_star - 1.0);
      c.expect(eclipse::penalty(p.m_star - delta, p) < eclipse::penalty(p.m_star + delta, p),
               "asymmetry fails for delta=" + num(delta));
    }
  }
}

// --- CLIPScore -----------------------------------------------------------------

void clip_contract(Check& c) {
  std::mt19937_64 rng(303);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> dim(2, 64);
  std::uniform_real_distribution<double> log_s(std::log(1e-3), std::log(1e3));
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> a(static_cast<std::size_t>(dim(rng))), b(a.size());
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const backends::EmbeddingVector ea{a}, eb{b};
    const double s = eclipse::clip_score(ea, eb);

    double dot = 0, na = 0;
    for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k], na += a[k] * a[k];
    if (dot < 0) c.expect(s == 0.0, "negative cosine not clamped: " + num(s));
    c.expect(std::abs(s - testing::clip_oracle(a, b)) <= 1e-9, "oracle mismatch " + num(s));

    std::vector<double> unit = a;
    for (auto& x : unit) x /= std::sqrt(na);
    const double same = eclipse::clip_score({unit}, {unit});
    c.expect(std::abs(same - 100.0) <= 1e-9, "identical unit vectors give " + num(same));

    const double ka = std::exp(log_s(rng)), kb = std::exp(log_s(rng));
    std::vector<double> sa = a, sb = b;
    for (auto& x : sa) x *= ka;
    for (auto& x : sb) x *= kb;
    c.expect(std::abs(eclipse::clip_score({sa}, {sb}) - s) <= 1e-9, "rescaling changed the score");

    std::vector<double> opposite = a;
    for (auto& x : opposite) x = -x;
    c.expect(eclipse::clip_score(ea, {opposite}) == 0.0, "opposite vectors not clamped");
  }
}

// --- masking -------------------------------------------------------------------

void mask_oracle(Check& c) {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> dim(1, 64), ch(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const int w = dim(rng), h = dim(rng);
    const auto img = testing::random_image(w, h, ch(rng) ? 3 : 1, rng);
    auto box = [&] {
      double x0 = u(rng) * w, x1 = u(rng) * w, y0 = u(rng) * h, y1 = u(rng) * h;
      if (x0 > x1) std::swap(x0, x1);
      if (y0 > y1) std::swap(y0, y1);
      if (i % 4 == 0) x0 = std::floor(x0), y0 = std::floor(y0), x1 = std::ceil(x1), y1 = std::ceil(y1);
      if (x1 - x0 < 0.3) x0 = std::max(0.0, x1 - 0.3), x1 = x0 + 0.3;
      if (y1 - y0 < 0.3) y0 = std::max(0.0, y1 - 0.3), y1 = y0 + 0.3;
      return BBox::make(x0, y0, x1, y1);
    };
    const auto a = box(), b = box();
    c.expect(eclipse::mask_image(img, a, b) == testing::mask_oracle(img, a, b),
             "mask differs on case " + std::to_string(i));
  }
}

// --- parser --------------------------------------------------------------------

std::size_t balanced_groups(std::string_view s) {
  std::size_t groups = 0, depth = 0;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')' && depth > 0 && --depth == 0) ++groups;
  }
  return groups;
}

void parser_conformance(Check& c) {
  using prompts::parse_triplets;
  {
    // open example: entities man, woman, balloon, tree
    const auto man = ent(0, "man", 0, 0, 10, 10);
    const std::vector<Entity> objs = {ent(1, "man", 1, 1, 9, 9), ent(2, "woman", 2, 2, 8, 8),
                                      ent(3, "balloon", 0, 0, 4, 4), ent(4, "tree", 5, 5, 12, 12)};
    const auto r = parse_triplets("(man, watching, woman), (man, carrying, balloon), (man, \ntalking to, man)",
                                  man, objs);
    const std::vector<Triplet> expected = {make_triplet(0, "watching", 2), make_triplet(0, "carrying", 3),
                                           make_triplet(0, "talking to", 1)};
    c.expect(r.accepted == expected && r.skipped.empty(), "open example");
  }
  {
    // closed example: entities woman, balloon, balloon, tree, tree
    const auto man = ent(0, "man", 0, 0, 10, 10);
    const std::vector<Entity> objs = {ent(1, "woman", 2, 2, 8, 8), ent(2, "balloon", 0, 0, 4, 4, 0.4),
                                      ent(3, "balloon", 1, 1, 5, 5, 0.8), ent(4, "tree", 5, 5, 12, 12),
                                      ent(5, "tree", 6, 6, 12, 12)};
    const auto r = parse_triplets("(man, watching, woman), (man, carrying, balloon)", man, objs);
    const std::vector<Triplet> expected = {make_triplet(0, "watching", 1), make_triplet(0, "carrying", 3)};
    c.expect(r.accepted == expected && r.skipped.empty(), "closed example");
    const auto covered = parse_triplets("(man, covered in, tree)", man, objs);
    c.expect(covered.accepted.size() == 1 && covered.accepted[0].predicate == "covered in", "covered in");
  }

  std::mt19937_64 rng(505);
  const std::string alphabet = "(),  manwoetrb\n\t;{}\"'";
  const std::vector<std::string> pieces = {"(man, on, tree)", "(man, ", ")", "(", ", woman)", "((a, b, c))",
                                           "(,,)", "(man, under, balloon)", "(man,,tree)", "(man, x, y, z)"};
  std::uniform_int_distribution<int> len(0, 120), pick(0, 9);
  std::uniform_int_distribution<std::size_t> ch(0, alphabet.size() - 1), piece(0, pieces.size() - 1);
  const auto man = ent(0, "man", 0, 0, 10, 10);
  const std::vector<Entity> objs = {ent(1, "woman", 0, 0, 5, 5), ent(2, "tree", 1, 1, 6, 6),
                                    ent(3, "balloon", 2, 2, 7, 7)};
  for (int i = 0; i < 500; ++i) {
    std::string s;
    for (int n = len(rng); n > 0; --n) {
      if (pick(rng) < 3) {
        s += pieces[piece(rng)];
      } else {
        s.push_back(alphabet[ch(rng)]);
      }
    }
    try {
      const auto r = parse_triplets(s, man, objs);
      c.expect(r.accepted.size() + r.skipped.size() == balanced_groups(s), "accounting: " + s);
      for (const auto& t : r.accepted) {
        c.expect(t.subject_id == 0 && t.object_id >= 1 && t.object_id <= 3, "bad ids: " + s);
      }
    } catch (const std::exception& e) {
      c.expect(false, std::string("threw ") + e.what());
    }
  }
}

// --- CoCa ----------------------------------------------------------------------

// Objects 0..5: the first two are confirmed directly, the next two are
// rescued by calibration, the last two are rejected twice.
const std::vector<std::string> kCocaObjects = {"cup", "dog", "hat", "kite", "lamp", "book"};

int object_index(const std::string& text) {
  for (std::size_t i = 0; i < kCocaObjects.size(); ++i) {
    if (text.find(" " + kCocaObjects[i]) != std::string::npos) return static_cast<int>(i);
  }
  return -1;
}

class ScriptedTransport : public backends::Transport {
 public:
  backends::Reply post(backends::Role role, const json& request) override {
    using backends::Role;
    if (role == Role::observer) {
      json entities = json::array({{{"label", "man"}, {"bbox", {0, 0, 60, 60}}, {"confidence", 0.99}}});
      for (std::size_t i = 0; i < kCocaObjects.size(); ++i) {
        const double x = 10.0 * static_cast<double>(i);
        entities.push_back({{"label", kCocaObjects[i]}, {"bbox", {x, x, x + 15, x + 15}}, {"confidence", 0.5}});
      }
      return {{{"entities", entities}}, 1};
    }
    if (role == Role::thinker) {
      const std::string prompt = request.at("prompt");
      if (prompt.rfind("Context:", 0) == 0) {
        const int k = object_index(prompt.substr(prompt.find("Can we infer")));
        return {{{"text", (k == 2 || k == 3) ? "Yes, it can." : "No."}}, 1};
      }
      std::string out;
      for (const auto& o : kCocaObjects) out += "(man, near, " + o + "), ";
      return {{{"text", out}}, 1};
    }
    const std::string q = request.at("question");
    const int k = object_index(q);
    if (q.find("What is the relationship") != std::string::npos) {
      return {{{"text", "the man stands beside the " + kCocaObjects[static_cast<std::size_t>(k)]}}, 1};
    }
    if (k == 0 || k == 1) return {{{"text", "yes"}, {"yes_probability", 0.875}}, 1};
    return {{{"text", "no"}, {"yes_probability", 0.125}}, 1};
  }
};

pipeline::LocalResult run_coca(std::shared_ptr<backends::Transport> transport, std::size_t workers,
                               bool coca) {
  auto log = std::make_shared<backends::ExchangeLog>();
  pipeline::PipelineConfig cfg;
  cfg.coca_enabled = coca;
  cfg.max_in_flight = workers;
  pipeline::Engine engine({std::make_shared<backends::WireObserver>(transport, log),
                           std::make_shared<backends::WireThinker>(transport, log),
                           std::make_shared<backends::WireVerifier>(transport, log)},
                          cfg);
  const backends::ImageRef image{"scene", "scene.ppm", std::nullopt, 120, 120};
  return engine.generate_local(image, pipeline::SubjectSpec::by_label("man"), pipeline::GenerationMode::open());
}

void coca_state_machine(Check& c) {
  auto recorder = std::make_shared<backends::RecordingTransport>(std::make_shared<ScriptedTransport>());
  run_coca(recorder, 1, true);
  auto mock = std::make_shared<backends::MockTransport>(recorder->fixtures(), /*strict=*/true);

  const auto base = run_coca(mock, 1, true);
  const auto& rel = base.graph.relations;
  c.expect(rel.size() == 4, "expected 4 relations, got " + std::to_string(rel.size()));
  std::map<std::string, Triplet> by_object;
  for (const auto& t : rel) by_object[base.graph.find_object(t.object_id)->label] = t;
  for (const char* o : {"cup", "dog"}) {
    c.expect(by_object.count(o) && by_object[o].status == TripletStatus::verified_direct &&
                 by_object[o].confidence == 0.875,
             std::string("direct relation for ") + o);
  }
  for (const char* o : {"hat", "kite"}) {
    c.expect(by_object.count(o) && by_object[o].status == TripletStatus::verified_coca &&
                 by_object[o].confidence == 0.5,
             std::string("rescued relation for ") + o);
  }
  c.expect(!by_object.count("lamp") && !by_object.count("book"), "rejected candidates leaked");

  c.expect(base.traces.size() == 6, "expected 6 traces");
  for (const auto& t : base.traces) {
    c.expect(t.consistent(true), "inconsistent trace for " + t.labels.object);
    const bool direct = t.triplet.status == TripletStatus::verified_direct;
    c.expect(direct == !t.rationale.has_value(), "rationale presence for " + t.labels.object);
    c.expect(direct == !t.calibration_answer.has_value(), "calibration presence for " + t.labels.object);
  }

  for (std::size_t workers : {4u, 16u}) {
    const auto other = run_coca(mock, workers, true);
    c.expect(other.graph == base.graph, "graph differs at parallelism " + std::to_string(workers));
    bool same = other.traces.size() == base.traces.size();
    for (std::size_t i = 0; same && i < base.traces.size(); ++i) {
      same = json(other.traces[i]) == json(base.traces[i]);
    }
    c.expect(same, "traces differ at parallelism " + std::to_string(workers));
  }

  for (std::size_t workers : {1u, 4u, 16u}) {
    const auto off = run_coca(mock, workers, false);
    c.expect(off.graph.relations.size() == 2, "CoCa off should keep only the 2 direct relations");
    for (const auto& t : off.graph.relations) {
      c.expect(t.status == TripletStatus::verified_direct, "CoCa off produced a rescued relation");
      c.expect(std::find(rel.begin(), rel.end(), t) != rel.end(), "CoCa on is not a superset");
    }
  }
}

// --- recall --------------------------------------------------------------------

void recall_oracle(Check& c) {
  using namespace closedset;
  std::mt19937_64 rng(606);
  const std::vector<std::string> labels = {"man", "dog", "cup"};
  const std::vector<std::string> preds = {"on", "near", "holding"};
  std::uniform_int_distribution<int> lab(0, 2), pr(0, 2), pos(0, 5), n(0, 8), modes(0, 1);
  std::uniform_real_distribution<double> conf(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    EntityId id = 0;
    auto box_ent = [&] {
      const double x = pos(rng), y = pos(rng);
      return ent(id++, labels[static_cast<std::size_t>(lab(rng))], x, y, x + 4, y + 4);
    };
    std::vector<GroundTruthTriplet> gts;
    for (int i = 0, k = n(rng); i < k; ++i) {
      gts.push_back({box_ent(), preds[static_cast<std::size_t>(pr(rng))], box_ent()});
    }
    std::vector<Prediction> ps;
    for (int i = 0, k = n(rng); i < k; ++i) {
      // some predictions reuse GT entities so gt-boxes mode also matches
      const bool reuse = !gts.empty() && i % 2 == 0;
      const auto& g = gts[static_cast<std::size_t>(i) % std::max<std::size_t>(gts.size(), 1)];
      ps.push_back({reuse ? g.subject : box_ent(), preds[static_cast<std::size_t>(pr(rng))],
                    reuse ? g.object : box_ent(), TripletStatus::verified_direct, conf(rng)});
    }
    const auto ranked = rank_predictions(ps);
    const auto mode = modes(rng) ? MatchMode::detected(0.4) : MatchMode::gt_boxes();
    double prev = -1;
    for (std::size_t k = 1; k <= 9; ++k) {
      const auto r = recall_at_k(ranked, gts, k, mode);
      if (gts.empty()) {
        c.expect(!r, "recall defined without GTs");
        continue;
      }
      const std::size_t top = std::min(k, ranked.size());
      std::vector<std::vector<bool>> compat(top, std::vector<bool>(gts.size()));
      for (std::size_t i = 0; i < top; ++i) {
        for (std::size_t g = 0; g < gts.size(); ++g) compat[i][g] = match(ranked[i], gts[g], mode);
      }
      const double expected = 100.0 * static_cast<double>(testing::brute_force_max_matching(compat)) /
                              static_cast<double>(gts.size());
      c.expect(r && *r == expected, "trial " + std::to_string(trial) + " K=" + std::to_string(k));
      c.expect(r && *r >= prev, "R@K decreased at K=" + std::to_string(k));
      if (r) prev = *r;
    }
  }

  const auto a = ent(1, "man", 0, 0, 5, 5), b = ent(2, "horse", 0, 0, 9, 9);
  const std::vector<GroundTruthTriplet> gts = {{a, "riding", b}, {a, "watching", b}};
  const std::vector<Prediction> ps = {{a, "riding", b, TripletStatus::verified_direct, 0.9}};
  const auto mr = mean_recall_at_k(ps, gts, 10, RelationVocab::builtin("visualds20"));
  c.expect(format_percent(mr) == "50.00", "mR@K fixture gives " + format_percent(mr));
}

// --- end to end ----------------------------------------------------------------

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args, const cli::Env& env = {}) {
  args.insert(args.begin(), "elegant");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, env, out, err);
  return {code, out.str(), err.str()};
}

double composed_oracle(const std::vector<LocalSceneGraph>& graphs, double alpha) {
  std::vector<std::vector<double>> scores;
  for (const auto& g : graphs) {
    auto& row = scores.emplace_back();
    for (const auto& t : g.relations) {
      const auto l = g.labels_of(t);
      const std::string caption = "The " + l.subject + " is " + l.predicate + " the " + l.object + ".";
      row.push_back(testing::clip_oracle(testing::fake_image_vector(), testing::fake_text_vector(caption)));
    }
  }
  return testing::dataset_eclipse_oracle(scores, alpha);
}

void end_to_end(Check& c) {
  testing::TempDir dir;
  std::mt19937_64 rng(707);
  fs::create_directories(dir / "images");
  const std::vector<std::pair<int, int>> sizes = {{64, 48}, {48, 48}, {56, 40}};
  std::map<std::string, json> detections;
  json manifest = {{"images", json::array()}};
  json annotations = json::array();
  const std::vector<std::string> preds = {"riding", "watching", "carrying", "sitting on"};
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto [w, h] = sizes[i];
    const std::string id = "img" + std::to_string(i);
    save_pnm(testing::random_image(w, h, 3, rng), dir / "images" / (id + ".ppm"));
    manifest["images"].push_back({{"image_id", id}, {"uri", "images/" + id + ".ppm"}});
    const json ents = json::array({{{"label", "man"}, {"bbox", {0, 0, 30, 30}}, {"confidence", 0.9}},
                                   {{"label", "horse"}, {"bbox", {20, 10, w, h}}, {"confidence", 0.8}},
                                   {{"label", "hat"}, {"bbox", {5, 0, 15, 8}}, {"confidence", 0.7}},
                                   {{"label", "tree"}, {"bbox", {w - 8, 0, w, 8}}, {"confidence", 0.6}}});
    detections[id] = ents;
    json gt_ents = json::array();
    for (std::size_t e = 0; e < ents.size(); ++e) {
      gt_ents.push_back({{"id", e}, {"label", ents[e]["label"]}, {"bbox", ents[e]["bbox"]}});
    }
    annotations.push_back({{"image_id", id}, {"width", w}, {"height", h}, {"entities", gt_ents},
                           {"triplets", json::array({{{"subject_id", 0}, {"predicate", preds[i]}, {"object_id", 1}},
                                                     {{"subject_id", 2}, {"predicate", "watching"}, {"object_id", 0}},
                                                     {{"subject_id", 1}, {"predicate", "carrying"}, {"object_id", 2}}})}});
  }
  testing::write_text(dir / "manifest.json", manifest.dump(2));
  testing::write_text(dir / "annotations.json", annotations.dump(2));
  const auto m = (dir / "manifest.json").string(), a = (dir / "annotations.json").string();
  const auto fixtures = (dir / "fixtures.json").string();

  {
    testing::FakeModelServer server(detections, preds);
    cli::Env env;
    for (const char* role : {"OBSERVER", "THINKER", "VERIFIER", "EMBEDDER"}) {
      env[std::string("ELEGANT_") + role + "_URL"] = server.url();
    }
    const auto live = dir / "live";
    auto r = cli({"generate", "--manifest", m, "--record-fixtures", fixtures, "--out-dir", live.string()}, env);
    c.expect(r.code == 0, "live generate failed: " + r.err);
    r = cli({"eval-open", "--graphs", (live / "graphs.jsonl").string(), "--manifest", m, "--alpha",
             "0.1,0.01,0.001", "--record-fixtures", fixtures, "--out-dir", live.string()},
            env);
    c.expect(r.code == 0, "live eval-open failed: " + r.err);
  }

  std::vector<std::map<std::string, std::string>> outputs;
  for (int rep = 0; rep < 3; ++rep) {
    const auto run = dir / ("replay" + std::to_string(rep));
    const std::string workers = std::to_string(1 + 7 * rep);
    auto r = cli({"generate", "--manifest", m, "--mock-fixtures", fixtures, "--parallelism", workers,
                  "--out-dir", run.string()});
    c.expect(r.code == 0, "replay generate failed: " + r.err);
    r = cli({"eval-open", "--graphs", (run / "graphs.jsonl").string(), "--manifest", m, "--alpha",
             "0.1,0.01,0.001", "--mock-fixtures", fixtures, "--parallelism", workers, "--out-dir", run.string()});
    c.expect(r.code == 0, "replay eval-open failed: " + r.err);
    r = cli({"eval-closed", "--graphs", (run / "graphs.jsonl").string(), "--annotations", a, "--k", "10,20,50",
             "--match", "detected", "--out-dir", run.string()});
    c.expect(r.code == 0, "replay eval-closed failed: " + r.err);
    std::map<std::string, std::string> files;
    for (const char* name : {"graphs.jsonl", "traces.jsonl", "eclipse_report.json", "recall_report.json",
                             "recall_report.csv"}) {
      try {
        files[name] = ingest::read_file(run / name);
      } catch (const std::exception& e) {
        c.expect(false, e.what());
      }
    }
    outputs.push_back(std::move(files));
  }
  c.expect(outputs[0] == outputs[1] && outputs[1] == outputs[2], "replayed outputs differ");
  try {
    c.expect(outputs[0]["graphs.jsonl"] == ingest::read_file(dir / "live" / "graphs.jsonl"),
             "replay differs from the live run");
  } catch (const std::exception& e) {
    c.expect(false, e.what());
  }

  const auto graphs = ingest::parse_graphs_jsonl(outputs[0]["graphs.jsonl"]);
  std::size_t relations = 0;
  for (const auto& g : graphs) relations += g.relations.size();
  c.expect(graphs.size() == 12 && relations > 0, "unexpected graph set: " + std::to_string(graphs.size()) +
                                                       " graphs, " + std::to_string(relations) + " relations");
  const auto report = json::parse(outputs[0]["eclipse_report.json"], nullptr, false);
  c.expect(!report.is_discarded() && report["reports"].size() == 3, "eclipse report shape");
  if (!report.is_discarded()) {
    for (const auto& rep : report["reports"]) {
      const double alpha = rep["alpha"], got = rep["dataset_eclipse"];
      const double want = composed_oracle(graphs, alpha);
      c.expect(std::abs(got - want) <= 1e-9, "alpha " + num(alpha) + ": " + num(got) + " vs " + num(want));
    }
  }
  c.expect(outputs[0]["recall_report.csv"].rfind("k,recall,mean_recall\n10,", 0) == 0, "recall csv shape");
}

// --- IoU gating ----------------------------------------------------------------

void iou_gating(Check& c) {
  std::mt19937_64 rng(808);
  const std::vector<std::string> names = {"man", "woman", "dog", "cup", "table", "tree", "car"};
  std::uniform_int_distribution<int> count(2, 9), name(0, 6), coord(0, 90), ext(1, 40);
  std::size_t relations = 0;
  for (int scene = 0; scene < 100; ++scene) {
    std::vector<Entity> es;
    std::set<std::string> scene_labels;
    for (int i = 0, n = count(rng); i < n; ++i) {
      const double x = coord(rng), y = coord(rng);
      const auto label = names[static_cast<std::size_t>(name(rng))];
      es.push_back(ent(i, label, x, y, x + ext(rng), y + ext(rng), 0.5));
      scene_labels.insert(label);
    }
    auto thinker = std::make_shared<testing::FnThinker>([&](const std::string& p) {
      if (p.rfind("Context:", 0) == 0) return std::string("yes");
      const auto [s, listed] = testing::scrape_thinker_prompt(p);
      std::string out;
      for (const auto& l : scene_labels) out += "(" + s + ", near, " + l + ") ";
      return out;
    });
    auto verifier = std::make_shared<testing::FnVerifier>(
        [](const backends::ImageRef&, const std::string&) { return backends::VerifierAnswer{"yes", 0.9}; });
    pipeline::Engine engine({std::make_shared<testing::FixedObserver>(es), thinker, verifier}, {});
    const backends::ImageRef image{"s" + std::to_string(scene), "s.ppm", std::nullopt, 140, 140};
    const auto out = engine.generate_global(image, pipeline::GenerationMode::open());
    c.expect(out.failures.empty(), "generation failed in scene " + std::to_string(scene));
    for (const auto& [id, g] : out.graph.locals) {
      for (const auto& t : g.relations) {
        ++relations;
        const Entity* o = g.find_object(t.object_id);
        c.expect(o != nullptr && iou(g.subject.bbox, o->bbox) > 0.0,
                 "non-overlapping relation in scene " + std::to_string(scene));
      }
    }
  }
  c.expect(relations > 0, "no relations generated at all");
}

struct Criterion {
  const char* name;
  double limit_ms;
  std::function<void(Check&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"penalty-exactness", 1000, penalty_exactness},
      {"penalty-shape", 5000, penalty_shape},
      {"clipscore-contract", 1000, clip_contract},
      {"mask-oracle", 10000, mask_oracle},
      {"parser-conformance", 5000, parser_conformance},
      {"coca-state-machine", 5000, coca_state_machine},
      {"recall-oracle", 10000, recall_oracle},
      {"end-to-end-determinism", 30000, end_to_end},
      {"iou-gating", 10000, iou_gating},
  };
  int failed = 0;
  for (const auto& crit : criteria) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      crit.run(check);
    } catch (const std::exception& e) {
      check.expect(false, std::string("uncaught: ") + e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = ms < crit.limit_ms;
    const bool ok = check.passed() && in_time;
    failed += ok ? 0 : 1;
    std::printf("%s %-24s %9.1f ms (limit %.0f ms, %zu checks)\n", ok ? "PASS" : "FAIL", crit.name, ms,
                crit.limit_ms, check.checks());
    if (!in_time) std::printf("     over time limit\n");
    for (const auto& f : check.failures()) std::printf("     %s\n", f.c_str());
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
