#include <gtest/gtest.h>

#include <random>

#include "elegant/closedset.hpp"
#include "elegant/errors.hpp"
#include "fake_backends.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace elegant::closedset {
namespace {

using testing::ent;

Prediction pred(const Entity& s, std::string p, const Entity& o, double conf = 1.0,
                TripletStatus st = TripletStatus::verified_direct) {
  return {s, std::move(p), o, st, conf};
}

TEST(Vocab, BuiltinsAndNormalization) {
  EXPECT_EQ(RelationVocab::builtin("visualds20").predicates().size(), 20u);
  EXPECT_EQ(RelationVocab::builtin("recode24").predicates().size(), 24u);
  EXPECT_TRUE(RelationVocab::builtin("visualds20").contains(" Watching "));
  EXPECT_THROW(RelationVocab::builtin("nope"), ValidationError);

  const std::vector<std::string> dup = {"On", "on "};
  EXPECT_THROW(RelationVocab::make("x", dup), ValidationError);
  EXPECT_THROW(RelationVocab::make("x", std::vector<std::string>{}), ValidationError);
}

TEST(Vocab, FromFile) {
  testing::TempDir dir;
  testing::write_text(dir / "v.txt", "on\n\n  Next To \nholding\n");
  const auto v = RelationVocab::from_file(dir / "v.txt", "mine");
  EXPECT_EQ(v.predicates(), (std::vector<std::string>{"on", "next to", "holding"}));
  EXPECT_EQ(v.id(), "mine");
  EXPECT_THROW(RelationVocab::from_file(dir / "missing.txt", "m"), IoError);
}

TEST(Ranking, ConfidenceThenStatusThenIds) {
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1);
  std::vector<Prediction> ps = {pred(a, "on", b, 0.5, TripletStatus::verified_coca),
                                pred(b, "on", a, 0.5, TripletStatus::verified_direct),
                                pred(a, "near", b, 0.5, TripletStatus::verified_direct),
                                pred(a, "under", b, 0.9, TripletStatus::verified_coca)};
  const auto r = rank_predictions(ps);
  EXPECT_EQ(r[0].predicate, "under");
  EXPECT_EQ(r[1].predicate, "near");
  EXPECT_EQ(r[2].subject.id, 2);
  EXPECT_EQ(r[3].status, TripletStatus::verified_coca);
}

TEST(Match, GtBoxesAndDetected) {
  const auto man = ent(1, "man", 0, 0, 10, 10), horse = ent(2, "horse", 5, 0, 20, 10);
  const GroundTruthTriplet gt{man, "riding", horse};
  EXPECT_TRUE(match(pred(man, "riding", horse), gt, MatchMode::gt_boxes()));
  EXPECT_FALSE(match(pred(man, "on", horse), gt, MatchMode::gt_boxes()));
  EXPECT_FALSE(match(pred(horse, "riding", man), gt, MatchMode::gt_boxes()));

  const auto man2 = ent(7, "man", 1, 0, 10, 10);    // IoU 0.9
  const auto horse2 = ent(8, "horse", 12, 0, 20, 10);  // IoU 8/15
  const auto horse3 = ent(9, "horse", 15, 0, 25, 10);  // IoU 5/20
  EXPECT_FALSE(match(pred(man2, "riding", horse2), gt, MatchMode::gt_boxes()));
  EXPECT_TRUE(match(pred(man2, "riding", horse2), gt, MatchMode::detected(0.5)));
  EXPECT_FALSE(match(pred(man2, "riding", horse3), gt, MatchMode::detected(0.5)));
  EXPECT_FALSE(match(pred(ent(7, "boy", 1, 0, 10, 10), "riding", horse2), gt, MatchMode::detected(0.5)));
}

TEST(Recall, Examples) {
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1), c = ent(3, "c", 0, 0, 1, 1);
  const std::vector<GroundTruthTriplet> gts = {{a, "on", b}, {b, "on", c}, {a, "near", c}, {c, "under", a}};
  const std::vector<Prediction> half = {pred(a, "on", b), pred(a, "near", c), pred(b, "near", a)};
  EXPECT_DOUBLE_EQ(*recall_at_k(half, gts, 10), 50.0);
  EXPECT_DOUBLE_EQ(*recall_at_k(half, gts, 1), 25.0);

  std::vector<Prediction> all;
  for (const auto& g : gts) all.push_back(pred(g.subject, g.predicate, g.object));
  EXPECT_DOUBLE_EQ(*recall_at_k(all, gts, 4), 100.0);
  EXPECT_FALSE(recall_at_k(all, std::vector<GroundTruthTriplet>{}, 4));
  EXPECT_THROW(recall_at_k(all, gts, 0), ValidationError);
}

TEST(Recall, OnePredictionMatchesOneGt) {
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1);
  const std::vector<GroundTruthTriplet> gts = {{a, "on", b}, {a, "on", b}};
  const std::vector<Prediction> one = {pred(a, "on", b)};
  EXPECT_DOUBLE_EQ(*recall_at_k(one, gts, 5), 50.0);
}

TEST(Recall, MaximumMatchingBeatsGreedy) {
  // p0 could claim either GT; greedy pairing p0 with g0 would strand p1.
  const auto s = ent(1, "man", 0, 0, 10, 10);
  const auto o0 = ent(2, "dog", 10, 0, 20, 10), o1 = ent(3, "dog", 12, 0, 22, 10);
  const std::vector<GroundTruthTriplet> gts = {{s, "near", o0}, {s, "near", o1}};
  const std::vector<Prediction> ps = {pred(ent(9, "man", 0, 0, 10, 10), "near", ent(10, "dog", 11, 0, 21, 10), 0.9),
                                      pred(ent(9, "man", 0, 0, 10, 10), "near", ent(11, "dog", 10, 0, 20, 10), 0.8)};
  EXPECT_DOUBLE_EQ(*recall_at_k(ps, gts, 2, MatchMode::detected(0.5)), 100.0);
}

struct RandomInstance {
  std::vector<Prediction> ranked;
  std::vector<GroundTruthTriplet> gts;
};

RandomInstance random_instance(std::mt19937_64& rng) {
  const std::vector<std::string> labels = {"man", "dog", "cup"};
  const std::vector<std::string> preds = {"on", "near", "holding"};
  std::uniform_int_distribution<int> lab(0, 2), pr(0, 2), pos(0, 6), n_gt(0, 8), n_pred(0, 14);
  std::uniform_real_distribution<double> conf(0, 1);
  auto box_ent = [&](EntityId id) {
    const double x = pos(rng), y = pos(rng);
    return ent(id, labels[static_cast<std::size_t>(lab(rng))], x, y, x + 4, y + 4);
  };
  RandomInstance inst;
  EntityId id = 0;
  for (int i = 0, n = n_gt(rng); i < n; ++i) {
    inst.gts.push_back({box_ent(id++), preds[static_cast<std::size_t>(pr(rng))], box_ent(id++)});
  }
  for (int i = 0, n = n_pred(rng); i < n; ++i) {
    inst.ranked.push_back(pred(box_ent(id++), preds[static_cast<std::size_t>(pr(rng))], box_ent(id++), conf(rng)));
  }
  inst.ranked = rank_predictions(inst.ranked);
  return inst;
}

TEST(Recall, AgreesWithExhaustiveMatchingAndIsMonotone) {
  std::mt19937_64 rng(99);
  const auto mode = MatchMode::detected(0.3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto inst = random_instance(rng);
    double prev = -1;
    for (std::size_t k = 1; k <= 16; ++k) {
      const auto r = recall_at_k(inst.ranked, inst.gts, k, mode);
      if (inst.gts.empty()) {
        EXPECT_FALSE(r);
        continue;
      }
      const std::size_t top = std::min(k, inst.ranked.size());
      std::vector<std::vector<bool>> compat(top, std::vector<bool>(inst.gts.size()));
      for (std::size_t i = 0; i < top; ++i) {
        for (std::size_t g = 0; g < inst.gts.size(); ++g) compat[i][g] = match(inst.ranked[i], inst.gts[g], mode);
      }
      const double expected = 100.0 * static_cast<double>(testing::brute_force_max_matching(compat)) /
                              static_cast<double>(inst.gts.size());
      EXPECT_DOUBLE_EQ(*r, expected);
      EXPECT_GE(*r, prev);
      prev = *r;
    }
  }
}

TEST(MeanRecall, AveragesCategories) {
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1);
  const auto& vocab = RelationVocab::builtin("visualds20");
  const std::vector<GroundTruthTriplet> gts = {{a, "carrying", b}, {a, "watching", b}};
  const std::vector<Prediction> ps = {pred(a, "carrying", b)};
  EXPECT_DOUBLE_EQ(*mean_recall_at_k(ps, gts, 10, vocab), 50.0);

  const std::vector<GroundTruthTriplet> one_cat = {{a, "carrying", b}, {b, "carrying", a}};
  EXPECT_DOUBLE_EQ(*mean_recall_at_k(ps, one_cat, 10, vocab), *recall_at_k(ps, one_cat, 10));
  EXPECT_FALSE(mean_recall_at_k(ps, std::vector<GroundTruthTriplet>{}, 10, vocab));
}

TEST(MeanRecall, RareCategoryWeighsAsMuchAsCommonOne) {
  const auto a = ent(1, "a", 0, 0, 1, 1);
  const auto& vocab = RelationVocab::builtin("visualds20");
  std::vector<GroundTruthTriplet> gts;
  std::vector<Prediction> ps;
  for (EntityId i = 10; i < 19; ++i) {
    const auto o = ent(i, "o", 0, 0, 1, 1);
    gts.push_back({a, "carrying", o});
    ps.push_back(pred(a, "carrying", o));
  }
  gts.push_back({a, "watching", ent(30, "o", 0, 0, 1, 1)});
  EXPECT_DOUBLE_EQ(*recall_at_k(ps, gts, 50), 90.0);
  EXPECT_DOUBLE_EQ(*mean_recall_at_k(ps, gts, 50, vocab), 50.0);
}

TEST(Diversity, Examples) {
  const auto man = ent(1, "man", 0, 0, 1, 1), horse = ent(2, "horse", 0, 0, 1, 1);
  const auto man2 = ent(3, "man", 0, 0, 1, 1), dog = ent(4, "dog", 0, 0, 1, 1);
  const std::vector<Prediction> two = {pred(man, "riding", horse), pred(man2, "riding", horse)};
  EXPECT_EQ(diversity_stats(two), (DiversityStats{2, 1, 1}));
  EXPECT_EQ(diversity_stats(std::vector<Prediction>{}), (DiversityStats{0, 0, 0}));
  const std::vector<Prediction> three = {pred(man, "riding", horse), pred(man, "near", dog),
                                         pred(man2, "near", dog)};
  EXPECT_EQ(diversity_stats(three), (DiversityStats{3, 2, 2}));
}

TEST(PredictionsFrom, SkipsUnverifiedAndFillsConfidence) {
  LocalSceneGraph g;
  g.image_id = "i";
  g.subject = ent(0, "man", 0, 0, 5, 5);
  g.objects = {ent(1, "dog", 1, 1, 3, 3)};
  g.relations = {make_triplet(0, "near", 1, TripletStatus::verified_direct, std::nullopt),
                 make_triplet(0, "on", 1, TripletStatus::verified_coca, 0.5),
                 make_triplet(0, "under", 1, TripletStatus::rejected)};
  const std::vector<LocalSceneGraph> gs = {g};
  const auto ps = predictions_from(gs, 0.7);
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].confidence, 0.7);
  EXPECT_EQ(ps[1].confidence, 0.5);
  EXPECT_EQ(ps[1].object.label, "dog");
}

TEST(Evaluate, DatasetMeansAndCsv) {
  const auto& vocab = RelationVocab::builtin("visualds20");
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1);
  ImageEval one{"one", {pred(a, "carrying", b)}, {{a, "carrying", b}, {a, "watching", b}}};
  ImageEval two{"two", {}, {{a, "carrying", b}}};
  ImageEval none{"none", {pred(a, "near", b)}, {}};
  const std::vector<ImageEval> images = {one, two, none};
  const std::vector<std::size_t> ks = {10, 20};
  const auto rep = evaluate(images, ks, vocab);
  EXPECT_EQ(rep.images, 3u);
  EXPECT_EQ(rep.images_with_gt, 2u);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(*rep.rows[0].recall, 25.0);
  // carrying: (100 + 0) / 2, watching: 0
  EXPECT_DOUBLE_EQ(*rep.rows[0].mean_recall, 25.0);
  EXPECT_EQ(to_csv(rep), "k,recall,mean_recall\n10,25.00,25.00\n20,25.00,25.00\n");
  EXPECT_EQ(to_json(rep)["rows"][1]["k"], 20);
  EXPECT_EQ(rep.diversity.relation_categories, 2u);

  const std::vector<ImageEval> nothing = {none};
  const auto empty = evaluate(nothing, ks, vocab);
  EXPECT_EQ(to_csv(empty), "k,recall,mean_recall\n10,n/a,n/a\n20,n/a,n/a\n");
  EXPECT_TRUE(to_json(empty)["rows"][0]["recall"].is_null());
}

TEST(Evaluate, RejectsGtPredicateOutsideVocab) {
  const auto a = ent(1, "a", 0, 0, 1, 1), b = ent(2, "b", 0, 0, 1, 1);
  const std::vector<ImageEval> images = {{"x", {}, {{a, "levitating", b}}}};
  const std::vector<std::size_t> ks = {10};
  EXPECT_THROW(evaluate(images, ks, RelationVocab::builtin("visualds20")), ValidationError);
}

TEST(FormatPercent, TwoDecimals) {
  EXPECT_EQ(format_percent(50.0), "50.00");
  EXPECT_EQ(format_percent(100.0 / 3.0), "33.33");
  EXPECT_EQ(format_percent(std::nullopt), "n/a");
}

}  // namespace
}  // namespace elegant::closedset
