#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_helpers.hpp"

#include "capsg/eval.hpp"

using namespace capsg;
using namespace capsg::eval;

namespace {

// Scene builder: instances laid out as horizontal strips so masks never
// overlap, with explicit control over labels and relation scores.
struct SceneBuilder {
  Psg psg;
  explicit SceneBuilder(std::size_t h = 12, std::size_t w = 12) {
    psg.height = h;
    psg.width = w;
    psg.label_map.assign(h * w, 0);
    psg.image_id = "scene";
  }
  int add_instance(const std::string& label, std::size_t r0, std::size_t c0,
                   std::size_t r1, std::size_t c1, double score = 1.0) {
    const int id = static_cast<int>(psg.instances.size()) + 1;
    psg.instances.push_back({id, label, score});
    for (std::size_t r = r0; r <= r1; ++r)
      for (std::size_t c = c0; c <= c1; ++c) psg.label_map[r * psg.width + c] = id;
    return id;
  }
  void relate(int sub, int obj, const std::string& predicate, double score) {
    psg.relations.push_back({sub, obj, predicate, score});
  }
};

}  // namespace

TEST_CASE("mask_to_bbox tight bounds") {
  Mask single(4, 5);
  single.set(2, 3);
  const Box b = mask_to_bbox(single);
  CHECK(b.x0 == 3);
  CHECK(b.y0 == 2);
  CHECK(b.x1 == 3);
  CHECK(b.y1 == 2);

  Mask full(3, 4);
  for (auto& bit : full.bits) bit = 1;
  const Box fb = mask_to_bbox(full);
  CHECK(fb.x0 == 0);
  CHECK(fb.y0 == 0);
  CHECK(fb.x1 == 3);
  CHECK(fb.y1 == 2);

  CHECK_THROWS_AS(mask_to_bbox(Mask(2, 2)), Error);

  // Brute-force min/max scan on random masks.
  num::SplitMix64 rng(41);
  for (int rep = 0; rep < 20; ++rep) {
    Mask m(6, 8);
    for (auto& bit : m.bits) bit = rng.below(3) == 0;
    if (m.empty()) continue;
    const Box got = mask_to_bbox(m);
    long x0 = 8, y0 = 6, x1 = -1, y1 = -1;
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 8; ++c)
        if (m.at(r, c)) {
          x0 = std::min(x0, static_cast<long>(c));
          y0 = std::min(y0, static_cast<long>(r));
          x1 = std::max(x1, static_cast<long>(c));
          y1 = std::max(y1, static_cast<long>(r));
        }
    CHECK(got.x0 == x0);
    CHECK(got.y0 == y0);
    CHECK(got.x1 == x1);
    CHECK(got.y1 == y1);
  }
}

TEST_CASE("iou in mask and bbox modes") {
  Mask a(2, 3), b(2, 3);
  a.set(0, 0);
  a.set(0, 1);
  b.set(0, 1);
  b.set(0, 2);
  // Two 2x1 strips overlapping in one pixel: 1 / 3.
  CHECK(iou(a, b, Mode::MaskIou) == doctest::Approx(1.0 / 3.0));

  CHECK(iou(a, a, Mode::MaskIou) == doctest::Approx(1.0));
  CHECK(iou(a, a, Mode::BboxIou) == doctest::Approx(1.0));

  Mask c(2, 3);
  c.set(1, 2);
  CHECK(iou(a, c, Mode::MaskIou) == doctest::Approx(0.0));
  CHECK(iou(Mask(2, 3), Mask(2, 3), Mode::MaskIou) == 0.0);
  CHECK(iou(Mask(2, 3), Mask(2, 3), Mode::BboxIou) == 0.0);

  // Bbox mode sees the enclosing rectangles.
  Mask d1(4, 4), d2(4, 4);
  d1.set(0, 0);
  d1.set(1, 1);  // box (0,0)-(1,1)
  d2.set(1, 1);
  d2.set(2, 2);  // box (1,1)-(2,2)
  CHECK(iou(d1, d2, Mode::BboxIou) == doctest::Approx(1.0 / 7.0));

  CHECK_THROWS_AS(iou(Mask(2, 2), Mask(3, 3), Mode::MaskIou), Error);
}

TEST_CASE("enumerate_triplets caps per pair, sorts and truncates") {
  SceneBuilder s;
  const int a = s.add_instance("cat", 0, 0, 1, 1);
  const int b = s.add_instance("mat", 4, 0, 5, 1);
  for (int i = 0; i < 7; ++i)
    s.relate(a, b, "p" + std::to_string(i), 0.1 * static_cast<double>(i));

  const auto capped = enumerate_triplets(s.psg, 5, 100);
  REQUIRE(capped.size() == 5);  // best 5 of 7 kept
  CHECK(capped[0].predicate == "p6");
  CHECK(capped[4].predicate == "p2");

  const auto few = enumerate_triplets(s.psg, 5, 3);
  CHECK(few.size() == 3);

  const auto all = enumerate_triplets(s.psg, 7, 100);
  CHECK(all.size() == 7);

  // Independent sort-and-cap oracle on a seeded 20-relation graph.
  num::SplitMix64 rng(42);
  SceneBuilder big;
  const int i1 = big.add_instance("a", 0, 0, 0, 1);
  const int i2 = big.add_instance("b", 2, 0, 2, 1);
  const int i3 = big.add_instance("c", 4, 0, 4, 1);
  const int ids[] = {i1, i2, i3};
  for (int rep = 0; rep < 20; ++rep) {
    const int sub = ids[rng.below(3)];
    int obj = ids[rng.below(3)];
    if (obj == sub) obj = ids[(rng.below(2) + 1 + static_cast<std::size_t>(sub - 1)) % 3];
    big.relate(sub, obj, "p" + std::to_string(rng.below(6)),
               0.05 * static_cast<double>(rng.below(20)));
  }
  const std::size_t X = 3, K = 10;
  const auto got = enumerate_triplets(big.psg, X, K);

  // Oracle: group, sort within pair, cap, global sort, truncate.
  std::map<std::pair<int, int>, std::vector<Triplet>> groups;
  for (const auto& r : big.psg.relations)
    groups[{r.subject, r.object}].push_back({r.subject, r.object, r.predicate, r.score});
  std::vector<Triplet> oracle;
  auto order = [](const Triplet& x, const Triplet& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.subject != y.subject) return x.subject < y.subject;
    if (x.object != y.object) return x.object < y.object;
    return x.predicate < y.predicate;
  };
  for (auto& [key, list] : groups) {
    std::stable_sort(list.begin(), list.end(), order);
    for (std::size_t i = 0; i < std::min(X, list.size()); ++i) oracle.push_back(list[i]);
  }
  std::stable_sort(oracle.begin(), oracle.end(), order);
  if (oracle.size() > K) oracle.resize(K);
  REQUIRE(got.size() == oracle.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i].subject == oracle[i].subject);
    CHECK(got[i].object == oracle[i].object);
    CHECK(got[i].predicate == oracle[i].predicate);
  }
}

TEST_CASE("match_recall exact hit and strict IoU boundary") {
  SceneBuilder gt;
  const int gc = gt.add_instance("cat", 0, 0, 3, 3);
  const int gm = gt.add_instance("mat", 6, 0, 9, 3);
  gt.relate(gc, gm, "on", 1.0);

  EvalConfig cfg;
  cfg.task = Task::SGDet;
  cfg.mode = Mode::MaskIou;
  cfg.predicate_cap = 3;
  cfg.recall_cutoff = 50;

  // Identical prediction: recall 1.
  CHECK(match_recall(gt.psg, gt.psg, cfg) == doctest::Approx(1.0));

  // Exact-0.5 endpoint IoU: GT subject covers row 0, the prediction rows
  // 0-1, so IoU(cat) = 4/8 = 0.5 and the strict rule must reject it.
  SceneBuilder b_gt(8, 8), b_pred(8, 8);
  const int bg = b_gt.add_instance("cat", 0, 0, 0, 3);       // one row
  const int bo = b_gt.add_instance("mat", 6, 0, 7, 3);
  b_gt.relate(bg, bo, "on", 1.0);
  const int qg = b_pred.add_instance("cat", 0, 0, 1, 3);     // two rows
  const int qo = b_pred.add_instance("mat", 6, 0, 7, 3);
  b_pred.relate(qg, qo, "on", 1.0);
  // IoU(cat) = 4 / 8 = exactly 0.5 -> must NOT match.
  CHECK(match_recall(b_pred.psg, b_gt.psg, cfg) == doctest::Approx(0.0));

  // PhrDet only needs the union location: the union here is rows 0-1 + mat
  // vs rows 0 + mat; union IoU = 12/16 = 0.75 > 0.5 -> match.
  EvalConfig phr = cfg;
  phr.task = Task::PhrDet;
  CHECK(match_recall(b_pred.psg, b_gt.psg, phr) == doctest::Approx(1.0));
}

TEST_CASE("match_recall is monotone in X and K") {
  num::SplitMix64 rng(43);
  SceneBuilder pred, gt;
  const int p1 = pred.add_instance("cat", 0, 0, 2, 2);
  const int p2 = pred.add_instance("mat", 4, 0, 6, 2);
  const int p3 = pred.add_instance("dog", 8, 0, 10, 2);
  const int g1 = gt.add_instance("cat", 0, 0, 2, 2);
  const int g2 = gt.add_instance("mat", 4, 0, 6, 2);
  const int g3 = gt.add_instance("dog", 8, 0, 10, 2);
  gt.relate(g1, g2, "on", 1.0);
  gt.relate(g2, g3, "near", 1.0);
  gt.relate(g1, g3, "above", 1.0);
  const char* preds[] = {"on", "near", "above", "under", "by"};
  const int pids[] = {p1, p2, p3};
  for (int rep = 0; rep < 25; ++rep) {
    const int sub = pids[rng.below(3)];
    int obj = pids[rng.below(3)];
    if (sub == obj) continue;
    pred.relate(sub, obj, preds[rng.below(5)], rng.uniform());
  }
  double prev_x = -1.0;
  for (std::size_t x : {1u, 2u, 3u, 5u}) {
    EvalConfig cfg;
    cfg.task = Task::SGDet;
    cfg.predicate_cap = x;
    cfg.recall_cutoff = 100;
    const double r = match_recall(pred.psg, gt.psg, cfg);
    CHECK(r >= prev_x - 1e-12);
    prev_x = r;
  }
  double prev_k = -1.0;
  for (std::size_t k : {1u, 2u, 5u, 20u, 100u}) {
    EvalConfig cfg;
    cfg.task = Task::SGDet;
    cfg.predicate_cap = 3;
    cfg.recall_cutoff = k;
    const double r = match_recall(pred.psg, gt.psg, cfg);
    CHECK(r >= prev_k - 1e-12);
    prev_k = r;
  }
}

TEST_CASE("recall invariant under consistent instance-id relabeling") {
  SceneBuilder pred, gt;
  const int p1 = pred.add_instance("cat", 0, 0, 2, 2);
  const int p2 = pred.add_instance("mat", 4, 0, 6, 2);
  pred.relate(p1, p2, "on", 0.9);
  const int g1 = gt.add_instance("cat", 0, 0, 2, 2);
  const int g2 = gt.add_instance("mat", 4, 0, 6, 2);
  gt.relate(g1, g2, "on", 1.0);

  EvalConfig cfg;
  cfg.task = Task::SGDet;
  const double base = match_recall(pred.psg, gt.psg, cfg);

  auto relabel = [](Psg psg, int offset) {
    for (auto& id : psg.label_map)
      if (id != 0) id += offset;
    for (auto& inst : psg.instances) inst.id += offset;
    for (auto& rel : psg.relations) {
      rel.subject += offset;
      rel.object += offset;
    }
    return psg;
  };
  CHECK(match_recall(relabel(pred.psg, 10), relabel(gt.psg, 3), cfg) ==
        doctest::Approx(base));
}

TEST_CASE("canonicalize_labels applies lemma and merge map") {
  SceneBuilder s;
  const int a = s.add_instance("window-blind", 0, 0, 1, 1);
  const int b = s.add_instance("horses", 4, 0, 5, 1);
  s.relate(a, b, "sitting on", 0.5);
  std::map<std::string, std::string> merge_map = {{"window-blind", "window"}};
  canonicalize_labels(s.psg, merge_map);
  CHECK(s.psg.instances[0].label == "window");
  CHECK(s.psg.instances[1].label == "horse");
  CHECK(s.psg.relations[0].predicate == "sit on");
}

TEST_CASE("merge_stuff_psg collapses stuff instances and remaps relations") {
  SceneBuilder s;
  const int g1 = s.add_instance("grass", 0, 0, 1, 1);
  const int g2 = s.add_instance("grass", 4, 0, 5, 1);
  const int person = s.add_instance("person", 8, 0, 9, 1);
  s.relate(person, g1, "on", 0.9);
  s.relate(person, g2, "on", 0.7);
  s.relate(g1, g2, "near", 0.5);  // becomes a self-edge, dropped

  merge_stuff_psg(s.psg, {"grass"});
  CHECK(s.psg.instances.size() == 2);
  REQUIRE(s.psg.relations.size() == 1);
  CHECK(s.psg.relations[0].predicate == "on");
  CHECK(s.psg.relations[0].score == doctest::Approx(0.9));  // best duplicate kept
  std::size_t grass_pixels = 0;
  for (int id : s.psg.label_map)
    if (id == g1) ++grass_pixels;
  CHECK(grass_pixels == 8);  // both grass strips share one id now
}

TEST_CASE("compute_miou oracle cases") {
  SceneBuilder pred(4, 4), gt(4, 4);
  pred.add_instance("cat", 0, 0, 1, 3);
  pred.add_instance("grass", 2, 0, 3, 3);
  gt.add_instance("cat", 0, 0, 1, 3);
  gt.add_instance("grass", 2, 0, 3, 3);

  MiouAccumulator same;
  same.add(pred.psg, gt.psg);
  CHECK(*same.value() == doctest::Approx(1.0));

  // Disjoint single-class maps -> 0.
  SceneBuilder p2(4, 4), g2(4, 4);
  p2.add_instance("cat", 0, 0, 1, 3);
  g2.add_instance("cat", 2, 0, 3, 3);
  MiouAccumulator disjoint;
  disjoint.add(p2.psg, g2.psg);
  CHECK(*disjoint.value() == doctest::Approx(0.0));

  // Hand 4x4 case: pred covers rows 0-2 with "cat", GT rows 0-1.
  SceneBuilder p3(4, 4), g3(4, 4);
  p3.add_instance("cat", 0, 0, 2, 3);
  g3.add_instance("cat", 0, 0, 1, 3);
  MiouAccumulator handmade;
  handmade.add(p3.psg, g3.psg);
  CHECK(*handmade.value() == doctest::Approx(8.0 / 12.0));
}

TEST_CASE("evaluate excludes images without GT triplets and fills the table") {
  SceneBuilder pred, gt;
  const int p1 = pred.add_instance("cat", 0, 0, 2, 2);
  const int p2 = pred.add_instance("mat", 4, 0, 6, 2);
  pred.relate(p1, p2, "on", 0.9);
  const int g1 = gt.add_instance("cat", 0, 0, 2, 2);
  const int g2 = gt.add_instance("mat", 4, 0, 6, 2);
  gt.relate(g1, g2, "on", 1.0);

  SceneBuilder empty_pred, empty_gt;  // no GT triplets -> excluded
  empty_pred.add_instance("cat", 0, 0, 1, 1);
  empty_gt.add_instance("cat", 0, 0, 1, 1);

  const EvalReport report = evaluate({{pred.psg, gt.psg}, {empty_pred.psg, empty_gt.psg}},
                                     Mode::MaskIou, {3, 5}, {50, 100}, {}, {});
  CHECK(report.images == 2);
  CHECK(report.images_with_gt == 1);
  REQUIRE(report.cells.size() == 8);  // 2 tasks x 2 X x 2 K
  for (const auto& cell : report.cells) CHECK(cell.recall == doctest::Approx(1.0));

  const std::string table = report_table(report);
  CHECK(table.find("N3R50") != std::string::npos);
  CHECK(table.find("N5R100") != std::string::npos);
  CHECK(table.find("PhrDet") != std::string::npos);
  CHECK(table.find("SGDet") != std::string::npos);
}
