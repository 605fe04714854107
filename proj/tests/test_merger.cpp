#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "test_helpers.hpp"

#include "capsg/merger.hpp"

using namespace capsg;
using namespace capsg::merger;
using testutil::random_matrix;

namespace {

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [it1, fresh1] = fwd.emplace(a[i], b[i]);
    if (!fresh1 && it1->second != b[i]) return false;
    auto [it2, fresh2] = bwd.emplace(b[i], a[i]);
    if (!fresh2 && it2->second != a[i]) return false;
  }
  return true;
}

grounder::SharedEmbeddings embeddings_of(const num::Matrix& segments) {
  grounder::SharedEmbeddings e;
  e.stage = 1;
  e.segments = segments;
  e.entities = num::Matrix(0, segments.cols());
  return e;
}

}  // namespace

TEST_CASE("similarity_matrix maps cosine extremes to 1, 0 and 0.5") {
  num::Matrix segs(4, 2);
  segs(0, 0) = 1.0;               // reference direction
  segs(1, 0) = 2.0;               // same direction -> 1
  segs(2, 0) = -1.0;              // opposite -> 0
  segs(3, 1) = 3.0;               // orthogonal -> 0.5
  const SimilarityMatrix sim = similarity_matrix(embeddings_of(segs));
  CHECK(sim.m(0, 1) == doctest::Approx(1.0));
  CHECK(sim.m(0, 2) == doctest::Approx(0.0));
  CHECK(sim.m(0, 3) == doctest::Approx(0.5));
  for (std::size_t i = 0; i < 4; ++i) CHECK(sim.m(i, i) == 1.0);

  num::SplitMix64 rng(20);
  const SimilarityMatrix fuzz = similarity_matrix(embeddings_of(random_matrix(6, 4, rng)));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(fuzz.m(i, j) == fuzz.m(j, i));
      CHECK(fuzz.m(i, j) >= 0.0);
      CHECK(fuzz.m(i, j) <= 1.0);
    }
  }
}

TEST_CASE("pseudo_target triple condition") {
  grounder::GroundingResult g;
  g.stage = 1;
  g.best_entity = {0, 0, 1};
  num::Matrix cos(3, 2);
  cos(0, 0) = 0.8;
  cos(1, 0) = 0.7;
  cos(2, 1) = -0.9;  // below theta

  const num::Matrix t = pseudo_target(g, cos, -0.5);
  CHECK(t(0, 0) == 1.0);  // diagonal included when kept
  CHECK(t(0, 1) == 1.0);
  CHECK(t(1, 0) == 1.0);
  CHECK(t(2, 2) == 0.0);  // filtered row/column all zero
  CHECK(t(0, 2) == 0.0);
  CHECK(t(2, 0) == 0.0);

  // All grounded to one entity above theta -> all-ones.
  grounder::GroundingResult all;
  all.best_entity = {0, 0, 0};
  num::Matrix cos_all(3, 1, 0.9);
  const num::Matrix ones = pseudo_target(all, cos_all, -0.5);
  for (std::size_t i = 0; i < ones.size(); ++i) CHECK(ones.data()[i] == 1.0);

  // Brute-force entry oracle on a seeded case.
  num::SplitMix64 rng(21);
  grounder::GroundingResult r;
  num::Matrix rcos(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) rcos(i, j) = rng.uniform(-1.0, 1.0);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 3; ++j)
      if (rcos(i, j) > rcos(i, arg)) arg = j;
    r.best_entity.push_back(static_cast<int>(arg));
  }
  const double theta = -0.1;
  const num::Matrix rt = pseudo_target(r, rcos, theta);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const bool expect = r.best_entity[i] == r.best_entity[j] &&
                          rcos(i, static_cast<std::size_t>(r.best_entity[i])) > theta &&
                          rcos(j, static_cast<std::size_t>(r.best_entity[j])) > theta;
      CHECK(rt(i, j) == (expect ? 1.0 : 0.0));
      CHECK(rt(i, j) == rt(j, i));  // symmetric
    }
  }
}

TEST_CASE("similarity_loss values and gradient") {
  SimilarityMatrix sim;
  sim.m = num::Matrix{{1.0, 1.0}, {1.0, 1.0}};
  CHECK(similarity_loss(sim, sim.m) == 0.0);
  CHECK(similarity_loss(sim, num::Matrix(2, 2)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(similarity_loss(sim, num::Matrix(3, 3)), Error);

  // Entrywise double-loop oracle on a seeded 4x4 case.
  num::SplitMix64 rng(22);
  const num::Matrix segs = random_matrix(4, 5, rng);
  num::Matrix target(4, 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) target(i, j) = ((i < 2) == (j < 2)) ? 1.0 : 0.0;
  const SimilarityMatrix s = similarity_matrix(embeddings_of(segs));
  double oracle = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = s.m(i, j) - target(i, j);
      oracle += d * d;
    }
  oracle /= 16.0;
  CHECK(similarity_loss(s, target) == doctest::Approx(oracle).epsilon(1e-15));

  // Analytic gradient against central finite differences.
  const SimLossGradients g = similarity_loss_grad(segs, target);
  CHECK(g.loss == doctest::Approx(oracle).epsilon(1e-12));
  const double eps = 1e-6;
  double max_diff = 0.0, scale = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      num::Matrix plus = segs, minus = segs;
      plus(r, c) += eps;
      minus(r, c) -= eps;
      const double fd = (similarity_loss_grad(plus, target).loss -
                         similarity_loss_grad(minus, target).loss) /
                        (2.0 * eps);
      max_diff = std::max(max_diff, std::fabs(fd - g.segments(r, c)));
      scale = std::max({scale, std::fabs(fd), std::fabs(g.segments(r, c))});
    }
  }
  CHECK(max_diff / std::max(scale, 1e-12) <= 1e-5);
}

TEST_CASE("lrr_recover: zero matrix converges immediately, defaults honored") {
  LrrConfig cfg;
  CHECK(cfg.lambda == doctest::Approx(0.4));
  SimilarityMatrix zero;
  zero.m = num::Matrix(4, 4);
  const LrrResult r = lrr_recover(zero, cfg);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(num::max_abs(r.z) == 0.0);
  CHECK(num::max_abs(r.e) == 0.0);
}

namespace {

SimilarityMatrix noisy_blocks(const std::vector<std::size_t>& sizes, double noise,
                              std::uint64_t seed, std::vector<int>* truth) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  num::SplitMix64 rng(seed);
  SimilarityMatrix sim;
  sim.m = num::Matrix(n, n);
  std::vector<int> labels(n);
  std::size_t offset = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (std::size_t i = 0; i < sizes[b]; ++i) labels[offset + i] = static_cast<int>(b);
    offset += sizes[b];
  }
  for (std::size_t i = 0; i < n; ++i) {
    sim.m(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double base = labels[i] == labels[j] ? 1.0 : 0.0;
      const double value = std::fabs(base - rng.uniform(0.0, noise));
      sim.m(i, j) = sim.m(j, i) = value;
    }
  }
  if (truth) *truth = labels;
  return sim;
}

}  // namespace

TEST_CASE("lrr_recover + spectral_cluster recover planted blocks") {
  LrrConfig cfg;
  std::vector<int> truth;
  const SimilarityMatrix sim = noisy_blocks({3, 3, 2}, 0.05, 77, &truth);
  const LrrResult lrr = lrr_recover(sim, cfg);
  CHECK(lrr.converged);
  CHECK(lrr.iterations <= 500);
  CHECK(lrr.residual <= 1e-6);

  // Constraint residual: Sim = Sim·Z + E within tolerance.
  const num::Matrix rec = sim.m - num::matmul(sim.m, lrr.z) - lrr.e;
  CHECK(num::max_abs(rec) <= 1e-6 * (1.0 + num::max_abs(sim.m)));

  const auto labels = spectral_cluster(lrr.z, ClusterCount::automatic(), 3);
  CHECK(same_partition(labels, truth));
}

TEST_CASE("spectral_cluster trivial cases") {
  // Exact 2-block affinity: disconnected components, any seed.
  num::Matrix w(4, 4);
  w(0, 1) = w(1, 0) = 1.0;
  w(2, 3) = w(3, 2) = 1.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto labels = spectral_cluster(w, ClusterCount::exactly(2), seed);
    CHECK(labels[0] == labels[1]);
    CHECK(labels[2] == labels[3]);
    CHECK(labels[0] != labels[2]);
  }

  // Complete graph with auto count collapses to one cluster.
  const num::Matrix ones(5, 5, 1.0);
  const auto auto_labels = spectral_cluster(ones, ClusterCount::automatic(), 1);
  for (int l : auto_labels) CHECK(l == 0);

  // Zero-degree nodes become singletons.
  num::Matrix iso(3, 3);
  iso(0, 1) = iso(1, 0) = 1.0;
  const auto iso_labels = spectral_cluster(iso, ClusterCount::automatic(), 1);
  CHECK(iso_labels[0] == iso_labels[1]);
  CHECK(iso_labels[2] != iso_labels[0]);
}

TEST_CASE("spectral_cluster c=2 matches the exhaustive Ncut minimum") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    num::SplitMix64 rng(9000 + seed);
    const std::size_t n = 6;
    num::Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) w(i, j) = w(j, i) = rng.uniform(0.0, 1.0);

    const auto labels = spectral_cluster(w, ClusterCount::exactly(2), seed);
    const double got = ncut_objective(w, labels);

    double best = 1e300;
    for (unsigned code = 1; code < (1u << (n - 1)); ++code) {
      std::vector<int> assign(n, 0);
      for (std::size_t i = 0; i + 1 < n; ++i) assign[i + 1] = (code >> i) & 1u;
      best = std::min(best, ncut_objective(w, assign));
    }
    CHECK(got <= best + 1e-9);
  }
}

TEST_CASE("spectral_cluster is stable under index permutation") {
  std::vector<int> truth;
  const SimilarityMatrix sim = noisy_blocks({3, 2}, 0.05, 5, &truth);
  const auto labels = spectral_cluster(sim.m, ClusterCount::exactly(2), 11);

  // Reverse the node order and cluster again.
  const std::size_t n = 5;
  num::Matrix perm(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) perm(i, j) = sim.m(n - 1 - i, n - 1 - j);
  const auto relabeled = spectral_cluster(perm, ClusterCount::exactly(2), 11);
  std::vector<int> undone(n);
  for (std::size_t i = 0; i < n; ++i) undone[i] = relabeled[n - 1 - i];
  CHECK(same_partition(labels, undone));
}

TEST_CASE("merge_segments unions masks per cluster") {
  num::SplitMix64 rng(23);
  const grouper::GrouperWeights w = grouper::GrouperWeights::seeded(4, {3}, 6);
  const grouper::ImageFeatures img = testutil::make_features(2, 3, 4, 2, rng);
  const grouper::SegmentHierarchy h = grouper::group_forward(img, w, true);

  // Single cluster swallows the whole image.
  const auto all = merge_segments(h, 1, {0, 0, 0}, img);
  REQUIRE(all.size() == 1);
  CHECK(all[0].count() == img.pixel_height() * img.pixel_width());

  // A random labeling still partitions the image.
  const auto split = merge_segments(h, 1, {0, 1, 0}, img);
  std::size_t total = 0;
  for (const auto& m : split) total += m.count();
  CHECK(total == img.pixel_height() * img.pixel_width());
  CHECK(mask_intersection_count(split[0], split[1]) == 0);

  CHECK_THROWS_AS(merge_segments(h, 1, {0, 1}, img), Error);
}

TEST_CASE("connected_components splits masks by 4-connectivity") {
  // One solid mask -> one instance.
  Mask solid(4, 4);
  for (auto& b : solid.bits) b = 1;
  const InstanceMap one = connected_components({solid});
  CHECK(one.instances.size() == 1);
  CHECK(one.instances[0].pixels == 16);

  // Two separated squares -> two instances.
  Mask squares(4, 6);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      squares.set(r, c);
      squares.set(r + 2, c + 4);
    }
  const InstanceMap two = connected_components({squares});
  CHECK(two.instances.size() == 2);

  // Diagonal touch is not connected under 4-connectivity.
  Mask diag(2, 2);
  diag.set(0, 0);
  diag.set(1, 1);
  const InstanceMap corners = connected_components({diag});
  CHECK(corners.instances.size() == 2);

  // min_pixels drops small components to id 0.
  const InstanceMap filtered = connected_components({diag}, 2);
  CHECK(filtered.instances.empty());
  for (int id : filtered.ids) CHECK(id == 0);

  // Bounding boxes are tight.
  CHECK(two.instances[0].bbox.x0 == 0);
  CHECK(two.instances[0].bbox.y1 == 1);
}

TEST_CASE("merge_stuff collapses same-label stuff instances only") {
  Mask left(2, 6), mid(2, 6), right(2, 6);
  for (std::size_t r = 0; r < 2; ++r) {
    left.set(r, 0);
    mid.set(r, 2);
    right.set(r, 4);
  }
  InstanceMap m = connected_components({left, mid, right});
  REQUIRE(m.instances.size() == 3);
  m.instances[0].label = "grass";
  m.instances[1].label = "grass";
  m.instances[2].label = "person";

  const InstanceMap merged = merge_stuff(m, {"grass"});
  REQUIRE(merged.instances.size() == 2);
  std::map<std::string, std::size_t> pixels;
  for (const auto& inst : merged.instances) pixels[inst.label] += inst.pixels;
  CHECK(pixels["grass"] == 4);
  CHECK(pixels["person"] == 2);

  // Thing classes stay separate.
  InstanceMap things = connected_components({left, mid});
  things.instances[0].label = "person";
  things.instances[1].label = "person";
  const InstanceMap unchanged = merge_stuff(things, {"grass"});
  CHECK(unchanged.instances.size() == 2);

  // Count instances per label by scanning the id grid (set-union oracle).
  std::map<int, std::set<std::size_t>> by_id;
  for (std::size_t i = 0; i < merged.ids.size(); ++i)
    if (merged.ids[i] != 0) by_id[merged.ids[i]].insert(i);
  CHECK(by_id.size() == merged.instances.size());
}

TEST_CASE("lrr_recover flags non-convergence instead of throwing") {
  std::vector<int> truth;
  const SimilarityMatrix sim = noisy_blocks({3, 3}, 0.05, 9, &truth);
  LrrConfig cfg;
  cfg.max_iter = 2;  // far too few iterations
  const LrrResult r = lrr_recover(sim, cfg);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
  CHECK(r.residual > cfg.tol);
}
