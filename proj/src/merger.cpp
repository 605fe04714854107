#include "capsg/merger.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>

#include "capsg/num/kernels.hpp"
#include "capsg/num/kmeans.hpp"
#include "capsg/num/linalg.hpp"

namespace capsg::merger {

SimilarityMatrix similarity_matrix(const grounder::SharedEmbeddings& e) {
  const num::Matrix cos = num::cosine_matrix(e.segments, e.segments);
  SimilarityMatrix sim;
  sim.stage = e.stage;
  sim.m = num::Matrix(cos.rows(), cos.cols());
  for (std::size_t i = 0; i < cos.rows(); ++i)
    for (std::size_t j = 0; j < cos.cols(); ++j)
      sim.m(i, j) = i == j ? 1.0 : 0.5 * (cos(i, j) + 1.0);
  return sim;
}

num::Matrix pseudo_target(const grounder::GroundingResult& g, const num::Matrix& cos,
                          double theta) {
  const std::size_t h = g.best_entity.size();
  if (cos.rows() != h) throw_shape("pseudo_target: grounding/cosine size mismatch");
  num::Matrix t(h, h);
  for (std::size_t i = 0; i < h; ++i) {
    const double ci = cos(i, static_cast<std::size_t>(g.best_entity[i]));
    if (!(ci > theta)) continue;
    for (std::size_t j = 0; j < h; ++j) {
      if (g.best_entity[i] != g.best_entity[j]) continue;
      const double cj = cos(j, static_cast<std::size_t>(g.best_entity[j]));
      if (cj > theta) t(i, j) = 1.0;
    }
  }
  return t;
}

double similarity_loss(const SimilarityMatrix& sim, const num::Matrix& target) {
  if (!sim.m.same_shape(target)) throw_shape("similarity_loss: shape mismatch");
  const std::size_t h = sim.m.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < sim.m.size(); ++i) {
    const double d = sim.m.data()[i] - target.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(h * h);
}

SimLossGradients similarity_loss_grad(const num::Matrix& segments,
                                      const num::Matrix& target) {
  const std::size_t h = segments.rows();
  if (target.rows() != h || target.cols() != h)
    throw_shape("similarity_loss_grad: target shape mismatch");

  const num::Matrix cos = num::cosine_matrix(segments, segments);
  SimLossGradients out;
  out.segments = num::Matrix(h, segments.cols());

  std::vector<double> norms(h);
  for (std::size_t i = 0; i < h; ++i) norms[i] = num::row_norm(segments, i);

  double loss = 0.0;
  const double inv_h2 = 1.0 / static_cast<double>(h * h);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const double sim_ij = i == j ? 1.0 : 0.5 * (cos(i, j) + 1.0);
      const double diff = sim_ij - target(i, j);
      loss += diff * diff;
      if (i == j) continue;  // forced diagonal carries no gradient
      // d sim_ij / d x_i = ½ d cos_ij / d x_i
      const double coeff = inv_h2 * 2.0 * diff * 0.5;
      const double inv = 1.0 / (norms[i] * norms[j]);
      for (std::size_t t = 0; t < segments.cols(); ++t) {
        out.segments(i, t) += coeff * (segments(j, t) * inv -
                                       cos(i, j) * segments(i, t) / (norms[i] * norms[i]));
        out.segments(j, t) += coeff * (segments(i, t) * inv -
                                       cos(i, j) * segments(j, t) / (norms[j] * norms[j]));
      }
    }
  }
  out.loss = loss * inv_h2;
  return out;
}

void LrrConfig::validate() const {
  if (!(lambda > 0.0) || !(mu0 > 0.0) || !(mu_max > 0.0) || !(tol > 0.0) || max_iter < 1)
    throw_argument("LrrConfig: all parameters must be positive");
  if (!(rho > 1.0)) throw_argument("LrrConfig: rho must exceed 1");
}

LrrResult lrr_recover(const SimilarityMatrix& sim, const LrrConfig& cfg) {
  cfg.validate();
  const num::Matrix& s = sim.m;
  const std::size_t n = s.rows();
  if (n != s.cols()) throw_shape("lrr_recover: similarity matrix not square");

  // (I + SᵀS) is constant; factor once.
  num::Matrix sts = num::matmul_at_b(s, s);
  num::Matrix lhs = sts;
  for (std::size_t i = 0; i < n; ++i) lhs(i, i) += 1.0;
  const num::CholeskyFactor factor(lhs);

  num::Matrix z(n, n), e(n, n), j(n, n), y1(n, n), y2(n, n);
  double mu = cfg.mu0;
  LrrResult out;
  const double stop = cfg.tol;

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    // J <- svt(Z + Y2/mu, 1/mu)
    num::Matrix jz = z + y2 * (1.0 / mu);
    j = num::svt(jz, 1.0 / mu);

    // Z <- (I + SᵀS)⁻¹ (Sᵀ(S−E) + J + (SᵀY1 − Y2)/mu)
    num::Matrix rhs = num::matmul_at_b(s, s - e) + j +
                      (num::matmul_at_b(s, y1) - y2) * (1.0 / mu);
    z = factor.solve(rhs);

    // E <- l21_shrink(S − S·Z + Y1/mu, lambda/mu)
    num::Matrix sz = num::matmul(s, z);
    e = num::l21_shrink(s - sz + y1 * (1.0 / mu), cfg.lambda / mu);

    num::Matrix r1 = s - sz - e;
    num::Matrix r2 = z - j;
    y1 += r1 * mu;
    y2 += r2 * mu;
    mu = std::min(cfg.rho * mu, cfg.mu_max);

    out.iterations = iter;
    out.residual = std::max(num::max_abs(r1), num::max_abs(r2));
    if (out.residual <= stop) {
      out.converged = true;
      break;
    }
  }
  out.z = std::move(z);
  out.e = std::move(e);
  return out;
}

double ncut_objective(const num::Matrix& affinity, const std::vector<int>& labels) {
  const std::size_t n = affinity.rows();
  if (labels.size() != n) throw_shape("ncut_objective: label count mismatch");
  int c = 0;
  for (int l : labels) c = std::max(c, l + 1);
  std::vector<double> assoc(static_cast<std::size_t>(c), 0.0);
  std::vector<double> cut(static_cast<std::size_t>(c), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double w = affinity(i, j);
      assoc[static_cast<std::size_t>(labels[i])] += w;
      if (labels[i] != labels[j]) cut[static_cast<std::size_t>(labels[i])] += w;
    }
  }
  double total = 0.0;
  for (int a = 0; a < c; ++a) {
    const auto ai = static_cast<std::size_t>(a);
    if (assoc[ai] > 0.0) total += cut[ai] / assoc[ai];
  }
  return total;
}

namespace {

std::vector<int> relabel_by_first_occurrence(const std::vector<int>& labels) {
  std::vector<int> out(labels.size());
  std::map<int, int> remap;
  int next = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, fresh] = remap.emplace(labels[i], next);
    if (fresh) ++next;
    out[i] = it->second;
  }
  return out;
}

// Greedy local search over single-node moves and pairwise swaps while the
// Ncut objective strictly improves. Deterministic: the best move wins,
// lowest indices on ties.
void refine_ncut(const num::Matrix& affinity, std::vector<int>& labels, int clusters) {
  if (clusters < 2) return;
  const std::size_t n = labels.size();
  std::vector<std::size_t> sizes(static_cast<std::size_t>(clusters), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];

  double current = ncut_objective(affinity, labels);
  for (std::size_t pass = 0; pass < 16 * n + 16; ++pass) {
    double best = current - 1e-12;
    std::size_t best_node = n, best_other = n;
    int best_target = -1;
    for (std::size_t v = 0; v < n; ++v) {
      const int from = labels[v];
      if (sizes[static_cast<std::size_t>(from)] <= 1) continue;
      for (int t = 0; t < clusters; ++t) {
        if (t == from) continue;
        labels[v] = t;
        const double obj = ncut_objective(affinity, labels);
        labels[v] = from;
        if (obj < best) {
          best = obj;
          best_node = v;
          best_other = n;
          best_target = t;
        }
      }
    }
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t u = v + 1; u < n; ++u) {
        if (labels[v] == labels[u]) continue;
        std::swap(labels[v], labels[u]);
        const double obj = ncut_objective(affinity, labels);
        std::swap(labels[v], labels[u]);
        if (obj < best) {
          best = obj;
          best_node = v;
          best_other = u;
          best_target = -1;
        }
      }
    }
    if (best_node == n) break;
    if (best_other == n) {
      --sizes[static_cast<std::size_t>(labels[best_node])];
      labels[best_node] = best_target;
      ++sizes[static_cast<std::size_t>(best_target)];
    } else {
      std::swap(labels[best_node], labels[best_other]);
    }
    current = ncut_objective(affinity, labels);
  }
}

}  // namespace

std::vector<int> spectral_cluster(const num::Matrix& z, ClusterCount clusters,
                                  std::uint64_t seed) {
  const std::size_t n = z.rows();
  if (n != z.cols()) throw_shape("spectral_cluster: matrix not square");
  if (n == 0) return {};

  num::Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      w(i, j) = 0.5 * (std::fabs(z(i, j)) + std::fabs(z(j, i)));

  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) degree[i] += w(i, j);

  // Zero-degree nodes are isolated singletons; cluster the rest.
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i)
    if (degree[i] > 0.0) active.push_back(i);

  std::vector<int> labels(n, -1);
  int next_label = 0;
  const std::size_t m = active.size();
  if (m > 0) {
    num::Matrix lap = num::Matrix::identity(m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        lap(a, b) -= w(active[a], active[b]) /
                     std::sqrt(degree[active[a]] * degree[active[b]]);
    const num::EigResult eig = num::sym_eig(lap);

    std::size_t c;
    if (clusters.requested) {
      c = *clusters.requested;
      if (c < 1 || c > m)
        throw_argument("spectral_cluster: requested cluster count out of range");
    } else if (m == 1) {
      c = 1;
    } else {
      // Gap between λ_{c+1} and λ_c of the ascending spectrum; ties keep
      // the smallest count. The zero-eigenvalue multiplicity counts the
      // graph's connected components and floors the cluster count, which
      // also covers spectra where every gap vanishes.
      const std::size_t cap = std::min<std::size_t>(16, m);
      c = 1;
      double best_gap = -1.0;
      for (std::size_t cand = 1; cand + 1 <= m && cand <= cap; ++cand) {
        const double gap = eig.values[cand] - eig.values[cand - 1];
        if (gap > best_gap + 1e-15) {
          best_gap = gap;
          c = cand;
        }
      }
      std::size_t components = 0;
      for (double v : eig.values)
        if (v <= 1e-8) ++components;
      c = std::max(c, std::min(components, cap));
    }

    num::Matrix w_active(m, m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b) w_active(a, b) = w(active[a], active[b]);

    std::vector<int> sub;
    if (c == 2 && m <= 16) {
      // A bipartition of at most 16 nodes is solved exactly; the spectral
      // relaxation can miss the discrete optimum on dense affinities.
      sub.assign(m, 0);
      std::vector<int> candidate(m, 0);
      double best_obj = 1e300;
      for (unsigned code = 1; code < (1u << (m - 1)); ++code) {
        for (std::size_t a = 0; a + 1 < m; ++a)
          candidate[a + 1] = static_cast<int>((code >> a) & 1u);
        const double obj = ncut_objective(w_active, candidate);
        if (obj < best_obj - 1e-15) {
          best_obj = obj;
          sub = candidate;
        }
      }
    } else {
      num::Matrix embed(m, c);
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t j = 0; j < c; ++j) embed(a, j) = eig.vectors(a, j);
      for (std::size_t a = 0; a < m; ++a) {
        const double norm = num::row_norm(embed, a);
        if (norm > 1e-12)
          for (std::size_t j = 0; j < c; ++j) embed(a, j) /= norm;
      }

      sub = num::kmeans(embed, c, seed);

      // For a bipartition also consider every threshold split along the
      // second eigenvector (the classical discrete search) and keep the
      // candidate with the smaller objective before refining.
      if (c == 2 && m >= 2) {
        std::vector<std::size_t> order(m);
        for (std::size_t a = 0; a < m; ++a) order[a] = a;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
          return eig.vectors(x, 1) < eig.vectors(y, 1);
        });
        double best_obj = ncut_objective(w_active, sub);
        std::vector<int> candidate(m);
        for (std::size_t split = 1; split < m; ++split) {
          for (std::size_t a = 0; a < m; ++a) candidate[order[a]] = a < split ? 0 : 1;
          const double obj = ncut_objective(w_active, candidate);
          if (obj < best_obj - 1e-15) {
            best_obj = obj;
            sub = candidate;
          }
        }
      }
      refine_ncut(w_active, sub, static_cast<int>(c));
    }

    for (std::size_t a = 0; a < m; ++a) labels[active[a]] = sub[a];
    for (int l : sub) next_label = std::max(next_label, l + 1);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0) labels[i] = next_label++;

  return relabel_by_first_occurrence(labels);
}

std::vector<Mask> merge_segments(const grouper::SegmentHierarchy& h, std::size_t stage,
                                 const std::vector<int>& labels,
                                 const grouper::ImageFeatures& img) {
  if (stage < 1 || stage > h.stages.size())
    throw_argument("merge_segments: stage out of range");
  const std::size_t count = h.stages[stage - 1].segment_feats.rows();
  if (labels.size() != count) throw_shape("merge_segments: label count mismatch");

  int clusters = 0;
  for (int l : labels) clusters = std::max(clusters, l + 1);
  const std::vector<Mask> seg_masks = grouper::segment_masks(h, stage, img);
  std::vector<Mask> out(static_cast<std::size_t>(clusters),
                        Mask(img.pixel_height(), img.pixel_width()));
  for (std::size_t s = 0; s < seg_masks.size(); ++s) {
    Mask& dst = out[static_cast<std::size_t>(labels[s])];
    for (std::size_t i = 0; i < dst.bits.size(); ++i) dst.bits[i] |= seg_masks[s].bits[i];
  }
  return out;
}

Mask InstanceMap::instance_mask(int id) const {
  Mask m(height, width);
  for (std::size_t i = 0; i < ids.size(); ++i) m.bits[i] = ids[i] == id ? 1 : 0;
  return m;
}

InstanceMap connected_components(const std::vector<Mask>& cluster_masks,
                                 std::size_t min_pixels) {
  InstanceMap out;
  if (cluster_masks.empty()) return out;
  out.height = cluster_masks[0].height;
  out.width = cluster_masks[0].width;
  out.ids.assign(out.height * out.width, 0);

  // Disjointness precondition lets us collapse the masks into one grid.
  std::vector<int> cluster_of(out.height * out.width, -1);
  for (std::size_t ci = 0; ci < cluster_masks.size(); ++ci) {
    const Mask& m = cluster_masks[ci];
    if (m.height != out.height || m.width != out.width)
      throw_shape("connected_components: mask shapes differ");
    for (std::size_t i = 0; i < m.bits.size(); ++i)
      if (m.bits[i]) {
        if (cluster_of[i] != -1)
          throw_argument("connected_components: masks overlap");
        cluster_of[i] = static_cast<int>(ci);
      }
  }

  std::vector<char> visited(out.height * out.width, 0);
  int next_id = 1;
  for (std::size_t start = 0; start < cluster_of.size(); ++start) {
    if (visited[start] || cluster_of[start] < 0) continue;
    const int cluster = cluster_of[start];
    std::vector<std::size_t> component;
    std::queue<std::size_t> frontier;
    frontier.push(start);
    visited[start] = 1;
    while (!frontier.empty()) {
      const std::size_t cur = frontier.front();
      frontier.pop();
      component.push_back(cur);
      const std::size_t r = cur / out.width, c = cur % out.width;
      const std::size_t neighbors[4][2] = {
          {r > 0 ? r - 1 : r, c}, {r + 1 < out.height ? r + 1 : r, c},
          {r, c > 0 ? c - 1 : c}, {r, c + 1 < out.width ? c + 1 : c}};
      for (const auto& nb : neighbors) {
        const std::size_t idx = nb[0] * out.width + nb[1];
        if (idx == cur || visited[idx] || cluster_of[idx] != cluster) continue;
        visited[idx] = 1;
        frontier.push(idx);
      }
    }
    if (component.size() < min_pixels) continue;

    Instance inst;
    inst.id = next_id++;
    inst.cluster = cluster;
    inst.pixels = component.size();
    Box b;
    b.x0 = static_cast<long>(out.width);
    b.y0 = static_cast<long>(out.height);
    for (std::size_t idx : component) {
      out.ids[idx] = inst.id;
      const long r = static_cast<long>(idx / out.width);
      const long c = static_cast<long>(idx % out.width);
      b.x0 = std::min(b.x0, c);
      b.y0 = std::min(b.y0, r);
      b.x1 = std::max(b.x1, c);
      b.y1 = std::max(b.y1, r);
    }
    inst.bbox = b;
    out.instances.push_back(std::move(inst));
  }
  return out;
}

InstanceMap merge_stuff(const InstanceMap& m, const std::set<std::string>& stuff_classes) {
  // Instances keep their scan order; every stuff group collapses onto its
  // first (lowest-id) member.
  std::map<std::string, int> stuff_head;
  std::map<int, int> old_to_head;
  for (const Instance& inst : m.instances) {
    if (stuff_classes.count(inst.label)) {
      auto [it, fresh] = stuff_head.emplace(inst.label, inst.id);
      old_to_head[inst.id] = it->second;
      (void)fresh;
    } else {
      old_to_head[inst.id] = inst.id;
    }
  }

  InstanceMap out;
  out.height = m.height;
  out.width = m.width;
  out.ids.assign(m.ids.size(), 0);

  std::map<int, int> head_to_new;
  for (const Instance& inst : m.instances) {
    const int head = old_to_head.at(inst.id);
    if (head_to_new.count(head)) continue;
    head_to_new[head] = static_cast<int>(out.instances.size()) + 1;
    Instance copy = inst;
    copy.id = head_to_new[head];
    copy.pixels = 0;
    copy.bbox = Box{};
    copy.bbox.x0 = static_cast<long>(m.width);
    copy.bbox.y0 = static_cast<long>(m.height);
    out.instances.push_back(copy);
  }

  for (const Instance& inst : m.instances) {
    const int new_id = head_to_new.at(old_to_head.at(inst.id));
    Instance& dst = out.instances[static_cast<std::size_t>(new_id - 1)];
    dst.pixels += inst.pixels;
    dst.score = std::max(dst.score, inst.score);
    if (inst.bbox.valid()) {
      dst.bbox.x0 = std::min(dst.bbox.x0, inst.bbox.x0);
      dst.bbox.y0 = std::min(dst.bbox.y0, inst.bbox.y0);
      dst.bbox.x1 = std::max(dst.bbox.x1, inst.bbox.x1);
      dst.bbox.y1 = std::max(dst.bbox.y1, inst.bbox.y1);
    }
  }

  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    if (m.ids[i] == 0) continue;
    out.ids[i] = head_to_new.at(old_to_head.at(m.ids[i]));
  }
  return out;
}

}  // namespace capsg::merger
