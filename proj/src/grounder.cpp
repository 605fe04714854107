#include "capsg/grounder.hpp"

#include <cmath>

namespace capsg::grounder {

void GrounderWeights::validate() const {
  if (!(tau > 0.0)) throw_argument("GrounderWeights: tau must be positive");
  if (proj_image.empty()) throw_argument("GrounderWeights: no image projections");
  if (rnn_in.cols() != rnn_rec.rows() || rnn_rec.rows() != rnn_rec.cols() ||
      gate.size() != rnn_rec.rows())
    throw_shape("GrounderWeights: rnn dims inconsistent");
}

GrounderWeights GrounderWeights::seeded(std::size_t stages, std::size_t dim,
                                        std::size_t text_dim, std::size_t rnn_dim,
                                        std::size_t shared_dim, std::uint64_t seed) {
  num::SplitMix64 rng(seed);
  GrounderWeights w;
  for (std::size_t k = 0; k < stages; ++k)
    w.proj_image.push_back(TwoLayerMap::seeded(dim, dim, shared_dim, rng));
  w.proj_text = TwoLayerMap::seeded(text_dim, text_dim, shared_dim, rng);
  const double st = 1.0 / std::sqrt(static_cast<double>(text_dim));
  const double sh = 1.0 / std::sqrt(static_cast<double>(rnn_dim));
  w.rnn_in = gaussian_matrix(text_dim, rnn_dim, st, rng);
  w.rnn_rec = gaussian_matrix(rnn_dim, rnn_dim, sh, rng);
  w.gate.resize(rnn_dim);
  for (auto& g : w.gate) g = sh * rng.gaussian();
  w.tau = 0.07;
  w.theta = -0.5;
  w.validate();
  return w;
}

void SharedEmbeddings::validate() const {
  for (std::size_t i = 0; i < segments.rows(); ++i)
    if (num::row_norm(segments, i) < 1e-12)
      throw_numerical("SharedEmbeddings: zero segment row " + std::to_string(i));
  for (std::size_t i = 0; i < entities.rows(); ++i)
    if (num::row_norm(entities, i) < 1e-12)
      throw_numerical("SharedEmbeddings: zero entity row " + std::to_string(i));
  if (segments.cols() != entities.cols())
    throw_shape("SharedEmbeddings: segment/entity width mismatch");
}

num::Matrix encode_entities(const num::Matrix& tokens,
                            const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                            const GrounderWeights& w) {
  const std::size_t dt = tokens.cols();
  const std::size_t dh = w.gate.size();
  if (w.rnn_in.rows() != dt) throw_shape("encode_entities: token width mismatch");

  num::Matrix out(spans.size(), dt);
  for (std::size_t e = 0; e < spans.size(); ++e) {
    const auto [begin, end] = spans[e];
    if (end < begin || end >= tokens.rows())
      throw_argument("encode_entities: empty or out-of-range span");
    std::vector<double> h(dh, 0.0), h_next(dh);
    std::vector<double> acc(dt, 0.0);
    double weight_sum = 0.0;
    for (std::size_t t = begin; t <= end; ++t) {
      const double* tok = tokens.row(t);
      for (std::size_t j = 0; j < dh; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < dt; ++i) s += tok[i] * w.rnn_in(i, j);
        for (std::size_t i = 0; i < dh; ++i) s += h[i] * w.rnn_rec(i, j);
        h_next[j] = std::tanh(s);
      }
      h.swap(h_next);
      double g = 0.0;
      for (std::size_t i = 0; i < dh; ++i) g += w.gate[i] * h[i];
      const double wt = 1.0 / (1.0 + std::exp(-g));
      weight_sum += wt;
      for (std::size_t i = 0; i < dt; ++i) acc[i] += wt * tok[i];
    }
    for (std::size_t i = 0; i < dt; ++i) out(e, i) = acc[i] / weight_sum;
  }
  return out;
}

SharedEmbeddings embed(const num::Matrix& stage_segments, std::size_t stage,
                       const num::Matrix& entity_feats, const GrounderWeights& w) {
  if (stage < 1 || stage > w.proj_image.size())
    throw_argument("embed: stage out of range");
  SharedEmbeddings e;
  e.stage = stage;
  e.segments = w.proj_image[stage - 1].apply(stage_segments);
  e.entities = w.proj_text.apply(entity_feats);
  e.validate();
  return e;
}

num::Matrix tokenwise_sims(const SharedEmbeddings& e) {
  return num::cosine_matrix(e.segments, e.entities);
}

namespace {

DirectionalSim thresholded_mean(const num::Matrix& cos, double theta, bool rows) {
  const std::size_t n = rows ? cos.rows() : cos.cols();
  const std::size_t m = rows ? cos.cols() : cos.rows();
  DirectionalSim out;
  out.per_item.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = rows ? cos(i, 0) : cos(0, i);
    for (std::size_t j = 1; j < m; ++j) {
      const double v = rows ? cos(i, j) : cos(j, i);
      if (v > mx) mx = v;
    }
    out.per_item[i] = mx;
  }
  double sum = 0.0;
  std::size_t kept = 0;
  for (double v : out.per_item) {
    if (v > theta) {
      sum += v;
      ++kept;
    }
  }
  if (kept == 0) {  // all filtered: fall back to the plain mean
    for (double v : out.per_item) sum += v;
    kept = out.per_item.size();
  }
  out.value = sum / static_cast<double>(kept);
  return out;
}

}  // namespace

DirectionalSim image_to_text_sim(const num::Matrix& cos, double theta) {
  return thresholded_mean(cos, theta, /*rows=*/true);
}

DirectionalSim text_to_image_sim(const num::Matrix& cos, double theta) {
  return thresholded_mean(cos, theta, /*rows=*/false);
}

namespace {

double log_softmax_diag_loss(const num::Matrix& sims, double tau) {
  // mean over i of -log softmax_j(sims[i][j]/tau) at j == i
  const std::size_t b = sims.rows();
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = sims(i, 0) / tau;
    for (std::size_t j = 1; j < b; ++j) mx = std::max(mx, sims(i, j) / tau);
    double lse = 0.0;
    for (std::size_t j = 0; j < b; ++j) lse += std::exp(sims(i, j) / tau - mx);
    loss += -(sims(i, i) / tau - mx - std::log(lse));
  }
  return loss / static_cast<double>(b);
}

}  // namespace

FineLossResult fine_contrastive_loss(const std::vector<SharedEmbeddings>& batch,
                                     const GrounderWeights& w) {
  const std::size_t b = batch.size();
  if (b == 0) throw_argument("fine_contrastive_loss: empty batch");
  for (const auto& e : batch) e.validate();

  FineLossResult out;
  out.p = num::Matrix(b, b);
  out.q = num::Matrix(b, b);
  for (std::size_t i = 0; i < b; ++i) {    // image i
    for (std::size_t j = 0; j < b; ++j) {  // caption j
      const num::Matrix cos =
          num::cosine_matrix(batch[i].segments, batch[j].entities);
      out.p(i, j) = image_to_text_sim(cos, w.theta).value;
      out.q(j, i) = text_to_image_sim(cos, w.theta).value;
    }
  }
  out.i2t = log_softmax_diag_loss(out.p, w.tau);
  out.t2i = log_softmax_diag_loss(out.q, w.tau);
  out.total = 0.5 * (out.i2t + out.t2i);
  return out;
}

std::optional<std::string> degeneracy_of(const std::vector<SharedEmbeddings>& batch,
                                         double theta, double margin) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const num::Matrix cos =
          num::cosine_matrix(batch[i].segments, batch[j].entities);
      const std::size_t h = cos.rows(), e = cos.cols();
      for (std::size_t r = 0; r < h; ++r) {
        double top1 = -2.0, top2 = -2.0;
        for (std::size_t c = 0; c < e; ++c) {
          const double v = cos(r, c);
          if (std::fabs(v - theta) < margin)
            return "threshold kink at pair (" + std::to_string(i) + "," +
                   std::to_string(j) + ") entry (" + std::to_string(r) + "," +
                   std::to_string(c) + ")";
          if (v > top1) {
            top2 = top1;
            top1 = v;
          } else if (v > top2) {
            top2 = v;
          }
        }
        if (e >= 2 && top1 - top2 < margin)
          return "row argmax tie at pair (" + std::to_string(i) + "," +
                 std::to_string(j) + ") row " + std::to_string(r);
      }
      for (std::size_t c = 0; c < e; ++c) {
        double top1 = -2.0, top2 = -2.0;
        for (std::size_t r = 0; r < h; ++r) {
          const double v = cos(r, c);
          if (v > top1) {
            top2 = top1;
            top1 = v;
          } else if (v > top2) {
            top2 = v;
          }
        }
        if (h >= 2 && top1 - top2 < margin)
          return "column argmax tie at pair (" + std::to_string(i) + "," +
                 std::to_string(j) + ") column " + std::to_string(c);
      }
    }
  }
  return std::nullopt;
}

FineLossGradients grad_fine_loss(const std::vector<SharedEmbeddings>& batch,
                                 const GrounderWeights& w) {
  const std::size_t b = batch.size();
  if (b == 0) throw_argument("grad_fine_loss: empty batch");
  if (auto kink = degeneracy_of(batch, w.theta)) throw_numerical("grad_fine_loss: " + *kink);

  const FineLossResult fl = fine_contrastive_loss(batch, w);

  // dL/dP and dL/dQ: softmax minus indicator, scaled by 1/(2·B·tau).
  const double scale = 0.5 / (static_cast<double>(b) * w.tau);
  num::Matrix dP(b, b), dQ(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    double mxp = fl.p(i, 0) / w.tau, mxq = fl.q(i, 0) / w.tau;
    for (std::size_t j = 1; j < b; ++j) {
      mxp = std::max(mxp, fl.p(i, j) / w.tau);
      mxq = std::max(mxq, fl.q(i, j) / w.tau);
    }
    double sp = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      sp += std::exp(fl.p(i, j) / w.tau - mxp);
      sq += std::exp(fl.q(i, j) / w.tau - mxq);
    }
    for (std::size_t j = 0; j < b; ++j) {
      const double softp = std::exp(fl.p(i, j) / w.tau - mxp) / sp;
      const double softq = std::exp(fl.q(i, j) / w.tau - mxq) / sq;
      dP(i, j) = scale * (softp - (i == j ? 1.0 : 0.0));
      dQ(i, j) = scale * (softq - (i == j ? 1.0 : 0.0));
    }
  }

  FineLossGradients out;
  out.loss = fl.total;
  for (const auto& e : batch) {
    out.segments.emplace_back(e.segments.rows(), e.segments.cols());
    out.entities.emplace_back(e.entities.rows(), e.entities.cols());
  }

  for (std::size_t a = 0; a < b; ++a) {    // image a
    for (std::size_t c = 0; c < b; ++c) {  // caption c
      const num::Matrix& x = batch[a].segments;
      const num::Matrix& y = batch[c].entities;
      const num::Matrix cos = num::cosine_matrix(x, y);
      const std::size_t h = cos.rows(), e = cos.cols();

      // Active branch of p^{a->c}: kept rows (or all, on fallback).
      std::vector<int> row_arg(h);
      std::vector<char> row_kept(h);
      std::size_t kept_rows = 0;
      for (std::size_t r = 0; r < h; ++r) {
        std::size_t arg = 0;
        for (std::size_t cc = 1; cc < e; ++cc)
          if (cos(r, cc) > cos(r, arg)) arg = cc;
        row_arg[r] = static_cast<int>(arg);
        row_kept[r] = cos(r, arg) > w.theta ? 1 : 0;
        kept_rows += row_kept[r];
      }
      const bool row_fallback = kept_rows == 0;
      const double row_w =
          1.0 / static_cast<double>(row_fallback ? h : kept_rows);

      std::vector<int> col_arg(e);
      std::vector<char> col_kept(e);
      std::size_t kept_cols = 0;
      for (std::size_t cc = 0; cc < e; ++cc) {
        std::size_t arg = 0;
        for (std::size_t r = 1; r < h; ++r)
          if (cos(r, cc) > cos(arg, cc)) arg = r;
        col_arg[cc] = static_cast<int>(arg);
        col_kept[cc] = cos(arg, cc) > w.theta ? 1 : 0;
        kept_cols += col_kept[cc];
      }
      const bool col_fallback = kept_cols == 0;
      const double col_w =
          1.0 / static_cast<double>(col_fallback ? e : kept_cols);

      // g[r][c] = dL/dcos(r,c), assembled from the p and q paths.
      const double wp = dP(a, c);     // via p^{a->c}
      const double wq = dQ(c, a);     // via q^{c->a}
      num::Matrix g(h, e);
      for (std::size_t r = 0; r < h; ++r)
        if (row_fallback || row_kept[r])
          g(r, static_cast<std::size_t>(row_arg[r])) += wp * row_w;
      for (std::size_t cc = 0; cc < e; ++cc)
        if (col_fallback || col_kept[cc])
          g(static_cast<std::size_t>(col_arg[cc]), cc) += wq * col_w;

      // cos(r,c) = <x_r,y_c>/(|x_r||y_c|)
      std::vector<double> nx(h), ny(e);
      for (std::size_t r = 0; r < h; ++r) nx[r] = num::row_norm(x, r);
      for (std::size_t cc = 0; cc < e; ++cc) ny[cc] = num::row_norm(y, cc);
      const std::size_t d = x.cols();
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t cc = 0; cc < e; ++cc) {
          const double gv = g(r, cc);
          if (gv == 0.0) continue;
          const double inv = 1.0 / (nx[r] * ny[cc]);
          const double cv = cos(r, cc);
          for (std::size_t t = 0; t < d; ++t) {
            out.segments[a](r, t) +=
                gv * (y(cc, t) * inv - cv * x(r, t) / (nx[r] * nx[r]));
            out.entities[c](cc, t) +=
                gv * (x(r, t) * inv - cv * y(cc, t) / (ny[cc] * ny[cc]));
          }
        }
      }
    }
  }
  return out;
}

GroundingResult ground(const SharedEmbeddings& e, double theta) {
  if (e.entities.rows() < 1) throw_argument("ground: need at least one entity");
  const num::Matrix cos = tokenwise_sims(e);
  GroundingResult g;
  g.stage = e.stage;
  g.best_entity.resize(cos.rows());
  g.cosine.resize(cos.rows());
  g.kept.resize(cos.rows());
  for (std::size_t i = 0; i < cos.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < cos.cols(); ++j)
      if (cos(i, j) > cos(i, arg)) arg = j;
    g.best_entity[i] = static_cast<int>(arg);
    g.cosine[i] = cos(i, arg);
    g.kept[i] = cos(i, arg) > theta;
  }
  return g;
}

}  // namespace capsg::grounder
