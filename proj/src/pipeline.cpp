#include "capsg/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "json.hpp"

#include "capsg/eval.hpp"
#include "capsg/grounder.hpp"
#include "capsg/grouper.hpp"
#include "capsg/io/tensor_file.hpp"
#include "capsg/io/weights.hpp"
#include "capsg/labeler.hpp"
#include "capsg/merger.hpp"

namespace capsg::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void apply_threads(const CommonOptions& common) {
#ifdef _OPENMP
  if (common.threads > 0) omp_set_num_threads(common.threads);
#else
  (void)common;
#endif
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw_format(what + ": invalid JSON: " + e.what());
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str(), path);
}

std::vector<std::string> list_files(const std::string& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw_data("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ext)
      out.push_back(entry.path().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> load_label_list(const std::string& path) {
  const json root = load_json_file(path);
  if (!root.is_array()) throw_format(path + ": expected a JSON array of strings");
  std::vector<std::string> out;
  for (const auto& v : root) {
    if (!v.is_string()) throw_format(path + ": expected strings");
    out.push_back(v.get<std::string>());
  }
  if (out.empty()) throw_data(path + ": empty label list");
  return out;
}

std::set<std::string> load_label_set(const std::string& path) {
  const auto list = load_label_list(path);
  return {list.begin(), list.end()};
}

std::map<std::string, std::string> load_merge_map(const std::string& path) {
  const json root = load_json_file(path);
  if (!root.is_object()) throw_format(path + ": expected a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : root.items()) out[k] = v.get<std::string>();
  return out;
}

io::ModelWeights load_or_seed_weights(const std::string& path, std::uint64_t seed) {
  if (path.empty()) return io::seeded_weights(io::ModelConfig{}, seed);
  io::ModelWeights w = io::load_weights(path);
  w.seed = seed;
  return w;
}

}  // namespace

// ----------------------------------------------------------------- PSG JSON

std::string psg_to_json_string(const Psg& psg) {
  json root;
  root["image_id"] = psg.image_id;
  root["height"] = psg.height;
  root["width"] = psg.width;

  json rle = json::array();
  std::size_t i = 0;
  while (i < psg.label_map.size()) {
    std::size_t j = i;
    while (j < psg.label_map.size() && psg.label_map[j] == psg.label_map[i]) ++j;
    rle.push_back(json::array({psg.label_map[i], j - i}));
    i = j;
  }
  if (psg.label_map.empty()) rle = json::array();
  root["labelmap_rle"] = std::move(rle);

  json instances = json::array();
  for (const auto& inst : psg.instances)
    instances.push_back(
        {{"id", inst.id}, {"label", inst.label}, {"score", inst.score}});
  root["instances"] = std::move(instances);

  json relations = json::array();
  for (const auto& rel : psg.relations)
    relations.push_back({{"sub", rel.subject},
                         {"obj", rel.object},
                         {"predicate", rel.predicate},
                         {"score", rel.score}});
  root["relations"] = std::move(relations);

  if (!psg.meta.empty()) root["meta"] = parse_json(psg.meta, "psg meta");
  return root.dump(1);
}

Psg psg_from_json_string(const std::string& text) {
  const json root = parse_json(text, "psg");
  Psg psg;
  try {
    psg.image_id = root.at("image_id").get<std::string>();
    psg.height = root.at("height").get<std::size_t>();
    psg.width = root.at("width").get<std::size_t>();
    std::uint64_t total = 0;
    for (const auto& run : root.at("labelmap_rle")) {
      const int id = run.at(0).get<int>();
      const std::uint64_t len = run.at(1).get<std::uint64_t>();
      total += len;
      psg.label_map.insert(psg.label_map.end(), len, id);
    }
    if (total != static_cast<std::uint64_t>(psg.height) * psg.width)
      throw_format("psg: RLE runs sum to " + std::to_string(total) + ", expected " +
                   std::to_string(psg.height * psg.width));
    for (const auto& inst : root.at("instances"))
      psg.instances.push_back(PsgInstance{inst.at("id").get<int>(),
                                          inst.at("label").get<std::string>(),
                                          inst.at("score").get<double>()});
    for (const auto& rel : root.at("relations"))
      psg.relations.push_back(PsgRelation{rel.at("sub").get<int>(),
                                          rel.at("obj").get<int>(),
                                          rel.at("predicate").get<std::string>(),
                                          rel.at("score").get<double>()});
    if (root.contains("meta")) psg.meta = root.at("meta").dump();
  } catch (const json::exception& e) {
    throw_format(std::string("psg: malformed record: ") + e.what());
  }
  psg.validate();
  return psg;
}

Psg read_psg_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open PSG file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return psg_from_json_string(buf.str());
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

void write_psg_json(const Psg& psg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot open PSG file for writing: " + path);
  out << psg_to_json_string(psg) << "\n";
}

// ----------------------------------------------------------- TextGraph JSON

std::string textgraph_to_json_line(const text::TextGraph& graph) {
  json root;
  root["caption_id"] = graph.caption_id;
  json tokens = json::array();
  for (const auto& t : graph.tokens)
    tokens.push_back(json::array({t.text, text::tag_name(t.tag)}));
  root["tokens"] = std::move(tokens);
  json entities = json::array();
  for (const auto& e : graph.entities)
    entities.push_back({{"id", e.id},
                        {"span", json::array({e.span_begin, e.span_end})},
                        {"head", e.head_text},
                        {"lemma", e.lemma}});
  root["entities"] = std::move(entities);
  json edges = json::array();
  for (const auto& e : graph.edges)
    edges.push_back({{"subject", e.subject},
                     {"predicate", e.predicate},
                     {"lemma", e.lemma},
                     {"object", e.object}});
  root["edges"] = std::move(edges);
  return root.dump();
}

text::TextGraph textgraph_from_json_line(const std::string& line) {
  const json root = parse_json(line, "text graph");
  text::TextGraph g;
  try {
    g.caption_id = root.at("caption_id").get<std::string>();
    std::size_t index = 0;
    for (const auto& t : root.at("tokens")) {
      text::Token token;
      token.text = t.at(0).get<std::string>();
      const auto tag = text::tag_from_name(t.at(1).get<std::string>());
      if (!tag) throw_format("text graph: unknown tag " + t.at(1).get<std::string>());
      token.tag = *tag;
      token.index = index++;
      g.tokens.push_back(std::move(token));
    }
    for (const auto& e : root.at("entities")) {
      text::Entity entity;
      entity.id = e.at("id").get<int>();
      entity.span_begin = e.at("span").at(0).get<std::size_t>();
      entity.span_end = e.at("span").at(1).get<std::size_t>();
      entity.head_text = e.at("head").get<std::string>();
      entity.lemma = e.at("lemma").get<std::string>();
      g.entities.push_back(std::move(entity));
    }
    for (const auto& e : root.at("edges"))
      g.edges.push_back(text::Edge{e.at("subject").get<int>(),
                                   e.at("predicate").get<std::string>(),
                                   e.at("lemma").get<std::string>(),
                                   e.at("object").get<int>()});
  } catch (const json::exception& e) {
    throw_format(std::string("text graph: malformed record: ") + e.what());
  }
  return g;
}

// ------------------------------------------------------------------- parse

int cmd_parse(const ParseOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  std::ifstream in(opt.captions_path);
  if (!in) throw_data("cannot open captions file: " + opt.captions_path);

  std::vector<std::pair<std::string, std::string>> captions;  // id, caption
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record;
    try {
      record = json::parse(line);
      captions.emplace_back(record.at("id").get<std::string>(),
                            record.at("caption").get<std::string>());
    } catch (const json::exception& e) {
      throw_format(opt.captions_path + ":" + std::to_string(line_no) +
                   ": malformed caption record: " + e.what());
    }
  }

  std::vector<text::TextGraph> graphs(captions.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(captions.size()); ++i) {
    const auto& [id, caption] = captions[static_cast<std::size_t>(i)];
    graphs[static_cast<std::size_t>(i)] = text::parse_caption(id, caption);
  }

  std::ofstream out(opt.out_path, std::ios::trunc);
  if (!out) throw_data("cannot open output file: " + opt.out_path);

  if (!opt.merge) {
    for (const auto& g : graphs) out << textgraph_to_json_line(g) << "\n";
    return kExitOk;
  }

  // Group captions by image id prefix, first-seen order.
  std::vector<std::string> image_order;
  std::map<std::string, std::vector<text::TextGraph>> by_image;
  for (auto& g : graphs) {
    const std::string image = text::image_id_of(g.caption_id);
    if (!by_image.count(image)) image_order.push_back(image);
    by_image[image].push_back(std::move(g));
  }
  for (const auto& image : image_order) {
    const auto& group = by_image[image];
    const text::TextGraph merged =
        group.size() == 1 && group[0].caption_id == image
            ? group[0]
            : text::merge_text_graphs(group);
    out << textgraph_to_json_line(merged) << "\n";
  }
  return kExitOk;
}

// ------------------------------------------------------------------ ground

namespace {

grouper::ImageFeatures load_image_features(const std::string& feats_dir,
                                           const std::string& image_id,
                                           std::size_t patch_size) {
  const std::string path = feats_dir + "/" + image_id + ".ftns";
  if (!fs::exists(path)) throw_data("missing feature file for image '" + image_id + "'");
  grouper::ImageFeatures img;
  img.image_id = image_id;
  img.patch_size = patch_size;
  img.feats = io::grid_from_tensor(io::read_tensor(path), img.grid_rows, img.grid_cols);
  img.validate();
  return img;
}

}  // namespace

int cmd_ground(const GroundOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  io::ModelWeights weights = load_or_seed_weights(opt.weights_path, common.seed);
  if (opt.theta) weights.grounder.theta = *opt.theta;
  const double theta = weights.grounder.theta;

  std::ifstream in(opt.graphs_path);
  if (!in) throw_data("cannot open graphs file: " + opt.graphs_path);
  std::vector<text::TextGraph> graphs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    graphs.push_back(textgraph_from_json_line(line));
  }

  struct PerImage {
    std::string caption_id, image_id;
    bool skipped = false;
    std::vector<grounder::SharedEmbeddings> embeddings;  // per stage
    std::vector<grounder::GroundingResult> grounding;
    std::vector<merger::SimilarityMatrix> sims;
    std::vector<num::Matrix> targets;
    std::vector<double> l_sim;
  };
  std::vector<PerImage> items(graphs.size());
  std::vector<std::string> errors(graphs.size());

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(graphs.size()); ++idx) {
    const std::size_t i = static_cast<std::size_t>(idx);
    PerImage& item = items[i];
    try {
      const text::TextGraph& g = graphs[i];
      item.caption_id = g.caption_id;
      item.image_id = text::image_id_of(g.caption_id);
      if (g.entities.empty()) {
        item.skipped = true;
        continue;
      }
      const grouper::ImageFeatures img =
          load_image_features(opt.feats_dir, item.image_id, weights.config.patch_size);
      const std::string tok_path = opt.tokens_dir + "/" + g.caption_id + ".ftns";
      if (!fs::exists(tok_path))
        throw_data("missing token file for caption '" + g.caption_id + "'");
      const num::Matrix tokens = io::matrix_from_tensor(io::read_tensor(tok_path));
      if (tokens.rows() != g.tokens.size())
        throw_data("token tensor rows != graph token count for '" + g.caption_id + "'");

      std::vector<std::pair<std::size_t, std::size_t>> spans;
      for (const auto& e : g.entities) spans.emplace_back(e.span_begin, e.span_end);
      const num::Matrix entity_feats =
          grounder::encode_entities(tokens, spans, weights.grounder);

      const grouper::SegmentHierarchy hier =
          grouper::group_forward(img, weights.grouper, /*hard=*/false);
      for (std::size_t k = 1; k <= hier.stages.size(); ++k) {
        grounder::SharedEmbeddings emb = grounder::embed(
            hier.stages[k - 1].segment_feats, k, entity_feats, weights.grounder);
        const num::Matrix cos = grounder::tokenwise_sims(emb);
        grounder::GroundingResult gr = grounder::ground(emb, theta);
        merger::SimilarityMatrix sim = merger::similarity_matrix(emb);
        num::Matrix target = merger::pseudo_target(gr, cos, theta);
        item.l_sim.push_back(merger::similarity_loss(sim, target));
        item.embeddings.push_back(std::move(emb));
        item.grounding.push_back(std::move(gr));
        item.sims.push_back(std::move(sim));
        item.targets.push_back(std::move(target));
      }
    } catch (const Error& e) {
      errors[i] = e.what();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) throw_data(err);

  // Batch loss per stage over the non-skipped images.
  const std::size_t stages = weights.config.stages();
  std::vector<grounder::FineLossResult> batch_losses;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (!items[i].skipped) active.push_back(i);
  for (std::size_t k = 0; k < stages; ++k) {
    std::vector<grounder::SharedEmbeddings> batch;
    for (std::size_t i : active) batch.push_back(items[i].embeddings[k]);
    if (batch.empty()) break;
    batch_losses.push_back(grounder::fine_contrastive_loss(batch, weights.grounder));
  }

  std::ofstream out(opt.out_path, std::ios::trunc);
  if (!out) throw_data("cannot open output file: " + opt.out_path);

  json header;
  header["batch"]["images"] = active.size();
  header["batch"]["theta"] = theta;
  json l_fine = json::array();
  for (std::size_t k = 0; k < batch_losses.size(); ++k)
    l_fine.push_back({{"stage", k + 1},
                      {"total", batch_losses[k].total},
                      {"i2t", batch_losses[k].i2t},
                      {"t2i", batch_losses[k].t2i}});
  header["batch"]["l_fine"] = std::move(l_fine);
  json skipped = json::array();
  for (const auto& item : items)
    if (item.skipped) skipped.push_back(item.caption_id);
  header["batch"]["skipped"] = std::move(skipped);
  out << header.dump() << "\n";

  auto matrix_json = [](const num::Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
      json row = json::array();
      for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(std::move(row));
    }
    return rows;
  };

  for (const auto& item : items) {
    if (item.skipped) continue;
    json rec;
    rec["caption_id"] = item.caption_id;
    rec["image_id"] = item.image_id;
    json stages_json = json::array();
    for (std::size_t k = 0; k < item.grounding.size(); ++k) {
      json stage;
      stage["stage"] = k + 1;
      stage["l_sim"] = item.l_sim[k];
      json grounding = json::array();
      const auto& gr = item.grounding[k];
      for (std::size_t s = 0; s < gr.best_entity.size(); ++s)
        grounding.push_back({{"segment", s},
                             {"entity", gr.best_entity[s]},
                             {"cos", gr.cosine[s]},
                             {"kept", static_cast<bool>(gr.kept[s])}});
      stage["grounding"] = std::move(grounding);
      stage["sim"] = matrix_json(item.sims[k].m);
      stage["target"] = matrix_json(item.targets[k]);
      stages_json.push_back(std::move(stage));
    }
    rec["stages"] = std::move(stages_json);
    out << rec.dump() << "\n";
  }
  return kExitOk;
}

// --------------------------------------------------------------- gradcheck

namespace {

double rel_error_inf(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::fabs(analytic[i] - fd[i]));
    scale = std::max({scale, std::fabs(analytic[i]), std::fabs(fd[i])});
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace

int cmd_gradcheck(const GradcheckOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  io::ModelWeights weights = load_or_seed_weights(opt.weights_path, common.seed);

  const std::size_t B = 3, H = 5, E = 4, D = 8;
  grounder::GrounderWeights gw = weights.grounder;

  // Non-degenerate seeded batch; points too close to a kink are regenerated.
  std::vector<grounder::SharedEmbeddings> batch;
  for (std::uint64_t attempt = 0;; ++attempt) {
    num::SplitMix64 rng(common.seed * 7919 + attempt + 1);
    batch.clear();
    for (std::size_t b = 0; b < B; ++b) {
      grounder::SharedEmbeddings e;
      e.stage = 1;
      e.segments = gaussian_matrix(H, D, 1.0, rng);
      e.entities = gaussian_matrix(E, D, 1.0, rng);
      batch.push_back(std::move(e));
    }
    if (!grounder::degeneracy_of(batch, gw.theta, 1e-3)) break;
    if (attempt > 1000) throw_numerical("gradcheck: no non-degenerate point found");
  }

  const grounder::FineLossGradients grads = grounder::grad_fine_loss(batch, gw);
  std::vector<double> analytic, fd;
  auto loss_at = [&](const std::vector<grounder::SharedEmbeddings>& pt) {
    return grounder::fine_contrastive_loss(pt, gw).total;
  };
  for (std::size_t b = 0; b < B; ++b) {
    for (auto which : {0, 1}) {
      const num::Matrix& g = which == 0 ? grads.segments[b] : grads.entities[b];
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          double a = g(r, c);
          std::vector<grounder::SharedEmbeddings> plus = batch, minus = batch;
          num::Matrix& mp = which == 0 ? plus[b].segments : plus[b].entities;
          num::Matrix& mm = which == 0 ? minus[b].segments : minus[b].entities;
          mp(r, c) += opt.eps;
          mm(r, c) -= opt.eps;
          analytic.push_back(a);
          fd.push_back((loss_at(plus) - loss_at(minus)) / (2.0 * opt.eps));
        }
      }
    }
  }
  if (opt.corrupt && !analytic.empty()) analytic[0] += 1e-3;
  const double fine_err = rel_error_inf(analytic, fd);

  // Similarity loss gradient on a seeded embedding with a clique target.
  num::SplitMix64 rng2(common.seed * 31 + 11);
  num::Matrix segs = gaussian_matrix(H, D, 1.0, rng2);
  num::Matrix target(H, H);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < H; ++j)
      target(i, j) = ((i < 3) == (j < 3)) ? 1.0 : 0.0;
  const merger::SimLossGradients sg = merger::similarity_loss_grad(segs, target);
  std::vector<double> s_analytic, s_fd;
  for (std::size_t r = 0; r < segs.rows(); ++r) {
    for (std::size_t c = 0; c < segs.cols(); ++c) {
      num::Matrix plus = segs, minus = segs;
      plus(r, c) += opt.eps;
      minus(r, c) -= opt.eps;
      s_analytic.push_back(sg.segments(r, c));
      s_fd.push_back((merger::similarity_loss_grad(plus, target).loss -
                      merger::similarity_loss_grad(minus, target).loss) /
                     (2.0 * opt.eps));
    }
  }
  const double sim_err = rel_error_inf(s_analytic, s_fd);

  std::cout << "gradcheck fine_loss max_rel_err=" << fine_err << "\n";
  std::cout << "gradcheck sim_loss  max_rel_err=" << sim_err << "\n";
  const bool ok = fine_err <= 1e-5 && sim_err <= 1e-5;
  std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << "\n";
  return ok ? kExitOk : kExitNumerical;
}

// ------------------------------------------------------------------- infer

int cmd_infer(const InferOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  io::ModelWeights weights = load_or_seed_weights(opt.weights_path, common.seed);
  const io::ModelConfig& cfg = weights.config;
  if (opt.stage < 1 || opt.stage > cfg.stages())
    throw_argument("infer: stage out of range");

  merger::LrrConfig lrr_cfg;
  if (opt.lambda) lrr_cfg.lambda = *opt.lambda;

  merger::ClusterCount clusters = merger::ClusterCount::automatic();
  if (opt.clusters != "auto") {
    try {
      clusters = merger::ClusterCount::exactly(std::stoul(opt.clusters));
    } catch (const std::exception&) {
      throw_argument("infer: --clusters must be 'auto' or a positive integer");
    }
  }

  const std::vector<std::string> object_labels = load_label_list(opt.objects_path);
  const std::vector<std::string> relation_labels = load_label_list(opt.relations_path);
  std::set<std::string> stuff;
  if (!opt.stuff_path.empty()) stuff = load_label_set(opt.stuff_path);

  fs::create_directories(opt.out_dir);
  std::vector<std::string> feat_files = list_files(opt.feats_dir, ".ftns");
  if (feat_files.empty()) throw_data("no .ftns files in " + opt.feats_dir);

  std::vector<std::string> errors(feat_files.size());
  std::vector<bool> nonconverged(feat_files.size(), false);

#pragma omp parallel for schedule(dynamic)
  for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(feat_files.size()); ++idx) {
    const std::size_t fi = static_cast<std::size_t>(idx);
    try {
      const std::string image_id = fs::path(feat_files[fi]).stem().string();
      const grouper::ImageFeatures img =
          load_image_features(opt.feats_dir, image_id, cfg.patch_size);
      const labeler::PatchGeometry geom{img.grid_rows, img.grid_cols, img.patch_size};

      const grouper::SegmentHierarchy hier =
          grouper::group_forward(img, weights.grouper, /*hard=*/true);

      // Hard assignment can starve a grouping center; segments owning no
      // patches carry a zero feature row and an empty mask, so only the
      // occupied ones enter the merging stage.
      const grouper::GrouperStage& stage_data = hier.stages[opt.stage - 1];
      const std::size_t total_segments = stage_data.segment_feats.rows();
      std::vector<std::size_t> patch_count(total_segments, 0);
      for (int s : stage_data.patch_segment)
        ++patch_count[static_cast<std::size_t>(s)];
      std::vector<std::size_t> occupied;
      for (std::size_t s = 0; s < total_segments; ++s)
        if (patch_count[s] > 0) occupied.push_back(s);

      num::Matrix occupied_feats(occupied.size(), stage_data.segment_feats.cols());
      for (std::size_t pos = 0; pos < occupied.size(); ++pos)
        for (std::size_t c = 0; c < occupied_feats.cols(); ++c)
          occupied_feats(pos, c) = stage_data.segment_feats(occupied[pos], c);

      grounder::SharedEmbeddings emb;
      emb.stage = opt.stage;
      emb.segments = weights.grounder.proj_image[opt.stage - 1].apply(occupied_feats);
      emb.entities = num::Matrix(0, emb.segments.cols());
      emb.validate();

      const merger::SimilarityMatrix sim = merger::similarity_matrix(emb);
      const merger::LrrResult lrr = merger::lrr_recover(sim, lrr_cfg);
      if (!lrr.converged) nonconverged[fi] = true;

      const std::vector<int> sub_labels =
          merger::spectral_cluster(lrr.z, clusters, common.seed);
      std::vector<int> labels(total_segments, 0);  // empty segments carry no pixels
      for (std::size_t pos = 0; pos < occupied.size(); ++pos)
        labels[occupied[pos]] = sub_labels[pos];
      const std::vector<Mask> cluster_masks =
          merger::merge_segments(hier, opt.stage, labels, img);

      // Objects per cluster, then instances, then cascaded relations.
      const labeler::MockScorer object_scorer =
          weights.make_scorer(object_labels, geom);
      const labeler::Prompt ent_prompt = labeler::build_entity_prompt();
      std::vector<std::string> cluster_label(cluster_masks.size());
      std::vector<double> cluster_score(cluster_masks.size(), 0.0);
      for (std::size_t c = 0; c < cluster_masks.size(); ++c) {
        if (cluster_masks[c].empty()) continue;
        const auto ranked =
            labeler::rank_labels(object_scorer, ent_prompt, hier.updated_patch_feats,
                                 cluster_masks[c], object_labels);
        cluster_label[c] = ranked.front().label;
        cluster_score[c] = std::exp(ranked.front().log_prob);
      }

      merger::InstanceMap inst_map =
          merger::connected_components(cluster_masks, opt.min_pixels);
      for (auto& inst : inst_map.instances) {
        inst.label = cluster_label[static_cast<std::size_t>(inst.cluster)];
        inst.score = cluster_score[static_cast<std::size_t>(inst.cluster)];
      }
      inst_map = merger::merge_stuff(inst_map, stuff);

      Psg psg;
      psg.image_id = image_id;
      psg.height = inst_map.height;
      psg.width = inst_map.width;
      psg.label_map = inst_map.ids;
      for (const auto& inst : inst_map.instances)
        psg.instances.push_back(PsgInstance{inst.id, inst.label, inst.score});

      const labeler::MockScorer relation_scorer =
          weights.make_scorer(relation_labels, geom);
      for (const auto& sub : inst_map.instances) {
        const Mask m_sub = inst_map.instance_mask(sub.id);
        for (const auto& obj : inst_map.instances) {
          if (sub.id == obj.id) continue;
          const Mask m_obj = inst_map.instance_mask(obj.id);
          const Mask m_region = labeler::complement_mask(m_sub, m_obj);
          const num::Matrix tagged = labeler::tag_positions(
              hier.updated_patch_feats, m_sub, m_obj, m_region, weights.tags, geom);
          const Mask active = mask_union(mask_union(m_sub, m_obj), m_region);
          const labeler::Prompt prompt =
              labeler::build_relation_prompt(sub.label, obj.label);
          const auto ranked =
              labeler::rank_labels(relation_scorer, prompt, tagged, active,
                                   relation_labels);
          for (const auto& scored : ranked)
            psg.relations.push_back(PsgRelation{
                sub.id, obj.id, scored.label,
                sub.score * obj.score * std::exp(scored.log_prob)});
        }
      }

      json meta;
      meta["lrr_iterations"] = lrr.iterations;
      meta["lrr_converged"] = lrr.converged;
      meta["lrr_residual"] = lrr.residual;
      meta["seed"] = common.seed;
      psg.meta = meta.dump();

      psg.validate();
      write_psg_json(psg, opt.out_dir + "/" + image_id + ".json");
    } catch (const Error& e) {
      errors[fi] = e.what();
    } catch (const std::exception& e) {
      errors[fi] = e.what();
    }
  }
  for (const auto& err : errors)
    if (!err.empty()) throw_data(err);

  bool any_nonconverged = false;
  for (std::size_t i = 0; i < feat_files.size(); ++i) {
    if (nonconverged[i]) {
      any_nonconverged = true;
      std::cerr << "warning: LRR did not converge for "
                << fs::path(feat_files[i]).stem().string() << "\n";
    }
  }
  if (any_nonconverged && common.strict) return kExitNumerical;
  return kExitOk;
}

// --------------------------------------------------------------- eval/miou

namespace {

std::vector<std::pair<Psg, Psg>> load_pairs(const std::string& pred_dir,
                                            const std::string& gt_dir) {
  std::vector<std::pair<Psg, Psg>> pairs;
  for (const auto& pred_path : list_files(pred_dir, ".json")) {
    const std::string name = fs::path(pred_path).filename().string();
    const std::string gt_path = gt_dir + "/" + name;
    if (!fs::exists(gt_path)) throw_data("missing ground truth for prediction " + name);
    pairs.emplace_back(read_psg_json(pred_path), read_psg_json(gt_path));
  }
  if (pairs.empty()) throw_data("no predictions found in " + pred_dir);
  return pairs;
}

}  // namespace

int cmd_eval(const EvalOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  eval::Mode mode;
  if (opt.mode == "mask")
    mode = eval::Mode::MaskIou;
  else if (opt.mode == "bbox")
    mode = eval::Mode::BboxIou;
  else
    throw_argument("eval: --mode must be mask or bbox");

  std::map<std::string, std::string> merge_map;
  if (!opt.merge_map_path.empty()) merge_map = load_merge_map(opt.merge_map_path);
  std::set<std::string> stuff;
  if (!opt.stuff_path.empty()) stuff = load_label_set(opt.stuff_path);

  const auto pairs = load_pairs(opt.pred_dir, opt.gt_dir);
  const eval::EvalReport report =
      eval::evaluate(pairs, mode, opt.xs, opt.ks, merge_map, stuff);

  std::cout << eval::report_table(report);

  if (!opt.out_path.empty()) {
    json root;
    root["mode"] = opt.mode;
    root["images"] = report.images;
    root["images_with_gt"] = report.images_with_gt;
    json cells = json::array();
    for (const auto& cell : report.cells)
      cells.push_back({{"task", cell.task == eval::Task::PhrDet ? "PhrDet" : "SGDet"},
                       {"x", cell.x},
                       {"k", cell.k},
                       {"recall", cell.recall},
                       {"per_image", cell.per_image}});
    root["cells"] = std::move(cells);
    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out) throw_data("cannot open report file: " + opt.out_path);
    out << root.dump(1) << "\n";
  }
  return kExitOk;
}

int cmd_miou(const MiouOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  std::map<std::string, std::string> merge_map;
  if (!opt.merge_map_path.empty()) merge_map = load_merge_map(opt.merge_map_path);

  eval::MiouAccumulator acc;
  for (auto& [pred, gt] : load_pairs(opt.pred_dir, opt.gt_dir)) {
    eval::canonicalize_labels(pred, merge_map);
    eval::canonicalize_labels(gt, merge_map);
    acc.add(pred, gt);
  }
  const auto value = acc.value();
  if (!value) {
    std::cout << "mIoU undefined: no ground-truth classes\n";
    return kExitData;
  }
  std::cout << "mIoU " << *value << "\n";
  if (!opt.out_path.empty()) {
    json root;
    root["miou"] = *value;
    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out) throw_data("cannot open report file: " + opt.out_path);
    out << root.dump(1) << "\n";
  }
  return kExitOk;
}

// ------------------------------------------------------------------ export

int cmd_export_dot(const ExportOptions& opt, const CommonOptions& common) {
  apply_threads(common);
  fs::create_directories(opt.out_dir);
  for (const auto& path : list_files(opt.psg_dir, ".json")) {
    const Psg psg = read_psg_json(path);
    const std::string out_path =
        opt.out_dir + "/" + fs::path(path).stem().string() + ".dot";
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw_data("cannot open output file: " + out_path);
    out << "digraph \"" << psg.image_id << "\" {\n";
    for (const auto& inst : psg.instances)
      out << "  n" << inst.id << " [label=\"" << inst.id << ":" << inst.label << "\"];\n";
    for (const auto& rel : psg.relations)
      out << "  n" << rel.subject << " -> n" << rel.object << " [label=\""
          << rel.predicate << "\"];\n";
    out << "}\n";
  }
  return kExitOk;
}

}  // namespace capsg::pipeline
