#include "capsg/io/weights.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "capsg/io/tensor_file.hpp"

namespace capsg::io {

using nlohmann::json;

void ModelConfig::validate() const {
  if (dim == 0 || text_dim == 0 || rnn_dim == 0 || shared_dim == 0 || patch_size == 0 ||
      scorer_embed_dim == 0)
    throw_argument("ModelConfig: zero dimension");
  if (stage_sizes.empty()) throw_argument("ModelConfig: no grouping stages");
  for (std::size_t i = 1; i < stage_sizes.size(); ++i)
    if (stage_sizes[i] >= stage_sizes[i - 1])
      throw_argument("ModelConfig: stage sizes must be strictly decreasing");
}

namespace {

class EntryReader {
 public:
  EntryReader(const json& root, std::string base_dir)
      : root_(root), base_dir_(std::move(base_dir)) {}

  bool has(const std::string& name) const { return root_.contains(name); }

  double scalar(const std::string& name) const {
    const json& v = fetch(name);
    if (!v.is_number()) throw_data("weights: '" + name + "' must be a number");
    return v.get<double>();
  }

  std::vector<double> vector(const std::string& name, std::size_t size) const {
    const json& v = fetch(name);
    std::vector<double> out;
    if (v.is_string()) {
      const Tensor t = read_tensor(resolve(v.get<std::string>()));
      if (t.dims.size() != 1)
        throw_data("weights: '" + name + "' tensor must be 1-dimensional");
      out.assign(t.data.begin(), t.data.end());
    } else if (v.is_array()) {
      for (const auto& x : v) {
        if (!x.is_number()) throw_data("weights: '" + name + "' must be numeric");
        out.push_back(x.get<double>());
      }
    } else {
      throw_data("weights: '" + name + "' must be an array or tensor path");
    }
    if (out.size() != size)
      throw_data("weights: '" + name + "' has length " + std::to_string(out.size()) +
                 ", expected " + std::to_string(size));
    return out;
  }

  num::Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const {
    const json& v = fetch(name);
    num::Matrix m;
    if (v.is_string()) {
      m = matrix_from_tensor(read_tensor(resolve(v.get<std::string>())));
    } else if (v.is_array()) {
      if (v.empty() || !v[0].is_array())
        throw_data("weights: '" + name + "' must be a nested array");
      m = num::Matrix(v.size(), v[0].size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_array() || v[i].size() != m.cols())
          throw_data("weights: '" + name + "' is ragged");
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = v[i][j].get<double>();
      }
    } else {
      throw_data("weights: '" + name + "' must be a nested array or tensor path");
    }
    if (m.rows() != rows || m.cols() != cols)
      throw_data("weights: '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                 std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                 std::to_string(cols));
    if (!m.all_finite()) throw_data("weights: '" + name + "' has non-finite values");
    return m;
  }

 private:
  const json& fetch(const std::string& name) const {
    if (!root_.contains(name)) throw_data("weights: missing entry '" + name + "'");
    return root_.at(name);
  }
  std::string resolve(const std::string& rel) const {
    if (!rel.empty() && rel[0] == '/') return rel;
    return base_dir_ + "/" + rel;
  }

  const json& root_;
  std::string base_dir_;
};

ModelConfig config_from_json(const json& root) {
  ModelConfig cfg;
  if (root.contains("config")) {
    const json& c = root.at("config");
    if (c.contains("dim")) cfg.dim = c.at("dim").get<std::size_t>();
    if (c.contains("text_dim")) cfg.text_dim = c.at("text_dim").get<std::size_t>();
    if (c.contains("rnn_dim")) cfg.rnn_dim = c.at("rnn_dim").get<std::size_t>();
    if (c.contains("shared_dim")) cfg.shared_dim = c.at("shared_dim").get<std::size_t>();
    if (c.contains("patch_size")) cfg.patch_size = c.at("patch_size").get<std::size_t>();
    if (c.contains("scorer_embed_dim"))
      cfg.scorer_embed_dim = c.at("scorer_embed_dim").get<std::size_t>();
    if (c.contains("stages")) {
      cfg.stage_sizes.clear();
      for (const auto& s : c.at("stages")) cfg.stage_sizes.push_back(s.get<std::size_t>());
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace

labeler::MockScorer ModelWeights::make_scorer(const std::vector<std::string>& candidates,
                                              const labeler::PatchGeometry& geom) const {
  if (mock_candidates && mock_bilinear) {
    std::map<std::string, std::vector<double>> table;
    for (const auto& cand : candidates) {
      auto it = mock_candidates->find(cand);
      if (it == mock_candidates->end())
        throw_data("weights: candidate table lacks label '" + cand + "'");
      table.emplace(cand, it->second);
    }
    return labeler::MockScorer(std::move(table), *mock_bilinear, geom);
  }
  return labeler::MockScorer::seeded(candidates, config.dim, config.scorer_embed_dim, geom,
                                     seed ^ 0xB111EA5ULL);
}

ModelWeights load_weights(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open weights file: " + path);
  json root;
  try {
    in >> root;
  } catch (const json::parse_error& e) {
    throw_format("weights: invalid JSON in " + path + ": " + e.what());
  }
  if (!root.is_object()) throw_format("weights: top level must be an object");

  const std::string base_dir = std::filesystem::path(path).parent_path().string();
  const EntryReader reader(root, base_dir.empty() ? "." : base_dir);

  ModelWeights w;
  w.config = config_from_json(root);
  const ModelConfig& cfg = w.config;

  w.grouper.temperature = reader.scalar("grouper.temperature");
  for (std::size_t k = 1; k <= cfg.stages(); ++k) {
    const std::string prefix = "grouper.layer" + std::to_string(k) + ".";
    grouper::GroupLayerWeights layer;
    layer.centers = reader.matrix(prefix + "centers", cfg.stage_sizes[k - 1], cfg.dim);
    layer.wq = reader.matrix(prefix + "wq", cfg.dim, cfg.dim);
    layer.wk = reader.matrix(prefix + "wk", cfg.dim, cfg.dim);
    layer.wv = reader.matrix(prefix + "wv", cfg.dim, cfg.dim);
    layer.mixer.w1 = reader.matrix(prefix + "mixer.w1", cfg.dim, cfg.dim);
    layer.mixer.w2 = reader.matrix(prefix + "mixer.w2", cfg.dim, cfg.dim);
    w.grouper.layers.push_back(std::move(layer));
  }
  w.grouper.validate();

  for (std::size_t k = 1; k <= cfg.stages(); ++k) {
    const std::string prefix = "grounder.proj_i" + std::to_string(k) + ".";
    TwoLayerMap proj;
    proj.w1 = reader.matrix(prefix + "w1", cfg.dim, cfg.dim);
    proj.w2 = reader.matrix(prefix + "w2", cfg.dim, cfg.shared_dim);
    w.grounder.proj_image.push_back(std::move(proj));
  }
  w.grounder.proj_text.w1 = reader.matrix("grounder.proj_t.w1", cfg.text_dim, cfg.text_dim);
  w.grounder.proj_text.w2 =
      reader.matrix("grounder.proj_t.w2", cfg.text_dim, cfg.shared_dim);
  w.grounder.rnn_in = reader.matrix("grounder.rnn.w_in", cfg.text_dim, cfg.rnn_dim);
  w.grounder.rnn_rec = reader.matrix("grounder.rnn.w_rec", cfg.rnn_dim, cfg.rnn_dim);
  w.grounder.gate = reader.vector("grounder.rnn.gate", cfg.rnn_dim);
  w.grounder.tau = reader.scalar("grounder.tau");
  w.grounder.theta = reader.scalar("grounder.theta");
  w.grounder.validate();

  w.tags.f_sub = reader.vector("labeler.tags.f_sub", cfg.dim);
  w.tags.f_obj = reader.vector("labeler.tags.f_obj", cfg.dim);
  w.tags.f_region = reader.vector("labeler.tags.f_region", cfg.dim);

  if (reader.has("labeler.mock.bilinear")) {
    w.mock_bilinear =
        reader.matrix("labeler.mock.bilinear", cfg.dim, cfg.scorer_embed_dim);
    if (!root.contains("labeler.mock.candidates"))
      throw_data("weights: 'labeler.mock.bilinear' without 'labeler.mock.candidates'");
    std::map<std::string, std::vector<double>> table;
    for (const auto& [name, value] : root.at("labeler.mock.candidates").items()) {
      std::vector<double> emb;
      for (const auto& x : value) emb.push_back(x.get<double>());
      if (emb.size() != cfg.scorer_embed_dim)
        throw_data("weights: candidate '" + name + "' embedding width mismatch");
      table.emplace(name, std::move(emb));
    }
    w.mock_candidates = std::move(table);
  }
  return w;
}

ModelWeights seeded_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelWeights w;
  w.config = config;
  w.seed = seed;
  w.grouper = grouper::GrouperWeights::seeded(config.dim, config.stage_sizes, seed);
  w.grounder = grounder::GrounderWeights::seeded(config.stages(), config.dim,
                                                 config.text_dim, config.rnn_dim,
                                                 config.shared_dim, seed ^ 0x9120DD1ULL);
  num::SplitMix64 rng(seed ^ 0x7A65ULL);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
  w.tags.f_sub.resize(config.dim);
  w.tags.f_obj.resize(config.dim);
  w.tags.f_region.resize(config.dim);
  for (auto& v : w.tags.f_sub) v = scale * rng.gaussian();
  for (auto& v : w.tags.f_obj) v = scale * rng.gaussian();
  for (auto& v : w.tags.f_region) v = scale * rng.gaussian();
  return w;
}

namespace {

json matrix_to_json(const num::Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void save_weights(const ModelWeights& w, const std::string& path) {
  json root;
  root["config"] = {{"dim", w.config.dim},
                    {"text_dim", w.config.text_dim},
                    {"rnn_dim", w.config.rnn_dim},
                    {"shared_dim", w.config.shared_dim},
                    {"stages", w.config.stage_sizes},
                    {"patch_size", w.config.patch_size},
                    {"scorer_embed_dim", w.config.scorer_embed_dim}};
  root["grouper.temperature"] = w.grouper.temperature;
  for (std::size_t k = 1; k <= w.grouper.layers.size(); ++k) {
    const auto& layer = w.grouper.layers[k - 1];
    const std::string prefix = "grouper.layer" + std::to_string(k) + ".";
    root[prefix + "centers"] = matrix_to_json(layer.centers);
    root[prefix + "wq"] = matrix_to_json(layer.wq);
    root[prefix + "wk"] = matrix_to_json(layer.wk);
    root[prefix + "wv"] = matrix_to_json(layer.wv);
    root[prefix + "mixer.w1"] = matrix_to_json(layer.mixer.w1);
    root[prefix + "mixer.w2"] = matrix_to_json(layer.mixer.w2);
  }
  for (std::size_t k = 1; k <= w.grounder.proj_image.size(); ++k) {
    const std::string prefix = "grounder.proj_i" + std::to_string(k) + ".";
    root[prefix + "w1"] = matrix_to_json(w.grounder.proj_image[k - 1].w1);
    root[prefix + "w2"] = matrix_to_json(w.grounder.proj_image[k - 1].w2);
  }
  root["grounder.proj_t.w1"] = matrix_to_json(w.grounder.proj_text.w1);
  root["grounder.proj_t.w2"] = matrix_to_json(w.grounder.proj_text.w2);
  root["grounder.rnn.w_in"] = matrix_to_json(w.grounder.rnn_in);
  root["grounder.rnn.w_rec"] = matrix_to_json(w.grounder.rnn_rec);
  root["grounder.rnn.gate"] = w.grounder.gate;
  root["grounder.tau"] = w.grounder.tau;
  root["grounder.theta"] = w.grounder.theta;
  root["labeler.tags.f_sub"] = w.tags.f_sub;
  root["labeler.tags.f_obj"] = w.tags.f_obj;
  root["labeler.tags.f_region"] = w.tags.f_region;
  if (w.mock_candidates && w.mock_bilinear) {
    root["labeler.mock.bilinear"] = matrix_to_json(*w.mock_bilinear);
    json table;
    for (const auto& [name, emb] : *w.mock_candidates) table[name] = emb;
    root["labeler.mock.candidates"] = std::move(table);
  }

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot open weights file for writing: " + path);
  out << root.dump(1) << "\n";
}

}  // namespace capsg::io
