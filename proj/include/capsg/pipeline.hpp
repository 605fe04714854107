#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capsg/psg.hpp"
#include "capsg/text/textgraph.hpp"

namespace capsg::pipeline {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

std::string psg_to_json_string(const Psg& psg);
Psg psg_from_json_string(const std::string& text);
Psg read_psg_json(const std::string& path);
void write_psg_json(const Psg& psg, const std::string& path);

std::string textgraph_to_json_line(const text::TextGraph& graph);
text::TextGraph textgraph_from_json_line(const std::string& line);

struct CommonOptions {
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = library default
  bool strict = false;
};

struct ParseOptions {
  std::string captions_path;
  std::string out_path;
  bool merge = true;  // merge captions sharing an image id prefix
};
int cmd_parse(const ParseOptions& opt, const CommonOptions& common);

struct GroundOptions {
  std::string feats_dir;
  std::string tokens_dir;
  std::string graphs_path;
  std::string weights_path;  // empty = seeded init
  std::optional<double> theta;
  std::string out_path;
};
int cmd_ground(const GroundOptions& opt, const CommonOptions& common);

struct GradcheckOptions {
  std::string weights_path;  // empty = seeded init
  double eps = 1e-6;
  bool corrupt = false;  // sentinel: breaks the analytic gradient on purpose
};
int cmd_gradcheck(const GradcheckOptions& opt, const CommonOptions& common);

struct InferOptions {
  std::string feats_dir;
  std::string weights_path;  // empty = seeded init
  std::size_t stage = 1;
  std::optional<double> lambda;
  std::string clusters = "auto";  // "auto" or a number
  std::string objects_path;       // JSON array of object labels
  std::string relations_path;     // JSON array of predicate labels
  std::string stuff_path;         // optional JSON array of stuff classes
  std::size_t min_pixels = 1;
  std::string out_dir;
};
int cmd_infer(const InferOptions& opt, const CommonOptions& common);

struct EvalOptions {
  std::string pred_dir;
  std::string gt_dir;
  std::string mode = "mask";  // mask | bbox
  std::vector<std::size_t> xs = {3, 5};
  std::vector<std::size_t> ks = {50, 100};
  std::string merge_map_path;  // optional
  std::string stuff_path;      // optional
  std::string out_path;        // optional JSON report
};
int cmd_eval(const EvalOptions& opt, const CommonOptions& common);

struct MiouOptions {
  std::string pred_dir;
  std::string gt_dir;
  std::string merge_map_path;  // optional
  std::string out_path;        // optional
};
int cmd_miou(const MiouOptions& opt, const CommonOptions& common);

struct ExportOptions {
  std::string psg_dir;
  std::string out_dir;
};
int cmd_export_dot(const ExportOptions& opt, const CommonOptions& common);

}  // namespace capsg::pipeline
