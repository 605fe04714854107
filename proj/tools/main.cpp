#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "capsg/error.hpp"
#include "capsg/pipeline.hpp"

namespace {

using namespace capsg;

std::vector<std::size_t> parse_list(const std::string& csv, const char* what) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string part =
        csv.substr(start, comma == std::string::npos ? csv.size() - start : comma - start);
    if (!part.empty()) {
      try {
        out.push_back(std::stoul(part));
      } catch (const std::exception&) {
        throw_argument(std::string(what) + ": expected comma-separated integers");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw_argument(std::string(what) + ": empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caption-supervised panoptic scene graph pipeline"};
  app.require_subcommand(1);

  pipeline::CommonOptions common;
  app.add_option("--seed", common.seed, "PRNG seed for every seeded step");
  app.add_option("--threads", common.threads, "worker threads (0 = library default)");
  app.add_flag("--strict", common.strict,
               "treat numerical non-convergence as fatal (exit 3)");

  pipeline::ParseOptions parse_opt;
  auto* parse = app.add_subcommand("parse", "captions JSONL -> text graphs JSONL");
  parse->add_option("--captions", parse_opt.captions_path, "line-delimited {id, caption}")
      ->required();
  parse->add_option("--out", parse_opt.out_path, "output graphs JSONL")->required();
  parse->add_flag("!--no-merge", parse_opt.merge,
                  "keep one graph per caption instead of merging per image");

  pipeline::GroundOptions ground_opt;
  double theta_flag = 0.0;
  auto* ground = app.add_subcommand("ground", "grounding, similarities and losses");
  ground->add_option("--feats", ground_opt.feats_dir, "patch-feature .ftns directory")
      ->required();
  ground->add_option("--tokens", ground_opt.tokens_dir, "token-embedding .ftns directory")
      ->required();
  ground->add_option("--graphs", ground_opt.graphs_path, "text graphs JSONL")->required();
  ground->add_option("--weights", ground_opt.weights_path,
                     "weights JSON (omit for seeded init)");
  auto* theta_opt = ground->add_option("--theta", theta_flag, "filtering threshold");
  ground->add_option("--out", ground_opt.out_path, "output grounding JSONL")->required();

  pipeline::GradcheckOptions grad_opt;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  gradcheck->add_option("--weights", grad_opt.weights_path,
                        "weights JSON (omit for seeded init)");
  gradcheck->add_option("--eps", grad_opt.eps, "central difference step");
  gradcheck
      ->add_flag("--corrupt", grad_opt.corrupt,
                 "deliberately corrupt the analytic gradient (harness sentinel)")
      ->group("");

  pipeline::InferOptions infer_opt;
  auto* infer = app.add_subcommand("infer", "full scene-graph inference");
  infer->add_option("--feats", infer_opt.feats_dir, "patch-feature .ftns directory")
      ->required();
  infer->add_option("--weights", infer_opt.weights_path,
                    "weights JSON (omit for seeded init)");
  infer->add_option("--stage", infer_opt.stage, "grouping stage used for merging");
  double lambda_flag = 0.0;
  auto* lambda_opt = infer->add_option("--lambda", lambda_flag, "low-rank recovery weight");
  infer->add_option("--clusters", infer_opt.clusters, "'auto' or a cluster count");
  infer
      ->add_option("--labels", [&infer_opt](const std::vector<std::string>& paths) {
        if (paths.size() != 2) return false;
        infer_opt.objects_path = paths[0];
        infer_opt.relations_path = paths[1];
        return true;
      },
                   "object and relation label JSON files")
      ->expected(2)
      ->required();
  infer->add_option("--stuff", infer_opt.stuff_path, "stuff-class JSON array");
  infer->add_option("--min-pixels", infer_opt.min_pixels,
                    "drop connected components below this size");
  infer->add_option("--out", infer_opt.out_dir, "output PSG directory")->required();

  pipeline::EvalOptions eval_opt;
  std::string xs_csv = "3,5", ks_csv = "50,100";
  auto* eval_cmd = app.add_subcommand("eval", "recall harness over PSG files");
  eval_cmd->add_option("--pred", eval_opt.pred_dir, "prediction directory")->required();
  eval_cmd->add_option("--gt", eval_opt.gt_dir, "ground-truth directory")->required();
  eval_cmd->add_option("--mode", eval_opt.mode, "mask | bbox");
  eval_cmd->add_option("--x", xs_csv, "predicate caps, e.g. 3,5");
  eval_cmd->add_option("--k", ks_csv, "recall cutoffs, e.g. 50,100");
  eval_cmd->add_option("--merge-map", eval_opt.merge_map_path, "label merge map JSON");
  eval_cmd->add_option("--stuff", eval_opt.stuff_path, "stuff-class JSON array");
  eval_cmd->add_option("--out", eval_opt.out_path, "report JSON path");

  pipeline::MiouOptions miou_opt;
  auto* miou = app.add_subcommand("miou", "dataset mean IoU over PSG files");
  miou->add_option("--pred", miou_opt.pred_dir, "prediction directory")->required();
  miou->add_option("--gt", miou_opt.gt_dir, "ground-truth directory")->required();
  miou->add_option("--merge-map", miou_opt.merge_map_path, "label merge map JSON");
  miou->add_option("--out", miou_opt.out_path, "report JSON path");

  pipeline::ExportOptions export_opt;
  bool dot_flag = false;
  auto* exp = app.add_subcommand("export", "export PSG files for visualization");
  exp->add_option("--psg", export_opt.psg_dir, "PSG directory")->required();
  exp->add_option("--out", export_opt.out_dir, "output directory")->required();
  exp->add_flag("--dot", dot_flag, "emit one Graphviz DOT file per scene graph");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? pipeline::kExitOk : pipeline::kExitUsage;
  }

  try {
    if (*parse) return pipeline::cmd_parse(parse_opt, common);
    if (*ground) {
      if (theta_opt->count() > 0) ground_opt.theta = theta_flag;
      return pipeline::cmd_ground(ground_opt, common);
    }
    if (*gradcheck) return pipeline::cmd_gradcheck(grad_opt, common);
    if (*infer) {
      if (lambda_opt->count() > 0) infer_opt.lambda = lambda_flag;
      return pipeline::cmd_infer(infer_opt, common);
    }
    if (*eval_cmd) {
      eval_opt.xs = parse_list(xs_csv, "--x");
      eval_opt.ks = parse_list(ks_csv, "--k");
      return pipeline::cmd_eval(eval_opt, common);
    }
    if (*miou) return pipeline::cmd_miou(miou_opt, common);
    if (*exp) {
      if (!dot_flag) throw_argument("export: only --dot output is supported");
      return pipeline::cmd_export_dot(export_opt, common);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Argument ? pipeline::kExitUsage : pipeline::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return pipeline::kExitData;
  }
  return pipeline::kExitUsage;
}
