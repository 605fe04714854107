#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "capsg/psg.hpp"

namespace capsg::eval {

enum class Task { PhrDet, SGDet };
enum class Mode { MaskIou, BboxIou };

struct EvalConfig {
  Task task = Task::SGDet;
  Mode mode = Mode::MaskIou;
  std::size_t predicate_cap = 5;  // X: predicates kept per subject-object pair
  std::size_t recall_cutoff = 100;  // K
  std::map<std::string, std::string> merge_map;
  std::set<std::string> stuff_classes;
};

/// Tight enclosing rectangle of a non-empty mask.
Box mask_to_bbox(const Mask& mask);

/// Pixel IoU or rectangle IoU of the converted boxes; two empty masks -> 0.
double iou(const Mask& a, const Mask& b, Mode mode);

struct Triplet {
  int subject = 0;
  int object = 0;
  std::string predicate;
  double score = 1.0;
};

/// Keeps the X best-scored predicates per ordered (subject, object) pair,
/// sorts all survivors by score (ties: subject id, object id, predicate),
/// truncates to K.
std::vector<Triplet> enumerate_triplets(const Psg& psg, std::size_t x, std::size_t k);

/// Greedy one-to-one matching in score order. A prediction matches a still
/// unmatched GT triplet when all three labels agree and the IoU condition
/// holds strictly above 0.5: union location for PhrDet, both endpoints for
/// SGDet. Labels must already be canonicalized.
double match_recall(const Psg& pred, const Psg& gt, const EvalConfig& cfg);

/// Lemma + merge-map canonicalization applied to every instance label and
/// predicate, in place.
void canonicalize_labels(Psg& psg, const std::map<std::string, std::string>& merge_map);

/// Eval-side stuff handling: instances sharing a stuff-class label collapse
/// into one (union mask); relations are remapped, self-edges dropped, and
/// duplicate triplets keep the best score.
void merge_stuff_psg(Psg& psg, const std::set<std::string>& stuff_classes);

/// Dataset-level mean IoU over classes present in the ground truth.
class MiouAccumulator {
 public:
  void add(const Psg& pred, const Psg& gt);
  std::optional<double> value() const;

 private:
  struct Counts {
    std::size_t intersection = 0;
    std::size_t uni = 0;
    bool in_gt = false;
  };
  std::map<std::string, Counts> per_class_;
};

struct EvalCell {
  Task task;
  std::size_t x = 0;
  std::size_t k = 0;
  double recall = 0.0;
  std::vector<double> per_image;
};

struct EvalReport {
  Mode mode = Mode::MaskIou;
  std::vector<EvalCell> cells;
  std::optional<double> miou;
  std::size_t images = 0;
  std::size_t images_with_gt = 0;
};

/// Recall at every (task, X, K) combination over paired scenes; images with
/// zero GT triplets are excluded from the mean.
EvalReport evaluate(const std::vector<std::pair<Psg, Psg>>& pred_gt_pairs,
                    Mode mode, const std::vector<std::size_t>& xs,
                    const std::vector<std::size_t>& ks,
                    const std::map<std::string, std::string>& merge_map,
                    const std::set<std::string>& stuff_classes);

/// Plain-text table with one column per (X, K): N3R50 N3R100 N5R50 N5R100.
std::string report_table(const EvalReport& report);

}  // namespace capsg::eval
