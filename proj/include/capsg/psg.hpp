#pragma once

#include <string>
#include <vector>

#include "capsg/mask.hpp"

namespace capsg {

struct PsgInstance {
  int id = 0;
  std::string label;
  double score = 1.0;
};

struct PsgRelation {
  int subject = 0;
  int object = 0;
  std::string predicate;
  double score = 1.0;
};

/// Panoptic scene graph of one image: a label map of instance ids (0 =
/// unassigned) plus labeled instances and scored relations. Because every
/// pixel holds at most one id the masks cannot overlap.
struct Psg {
  std::string image_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> label_map;  // row-major instance ids
  std::vector<PsgInstance> instances;
  std::vector<PsgRelation> relations;
  std::string meta;  // optional free-form JSON carried through untouched

  Mask instance_mask(int id) const {
    Mask m(height, width);
    for (std::size_t i = 0; i < label_map.size(); ++i)
      m.bits[i] = label_map[i] == id ? 1 : 0;
    return m;
  }

  const PsgInstance* find_instance(int id) const {
    for (const auto& inst : instances)
      if (inst.id == id) return &inst;
    return nullptr;
  }

  /// Structural checks: map size, id consistency, relation endpoints,
  /// finite scores.
  void validate() const;
};

}  // namespace capsg
