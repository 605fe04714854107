#include "capsg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "capsg/text/textgraph.hpp"

namespace capsg::eval {

Box mask_to_bbox(const Mask& mask) {
  const Box b = mask_bounds(mask);
  if (!b.valid()) throw_argument("mask_to_bbox: empty mask");
  return b;
}

namespace {

double box_iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const long ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
  const long ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
  if (ix1 < ix0 || iy1 < iy0) return 0.0;
  const double inter = static_cast<double>((ix1 - ix0 + 1) * (iy1 - iy0 + 1));
  const double uni = static_cast<double>(a.area() + b.area()) - inter;
  return inter / uni;
}

}  // namespace

double iou(const Mask& a, const Mask& b, Mode mode) {
  if (!a.same_shape(b)) throw_argument("iou: image dimensions differ");
  if (mode == Mode::MaskIou) {
    const std::size_t uni = mask_union_count(a, b);
    if (uni == 0) return 0.0;
    return static_cast<double>(mask_intersection_count(a, b)) /
           static_cast<double>(uni);
  }
  return box_iou(mask_bounds(a), mask_bounds(b));
}

namespace {

bool triplet_order(const Triplet& a, const Triplet& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.subject != b.subject) return a.subject < b.subject;
  if (a.object != b.object) return a.object < b.object;
  return a.predicate < b.predicate;
}

}  // namespace

std::vector<Triplet> enumerate_triplets(const Psg& psg, std::size_t x, std::size_t k) {
  std::map<std::pair<int, int>, std::vector<Triplet>> pairs;
  for (const auto& rel : psg.relations)
    pairs[{rel.subject, rel.object}].push_back(
        Triplet{rel.subject, rel.object, rel.predicate, rel.score});

  std::vector<Triplet> survivors;
  for (auto& [key, list] : pairs) {
    std::stable_sort(list.begin(), list.end(), triplet_order);
    const std::size_t keep = std::min(x, list.size());
    survivors.insert(survivors.end(), list.begin(),
                     list.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::stable_sort(survivors.begin(), survivors.end(), triplet_order);
  if (survivors.size() > k) survivors.resize(k);
  return survivors;
}

namespace {

struct GtTriplet {
  std::string sub_label, obj_label, predicate;
  int sub_id, obj_id;
};

std::string instance_label(const Psg& psg, int id) {
  const PsgInstance* inst = psg.find_instance(id);
  return inst ? inst->label : std::string();
}

bool location_match(const Psg& pred, const Psg& gt, const Triplet& t, const GtTriplet& g,
                    const EvalConfig& cfg) {
  const Mask ps = pred.instance_mask(t.subject);
  const Mask po = pred.instance_mask(t.object);
  const Mask gs = gt.instance_mask(g.sub_id);
  const Mask go = gt.instance_mask(g.obj_id);
  if (cfg.task == Task::PhrDet) {
    return iou(mask_union(ps, po), mask_union(gs, go), cfg.mode) > 0.5;
  }
  return iou(ps, gs, cfg.mode) > 0.5 && iou(po, go, cfg.mode) > 0.5;
}

}  // namespace

double match_recall(const Psg& pred, const Psg& gt, const EvalConfig& cfg) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw_argument("match_recall: image dimensions differ");

  std::vector<GtTriplet> gts;
  for (const auto& rel : gt.relations)
    gts.push_back(GtTriplet{instance_label(gt, rel.subject),
                            instance_label(gt, rel.object), rel.predicate, rel.subject,
                            rel.object});
  if (gts.empty()) return 0.0;

  const std::vector<Triplet> preds =
      enumerate_triplets(pred, cfg.predicate_cap, cfg.recall_cutoff);
  std::vector<char> matched(gts.size(), 0);
  std::size_t hits = 0;
  for (const Triplet& t : preds) {
    const std::string sub_label = instance_label(pred, t.subject);
    const std::string obj_label = instance_label(pred, t.object);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g]) continue;
      if (gts[g].sub_label != sub_label || gts[g].obj_label != obj_label ||
          gts[g].predicate != t.predicate)
        continue;
      if (!location_match(pred, gt, t, gts[g], cfg)) continue;
      matched[g] = 1;
      ++hits;
      break;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

namespace {

std::string canonical_object_label(const std::string& label,
                                   const std::map<std::string, std::string>& merge_map) {
  // Lemmatize the head (last word), keep modifiers, then apply the merge map.
  std::string out = label;
  const auto pos = out.rfind(' ');
  const std::string head = pos == std::string::npos ? out : out.substr(pos + 1);
  const std::string lemma = text::lemmatize(head, text::Tag::NOUN);
  out = pos == std::string::npos ? lemma : out.substr(0, pos + 1) + lemma;
  auto it = merge_map.find(out);
  return it == merge_map.end() ? out : it->second;
}

std::string canonical_predicate(const std::string& predicate,
                                const std::map<std::string, std::string>& merge_map) {
  std::string out = predicate;
  const auto pos = out.find(' ');
  const std::string head = pos == std::string::npos ? out : out.substr(0, pos);
  const std::string lemma = text::lemmatize(head, text::Tag::VERB);
  out = pos == std::string::npos ? lemma : lemma + out.substr(pos);
  auto it = merge_map.find(out);
  return it == merge_map.end() ? out : it->second;
}

}  // namespace

void canonicalize_labels(Psg& psg, const std::map<std::string, std::string>& merge_map) {
  for (auto& inst : psg.instances)
    inst.label = canonical_object_label(inst.label, merge_map);
  for (auto& rel : psg.relations)
    rel.predicate = canonical_predicate(rel.predicate, merge_map);
}

void merge_stuff_psg(Psg& psg, const std::set<std::string>& stuff_classes) {
  if (stuff_classes.empty()) return;
  std::map<std::string, int> head_of_class;
  std::map<int, int> remap;
  for (const auto& inst : psg.instances) {
    if (stuff_classes.count(inst.label)) {
      auto [it, fresh] = head_of_class.emplace(inst.label, inst.id);
      (void)fresh;
      remap[inst.id] = it->second;
    } else {
      remap[inst.id] = inst.id;
    }
  }

  std::vector<PsgInstance> instances;
  std::map<int, double> best_score;
  for (const auto& inst : psg.instances) {
    const int head = remap.at(inst.id);
    auto [it, fresh] = best_score.emplace(head, inst.score);
    if (fresh) {
      PsgInstance copy = inst;
      copy.id = head;
      instances.push_back(copy);
    } else {
      it->second = std::max(it->second, inst.score);
    }
  }
  for (auto& inst : instances) inst.score = best_score.at(inst.id);
  psg.instances = std::move(instances);

  for (auto& id : psg.label_map)
    if (id != 0) id = remap.at(id);

  std::map<std::tuple<int, int, std::string>, double> dedup;
  for (const auto& rel : psg.relations) {
    const int sub = remap.at(rel.subject), obj = remap.at(rel.object);
    if (sub == obj) continue;
    const auto key = std::make_tuple(sub, obj, rel.predicate);
    auto [it, fresh] = dedup.emplace(key, rel.score);
    if (!fresh) it->second = std::max(it->second, rel.score);
  }
  psg.relations.clear();
  for (const auto& [key, score] : dedup)
    psg.relations.push_back(
        PsgRelation{std::get<0>(key), std::get<1>(key), std::get<2>(key), score});
}

void MiouAccumulator::add(const Psg& pred, const Psg& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw_argument("miou: image dimensions differ");
  // Cache id -> label to avoid a lookup per pixel.
  std::map<int, std::string> pred_labels, gt_labels;
  for (const auto& inst : pred.instances) pred_labels[inst.id] = inst.label;
  for (const auto& inst : gt.instances) gt_labels[inst.id] = inst.label;

  for (std::size_t i = 0; i < pred.label_map.size(); ++i) {
    const auto pit = pred_labels.find(pred.label_map[i]);
    const auto git = gt_labels.find(gt.label_map[i]);
    const std::string p = pit == pred_labels.end() ? std::string() : pit->second;
    const std::string g = git == gt_labels.end() ? std::string() : git->second;
    if (!g.empty()) per_class_[g].in_gt = true;
    if (p == g) {
      if (!p.empty()) {
        per_class_[p].intersection += 1;
        per_class_[p].uni += 1;
      }
    } else {
      if (!p.empty()) per_class_[p].uni += 1;
      if (!g.empty()) per_class_[g].uni += 1;
    }
  }
}

std::optional<double> MiouAccumulator::value() const {
  double sum = 0.0;
  std::size_t classes = 0;
  for (const auto& [name, c] : per_class_) {
    if (!c.in_gt) continue;
    ++classes;
    if (c.uni > 0)
      sum += static_cast<double>(c.intersection) / static_cast<double>(c.uni);
  }
  if (classes == 0) return std::nullopt;
  return sum / static_cast<double>(classes);
}

EvalReport evaluate(const std::vector<std::pair<Psg, Psg>>& pred_gt_pairs, Mode mode,
                    const std::vector<std::size_t>& xs, const std::vector<std::size_t>& ks,
                    const std::map<std::string, std::string>& merge_map,
                    const std::set<std::string>& stuff_classes) {
  EvalReport report;
  report.mode = mode;
  report.images = pred_gt_pairs.size();

  std::vector<std::pair<Psg, Psg>> prepared = pred_gt_pairs;
  for (auto& [pred, gt] : prepared) {
    canonicalize_labels(pred, merge_map);
    canonicalize_labels(gt, merge_map);
    merge_stuff_psg(pred, stuff_classes);
  }

  for (Task task : {Task::PhrDet, Task::SGDet}) {
    for (std::size_t x : xs) {
      for (std::size_t k : ks) {
        EvalCell cell;
        cell.task = task;
        cell.x = x;
        cell.k = k;
        double sum = 0.0;
        std::size_t counted = 0;
        for (const auto& [pred, gt] : prepared) {
          if (gt.relations.empty()) continue;
          EvalConfig cfg;
          cfg.task = task;
          cfg.mode = mode;
          cfg.predicate_cap = x;
          cfg.recall_cutoff = k;
          const double r = match_recall(pred, gt, cfg);
          cell.per_image.push_back(r);
          sum += r;
          ++counted;
        }
        cell.recall = counted ? sum / static_cast<double>(counted) : 0.0;
        if (task == Task::PhrDet) report.images_with_gt = counted;
        report.cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  std::vector<std::pair<std::size_t, std::size_t>> columns;
  for (const auto& cell : report.cells) {
    const auto key = std::make_pair(cell.x, cell.k);
    if (std::find(columns.begin(), columns.end(), key) == columns.end())
      columns.push_back(key);
  }
  os << "Task   ";
  for (const auto& [x, k] : columns) os << "  N" << x << "R" << k;
  os << "\n";
  for (Task task : {Task::PhrDet, Task::SGDet}) {
    os << (task == Task::PhrDet ? "PhrDet " : "SGDet  ");
    for (const auto& [x, k] : columns) {
      for (const auto& cell : report.cells) {
        if (cell.task == task && cell.x == x && cell.k == k) {
          os << "  ";
          os.setf(std::ios::fixed);
          os.precision(2);
          os << 100.0 * cell.recall;
          break;
        }
      }
    }
    os << "\n";
  }
  if (report.miou) {
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "mIoU   " << 100.0 * *report.miou << "\n";
  }
  return os.str();
}

}  // namespace capsg::eval
