#include "capsg/psg.hpp"

#include <cmath>
#include <set>

#include "capsg/error.hpp"

namespace capsg {

void Psg::validate() const {
  if (label_map.size() != height * width)
    throw_format("Psg: label map size != height*width");
  std::set<int> declared;
  for (const auto& inst : instances) {
    if (inst.id <= 0) throw_format("Psg: instance ids must be positive");
    if (!declared.insert(inst.id).second) throw_format("Psg: duplicate instance id");
    if (!std::isfinite(inst.score)) throw_format("Psg: non-finite instance score");
  }
  for (int id : label_map)
    if (id != 0 && !declared.count(id))
      throw_format("Psg: label map references undeclared instance " + std::to_string(id));
  for (const auto& rel : relations) {
    if (!declared.count(rel.subject) || !declared.count(rel.object))
      throw_format("Psg: relation endpoint not an instance");
    if (!std::isfinite(rel.score)) throw_format("Psg: non-finite relation score");
  }
}

}  // namespace capsg
