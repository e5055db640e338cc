#pragma once

#include <set>
#include <vector>

#include "tokenlens/synthgen.hpp"

namespace oracle {

namespace sg = tokenlens::synthgen;

/// Second pass over the object list, written without the library helpers.
inline sg::AttributeManifest recount(const sg::SceneSpec& spec, const sg::VisualVocabulary& vocab) {
  sg::AttributeManifest m;
  m.image_id = spec.image_id;
  m.object_count = static_cast<int>(spec.objects.size());
  std::vector<int> shape_n(vocab.shapes.size()), color_n(vocab.colors.size());
  std::set<std::size_t> sizes;
  for (const auto& o : spec.objects) {
    for (std::size_t i = 0; i < vocab.shapes.size(); ++i) shape_n[i] += vocab.shapes[i] == o.shape;
    for (std::size_t i = 0; i < vocab.colors.size(); ++i) color_n[i] += vocab.colors[i].name == o.color;
    sizes.insert(o.size_class);
  }
  int best_s = 0, best_c = 0;
  for (std::size_t i = 0; i < shape_n.size(); ++i) {
    if (shape_n[i] > 0) ++m.unique_shapes;
    if (shape_n[i] > shape_n[best_s]) best_s = static_cast<int>(i);
    m.shape_present[sg::to_string(vocab.shapes[i])] = shape_n[i] > 0;
  }
  for (std::size_t i = 0; i < color_n.size(); ++i) {
    if (color_n[i] > 0) ++m.unique_colors;
    if (color_n[i] > color_n[best_c]) best_c = static_cast<int>(i);
    m.color_present[vocab.colors[i].name] = color_n[i] > 0;
  }
  m.unique_sizes = static_cast<int>(sizes.size());
  m.dominant_shape = sg::to_string(vocab.shapes[best_s]);
  m.dominant_color = vocab.colors[best_c].name;
  return m;
}

}  // namespace oracle
