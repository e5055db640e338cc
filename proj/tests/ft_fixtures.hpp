#pragma once

#include <random>
#include <string>
#include <vector>

#include "tokenlens/ftdata.hpp"

/// Random valid annotation records spread over a few images, with repeated
/// categories so every filter rule fires.
inline std::vector<tokenlens::ftdata::AnnotationRecord> random_records(std::size_t n,
                                                                       std::mt19937_64& rng) {
  static const char* kCategories[] = {"dog", "cat", "car", "cup", "tree", "chair", "bird"};
  std::uniform_int_distribution<int> image(0, static_cast<int>(n / 4));
  std::uniform_int_distribution<int> category(0, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<tokenlens::ftdata::AnnotationRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    tokenlens::ftdata::AnnotationRecord r;
    const int img = image(rng);
    r.image_id = "img" + std::to_string(img);
    r.width = 200.0 + 40.0 * (img % 5);
    r.height = 150.0 + 30.0 * (img % 3);
    const double w = r.width * (0.05 + 0.7 * unit(rng));
    const double h = r.height * (0.05 + 0.7 * unit(rng));
    r.bbox.x1 = std::floor((r.width - w) * unit(rng));
    r.bbox.y1 = std::floor((r.height - h) * unit(rng));
    r.bbox.x2 = r.bbox.x1 + std::floor(w);
    r.bbox.y2 = r.bbox.y1 + std::floor(h);
    r.category = kCategories[category(rng)];
    out.push_back(r);
  }
  return out;
}
