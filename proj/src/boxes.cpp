#include "sdetr/boxes.hpp"

#include <algorithm>

namespace sdetr {

namespace {

struct Overlap {
  double intersection;
  double union_area;
  double enclosure;
};

Overlap overlap(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
  const double ih = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
  const double inter = iw * ih;
  const double uni = std::max(0.0, a.area()) + std::max(0.0, b.area()) - inter;
  const double ew = std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0());
  const double eh = std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0());
  return {inter, uni, ew * eh};
}

}  // namespace

double iou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) return 0.0;
  const Overlap o = overlap(a, b);
  return o.union_area > 0.0 ? o.intersection / o.union_area : 0.0;
}

double giou(const Box& a, const Box& b) {
  const Overlap o = overlap(a, b);
  const double i = iou(a, b);
  if (o.enclosure <= 0.0) return i;
  return i - (o.enclosure - o.union_area) / o.enclosure;
}

std::size_t Detection::label() const {
  return static_cast<std::size_t>(
      std::distance(class_probs.begin(), std::max_element(class_probs.begin(), class_probs.end())));
}

double Detection::score() const {
  return class_probs.empty() ? 0.0 : *std::max_element(class_probs.begin(), class_probs.end());
}

}  // namespace sdetr
