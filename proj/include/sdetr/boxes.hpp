#pragma once

#include <cstddef>
#include <vector>

namespace sdetr {

/// Axis-aligned box as centre and extent, normalised to the image.
struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }
};

double iou(const Box& a, const Box& b);

/// Generalised IoU in [-1, 1]. A zero-area box has IoU 0; an empty enclosure
/// contributes no penalty.
double giou(const Box& a, const Box& b);

struct Object {
  std::size_t class_id = 0;
  Box box;
};

/// Annotations of one image.
struct GroundTruthSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Object> objects;
};

struct Detection {
  std::vector<double> class_probs;  // one entry per object class, no-object excluded
  Box box;

  std::size_t label() const;
  double score() const;
};

/// Predictions for one image.
struct DetectionSet {
  std::vector<Detection> detections;
};

}  // namespace sdetr
