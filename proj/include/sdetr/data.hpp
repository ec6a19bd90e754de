#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdetr/boxes.hpp"
#include "sdetr/model.hpp"
#include "sdetr/tensor.hpp"

namespace sdetr {

/// 8-bit interleaved RGB raster.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
};

struct Sample {
  std::string name;
  Image image;
  GroundTruthSet truth;
};

using Dataset = std::vector<Sample>;

enum class ShapeKind { Rectangle, Ellipse, Triangle, Diamond, Cross };
/// Shape drawn for a class id (cycles through the kinds).
ShapeKind shape_for_class(std::size_t class_id);

/// Synthetic detection set: 1–8 filled shapes per image on a mildly textured
/// background; boxes are the exact pixel extents of each drawn shape. About a
/// third of the objects are small (area below (size/10)²). Deterministic per
/// seed. Requires size % 32 == 0 and classes >= 2.
Dataset gen_synthetic(std::uint64_t seed, std::size_t n_images, std::size_t size,
                      std::size_t classes);

/// Aspect-preserving resize into an S×S canvas with centred padding.
struct Letterbox {
  std::size_t src_w = 0;
  std::size_t src_h = 0;
  std::size_t target = 0;
  std::size_t new_w = 0;
  std::size_t new_h = 0;
  std::size_t pad_x = 0;
  std::size_t pad_y = 0;

  Box forward(const Box& source_box) const;  // source-normalised -> canvas-normalised
  Box inverse(const Box& canvas_box) const;  // canvas-normalised -> source-normalised
};

struct ResizedImage {
  Tensor pixels;  // 3×S×S, normalised
  Letterbox transform;
};

/// Bilinear resize + letterbox, then per-channel normalisation (v/255 - 0.5)/0.25.
/// Padding is value 0 after normalisation.
ResizedImage resize_fixed(const Image& image, std::size_t target);
Tensor image_to_tensor(const Image& image);

/// COCO-like summary: mean over IoU thresholds 0.50:0.05:0.95 and over classes
/// that have ground truth. A bucket without ground truth is reported as absent.
struct ApReport {
  std::optional<double> ap;
  std::optional<double> ap50;
  std::optional<double> ap75;
  std::optional<double> ap_s;
  std::optional<double> ap_m;
  std::optional<double> ap_l;
};

enum class AreaBucket { All, Small, Medium, Large };

/// Area limits (normalised box area) of the small/medium buckets: COCO's 32² and
/// 96² pixel limits scaled from a 640×640 reference image.
inline constexpr double kSmallAreaLimit = (32.0 / 640.0) * (32.0 / 640.0);
inline constexpr double kMediumAreaLimit = (96.0 / 640.0) * (96.0 / 640.0);
AreaBucket bucket_of(const Box& box);

/// Greedy, confidence-ordered matching per image; 101-point interpolated
/// precision. Throws ValidationError when the lists differ in length.
ApReport evaluate_ap(const std::vector<DetectionSet>& preds, const std::vector<GroundTruthSet>& gts);
/// AP at one IoU threshold for one bucket; absent when no ground truth falls in the bucket.
std::optional<double> evaluate_ap_at(const std::vector<DetectionSet>& preds,
                                     const std::vector<GroundTruthSet>& gts, double iou_threshold,
                                     AreaBucket bucket = AreaBucket::All);

/// Converts model output into detections: softmax over classes, "no object" dropped.
DetectionSet to_detections(const Predictions& preds);

nlohmann::json to_json(const ApReport& report);

// On-disk layout: <dir>/<name>.ppm (binary P6) plus <dir>/annotations.jsonl with one
// {"image", "size":[w,h], "objects":[{"class","cx","cy","w","h"}]} object per line.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace sdetr
