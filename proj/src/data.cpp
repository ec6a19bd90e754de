#include "sdetr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "sdetr/kernels.hpp"
#include "sdetr/ops.hpp"

namespace sdetr {

ShapeKind shape_for_class(std::size_t class_id) { return static_cast<ShapeKind>(class_id % 5); }

namespace {

struct PixelBox {
  std::size_t x0, y0, x1, y1;  // x1/y1 exclusive
};

bool covers(ShapeKind kind, std::size_t px, std::size_t py, std::size_t w, std::size_t h) {
  const double hw = 0.5 * static_cast<double>(w);
  const double hh = 0.5 * static_cast<double>(h);
  const double dx = static_cast<double>(px) + 0.5 - hw;
  const double dy = static_cast<double>(py) + 0.5 - hh;
  switch (kind) {
    case ShapeKind::Rectangle: return true;
    case ShapeKind::Ellipse: return (dx * dx) / (hw * hw) + (dy * dy) / (hh * hh) <= 1.0;
    case ShapeKind::Triangle:
      // Apex at the top centre, base along the bottom edge.
      return std::fabs(dx) <= (static_cast<double>(py) + 0.5) / static_cast<double>(h) * hw + 0.25;
    case ShapeKind::Diamond: return std::fabs(dx) / hw + std::fabs(dy) / hh <= 1.0 + 1e-9;
    case ShapeKind::Cross:
      return std::fabs(dx) <= std::max(0.5, hw / 3.0) || std::fabs(dy) <= std::max(0.5, hh / 3.0);
  }
  return false;
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return lo + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(hi - lo + 1));
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

Sample make_sample(std::mt19937_64& rng, std::size_t index, std::size_t size, std::size_t classes) {
  Sample s;
  char name[32];
  std::snprintf(name, sizeof name, "img_%06zu", index);
  s.name = name;
  s.image.width = size;
  s.image.height = size;
  s.image.rgb.resize(size * size * 3);
  s.truth.width = size;
  s.truth.height = size;

  // Background: a base colour, a gentle linear ramp and per-pixel noise.
  double base[3];
  for (double& c : base) c = 50.0 + 60.0 * uniform01(rng);
  const double ramp_x = 20.0 * (uniform01(rng) - 0.5);
  const double ramp_y = 20.0 * (uniform01(rng) - 0.5);
  const double bg_lum = luminance(base[0], base[1], base[2]);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double ramp = ramp_x * static_cast<double>(x) / size + ramp_y * static_cast<double>(y) / size;
      for (std::size_t c = 0; c < 3; ++c) {
        s.image.at(x, y, c) = clamp_byte(base[c] + ramp + 16.0 * (uniform01(rng) - 0.5));
      }
    }
  }

  const auto small_max = static_cast<std::size_t>(std::ceil(static_cast<double>(size) / 10.0)) - 1;
  const std::size_t small_min = std::max<std::size_t>(3, size / 20);
  const std::size_t large_min = small_max + 2;
  const std::size_t large_max = std::max(large_min, size * 2 / 5);

  const std::size_t count = uniform_int(rng, 1, 8);
  std::vector<PixelBox> placed;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t class_id = uniform_int(rng, 0, classes - 1);
    const bool small = uniform01(rng) < 0.35;
    const std::size_t lo = small ? small_min : large_min;
    const std::size_t hi = small ? small_max : large_max;
    for (int attempt = 0; attempt < 40; ++attempt) {
      const std::size_t w = uniform_int(rng, lo, hi);
      const std::size_t h = uniform_int(rng, lo, hi);
      const std::size_t x0 = uniform_int(rng, 0, size - w);
      const std::size_t y0 = uniform_int(rng, 0, size - h);
      const bool clash = std::any_of(placed.begin(), placed.end(), [&](const PixelBox& b) {
        return x0 < b.x1 + 2 && b.x0 < x0 + w + 2 && y0 < b.y1 + 2 && b.y0 < y0 + h + 2;
      });
      if (clash) continue;

      double color[3];
      do {
        for (double& c : color) c = 255.0 * uniform01(rng);
      } while (std::fabs(luminance(color[0], color[1], color[2]) - bg_lum) < 70.0);

      const ShapeKind kind = shape_for_class(class_id);
      const bool hollow = (class_id / 5) % 2 == 1;
      std::vector<char> mask(w * h, 0);
      for (std::size_t py = 0; py < h; ++py)
        for (std::size_t px = 0; px < w; ++px) mask[py * w + px] = covers(kind, px, py, w, h);
      if (hollow) {
        std::vector<char> edge(mask.size(), 0);
        for (std::size_t py = 0; py < h; ++py)
          for (std::size_t px = 0; px < w; ++px) {
            if (!mask[py * w + px]) continue;
            const bool border = px == 0 || py == 0 || px + 1 == w || py + 1 == h ||
                                !mask[py * w + px - 1] || !mask[py * w + px + 1] ||
                                !mask[(py - 1) * w + px] || !mask[(py + 1) * w + px];
            edge[py * w + px] = border;
          }
        mask = std::move(edge);
      }

      PixelBox drawn{size, size, 0, 0};
      for (std::size_t py = 0; py < h; ++py) {
        for (std::size_t px = 0; px < w; ++px) {
          if (!mask[py * w + px]) continue;
          const std::size_t x = x0 + px;
          const std::size_t y = y0 + py;
          for (std::size_t c = 0; c < 3; ++c) {
            s.image.at(x, y, c) = clamp_byte(color[c] + 10.0 * (uniform01(rng) - 0.5));
          }
          drawn.x0 = std::min(drawn.x0, x);
          drawn.y0 = std::min(drawn.y0, y);
          drawn.x1 = std::max(drawn.x1, x + 1);
          drawn.y1 = std::max(drawn.y1, y + 1);
        }
      }
      if (drawn.x1 == 0) continue;
      placed.push_back({x0, y0, x0 + w, y0 + h});
      const double inv = 1.0 / static_cast<double>(size);
      s.truth.objects.push_back(
          {class_id, Box::from_corners(drawn.x0 * inv, drawn.y0 * inv, drawn.x1 * inv, drawn.y1 * inv)});
      break;
    }
  }
  return s;
}

}  // namespace

Dataset gen_synthetic(std::uint64_t seed, std::size_t n_images, std::size_t size,
                      std::size_t classes) {
  if (size == 0 || size % 32 != 0) throw ValidationError("image size must be a positive multiple of 32");
  if (classes < 2) throw ValidationError("at least two classes are required");
  std::mt19937_64 rng(seed);
  Dataset out;
  out.reserve(n_images);
  for (std::size_t i = 0; i < n_images; ++i) {
    Sample s = make_sample(rng, i, size, classes);
    // The first object is always placeable on an empty canvas.
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-size input

Box Letterbox::forward(const Box& b) const {
  const double s = static_cast<double>(target);
  return {(b.cx * new_w + pad_x) / s, (b.cy * new_h + pad_y) / s, b.w * new_w / s, b.h * new_h / s};
}

Box Letterbox::inverse(const Box& b) const {
  const double s = static_cast<double>(target);
  return {(b.cx * s - pad_x) / new_w, (b.cy * s - pad_y) / new_h, b.w * s / new_w, b.h * s / new_h};
}

Tensor image_to_tensor(const Image& image) {
  std::vector<double> v(3 * image.width * image.height);
  const std::size_t plane = image.width * image.height;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        v[c * plane + y * image.width + x] = (image.at(x, y, c) / 255.0 - 0.5) / 0.25;
      }
  return Tensor({3, image.height, image.width}, std::move(v));
}

ResizedImage resize_fixed(const Image& image, std::size_t target) {
  if (target == 0 || target % 32 != 0) throw ValidationError("target size must be a positive multiple of 32");
  if (image.width == 0 || image.height == 0) throw ValidationError("empty image");
  Letterbox lb;
  lb.src_w = image.width;
  lb.src_h = image.height;
  lb.target = target;
  const double scale = std::min(static_cast<double>(target) / image.width,
                                static_cast<double>(target) / image.height);
  lb.new_w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(image.width * scale)), 1, target);
  lb.new_h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(image.height * scale)), 1, target);
  lb.pad_x = (target - lb.new_w) / 2;
  lb.pad_y = (target - lb.new_h) / 2;

  const std::size_t plane = target * target;
  std::vector<double> v(3 * plane, 0.0);
  const double fx = static_cast<double>(image.width) / lb.new_w;
  const double fy = static_cast<double>(image.height) / lb.new_h;
  for (std::size_t y = 0; y < lb.new_h; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double ty = sy - y0;
    for (std::size_t x = 0; x < lb.new_w; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double tx = sx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1 - tx) + image.at(x1, y0, c) * tx;
        const double bottom = image.at(x0, y1, c) * (1 - tx) + image.at(x1, y1, c) * tx;
        const double value = top * (1 - ty) + bottom * ty;
        v[c * plane + (y + lb.pad_y) * target + x + lb.pad_x] = (value / 255.0 - 0.5) / 0.25;
      }
    }
  }
  return {Tensor({3, target, target}, std::move(v)), lb};
}

// ---------------------------------------------------------------------------
// Evaluation

AreaBucket bucket_of(const Box& box) {
  const double a = box.area();
  if (a < kSmallAreaLimit) return AreaBucket::Small;
  if (a < kMediumAreaLimit) return AreaBucket::Medium;
  return AreaBucket::Large;
}

namespace {

bool in_bucket(const Box& box, AreaBucket bucket) {
  return bucket == AreaBucket::All || bucket_of(box) == bucket;
}

struct ScoredMatch {
  double score;
  bool true_positive;
};

// AP of one class at one threshold, or nullopt when no ground truth counts.
std::optional<double> class_ap(const std::vector<DetectionSet>& preds,
                               const std::vector<GroundTruthSet>& gts, std::size_t cls,
                               double threshold, AreaBucket bucket) {
  std::vector<ScoredMatch> matches;
  std::size_t positives = 0;
  for (std::size_t img = 0; img < gts.size(); ++img) {
    std::vector<Box> gt_boxes;
    std::vector<char> gt_ignored;
    for (const auto& obj : gts[img].objects) {
      if (obj.class_id != cls) continue;
      gt_boxes.push_back(obj.box);
      gt_ignored.push_back(!in_bucket(obj.box, bucket));
    }
    // Counted ground truth first, so matches prefer it over ignored objects.
    std::vector<std::size_t> gt_order(gt_boxes.size());
    std::iota(gt_order.begin(), gt_order.end(), 0);
    std::stable_sort(gt_order.begin(), gt_order.end(),
                     [&](std::size_t a, std::size_t b) { return gt_ignored[a] < gt_ignored[b]; });
    for (char ig : gt_ignored) positives += ig ? 0 : 1;

    std::vector<const Detection*> dets;
    for (const auto& d : preds[img].detections) {
      if (d.label() == cls) dets.push_back(&d);
    }
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection* a, const Detection* b) { return a->score() > b->score(); });

    std::vector<char> taken(gt_boxes.size(), 0);
    for (const Detection* d : dets) {
      double best = std::min(threshold, 1.0 - 1e-10);
      std::ptrdiff_t match = -1;
      for (std::size_t g : gt_order) {
        if (taken[g]) continue;
        if (match >= 0 && !gt_ignored[match] && gt_ignored[g]) break;
        const double o = iou(d->box, gt_boxes[g]);
        if (o < best) continue;
        best = o;
        match = static_cast<std::ptrdiff_t>(g);
      }
      if (match >= 0) {
        taken[match] = 1;
        if (!gt_ignored[match]) matches.push_back({d->score(), true});
      } else if (in_bucket(d->box, bucket)) {
        matches.push_back({d->score(), false});
      }
    }
  }
  if (positives == 0) return std::nullopt;

  std::stable_sort(matches.begin(), matches.end(),
                   [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  std::vector<double> precision(matches.size()), recall(matches.size());
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    (matches[i].true_positive ? tp : fp) += 1.0;
    precision[i] = tp / (tp + fp);
    recall[i] = tp / static_cast<double>(positives);
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level - 1e-12);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

std::vector<std::size_t> classes_in(const std::vector<DetectionSet>& preds,
                                    const std::vector<GroundTruthSet>& gts) {
  std::vector<std::size_t> cls;
  for (const auto& g : gts)
    for (const auto& o : g.objects) cls.push_back(o.class_id);
  std::sort(cls.begin(), cls.end());
  cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
  (void)preds;
  return cls;
}

std::optional<double> mean_ap(const std::vector<DetectionSet>& preds,
                              const std::vector<GroundTruthSet>& gts,
                              const std::vector<double>& thresholds, AreaBucket bucket) {
  const auto classes = classes_in(preds, gts);
  double total = 0.0;
  std::size_t count = 0;
  for (double t : thresholds) {
    for (std::size_t c : classes) {
      if (auto ap = class_ap(preds, gts, c, t, bucket)) {
        total += *ap;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return total / static_cast<double>(count);
}

void check_lengths(const std::vector<DetectionSet>& preds, const std::vector<GroundTruthSet>& gts) {
  if (preds.size() != gts.size()) {
    throw ValidationError("evaluate_ap: " + std::to_string(preds.size()) + " prediction sets for " +
                          std::to_string(gts.size()) + " images");
  }
}

}  // namespace

std::optional<double> evaluate_ap_at(const std::vector<DetectionSet>& preds,
                                     const std::vector<GroundTruthSet>& gts, double iou_threshold,
                                     AreaBucket bucket) {
  check_lengths(preds, gts);
  return mean_ap(preds, gts, {iou_threshold}, bucket);
}

ApReport evaluate_ap(const std::vector<DetectionSet>& preds, const std::vector<GroundTruthSet>& gts) {
  check_lengths(preds, gts);
  std::vector<double> thresholds;
  for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);
  ApReport r;
  r.ap = mean_ap(preds, gts, thresholds, AreaBucket::All);
  r.ap50 = mean_ap(preds, gts, {0.5}, AreaBucket::All);
  r.ap75 = mean_ap(preds, gts, {0.75}, AreaBucket::All);
  r.ap_s = mean_ap(preds, gts, thresholds, AreaBucket::Small);
  r.ap_m = mean_ap(preds, gts, thresholds, AreaBucket::Medium);
  r.ap_l = mean_ap(preds, gts, thresholds, AreaBucket::Large);
  return r;
}

DetectionSet to_detections(const Predictions& preds) {
  const std::size_t nq = preds.class_logits.rows();
  const std::size_t width = preds.class_logits.cols();
  std::vector<double> probs(nq * width);
  kernels::active::softmax_rows(nq, width, preds.class_logits.data(), probs);
  const auto boxes = preds.boxes.data();
  DetectionSet set;
  set.detections.reserve(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    Detection d;
    d.class_probs.assign(probs.begin() + q * width, probs.begin() + q * width + width - 1);
    d.box = {boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
    set.detections.push_back(std::move(d));
  }
  return set;
}

nlohmann::json to_json(const ApReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"ap", opt(r.ap)},     {"ap50", opt(r.ap50)}, {"ap75", opt(r.ap75)},
          {"ap_s", opt(r.ap_s)}, {"ap_m", opt(r.ap_m)}, {"ap_l", opt(r.ap_l)}};
}

// ---------------------------------------------------------------------------
// Disk format

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  auto token = [&] {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t.push_back(c);
      }
    }
    return t;
  };
  if (token() != "P6") throw std::runtime_error(path.string() + " is not a binary PPM");
  Image img;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  if (std::stoul(token()) != 255) throw std::runtime_error("only 8-bit PPM is supported");
  img.rgb.resize(img.width * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()))) {
    throw std::runtime_error(path.string() + " is truncated");
  }
  return img;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  std::ofstream ann(dir / "annotations.jsonl", std::ios::trunc);
  if (!ann) throw std::runtime_error("cannot write annotations in " + dir.string());
  for (const auto& s : dataset) {
    const std::string file = s.name + ".ppm";
    write_ppm(dir / file, s.image);
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : s.truth.objects) {
      objects.push_back({{"class", o.class_id}, {"cx", o.box.cx}, {"cy", o.box.cy}, {"w", o.box.w}, {"h", o.box.h}});
    }
    ann << nlohmann::json{{"image", file}, {"size", {s.image.width, s.image.height}}, {"objects", objects}}.dump()
        << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream ann(dir / "annotations.jsonl");
  if (!ann) throw std::runtime_error("no annotations.jsonl in " + dir.string());
  Dataset out;
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Sample s;
    const auto file = j.at("image").get<std::string>();
    s.name = std::filesystem::path(file).stem().string();
    s.image = read_ppm(dir / file);
    const auto size = j.at("size").get<std::vector<std::size_t>>();
    if (size.size() != 2 || size[0] != s.image.width || size[1] != s.image.height) {
      throw std::runtime_error("annotation size does not match " + file);
    }
    s.truth.width = size[0];
    s.truth.height = size[1];
    for (const auto& o : j.at("objects")) {
      Object obj{o.at("class").get<std::size_t>(),
                 {o.at("cx").get<double>(), o.at("cy").get<double>(), o.at("w").get<double>(), o.at("h").get<double>()}};
      if (obj.box.w <= 0.0 || obj.box.h <= 0.0 || obj.box.x0() < -1e-9 || obj.box.y0() < -1e-9 ||
          obj.box.x1() > 1 + 1e-9 || obj.box.y1() > 1 + 1e-9) {
        throw ValidationError("annotation box outside [0,1] in " + file);
      }
      s.truth.objects.push_back(obj);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace sdetr
