#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "sdetr/data.hpp"
#include "test_util.hpp"

namespace sdetr {
namespace {

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = gen_synthetic(3, 20, 64, 3);
  const auto b = gen_synthetic(3, 20, 64, 3);
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.rgb, b[i].image.rgb);
    ASSERT_EQ(a[i].truth.objects.size(), b[i].truth.objects.size());
    for (std::size_t k = 0; k < a[i].truth.objects.size(); ++k) {
      EXPECT_EQ(a[i].truth.objects[k].box.cx, b[i].truth.objects[k].box.cx);
      EXPECT_EQ(a[i].truth.objects[k].class_id, b[i].truth.objects[k].class_id);
    }
  }
  EXPECT_NE(gen_synthetic(4, 1, 64, 3)[0].image.rgb, a[0].image.rgb);
}

TEST(Synthetic, BoxesInBoundsAndCountsInRange) {
  for (std::size_t size : {64u, 96u, 128u}) {
    for (const auto& s : gen_synthetic(5, 100, size, 5)) {
      EXPECT_GE(s.truth.objects.size(), 1u);
      EXPECT_LE(s.truth.objects.size(), 8u);
      EXPECT_EQ(s.image.width, size);
      for (const auto& o : s.truth.objects) {
        EXPECT_LT(o.class_id, 5u);
        EXPECT_GT(o.box.area(), 0.0);
        EXPECT_GE(o.box.x0(), 0.0);
        EXPECT_GE(o.box.y0(), 0.0);
        EXPECT_LE(o.box.x1(), 1.0 + 1e-12);
        EXPECT_LE(o.box.y1(), 1.0 + 1e-12);
      }
    }
  }
}

TEST(Synthetic, BoxesAreExactPixelExtents) {
  // Every box edge lies on a pixel boundary and the boxed region differs from
  // the background just inside each edge.
  for (const auto& s : gen_synthetic(6, 10, 64, 3)) {
    for (const auto& o : s.truth.objects) {
      const double x0 = o.box.x0() * 64, x1 = o.box.x1() * 64;
      EXPECT_NEAR(x0, std::round(x0), 1e-9);
      EXPECT_NEAR(x1, std::round(x1), 1e-9);
    }
  }
}

TEST(Synthetic, EnoughSmallObjects) {
  std::size_t small = 0, total = 0;
  for (const auto& s : gen_synthetic(7, 200, 64, 3)) {
    for (const auto& o : s.truth.objects) {
      ++total;
      small += o.box.area() * 64 * 64 < 6.4 * 6.4 ? 1 : 0;
    }
  }
  EXPECT_GE(static_cast<double>(small), 0.2 * static_cast<double>(total)) << small << " of " << total;
}

TEST(Synthetic, Rejections) {
  EXPECT_THROW(gen_synthetic(0, 1, 50, 3), ValidationError);
  EXPECT_THROW(gen_synthetic(0, 1, 64, 1), ValidationError);
}

Image flat_image(std::size_t w, std::size_t h, std::uint8_t v) {
  return Image{w, h, std::vector<std::uint8_t>(w * h * 3, v)};
}

TEST(ResizeFixed, SquareAtTargetIsIdentity) {
  const auto img = gen_synthetic(8, 1, 64, 3)[0].image;
  const auto r = resize_fixed(img, 64);
  EXPECT_EQ(r.transform.new_w, 64u);
  EXPECT_EQ(r.transform.pad_x, 0u);
  EXPECT_LE(testing::max_abs_diff(r.pixels.data(), image_to_tensor(img).data()), 0.0);
  const Box b{0.3, 0.6, 0.2, 0.1};
  const Box f = r.transform.forward(b);
  EXPECT_EQ(f.cx, b.cx);
  EXPECT_EQ(f.h, b.h);
}

TEST(ResizeFixed, WideInputIsLetterboxedSymmetrically) {
  const auto r = resize_fixed(flat_image(128, 64, 255), 64);
  EXPECT_EQ(r.transform.new_w, 64u);
  EXPECT_EQ(r.transform.new_h, 32u);
  EXPECT_EQ(r.transform.pad_y, 16u);
  const Box full = r.transform.forward(Box{0.5, 0.5, 1.0, 1.0});
  EXPECT_NEAR(full.x0(), 0.0, 1e-12);
  EXPECT_NEAR(full.x1(), 1.0, 1e-12);
  EXPECT_NEAR(full.y0(), 0.25, 1e-12);
  EXPECT_NEAR(full.y1(), 0.75, 1e-12);
  // Padding rows are exactly zero, image rows carry the normalised white.
  EXPECT_EQ(r.pixels.data()[0], 0.0);
  EXPECT_EQ(r.pixels.data()[16 * 64], 2.0);
  EXPECT_EQ(r.pixels.data()[48 * 64 - 1], 2.0);
  EXPECT_EQ(r.pixels.data()[48 * 64], 0.0);
}

TEST(ResizeFixed, BoxRoundTripAndIouPreserved) {
  std::mt19937_64 rng(9);
  for (auto [w, h] : {std::pair<std::size_t, std::size_t>{100, 40}, {37, 90}, {64, 64}, {300, 301}}) {
    const auto r = resize_fixed(flat_image(w, h, 10), 64);
    for (int i = 0; i < 100; ++i) {
      const Box a{uniform01(rng), uniform01(rng), 0.05 + uniform01(rng) * 0.5, 0.05 + uniform01(rng) * 0.5};
      const Box b{uniform01(rng), uniform01(rng), 0.05 + uniform01(rng) * 0.5, 0.05 + uniform01(rng) * 0.5};
      const Box back = r.transform.inverse(r.transform.forward(a));
      EXPECT_NEAR(back.cx, a.cx, 1e-9);
      EXPECT_NEAR(back.cy, a.cy, 1e-9);
      EXPECT_NEAR(back.w, a.w, 1e-9);
      EXPECT_NEAR(back.h, a.h, 1e-9);
      EXPECT_NEAR(iou(r.transform.forward(a), r.transform.forward(b)), iou(a, b), 1e-9);
    }
  }
}

TEST(ResizeFixed, RejectsIndivisibleTarget) {
  EXPECT_THROW(resize_fixed(flat_image(10, 10, 0), 50), ValidationError);
}

Detection det(std::size_t cls, double conf, Box b, std::size_t n_classes = 3) {
  Detection d;
  d.class_probs.assign(n_classes, (1.0 - conf) / static_cast<double>(n_classes));
  d.class_probs[cls] = conf;
  d.box = b;
  return d;
}

TEST(EvaluateAp, PerfectPredictionsScoreOne) {
  std::vector<GroundTruthSet> gts;
  std::vector<DetectionSet> preds;
  for (const auto& s : gen_synthetic(10, 30, 64, 3)) {
    gts.push_back(s.truth);
    DetectionSet set;
    for (const auto& o : s.truth.objects) set.detections.push_back(det(o.class_id, 1.0, o.box));
    preds.push_back(set);
  }
  const auto r = evaluate_ap(preds, gts);
  ASSERT_TRUE(r.ap.has_value());
  EXPECT_NEAR(*r.ap, 1.0, 1e-12);
  EXPECT_NEAR(*r.ap50, 1.0, 1e-12);
}

TEST(EvaluateAp, NoPredictionsScoreZero) {
  std::vector<GroundTruthSet> gts{{64, 64, {{0, {0.5, 0.5, 0.2, 0.2}}}}};
  const auto r = evaluate_ap({DetectionSet{}}, gts);
  EXPECT_EQ(*r.ap, 0.0);
}

TEST(EvaluateAp, FalsePositiveRankedAfterTruePositive) {
  const Box gt{0.5, 0.5, 0.4, 0.4};
  const Box near{0.5, 0.5, 0.4, 0.4 * 0.9};  // IoU 0.9
  const Box far{0.1, 0.1, 0.1, 0.1};         // IoU 0
  ASSERT_NEAR(iou(gt, near), 0.9, 1e-12);
  std::vector<GroundTruthSet> gts{{64, 64, {{1, gt}}}};
  std::vector<DetectionSet> preds{{{det(1, 0.9, near), det(1, 0.8, far)}}};
  EXPECT_NEAR(*evaluate_ap_at(preds, gts, 0.5), 1.0, 1e-12);
  // Swapping the confidences puts the false positive first: precision 1/2 at full recall.
  std::vector<DetectionSet> swapped{{{det(1, 0.8, near), det(1, 0.9, far)}}};
  EXPECT_NEAR(*evaluate_ap_at(swapped, gts, 0.5), 0.5, 1e-12);
}

TEST(EvaluateAp, EmptyBucketIsAbsent) {
  std::vector<GroundTruthSet> gts{{64, 64, {{0, {0.5, 0.5, 0.5, 0.5}}}}};
  std::vector<DetectionSet> preds{{{det(0, 0.9, {0.5, 0.5, 0.5, 0.5})}}};
  const auto r = evaluate_ap(preds, gts);
  EXPECT_FALSE(r.ap_s.has_value());
  EXPECT_FALSE(r.ap_m.has_value());
  ASSERT_TRUE(r.ap_l.has_value());
  EXPECT_NEAR(*r.ap_l, 1.0, 1e-12);
  const auto j = to_json(r);
  EXPECT_TRUE(j["ap_s"].is_null());
}

TEST(EvaluateAp, BucketsScaleFromReferenceImage) {
  EXPECT_EQ(bucket_of(Box{0.5, 0.5, 0.04, 0.04}), AreaBucket::Small);
  EXPECT_EQ(bucket_of(Box{0.5, 0.5, 0.1, 0.1}), AreaBucket::Medium);
  EXPECT_EQ(bucket_of(Box{0.5, 0.5, 0.2, 0.2}), AreaBucket::Large);
}

// Noisy predictions over a synthetic set, shared by the invariance checks.
struct NoisyEval {
  std::vector<GroundTruthSet> gts;
  std::vector<DetectionSet> preds;

  NoisyEval() {
    std::mt19937_64 rng(11);
    for (const auto& s : gen_synthetic(12, 25, 64, 3)) {
      gts.push_back(s.truth);
      DetectionSet set;
      for (const auto& o : s.truth.objects) {
        Box b = o.box;
        b.cx += 0.03 * (uniform01(rng) - 0.5);
        b.w *= 0.8 + 0.4 * uniform01(rng);
        const std::size_t cls = uniform01(rng) < 0.85 ? o.class_id : (o.class_id + 1) % 3;
        set.detections.push_back(det(cls, 0.4 + 0.6 * uniform01(rng), b));
      }
      for (int k = 0; k < 2; ++k) {
        set.detections.push_back(det(rng() % 3, 0.4 + 0.6 * uniform01(rng),
                                     {uniform01(rng), uniform01(rng), 0.1, 0.1}));
      }
      preds.push_back(set);
    }
  }
};

TEST(EvaluateAp, InvariantToImageAndPredictionOrder) {
  NoisyEval e;
  const auto base = evaluate_ap(e.preds, e.gts);
  auto preds = e.preds;
  auto gts = e.gts;
  std::reverse(preds.begin(), preds.end());
  std::reverse(gts.begin(), gts.end());
  for (auto& p : preds) std::reverse(p.detections.begin(), p.detections.end());
  const auto other = evaluate_ap(preds, gts);
  EXPECT_NEAR(*other.ap, *base.ap, 1e-12);
  EXPECT_GT(*base.ap, 0.0);
  EXPECT_LT(*base.ap, 1.0);
}

TEST(EvaluateAp, RemovingFalsePositiveNeverHurts) {
  NoisyEval e;
  double current = *evaluate_ap(e.preds, e.gts).ap;
  for (std::size_t img = 0; img < e.preds.size(); ++img) {
    auto& dets = e.preds[img].detections;
    for (std::size_t k = 0; k < dets.size();) {
      double best = 0.0;
      for (const auto& o : e.gts[img].objects) {
        if (o.class_id == dets[k].label()) best = std::max(best, iou(o.box, dets[k].box));
      }
      if (best < 0.5) {  // a false positive at every threshold
        dets.erase(dets.begin() + static_cast<std::ptrdiff_t>(k));
        const double next = *evaluate_ap(e.preds, e.gts).ap;
        EXPECT_GE(next, current - 1e-12);
        current = next;
      } else {
        ++k;
      }
    }
  }
}

TEST(EvaluateAp, RejectsMismatchedLengths) {
  EXPECT_THROW(evaluate_ap({DetectionSet{}}, {}), ValidationError);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "sdetr_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  const auto data = gen_synthetic(13, 5, 64, 3);
  write_dataset(dir, data);
  const auto back = read_dataset(dir);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].name, data[i].name);
    EXPECT_EQ(back[i].image.rgb, data[i].image.rgb);
    ASSERT_EQ(back[i].truth.objects.size(), data[i].truth.objects.size());
    for (std::size_t k = 0; k < data[i].truth.objects.size(); ++k) {
      EXPECT_EQ(back[i].truth.objects[k].box.w, data[i].truth.objects[k].box.w);
    }
  }
}

TEST(DatasetIo, MissingAnnotationsFail) {
  EXPECT_THROW(read_dataset(std::filesystem::temp_directory_path() / "sdetr_no_such_dir"), std::runtime_error);
}

}  // namespace
}  // namespace sdetr
