#include <doctest.h>

#include "fd_helpers.hpp"
#include "udoc/visual_encoder.hpp"

using namespace udoc;
using udoc::testing::weight_pattern;

namespace {

RasterImage make_image(Rng& rng, int h, int w) {
  RasterImage img;
  img.pixels.resize(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.pixels(y, x) = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("zero image with zero weights yields ReLU(bias) everywhere") {
  Rng rng(1);
  ConvStackParams p = init_backbone(rng);
  for (auto& s : p.stages) s.W.setZero();
  p.stages[0].b.setConstant(0.25);
  p.stages[1].b.setConstant(-0.5);  // negative bias clips to zero after ReLU

  RasterImage img;
  img.pixels = Mat::Zero(16, 16);
  const FeatureMap fmap = conv_forward(img, p, nullptr);
  CHECK(fmap.stride == 4);
  CHECK(fmap.h == 4);
  CHECK(fmap.w == 4);
  // Stage 1 outputs ReLU(0.25); stage 2 sees it through zero weights -> ReLU(-0.5) = 0.
  CHECK(fmap.values.isZero(0.0));

  p.stages[1].b.setConstant(0.125);
  const FeatureMap fmap2 = conv_forward(img, p, nullptr);
  CHECK(fmap2.values.minCoeff() == doctest::Approx(0.125));
  CHECK(fmap2.values.maxCoeff() == doctest::Approx(0.125));
}

TEST_CASE("1x1 identity kernel with no nonlinearity is the identity") {
  ConvStackParams p;
  ConvStage s;
  s.in_ch = 1;
  s.out_ch = 1;
  s.ksize = 1;
  s.stride = 1;
  s.pad = 0;
  s.relu = false;
  s.W = Mat::Ones(1, 1);
  s.b = Vec::Zero(1);
  p.stages.push_back(s);

  Rng rng(2);
  const RasterImage img = make_image(rng, 6, 5);
  const FeatureMap fmap = conv_forward(img, p, nullptr);
  REQUIRE(fmap.h == 6);
  REQUIRE(fmap.w == 5);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x) CHECK(fmap.values(0, y * 5 + x) == img.pixels(y, x));
}

TEST_CASE("conv parameter gradients match finite differences") {
  Rng rng(3);
  ConvStackParams p = init_backbone(rng);
  const RasterImage img = make_image(rng, 12, 12);

  ConvCache cache;
  const FeatureMap fmap = conv_forward(img, p, &cache);
  const Mat w = weight_pattern(fmap.values.rows(), fmap.values.cols());

  ConvStackParams grads = p;
  for (auto& s : grads.stages) {
    s.W.setZero();
    s.b.setZero();
  }
  conv_backward(p, cache, w, grads);

  auto loss = [&]() { return (conv_forward(img, p, nullptr).values.array() * w.array()).sum(); };
  for (std::size_t k = 0; k < p.stages.size(); ++k) {
    CHECK(udoc::testing::max_rel_error(p.stages[k].W, grads.stages[k].W, loss, 1e-6) < 1e-4);
    CHECK(udoc::testing::max_rel_error_vec(p.stages[k].b, grads.stages[k].b, loss, 1e-6) < 1e-4);
  }
}

TEST_CASE("roi_align of a constant feature map is constant") {
  FeatureMap fmap;
  fmap.h = 8;
  fmap.w = 8;
  fmap.stride = 4;
  fmap.values = Mat::Constant(3, 64, 0.7);
  const Vec out = roi_align(fmap, BoundingBox{3, 5, 21, 17}, 3);
  REQUIRE(out.size() == 27);
  for (Index i = 0; i < out.size(); ++i) CHECK(out(i) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("roi_align P=1 on a cell-aligned box averages the four sampled centers") {
  // 4x4 single-channel map, stride 1; box covers cells [0,2) x [0,2).
  FeatureMap fmap;
  fmap.h = 4;
  fmap.w = 4;
  fmap.stride = 1;
  fmap.values.resize(1, 16);
  for (int i = 0; i < 16; ++i) fmap.values(0, i) = static_cast<Scalar>(i * i + 1);

  // Hand evaluation: the 2x2 sub-points of the single bin land exactly on
  // the centers of cells (0,0), (0,1), (1,0), (1,1).
  const Scalar expected =
      0.25 * (fmap.values(0, 0) + fmap.values(0, 1) + fmap.values(0, 4) + fmap.values(0, 5));
  const Vec out = roi_align(fmap, BoundingBox{0, 0, 2, 2}, 1);
  REQUIRE(out.size() == 1);
  CHECK(out(0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("roi_align handles sub-cell boxes and rejects out-of-bounds ones") {
  FeatureMap fmap;
  fmap.h = 4;
  fmap.w = 4;
  fmap.stride = 4;  // image is 16x16
  fmap.values = Mat::Random(2, 16);
  CHECK_NOTHROW(roi_align(fmap, BoundingBox{5, 5, 7, 7}, 2));  // half a feature cell
  CHECK_THROWS_AS(roi_align(fmap, BoundingBox{5, 5, 17, 7}, 2), std::runtime_error);
  CHECK_THROWS_AS(roi_align(fmap, BoundingBox{-1, 0, 4, 4}, 2), std::runtime_error);
}

TEST_CASE("roi_align gradient matches finite differences") {
  Rng rng(4);
  FeatureMap fmap;
  fmap.h = 6;
  fmap.w = 6;
  fmap.stride = 2;
  fmap.values.resize(2, 36);
  for (Index j = 0; j < fmap.values.size(); ++j) fmap.values.data()[j] = rng.normal();

  const BoundingBox box{1, 2, 9, 11};
  const int pool = 3;
  const Vec w = weight_pattern(2 * pool * pool, 1).col(0);

  Mat dValues = Mat::Zero(2, 36);
  roi_align_backward(fmap, box, pool, w, dValues);

  auto loss = [&]() { return roi_align(fmap, box, pool).dot(w); };
  CHECK(udoc::testing::max_rel_error(fmap.values, dValues, loss, 1e-6) < 1e-6);
}

TEST_CASE("extract_region_features composes conv and roi align") {
  CorpusConfig ccfg;
  ccfg.width = 32;
  ccfg.height = 32;
  ccfg.min_regions = 1;
  ccfg.max_regions = 1;
  ccfg.min_region_w = 8;
  ccfg.min_region_h = 8;
  ccfg.max_region_w = 16;
  ccfg.max_region_h = 16;
  const Corpus corpus = generate_corpus(5, 2, ccfg);
  Rng rng(6);
  const ConvStackParams p = init_backbone(rng);

  const RegionFeatures rf = extract_region_features(corpus.docs[0], p, 3);
  CHECK(rf.region.size() == 1);
  CHECK(rf.region[0].size() == 16 * 9);
  const Vec page = roi_align(rf.fmap, BoundingBox{0, 0, 32, 32}, 3);
  CHECK((rf.page - page).norm() == 0.0);

  // Determinism: identical inputs give identical features.
  const RegionFeatures rf2 = extract_region_features(corpus.docs[0], p, 3);
  CHECK((rf.region[0] - rf2.region[0]).norm() == 0.0);

  // Permuting regions permutes features.
  DocumentRecord doc = corpus.docs[0];
  Region extra = doc.regions[0];
  extra.box = BoundingBox{20, 20, 30, 30};
  doc.regions.push_back(extra);
  const RegionFeatures ab = extract_region_features(doc, p, 3);
  std::swap(doc.regions[0], doc.regions[1]);
  const RegionFeatures ba = extract_region_features(doc, p, 3);
  CHECK((ab.region[0] - ba.region[1]).norm() == 0.0);
  CHECK((ab.region[1] - ba.region[0]).norm() == 0.0);
}
