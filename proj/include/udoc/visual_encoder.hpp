#pragma once

#include <vector>

#include "udoc/corpus.hpp"
#include "udoc/nn.hpp"
#include "udoc/types.hpp"

namespace udoc {

// One conv stage. Feature planes are stored as (channels x pixels) with
// row-major pixel index p = y * width + x.
struct ConvStage {
  Mat W;  // out_ch x (in_ch * k * k), kernel index = ci*k*k + ky*k + kx
  Vec b;  // out_ch
  int in_ch = 1;
  int out_ch = 1;
  int ksize = 3;
  int stride = 1;
  int pad = 0;
  bool relu = true;
};

struct ConvStackParams {
  std::vector<ConvStage> stages;
};

// Fixed backbone: conv(1->8, 3x3, s2, p1)-ReLU-conv(8->16, 3x3, s2, p1)-ReLU.
ConvStackParams init_backbone(Rng& rng);

struct FeatureMap {
  Mat values;  // channels x (h * w)
  int h = 0;
  int w = 0;
  int stride = 1;  // image pixels per feature cell
};

struct ConvStageCache {
  Mat input;  // in_ch x pixels
  Mat cols;   // (in_ch*k*k) x out_pixels
  Mat pre;    // out_ch x out_pixels, pre-activation
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

struct ConvCache {
  std::vector<ConvStageCache> stages;
};

FeatureMap conv_forward(const RasterImage& image, const ConvStackParams& params,
                        ConvCache* cache);
// dOut is (channels x pixels) of the final feature map. Parameter grads are
// accumulated into `grads` (shaped like `params`); the input image gradient
// is discarded (the image is a leaf).
void conv_backward(const ConvStackParams& params, const ConvCache& cache, const Mat& dOut,
                   ConvStackParams& grads);

// RoI-Align: the box (image pixels) maps to continuous feature coordinates;
// a P x P bin grid is sampled at 2x2 regular sub-points per bin by bilinear
// interpolation over cell centers (cell i centered at i + 0.5, clamped at the
// border), averaged per bin, and flattened channel-major.
Vec roi_align(const FeatureMap& fmap, const BoundingBox& box, int pool);
// Scatter-add of the output gradient back onto the feature map values.
void roi_align_backward(const FeatureMap& fmap, const BoundingBox& box, int pool,
                        const Vec& dOut, Mat& dValues);

struct RegionFeatures {
  std::vector<Vec> region;  // per region, d_v = channels * P * P
  Vec page;                 // RoI covering the whole page
  FeatureMap fmap;
  ConvCache conv_cache;
};

RegionFeatures extract_region_features(const DocumentRecord& doc, const ConvStackParams& params,
                                       int pool);

std::uint64_t conv_checksum(const ConvStackParams& params);

}  // namespace udoc
