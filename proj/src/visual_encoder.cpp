#include "udoc/visual_encoder.hpp"

#include <stdexcept>

namespace udoc {

namespace {

int out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Gathers conv patches: cols(ci*k*k + ky*k + kx, oy*ow + ox) = input pixel or 0.
Mat im2col(const Mat& input, int in_h, int in_w, const ConvStage& s, int out_h, int out_w) {
  Mat cols = Mat::Zero(static_cast<Index>(s.in_ch) * s.ksize * s.ksize,
                       static_cast<Index>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Index col = static_cast<Index>(oy) * out_w + ox;
      for (int ky = 0; ky < s.ksize; ++ky) {
        const int iy = oy * s.stride - s.pad + ky;
        if (iy < 0 || iy >= in_h) continue;
        for (int kx = 0; kx < s.ksize; ++kx) {
          const int ix = ox * s.stride - s.pad + kx;
          if (ix < 0 || ix >= in_w) continue;
          const Index pix = static_cast<Index>(iy) * in_w + ix;
          for (int ci = 0; ci < s.in_ch; ++ci)
            cols(static_cast<Index>(ci) * s.ksize * s.ksize + ky * s.ksize + kx, col) =
                input(ci, pix);
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Mat& dCols, int in_h, int in_w, const ConvStage& s, int out_h, int out_w,
                Mat& dInput) {
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const Index col = static_cast<Index>(oy) * out_w + ox;
      for (int ky = 0; ky < s.ksize; ++ky) {
        const int iy = oy * s.stride - s.pad + ky;
        if (iy < 0 || iy >= in_h) continue;
        for (int kx = 0; kx < s.ksize; ++kx) {
          const int ix = ox * s.stride - s.pad + kx;
          if (ix < 0 || ix >= in_w) continue;
          const Index pix = static_cast<Index>(iy) * in_w + ix;
          for (int ci = 0; ci < s.in_ch; ++ci)
            dInput(ci, pix) +=
                dCols(static_cast<Index>(ci) * s.ksize * s.ksize + ky * s.ksize + kx, col);
        }
      }
    }
  }
}

struct BilinearTap {
  Index pix;
  Scalar weight;
};

// Bilinear interpolation over cell centers with border clamping; at most
// four taps, weights sum to 1.
int bilinear_taps(int h, int w, Scalar y, Scalar x, BilinearTap taps[4]) {
  const Scalar fy = std::clamp(y - 0.5, 0.0, static_cast<Scalar>(h - 1));
  const Scalar fx = std::clamp(x - 0.5, 0.0, static_cast<Scalar>(w - 1));
  const int y0 = std::min(static_cast<int>(fy), h - 1);
  const int x0 = std::min(static_cast<int>(fx), w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const Scalar wy = fy - y0;
  const Scalar wx = fx - x0;
  taps[0] = {static_cast<Index>(y0) * w + x0, (1 - wy) * (1 - wx)};
  taps[1] = {static_cast<Index>(y0) * w + x1, (1 - wy) * wx};
  taps[2] = {static_cast<Index>(y1) * w + x0, wy * (1 - wx)};
  taps[3] = {static_cast<Index>(y1) * w + x1, wy * wx};
  return 4;
}

void check_box_for_roi(const FeatureMap& fmap, const BoundingBox& box) {
  const int img_w = fmap.w * fmap.stride;
  const int img_h = fmap.h * fmap.stride;
  if (box.x_lt < 0 || box.y_lt < 0 || box.x_rb > img_w || box.y_rb > img_h ||
      box.width() <= 0 || box.height() <= 0)
    throw std::runtime_error("roi_align: box out of bounds");
}

}  // namespace

ConvStackParams init_backbone(Rng& rng) {
  ConvStackParams p;
  auto make = [&rng](int in_ch, int out_ch) {
    ConvStage s;
    s.in_ch = in_ch;
    s.out_ch = out_ch;
    s.ksize = 3;
    s.stride = 2;
    s.pad = 1;
    s.relu = true;
    const Index fan_in = static_cast<Index>(in_ch) * 9;
    const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
    s.W.resize(out_ch, fan_in);
    for (Index j = 0; j < fan_in; ++j)
      for (Index i = 0; i < out_ch; ++i) s.W(i, j) = rng.uniform(-bound, bound);
    s.b = Vec::Zero(out_ch);
    return s;
  };
  p.stages.push_back(make(1, ModelConfig::conv_ch1));
  p.stages.push_back(make(ModelConfig::conv_ch1, ModelConfig::conv_ch2));
  return p;
}

FeatureMap conv_forward(const RasterImage& image, const ConvStackParams& params,
                        ConvCache* cache) {
  if (params.stages.empty()) throw std::runtime_error("conv: empty stack");
  if (params.stages.front().in_ch != 1)
    throw std::runtime_error("conv: first stage must take one channel");

  int h = image.height();
  int w = image.width();
  Mat cur(1, static_cast<Index>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) cur(0, static_cast<Index>(y) * w + x) = image.pixels(y, x);

  if (cache != nullptr) cache->stages.clear();
  int total_stride = 1;
  for (const auto& s : params.stages) {
    if (cur.rows() != s.in_ch) throw std::runtime_error("conv: channel mismatch");
    const int oh = out_extent(h, s.ksize, s.stride, s.pad);
    const int ow = out_extent(w, s.ksize, s.stride, s.pad);
    if (oh <= 0 || ow <= 0) throw std::runtime_error("conv: image too small for stage");
    Mat cols = im2col(cur, h, w, s, oh, ow);
    Mat pre = s.W * cols;
    pre.colwise() += s.b;
    Mat post;
    if (s.relu)
      post = pre.cwiseMax(0.0);
    else
      post = pre;
    if (cache != nullptr) {
      ConvStageCache sc;
      sc.input = std::move(cur);
      sc.cols = std::move(cols);
      sc.pre = pre;
      sc.in_h = h;
      sc.in_w = w;
      sc.out_h = oh;
      sc.out_w = ow;
      cache->stages.push_back(std::move(sc));
    }
    cur = std::move(post);
    h = oh;
    w = ow;
    total_stride *= s.stride;
  }
  FeatureMap fmap;
  fmap.values = std::move(cur);
  fmap.h = h;
  fmap.w = w;
  fmap.stride = total_stride;
  return fmap;
}

void conv_backward(const ConvStackParams& params, const ConvCache& cache, const Mat& dOut,
                   ConvStackParams& grads) {
  if (cache.stages.size() != params.stages.size())
    throw std::runtime_error("conv: cache/stack mismatch");
  Mat d = dOut;
  for (int i = static_cast<int>(params.stages.size()) - 1; i >= 0; --i) {
    const auto& s = params.stages[static_cast<std::size_t>(i)];
    const auto& sc = cache.stages[static_cast<std::size_t>(i)];
    auto& g = grads.stages[static_cast<std::size_t>(i)];
    Mat dPre;
    if (s.relu)
      dPre = (d.array() * (sc.pre.array() > 0.0).cast<Scalar>()).matrix();
    else
      dPre = d;
    g.W.noalias() += dPre * sc.cols.transpose();
    g.b.noalias() += dPre.rowwise().sum();
    if (i == 0) break;  // image is a leaf
    Mat dCols = s.W.transpose() * dPre;
    Mat dInput = Mat::Zero(sc.input.rows(), sc.input.cols());
    col2im_add(dCols, sc.in_h, sc.in_w, s, sc.out_h, sc.out_w, dInput);
    d = std::move(dInput);
  }
}

Vec roi_align(const FeatureMap& fmap, const BoundingBox& box, int pool) {
  check_box_for_roi(fmap, box);
  const int C = static_cast<int>(fmap.values.rows());
  const Scalar inv_stride = 1.0 / fmap.stride;
  const Scalar x0 = box.x_lt * inv_stride;
  const Scalar y0 = box.y_lt * inv_stride;
  const Scalar bw = (box.x_rb - box.x_lt) * inv_stride / pool;
  const Scalar bh = (box.y_rb - box.y_lt) * inv_stride / pool;

  Vec out = Vec::Zero(static_cast<Index>(C) * pool * pool);
  BilinearTap taps[4];
  for (int py = 0; py < pool; ++py) {
    for (int px = 0; px < pool; ++px) {
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const Scalar y = y0 + (py + (sy + 0.5) * 0.5) * bh;
          const Scalar x = x0 + (px + (sx + 0.5) * 0.5) * bw;
          bilinear_taps(fmap.h, fmap.w, y, x, taps);
          for (int t = 0; t < 4; ++t)
            for (int c = 0; c < C; ++c)
              out(static_cast<Index>(c) * pool * pool + py * pool + px) +=
                  0.25 * taps[t].weight * fmap.values(c, taps[t].pix);
        }
      }
    }
  }
  return out;
}

void roi_align_backward(const FeatureMap& fmap, const BoundingBox& box, int pool,
                        const Vec& dOut, Mat& dValues) {
  check_box_for_roi(fmap, box);
  const int C = static_cast<int>(fmap.values.rows());
  const Scalar inv_stride = 1.0 / fmap.stride;
  const Scalar x0 = box.x_lt * inv_stride;
  const Scalar y0 = box.y_lt * inv_stride;
  const Scalar bw = (box.x_rb - box.x_lt) * inv_stride / pool;
  const Scalar bh = (box.y_rb - box.y_lt) * inv_stride / pool;

  BilinearTap taps[4];
  for (int py = 0; py < pool; ++py) {
    for (int px = 0; px < pool; ++px) {
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const Scalar y = y0 + (py + (sy + 0.5) * 0.5) * bh;
          const Scalar x = x0 + (px + (sx + 0.5) * 0.5) * bw;
          bilinear_taps(fmap.h, fmap.w, y, x, taps);
          for (int t = 0; t < 4; ++t)
            for (int c = 0; c < C; ++c)
              dValues(c, taps[t].pix) +=
                  0.25 * taps[t].weight *
                  dOut(static_cast<Index>(c) * pool * pool + py * pool + px);
        }
      }
    }
  }
}

RegionFeatures extract_region_features(const DocumentRecord& doc, const ConvStackParams& params,
                                       int pool) {
  RegionFeatures rf;
  rf.fmap = conv_forward(doc.image, params, &rf.conv_cache);
  rf.region.reserve(doc.regions.size());
  for (const auto& r : doc.regions) rf.region.push_back(roi_align(rf.fmap, r.box, pool));
  rf.page = roi_align(rf.fmap, BoundingBox{0, 0, doc.width, doc.height}, pool);
  return rf;
}

std::uint64_t conv_checksum(const ConvStackParams& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& s : params.stages) {
    h = fnv1a(s.W.data(), sizeof(Scalar) * static_cast<std::size_t>(s.W.size()), h);
    h = fnv1a(s.b.data(), sizeof(Scalar) * static_cast<std::size_t>(s.b.size()), h);
  }
  return h;
}

}  // namespace udoc
