#include "udoc/encoder.hpp"

#include <stdexcept>

namespace udoc {

namespace {

DirectionParams init_direction(Rng& rng, int d) {
  DirectionParams p;
  p.attn.query = init_linear(rng, d, d);
  p.attn.key = init_linear(rng, d, d);
  p.attn.value = init_linear(rng, d, d);
  p.attn.out = init_linear(rng, d, d);
  p.ln1 = LayerNorm::identity(d);
  p.ln2 = LayerNorm::identity(d);
  p.ff1 = init_linear(rng, 4 * d, d);
  p.ff2 = init_linear(rng, d, 4 * d);
  return p;
}

Mat ff_forward(const Mat& A, const DirectionParams& p, DirectionCache* cache) {
  Mat z1 = linear_forward(A, p.ff1);
  Mat a1 = gelu(z1);
  Mat out = linear_forward(a1, p.ff2);
  if (cache != nullptr) {
    cache->z1 = std::move(z1);
    cache->a1 = std::move(a1);
  }
  return out;
}

Mat ff_backward(const Mat& A, const DirectionParams& p, const DirectionCache& cache,
                const Mat& dOut, DirectionParams& g) {
  Mat dA1 = linear_backward(cache.a1, dOut, p.ff2, g.ff2);
  Mat dZ1 = gelu_backward(cache.z1, dA1);
  return linear_backward(A, dZ1, p.ff1, g.ff1);
}

// One modality direction: A = LN1(H + CA(H|other)); H+ = LN2(A + FF(A)).
Mat direction_forward(const Mat& Hm, const Mat& Hn, const DirectionParams& p, int heads,
                      bool scale_per_head, DirectionCache* cache) {
  Mat ca = cross_attention(Hm, Hn, p.attn, heads, scale_per_head,
                           cache != nullptr ? &cache->ca : nullptr);
  Mat A = layernorm_forward(Hm + ca, p.ln1, cache != nullptr ? &cache->ln1 : nullptr);
  Mat ff = ff_forward(A, p, cache);
  Mat Hplus = layernorm_forward(A + ff, p.ln2, cache != nullptr ? &cache->ln2 : nullptr);
  if (cache != nullptr) cache->A = std::move(A);
  return Hplus;
}

void direction_backward(const Mat& Hm, const Mat& Hn, const DirectionParams& p, int heads,
                        bool scale_per_head, const DirectionCache& cache, const Mat& dHplus,
                        DirectionParams& g, Mat& dHm, Mat& dHn) {
  Mat dPre2 = layernorm_backward(dHplus, p.ln2, cache.ln2, g.ln2);
  Mat dA = dPre2 + ff_backward(cache.A, p, cache, dPre2, g);
  Mat dPre1 = layernorm_backward(dA, p.ln1, cache.ln1, g.ln1);
  dHm += dPre1;  // residual
  cross_attention_backward(Hm, Hn, p.attn, heads, scale_per_head, cache.ca, dPre1, g.attn, dHm,
                           dHn);
}

}  // namespace

EncoderParams init_encoder(Rng& rng, int layers, int d, int heads, bool scale_per_head) {
  if (layers < 1) throw std::runtime_error("encoder: L must be >= 1");
  if (heads < 1 || d % heads != 0) throw std::runtime_error("encoder: heads must divide d");
  EncoderParams enc;
  enc.heads = heads;
  enc.scale_per_head = scale_per_head;
  enc.blocks.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    BlockParams b;
    b.v = init_direction(rng, d);
    b.s = init_direction(rng, d);
    b.gate.hidden = init_linear(rng, 2 * d, 2 * d);
    b.gate.out_v = init_linear(rng, d, 2 * d);
    b.gate.out_s = init_linear(rng, d, 2 * d);
    enc.blocks.push_back(std::move(b));
  }
  return enc;
}

Heads init_heads(Rng& rng, int d, int d_s, int d_q, int d_v) {
  Heads h;
  h.msm = init_linear(rng, d_s, d);
  h.vcl = init_linear(rng, d_q, d);
  h.vla = init_linear(rng, d_s, d);
  h.mvm = init_linear(rng, d_v, d);
  return h;
}

Mat cross_attention(const Mat& Hm, const Mat& Hn, const AttentionParams& p, int heads,
                    bool scale_per_head, CrossAttnCache* cache) {
  if (Hm.cols() != Hn.cols()) throw std::runtime_error("cross_attention: dim mismatch");
  const Index d = Hm.cols();
  const Index dh = d / heads;
  const Scalar inv_scale =
      1.0 / std::sqrt(static_cast<Scalar>(scale_per_head ? dh : d));

  Mat Q = linear_forward(Hm, p.query);
  Mat K = linear_forward(Hn, p.key);
  Mat V = linear_forward(Hn, p.value);

  Mat O(Hm.rows(), d);
  std::vector<Mat> probs;
  probs.reserve(static_cast<std::size_t>(heads));
  for (int i = 0; i < heads; ++i) {
    const auto Qi = Q.middleCols(i * dh, dh);
    const auto Ki = K.middleCols(i * dh, dh);
    const auto Vi = V.middleCols(i * dh, dh);
    Mat P = softmax_rows((Qi * Ki.transpose() * inv_scale).eval());
    O.middleCols(i * dh, dh).noalias() = P * Vi;
    probs.push_back(std::move(P));
  }
  Mat Y = linear_forward(O, p.out);
  if (cache != nullptr) {
    cache->Q = std::move(Q);
    cache->K = std::move(K);
    cache->V = std::move(V);
    cache->probs = std::move(probs);
    cache->O = std::move(O);
  }
  return Y;
}

void cross_attention_backward(const Mat& Hm, const Mat& Hn, const AttentionParams& p, int heads,
                              bool scale_per_head, const CrossAttnCache& cache, const Mat& dY,
                              AttentionParams& g, Mat& dHm, Mat& dHn) {
  const Index d = Hm.cols();
  const Index dh = d / heads;
  const Scalar inv_scale =
      1.0 / std::sqrt(static_cast<Scalar>(scale_per_head ? dh : d));

  Mat dO = linear_backward(cache.O, dY, p.out, g.out);

  Mat dQ = Mat::Zero(Hm.rows(), d);
  Mat dK = Mat::Zero(Hn.rows(), d);
  Mat dV = Mat::Zero(Hn.rows(), d);
  for (int i = 0; i < heads; ++i) {
    const auto& P = cache.probs[static_cast<std::size_t>(i)];
    const auto dOi = dO.middleCols(i * dh, dh);
    const auto Ki = cache.K.middleCols(i * dh, dh);
    const auto Qi = cache.Q.middleCols(i * dh, dh);
    const auto Vi = cache.V.middleCols(i * dh, dh);

    dV.middleCols(i * dh, dh).noalias() = P.transpose() * dOi;
    Mat dP = dOi * Vi.transpose();
    Mat dScores = softmax_rows_backward(P, dP) * inv_scale;
    dQ.middleCols(i * dh, dh).noalias() = dScores * Ki;
    dK.middleCols(i * dh, dh).noalias() = dScores.transpose() * Qi;
  }
  dHm += linear_backward(Hm, dQ, p.query, g.query);
  dHn += linear_backward(Hn, dK, p.key, g.key);
  dHn += linear_backward(Hn, dV, p.value, g.value);
}

std::pair<Mat, Mat> block_forward(const Mat& Hv, const Mat& Hs, const BlockParams& p, int heads,
                                  bool scale_per_head, GateHook hook, BlockCache* cache) {
  if (Hv.rows() != Hs.rows()) throw std::runtime_error("block_forward: stream length mismatch");
  const Index n = Hv.rows();
  const Index d = Hv.cols();

  Mat Hplus_v = direction_forward(Hv, Hs, p.v, heads, scale_per_head,
                                  cache != nullptr ? &cache->v : nullptr);
  Mat Hplus_s = direction_forward(Hs, Hv, p.s, heads, scale_per_head,
                                  cache != nullptr ? &cache->s : nullptr);

  Mat alpha_v, alpha_s, hid;
  if (hook == GateHook::ForceNegInf) {
    alpha_v = Mat::Zero(n, d);
    alpha_s = Mat::Zero(n, d);
  } else if (hook == GateHook::ForceZero) {
    alpha_v = Mat::Constant(n, d, 0.5);
    alpha_s = Mat::Constant(n, d, 0.5);
  } else {
    Mat gate_in(n, 2 * d);
    gate_in << Hplus_v, Hplus_s;
    hid = tanh_mat(linear_forward(gate_in, p.gate.hidden));
    alpha_v = sigmoid(linear_forward(hid, p.gate.out_v));
    alpha_s = sigmoid(linear_forward(hid, p.gate.out_s));
  }

  Mat out_v = (Hplus_v.array() * (1.0 + alpha_v.array())).matrix();
  Mat out_s = (Hplus_s.array() * (1.0 + alpha_s.array())).matrix();

  if (cache != nullptr) {
    cache->Hv_in = Hv;
    cache->Hs_in = Hs;
    cache->Hplus_v = std::move(Hplus_v);
    cache->Hplus_s = std::move(Hplus_s);
    cache->hid = std::move(hid);
    cache->alpha_v = std::move(alpha_v);
    cache->alpha_s = std::move(alpha_s);
    cache->hook = hook;
  }
  return {std::move(out_v), std::move(out_s)};
}

void block_backward(const BlockParams& p, int heads, bool scale_per_head, const BlockCache& cache,
                    const Mat& dOutV, const Mat& dOutS, BlockParams& g, Mat& dHv, Mat& dHs) {
  Mat dHplus_v = (dOutV.array() * (1.0 + cache.alpha_v.array())).matrix();
  Mat dHplus_s = (dOutS.array() * (1.0 + cache.alpha_s.array())).matrix();

  if (cache.hook == GateHook::None) {
    const Index d = dOutV.cols();
    Mat dAlpha_v = (dOutV.array() * cache.Hplus_v.array()).matrix();
    Mat dAlpha_s = (dOutS.array() * cache.Hplus_s.array()).matrix();
    Mat dPreV =
        (dAlpha_v.array() * cache.alpha_v.array() * (1.0 - cache.alpha_v.array())).matrix();
    Mat dPreS =
        (dAlpha_s.array() * cache.alpha_s.array() * (1.0 - cache.alpha_s.array())).matrix();
    Mat dHid = linear_backward(cache.hid, dPreV, p.gate.out_v, g.gate.out_v);
    dHid += linear_backward(cache.hid, dPreS, p.gate.out_s, g.gate.out_s);
    Mat dPreHid = (dHid.array() * (1.0 - cache.hid.array().square())).matrix();
    Mat gate_in(cache.hid.rows(), 2 * d);
    gate_in << cache.Hplus_v, cache.Hplus_s;
    Mat dGateIn = linear_backward(gate_in, dPreHid, p.gate.hidden, g.gate.hidden);
    dHplus_v += dGateIn.leftCols(d);
    dHplus_s += dGateIn.rightCols(d);
  }

  direction_backward(cache.Hv_in, cache.Hs_in, p.v, heads, scale_per_head, cache.v, dHplus_v,
                     g.v, dHv, dHs);
  direction_backward(cache.Hs_in, cache.Hv_in, p.s, heads, scale_per_head, cache.s, dHplus_s,
                     g.s, dHs, dHv);
}

EncodeResult encode(const MultimodalSequence& seq, const EncoderParams& enc, const Heads& heads,
                    bool with_mvm, EncodeCache* cache) {
  Mat Hv = seq.visual_in;
  Mat Hs = seq.textual_in;
  if (cache != nullptr) {
    cache->blocks.clear();
    cache->blocks.resize(enc.blocks.size());
  }
  for (std::size_t l = 0; l < enc.blocks.size(); ++l) {
    auto [nv, ns] = block_forward(Hv, Hs, enc.blocks[l], enc.heads, enc.scale_per_head,
                                  GateHook::None, cache != nullptr ? &cache->blocks[l] : nullptr);
    Hv = std::move(nv);
    Hs = std::move(ns);
  }

  const int n = seq.num_regions();
  EncodeResult res;
  res.s_hat = linear_forward(Hs.middleRows(1, n), heads.msm);
  res.v_hat = linear_forward(Hv.middleRows(1, n), heads.vcl);
  res.z_vla = linear_forward(Hv.middleRows(1, n), heads.vla);
  if (with_mvm) res.m_hat = linear_forward(Hv.middleRows(1, n), heads.mvm);
  if (cache != nullptr) {
    cache->Hv_final = Hv;
    cache->Hs_final = Hs;
  }
  res.Hv = std::move(Hv);
  res.Hs = std::move(Hs);
  return res;
}

EncodeBackwardResult encode_backward(const MultimodalSequence& seq, const EncoderParams& enc,
                                     const Heads& heads, const EncodeCache& cache,
                                     const Mat& dShat, const Mat& dVhat, const Mat& dZvla,
                                     const Mat& dMhat, const Mat& dHvExtra, const Mat& dHsExtra,
                                     EncoderParams& gEnc, Heads& gHeads) {
  const int n = seq.num_regions();
  Mat dHv = Mat::Zero(n + 2, cache.Hv_final.cols());
  Mat dHs = Mat::Zero(n + 2, cache.Hs_final.cols());
  if (dHvExtra.size() > 0) dHv += dHvExtra;
  if (dHsExtra.size() > 0) dHs += dHsExtra;

  const Mat Hv_regions = cache.Hv_final.middleRows(1, n);
  const Mat Hs_regions = cache.Hs_final.middleRows(1, n);
  if (dShat.size() > 0)
    dHs.middleRows(1, n) += linear_backward(Hs_regions, dShat, heads.msm, gHeads.msm);
  if (dVhat.size() > 0)
    dHv.middleRows(1, n) += linear_backward(Hv_regions, dVhat, heads.vcl, gHeads.vcl);
  if (dZvla.size() > 0)
    dHv.middleRows(1, n) += linear_backward(Hv_regions, dZvla, heads.vla, gHeads.vla);
  if (dMhat.size() > 0)
    dHv.middleRows(1, n) += linear_backward(Hv_regions, dMhat, heads.mvm, gHeads.mvm);

  for (int l = static_cast<int>(enc.blocks.size()) - 1; l >= 0; --l) {
    Mat dInV = Mat::Zero(dHv.rows(), dHv.cols());
    Mat dInS = Mat::Zero(dHs.rows(), dHs.cols());
    block_backward(enc.blocks[static_cast<std::size_t>(l)], enc.heads, enc.scale_per_head,
                   cache.blocks[static_cast<std::size_t>(l)], dHv, dHs,
                   gEnc.blocks[static_cast<std::size_t>(l)], dInV, dInS);
    dHv = std::move(dInV);
    dHs = std::move(dInS);
  }
  return {std::move(dHv), std::move(dHs)};
}

}  // namespace udoc
