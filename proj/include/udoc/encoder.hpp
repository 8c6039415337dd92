#pragma once

#include <vector>

#include "udoc/nn.hpp"
#include "udoc/sequence.hpp"
#include "udoc/types.hpp"

namespace udoc {

struct AttentionParams {
  Linear query, key, value;  // d x d, heads fused along the output dim
  Linear out;                // d x d, the U map combining heads
};

struct DirectionParams {
  AttentionParams attn;
  LayerNorm ln1, ln2;
  Linear ff1;  // 4d <- d
  Linear ff2;  // d <- 4d
};

struct GateParams {
  Linear hidden;  // 2d <- 2d
  Linear out_v;   // d <- 2d
  Linear out_s;   // d <- 2d
};

// One gated cross-attention block: a full attention/LN/FF set per modality
// direction plus one gate network producing both modality weights.
struct BlockParams {
  DirectionParams v;  // visual stream attends over textual
  DirectionParams s;  // textual stream attends over visual
  GateParams gate;
};

struct EncoderParams {
  std::vector<BlockParams> blocks;
  int heads = 1;
  bool scale_per_head = false;  // false: logits / sqrt(d); true: / sqrt(d/h)
};

EncoderParams init_encoder(Rng& rng, int layers, int d, int heads, bool scale_per_head);

// Prediction heads over the final-layer region slots.
struct Heads {
  Linear msm;  // d_s <- d
  Linear vcl;  // d_q <- d
  Linear vla;  // d_s <- d
  Linear mvm;  // d_v <- d
};

Heads init_heads(Rng& rng, int d, int d_s, int d_q, int d_v);

enum class GateHook { None, ForceNegInf, ForceZero };

struct CrossAttnCache {
  Mat Q, K, V;              // n x d
  std::vector<Mat> probs;   // per head, n_m x n_n
  Mat O;                    // n_m x d, concatenated head outputs (pre-U)
};

Mat cross_attention(const Mat& Hm, const Mat& Hn, const AttentionParams& p, int heads,
                    bool scale_per_head, CrossAttnCache* cache);
// Adds dHm / dHn contributions; accumulates parameter grads.
void cross_attention_backward(const Mat& Hm, const Mat& Hn, const AttentionParams& p, int heads,
                              bool scale_per_head, const CrossAttnCache& cache, const Mat& dY,
                              AttentionParams& g, Mat& dHm, Mat& dHn);

struct DirectionCache {
  CrossAttnCache ca;
  LayerNormCache ln1, ln2;
  Mat A;       // post-LN1 (FF input)
  Mat z1, a1;  // FF hidden pre/post activation
};

struct BlockCache {
  Mat Hv_in, Hs_in;
  DirectionCache v, s;
  Mat Hplus_v, Hplus_s;
  Mat hid, alpha_v, alpha_s;  // gate internals
  GateHook hook = GateHook::None;
};

std::pair<Mat, Mat> block_forward(const Mat& Hv, const Mat& Hs, const BlockParams& p, int heads,
                                  bool scale_per_head, GateHook hook, BlockCache* cache);
void block_backward(const BlockParams& p, int heads, bool scale_per_head, const BlockCache& cache,
                    const Mat& dOutV, const Mat& dOutS, BlockParams& g, Mat& dHv, Mat& dHs);

struct EncodeCache {
  std::vector<BlockCache> blocks;
  Mat Hv_final, Hs_final;
};

struct EncodeResult {
  Mat Hv, Hs;     // (N+2) x d contextual streams
  Mat s_hat;      // N x d_s (MSM head)
  Mat v_hat;      // N x d_q (VCL head)
  Mat z_vla;      // N x d_s (VLA head)
  Mat m_hat;      // N x d_v (MVM head; empty unless requested)
};

EncodeResult encode(const MultimodalSequence& seq, const EncoderParams& enc, const Heads& heads,
                    bool with_mvm, EncodeCache* cache);

// Head gradients may be empty matrices when a task is disabled. Returns
// gradients on the sequence input streams.
struct EncodeBackwardResult {
  Mat dVisualIn, dTextualIn;
};

EncodeBackwardResult encode_backward(const MultimodalSequence& seq, const EncoderParams& enc,
                                     const Heads& heads, const EncodeCache& cache,
                                     const Mat& dShat, const Mat& dVhat, const Mat& dZvla,
                                     const Mat& dMhat, const Mat& dHvExtra, const Mat& dHsExtra,
                                     EncoderParams& gEnc, Heads& gHeads);

}  // namespace udoc
