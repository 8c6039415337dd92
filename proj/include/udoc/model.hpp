#pragma once

#include <string>
#include <vector>

#include "udoc/config.hpp"
#include "udoc/encoder.hpp"
#include "udoc/quantizer.hpp"
#include "udoc/sequence.hpp"
#include "udoc/visual_encoder.hpp"

namespace udoc {

// All trainable tensors. Gradients and Adam moments reuse the same struct so
// visitation yields perfectly aligned (name, tensor) streams.
struct ModelParams {
  ConvStackParams conv;
  Codebooks quant;
  EmbedParams embed;
  EncoderParams encoder;
  Heads heads;

  template <class Self, class F>
  static void visit_impl(Self& m, F&& f) {
    for (std::size_t i = 0; i < m.conv.stages.size(); ++i) {
      auto& s = m.conv.stages[i];
      const std::string base = "conv." + std::to_string(i);
      f(base + ".weight", s.W);
      f(base + ".bias", s.b);
    }

    f("quant.entries", m.quant.entries);
    f("quant.logit.weight", m.quant.logit.W);
    f("quant.logit.bias", m.quant.logit.b);
    f("quant.out.weight", m.quant.out.W);
    f("quant.out.bias", m.quant.out.b);

    f("embed.visual.weight", m.embed.visual.W);
    f("embed.visual.bias", m.embed.visual.b);
    f("embed.textual.weight", m.embed.textual.W);
    f("embed.textual.bias", m.embed.textual.b);
    f("embed.position.weight", m.embed.position.W);
    f("embed.position.bias", m.embed.position.b);
    f("embed.segment.visual", m.embed.seg_visual);
    f("embed.segment.textual", m.embed.seg_textual);

    for (std::size_t l = 0; l < m.encoder.blocks.size(); ++l) {
      auto& blk = m.encoder.blocks[l];
      const std::string base = "block" + std::to_string(l);
      auto dir = [&f](const std::string& prefix, auto& d) {
        f(prefix + ".attn.query.weight", d.attn.query.W);
        f(prefix + ".attn.query.bias", d.attn.query.b);
        f(prefix + ".attn.key.weight", d.attn.key.W);
        f(prefix + ".attn.key.bias", d.attn.key.b);
        f(prefix + ".attn.value.weight", d.attn.value.W);
        f(prefix + ".attn.value.bias", d.attn.value.b);
        f(prefix + ".attn.out.weight", d.attn.out.W);
        f(prefix + ".attn.out.bias", d.attn.out.b);
        f(prefix + ".ln1.gain", d.ln1.gain);
        f(prefix + ".ln1.bias", d.ln1.bias);
        f(prefix + ".ff1.weight", d.ff1.W);
        f(prefix + ".ff1.bias", d.ff1.b);
        f(prefix + ".ff2.weight", d.ff2.W);
        f(prefix + ".ff2.bias", d.ff2.b);
        f(prefix + ".ln2.gain", d.ln2.gain);
        f(prefix + ".ln2.bias", d.ln2.bias);
      };
      dir(base + ".v", blk.v);
      dir(base + ".s", blk.s);
      f(base + ".gate.hidden.weight", blk.gate.hidden.W);
      f(base + ".gate.hidden.bias", blk.gate.hidden.b);
      f(base + ".gate.v.weight", blk.gate.out_v.W);
      f(base + ".gate.v.bias", blk.gate.out_v.b);
      f(base + ".gate.s.weight", blk.gate.out_s.W);
      f(base + ".gate.s.bias", blk.gate.out_s.b);
    }

    f("head.msm.weight", m.heads.msm.W);
    f("head.msm.bias", m.heads.msm.b);
    f("head.vcl.weight", m.heads.vcl.W);
    f("head.vcl.bias", m.heads.vcl.b);
    f("head.vla.weight", m.heads.vla.W);
    f("head.vla.bias", m.heads.vla.b);
    f("head.mvm.weight", m.heads.mvm.W);
    f("head.mvm.bias", m.heads.mvm.b);
  }

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
};

ModelParams init_model(const RunConfig& cfg, std::uint64_t seed);
ModelParams zero_like(const ModelParams& params);
void set_zero(ModelParams& params);

std::vector<std::string> tensor_names(const ModelParams& params);
Index total_parameters(const ModelParams& params);
std::uint64_t model_checksum(const ModelParams& params);

// Flat views used by the optimizer, gradcheck, and checkpoints. Order is the
// visitation order, which is stable.
struct TensorRef {
  std::string name;
  Scalar* data = nullptr;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

std::vector<TensorRef> tensor_refs(ModelParams& params);

Scalar grad_global_norm(const ModelParams& grads);
void scale_grads(ModelParams& grads, Scalar factor);
// Sums `src` into `dst` (same structure), in a fixed traversal order.
void accumulate(ModelParams& dst, const ModelParams& src);

}  // namespace udoc
