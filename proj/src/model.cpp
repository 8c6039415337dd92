#include "udoc/model.hpp"

namespace udoc {

ModelParams init_model(const RunConfig& cfg, std::uint64_t seed) {
  Rng root(seed);
  ModelParams m;
  Rng conv_rng = root.child(1);
  m.conv = init_backbone(conv_rng);
  Rng quant_rng = root.child(2);
  m.quant = init_codebooks(quant_rng, cfg.quant, cfg.model.roi_feature_dim(), cfg.model.dim);
  Rng embed_rng = root.child(3);
  m.embed = init_embed(embed_rng, cfg.model.dim, cfg.model.roi_feature_dim(),
                       cfg.model.sentence_dim);
  Rng enc_rng = root.child(4);
  m.encoder = init_encoder(enc_rng, cfg.model.layers, cfg.model.dim, cfg.model.heads,
                           cfg.model.attn_scale_per_head);
  Rng head_rng = root.child(5);
  m.heads = init_heads(head_rng, cfg.model.dim, cfg.model.sentence_dim, cfg.model.dim,
                       cfg.model.roi_feature_dim());
  return m;
}

ModelParams zero_like(const ModelParams& params) {
  ModelParams z = params;
  set_zero(z);
  return z;
}

void set_zero(ModelParams& params) {
  params.visit([](const std::string&, auto& t) { t.setZero(); });
}

std::vector<std::string> tensor_names(const ModelParams& params) {
  std::vector<std::string> names;
  params.visit([&names](const std::string& name, const auto&) { names.push_back(name); });
  return names;
}

Index total_parameters(const ModelParams& params) {
  Index n = 0;
  params.visit([&n](const std::string&, const auto& t) { n += t.size(); });
  return n;
}

std::uint64_t model_checksum(const ModelParams& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  params.visit([&h](const std::string&, const auto& t) {
    h = fnv1a(t.data(), sizeof(Scalar) * static_cast<std::size_t>(t.size()), h);
  });
  return h;
}

std::vector<TensorRef> tensor_refs(ModelParams& params) {
  std::vector<TensorRef> refs;
  params.visit([&refs](const std::string& name, auto& t) {
    refs.push_back(TensorRef{name, t.data(), t.rows(), t.cols()});
  });
  return refs;
}

Scalar grad_global_norm(const ModelParams& grads) {
  Scalar sq = 0.0;
  grads.visit([&sq](const std::string&, const auto& t) { sq += t.squaredNorm(); });
  return std::sqrt(sq);
}

void scale_grads(ModelParams& grads, Scalar factor) {
  grads.visit([factor](const std::string&, auto& t) { t *= factor; });
}

void accumulate(ModelParams& dst, const ModelParams& src) {
  auto refs_dst = tensor_refs(dst);
  auto refs_src = tensor_refs(const_cast<ModelParams&>(src));
  for (std::size_t i = 0; i < refs_dst.size(); ++i) {
    Eigen::Map<Vec> d(refs_dst[i].data, refs_dst[i].size());
    Eigen::Map<const Vec> s(refs_src[i].data, refs_src[i].size());
    d += s;
  }
}

}  // namespace udoc
