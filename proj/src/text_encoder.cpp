#include "udoc/text_encoder.hpp"

#include <stdexcept>

#include "udoc/rng.hpp"

namespace udoc {

TextEncoder::TextEncoder(std::uint64_t table_seed, int vocab_size, int dim)
    : table_seed_(table_seed) {
  if (vocab_size < 1 || dim < 1) throw std::runtime_error("text encoder: bad dimensions");
  codes_.resize(vocab_size, dim);
  Rng base(table_seed);
  for (int t = 0; t < vocab_size; ++t) {
    Rng row = base.child(static_cast<std::uint64_t>(t));
    for (int j = 0; j < dim; ++j) codes_(t, j) = row.normal();
  }
  specials_.resize(3, dim);
  for (int s = 0; s < 3; ++s) {
    Rng row = base.child(static_cast<std::uint64_t>(vocab_size + s));
    for (int j = 0; j < dim; ++j) specials_(s, j) = row.normal();
    specials_.row(s).normalize();
  }
}

Vec TextEncoder::encode_sentence(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::runtime_error("text encoder: empty token list");
  Vec mean = Vec::Zero(dim());
  for (int tok : tokens) {
    if (tok < 0 || tok >= vocab_size())
      throw std::runtime_error("text encoder: token id out of range: " + std::to_string(tok));
    mean += codes_.row(tok).transpose();
  }
  mean /= static_cast<Scalar>(tokens.size());
  const Scalar norm = mean.norm();
  if (norm < 1e-12) throw std::runtime_error("text encoder: degenerate zero-mean sentence");
  return mean / norm;
}

Vec TextEncoder::special_embedding(SpecialSentence kind) const {
  return specials_.row(static_cast<int>(kind)).transpose();
}

std::uint64_t TextEncoder::checksum() const {
  std::uint64_t h = fnv1a(codes_.data(), sizeof(Scalar) * static_cast<std::size_t>(codes_.size()));
  return fnv1a(specials_.data(), sizeof(Scalar) * static_cast<std::size_t>(specials_.size()), h);
}

}  // namespace udoc
