#pragma once

#include <cstdint>
#include <span>

#include "udoc/types.hpp"

namespace udoc {

enum class SpecialSentence { Cls = 0, Sep = 1, Mask = 2 };

// Frozen sentence-embedding stub: each token id owns a fixed pseudo-random
// code vector derived from (table_seed, id); a sentence embeds as the
// L2-normalized mean of its token codes. Order-insensitive by construction,
// and never updated by training.
class TextEncoder {
 public:
  TextEncoder(std::uint64_t table_seed, int vocab_size, int dim);

  Vec encode_sentence(std::span<const int> tokens) const;
  Vec special_embedding(SpecialSentence kind) const;

  int vocab_size() const { return static_cast<int>(codes_.rows()); }
  int dim() const { return static_cast<int>(codes_.cols()); }
  std::uint64_t table_seed() const { return table_seed_; }
  std::uint64_t checksum() const;

 private:
  std::uint64_t table_seed_;
  Mat codes_;     // vocab x dim
  Mat specials_;  // 3 x dim, unit rows
};

}  // namespace udoc
