#include <doctest.h>

#include <vector>

#include "udoc/rng.hpp"
#include "udoc/text_encoder.hpp"

using namespace udoc;

TEST_CASE("single-token sentence embeds as the token's normalized code") {
  const TextEncoder enc(7771, 64, 32);
  const std::vector<int> one{13};
  const Vec e = enc.encode_sentence(one);
  const std::vector<int> twice{13, 13};
  CHECK((enc.encode_sentence(twice) - e).norm() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e.norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("bag-of-tokens symmetry") {
  const TextEncoder enc(7771, 64, 32);
  const std::vector<int> ab{3, 44};
  const std::vector<int> ba{44, 3};
  CHECK((enc.encode_sentence(ab) - enc.encode_sentence(ba)).norm() ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("unit norm over a thousand random sentences") {
  const TextEncoder enc(123, 64, 48);
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const int len = 1 + rng.uniform_int(12);
    std::vector<int> tokens;
    for (int i = 0; i < len; ++i) tokens.push_back(rng.uniform_int(64));
    CHECK(enc.encode_sentence(tokens).norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("errors: empty sentence and out-of-vocabulary tokens") {
  const TextEncoder enc(1, 16, 8);
  CHECK_THROWS_AS(enc.encode_sentence(std::vector<int>{}), std::runtime_error);
  CHECK_THROWS_AS(enc.encode_sentence(std::vector<int>{16}), std::runtime_error);
  CHECK_THROWS_AS(enc.encode_sentence(std::vector<int>{-1}), std::runtime_error);
}

TEST_CASE("special embeddings are fixed, distinct unit vectors") {
  const TextEncoder enc(7771, 64, 32);
  const Vec cls1 = enc.special_embedding(SpecialSentence::Cls);
  const Vec cls2 = enc.special_embedding(SpecialSentence::Cls);
  CHECK((cls1 - cls2).norm() == 0.0);

  const Vec sep = enc.special_embedding(SpecialSentence::Sep);
  const Vec mask = enc.special_embedding(SpecialSentence::Mask);
  CHECK(mask.norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cls1.dot(sep) < 0.99);
  CHECK(cls1.dot(mask) < 0.99);
  CHECK(sep.dot(mask) < 0.99);
}

TEST_CASE("code table is reproducible from its seed and checksummed") {
  const TextEncoder a(42, 32, 16);
  const TextEncoder b(42, 32, 16);
  CHECK(a.checksum() == b.checksum());
  const TextEncoder c(43, 32, 16);
  CHECK(a.checksum() != c.checksum());
}
