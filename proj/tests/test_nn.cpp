#include <gtest/gtest.h>

#include "bestow/encoder.hpp"
#include "bestow/grad_check.hpp"
#include "bestow/nn/layers.hpp"

using namespace bestow;
using nn::AttentionMask;

namespace {

Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 7) {
  Rng r(seed);
  return sum(mul(y, r.randn(y.shape())));
}

EncoderConfig small_encoder(EncoderMode mode, std::size_t window = 3) {
  EncoderConfig c;
  c.mode = mode;
  c.P = 4;
  c.d_in = 6;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_layers = 2;
  c.causal_context_windows = {{70, 13}, {70, 6}, {70, 1}, {70, 0}, {3, 2}};
  c.causal_window = window;
  return c;
}

}  // namespace

TEST(Mask, Constructors) {
  const auto c = AttentionMask::causal(4);
  EXPECT_TRUE(c.is_lower_triangular());
  EXPECT_EQ(c.allowed_count(0), 1u);
  EXPECT_EQ(c.allowed_count(3), 4u);
  const auto w = AttentionMask::window(6, 2, 1);
  EXPECT_FALSE(w.allowed(4, 1));
  EXPECT_TRUE(w.allowed(4, 2));
  EXPECT_TRUE(w.allowed(4, 5));
  EXPECT_FALSE(w.allowed(2, 4));
  const auto p = AttentionMask::prefix({0, 2, 2, 5}, 5);
  EXPECT_TRUE(p.row_fully_masked(0));
  EXPECT_TRUE(p.is_staircase());
  EXPECT_FALSE(AttentionMask::prefix({3, 1}, 5).is_staircase());
}

TEST(Attention, FullyMaskedRowIsZero) {
  Rng r(1);
  const Tensor q = r.randn({3, 8}), k = r.randn({5, 8}), v = r.randn({5, 8});
  const Tensor y = nn::attention(q, k, v, AttentionMask::prefix({0, 2, 5}, 5), 2);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(y.at(0, c), 0.0);
}

TEST(Attention, PrefixMaskEqualsTruncatedKeysExactly) {
  Rng r(2);
  const Tensor q = r.randn({4, 8}), k = r.randn({9, 8}), v = r.randn({9, 8});
  const std::vector<std::size_t> counts{1, 3, 3, 7};
  const Tensor masked = nn::attention(q, k, v, AttentionMask::prefix(counts, 9), 2);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t n = counts[i];
    const Tensor yi = nn::attention(slice_rows(q, i, i + 1), slice_rows(k, 0, n), slice_rows(v, 0, n),
                                    AttentionMask::all(1, n), 2);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(masked.at(i, c), yi.at(0, c));
  }
}

TEST(Attention, MatchesUnfusedSingleHeadReference) {
  Rng r(3);
  const Tensor q = r.randn({3, 4}), k = r.randn({5, 4}), v = r.randn({5, 4});
  const auto mask = AttentionMask::causal(5);  // [5x5]; use top-left 3 rows
  AttentionMask m(3, 5, false);
  for (std::size_t i = 0; i < 3; ++i) m.allow_range(i, 0, i + 2);
  const Tensor y = nn::attention(q, k, v, m, 1);
  // reference: softmax(q k^T / sqrt(d)) v over allowed keys
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> s;
    for (std::size_t j = 0; j < i + 2; ++j) {
      double d = 0;
      for (std::size_t c = 0; c < 4; ++c) d += q.at(i, c) * k.at(j, c);
      s.push_back(d / 2.0);
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t c = 0; c < 4; ++c) {
      double o = 0;
      for (std::size_t j = 0; j < s.size(); ++j) o += s[j] / z * v.at(j, c);
      EXPECT_NEAR(y.at(i, c), o, 1e-12);
    }
  }
  (void)mask;
}

TEST(Attention, GradientsWithMask) {
  Rng r(4);
  const Tensor q = r.randn({3, 8}), k = r.randn({5, 8}), v = r.randn({5, 8});
  const auto m = AttentionMask::prefix({0, 2, 5}, 5);
  auto f_q = [&](const Tensor& x) { return weighted_sum(nn::attention(x, k, v, m, 2)); };
  auto f_k = [&](const Tensor& x) { return weighted_sum(nn::attention(q, x, v, m, 2)); };
  auto f_v = [&](const Tensor& x) { return weighted_sum(nn::attention(q, k, x, m, 2)); };
  EXPECT_LT(grad_check(f_q, q).max_rel_error, 1e-4);
  EXPECT_LT(grad_check(f_k, k).max_rel_error, 1e-4);
  EXPECT_LT(grad_check(f_v, v).max_rel_error, 1e-4);
}

TEST(Attention, ScoreCounterCountsQueryKeyPairs) {
  Rng r(5);
  nn::ScoreCounter::reset();
  nn::attention(r.randn({3, 4}), r.randn({7, 4}), r.randn({7, 4}), AttentionMask::all(3, 7), 2);
  EXPECT_EQ(nn::ScoreCounter::get(), 21u);
}

TEST(Attention, MaskShapeMismatchThrows) {
  Rng r(6);
  EXPECT_THROW(nn::attention(r.randn({3, 4}), r.randn({5, 4}), r.randn({5, 4}), AttentionMask::all(3, 4), 1),
               DimensionError);
}

TEST(Layers, ParameterGradients) {
  ParameterStore ps;
  Rng rng(7);
  const nn::TransformerBlockConfig cfg{8, 2, 16};
  auto block = nn::DecoderBlock::create(ps, "blk", cfg, true, rng);
  auto rnn = nn::RnnLayer::create(ps, "rnn", 8, rng);
  const Tensor x = rng.randn({4, 8});
  const Tensor mem = rng.randn({6, 8});
  const auto self = AttentionMask::causal(4);
  const auto cross = AttentionMask::prefix({0, 2, 4, 6}, 6);
  auto loss = [&] { return weighted_sum(block(rnn(x), self, &mem, &cross)); };
  for (auto& [name, p] : ps) {
    const auto rep = grad_check_inplace(p, loss, 1e-5, 1e-4, 24);
    EXPECT_LT(rep.max_rel_error, 1e-4) << name;
  }
}

TEST(Layers, CrossMaskWithoutMemoryThrows) {
  ParameterStore ps;
  Rng rng(8);
  auto with = nn::DecoderBlock::create(ps, "a", {8, 2, 16}, true, rng);
  auto without = nn::DecoderBlock::create(ps, "b", {8, 2, 16}, false, rng);
  const Tensor x = rng.randn({2, 8}), mem = rng.randn({3, 8});
  const auto m = AttentionMask::all(2, 3);
  EXPECT_THROW(with(x, AttentionMask::causal(2), nullptr, &m), std::invalid_argument);
  EXPECT_THROW(without(x, AttentionMask::causal(2), &mem, &m), std::invalid_argument);
}

TEST(Layers, DecoderBlockIsCausal) {
  ParameterStore ps;
  Rng rng(9);
  auto block = nn::DecoderBlock::create(ps, "blk", {8, 2, 16}, false, rng);
  Tensor x = rng.randn({5, 8});
  const Tensor y0 = block(x, AttentionMask::causal(5));
  x.data_mut()[4 * 8 + 3] += 1.0;  // perturb the last position
  const Tensor y1 = block(x, AttentionMask::causal(5));
  for (std::size_t i = 0; i < 4 * 8; ++i) EXPECT_EQ(y0[i], y1[i]);
  EXPECT_NE(y0[4 * 8 + 3], y1[4 * 8 + 3]);
}

TEST(Layers, InvalidHeadSplitThrows) {
  EXPECT_THROW((nn::TransformerBlockConfig{10, 3, 16}.validate()), std::invalid_argument);
}

TEST(Encoder, DownsampleShapesAndPadding) {
  ParameterStore ps;
  Rng rng(10);
  const auto enc = SpeechEncoder::create(ps, "enc", small_encoder(EncoderMode::bidi), rng);
  EXPECT_EQ(enc.downsample(rng.randn({16, 6})).shape(), (Shape{4, 16}));
  EXPECT_EQ(enc.downsample(rng.randn({17, 6})).shape(), (Shape{5, 16}));
  EXPECT_THROW(enc.downsample(rng.randn({16, 5})), DimensionError);
  EXPECT_EQ(enc.encode({rng.randn({13, 6})}).steps(), 4u);
}

TEST(Encoder, BidiPrefixFinalization) {
  ParameterStore ps;
  Rng rng(11);
  auto cfg = small_encoder(EncoderMode::bidi_recompute);
  const auto enc = SpeechEncoder::create(ps, "enc", cfg, rng);
  const SpeechUtterance u{rng.randn({20 * cfg.P + 3, 6})};
  const auto partial = enc.encode_streaming_bidi(u, false);
  EXPECT_EQ(partial.output.steps(), 20u);  // trailing partial step held back
  EXPECT_EQ(partial.finalized, 7u);
  const auto complete = enc.encode_streaming_bidi(u, true);
  EXPECT_EQ(complete.output.steps(), 21u);
  EXPECT_EQ(complete.finalized, 21u);
}

TEST(Encoder, CausalOutputIgnoresFutureFrames) {
  ParameterStore ps;
  Rng rng(12);
  const auto enc = SpeechEncoder::create(ps, "enc", small_encoder(EncoderMode::causal, 3), rng);
  const Tensor frames = rng.randn({40, 6});
  const auto full = enc.encode({frames});
  const auto prefix = enc.encode({slice_rows(frames, 0, 24)});
  for (std::size_t i = 0; i < prefix.states.numel(); ++i) EXPECT_EQ(prefix.states[i], full.states[i]);
  EXPECT_THROW(enc.encode_offline({frames}), std::logic_error);
}

// Block-wise incremental encoding equals one-shot encoding for random
// partitions, including windows with right context and bounded left context.
TEST(Encoder, IncrementalMatchesOneShot) {
  for (std::size_t window : {0u, 1u, 3u, 4u}) {
    ParameterStore ps;
    Rng rng(100 + window);
    const auto enc = SpeechEncoder::create(ps, "enc", small_encoder(EncoderMode::causal, window), rng);
    Rng part(200 + window);
    for (int trial = 0; trial < 12; ++trial) {
      const std::size_t T = static_cast<std::size_t>(part.uniform_int(1, 61));
      const Tensor frames = rng.randn({T, 6});
      const auto ref = enc.encode({frames});
      auto cache = enc.new_cache();
      std::vector<double> got;
      std::size_t pos = 0;
      while (pos < T) {
        const std::size_t n = std::min<std::size_t>(T - pos, static_cast<std::size_t>(part.uniform_int(1, 11)));
        auto [delta, next] = enc.encode_causal_incremental(slice_rows(frames, pos, pos + n), std::move(cache), false);
        cache = std::move(next);
        if (delta.steps()) got.insert(got.end(), delta.states.data().begin(), delta.states.data().end());
        pos += n;
      }
      auto [tail, done] = enc.encode_causal_incremental(Tensor(), std::move(cache), true);
      if (tail.steps()) got.insert(got.end(), tail.states.data().begin(), tail.states.data().end());
      ASSERT_EQ(got.size(), ref.states.numel()) << "window " << window << " T " << T;
      double worst = 0;
      for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref.states[i]));
      EXPECT_LE(worst, 1e-9);
      EXPECT_THROW(enc.encode_causal_incremental(Tensor(), done, true), std::logic_error);
    }
  }
}

TEST(Encoder, CacheFromDifferentConfigRejected) {
  ParameterStore ps;
  Rng rng(13);
  const auto a = SpeechEncoder::create(ps, "a", small_encoder(EncoderMode::causal, 3), rng);
  const auto b = SpeechEncoder::create(ps, "b", small_encoder(EncoderMode::causal, 0), rng);
  EXPECT_THROW(b.encode_causal_incremental(rng.randn({4, 6}), a.new_cache(), false), std::invalid_argument);
}
