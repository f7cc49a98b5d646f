#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "segfuse/gradcheck.hpp"
#include "segfuse/transformer.hpp"

using namespace segfuse;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Stores {
  ParamStore params;
  ParamStore buffers;
  ParamBuilder builder(std::uint64_t seed = 1) { return ParamBuilder(params, buffers, seed); }
};

void set_identity(Tensor w) {
  auto d = w.mutable_data();
  const std::size_t r = w.size(0), c = w.size(1);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) d[i * c + j] = i == j ? 1.0 : 0.0;
}

void zero_output_projections(ParamStore& store) {
  for (auto& [path, t] : store) {
    const bool out_proj = path.find(".wo.") != std::string::npos || path.find(".ff.fc2.") != std::string::npos;
    if (out_proj) testing::fill(t, 0.0);
  }
}

std::vector<double> softmax_row(std::vector<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) s += (x = std::exp(x - m));
  for (double& x : v) x /= s;
  return v;
}

// Plain-double layer norm with unit gain and zero shift.
std::vector<double> ln(const std::vector<double>& v) {
  double m = 0.0, var = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) var += (x - m) * (x - m);
  var /= static_cast<double>(v.size());
  std::vector<double> out;
  for (double x : v) out.push_back((x - m) / std::sqrt(var + 1e-5));
  return out;
}

// v [d_in] times W [d_in, d_out] plus b.
std::vector<double> affine(const std::vector<double>& v, const Tensor& w, const Tensor& b = {}) {
  const std::size_t din = w.size(0), dout = w.size(1);
  std::vector<double> out(dout, 0.0);
  for (std::size_t j = 0; j < dout; ++j) {
    for (std::size_t i = 0; i < din; ++i) out[j] += v[i] * w.values()[i * dout + j];
    if (b.defined()) out[j] += b.values()[j];
  }
  return out;
}

}  // namespace

TEST_CASE("tokenizer shapes at the published token geometry") {
  Stores st;
  Tokenizer tok(st.builder(), 32, 6, 32);
  const TokenizerOutput out = tok.forward(random_tensor({1, 32, 65, 65}, 1));
  CHECK(out.tokens.shape() == Shape{1, 6, 32});
  CHECK(out.attention.shape() == Shape{1, 6, 65 * 65});
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0.0;
    for (std::size_t p = 0; p < 65 * 65; ++p) s += out.attention.values()[j * 65 * 65 + p];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(tok.forward(Tensor::zeros({1, 31, 4, 4})), std::invalid_argument);
}

TEST_CASE("uniform attention logits average the feature maps") {
  Stores st;
  Tokenizer tok(st.builder(), 4, 3, 5);
  testing::fill(tok.attention_proj.weight, 0.0);
  const TokenizerOutput out = tok.forward(random_tensor({2, 4, 3, 3}, 2));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 5; ++k) {
        double avg = 0.0;
        for (std::size_t p = 0; p < 9; ++p) avg += out.features.values()[(n * 5 + k) * 9 + p];
        CHECK(out.tokens.at({n, j, k}) == doctest::Approx(avg / 9.0).epsilon(1e-14));
      }
}

TEST_CASE("tokenizer matches the explicit summation on a 2x2 grid") {
  Stores st;
  Tokenizer tok(st.builder(), 2, 2, 3);
  const std::vector<double> w1 = {0.5, -1.0, 2.0, 0.25};
  const std::vector<double> w2 = {1.0, 0.0, -0.5, 0.5, 0.0, 1.5};
  std::copy(w1.begin(), w1.end(), tok.attention_proj.weight.mutable_data().begin());
  std::copy(w2.begin(), w2.end(), tok.feature_proj.weight.mutable_data().begin());
  const std::vector<double> xv = {1.0, 2.0, -1.0, 0.5, 0.0, 1.0, 3.0, -2.0};  // [1,2,2,2]
  const Tensor tokens = tok(Tensor::from({1, 2, 2, 2}, xv));

  auto proj = [&](const std::vector<double>& w, std::size_t rows) {
    std::vector<std::vector<double>> out(rows, std::vector<double>(4));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t p = 0; p < 4; ++p) out[r][p] = w[r * 2] * xv[p] + w[r * 2 + 1] * xv[4 + p];
    for (auto& row : out) row = softmax_row(row);
    return out;
  };
  const auto a = proj(w1, 2), f = proj(w2, 3);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 3; ++k) {
      double t = 0.0;
      for (std::size_t p = 0; p < 4; ++p) t += a[j][p] * f[k][p];
      CHECK(std::abs(tokens.at({0, j, k}) - t) < 1e-12);
    }
}

TEST_CASE("tokens lie in the convex hull of the feature columns") {
  Stores st;
  Tokenizer tok(st.builder(4), 3, 4, 5);
  const TokenizerOutput out = tok.forward(random_tensor({1, 3, 5, 4}, 3, -3.0, 3.0));
  for (std::size_t k = 0; k < 5; ++k) {
    const auto first = out.features.values().begin() + k * 20;
    const double lo = *std::min_element(first, first + 20), hi = *std::max_element(first, first + 20);
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.tokens.at({0, j, k}) >= lo - 1e-15);
      CHECK(out.tokens.at({0, j, k}) <= hi + 1e-15);
    }
  }
  CHECK(grad_check_projected([&](const Tensor& v) { return tok(v); }, random_tensor({1, 3, 3, 3}, 5)).max_rel_error <
        1e-6);
}

TEST_CASE("multi-head self-attention") {
  SUBCASE("single token attends to itself with weight one") {
    Stores st;
    MultiHeadAttention msa(st.builder(), 4, 4, 2);
    const Tensor x = random_tensor({1, 1, 4}, 6);
    const AttentionOutput out = msa.forward(x, x);
    for (double w : out.weights.values()) CHECK(w == 1.0);
    const auto ref = affine(affine(x.values(), msa.wv.weight), msa.wo.weight);
    CHECK(max_abs_diff(out.output.values(), ref) < 1e-12);
  }
  SUBCASE("zero value projections give zero output") {
    Stores st;
    MultiHeadAttention msa(st.builder(), 4, 4, 2);
    testing::fill(msa.wv.weight, 0.0);
    const Tensor x = random_tensor({2, 3, 4}, 7);
    const Tensor y = msa(x, x);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("identity projections match the hand-evaluated formula") {
    Stores st;
    MultiHeadAttention msa(st.builder(), 2, 2, 1);
    for (Tensor w : {msa.wq.weight, msa.wk.weight, msa.wv.weight, msa.wo.weight}) set_identity(w);
    const std::vector<double> xv = {1.0, 0.5, -0.25, 2.0};
    const Tensor y = msa(Tensor::from({1, 2, 2}, xv), Tensor::from({1, 2, 2}, xv));
    for (std::size_t i = 0; i < 2; ++i) {
      std::vector<double> scores(2);
      for (std::size_t j = 0; j < 2; ++j)
        scores[j] = (xv[i * 2] * xv[j * 2] + xv[i * 2 + 1] * xv[j * 2 + 1]) / std::sqrt(2.0);
      const auto w = softmax_row(scores);
      for (std::size_t c = 0; c < 2; ++c) {
        const double want = w[0] * xv[c] + w[1] * xv[2 + c];
        CHECK(std::abs(y.at({0, i, c}) - want) < 1e-12);
      }
    }
  }
  SUBCASE("attention rows sum to one") {
    Stores st;
    MultiHeadAttention msa(st.builder(2), 8, 8, 4);
    const Tensor x = random_tensor({2, 5, 8}, 8, -2.0, 2.0);
    const Tensor w = msa.forward(x, x).weights;
    CHECK(w.shape() == Shape{2, 4, 5, 5});
    for (std::size_t r = 0; r < 2 * 4 * 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += w.values()[r * 5 + c];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("permuting tokens permutes the output") {
    Stores st;
    MultiHeadAttention msa(st.builder(3), 8, 8, 4);
    EncoderLayer layer(st.builder(4).child("enc"), 8, {1, 4, 2});
    const Tensor x = random_tensor({1, 4, 8}, 9);
    const std::vector<std::size_t> perm = {2, 0, 3, 1};
    std::vector<double> pv;
    for (std::size_t i : perm) pv.insert(pv.end(), x.values().begin() + i * 8, x.values().begin() + (i + 1) * 8);
    const Tensor xp = Tensor::from({1, 4, 8}, pv);
    const Tensor y = msa(x, x), yp = msa(xp, xp);
    const Tensor z = layer(x), zp = layer(xp);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 8; ++c) {
        CHECK(std::abs(yp.at({0, r, c}) - y.at({0, perm[r], c})) < 1e-12);
        CHECK(std::abs(zp.at({0, r, c}) - z.at({0, perm[r], c})) < 1e-12);
      }
  }
  SUBCASE("width not divisible by heads") {
    Stores st;
    CHECK_THROWS_AS(MultiHeadAttention(st.builder(), 6, 6, 4), std::invalid_argument);
  }
  SUBCASE("gradcheck of the attention block on a 4x8 input") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Stores st;
      MultiHeadAttention msa(st.builder(seed), 8, 8, 2);
      const Tensor x = random_tensor({1, 4, 8}, 10 + seed);
      CHECK(grad_check_projected([&](const Tensor& v) { return msa(v, v); }, x, 1e-5, seed).max_rel_error < 1e-6);
      CHECK(grad_check_projected([&](const Tensor&) { return msa(x, x); }, msa.wq.weight, 1e-5, seed).max_rel_error <
            1e-6);
    }
  }
}

TEST_CASE("transformer encoder") {
  SUBCASE("six layers preserve the token shape") {
    Stores st;
    TransformerEncoder enc(st.builder(), 32, {6, 4, 2});
    CHECK(enc.layers.size() == 6);
    CHECK(enc(random_tensor({1, 6, 32}, 11)).shape() == Shape{1, 6, 32});
    CHECK_THROWS_AS(enc(Tensor::zeros({1, 6, 16})), std::invalid_argument);
  }
  SUBCASE("zeroed output projections make it the identity") {
    Stores st;
    TransformerEncoder enc(st.builder(), 8, {3, 2, 2});
    testing::randomize(st.params, 12);
    zero_output_projections(st.params);
    const Tensor x = random_tensor({2, 6, 8}, 13);
    CHECK(enc(x).values() == x.values());
  }
  SUBCASE("gradcheck through one layer") {
    Stores st;
    EncoderLayer layer(st.builder(5), 8, {1, 2, 2});
    testing::randomize(st.params, 14);
    const Tensor x = random_tensor({1, 3, 8}, 15);
    CHECK(grad_check_projected([&](const Tensor& v) { return layer(v); }, x).max_rel_error < 1e-6);
    CHECK(grad_check_projected([&](const Tensor&) { return layer(x); }, st.params.get("ln1.gamma")).max_rel_error <
          1e-6);
  }
}

TEST_CASE("transformer decoder") {
  SUBCASE("shapes") {
    Stores st;
    TransformerDecoder dec(st.builder(), 32, 32, {6, 4, 2});
    CHECK(dec(random_tensor({1, 32, 8, 8}, 16), random_tensor({1, 6, 32}, 17)).shape() == Shape{1, 32, 8, 8});
    CHECK_THROWS_AS(dec(random_tensor({1, 32, 8, 8}, 16), random_tensor({1, 6, 16}, 17)), std::invalid_argument);
  }
  SUBCASE("zeroed output projections return the features") {
    Stores st;
    TransformerDecoder dec(st.builder(), 8, 4, {2, 2, 2});
    testing::randomize(st.params, 18);
    zero_output_projections(st.params);
    const Tensor f = random_tensor({2, 8, 3, 3}, 19);
    CHECK(dec(f, random_tensor({2, 5, 4}, 20)).values() == f.values());
  }
  SUBCASE("single pixel and single token match a hand evaluation") {
    Stores st;
    TransformerDecoder dec(st.builder(6), 4, 3, {1, 2, 2});
    testing::randomize(st.params, 21);
    const DecoderLayer& L = dec.layers[0];
    const Tensor f = random_tensor({1, 4, 1, 1}, 22);
    const Tensor t = random_tensor({1, 1, 3}, 23);
    const AttentionOutput att = L.attn.forward(L.norm1(pixels_to_sequence(f)), t);
    for (double w : att.weights.values()) CHECK(w == 1.0);

    auto with_affine = [](std::vector<double> v, const LayerNorm& n) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * n.gamma.values()[i] + n.beta.values()[i];
      return v;
    };
    std::vector<double> h = f.values();
    const auto attn = affine(affine(t.values(), L.attn.wv.weight), L.attn.wo.weight);
    for (std::size_t i = 0; i < 4; ++i) h[i] += attn[i];
    auto hidden = affine(with_affine(ln(h), L.norm2), L.ff.in.weight, L.ff.in.bias);
    for (double& v : hidden) v = v / (1.0 + std::exp(-v));
    const auto ff = affine(hidden, L.ff.out.weight, L.ff.out.bias);
    const Tensor y = dec(f, t);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y.values()[i] - (h[i] + ff[i])) < 1e-12);
  }
  SUBCASE("cross-attention rows sum to one") {
    Stores st;
    MultiHeadAttention mca(st.builder(7), 8, 4, 2);
    const AttentionOutput out = mca.forward(random_tensor({1, 9, 8}, 24), random_tensor({1, 3, 4}, 25));
    CHECK(out.weights.shape() == Shape{1, 2, 9, 3});
    for (std::size_t r = 0; r < 18; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 3; ++c) s += out.weights.values()[r * 3 + c];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("gradcheck") {
    Stores st;
    TransformerDecoder dec(st.builder(8), 4, 3, {1, 2, 2});
    testing::randomize(st.params, 26);
    const Tensor f = random_tensor({1, 4, 2, 2}, 27), t = random_tensor({1, 2, 3}, 28);
    CHECK(grad_check_projected([&](const Tensor& v) { return dec(v, t); }, f).max_rel_error < 1e-6);
    CHECK(grad_check_projected([&](const Tensor& v) { return dec(f, v); }, t).max_rel_error < 1e-6);
  }
}

TEST_CASE("transformer path") {
  TransformerPathConfig cfg;
  cfg.backbone.stem_width = 8;
  cfg.backbone.stages = {{8, 1, 3, 2, 1.0}, {16, 1, 3, 2, 4.0}, {32, 1, 5, 2, 4.0}};
  cfg.num_tokens = 6;
  cfg.token_dim = 32;
  cfg.attention = {1, 4, 2};
  SUBCASE("shape and determinism") {
    Stores a, b;
    TransformerPath pa(a.builder(9), 3, cfg, {});
    TransformerPath pb(b.builder(9), 3, cfg, {});
    CHECK(pa.backbone.total_stride() == 8);
    const Tensor x = random_tensor({1, 3, 64, 64}, 29);
    const Tensor ya = pa(x, false), yb = pb(x, false);
    CHECK(ya.shape() == Shape{1, 32, 64, 64});
    CHECK(ya.values() == yb.values());
    CHECK_THROWS_AS(pa(Tensor::zeros({1, 3, 60, 64}), false), std::invalid_argument);
  }
  SUBCASE("gradcheck at toy width") {
    TransformerPathConfig toy;
    toy.backbone.stem_width = 4;
    toy.backbone.stages = {{4, 1, 3, 2, 1.0}, {8, 1, 3, 2, 2.0}};
    toy.num_tokens = 2;
    toy.token_dim = 4;
    toy.attention = {1, 2, 2};
    Stores st;
    TransformerPath path(st.builder(10), 3, toy, {});
    const Tensor x = random_tensor({1, 3, 8, 8}, 30);
    CHECK(grad_check_projected([&](const Tensor& v) { return path(v, true); }, x).max_rel_error < 1e-5);
  }
}
