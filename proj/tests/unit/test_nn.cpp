#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "segfuse/gradcheck.hpp"
#include "segfuse/nn.hpp"

using namespace segfuse;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Stores {
  ParamStore params;
  ParamStore buffers;
  ParamBuilder builder(std::uint64_t seed = 1) { return ParamBuilder(params, buffers, seed); }
};

void zero_all(ParamStore& store) {
  for (auto& [_, t] : store) testing::fill(t, 0.0);
}

}  // namespace

TEST_CASE("BlockSpec invariants") {
  BlockSpec s{4, 4, 3, 1, 6.0};
  CHECK(s.expanded_channels() == 24);
  CHECK(s.has_residual());
  s.stride = 2;
  CHECK_FALSE(s.has_residual());
  s = BlockSpec{4, 8, 3, 1, 0.5};
  CHECK(s.expanded_channels() == 2);
  CHECK_FALSE(s.has_residual());
  CHECK_THROWS(BlockSpec({4, 4, 2, 1, 1.0}).validate());
  CHECK_THROWS(BlockSpec({4, 4, 3, 3, 1.0}).validate());
  CHECK_THROWS(BlockSpec({4, 4, 3, 1, 0.1}).validate());
  BlockSpec bad_se{4, 4, 3, 1, 1.0};
  bad_se.se_ratio = 1.5;
  CHECK_THROWS(bad_se.validate());
}

TEST_CASE("double_conv") {
  Stores st;
  DoubleConv dc(st.builder().child("dc"), 4, 8);
  const Tensor y = dc(random_tensor({1, 4, 16, 16}, 1), true);
  CHECK(y.shape() == Shape{1, 8, 16, 16});
  for (double v : y.values()) CHECK(v >= 0.0);
  CHECK_THROWS_AS(dc(Tensor::zeros({1, 3, 16, 16}), true), std::invalid_argument);

  Stores small;
  DoubleConv g(small.builder(3).child("dc"), 2, 3);
  const Tensor x = random_tensor({1, 2, 5, 5}, 2);
  CHECK(grad_check_projected([&](const Tensor& v) { return g(v, true); }, x).max_rel_error < 1e-6);
  CHECK(grad_check_projected([&](const Tensor& v) { return g(v, false); }, x).max_rel_error < 1e-6);
  const Tensor w = small.params.get("dc.conv1.conv.w");
  CHECK(grad_check_projected([&](const Tensor&) { return g(x, true); }, w).max_rel_error < 1e-6);
}

TEST_CASE("mbconv") {
  SUBCASE("stride 2 halves even extents") {
    Stores st;
    MBConv m(st.builder(), {4, 6, 3, 2, 6.0});
    CHECK(m(random_tensor({2, 4, 8, 6}, 3), true).shape() == Shape{2, 6, 4, 3});
  }
  SUBCASE("zeroed branch is a pure residual") {
    Stores st;
    MBConv m(st.builder(), {4, 4, 3, 1, 6.0});
    zero_all(st.params);
    const Tensor x = random_tensor({2, 4, 6, 6}, 4);
    CHECK(m(x, true).values() == x.values());
    CHECK(m(x, false).values() == x.values());
  }
  SUBCASE("channel mismatch") {
    Stores st;
    MBConv m(st.builder(), {4, 4, 3, 1, 6.0});
    CHECK_THROWS_AS(m(Tensor::zeros({1, 3, 6, 6}), true), std::invalid_argument);
  }
  SUBCASE("gradcheck, expansion 6") {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      Stores st;
      MBConv m(st.builder(seed), {4, 4, 3, 1, 6.0});
      const Tensor x = random_tensor({1, 4, 6, 6}, 5 + seed);
      CHECK(grad_check_projected([&](const Tensor& v) { return m(v, true); }, x, 1e-5, seed).max_rel_error < 1e-6);
      const Tensor w = st.params.get("dwconv.conv.w");
      CHECK(grad_check_projected([&](const Tensor&) { return m(x, true); }, w, 1e-5, seed).max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("squeeze_excite") {
  Stores st;
  SqueezeExcite se(st.builder(), 4, 1);
  const Tensor x = random_tensor({2, 4, 3, 3}, 6, -4.0, 4.0);
  const Tensor g = se.gates(x);
  for (double v : g.values()) CHECK((v > 0.0 && v < 1.0));
  const Tensor y = se(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.values()[i]) <= std::abs(x.values()[i]));
  CHECK(grad_check_projected([&](const Tensor& v) { return se(v); }, x).max_rel_error < 1e-6);
  CHECK(grad_check_projected([&](const Tensor&) { return se(x); }, st.params.get("reduce.w")).max_rel_error < 1e-6);

  zero_all(st.params);
  const Tensor zero_gates = se.gates(x);
  for (double v : zero_gates.values()) CHECK(v == 0.5);
  const Tensor half = se(x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(half.values()[i] == x.values()[i] / 2.0);
}

TEST_CASE("linear") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor x = random_tensor({3, 2}, 7);
  CHECK(linear(x, eye, Tensor::zeros({2})).values() == x.values());
  CHECK(linear(Tensor::from({2}, {1, 2}), eye, Tensor::from({2}, {1, 1})).values() == std::vector<double>{2, 3});
  CHECK_THROWS_AS(linear(Tensor::zeros({3, 4}), eye, Tensor::zeros({2})), std::invalid_argument);

  const Tensor batch = random_tensor({2, 3, 5}, 8);
  const Tensor w = random_tensor({5, 4}, 9), b = random_tensor({4}, 10);
  const Tensor y = linear(batch, w, b);
  CHECK(y.shape() == Shape{2, 3, 4});
  const Tensor ref = add(matmul(reshape(batch, {6, 5}), w), reshape(b, {1, 4}));
  CHECK(max_abs_diff(reshape(y, {6, 4}).values(), ref.values()) < 1e-12);
  CHECK(grad_check_projected([&](const Tensor& v) { return linear(v, w, b); }, batch).max_rel_error < 1e-6);
  CHECK(grad_check_projected([&](const Tensor& v) { return linear(batch, v, b); }, w).max_rel_error < 1e-6);
}

TEST_CASE("blocks obey their shape algebra over random shapes") {
  SplitMix64 rng(42);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(5), cout = 1 + rng.below(5);
    const std::size_t h = 2 * (2 + rng.below(3)), w = 2 * (2 + rng.below(3));
    const std::size_t stride = 1 + rng.below(2), kernel = rng.below(2) ? 3 : 5;
    const Tensor x = random_tensor({n, cin, h, w}, 100 + trial);
    Stores st;
    DoubleConv dc(st.builder().child("dc"), cin, cout);
    CHECK(dc(x, true).shape() == Shape{n, cout, h, w});
    MBConv mb(st.builder().child("mb"), {cin, cout, kernel, stride, 1.0 + static_cast<double>(rng.below(4))});
    CHECK(mb(x, true).shape() == Shape{n, cout, h / stride, w / stride});
    SqueezeExcite se(st.builder().child("se"), cin, 1);
    CHECK(se(x).shape() == x.shape());
  }
}
