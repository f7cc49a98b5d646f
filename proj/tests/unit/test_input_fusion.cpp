#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/gradcheck.hpp"

using namespace segfuse;
using testing::random_tensor;

TEST_CASE("input fusion output has the image shape") {
  ParamStore p, b;
  InputFusion fuse(ParamBuilder(p, b, 1).child("fusion"), {});
  const Tensor y = fuse(random_tensor({2, 3, 64, 64}, 1), random_tensor({2, 1, 64, 64}, 2), true);
  CHECK(y.shape() == Shape{2, 3, 64, 64});
}

TEST_CASE("zeroed branch convolutions leave the image unchanged") {
  ParamStore p, b;
  InputFusion fuse(ParamBuilder(p, b, 1), {});
  testing::fill(fuse.image_branch.conv.weight, 0.0);
  testing::fill(fuse.dsm_branch.conv.weight, 0.0);
  const Tensor image = random_tensor({1, 3, 8, 8}, 3);
  const Tensor dsm = random_tensor({1, 1, 8, 8}, 4);
  for (bool training : {true, false}) {
    const Tensor fused = fuse.fused_term(image, dsm, training);
    for (double v : fused.values()) CHECK(v == 0.0);
    CHECK(fuse(image, dsm, training).values() == image.values());
  }
}

TEST_CASE("output minus image is the fused term") {
  ParamStore p, b;
  InputFusion fuse(ParamBuilder(p, b, 5), {});
  testing::randomize(p, 6);
  const Tensor image = random_tensor({2, 3, 6, 6}, 7);
  const Tensor dsm = random_tensor({2, 1, 6, 6}, 8);
  const Tensor fused = fuse.fused_term(image, dsm, true);
  const Tensor out = fuse(image, dsm, true);
  CHECK(out.values() == add(fused, image).values());
  CHECK(testing::max_abs_diff(sub(out, image).values(), fused.values()) < 1e-15);
}

TEST_CASE("input fusion gradients") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore p, b;
    InputFusion fuse(ParamBuilder(p, b, seed), {});
    const Tensor image = random_tensor({1, 3, 5, 5}, 10 + seed);
    const Tensor dsm = random_tensor({1, 1, 5, 5}, 20 + seed);
    const auto by_image = grad_check_projected([&](const Tensor& v) { return fuse(v, dsm, true); }, image, 1e-5, seed);
    const auto by_dsm = grad_check_projected([&](const Tensor& v) { return fuse(image, v, true); }, dsm, 1e-5, seed);
    CHECK(by_image.max_rel_error < 1e-6);
    CHECK(by_dsm.max_rel_error < 1e-6);
    CHECK(by_dsm.checked > 0);

    const Tensor d = Tensor::from(dsm.shape(), dsm.values(), true);
    sum(fuse(image, d, true) * random_tensor({1, 3, 5, 5}, 30 + seed)).backward();
    double norm = 0.0;
    for (double g : d.grad()) norm += g * g;
    CHECK(norm > 1e-12);
  }
}

TEST_CASE("input fusion rejects mismatched inputs") {
  ParamStore p, b;
  InputFusion fuse(ParamBuilder(p, b, 1), {});
  CHECK_THROWS_AS(fuse(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({1, 1, 8, 6}), true), std::invalid_argument);
  CHECK_THROWS_AS(fuse(Tensor::zeros({2, 3, 8, 8}), Tensor::zeros({1, 1, 8, 8}), true), std::invalid_argument);
  CHECK_THROWS_AS(fuse(Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({1, 1, 8, 8}), true), std::invalid_argument);
  CHECK_THROWS_AS(fuse(Tensor::zeros({1, 3, 8, 8}), Tensor::zeros({1, 2, 8, 8}), true), std::invalid_argument);
}
