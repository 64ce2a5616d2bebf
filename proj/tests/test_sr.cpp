#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "aslsr/sr.hpp"

using namespace aslsr;

namespace {

template <class S>
Volume3<S> random_volume(Shape3 sh, std::uint64_t seed, Eigen::Vector3d sp = {2, 2, 4},
                         Eigen::Vector3d org = {0, 0, 0}) {
  Volume3<S> v(sh, std::move(sp), std::move(org));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (Index i = 0; i < v.size(); ++i) v.data[i] = S(dist(rng));
  return v;
}

// A single-scale pyramid whose generator is untrained: the zero-initialised
// head makes the residual U-Net an exact identity, so generation reduces to
// plain linear upsampling.
TrainedPyramid<float> identity_pyramid(const Volume3<float>& x, const Volume3<float>& a) {
  TrainedPyramid<float> tp;
  tp.pyramid.r = 4.0 / 3.0;
  tp.pyramid.num_scales = 2;
  tp.pyramid.min_extent = 4;
  GeneratorSpec gs;
  gs.base_width = 4;
  gs.levels = 2;
  tp.gen_spec = gs;
  tp.disc_spec.base_width = 4;
  tp.disc_spec.strides = {2, 1};
  tp.generators.push_back(std::make_shared<nn::Generator<float>>(gs, 3));
  tp.scale_shapes.push_back(x.shape);
  tp.base_spacing = x.spacing;
  tp.base_origin = x.origin;
  auto [xn, nx] = normalize(x);
  auto [an, na] = normalize(a);
  (void)xn;
  (void)an;
  tp.norm_x = nx;
  tp.norm_a = na;
  return tp;
}

}  // namespace

TEST_CASE("identity generator reduces generation to linear upsampling") {
  auto x = random_volume<float>({10, 8, 6}, 1);
  auto a = random_volume<float>({20, 16, 6}, 2, {1, 1, 4});
  auto tp = identity_pyramid(x, a);

  SRRequest<float> req{&tp, x, a, std::nullopt};
  auto out = super_resolve(req);

  REQUIRE(out.shape == a.shape);
  auto expected = resample(x, a.shape, ResampleMethod::linear);
  double max_dev = 0;
  for (Index i = 0; i < out.size(); ++i)
    max_dev = std::max(max_dev, std::abs(double(out.data[i]) - double(expected.data[i])));
  CHECK(max_dev < 1e-5);

  SUBCASE("same-grid request returns the input volume") {
    SRRequest<float> same{&tp, x, x, std::nullopt};
    auto y = super_resolve(same);
    REQUIRE(y.shape == x.shape);
    double dev = 0;
    for (Index i = 0; i < y.size(); ++i)
      dev = std::max(dev, std::abs(double(y.data[i]) - double(x.data[i])));
    CHECK(dev < 1e-6);
  }
}

TEST_CASE("match-prior mode adopts the prior's grid geometry") {
  auto x = random_volume<float>({10, 8, 6}, 3);
  auto a = random_volume<float>({20, 16, 12}, 4, {1.0, 1.0, 2.0}, {0.1, -0.2, 0.3});
  x.origin = a.origin;  // pre-registered frames
  auto tp = identity_pyramid(x, a);

  SRRequest<float> req{&tp, x, a, std::nullopt};
  auto out = super_resolve(req);
  CHECK(out.shape == a.shape);
  CHECK(out.spacing == a.spacing);
  CHECK(out.origin == a.origin);
}

TEST_CASE("explicit targets follow the spacing law and keep the input origin") {
  auto x = random_volume<float>({10, 8, 6}, 5, {2, 2, 4}, {1, 2, 3});
  auto a = random_volume<float>({20, 16, 12}, 6, {1, 1, 2}, {1, 2, 3});
  auto tp = identity_pyramid(x, a);

  SRRequest<float> req{&tp, x, a, Shape3{20, 16, 12}};
  auto out = super_resolve(req);
  CHECK(out.shape == Shape3{20, 16, 12});
  CHECK(out.spacing[0] == 2.0 * 10 / 20);
  CHECK(out.spacing[1] == 2.0 * 8 / 16);
  CHECK(out.spacing[2] == 4.0 * 6 / 12);
  CHECK(out.origin == x.origin);

  SUBCASE("prior finer than the target is downsampled on the fly") {
    SRRequest<float> shrink{&tp, x, a, Shape3{12, 10, 6}};
    auto y = super_resolve(shrink);
    CHECK(y.shape == Shape3{12, 10, 6});
    CHECK(y.data.isFinite().all());
  }
  SUBCASE("anisotropic target: one axis upsampled, prior shrunk on another") {
    SRRequest<float> mixed{&tp, x, a, Shape3{30, 8, 6}};
    auto y = super_resolve(mixed);
    CHECK(y.shape == Shape3{30, 8, 6});
    CHECK(y.spacing[0] == 2.0 * 10 / 30);
    CHECK(y.spacing[1] == 2.0);
  }
}

TEST_CASE("generation requests are validated") {
  auto x = random_volume<float>({10, 8, 6}, 7);
  auto a = random_volume<float>({20, 16, 12}, 8, {1, 1, 2});
  auto tp = identity_pyramid(x, a);

  SUBCASE("target smaller than the input is rejected") {
    SRRequest<float> req{&tp, x, a, Shape3{4, 8, 6}};
    CHECK_THROWS_WITH_AS(super_resolve(req), doctest::Contains("smaller than the input"),
                         ConfigError);
  }
  SUBCASE("unregistered prior origin is a geometry error") {
    auto far = a;
    far.origin = x.origin + Eigen::Vector3d{10, 0, 0};
    SRRequest<float> req{&tp, x, far, std::nullopt};
    CHECK_THROWS_WITH_AS(super_resolve(req), doctest::Contains("grid mismatch"), GeometryError);
  }
  SUBCASE("sub-voxel origin offsets are tolerated") {
    auto near = a;
    near.origin = x.origin + Eigen::Vector3d{0.4, 0, 0};  // < 0.5 * min spacing (2mm)
    SRRequest<float> req{&tp, x, near, std::nullopt};
    CHECK_NOTHROW(super_resolve(req));
  }
  SUBCASE("empty pyramid is a config error") {
    TrainedPyramid<float> empty;
    SRRequest<float> req{&empty, x, a, std::nullopt};
    CHECK_THROWS_AS(super_resolve(req), ConfigError);
    SRRequest<float> null_req{nullptr, x, a, std::nullopt};
    CHECK_THROWS_AS(super_resolve(null_req), ConfigError);
  }
  SUBCASE("non-finite input is a numeric error") {
    auto bad = x;
    bad.data[3] = std::numeric_limits<float>::quiet_NaN();
    SRRequest<float> req{&tp, bad, a, std::nullopt};
    CHECK_THROWS_AS(super_resolve(req), NumericError);
  }
}

TEST_CASE("generation is deterministic across calls") {
  auto x = random_volume<float>({10, 8, 6}, 9);
  auto a = random_volume<float>({15, 12, 9}, 10, {4.0 / 3, 4.0 / 3, 8.0 / 3});
  auto tp = identity_pyramid(x, a);
  SRRequest<float> req{&tp, x, a, std::nullopt};
  auto first = super_resolve(req);
  auto second = super_resolve(req);
  REQUIRE(first.shape == second.shape);
  CHECK((first.data == second.data).all());  // bit-exact, not merely close
}

TEST_CASE("soft geometry mismatches are reported as warnings") {
  auto x = random_volume<float>({10, 8, 6}, 11);
  auto tp_probe = identity_pyramid(x, x);

  SUBCASE("field-of-view mismatch") {
    auto a = random_volume<float>({20, 16, 6}, 12, {1.5, 1, 4});  // 30mm vs 20mm on axis 0
    std::ostringstream warn;
    SRRequest<float> req{&tp_probe, x, a, std::nullopt};
    super_resolve(req, &warn);
    CHECK(warn.str().find("prior extent") != std::string::npos);
  }
  SUBCASE("zoom beyond the trained ratio") {
    auto a = random_volume<float>({40, 32, 24}, 13, {0.5, 0.5, 1.0});
    std::ostringstream warn;
    SRRequest<float> req{&tp_probe, x, a, std::nullopt};  // zoom 4 > r^2 ~ 1.78
    super_resolve(req, &warn);
    CHECK(warn.str().find("exceeds the trained refinement ratio") != std::string::npos);
  }
  SUBCASE("well-matched request stays silent") {
    auto a = random_volume<float>({12, 9, 7}, 14, {2.0 * 10 / 12, 2.0 * 8 / 9, 4.0 * 6 / 7});
    std::ostringstream warn;
    SRRequest<float> req{&tp_probe, x, a, std::nullopt};
    super_resolve(req, &warn);
    CHECK(warn.str().empty());
  }
}
