#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "aslsr/phantom.hpp"

using namespace aslsr;

TEST_CASE("phantom generation is a pure function of its spec") {
  PhantomSpec spec;
  spec.shape = {32, 24, 24};
  spec.seed = 5;
  auto [asl1, t11] = make_phantom<float>(spec);
  auto [asl2, t12] = make_phantom<float>(spec);
  CHECK((asl1.data == asl2.data).all());
  CHECK((t11.data == t12.data).all());

  spec.seed = 6;
  auto [asl3, t13] = make_phantom<float>(spec);
  CHECK(!(asl3.data == asl1.data).all());
  CHECK(!(t13.data == t11.data).all());
}

TEST_CASE("phantom volumes are registered, bounded and structured") {
  PhantomSpec spec;
  spec.shape = {48, 32, 32};
  spec.seed = 9;
  auto [asl, t1] = make_phantom<float>(spec);

  CHECK(asl.shape == spec.shape);
  CHECK(t1.shape == spec.shape);
  CHECK(asl.spacing == Eigen::Vector3d{1.875, 1.875, 2.5});
  CHECK(asl.spacing == t1.spacing);
  CHECK(asl.origin == t1.origin);

  CHECK(asl.data.minCoeff() >= 0.0f);
  CHECK(asl.data.maxCoeff() <= 1.0f);
  CHECK(t1.data.minCoeff() >= 0.0f);
  CHECK(t1.data.maxCoeff() <= 1.0f);
  // There is actual signal well above the 0.02 / 0.05 backgrounds.
  CHECK(asl.data.maxCoeff() > 0.25f);
  CHECK(t1.data.maxCoeff() > 0.30f);
}

TEST_CASE("zero ellipsoids yields the pure backgrounds") {
  PhantomSpec spec;
  spec.shape = {16, 16, 16};
  spec.n_ellipsoids = 0;
  auto [asl, t1] = make_phantom<float>(spec);
  CHECK((asl.data == 0.02f).all());
  CHECK((t1.data == 0.05f).all());
}

TEST_CASE("shared-structure mode nests ASL signal inside anatomy") {
  PhantomSpec spec;
  spec.shape = {40, 32, 32};
  spec.seed = 3;
  spec.contrast = ContrastMode::shared_structure;
  auto [asl, t1] = make_phantom<float>(spec);

  // Any voxel with clear ASL signal sits inside a painted region, so the
  // anatomy must be above its background there too (alpha >= ~0.01 implies
  // t1 >= 0.05 + alpha * (0.30 - 0.05)).
  Index signal = 0;
  for (Index i = 0; i < asl.size(); ++i) {
    if (asl.data[i] > 0.03f) {
      ++signal;
      CHECK(t1.data[i] > 0.052f);
    }
  }
  CHECK(signal > 100);  // the check above actually ran over a real region
}

TEST_CASE("partial-overlap mode adds anatomy-only structures") {
  PhantomSpec spec;
  spec.shape = {40, 32, 32};
  spec.seed = 4;
  spec.n_ellipsoids = 6;
  spec.overlap_fraction = 0.5;
  spec.contrast = ContrastMode::partial_overlap;
  auto [asl_p, t1_p] = make_phantom<float>(spec);

  PhantomSpec shared = spec;
  shared.contrast = ContrastMode::shared_structure;
  auto [asl_s, t1_s] = make_phantom<float>(shared);

  // Same seed, same geometry: the anatomical rendering is identical, the ASL
  // rendering loses the t1-only structures.
  CHECK((t1_p.data == t1_s.data).all());
  CHECK(!(asl_p.data == asl_s.data).all());

  Index t1_only_voxels = 0;
  for (Index i = 0; i < t1_p.size(); ++i)
    if (t1_p.data[i] > 0.2f && asl_p.data[i] < 0.021f) ++t1_only_voxels;
  CHECK(t1_only_voxels > 50);
}

TEST_CASE("degrade downsamples with the spacing law and optional noise") {
  PhantomSpec spec;
  spec.seed = 8;  // default 64 x 48 x 48 grid
  auto [hr, t1] = make_phantom<float>(spec);
  std::mt19937_64 rng(17);

  SUBCASE("factor (2,2,1) halves two axes") {
    auto lr = degrade(hr, {2, 2, 1}, 0.0, rng);
    CHECK(lr.shape == Shape3{32, 24, 48});
    CHECK(lr.spacing[0] == 2 * 1.875);
    CHECK(lr.spacing[1] == 2 * 1.875);
    CHECK(lr.spacing[2] == 2.5);
    CHECK(lr.origin == hr.origin);
  }
  SUBCASE("sigma 0 is a pure anti-aliased downsample") {
    auto lr = degrade(hr, {2, 2, 1}, 0.0, rng);
    auto direct = downsample_antialiased(hr, {32, 24, 48});
    CHECK((lr.data == direct.data).all());
  }
  SUBCASE("unit factor and sigma 0 return the input exactly") {
    auto same = degrade(hr, {1, 1, 1}, 0.0, rng);
    CHECK(same.shape == hr.shape);
    CHECK((same.data == hr.data).all());
  }
  SUBCASE("fractional factors round the grid") {
    auto lr = degrade(hr, {1.5, 1.5, 1.5}, 0.0, rng);
    CHECK(lr.shape == Shape3{43, 32, 32});
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(degrade(hr, {0.5, 1, 1}, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(degrade(hr, {1, 1, 1}, -0.1, rng), ConfigError);
  }
}

TEST_CASE("degradation noise has the requested scale") {
  auto flat = Volume3<float>::constant({32, 32, 32}, 0.5f);
  std::mt19937_64 rng(23);

  SUBCASE("gaussian noise: mean-preserving, std near sigma") {
    auto noisy = degrade(flat, {1, 1, 1}, 0.1, rng, NoiseModel::gaussian);
    const double mean = noisy.data.cast<double>().mean();
    const double sd = std::sqrt((noisy.data.cast<double>() - mean).square().mean());
    CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
    CHECK(sd == doctest::Approx(0.1).epsilon(0.1));
  }
  SUBCASE("rician noise is non-negative and biased upward at zero signal") {
    auto zeros = Volume3<float>::constant({32, 32, 32}, 0.0f);
    auto noisy = degrade(zeros, {1, 1, 1}, 0.1, rng, NoiseModel::rician);
    CHECK(noisy.data.minCoeff() >= 0.0f);
    // Magnitude of pure complex noise is Rayleigh: mean = sigma * sqrt(pi/2).
    const double expected = 0.1 * std::sqrt(M_PI / 2.0);
    CHECK(noisy.data.cast<double>().mean() == doctest::Approx(expected).epsilon(0.05));
  }
  SUBCASE("rician approaches gaussian at high SNR") {
    auto noisy = degrade(flat, {1, 1, 1}, 0.01, rng, NoiseModel::rician);
    CHECK(noisy.data.cast<double>().mean() == doctest::Approx(0.5).epsilon(0.01));
  }
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  CHECK_NOTHROW(spec.validate());
  spec.shape = {8, 48, 48};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.downsample_factor = {0.5, 2, 1};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.n_ellipsoids = -1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.noise_sigma = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.overlap_fraction = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = {};
  spec.spacing = {0, 1, 1};
  CHECK_THROWS_AS(spec.validate(), ConfigError);

  CHECK(std::string(to_string(ContrastMode::shared_structure)) == "shared_structure");
  CHECK(std::string(to_string(ContrastMode::partial_overlap)) == "partial_overlap");
  CHECK(std::string(to_string(NoiseModel::gaussian)) == "gaussian");
  CHECK(std::string(to_string(NoiseModel::rician)) == "rician");
}
