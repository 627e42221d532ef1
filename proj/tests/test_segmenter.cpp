#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "attnseg/errors.hpp"
#include "attnseg/evalkit.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/segmenter.hpp"
#include "oracles.hpp"

using namespace attnseg;

namespace {

FusedMap map_of(const MatD& values) {
  FusedMap m;
  m.values = values;
  m.method = MapMethod::HgiSam;
  m.normalization_max = 1.0;
  return m;
}

MaskGrid random_mask(int side, double p, Rng& rng) {
  MaskGrid m(side, side);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("brain gating") {
  SUBCASE("all-ones mask is the identity") {
    Rng rng(1);
    MatD v(4, 4);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform();
    v(2, 2) = 1.0;  // already normalized
    const FusedMap gated = gate_by_brain(map_of(v), MaskGrid::Ones(4, 4));
    CHECK((gated.values - v).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("all-zero mask gives a zero map") {
    const FusedMap gated = gate_by_brain(map_of(MatD::Constant(4, 4, 0.8)), MaskGrid::Zero(4, 4));
    CHECK(gated.values.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("an out-of-brain hotspot is removed and the rest renormalized") {
    MatD v = MatD::Zero(6, 6);
    v(0, 0) = 1.0;  // skull-fracture hotspot outside the brain
    v(3, 3) = 0.6;
    v(3, 4) = 0.3;
    MaskGrid brain = MaskGrid::Zero(6, 6);
    for (Index i = 2; i < 5; ++i)
      for (Index j = 2; j < 5; ++j) brain(i, j) = 1;
    const FusedMap gated = gate_by_brain(map_of(v), brain);
    CHECK(gated.values(0, 0) == 0.0);
    CHECK(gated.values(3, 3) == doctest::Approx(1.0));
    CHECK(gated.values(3, 4) == doctest::Approx(0.5));
  }
  SUBCASE("gating never adds support") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      MatD v(8, 8);
      for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.uniform();
      const MaskGrid brain = random_mask(8, 0.6, rng);
      const FusedMap gated = gate_by_brain(map_of(v), brain);
      for (Index i = 0; i < 8; ++i)
        for (Index j = 0; j < 8; ++j) {
          if (gated.values(i, j) > 0.0) {
            CHECK(brain(i, j) == 1);
            CHECK(v(i, j) > 0.0);
          }
        }
    }
  }
  SUBCASE("shape mismatch is an input error") {
    CHECK_THROWS_AS(gate_by_brain(map_of(MatD::Zero(4, 4)), MaskGrid::Zero(5, 4)), InputError);
  }
}

TEST_CASE("binarize thresholds at >=") {
  MatD v(1, 2);
  v << 0.2, 0.7;
  const FusedMap m = map_of(v);
  SUBCASE("interior threshold") {
    const SegMask s = binarize(m, 0.5);
    CHECK(s.mask(0, 0) == 0);
    CHECK(s.mask(0, 1) == 1);
    CHECK(s.foreground_pixels == 1);
    CHECK(s.threshold_used == 0.5);
  }
  SUBCASE("threshold 0 selects everything, including zeros") {
    MatD z(2, 2);
    z << 0.0, 0.4, 0.0, 1.0;
    CHECK(binarize(map_of(z), 0.0).foreground_pixels == 4);
  }
  SUBCASE("threshold 1 keeps only the normalized maximum") {
    MatD z(2, 2);
    z << 0.0, 0.4, 1.0, 1.0;
    CHECK(binarize(map_of(z), 1.0).foreground_pixels == 2);
  }
  SUBCASE("monotone: higher thresholds shrink the mask") {
    Rng rng(3);
    MatD z(8, 8);
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = rng.uniform();
    const FusedMap mm = map_of(z);
    for (int k = 0; k + 1 < 10; ++k) {
      const SegMask lo = binarize(mm, k / 10.0);
      const SegMask hi = binarize(mm, (k + 1) / 10.0);
      for (Index i = 0; i < z.rows(); ++i)
        for (Index j = 0; j < z.cols(); ++j)
          if (hi.mask(i, j)) CHECK(lo.mask(i, j) == 1);
    }
  }
  SUBCASE("out-of-range threshold is rejected") {
    CHECK_THROWS_AS(binarize(m, 1.5), UsageError);
  }
}

TEST_CASE("threshold grid search") {
  const ThresholdGrid grid{0.1, 0.9, 0.1};
  SUBCASE("a map equal to its target picks the smallest threshold at dice 1") {
    MaskGrid gt = MaskGrid::Zero(6, 6);
    gt(2, 2) = gt(2, 3) = gt(3, 2) = 1;
    MatD v = MatD::Zero(6, 6);
    for (Index i = 0; i < 6; ++i)
      for (Index j = 0; j < 6; ++j) v(i, j) = gt(i, j);
    const FusedMap m = map_of(v);
    double best_dice = 0.0;
    const double t = grid_search_threshold({{&m, &gt}}, grid, &best_dice);
    CHECK(t == doctest::Approx(0.1));
    CHECK(best_dice == doctest::Approx(1.0));
  }
  SUBCASE("uniform half-covering map ties toward the smallest threshold") {
    const int side = 8;
    MaskGrid gt = MaskGrid::Zero(side, side);
    for (Index i = 0; i < side / 2; ++i)
      for (Index j = 0; j < side; ++j) gt(i, j) = 1;
    const FusedMap m = map_of(MatD::Constant(side, side, 0.5));
    double best_dice = 0.0;
    const double t = grid_search_threshold({{&m, &gt}}, grid, &best_dice);
    CHECK(t == doctest::Approx(0.1));
    CHECK(best_dice == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("all-zero maps tie at dice zero and return the grid start") {
    MaskGrid gt = MaskGrid::Zero(4, 4);
    gt(1, 1) = 1;
    const FusedMap m = map_of(MatD::Zero(4, 4));
    CHECK(grid_search_threshold({{&m, &gt}}, grid) == doctest::Approx(0.1));
  }
  SUBCASE("agrees exactly with the brute-force scan on random pairs") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<FusedMap> maps;
      std::vector<MaskGrid> gts;
      const int n = 1 + static_cast<int>(rng.uniform_int(0, 3));
      for (int i = 0; i < n; ++i) {
        MatD v(5, 5);
        for (Index k = 0; k < v.size(); ++k)
          v.data()[k] = std::round(rng.uniform() * 4.0) / 4.0;  // coarse values force ties
        maps.push_back(map_of(v));
        gts.push_back(random_mask(5, 0.4, rng));
      }
      std::vector<std::pair<const FusedMap*, const MaskGrid*>> pairs;
      for (int i = 0; i < n; ++i) pairs.emplace_back(&maps[i], &gts[i]);
      const double got = grid_search_threshold(pairs, grid);
      const double want = oracle::brute_grid_search(
          [&](double t) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
              MaskGrid pred(5, 5);
              for (Index a = 0; a < 5; ++a)
                for (Index b = 0; b < 5; ++b) pred(a, b) = maps[i].values(a, b) >= t ? 1 : 0;
              acc += oracle::brute_dice(pred, gts[i]);
            }
            return acc / n;
          },
          grid.start, grid.stop, grid.step);
      CHECK(got == want);
    }
  }
  SUBCASE("bad inputs") {
    MaskGrid gt = MaskGrid::Zero(2, 2);
    const FusedMap m = map_of(MatD::Zero(2, 2));
    CHECK_THROWS_AS(grid_search_threshold({}, grid), UsageError);
    CHECK_THROWS_AS(grid_search_threshold({{&m, &gt}}, ThresholdGrid{0.5, 0.4, 0.1}), UsageError);
  }
}

TEST_CASE("mask detection rule") {
  SegMask m;
  m.mask = MaskGrid::Zero(10, 10);
  m.foreground_pixels = 0;
  CHECK_FALSE(detect_from_mask(m));  // empty mask
  m.foreground_pixels = 9;
  CHECK_FALSE(detect_from_mask(m));
  m.foreground_pixels = 10;
  CHECK(detect_from_mask(m));
  m.foreground_pixels = 3;
  CHECK(detect_from_mask(m, 2));  // configurable floor
}
