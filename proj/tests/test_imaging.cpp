#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "attnseg/array_io.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/image_ops.hpp"
#include "attnseg/imaging.hpp"
#include "attnseg/rng.hpp"
#include "oracles.hpp"

using namespace attnseg;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("attnseg_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

GridF constant_grid(int side, float v) { return GridF::Constant(side, side, v); }

}  // namespace

TEST_CASE("apply_hu_window maps the window linearly with clamping") {
  GridF hu(1, 3);
  hu << 40.f, 0.f, 200.f;
  const GridF out = apply_hu_window(hu, {40.f, 80.f});
  CHECK(out(0, 0) == doctest::Approx(0.5));
  CHECK(out(0, 1) == doctest::Approx(0.0));
  CHECK(out(0, 2) == doctest::Approx(1.0));
  CHECK_THROWS_AS(apply_hu_window(hu, {40.f, 0.f}), UsageError);
  CHECK_THROWS_AS(apply_hu_window(hu, {40.f, -3.f}), UsageError);
}

TEST_CASE("apply_hu_window is monotone and in range on random grids") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    GridF hu(8, 8);
    for (Index i = 0; i < hu.size(); ++i)
      hu.data()[i] = static_cast<float>(rng.uniform(-1200.0, 3200.0));
    const WindowSpec spec{static_cast<float>(rng.uniform(-100, 700)),
                          static_cast<float>(rng.uniform(1, 2800))};
    const GridF out = apply_hu_window(hu, spec);
    CHECK(out.minCoeff() >= 0.f);
    CHECK(out.maxCoeff() <= 1.f);
    // monotone: pick random pairs
    for (int k = 0; k < 50; ++k) {
      const Index a = rng.uniform_int(0, hu.size() - 1);
      const Index b = rng.uniform_int(0, hu.size() - 1);
      if (hu.data()[a] <= hu.data()[b]) CHECK(out.data()[a] <= out.data()[b]);
    }
  }
}

TEST_CASE("apply_hu_window repeated application is a fixed point only at the lower clamp") {
  const WindowSpec brain{40.f, 80.f};
  GridF hu(1, 4);
  hu << -50.f, 0.f, 40.f, 90.f;
  const GridF once = apply_hu_window(hu, brain);
  const GridF twice = apply_hu_window(once, brain);
  for (Index j = 0; j < hu.cols(); ++j) {
    if (once(0, j) == 0.f)
      CHECK(twice(0, j) == once(0, j));
    else
      CHECK(twice(0, j) != once(0, j));
  }
}

TEST_CASE("stack_windows fixes channel order and applies each spec") {
  CtSlice slice;
  slice.hu = constant_grid(8, 40.f);
  const auto chans = stack_windows(slice, kDefaultWindows);
  CHECK(chans[0](0, 0) == doctest::Approx(0.5));        // brain window centered at 40
  CHECK(chans[1](0, 0) == doctest::Approx(0.3));        // (40 - (-20)) / 200
  CHECK(chans[2](3, 3) == doctest::Approx((40.f - (600.f - 1400.f)) / 2800.f));
  for (const auto& ch : chans) CHECK((ch == ch(0, 0)).all());

  // identical specs give identical channels
  const std::array<WindowSpec, 3> same{{{40, 80}, {40, 80}, {40, 80}}};
  CtSlice ramp;
  ramp.hu.resize(2, 81);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 81; ++j) ramp.hu(i, j) = static_cast<float>(j);
  const auto eq = stack_windows(ramp, same);
  CHECK((eq[0] == eq[1]).all());
  CHECK((eq[1] == eq[2]).all());
  // hu ramp 0..80 under the brain window is a linear 0..1 ramp
  for (Index j = 0; j < 81; ++j) CHECK(eq[0](0, j) == doctest::Approx(j / 80.0));
}

TEST_CASE("resize_normalize contract") {
  SUBCASE("already at size with min 0 max 1 stays unchanged") {
    GridF a = GridF::Zero(96, 96);
    a(4, 7) = 1.f;
    a(50, 50) = 0.25f;
    const auto out = resize_normalize({a, a, a}, 96);
    CHECK((out[0] == a).all());
  }
  SUBCASE("constant input maps to zeros") {
    const auto out = resize_normalize(
        {constant_grid(96, 3.f), constant_grid(96, 3.f), constant_grid(96, 3.f)}, 96);
    for (const auto& ch : out) CHECK((ch == 0.f).all());
  }
  SUBCASE("checkerboard box-averages to one half") {
    GridF cb(768, 768);
    for (Index i = 0; i < 768; ++i)
      for (Index j = 0; j < 768; ++j) cb(i, j) = static_cast<float>((i + j) % 2);
    const GridF down = resize_grid(cb, Index(384), Index(384));
    CHECK((down == 0.5f).all());
  }
  SUBCASE("side must be a multiple of 96") {
    CHECK_THROWS_AS(resize_normalize({constant_grid(8, 0), constant_grid(8, 0), constant_grid(8, 0)}, 100),
                    UsageError);
  }
}

TEST_CASE("compute_brain_mask on synthetic geometries") {
  const int side = 96;
  SUBCASE("all air gives an empty mask") {
    const MaskGrid mask = compute_brain_mask(constant_grid(side, -1000.f));
    CHECK(count_foreground(mask) == 0);
  }
  SUBCASE("soft-tissue disk in air is kept exactly") {
    GridF hu = constant_grid(side, -1000.f);
    const int c = side / 2, r = 20;
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j)
        if ((i - c) * (i - c) + (j - c) * (j - c) <= r * r) hu(i, j) = 30.f;
    const MaskGrid mask = compute_brain_mask(hu);
    MaskGrid band(side, side);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) band(i, j) = hu(i, j) >= 0.f && hu(i, j) <= 100.f;
    const MaskGrid disk = oracle::flood_component(band, c, c);
    CHECK((mask == disk).all());
  }
  SUBCASE("bone ring is excluded, interior kept") {
    GridF hu = constant_grid(side, -1000.f);
    const int c = side / 2;
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        const double d = std::sqrt(double((i - c) * (i - c) + (j - c) * (j - c)));
        if (d <= 15.0) hu(i, j) = 30.f;
        else if (d >= 18.0 && d <= 22.0) hu(i, j) = 1000.f;
      }
    const MaskGrid mask = compute_brain_mask(hu);
    MaskGrid band(side, side);
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) band(i, j) = hu(i, j) >= 0.f && hu(i, j) <= 100.f;
    const MaskGrid disk = oracle::flood_component(band, c, c);
    CHECK((mask == disk).all());
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j)
        if (hu(i, j) > 500.f) CHECK(mask(i, j) == 0);
  }
  SUBCASE("mask never reaches into air on random grids") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
      GridF hu(48, 48);
      for (Index i = 0; i < hu.size(); ++i)
        hu.data()[i] = static_cast<float>(rng.uniform(-1000.0, 1500.0));
      const MaskGrid mask = compute_brain_mask(hu);
      for (Index i = 0; i < hu.rows(); ++i)
        for (Index j = 0; j < hu.cols(); ++j)
          if (mask(i, j)) CHECK(hu(i, j) > -500.f);
    }
  }
}

TEST_CASE("synth_generate determinism and contracts") {
  SynthConfig cfg;
  cfg.n_slices = 40;
  cfg.positive_fraction = 0.3;
  cfg.side = 96;

  const auto a = synth_generate(cfg, 123);
  const auto b = synth_generate(cfg, 123);
  REQUIRE(a.size() == 40);
  long positives = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a[i].hu == b[i].hu).all());
    CHECK(a[i].labels.any == b[i].labels.any);
    REQUIRE(a[i].gt_mask.has_value());
    CHECK((*a[i].gt_mask == *b[i].gt_mask).all());
    positives += a[i].labels.any;
    if (a[i].labels.any) {
      CHECK(count_foreground(*a[i].gt_mask) > 0);
      CHECK(a[i].labels.any_subtype_set());
      // lesions live on soft tissue, never on air or bone rim
      for (Index y = 0; y < a[i].hu.rows(); ++y)
        for (Index x = 0; x < a[i].hu.cols(); ++x)
          if ((*a[i].gt_mask)(y, x)) {
            CHECK(a[i].hu(y, x) > 5.f);
            CHECK(a[i].hu(y, x) < 500.f);
          }
    } else {
      CHECK(count_foreground(*a[i].gt_mask) == 0);
    }
  }
  CHECK(positives == 12);

  SUBCASE("exact positive count and zero-fraction edge") {
    SynthConfig c2 = cfg;
    c2.n_slices = 100;
    c2.positive_fraction = 0.3;
    const auto d = synth_generate(c2, 5);
    long n_pos = 0;
    for (const auto& s : d) n_pos += s.labels.any;
    CHECK(n_pos == 30);

    c2.positive_fraction = 0.0;
    for (const auto& s : synth_generate(c2, 5)) CHECK(count_foreground(*s.gt_mask) == 0);
  }
  SUBCASE("invalid fraction") {
    SynthConfig c3 = cfg;
    c3.positive_fraction = 1.5;
    CHECK_THROWS_AS(synth_generate(c3, 1), UsageError);
  }
}

TEST_CASE("catalog writes and reloads losslessly") {
  const auto root = temp_dir("catalog");
  SynthConfig cfg;
  cfg.n_slices = 12;
  cfg.positive_fraction = 0.5;
  cfg.side = 96;
  const auto slices = synth_generate(cfg, 9);
  write_dataset(slices, root);

  const auto catalog = load_catalog(root);
  REQUIRE(catalog.entries.size() == slices.size());
  CHECK(catalog.missing_files.empty());
  CHECK(catalog.positives() == 6);
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto loaded = load_slice(catalog.entries[i]);
    CHECK(loaded.study_id == slices[i].study_id);
    CHECK(loaded.labels.any == slices[i].labels.any);
    CHECK(loaded.labels.subtypes == slices[i].labels.subtypes);
    CHECK((loaded.hu == slices[i].hu).all());
    REQUIRE(loaded.gt_mask.has_value());
    CHECK((*loaded.gt_mask == *slices[i].gt_mask).all());
  }
}

TEST_CASE("catalog error handling") {
  const auto root = temp_dir("catalog_errors");
  std::filesystem::create_directories(root / "slices");

  SUBCASE("empty label file gives an empty catalog") {
    std::ofstream(root / "labels.csv").close();
    CHECK(load_catalog(root).entries.empty());
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\n";
    CHECK(load_catalog(root).entries.empty());
  }
  SUBCASE("two slices, one positive") {
    write_array(root / "slices" / "p1_0.arr", GridF(GridF::Zero(4, 4)));
    write_array(root / "slices" / "p2_0.arr", GridF(GridF::Zero(4, 4)));
    std::ofstream(root / "labels.csv")
        << "id,any,ivh,iph,sah,edh,sdh\np1_0,1,0,1,0,0,0\np2_0,0,0,0,0,0,0\n";
    CHECK(load_catalog(root).positives() == 1);
  }
  SUBCASE("subtype flag without any is a consistency error naming the id") {
    write_array(root / "slices" / "p3_0.arr", GridF(GridF::Zero(4, 4)));
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\np3_0,0,0,1,0,0,0\n";
    CHECK_THROWS_WITH_AS(load_catalog(root), doctest::Contains("p3_0"), DataError);
  }
  SUBCASE("malformed rows carry line numbers") {
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\npx_0,1,0,0,0,0\n";
    try {
      load_catalog(root);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line_number == 2);
    }
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\npx_0,2,0,0,0,0,0\n";
    CHECK_THROWS_AS(load_catalog(root), ParseError);
  }
  SUBCASE("missing slice files are reported, not dropped silently") {
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\nghost_3,1,0,1,0,0,0\n";
    const auto catalog = load_catalog(root);
    CHECK(catalog.entries.empty());
    REQUIRE(catalog.missing_files.size() == 1);
    CHECK(catalog.missing_files[0] == "ghost_3");
  }
  SUBCASE("mask shape mismatch is a data error") {
    std::filesystem::create_directories(root / "masks");
    write_array(root / "slices" / "pm_0.arr", GridF(GridF::Zero(4, 4)));
    write_array(root / "masks" / "pm_0.arr", MaskGrid(MaskGrid::Zero(3, 4)));
    std::ofstream(root / "labels.csv") << "id,any,ivh,iph,sah,edh,sdh\npm_0,0,0,0,0,0,0\n";
    const auto catalog = load_catalog(root);
    REQUIRE(catalog.entries.size() == 1);
    CHECK_THROWS_AS(load_slice(catalog.entries[0]), DataError);
  }
}

TEST_CASE("array container round trip") {
  const auto root = temp_dir("arr");
  Rng rng(3);
  GridF g(5, 7);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(rng.normal());
  write_array(root / "a.arr", g);
  CHECK((read_array_f32(root / "a.arr") == g).all());
  CHECK(peek_dtype(root / "a.arr") == ArrayDType::Float32);

  MaskGrid m(4, 3);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.bernoulli(0.5) ? 1 : 0;
  write_array(root / "m.arr", m);
  CHECK((read_array_u8(root / "m.arr") == m).all());
  CHECK_THROWS_AS(read_array_f32(root / "m.arr"), IoError);
  CHECK_THROWS_AS(read_array_u8(root / "nope.arr"), IoError);
}

TEST_CASE("slice id parsing") {
  const auto id = SliceId::parse("study_ab_12");
  CHECK(id.study_id == "study_ab");
  CHECK(id.slice_index == 12);
  CHECK(id.str() == "study_ab_12");
  CHECK_THROWS_AS(SliceId::parse("nounderscore"), ParseError);
}
