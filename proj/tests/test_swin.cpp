#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "attnseg/attention.hpp"
#include "attnseg/checkpoint.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/rng.hpp"
#include "attnseg/swin.hpp"
#include "oracles.hpp"

using namespace attnseg;

namespace {

template <class T>
Mat<T> random_tokens(int grid, int channels, Rng& rng) {
  Mat<T> m(Index(grid) * grid, channels);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal());
  return m;
}

ModelInput random_input(int side, Rng& rng) {
  ModelInput input;
  for (auto& ch : input.pixels) {
    ch.resize(side, side);
    for (Index i = 0; i < ch.size(); ++i) ch.data()[i] = static_cast<float>(rng.uniform());
  }
  input.brain_mask = MaskGrid::Ones(side, side);
  input.study_id = "t";
  input.slice_index = 0;
  return input;
}

/// Relative-offset index into the bias table, recomputed independently.
int rel_index_of(int q, int k, int window) {
  const int qi = q / window, qj = q % window, ki = k / window, kj = k % window;
  return (qi - ki + window - 1) * (2 * window - 1) + (qj - kj + window - 1);
}

}  // namespace

TEST_CASE("window partition and reverse tile exactly") {
  Rng rng(1);
  SUBCASE("96 grid with window 12 gives 64 windows of 144 tokens") {
    const auto tokens = random_tokens<float>(96, 3, rng);
    const auto windows = window_partition(tokens, 96, 12);
    CHECK(windows.size() == 64);
    for (const auto& w : windows) CHECK(w.rows() == 144);
    CHECK(window_reverse(windows, 96, 12) == tokens);  // bit-exact
  }
  SUBCASE("single-window partition is a reshape") {
    const auto tokens = random_tokens<float>(4, 5, rng);
    const auto windows = window_partition(tokens, 4, 4);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0] == tokens);
  }
  SUBCASE("indivisible grid is a config error") {
    const auto tokens = random_tokens<float>(6, 2, rng);
    CHECK_THROWS_AS(window_partition(tokens, 6, 4), ConfigError);
  }
}

TEST_CASE("cyclic shift is an exact torus roll with an exact inverse") {
  Rng rng(2);
  const auto tokens = random_tokens<double>(9, 4, rng);
  CHECK(cyclic_shift(tokens, 9, 0) == tokens);
  for (int offset : {1, 2, 4, 8}) {
    const auto shifted = cyclic_shift(tokens, 9, offset);
    CHECK(reverse_shift(shifted, 9, offset) == tokens);
  }
  const Mat<double> constant = Mat<double>::Constant(49, 3, 1.25);
  CHECK(cyclic_shift(constant, 7, 3) == constant);
  // roll semantics: output (i, j) takes input (i+o, j+o)
  const auto s = cyclic_shift(tokens, 9, 2);
  CHECK(s(0, 0) == tokens(2 * 9 + 2, 0));
}

TEST_CASE("single-head attention matches hand softmax evaluation") {
  SUBCASE("zero scores give uniform weights") {
    const int n = 144;
    const Mat<double> z = Mat<double>::Zero(n, 1);
    const auto r = attention_single_head<double>(z, z, Mat<double>::Ones(n, 1), Mat<double>());
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) CHECK(r.weights(i, j) == doctest::Approx(1.0 / n));
  }
  SUBCASE("rows always sum to one") {
    Rng rng(3);
    Mat<double> q(10, 4), k(10, 4), v(10, 4);
    for (auto* m : {&q, &k, &v})
      for (Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
    const auto r = attention_single_head<double>(q, k, v, Mat<double>());
    for (Index i = 0; i < 10; ++i) CHECK(r.weights.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("d=1, n=2 hand example") {
    Mat<double> q(2, 1), k(2, 1), v(2, 1), b(2, 2);
    q << 1.0, 0.0;
    k << 2.0, 1.0;
    v << 3.0, 5.0;
    b << 0.5, 0.0, 0.0, 0.0;
    const auto r = attention_single_head<double>(q, k, v, b);
    // scale = 1/sqrt(1) = 1; scores row 0: (2.5, 1), row 1: (0, 0)
    const double e0 = std::exp(2.5), e1 = std::exp(1.0);
    const double a00 = e0 / (e0 + e1);
    CHECK(r.weights(0, 0) == doctest::Approx(a00).epsilon(1e-12));
    CHECK(r.weights(0, 1) == doctest::Approx(1.0 - a00).epsilon(1e-12));
    CHECK(r.weights(1, 0) == doctest::Approx(0.5));
    CHECK(r.output(0, 0) == doctest::Approx(a00 * 3.0 + (1.0 - a00) * 5.0));
    CHECK(r.output(1, 0) == doctest::Approx(4.0));
  }
}

TEST_CASE("config geometry arithmetic") {
  SUBCASE("published-scale geometry") {
    SwinConfig c;  // defaults: side 384, patch 4, window 12, depths 2,2,18,2
    c.validate();
    CHECK(c.grid_side(0) == 96);
    CHECK(c.grid_side(3) == 12);
    CHECK(c.num_windows(0) == 64);
    CHECK(c.num_windows(1) == 16);
    CHECK(c.num_windows(2) == 4);
    CHECK(c.num_windows(3) == 1);
    CHECK(c.shift_size(3) == 0);  // single window: no shift
    CHECK(c.total_blocks() == 24);
  }
  SUBCASE("desk-scale geometry mirrors the window-count progression") {
    const auto c = SwinConfig::desk_scale();
    c.validate();
    CHECK(c.grid_side(0) == 24);
    CHECK(c.num_windows(0) == 64);
    CHECK(c.num_windows(1) == 16);
    CHECK(c.num_windows(2) == 4);
    CHECK(c.num_windows(3) == 1);
  }
  SUBCASE("tiny config clamps deep windows to the grid") {
    const auto c = SwinConfig::tiny_test();
    c.validate();
    CHECK(c.effective_window(0) == 4);
    CHECK(c.effective_window(2) == 2);
    CHECK(c.effective_window(3) == 1);
    CHECK(c.shift_size(1) == 0);
  }
  SUBCASE("invalid geometries are rejected") {
    SwinConfig c = SwinConfig::desk_scale();
    c.window_size = 4;  // 24/4 tiles but 6/4 does not
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SwinConfig::desk_scale();
    c.depths = {2, 3, 2, 2};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = SwinConfig::desk_scale();
    c.num_heads = {3, 2, 4, 4};  // 16 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("forward pass: trace geometry, normalization, determinism") {
  Rng rng(5);
  const auto cfg = SwinConfig::desk_scale();
  SwinModel<float> model(cfg, 77);
  const auto input = random_input(cfg.input_side, rng);

  SwinCache<float> cache;
  const auto out = model.forward(input, {.attention = true}, &cache);
  CHECK(out.logits.size() == 2);
  CHECK(out.positive_index == 1);
  CHECK(out.y1 == out.logits(1));

  REQUIRE(out.trace.blocks.size() == 8);
  int per_layer[4] = {0, 0, 0, 0};
  const int expected_windows[4] = {64, 16, 4, 1};
  const int expected_grids[4] = {24, 12, 6, 3};
  for (const auto& b : out.trace.blocks) {
    per_layer[b.layer_index - 1]++;
    CHECK(b.num_windows() == expected_windows[b.layer_index - 1]);
    CHECK(b.grid == expected_grids[b.layer_index - 1]);
    for (const auto& a : b.weights) {
      for (Index i = 0; i < a.rows(); ++i)
        CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  for (int l = 0; l < 4; ++l) CHECK(per_layer[l] == 2);

  SUBCASE("identical inputs give identical logits") {
    const auto again = model.forward(input);
    CHECK(again.logits(0) == out.logits(0));
    CHECK(again.logits(1) == out.logits(1));
  }
  SUBCASE("zero input embeds to zero tokens when the projection bias is zero") {
    ModelInput zero = input;
    for (auto& ch : zero.pixels) ch.setZero();
    SwinCache<float> zc;
    model.forward(zero, {}, &zc);
    CHECK(zc.patches.cwiseAbs().maxCoeff() == 0.f);
    CHECK(zc.embed_ln_xhat.cwiseAbs().maxCoeff() == 0.f);
  }
  SUBCASE("patch projection is local") {
    ModelInput other = input;
    other.pixels[1](1, 1) += 0.25f;  // inside patch (0, 0)
    SwinCache<float> oc;
    model.forward(other, {}, &oc);
    for (Index t = 1; t < cache.patches.rows(); ++t)
      CHECK(oc.patches.row(t) == cache.patches.row(t));
    CHECK(!(oc.patches.row(0) == cache.patches.row(0)));
  }
  SUBCASE("merge gathers each 2x2 token cell") {
    const auto& layer1_out = cache.blocks[1].x_out;  // last block of layer 1
    const auto& gathered = cache.merges[0].gathered;
    const int g_in = cfg.grid_side(0), g_out = g_in / 2, c = cfg.layer_dim(0);
    REQUIRE(gathered.rows() == Index(g_out) * g_out);
    Rng pick(9);
    for (int trial = 0; trial < 10; ++trial) {
      const int i = static_cast<int>(pick.uniform_int(0, g_out - 1));
      const int j = static_cast<int>(pick.uniform_int(0, g_out - 1));
      const Index row = Index(i) * g_out + j;
      CHECK(gathered.block(row, 0, 1, c) == layer1_out.row((2 * i) * g_in + 2 * j));
      CHECK(gathered.block(row, c, 1, c) == layer1_out.row((2 * i + 1) * g_in + 2 * j));
      CHECK(gathered.block(row, 2 * c, 1, c) == layer1_out.row((2 * i) * g_in + 2 * j + 1));
      CHECK(gathered.block(row, 3 * c, 1, c) == layer1_out.row((2 * i + 1) * g_in + 2 * j + 1));
    }
  }
  SUBCASE("recorded attention equals the standalone attention computation") {
    const auto& geo_block = out.trace.blocks[0];
    const int dh = cfg.layer_dim(0) / cfg.num_heads[0];
    const int n = geo_block.tokens_per_window;
    const auto& qkv = cache.blocks[0].qkv_wm;
    for (int w : {0, 5}) {
      for (int h = 0; h < cfg.num_heads[0]; ++h) {
        Mat<double> q = qkv.block(Index(w) * n, Index(h) * dh, n, dh).cast<double>();
        Mat<double> k =
            qkv.block(Index(w) * n, Index(cfg.layer_dim(0)) + h * dh, n, dh).cast<double>();
        Mat<double> v =
            qkv.block(Index(w) * n, Index(2) * cfg.layer_dim(0) + h * dh, n, dh).cast<double>();
        Mat<double> bias(n, n);
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            bias(a, b) = static_cast<double>(
                model.params().blocks[0].bias_table(rel_index_of(a, b, geo_block.window), h));
        const auto ref = attention_single_head<double>(q, k, v, bias);
        const auto& recorded = geo_block.weights[static_cast<std::size_t>(w * cfg.num_heads[0] + h)];
        CHECK((ref.weights - recorded).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }
}

TEST_CASE("published-depth geometry keeps 2,2,18,2 blocks and 64,16,4,1 windows") {
  // Same layer plan as the full-size model with a thin embedding so the
  // forward pass stays cheap.
  SwinConfig cfg;
  cfg.embed_dim = 8;
  cfg.num_heads = {4, 8, 16, 32};
  cfg.validate();
  SwinModel<float> model(cfg, 1);
  Rng rng(6);
  const auto input = random_input(cfg.input_side, rng);
  const auto out = model.forward(input, {.attention = true});
  int per_layer[4] = {0, 0, 0, 0};
  for (const auto& b : out.trace.blocks) per_layer[b.layer_index - 1]++;
  CHECK(per_layer[0] == 2);
  CHECK(per_layer[1] == 2);
  CHECK(per_layer[2] == 18);
  CHECK(per_layer[3] == 2);
  const int expected_windows[4] = {64, 16, 4, 1};
  for (const auto& b : out.trace.blocks)
    CHECK(b.num_windows() == expected_windows[b.layer_index - 1]);
  CHECK(out.logits.size() == 2);
}

TEST_CASE("backward_positive_class records attention gradients") {
  Rng rng(8);
  auto cfg = SwinConfig::tiny_test();
  SwinModel<double> model(cfg, 21);
  const auto input = random_input(cfg.input_side, rng);

  SwinCache<double> cache;
  auto out = model.forward(input, {.attention = true, .features = true}, &cache);
  model.backward_positive_class(cache, out);
  for (const auto& b : out.trace.blocks) {
    REQUIRE(b.has_grads);
    REQUIRE(b.grads.size() == b.weights.size());
  }
  CHECK(out.final_feature_grads.rows() == out.final_features.rows());

  SUBCASE("state error without a recorded trace") {
    SwinCache<double> plain_cache;
    auto plain = model.forward(input, {}, &plain_cache);
    CHECK_THROWS_AS(model.backward_positive_class(plain_cache, plain), StateError);
  }

  SUBCASE("a block with zero value projection gets zero attention gradients") {
    SwinModel<double> clipped(cfg, 21);
    const int c = cfg.layer_dim(0);
    // zero the V third of the qkv projection of block 0
    clipped.params().blocks[0].w_qkv.rightCols(c).setZero();
    clipped.params().blocks[0].b_qkv.tail(c).setZero();
    SwinCache<double> cc;
    auto co = clipped.forward(input, {.attention = true}, &cc);
    clipped.backward_positive_class(cc, co);
    double max_grad = 0.0;
    for (const auto& g : co.trace.blocks[0].grads) max_grad = std::max(max_grad, g.cwiseAbs().maxCoeff());
    CHECK(max_grad == 0.0);
  }
}

TEST_CASE("attention logit gradients match central finite differences (sampled)") {
  Rng rng(12);
  auto cfg = SwinConfig::tiny_test();
  SwinModel<double> model(cfg, 33);
  const auto input = random_input(cfg.input_side, rng);

  SwinCache<double> cache;
  auto out = model.forward(input, {.attention = true}, &cache);
  model.backward_positive_class(cache, out);

  Rng pick(99);
  for (int bi : {0, 1, 3, 5, 7}) {
    const auto& block = out.trace.blocks[static_cast<std::size_t>(bi)];
    const int n = block.tokens_per_window;
    const int slots = block.num_windows() * block.heads;
    for (int trial = 0; trial < 6; ++trial) {
      const int slot = static_cast<int>(pick.uniform_int(0, slots - 1));
      const int qi = static_cast<int>(pick.uniform_int(0, n - 1));
      const int ki = static_cast<int>(pick.uniform_int(0, n - 1));
      // analytic d y1 / d s from the recorded pair (A, dA)
      const MatD& a = block.weights[static_cast<std::size_t>(slot)];
      const MatD& da = block.grads[static_cast<std::size_t>(slot)];
      const double rowdot = (a.row(qi).array() * da.row(qi).array()).sum();
      const double analytic = a(qi, ki) * (da(qi, ki) - rowdot);

      const double fd = oracle::central_difference(
          [&](double delta) {
            AttnLogitOffsets<double> offsets;
            offsets.block_index = bi;
            offsets.per_window_head.assign(static_cast<std::size_t>(slots), MatD::Zero(n, n));
            offsets.per_window_head[static_cast<std::size_t>(slot)](qi, ki) = delta;
            return model.forward(input, {}, nullptr, &offsets).y1;
          },
          1e-4);
      CHECK(analytic == doctest::Approx(fd).epsilon(1e-5).scale(1e-8));
    }
  }
}

TEST_CASE("checkpoints round-trip and support head expansion") {
  const auto dir = std::filesystem::temp_directory_path() / "attnseg_test_ckpt";
  std::filesystem::create_directories(dir);
  Rng rng(14);
  auto cfg = SwinConfig::desk_scale();
  cfg.num_classes = 1;
  SwinModel<float> model(cfg, 55);
  const auto input = random_input(cfg.input_side, rng);
  const auto before = model.forward(input);

  const auto path = dir / "base.ckpt";
  save_checkpoint(path, "swin", swin_config_to_json(cfg), model);

  SUBCASE("identical reload") {
    SwinModel<float> fresh(cfg, 999);
    load_checkpoint_into(fresh, path);
    const auto after = fresh.forward(input);
    CHECK(after.logits(0) == before.logits(0));
  }
  SUBCASE("info header") {
    const auto info = peek_checkpoint(path);
    CHECK(info.kind == "swin");
    const auto parsed = swin_config_from_json(info.config_json);
    CHECK(parsed.embed_dim == cfg.embed_dim);
    CHECK(parsed.num_classes == 1);
  }
  SUBCASE("two-logit expansion keeps the backbone and reinitializes the head") {
    SwinConfig two = cfg;
    two.num_classes = 2;
    SwinModel<float> expanded(two, 777);
    load_checkpoint_into(expanded, path, /*allow_head_reinit=*/true);
    CHECK(expanded.params().patch_weight == model.params().patch_weight);
    CHECK(expanded.params().blocks[3].w_qkv == model.params().blocks[3].w_qkv);
    CHECK(expanded.forward(input).logits.size() == 2);
    // strict load must reject the size change
    SwinModel<float> strict(two, 778);
    CHECK_THROWS_AS(load_checkpoint_into(strict, path), DataError);
  }
}

TEST_CASE("dropout and drop-path stay inert at rate zero and deterministic per seed") {
  auto cfg = SwinConfig::tiny_test();
  cfg.dropout = 0.3f;
  cfg.drop_path = 0.2f;
  SwinModel<float> model(cfg, 3);
  Rng data_rng(4);
  const auto input = random_input(cfg.input_side, data_rng);

  Rng t1(42), t2(42), t3(43);
  const auto a = model.forward(input, {}, nullptr, nullptr, &t1);
  const auto b = model.forward(input, {}, nullptr, nullptr, &t2);
  const auto c = model.forward(input, {}, nullptr, nullptr, &t3);
  CHECK(a.logits(0) == b.logits(0));
  CHECK(a.logits(0) != c.logits(0));
  // inference (no rng) ignores the rates entirely
  const auto d = model.forward(input);
  const auto e = model.forward(input);
  CHECK(d.logits(0) == e.logits(0));
}
