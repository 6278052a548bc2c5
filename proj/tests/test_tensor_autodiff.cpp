#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cosmae/autodiff.hpp"
#include "cosmae/nn.hpp"
#include "cosmae/optim.hpp"
#include "cosmae/rng.hpp"
#include "cosmae/tensor.hpp"
#include "support/testutil.hpp"

using namespace cosmae;
using testutil::finite_diff_check;
using testutil::finite_diff_check_tensor;
using testutil::random_tensor;

TEST_CASE("tensor basics and shape checks") {
  Tensor<float> t(Shape{2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5f);
  CHECK_THROWS_AS(Tensor<float>(Shape{0, 3}), UsageError);
  CHECK_THROWS_AS((Tensor<float>(Shape{2, 2}, std::vector<float>{1.f, 2.f})), UsageError);
  CHECK_THROWS_AS(matmul(Tensor<float>(Shape{2, 3}), Tensor<float>(Shape{2, 3})), UsageError);

  Tensor<float> nan_t(Shape{2});
  nan_t.data[1] = std::nanf("");
  CHECK_FALSE(nan_t.all_finite());
  CHECK(t.all_finite());
}

TEST_CASE("matmul against hand computation") {
  Tensor<double> a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor<double> b(Shape{3, 2}, std::vector<double>{7, 8, 9, 10, 11, 12});
  Tensor<double> c = matmul(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(58));
  CHECK(c.at(0, 1) == doctest::Approx(64));
  CHECK(c.at(1, 0) == doctest::Approx(139));
  CHECK(c.at(1, 1) == doctest::Approx(154));
}

TEST_CASE("rng determinism and state round-trip") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());

  Rng c(7);
  for (int i = 0; i < 13; ++i) c.uniform();
  const std::string state = c.save_state();
  std::vector<double> expect;
  for (int i = 0; i < 20; ++i) expect.push_back(c.uniform());
  Rng d(0);
  d.load_state(state);
  for (int i = 0; i < 20; ++i) CHECK(d.uniform() == expect[static_cast<std::size_t>(i)]);
}

// Every differentiable op passes a finite-difference check on randomized
// small shapes.
TEST_CASE("per-op gradient checks (float64)") {
  Rng rng(1);

  auto check_unary = [&](const char* name, auto&& op, Shape shape, double scale = 1.0) {
    CAPTURE(name);
    Tensor<double> x = random_tensor<double>(shape, rng, scale);
    Var<double> leaf = make_leaf(x, true);
    Var<double> loss = sum_all(op(leaf));
    backward(loss);
    Tensor<double> analytic = leaf.grad();
    auto forward = [&]() { return sum_all(op(make_leaf(x, false))).value().item(); };
    // re-bind x by reference inside forward via capture
    auto fwd = [&]() {
      Var<double> l = make_leaf(x, false);
      return sum_all(op(l)).value().item();
    };
    auto report = finite_diff_check_tensor(x, analytic, fwd);
    CHECK_MESSAGE(report.max_rel_err < 1e-4, report.worst);
    (void)forward;
  };

  check_unary("gelu", [](const Var<double>& v) { return gelu(v); }, Shape{3, 5});
  check_unary("relu", [](const Var<double>& v) { return relu(v); }, Shape{3, 5});
  check_unary("softmax_rows", [](const Var<double>& v) { return softmax_rows(v); }, Shape{4, 6});
  check_unary("l2_normalize_rows", [](const Var<double>& v) { return l2_normalize_rows(v); },
              Shape{4, 6});
  check_unary("mean_rows_from", [](const Var<double>& v) { return mean_rows_from(v, 1); },
              Shape{5, 3});
  check_unary("slice_cols", [](const Var<double>& v) { return slice_cols(v, 1, 4); }, Shape{3, 6});
  check_unary("gather_rows",
              [](const Var<double>& v) {
                return gather_rows(v, std::vector<std::int64_t>{2, 0, 2, 1});
              },
              Shape{4, 3});

  // matmul: gradient w.r.t. both operands.
  {
    Tensor<double> a = random_tensor<double>(Shape{3, 4}, rng);
    Tensor<double> b = random_tensor<double>(Shape{4, 2}, rng);
    Var<double> va = make_leaf(a, true);
    Var<double> vb = make_leaf(b, true);
    backward(sum_all(matmul(va, vb)));
    auto fwd = [&]() {
      return sum_all(matmul(make_leaf(a, false), make_leaf(b, false))).value().item();
    };
    CHECK(finite_diff_check_tensor(a, va.grad(), fwd).max_rel_err < 1e-4);
    CHECK(finite_diff_check_tensor(b, vb.grad(), fwd).max_rel_err < 1e-4);
  }

  // matmul_nt mirrors a * b^T.
  {
    Tensor<double> a = random_tensor<double>(Shape{3, 4}, rng);
    Tensor<double> b = random_tensor<double>(Shape{5, 4}, rng);
    Var<double> va = make_leaf(a, true);
    Var<double> vb = make_leaf(b, true);
    backward(sum_all(matmul_nt(va, vb)));
    auto fwd = [&]() {
      return sum_all(matmul_nt(make_leaf(a, false), make_leaf(b, false))).value().item();
    };
    CHECK(finite_diff_check_tensor(a, va.grad(), fwd).max_rel_err < 1e-4);
    CHECK(finite_diff_check_tensor(b, vb.grad(), fwd).max_rel_err < 1e-4);
  }

  // layer_norm_rows: input and affine params.
  {
    Tensor<double> x = random_tensor<double>(Shape{4, 6}, rng);
    Tensor<double> gm = random_tensor<double>(Shape{1, 6}, rng, 0.5);
    Tensor<double> bt = random_tensor<double>(Shape{1, 6}, rng, 0.5);
    Var<double> vx = make_leaf(x, true);
    Var<double> vg = make_leaf(gm, true);
    Var<double> vb = make_leaf(bt, true);
    backward(sum_all(gelu(layer_norm_rows(vx, vg, vb, 1e-6))));
    auto fwd = [&]() {
      return sum_all(gelu(layer_norm_rows(make_leaf(x, false), make_leaf(gm, false),
                                          make_leaf(bt, false), 1e-6)))
          .value()
          .item();
    };
    CHECK(finite_diff_check_tensor(x, vx.grad(), fwd).max_rel_err < 1e-4);
    CHECK(finite_diff_check_tensor(gm, vg.grad(), fwd).max_rel_err < 1e-4);
    CHECK(finite_diff_check_tensor(bt, vb.grad(), fwd).max_rel_err < 1e-4);
  }
}

TEST_CASE("transformer block preserves shape and differentiates") {
  Rng rng(3);
  ParamSet<double> ps;
  add_transformer_block(ps, rng, "block", 8);

  SUBCASE("shape preservation on [4 x 8]") {
    Tensor<double> x = random_tensor<double>(Shape{4, 8}, rng);
    Tensor<double> y = transformer_block_apply(x, ps, "block", 2);
    CHECK(y.shape == Shape{4, 8});
  }

  SUBCASE("layer norm of a constant token is the zero vector") {
    Tensor<double> x(Shape{1, 8}, 3.25);
    Var<double> gamma = make_leaf(Tensor<double>(Shape{1, 8}, 1.0), false);
    Var<double> beta = make_leaf(Tensor<double>(Shape{1, 8}, 0.0), false);
    Tensor<double> y = layer_norm_rows(make_leaf(x, false), gamma, beta, 1e-6).value();
    for (double v : y.data) CHECK(std::fabs(v) < 1e-6);
  }

  SUBCASE("gradient of sum(output) w.r.t. every param (dim 8, 2 heads)") {
    Tensor<double> x = random_tensor<double>(Shape{4, 8}, rng);
    VarMap<double> vars = make_param_vars(ps, true);
    backward(sum_all(transformer_block_forward(make_constant(x), vars, "block", 2)));
    ParamSet<double> analytic = collect_grads(ps, vars);
    auto fwd = [&]() {
      VarMap<double> v = make_param_vars(ps, false);
      return sum_all(transformer_block_forward(make_constant(x), v, "block", 2)).value().item();
    };
    auto report = finite_diff_check(ps, analytic, fwd);
    CHECK_MESSAGE(report.max_rel_err < 1e-4, report.worst);
    CHECK(report.n_checked == ps.total_scalars());
  }

  SUBCASE("gradient w.r.t. the input tokens") {
    Tensor<double> x = random_tensor<double>(Shape{3, 8}, rng);
    Var<double> vx = make_leaf(x, true);
    VarMap<double> vars = make_param_vars(ps, false);
    backward(sum_all(transformer_block_forward(vx, vars, "block", 2)));
    auto fwd = [&]() {
      VarMap<double> v = make_param_vars(ps, false);
      return sum_all(transformer_block_forward(make_leaf(x, false), v, "block", 2)).value().item();
    };
    CHECK(finite_diff_check_tensor(x, vx.grad(), fwd).max_rel_err < 1e-4);
  }

  SUBCASE("dim not divisible by heads is a configuration error") {
    Tensor<double> x = random_tensor<double>(Shape{4, 8}, rng);
    VarMap<double> vars = make_param_vars(ps, false);
    CHECK_THROWS_AS(transformer_block_forward(make_constant(x), vars, "block", 3), ConfigError);
  }
}

TEST_CASE("adamw update rule") {
  SUBCASE("first step reduces to a signed step of ~lr") {
    ParamSet<double> ps;
    ps.add("w", Tensor<double>::scalar(1.0));
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState<double>::init(ps, cfg);
    ParamSet<double> grads;
    grads.add("w", Tensor<double>::scalar(0.3));
    adamw_step(ps, grads, state, 1e-3);
    const double update = ps.at("w").item() - 1.0;
    // exact: -lr * g / (|g| + eps)
    CHECK(update == doctest::Approx(-1e-3 * 0.3 / (0.3 + 1e-8)).epsilon(1e-9));
    CHECK(update < -9.98e-4);
    CHECK(update > -1.001e-3);
    CHECK(state.step_count == 1);
  }

  SUBCASE("zero grads with zero weight decay leave params unchanged") {
    Rng rng(5);
    ParamSet<float> ps;
    ps.add("w", random_tensor<float>(Shape{3, 3}, rng));
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState<float>::init(ps, cfg);
    const auto before = testutil::hash_params(ps);
    ParamSet<float> grads;
    grads.add("w", Tensor<float>(Shape{3, 3}));
    for (int i = 0; i < 5; ++i) adamw_step(ps, grads, state, 1e-3);
    CHECK(testutil::hash_params(ps) == before);
  }

  SUBCASE("lr=0 is the identity on trainable params when weight_decay=0") {
    Rng rng(6);
    ParamSet<float> ps;
    ps.add("w", random_tensor<float>(Shape{4}, rng));
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState<float>::init(ps, cfg);
    const auto before = testutil::hash_params(ps);
    ParamSet<float> grads;
    grads.add("w", random_tensor<float>(Shape{4}, rng));
    adamw_step(ps, grads, state, 0.0);
    CHECK(testutil::hash_params(ps) == before);
  }

  SUBCASE("10 steps on a 1-D quadratic decrease the loss monotonically") {
    // Library run.
    ParamSet<double> ps;
    ps.add("w", Tensor<double>::scalar(0.0));
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    auto state = OptimizerState<double>::init(ps, cfg);
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) {
      const double w = ps.at("w").item();
      losses.push_back((w - 2.0) * (w - 2.0));
      ParamSet<double> grads;
      grads.add("w", Tensor<double>::scalar(2.0 * (w - 2.0)));
      adamw_step(ps, grads, state, 0.05);
    }
    losses.push_back((ps.at("w").item() - 2.0) * (ps.at("w").item() - 2.0));

    // Scalar recurrence oracle.
    double w = 0.0, m = 0.0, v = 0.0;
    std::vector<double> oracle_losses;
    for (int i = 1; i <= 10; ++i) {
      oracle_losses.push_back((w - 2.0) * (w - 2.0));
      const double g = 2.0 * (w - 2.0);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mhat = m / (1.0 - std::pow(0.9, i));
      const double vhat = v / (1.0 - std::pow(0.999, i));
      w -= 0.05 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    oracle_losses.push_back((w - 2.0) * (w - 2.0));

    for (std::size_t i = 0; i < losses.size(); ++i) {
      CHECK(losses[i] == doctest::Approx(oracle_losses[i]).epsilon(1e-12));
      if (i > 0) CHECK(losses[i] < losses[i - 1]);
    }
  }

  SUBCASE("frozen entries are bit-identical after any number of steps") {
    Rng rng(7);
    ParamSet<float> ps;
    ps.add("trainable", random_tensor<float>(Shape{4}, rng));
    ps.add("frozen", random_tensor<float>(Shape{4}, rng), /*trainable=*/false);
    auto state = OptimizerState<float>::init(ps, AdamWConfig{});
    const auto before = testutil::hash_tensor(ps.at("frozen"));
    for (int i = 0; i < 20; ++i) {
      ParamSet<float> grads;
      grads.add("trainable", random_tensor<float>(Shape{4}, rng));
      grads.add("frozen", random_tensor<float>(Shape{4}, rng), false);
      adamw_step(ps, grads, state, 1e-2);
    }
    CHECK(testutil::hash_tensor(ps.at("frozen")) == before);
  }

  SUBCASE("shape incompatibility is a configuration error") {
    ParamSet<float> ps;
    ps.add("w", Tensor<float>(Shape{2}));
    auto state = OptimizerState<float>::init(ps, AdamWConfig{});
    ParamSet<float> grads;
    grads.add("w", Tensor<float>(Shape{3}));
    CHECK_THROWS_AS(adamw_step(ps, grads, state, 1e-3), ConfigError);
  }
}

TEST_CASE("warmup + cosine learning rate schedule") {
  ScheduleConfig cfg;
  cfg.lr_base = 1e-3;
  cfg.warmup_epochs = 10;
  cfg.total_epochs = 300;
  cfg.steps_per_epoch = 4;

  SUBCASE("end of warmup reaches lr_base") {
    CHECK(lr_at(cfg.warmup_steps() - 1, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
  }

  SUBCASE("continuity at the warmup/cosine boundary") {
    CHECK(lr_at(cfg.warmup_steps(), cfg) == doctest::Approx(1e-3).epsilon(1e-9));
  }

  SUBCASE("cosine midpoint is lr_base/2") {
    const std::int64_t mid = cfg.warmup_steps() + (cfg.total_steps() - cfg.warmup_steps()) / 2;
    CHECK(lr_at(mid, cfg) == doctest::Approx(0.5e-3).epsilon(1e-9));
  }

  SUBCASE("final step decays below 1% of lr_base (closed form)") {
    const std::int64_t last = cfg.total_steps() - 1;
    const double progress = static_cast<double>(last - cfg.warmup_steps()) /
                            static_cast<double>(cfg.total_steps() - cfg.warmup_steps());
    const double closed_form = 1e-3 * 0.5 * (1.0 + std::cos(M_PI * progress));
    CHECK(lr_at(last, cfg) == doctest::Approx(closed_form).epsilon(1e-12));
    CHECK(lr_at(last, cfg) <= 1e-3 * 0.01);
  }

  SUBCASE("out-of-range step is a usage error") {
    CHECK_THROWS_AS(lr_at(-1, cfg), UsageError);
    CHECK_THROWS_AS(lr_at(cfg.total_steps(), cfg), UsageError);
  }

  SUBCASE("warmup_epochs must be below total_epochs") {
    ScheduleConfig bad = cfg;
    bad.warmup_epochs = 300;
    CHECK_THROWS_AS(lr_at(0, bad), ConfigError);
  }
}
