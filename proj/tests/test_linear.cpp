#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "tsbench/linear.hpp"
#include "tsbench/optim.hpp"
#include "test_util.hpp"

using namespace tsbench;

namespace {

SeriesCollection collection_from(const std::vector<std::vector<double>>& values) {
  SeriesCollection c;
  c.n_series = static_cast<int>(values.size());
  c.n_steps = static_cast<int>(values[0].size());
  c.d_x = 1;
  c.values = values;
  for (int t = 0; t < c.n_steps; ++t) c.timestamps.push_back(978307200LL + 3600LL * t);
  c.frequency = 3600;
  for (int i = 0; i < c.n_series; ++i) c.names.push_back("s" + std::to_string(i));
  return c;
}

}  // namespace

TEST_CASE("fit_ridge: hand-checked normal equations, no intercept") {
  Tensor X({2, 1}, {1.0, 2.0});
  Tensor Y({2, 1}, {2.0, 4.0});
  auto fit = fit_ridge(X, Y, 0.0, -1);
  CHECK_FALSE(fit.used_pinv);
  CHECK(fit.weights.at(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("fit_ridge: huge lambda shrinks weights to ~0") {
  Rng rng(1);
  Tensor X = rng.normal_tensor({20, 4});
  Tensor Y = rng.normal_tensor({20, 2});
  auto fit = fit_ridge(X, Y, 1e9, -1);
  for (double v : *fit.weights.data) CHECK(std::abs(v) < 1e-6);
}

TEST_CASE("fit_ridge: intercept column stays unregularized") {
  // Constant target 5 with huge lambda: slope ~0, intercept carries the mean.
  Tensor X({4, 2}, {0.5, 1, -0.5, 1, 1.5, 1, -1.5, 1});
  Tensor Y({4, 1}, {5, 5, 5, 5});
  auto fit = fit_ridge(X, Y, 1e9, 1);
  CHECK(std::abs(fit.weights.at(0, 0)) < 1e-6);
  CHECK(fit.weights.at(1, 0) == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("fit_ridge: optimality residual X^T X W + lambda W - X^T Y = 0") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const int M = 12, p = 5, H = 3;
    Tensor X = rng.normal_tensor({M, p});
    Tensor Y = rng.normal_tensor({M, H});
    const double lambda = 0.37;
    auto fit = fit_ridge(X, Y, lambda, -1);
    for (int i = 0; i < p; ++i)
      for (int h = 0; h < H; ++h) {
        double resid = lambda * fit.weights.at(i, h);
        for (int j = 0; j < p; ++j) {
          double xtx = 0.0;
          for (int m = 0; m < M; ++m) xtx += X.at(m, i) * X.at(m, j);
          resid += xtx * fit.weights.at(j, h);
        }
        for (int m = 0; m < M; ++m) resid -= X.at(m, i) * Y.at(m, h);
        CHECK(std::abs(resid) < 1e-8);
      }
  }
}

TEST_CASE("fit_ridge: singular unregularized system takes the pseudo-inverse path") {
  // Duplicate column makes X^T X singular.
  Tensor X({3, 2}, {1, 1, 2, 2, 3, 3});
  Tensor Y({3, 1}, {2, 4, 6});
  auto fit = fit_ridge(X, Y, 0.0, -1);
  CHECK(fit.used_pinv);
  // Minimum-norm solution splits the coefficient across the duplicates.
  CHECK(fit.weights.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(fit.weights.at(1, 0) == doctest::Approx(1.0).epsilon(1e-6));
  // Predictions still interpolate.
  Tensor pred = ridge_predict(X, fit.weights);
  for (int m = 0; m < 3; ++m) CHECK(pred.at(m, 0) == doctest::Approx(Y.at(m, 0)).epsilon(1e-8));
}

TEST_CASE("fit_ridge: closed form matches an Adam gradient-descent oracle") {
  // Same objective ||XW - Y||^2 + lambda ||W||^2 minimized by gradient
  // descent on the differentiation engine.
  Rng rng(3);
  const int M = 16, p = 4, H = 2;
  Tensor X = rng.normal_tensor({M, p});
  Tensor Y = rng.normal_tensor({M, H});
  const double lambda = 0.5;
  auto closed = fit_ridge(X, Y, lambda, -1);

  ParameterStore store;
  store.add_shared("w", Tensor({p, H}, 0.0));
  for (int it = 0; it < 30000; ++it) {
    Tape tape;
    auto bound = store.bind(tape);
    Tensor resid = sub(tape, matmul(tape, X, bound.at("w")), Y);
    Tensor loss = add(tape, sum_all(tape, mul(tape, resid, resid)),
                      scale(tape, sum_all(tape, mul(tape, bound.at("w"), bound.at("w"))), lambda));
    auto grads = store.collect(tape.backward(loss), bound);
    const double lr = it < 10000 ? 0.01 : (it < 20000 ? 1e-3 : 1e-4);
    adam_step(store, grads, lr);
  }
  for (int i = 0; i < p; ++i)
    for (int h = 0; h < H; ++h)
      CHECK(std::abs(store.value("w").at(i, h) - closed.weights.at(i, h)) < 1e-6);
}

TEST_CASE("moving_average_decompose: hand cases and exact recomposition") {
  {
    std::vector<double> w = {3.0, 3.0, 3.0, 3.0};
    auto [trend, seasonal] = moving_average_decompose(w, 3);
    for (int t = 0; t < 4; ++t) {
      CHECK(trend[static_cast<std::size_t>(t)] == doctest::Approx(3.0));
      CHECK(seasonal[static_cast<std::size_t>(t)] == doctest::Approx(0.0));
    }
  }
  {
    std::vector<double> w = {1.0, 5.0, -2.0};
    auto [trend, seasonal] = moving_average_decompose(w, 1);
    CHECK(trend == w);
  }
  {
    std::vector<double> w = {1.0, 2.0, 3.0};
    auto [trend, seasonal] = moving_average_decompose(w, 3);
    CHECK(trend[0] == doctest::Approx(4.0 / 3));  // replicate-padded [1,1,2]
    CHECK(trend[1] == doctest::Approx(2.0));
    CHECK(trend[2] == doctest::Approx(8.0 / 3));  // [2,3,3]
    for (int t = 0; t < 3; ++t)
      CHECK(trend[static_cast<std::size_t>(t)] + seasonal[static_cast<std::size_t>(t)] ==
            doctest::Approx(w[static_cast<std::size_t>(t)]).epsilon(1e-12));
  }
  std::vector<double> w = {1.0, 2.0};
  CHECK_THROWS_AS(moving_average_decompose(w, 2), std::invalid_argument);
  CHECK_THROWS_AS(moving_average_decompose(w, 5), std::invalid_argument);
}

TEST_CASE("dlinear: zero heads give zero forecast; output is the sum of head outputs") {
  Rng rng(4);
  std::vector<std::vector<double>> vals(2, std::vector<double>(64));
  for (auto& s : vals)
    for (auto& v : s) v = rng.normal();
  SeriesCollection c = collection_from(vals);
  auto model = fit_dlinear(c, {0, 64}, 8, 2, LinearMode::Global, 3, 0.1);
  std::vector<double> window(8);
  for (int t = 0; t < 8; ++t) window[static_cast<std::size_t>(t)] = c.value_at(0, 40 + t, 0);

  auto pred = dlinear_forward(model, window, 0);
  // Sum of separately evaluated trend/seasonal head outputs (linearity).
  auto [trend, seasonal] = moving_average_decompose(window, 3);
  const int p = model.weights[0].dim(0);
  Tensor Xt({1, p}, 0.0), Xs({1, p}, 0.0), Xi({1, p}, 0.0);
  for (int t = 0; t < 8; ++t) {
    Xt.at(0, t) = trend[static_cast<std::size_t>(t)];
    Xs.at(0, 8 + t) = seasonal[static_cast<std::size_t>(t)];
  }
  Xi.at(0, p - 1) = 1.0;  // intercept
  Tensor yt = ridge_predict(Xt, model.weights[0]);
  Tensor ys = ridge_predict(Xs, model.weights[0]);
  Tensor yi = ridge_predict(Xi, model.weights[0]);
  for (int h = 0; h < 2; ++h)
    CHECK(pred[static_cast<std::size_t>(h)] ==
          doctest::Approx(yt.at(0, h) + ys.at(0, h) + yi.at(0, h)).epsilon(1e-10));

  // Zeroed heads -> zero forecast.
  DLinearModel zeroed = model;
  zeroed.weights[0] = Tensor({p, 2}, 0.0);
  auto zpred = dlinear_forward(zeroed, window, 0);
  CHECK(zpred[0] == 0.0);
  CHECK(zpred[1] == 0.0);
}

TEST_CASE("param_count: global W*H, local N*W*H, hybrid adds N*H") {
  std::vector<std::vector<double>> vals(3, std::vector<double>(400, 0.0));
  Rng rng(5);
  for (auto& s : vals)
    for (auto& v : s) v = rng.normal();
  SeriesCollection c = collection_from(vals);
  auto global = fit_ridge_linear(c, {0, 300}, 96, 96, LinearMode::Global, 0.1, /*intercept=*/false);
  CHECK(global.param_count() == 96 * 96);
  auto local = fit_ridge_linear(c, {0, 300}, 96, 96, LinearMode::Local, 0.1, /*intercept=*/false);
  CHECK(local.param_count() == 3LL * 96 * 96);
  auto hybrid = fit_ridge_linear(c, {0, 300}, 96, 96, LinearMode::Hybrid, 0.1, /*intercept=*/false);
  CHECK(hybrid.param_count() == 96 * 96 + 3LL * 96);
}

TEST_CASE("global OLS fit on identical series equals the single-series local fit") {
  // Duplicated rows scale X^T X and X^T Y together, so the lambda=0 solutions
  // coincide exactly.
  Rng rng(6);
  std::vector<double> base(200);
  double x = 0.0;
  for (auto& v : base) {
    x = 0.7 * x + rng.normal();
    v = x;
  }
  SeriesCollection c = collection_from({base, base, base});
  auto global = fit_ridge_linear(c, {0, 160}, 12, 4, LinearMode::Global, 0.0);
  auto local = fit_ridge_linear(c, {0, 160}, 12, 4, LinearMode::Local, 0.0);
  REQUIRE(local.weights.size() == 3);
  for (const auto& w : local.weights)
    for (long long i = 0; i < w.numel(); ++i)
      CHECK(std::abs((*global.weights[0].data)[static_cast<std::size_t>(i)] -
                     (*w.data)[static_cast<std::size_t>(i)]) < 1e-8);
}

TEST_CASE("ridge weights: binary container round trip") {
  Rng rng(7);
  std::vector<std::vector<double>> vals(2, std::vector<double>(120));
  for (auto& s : vals)
    for (auto& v : s) v = rng.normal();
  SeriesCollection c = collection_from(vals);
  auto model = fit_ridge_linear(c, {0, 100}, 8, 3, LinearMode::Local, 0.25);
  const std::string path =
      (std::filesystem::temp_directory_path() / "tsbench_weights.bin").string();
  save_ridge_weights(model, path);
  auto back = load_ridge_weights(path);
  CHECK(back.mode == model.mode);
  CHECK(back.window == model.window);
  CHECK(back.horizon == model.horizon);
  CHECK(back.n_series == model.n_series);
  CHECK(back.lambda == model.lambda);
  REQUIRE(back.weights.size() == model.weights.size());
  for (std::size_t i = 0; i < back.weights.size(); ++i)
    for (long long j = 0; j < back.weights[i].numel(); ++j)
      CHECK((*back.weights[i].data)[static_cast<std::size_t>(j)] ==
            (*model.weights[i].data)[static_cast<std::size_t>(j)]);
  std::filesystem::remove(path);
}

TEST_CASE("evaluate_linear: better-than-persistence sanity on an AR collection") {
  Rng rng(8);
  std::vector<std::vector<double>> vals(2, std::vector<double>(600));
  for (auto& s : vals) {
    double x = 0.0;
    for (auto& v : s) {
      x = 0.9 * x + rng.normal(0.0, 0.3);
      v = x;
    }
  }
  SeriesCollection c = collection_from(vals);
  auto model = fit_ridge_linear(c, {0, 480}, 16, 1, LinearMode::Global, 0.1);
  auto ev = evaluate_linear(model, c, {480, 600}, [](const auto& m, const auto& w, int sid) {
    return ridge_linear_forward(m, w, sid);
  });
  CHECK(ev.mse < 0.15);  // near the sigma^2 = 0.09 floor
  CHECK(ev.mae < 0.35);
}
