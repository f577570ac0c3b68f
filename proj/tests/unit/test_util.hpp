#pragma once

#include <functional>
#include <random>

#include <doctest.h>

#include "segres/core.hpp"
#include "segres/graph.hpp"

namespace segres::testutil {

inline Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Image img(h, w);
  for (auto& c : img.chan)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) c(i, j) = unit(rng);
  return img;
}

inline LabelMap random_labels(int h, int w, int num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, num_classes - 1);
  LabelMap labels(h, w, num_classes);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) labels.data(i, j) = pick(rng);
  return labels;
}

// Central finite differences against the analytic input gradient of a scalar
// graph output; build(graph, x_leaf_id) -> loss id. Runs in double.
inline void check_input_gradient(const Tensor<double>& x0,
                                 const std::function<int(Graph<double>&, int)>& build,
                                 double step = 1e-4, double tol = 1e-3) {
  Tensor<double> analytic;
  {
    Graph<double> g;
    const int x = g.leaf(x0, /*needs_grad=*/true);
    const int loss = build(g, x);
    g.backward(loss);
    analytic = g.grad(x);
  }
  auto eval = [&](const Tensor<double>& xv) {
    Graph<double> g;
    const int x = g.leaf(xv, false);
    return double(g.value(build(g, x)).item());
  };
  for (std::int64_t i = 0; i < x0.size(); ++i) {
    Tensor<double> xp = x0, xm = x0;
    xp.data[i] += step;
    xm.data[i] -= step;
    const double fd = (eval(xp) - eval(xm)) / (2.0 * step);
    const double an = analytic.data[i];
    const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
    const double rel = std::abs(an - fd) / denom;
    INFO("element ", i, ": analytic=", an, " fd=", fd);
    CHECK(rel < tol);
  }
}

}  // namespace segres::testutil
