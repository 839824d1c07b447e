// Copyright (c) 2026 The sage-decode Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "sage/error.hpp"
#include "sage/tensor.hpp"

using namespace sage;

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and hand case") {
  const auto eye = DiffTensor::constant({2, 2}, {1, 0, 0, 1});
  const auto m = DiffTensor::constant({2, 2}, {0.5, -2, 7, 3.25});
  const auto p = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.at(i) == m.at(i));

  const auto a = DiffTensor::constant({2, 2}, {1, 2, 3, 4});
  const auto b = DiffTensor::constant({2, 1}, {0, 1});
  const auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0) == 2.0);
  CHECK(c.at(1) == 4.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const auto a = DiffTensor::zeros({2, 3});
  const auto b = DiffTensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    CHECK(what.find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("matmul 3x4 by 4x2 gradient") {
  Rng rng(11);
  auto tape = Tape::create();
  const auto av = testing::uniform_values(rng, 12), bv = testing::uniform_values(rng, 8);
  const auto a = tape->leaf({3, 4}, av);
  const auto b = tape->leaf({4, 2}, bv);
  const auto r = testing::uniform_values(rng, 6);
  backward(sum(mul(matmul(a, b), DiffTensor::constant({3, 2}, r))));
  auto f = [&](std::vector<double> x, std::vector<double> y) {
    return sum(mul(matmul(DiffTensor::constant({3, 4}, x), DiffTensor::constant({4, 2}, y)),
                   DiffTensor::constant({3, 2}, r)))
        .item();
  };
  for (std::size_t k = 0; k < 12; ++k) {
    auto p = av, m = av;
    p[k] += testing::kFdStep;
    m[k] -= testing::kFdStep;
    CHECK(testing::rel_error(a.grad()[k], (f(p, bv) - f(m, bv)) / (2 * testing::kFdStep)) < 1e-5);
  }
  for (std::size_t k = 0; k < 8; ++k) {
    auto p = bv, m = bv;
    p[k] += testing::kFdStep;
    m[k] -= testing::kFdStep;
    CHECK(testing::rel_error(b.grad()[k], (f(av, p) - f(av, m)) / (2 * testing::kFdStep)) < 1e-5);
  }
}

TEST_CASE("softmax rows: symmetry, stabilization, masking") {
  const auto u = softmax_rows(DiffTensor::constant({1, 3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto big = softmax_rows(DiffTensor::constant({1, 2}, {1000, 0}));
  CHECK(std::abs(big.at(0) - 1.0) <= 1e-12);
  CHECK(std::abs(big.at(1)) <= 1e-12);
  CHECK(std::isfinite(big.at(0)));

  const auto masked = softmax_rows(DiffTensor::constant({2, 3}, {1, 2, 3, 1, 2, 3}), RowMask::causal(2, 3, 1));
  CHECK(masked.at(0, 2) == 0.0);
  CHECK(masked.at(0, 0) + masked.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

  RowMask none;
  none.rows = 1;
  none.cols = 2;
  none.allowed = {0, 0};
  try {
    (void)softmax_rows(DiffTensor::constant({1, 2}, {1, 2}), none);
    FAIL("expected degenerate-mask error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateMask);
  }
}

TEST_CASE("softmax rows sum to one and are monotone per coordinate") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = testing::uniform_values(rng, 6, -5, 5);
    const auto s = softmax_rows(DiffTensor::constant({1, 6}, v));
    double total = 0;
    for (double x : s.values()) total += x;
    CHECK(std::abs(total - 1.0) <= 1e-9);
    const std::size_t k = static_cast<std::size_t>(rng.below(6));
    v[k] += 0.1;
    CHECK(softmax_rows(DiffTensor::constant({1, 6}, v)).at(k) > s.at(k));
  }
}

TEST_CASE("softmax JVP matches finite differences") {
  Rng rng(5);
  const auto x = testing::uniform_values(rng, 5);
  const auto dir = testing::uniform_values(rng, 5);
  const auto r = testing::uniform_values(rng, 5);
  auto tape = Tape::create();
  const auto leaf = tape->leaf({1, 5}, x);
  backward(sum(mul(softmax_rows(leaf), DiffTensor::constant({1, 5}, r))));
  double analytic = 0;
  for (std::size_t i = 0; i < 5; ++i) analytic += leaf.grad()[i] * dir[i];
  auto f = [&](double t) {
    auto y = x;
    for (std::size_t i = 0; i < 5; ++i) y[i] += t * dir[i];
    return sum(mul(softmax_rows(DiffTensor::constant({1, 5}, y)), DiffTensor::constant({1, 5}, r))).item();
  };
  const double fd = (f(testing::kFdStep) - f(-testing::kFdStep)) / (2 * testing::kFdStep);
  CHECK(testing::rel_error(analytic, fd) < 1e-5);
}

TEST_CASE("backward basics") {
  auto tape = Tape::create();
  const auto x = tape->leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  auto t2 = Tape::create();
  const auto y = t2->leaf({1}, {3.0});
  backward(mul(y, y));
  CHECK(y.grad()[0] == 6.0);
}

TEST_CASE("backward errors") {
  auto tape = Tape::create();
  const auto x = tape->leaf({2}, {1, 2});
  CHECK_THROWS_AS(backward(x), DimensionError);
  CHECK_THROWS_AS(backward(DiffTensor::scalar(1.0)), StateError);

  const auto s = sum(x);
  backward(s);
  CHECK_THROWS_AS(backward(s), StateError);
  tape->zero_grad();
  CHECK_NOTHROW(backward(s));
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("every op matches central differences") {
  for (const auto& op : testing::op_catalogue()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = testing::op_fd_error(op, seed);
      INFO(op.name << " seed " << seed << " rel err " << err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("forward is bitwise deterministic") {
  auto run = [] {
    Rng rng(42);
    const auto a = DiffTensor::constant({4, 8}, testing::uniform_values(rng, 32));
    const auto w = DiffTensor::constant({8, 8}, testing::uniform_values(rng, 64));
    return softmax_rows(gelu(layer_norm(matmul(a, w))));
  };
  const auto p = run(), q = run();
  for (std::size_t i = 0; i < p.numel(); ++i) CHECK(p.at(i) == q.at(i));
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(DiffTensor::constant({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(DiffTensor::constant({0, 2}, {}), DimensionError);
  CHECK_THROWS_AS(add(DiffTensor::zeros({2, 2}), DiffTensor::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(reshape(DiffTensor::zeros({2, 3}), {4, 2}), DimensionError);
}

}  // TEST_SUITE
