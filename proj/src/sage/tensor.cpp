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

#include "sage/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sage/error.hpp"

namespace sage {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape, std::size_t numel) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimension sizes must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != numel) {
    throw DimensionError("shape " + shape_to_string(shape) + " does not match " + std::to_string(numel) +
                         " values");
  }
}

void require_2d(const DiffTensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a 2-D tensor, got " + shape_to_string(t.shape()));
  }
}

using BackwardFn = std::function<void(TensorNode&)>;

// Builds the output node and records it when any input tracks gradients.
DiffTensor make_result(Shape shape, std::vector<double> values, std::vector<DiffTensor> inputs,
                       BackwardFn fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);

  std::shared_ptr<Tape> tape;
  bool tracked = false;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    auto t = in.tape();
    if (!t) throw StateError("input tensor's tape has been released");
    if (tape && tape != t) throw StateError("op mixes tensors from different tapes");
    tape = t;
    tracked = true;
  }
  if (tracked) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(fn);
    tape->record(node);
  }
  return DiffTensor(std::move(node));
}

inline bool wants(const TensorNode& n, std::size_t i) { return n.inputs[i]->requires_grad; }

}  // namespace

// ---- DiffTensor ------------------------------------------------------------

DiffTensor DiffTensor::constant(Shape shape, std::vector<double> values) {
  check_shape(shape, values.size());
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  return DiffTensor(std::move(node));
}

DiffTensor DiffTensor::zeros(Shape shape) {
  const std::size_t n = shape_numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t DiffTensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() on non-2-D tensor " + shape_to_string(shape()));
  return shape()[0];
}

std::size_t DiffTensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() on non-2-D tensor " + shape_to_string(shape()));
  return shape()[1];
}

double DiffTensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
  return node_->values[0];
}

double DiffTensor::at(std::size_t r, std::size_t c) const { return node_->values.at(r * cols() + c); }

// ---- Tape ------------------------------------------------------------------

std::shared_ptr<Tape> Tape::create() { return std::shared_ptr<Tape>(new Tape()); }

DiffTensor Tape::leaf(Shape shape, std::vector<double> values) {
  check_shape(shape, values.size());
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = true;
  record(node);
  return DiffTensor(std::move(node));
}

void Tape::record(const std::shared_ptr<TensorNode>& node) {
  node->tape = weak_from_this();
  node->tape_index = nodes_.size();
  nodes_.push_back(node);
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n->grad.clear();
  consumed_ = false;
}

void Tape::run_backward(const std::shared_ptr<TensorNode>& root) {
  if (consumed_) throw StateError("backward already ran on this tape; call zero_grad() first");
  if (root->tape_index >= nodes_.size() || nodes_[root->tape_index] != root) {
    throw StateError("backward root is not recorded on this tape");
  }
  root->ensure_grad()[0] += 1.0;
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    TensorNode& n = *nodes_[i];
    if (!n.grad.empty() && n.backward_fn) n.backward_fn(n);
  }
  consumed_ = true;
}

RowMask RowMask::causal(std::size_t rows, std::size_t cols, std::size_t offset) {
  RowMask m;
  m.rows = rows;
  m.cols = cols;
  m.allowed.assign(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols && c <= offset + r; ++c) m.allowed[r * cols + c] = 1;
  }
  return m;
}

void backward(const DiffTensor& scalar) {
  if (!scalar.defined()) throw ArgumentError("backward on undefined tensor");
  if (scalar.numel() != 1) {
    throw DimensionError("backward needs a scalar, got shape " + shape_to_string(scalar.shape()));
  }
  auto tape = scalar.tape();
  if (!scalar.requires_grad() || !tape) throw StateError("backward root is detached from any tape");
  tape->run_backward(scalar.node());
}

// ---- ops -------------------------------------------------------------------

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    const auto& g = self.grad;
    if (wants(self, 0)) {
      auto& ga = self.inputs[0]->ensure_grad();
      const auto& bv = self.inputs[1]->values;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
    }
    if (wants(self, 1)) {
      auto& gb = self.inputs[1]->ensure_grad();
      const auto& av = self.inputs[0]->values;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

namespace {

void require_same_shape(const DiffTensor& a, const DiffTensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

}  // namespace

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants(self, k)) continue;
      auto& g = self.inputs[k]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    if (wants(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    const auto& av = self.inputs[0]->values;
    const auto& bv = self.inputs[1]->values;
    if (wants(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

DiffTensor scale(const DiffTensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result(a.shape(), std::move(out), {a}, [factor](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

DiffTensor relu(const DiffTensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& x = self.inputs[0]->values;
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

DiffTensor gelu(const DiffTensor& a) {
  // Exact form x * Phi(x).
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.at(i);
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return make_result(a.shape(), std::move(out), {a}, [](TensorNode& self) {
    const auto& xs = self.inputs[0]->values;
    auto& g = self.inputs[0]->ensure_grad();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = xs[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

DiffTensor softmax_rows(const DiffTensor& x, const std::optional<RowMask>& mask) {
  require_2d(x, "softmax_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (mask && (mask->rows != rows || mask->cols != cols)) {
    throw DimensionError("softmax_rows mask is " + std::to_string(mask->rows) + "x" + std::to_string(mask->cols) +
                         " but input is " + shape_to_string(x.shape()));
  }
  std::vector<double> out(rows * cols, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask && !mask->at(r, c)) continue;
      mx = std::max(mx, xv[r * cols + c]);
      any = true;
    }
    if (!any) throw Error(ErrorCode::kDegenerateMask, "softmax_rows: row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask && !mask->at(r, c)) continue;
      const double e = std::exp(xv[r * cols + c] - mx);
      out[r * cols + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return make_result({rows, cols}, std::move(out), {x}, [rows, cols](TensorNode& self) {
    const auto& y = self.values;
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        g[i] += y[i] * (self.grad[i] - dot);
      }
    }
  });
}

DiffTensor layer_norm(const DiffTensor& x, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> out(rows * cols);
  std::vector<double> inv_std(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = (xv[r * cols + c] - mean) * inv_std[r];
  }
  return make_result({rows, cols}, std::move(out), {x},
                     [rows, cols, inv_std = std::move(inv_std)](TensorNode& self) {
                       const auto& xhat = self.values;
                       auto& g = self.inputs[0]->ensure_grad();
                       const double n = static_cast<double>(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mg = 0.0, mgx = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           mg += self.grad[r * cols + c];
                           mgx += self.grad[r * cols + c] * xhat[r * cols + c];
                         }
                         mg /= n;
                         mgx /= n;
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t i = r * cols + c;
                           g[i] += inv_std[r] * (self.grad[i] - mg - xhat[i] * mgx);
                         }
                       }
                     });
}

DiffTensor embedding_lookup(const DiffTensor& table, std::span<const std::size_t> ids) {
  require_2d(table, "embedding_lookup");
  if (ids.empty()) throw DimensionError("embedding_lookup needs at least one id");
  const std::size_t vocab = table.rows(), dim = table.cols();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab) {
      throw DimensionError("embedding id " + std::to_string(idx[r]) + " outside table of " + std::to_string(vocab) +
                           " rows");
    }
    for (std::size_t c = 0; c < dim; ++c) out[r * dim + c] = table.at(idx[r], c);
  }
  return make_result({idx.size(), dim}, std::move(out), {table}, [idx, dim](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < dim; ++c) g[idx[r] * dim + c] += self.grad[r * dim + c];
  });
}

DiffTensor reshape(const DiffTensor& a, Shape shape) {
  check_shape(shape, a.numel());
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(std::move(shape), std::move(out), {a}, [](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

DiffTensor transpose(const DiffTensor& a) {
  require_2d(a, "transpose");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a.at(r, c);
  return make_result({cols, rows}, std::move(out), {a}, [rows, cols](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c * rows + r];
  });
}

DiffTensor sum(const DiffTensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return make_result({1}, {total}, {a}, [](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

DiffTensor global_mean(const DiffTensor& a) {
  require_2d(a, "global_mean");
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a.at(r, c);
  for (double& v : out) v /= static_cast<double>(rows);
  return make_result({cols}, std::move(out), {a}, [rows, cols](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += self.grad[c] * inv;
  });
}

DiffTensor concat_rows(const DiffTensor& a, const DiffTensor& b) {
  require_2d(a, "concat_rows");
  require_2d(b, "concat_rows");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows column mismatch: " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t na = a.numel();
  std::vector<double> out;
  out.reserve(na + b.numel());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return make_result({a.rows() + b.rows(), a.cols()}, std::move(out), {a, b}, [na](TensorNode& self) {
    if (wants(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[na + i];
    }
  });
}

DiffTensor concat_cols(std::span<const DiffTensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols needs at least one tensor");
  const std::size_t rows = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols row mismatch: " + shape_to_string(parts[0].shape()) + " and " +
                           shape_to_string(p.shape()));
    }
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) out[r * total + offsets[k] + c] = parts[k].at(r, c);
  }
  std::vector<DiffTensor> inputs(parts.begin(), parts.end());
  return make_result({rows, total}, std::move(out), std::move(inputs),
                     [rows, total, offsets](TensorNode& self) {
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         if (!wants(self, k)) continue;
                         auto& g = self.inputs[k]->ensure_grad();
                         const std::size_t w = self.inputs[k]->shape[1];
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * total + offsets[k] + c];
                       }
                     });
}

DiffTensor slice_rows(const DiffTensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  if (begin >= end || end > a.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_to_string(a.shape()));
  }
  const std::size_t cols = a.cols();
  std::vector<double> out(a.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * cols));
  return make_result({end - begin, cols}, std::move(out), {a}, [begin, cols](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
  });
}

DiffTensor slice_cols(const DiffTensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  if (begin >= end || end > a.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         shape_to_string(a.shape()));
  }
  const std::size_t rows = a.rows(), cols = a.cols(), w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.at(r, begin + c);
  return make_result({rows, w}, std::move(out), {a}, [rows, cols, w, begin](TensorNode& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
  });
}

DiffTensor pick(const DiffTensor& a, std::size_t index) {
  if (index >= a.numel()) {
    throw DimensionError("pick index " + std::to_string(index) + " outside tensor of shape " +
                         shape_to_string(a.shape()));
  }
  return make_result({1}, {a.at(index)}, {a}, [index](TensorNode& self) {
    self.inputs[0]->ensure_grad()[index] += self.grad[0];
  });
}

DiffTensor reweight_rows(const DiffTensor& x, std::span<const double> weights) {
  require_2d(x, "reweight_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (weights.size() != cols) {
    throw DimensionError("reweight_rows got " + std::to_string(weights.size()) + " weights for " +
                         shape_to_string(x.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  for (double v : w)
    if (!(v > 0.0)) throw ArgumentError("reweight_rows weights must be positive");
  std::vector<double> out(rows * cols);
  std::vector<double> totals(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = w[c] * x.at(r, c);
      total += out[r * cols + c];
    }
    if (!(total > 0.0)) throw ArgumentError("reweight_rows: row " + std::to_string(r) + " has no positive mass");
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
    totals[r] = total;
  }
  return make_result({rows, cols}, std::move(out), {x},
                     [rows, cols, w = std::move(w), totals = std::move(totals)](TensorNode& self) {
                       // y_i = w_i x_i / S  =>  dx_k = w_k / S * (g_k - sum_i g_i y_i)
                       const auto& y = self.values;
                       auto& g = self.inputs[0]->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * y[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t i = r * cols + c;
                           g[i] += w[c] / totals[r] * (self.grad[i] - dot);
                         }
                       }
                     });
}

}  // namespace sage
