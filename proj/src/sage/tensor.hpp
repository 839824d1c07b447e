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

#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A DiffTensor is a cheap handle to a shared node. Nodes produced by an op
// whose inputs require gradients are appended to the inputs' Tape; replaying
// the tape backwards from a scalar fills `grad` on every reachable node.
// Tensors created without a tape are constants and record nothing.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sage {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tape;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::weak_ptr<Tape> tape;
  std::size_t tape_index = 0;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Accumulates this node's grad into the grads of `inputs`.
  std::function<void(TensorNode&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

class DiffTensor {
 public:
  DiffTensor() = default;
  explicit DiffTensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  // Detached constant; never recorded on a tape.
  static DiffTensor constant(Shape shape, std::vector<double> values);
  static DiffTensor zeros(Shape shape);
  static DiffTensor scalar(double value) { return constant({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->values; }
  double item() const;
  double at(std::size_t i) const { return node_->values.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::shared_ptr<Tape> tape() const { return node_->tape.lock(); }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of the nodes created during one forward pass. Creation order
// is a topological order, so reverse iteration visits each node once after
// all of its consumers.
class Tape : public std::enable_shared_from_this<Tape> {
 public:
  static std::shared_ptr<Tape> create();

  // A gradient-tracking leaf bound to this tape.
  DiffTensor leaf(Shape shape, std::vector<double> values);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Clears every grad on the tape and re-arms backward().
  void zero_grad();

  // Internal: used by ops to register their output.
  void record(const std::shared_ptr<TensorNode>& node);
  void run_backward(const std::shared_ptr<TensorNode>& root);

 private:
  Tape() = default;
  std::vector<std::shared_ptr<TensorNode>> nodes_;
  bool consumed_ = false;
};

// Allowed positions per row for softmax_rows. Row-major rows x cols.
struct RowMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> allowed;

  bool at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }

  // Row r may attend to columns [0, offset + r].
  static RowMask causal(std::size_t rows, std::size_t cols, std::size_t offset);
};

// ---- ops -------------------------------------------------------------------

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b);
DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor sub(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor scale(const DiffTensor& a, double factor);
DiffTensor relu(const DiffTensor& a);
DiffTensor gelu(const DiffTensor& a);
DiffTensor softmax_rows(const DiffTensor& x, const std::optional<RowMask>& mask = std::nullopt);
DiffTensor layer_norm(const DiffTensor& x, double eps = 1e-5);
DiffTensor embedding_lookup(const DiffTensor& table, std::span<const std::size_t> ids);
DiffTensor reshape(const DiffTensor& a, Shape shape);
DiffTensor transpose(const DiffTensor& a);
DiffTensor sum(const DiffTensor& a);
// Mean over rows of a 2-D [spatial, channels] tensor -> [channels].
DiffTensor global_mean(const DiffTensor& a);
DiffTensor concat_rows(const DiffTensor& a, const DiffTensor& b);
DiffTensor concat_cols(std::span<const DiffTensor> parts);
DiffTensor slice_rows(const DiffTensor& a, std::size_t begin, std::size_t end);
DiffTensor slice_cols(const DiffTensor& a, std::size_t begin, std::size_t end);
// Element i of a flattened tensor as shape [1].
DiffTensor pick(const DiffTensor& a, std::size_t index);
// Each row r becomes w * r / sum(w * r) for a fixed positive weight vector w
// of length cols. Rows must have positive weighted mass.
DiffTensor reweight_rows(const DiffTensor& x, std::span<const double> weights);

// Populates grad on every tape node reachable from `scalar`. The tape must be
// re-armed with zero_grad() before another backward pass.
void backward(const DiffTensor& scalar);

}  // namespace sage
