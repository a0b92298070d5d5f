#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace npas {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One value in the implicit reverse-mode graph. Nodes are created in
// topological order (define-by-run); `seq` records that order so backward
// can replay it in reverse without an explicit tape object.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until touched by backward()
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// Value-semantic handle to a graph node. Copies share the node. A tensor
// created as a parameter is a trainable leaf: it keeps its buffer across
// steps, accumulates gradients, and is updated in place by the optimizer.
// All other tensors are rebuilt every step.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<double>& values() const { return node_->value; }
  double at(std::size_t i) const { return node_->value[i]; }
  double scalar_value() const;

  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // In-place access for the optimizer; leaves only.
  std::vector<double>& leaf_values();

  // Copy of the data with no graph history.
  Tensor detached() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(Shape shape, std::vector<double> value,
                               std::vector<Tensor> inputs,
                               std::function<void(detail::Node&)> backprop);
};

// --- graph construction helper (used by the op implementations) ---
Tensor make_op_result(Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backprop);

// --- differentiable operations ---

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// 2-D matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);

// Cross-correlation: input [N,C,H,W], kernel [F,C,kh,kw] -> [N,F,H',W'].
// H' = (H + 2*padding - kh) / stride + 1; throws if not integral.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

Tensor relu(const Tensor& a);

// Adds bias[i] to every element whose index along `axis` is i.
Tensor bias_add(const Tensor& x, const Tensor& bias, std::size_t axis);

// Element-count-preserving view copy.
Tensor reshape(const Tensor& a, Shape shape);

// Reads `length` elements from a 1-D tensor starting at `start`, indices
// taken modulo the tensor length (wrap-around; length may exceed the
// source, in which case elements are reused and their gradients
// accumulate over all uses).
Tensor slice_modular(const Tensor& flat, std::size_t start,
                     std::size_t length);

// 1-D concatenation.
Tensor concat(const std::vector<Tensor>& parts);

// sum_k coeffs[k] * tensors[k]; all tensors share one shape, coeffs is
// 1-D of matching length. Fixed summation order k = 0..K-1.
Tensor weighted_sum(const std::vector<Tensor>& tensors, const Tensor& coeffs);

// Align-corners linear interpolation of a 1-D tensor to length m.
// m == n copies exactly; n == 1 broadcasts v[0]; m == 1 takes v[0].
Tensor linear_resize_1d(const Tensor& v, std::size_t m);

// 1-D softmax.
Tensor softmax_1d(const Tensor& a);

// Mean softmax cross-entropy over rows of logits [N,C] against integer
// labels (one per row). Returns a scalar.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<std::size_t>& labels);

Tensor mean(const Tensor& a);

// Reverse pass from a scalar loss; accumulates into .grad of every
// reachable tensor that requires gradients. Repeated calls accumulate.
void backward(const Tensor& loss);

}  // namespace npas
