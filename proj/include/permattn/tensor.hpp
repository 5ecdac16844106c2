#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace permattn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

// One value in the computation graph. Leaves have no inputs and no backward
// rule; every op output records its inputs and how to push its gradient back.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad and accumulates into inputs[k]->grad for inputs that
  // require grad.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major float64 tensor with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same node. Forward values are
// fixed at construction; only gradients accumulate afterwards (and leaf
// parameters may be overwritten by an optimizer through assign()).
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Standard normal entries scaled by stddev, deterministic per seed.
  static Tensor randn(Shape shape, std::uint64_t seed, double stddev = 1.0,
                      bool requires_grad = false);
  // Uniform entries in [lo, hi), deterministic per seed.
  static Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi,
                        bool requires_grad = false);
  static Tensor eye(std::size_t n, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> data() const;
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Leaf-only in-place overwrite, used by optimizers.
  void assign(std::span<const double> values);

  // Reverse-mode sweep from this scalar; see Tape.
  void backward() const;

  // Copy with no graph history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the ops reachable from a root, inputs before outputs.
// Replaying in reverse visits each op once.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every backward rule in reverse order.
  void backward(const Tensor& root) const;

 private:
  std::vector<detail::Node*> nodes_;
};

namespace detail {

// Builds an op output. requires_grad is inherited from the inputs; when no
// input requires grad the backward rule is dropped and the inputs released.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Node& self)> backward);

// grad buffer of input k if it participates in differentiation, else null.
std::vector<double>* input_grad(Node& self, std::size_t k);

}  // namespace detail

}  // namespace permattn
