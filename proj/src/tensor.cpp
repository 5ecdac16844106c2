#include "permattn/tensor.hpp"

#include <random>
#include <sstream>
#include <unordered_set>

#include "permattn/errors.hpp"

namespace permattn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(Node& self)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = std::move(op);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::vector<double>* input_grad(Node& self, std::size_t k) {
  Node& in = *self.inputs[k];
  if (!in.requires_grad) return nullptr;
  return &in.ensure_grad();
}

}  // namespace detail

namespace {

std::shared_ptr<detail::Node> leaf(Shape shape, std::vector<double> values,
                                   bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw UsageError("operation on an undefined tensor");
  return *n;
}

}  // namespace

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::uint64_t seed, double stddev, bool requires_grad) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(gen);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::uniform(Shape shape, std::uint64_t seed, double lo, double hi,
                       bool requires_grad) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(gen);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::eye(std::size_t n, bool requires_grad) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank mismatch for " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  auto& n = const_cast<detail::Node&>(checked(node_));
  if (!n.is_leaf()) throw UsageError("requires_grad can only be toggled on leaves");
  n.requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

void Tensor::assign(std::span<const double> values) {
  auto& n = const_cast<detail::Node&>(checked(node_));
  if (!n.is_leaf()) throw UsageError("assign() is only valid on leaf tensors");
  if (values.size() != n.data.size()) {
    throw DimensionError("assign() size mismatch for " + shape_str(n.shape));
  }
  std::copy(values.begin(), values.end(), n.data.begin());
}

void Tensor::backward() const { Tape::record(*this).backward(*this); }

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return from(n.shape, n.data, false);
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; ops land after all of their inputs.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    if (!node->is_leaf()) tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

void Tape::backward(const Tensor& root) const {
  if (!root.defined() || root.numel() != 1) {
    throw UsageError("backward() needs a scalar root, got shape " +
                     (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  if (!root.requires_grad()) {
    throw UsageError("backward() root is not on the tape (no input requires grad)");
  }
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

}  // namespace permattn
