#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qbf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded value in the autodiff graph. Leaves have no parents and no
// backward function; interior nodes push their gradient into their parents.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Handle to a dense row-major float64 array with an optional autodiff history.
// Copies share storage; use clone() for an independent value.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // In-place access for leaves (optimizer updates, initialisation).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  // True when every element is finite.
  bool is_valid() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls; interior gradients are recomputed each time.
  void backward() const;

  // Independent copy of the values with no history.
  Tensor clone(bool requires_grad = false) const;
  bool shares_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::string& op() const { return node_->op; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Nodes reachable from root, every node after all of its inputs.
std::vector<detail::Node*> topological_order(const Tensor& root);

// While alive, newly created op results record no history on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result. parents are recorded only if grad mode is on and at
// least one parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::string op,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> backward);

}  // namespace qbf
