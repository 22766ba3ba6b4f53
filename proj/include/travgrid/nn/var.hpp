#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace travgrid::nn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the node receives a gradient
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }
  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

// Row-major 2-D array participating in a reverse-mode computation graph.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(int rows, int cols, std::vector<T> values) {
    return make(rows, cols, std::move(values), false);
  }
  static Var constant(int rows, int cols, T fill = T(0)) {
    return make(rows, cols, std::vector<T>(static_cast<std::size_t>(rows) * cols, fill), false);
  }
  static Var parameter(int rows, int cols, std::vector<T> values) {
    return make(rows, cols, std::move(values), true);
  }

  bool defined() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::string shape_string() const {
    return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
  }

  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  T& at(int r, int c) { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  T at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * cols() + c]; }
  T item() const { return node_->value.at(0); }

  // Gradient buffer; zeros when backward never reached this node.
  std::vector<T>& grad() {
    node_->grad_buffer();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  static Var make(int rows, int cols, std::vector<T> values, bool requires_grad) {
    if (values.size() != static_cast<std::size_t>(rows) * cols) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape [" +
                       std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
    auto n = std::make_shared<Node<T>>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  std::shared_ptr<Node<T>> node_;
};

// Accumulates d(root)/d(node) into every reachable node that requires grad.
// `root` must be 1x1.
template <typename T>
void backward(const Var<T>& root);

}  // namespace travgrid::nn
