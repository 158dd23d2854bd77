#include "cprobe/tensor.hpp"

#include <stdexcept>

namespace cprobe {

int Tensor::rows() const { return tape_->node(id_).rows; }
int Tensor::cols() const { return tape_->node(id_).cols; }
std::size_t Tensor::size() const {
  const auto& n = tape_->node(id_);
  return static_cast<std::size_t>(n.rows) * n.cols;
}
double* Tensor::data() { return tape_->node(id_).data; }
const double* Tensor::data() const { return tape_->node(id_).data; }
double* Tensor::grad() { return tape_->node(id_).grad; }
const double* Tensor::grad() const { return tape_->node(id_).grad; }
bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

double Tensor::scalar() const {
  const auto& n = tape_->node(id_);
  if (n.rows != 1 || n.cols != 1) {
    throw std::invalid_argument("Tensor::scalar on " + std::to_string(n.rows) +
                                "x" + std::to_string(n.cols) + " tensor");
  }
  return n.data[0];
}

Tensor Tape::leaf(Param& p) {
  auto node = std::make_unique<detail::Node>();
  node->rows = p.rows;
  node->cols = p.cols;
  node->data = p.value.data();
  if (!p.frozen) {
    node->grad = p.grad.data();
    node->requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(int rows, int cols, const double* data) {
  Tensor t = make(rows, cols, false);
  if (data) {
    std::copy(data, data + t.size(), t.data());
  }
  return t;
}

Tensor Tape::make(int rows, int cols, bool requires_grad) {
  auto node = std::make_unique<detail::Node>();
  node->rows = rows;
  node->cols = cols;
  node->owned_data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  node->data = node->owned_data.data();
  if (requires_grad) {
    node->owned_grad.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    node->grad = node->owned_grad.data();
    node->requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Tensor loss) {
  if (loss.tape() != this) {
    throw std::invalid_argument("backward: loss lives on a different tape");
  }
  if (backward_done_) {
    throw std::runtime_error(
        "backward: tape already consumed; rebuild the forward pass first");
  }
  auto& ln = node(loss.id());
  if (ln.rows != 1 || ln.cols != 1) {
    throw std::invalid_argument("backward: loss must be 1x1, got " +
                                std::to_string(ln.rows) + "x" +
                                std::to_string(ln.cols));
  }
  if (!ln.requires_grad) {
    throw std::invalid_argument(
        "backward: loss does not depend on any trainable parameter");
  }
  backward_done_ = true;
  ln.grad[0] += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = node(id);
    if (n.backward) n.backward();
  }
}

void Tape::reset() {
  nodes_.clear();
  backward_done_ = false;
}

}  // namespace cprobe
