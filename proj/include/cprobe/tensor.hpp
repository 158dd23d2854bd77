#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cprobe {

// A named trainable (or frozen) parameter with persistent storage. Gradients
// accumulate here across a tape's backward pass; the optimizer consumes and
// zeroes them. Frozen params act as constants on the tape and are skipped by
// the optimizer even if someone writes into grad by hand.
struct Param {
  std::string name;
  int rows = 0, cols = 0;
  std::vector<double> value, grad;
  bool frozen = false;

  Param() = default;
  Param(std::string n, int r, int c)
      : name(std::move(n)),
        rows(r),
        cols(c),
        value(static_cast<std::size_t>(r) * c, 0.0),
        grad(static_cast<std::size_t>(r) * c, 0.0) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

class Tape;

// Lightweight handle to a node on a tape. All tensors are dense row-major
// 2-D double matrices; scalars are 1x1, row vectors 1xM.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* t, int i) : tape_(t), id_(i) {}

  int rows() const;
  int cols() const;
  std::size_t size() const;
  double* data();
  const double* data() const;
  // Gradient buffer; null when the node does not require grad.
  double* grad();
  const double* grad() const;
  bool requires_grad() const;
  bool defined() const { return tape_ != nullptr; }
  // Value of a 1x1 tensor; throws otherwise.
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

namespace detail {
struct Node {
  int rows = 0, cols = 0;
  double* data = nullptr;  // points into owned_data or external Param storage
  double* grad = nullptr;  // null when requires_grad is false
  std::vector<double> owned_data, owned_grad;
  std::vector<double> aux;  // op-specific saved state for backward
  std::vector<int> aux_int;
  std::function<void()> backward;
  bool requires_grad = false;
};
}  // namespace detail

// Define-by-run gradient tape. Records are appended during the forward pass
// and replayed exactly once, in reverse creation order, by backward().
// Rebuild the tape (reset + forward) before asking for another backward.
class Tape {
 public:
  // Leaf over external parameter storage. Frozen params join as constants.
  Tensor leaf(Param& p);
  // Constant node (no grad), optionally initialized from data.
  Tensor constant(int rows, int cols, const double* data = nullptr);
  // Tape-owned node; grad buffer allocated (zeroed) iff requires_grad.
  Tensor make(int rows, int cols, bool requires_grad);

  // Seeds the scalar loss with gradient 1 and runs every recorded backward
  // function once, newest to oldest. Throws std::invalid_argument for a
  // non-scalar or grad-less loss and std::runtime_error on a second call
  // without an intervening reset().
  void backward(Tensor loss);

  void reset();
  std::size_t num_nodes() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  detail::Node& node(int id) { return *nodes_[id]; }
  const detail::Node& node(int id) const { return *nodes_[id]; }

 private:
  std::vector<std::unique_ptr<detail::Node>> nodes_;
  bool backward_done_ = false;
};

}  // namespace cprobe
