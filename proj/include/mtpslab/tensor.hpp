#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtpslab/errors.hpp"
#include "mtpslab/rng.hpp"

namespace mtpslab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? " x " : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool from_op = false;  // produced by a recorded tape op (not a leaf)
};

/// Dense row-major tensor handle with value semantics over shared storage.
/// Immutable once created except through optimizer steps and explicit
/// test-side mutation of leaf data.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : st_(std::make_shared<TensorStorage<T>>()) {
    for (int64_t d : shape) {
      if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    }
    st_->shape = std::move(shape);
    st_->data.assign(static_cast<size_t>(shape_numel(st_->shape)), fill);
  }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    t.st_ = std::make_shared<TensorStorage<T>>();
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not fill shape " + shape_str(shape));
    }
    t.st_->shape = std::move(shape);
    t.st_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stdev) {
    Tensor t(std::move(shape));
    for (auto& x : t.st_->data) x = static_cast<T>(rng.normal() * stdev);
    return t;
  }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return static_cast<int>(st_->shape.size()); }
  int64_t dim(int i) const { return st_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(st_->data.size()); }

  std::vector<T>& data() { return st_->data; }
  const std::vector<T>& data() const { return st_->data; }
  T* ptr() { return st_->data.data(); }
  const T* ptr() const { return st_->data.data(); }

  bool requires_grad() const { return st_ && st_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    st_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return st_ && !st_->grad.empty(); }
  /// Gradient buffer, zero-allocated on first touch.
  std::vector<T>& grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), T(0));
    return st_->grad;
  }
  const std::vector<T>& grad() const { return st_->grad; }
  void zero_grad() { st_->grad.clear(); }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on non-scalar tensor of shape " +
                          shape_str(shape()));
    }
    return st_->data[0];
  }

  TensorStorage<T>* storage() const { return st_.get(); }
  std::shared_ptr<TensorStorage<T>> storage_ptr() const { return st_; }

 private:
  std::shared_ptr<TensorStorage<T>> st_;
};

/// Reverse-mode tape: a Wengert list of recorded operations. Ops executed
/// while a tape is active (and touching a grad-requiring input) push one
/// record; backward() replays the records in reverse, which is a valid
/// topological order because recording order is execution order.
///
/// Gradients propagate through a per-call flow map, then flush additively
/// into the .grad of every reachable leaf, so repeated backward() calls
/// accumulate exactly +1 gradient worth per call.
template <typename T>
class Tape {
 public:
  Tape() {
    prev_ = active_;
    active_ = this;
  }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::shared_ptr<TensorStorage<T>> out,
              std::function<void(Tape&)> backfn) {
    out->from_op = true;
    recs_.push_back({std::move(out), std::move(backfn)});
  }

  size_t size() const { return recs_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward() requires a scalar loss");
    }
    flow_.clear();
    flow_[loss.storage()] = {T(1)};
    for (auto it = recs_.rbegin(); it != recs_.rend(); ++it) {
      if (flow_.find(it->out.get()) == flow_.end()) continue;
      it->back(*this);
    }
    for (auto& [st, g] : flow_) {
      if (st->requires_grad && !st->from_op) {
        if (st->grad.empty()) st->grad.assign(st->data.size(), T(0));
        for (size_t i = 0; i < g.size(); ++i) st->grad[i] += g[i];
      }
    }
    flow_.clear();
  }

  /// Upstream gradient of a node, or nullptr if no gradient reached it.
  const std::vector<T>* flow(TensorStorage<T>* st) const {
    auto it = flow_.find(st);
    return it == flow_.end() ? nullptr : &it->second;
  }

  /// Get-or-create the flow accumulator for a node.
  std::vector<T>& flow_acc(TensorStorage<T>* st) {
    auto& v = flow_[st];
    if (v.empty()) v.assign(st->data.size(), T(0));
    return v;
  }

 private:
  struct Rec {
    std::shared_ptr<TensorStorage<T>> out;
    std::function<void(Tape&)> back;
  };
  std::vector<Rec> recs_;
  std::unordered_map<TensorStorage<T>*, std::vector<T>> flow_;
  Tape* prev_ = nullptr;
  static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

/// True when the op should record: a tape is live and some input needs grad.
template <typename T>
inline bool tracing(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace mtpslab
