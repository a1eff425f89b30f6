#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace x2f::ad {

using Shape = std::vector<std::size_t>;

constexpr std::size_t kMaxRank = 5;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);
// Throws ShapeError if rank > kMaxRank or any extent is zero.
void validate_shape(const Shape& shape, const char* context);

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kMatmul,
  kConv2d,
  kConv3d,
  kLinear,
  kRelu,
  kSigmoid,
  kSoftplus,
  kSoftmax,
  kExp,
  kLog,
  kClamp,
  kAbsSum,
  kL2Norm,
  kSum,
  kMean,
  kAvgPool2d,
  kSpatialGradient,
  kConcat,
  kSlice,
  kReshape,
  kTranspose,
  kBroadcast,
  kStopGradient,
  kBilinearSample,
  kScatterMean,
  kGatherRows,
  kMixRows,
  kUpsample2xBilinear,
};

const char* op_name(OpKind kind);

// Accumulates into grad_in[i] (already sized and zeroed); grad_in[i] is null
// for inputs that carry no gradient.
using BackwardFn = std::function<void(std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

struct Node {
  OpKind kind = OpKind::kLeaf;
  std::uint64_t seq = 0;  // creation order; inputs always have smaller seq
  Shape shape;
  std::vector<std::shared_ptr<Node>> inputs;  // null entries for constants
  BackwardFn backward;
  bool consumed = false;
};

// Immutable dense float64 array, row-major. A tensor with a graph node
// participates in differentiation; one without is a constant.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  // Differentiable leaf.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  std::vector<double> to_vector() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  bool requires_grad() const { return static_cast<bool>(node_); }
  bool is_leaf() const { return node_ && node_->kind == OpKind::kLeaf; }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Same values, no graph connection. Not an op; used to snapshot values.
  Tensor detach() const;

  // Internal: used by op implementations.
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
         std::shared_ptr<Node> node);

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread while alive.
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

// Records the values passed through stop_gradient on this thread, or replays
// previously recorded values in call order. Finite-difference checks use it
// so detached quantities stay at their unperturbed values.
class DetachTape {
 public:
  enum class Mode { kRecord, kReplay };
  explicit DetachTape(Mode mode, std::vector<std::vector<double>>* values);
  ~DetachTape();
  DetachTape(const DetachTape&) = delete;
  DetachTape& operator=(const DetachTape&) = delete;

  static DetachTape* active();
  // Returns the value to emit for a stop_gradient of `x`.
  std::vector<double> pass(const Shape& shape, std::vector<double> x);

 private:
  Mode mode_;
  std::vector<std::vector<double>>* values_;
  std::size_t next_ = 0;
  DetachTape* previous_;
};

class Gradients {
 public:
  // All-zero vector of matching size when the leaf was not reached.
  std::vector<double> of(const Tensor& leaf) const;
  bool reached(const Tensor& leaf) const;

 private:
  friend Gradients backward(const Tensor& loss);
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

// Reverse pass over every node reachable from a rank-0 loss. Nodes are
// marked consumed; a second call on the same graph throws.
Gradients backward(const Tensor& loss);

namespace detail {

std::uint64_t next_seq();

// Builds the result tensor; the backward closure is only created when a
// graph node is actually recorded.
template <typename MakeBackward>
Tensor make_result(OpKind kind, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, MakeBackward&& make_backward) {
  auto storage = std::make_shared<const std::vector<double>>(std::move(data));
  bool any = false;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) any = any || t->requires_grad();
  }
  if (!any) return Tensor(std::move(shape), std::move(storage), nullptr);
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->seq = next_seq();
  node->shape = shape;
  node->inputs.reserve(inputs.size());
  for (const Tensor* t : inputs) node->inputs.push_back(t->node());
  node->backward = make_backward();
  return Tensor(std::move(shape), std::move(storage), std::move(node));
}

// Variadic-input form for concat.
template <typename MakeBackward>
Tensor make_result_n(OpKind kind, Shape shape, std::vector<double> data,
                     std::span<const Tensor> inputs, MakeBackward&& make_backward) {
  auto storage = std::make_shared<const std::vector<double>>(std::move(data));
  bool any = false;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) any = any || t.requires_grad();
  }
  if (!any) return Tensor(std::move(shape), std::move(storage), nullptr);
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->seq = next_seq();
  node->shape = shape;
  for (const Tensor& t : inputs) node->inputs.push_back(t.node());
  node->backward = make_backward();
  return Tensor(std::move(shape), std::move(storage), std::move(node));
}

}  // namespace detail
}  // namespace x2f::ad
