#include "x2f/autodiff/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "x2f/error.hpp"

namespace x2f::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local DetachTape* g_detach_tape = nullptr;
std::atomic<std::uint64_t> g_seq{1};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void validate_shape(const Shape& shape, const char* context) {
  if (shape.size() > kMaxRank) {
    throw ShapeError(std::string(context) + ": rank " + std::to_string(shape.size()) +
                     " exceeds 5 for shape " + to_string(shape));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError(std::string(context) + ": zero extent in shape " + to_string(shape));
  }
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv3d: return "conv3d";
    case OpKind::kLinear: return "linear";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kClamp: return "clamp";
    case OpKind::kAbsSum: return "abs_sum";
    case OpKind::kL2Norm: return "l2_norm";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kAvgPool2d: return "avg_pool2d";
    case OpKind::kSpatialGradient: return "spatial_gradient";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kStopGradient: return "stop_gradient";
    case OpKind::kBilinearSample: return "bilinear_sample";
    case OpKind::kScatterMean: return "scatter_mean";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kMixRows: return "mix_rows";
    case OpKind::kUpsample2xBilinear: return "upsample2x_bilinear";
  }
  return "unknown";
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
               std::shared_ptr<Node> node)
    : shape_(std::move(shape)), data_(std::move(data)), node_(std::move(node)) {}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  validate_shape(shape, "tensor");
  if (ad::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(ad::numel(shape)) + " values, got " + std::to_string(data.size()));
  }
  return Tensor(std::move(shape), std::make_shared<const std::vector<double>>(std::move(data)),
                nullptr);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  validate_shape(shape, "tensor");
  std::vector<double> data(ad::numel(shape), value);
  return constant(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  auto node = std::make_shared<Node>();
  node->kind = OpKind::kLeaf;
  node->seq = detail::next_seq();
  node->shape = t.shape_;
  t.node_ = std::move(node);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape_) + " is not a scalar");
  return (*data_)[0];
}

Tensor Tensor::detach() const { return Tensor(shape_, data_, nullptr); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

DetachTape::DetachTape(Mode mode, std::vector<std::vector<double>>* values)
    : mode_(mode), values_(values), previous_(g_detach_tape) {
  g_detach_tape = this;
}

DetachTape::~DetachTape() { g_detach_tape = previous_; }

DetachTape* DetachTape::active() { return g_detach_tape; }

std::vector<double> DetachTape::pass(const Shape& shape, std::vector<double> x) {
  if (mode_ == Mode::kRecord) {
    values_->push_back(x);
    return x;
  }
  if (next_ >= values_->size() || (*values_)[next_].size() != x.size()) {
    throw Error("detach replay: stop_gradient call " + std::to_string(next_) + " of shape " + to_string(shape) +
                " does not match the recorded pass");
  }
  return (*values_)[next_++];
}

std::uint64_t detail::next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

std::vector<double> Gradients::of(const Tensor& leaf) const {
  if (leaf.node()) {
    auto it = grads_.find(leaf.node().get());
    if (it != grads_.end()) return it->second;
  }
  return std::vector<double>(leaf.numel(), 0.0);
}

bool Gradients::reached(const Tensor& leaf) const {
  return leaf.node() && grads_.count(leaf.node().get()) > 0;
}

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.rank() != 0) {
    throw ShapeError("backward: loss must be rank-0, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.node()) throw Error("backward: loss is not connected to a gradient graph");
  if (loss.node()->consumed) throw Error("backward: graph already consumed by a previous backward");

  // Collect reachable nodes; stop_gradient cuts traversal.
  std::vector<Node*> order;
  std::unordered_map<const Node*, std::size_t> index;
  std::vector<Node*> stack{loss.node().get()};
  index.emplace(loss.node().get(), 0);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    if (n->kind == OpKind::kStopGradient) continue;
    for (const auto& in : n->inputs) {
      if (in && index.emplace(in.get(), 0).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  std::unordered_map<const Node*, std::vector<double>> grads;
  grads[loss.node().get()] = {1.0};

  Gradients out;
  std::vector<std::vector<double>*> grad_in;
  for (Node* n : order) {
    auto it = grads.find(n);
    if (it == grads.end()) continue;  // no path carried gradient here
    if (n->kind == OpKind::kLeaf) {
      out.grads_.emplace(n, std::move(it->second));
      grads.erase(it);
      continue;
    }
    if (n->consumed) throw Error("backward: graph already consumed by a previous backward");
    std::vector<double> g_out = std::move(it->second);
    grads.erase(it);
    if (n->kind != OpKind::kStopGradient) {
      grad_in.assign(n->inputs.size(), nullptr);
      for (std::size_t i = 0; i < n->inputs.size(); ++i) {
        Node* in = n->inputs[i].get();
        if (!in) continue;
        auto& buf = grads[in];
        if (buf.empty()) buf.assign(numel(in->shape), 0.0);
        grad_in[i] = &buf;
      }
      n->backward(g_out, grad_in);
    }
    n->consumed = true;
    n->backward = nullptr;
  }
  return out;
}

}  // namespace x2f::ad
