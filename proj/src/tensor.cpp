#include "vamp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace vamp {

namespace {

#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

void require_finite(const std::vector<double>& values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + where);
    }
  }
}

}  // namespace

bool debug_checks_enabled() { return g_debug_checks; }
void set_debug_checks(bool enabled) { g_debug_checks = enabled; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  if (!std::isfinite(fill)) throw NumericError("non-finite fill value");
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  require_finite(values, "tensor construction");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::size() const { return node_ ? node_->value.size() : 0; }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : size() / c;
}

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  return node_->value;
}

double Tensor::operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

std::vector<double> Tensor::to_vector() const { return {data().begin(), data().end()}; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->leaf && node_->requires_grad;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.node_ = std::make_shared<detail::Node>();
  t.node_->shape = node_->shape;
  t.node_->value = node_->value;
  return t;
}

void Tape::note_leaf(const Tensor& t) {
  const auto& n = t.node();
  if (n && n->leaf && n->requires_grad) leaves_.push_back(n);
}

void Tape::record(const Tensor& output, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  if (consumed_) throw std::logic_error("recording onto a tape that was already backpropagated");
  for (const Tensor* in : inputs) note_leaf(*in);
  entries_.push_back({output.node(), std::move(fn)});
}

void Tape::record(const Tensor& output, const std::vector<Tensor>& inputs, BackwardFn fn) {
  if (consumed_) throw std::logic_error("recording onto a tape that was already backpropagated");
  for (const Tensor& in : inputs) note_leaf(in);
  entries_.push_back({output.node(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward called twice without reset()");
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto rit = std::find_if(entries_.rbegin(), entries_.rend(),
                                [&](const Entry& e) { return e.output == loss.node(); });
  if (rit == entries_.rend()) throw std::logic_error("loss tensor was not produced on this tape");
  const auto it = std::prev(rit.base());

  consumed_ = true;
  loss.node()->grad_buffer()[0] += 1.0;
  const auto last = static_cast<std::ptrdiff_t>(it - entries_.begin());
  for (std::ptrdiff_t i = last; i >= 0; --i) {
    auto& entry = entries_[static_cast<std::size_t>(i)];
    if (entry.output->grad.empty()) continue;  // not on a path to the loss
    entry.fn();
  }
  std::unordered_set<const detail::Node*> seen;
  for (const auto& leaf : leaves_) {
    if (seen.insert(leaf.get()).second) leaf->grad_buffer();
  }
}

void Tape::reset() {
  entries_.clear();
  leaves_.clear();
  consumed_ = false;
}

}  // namespace vamp
