#include "meshseq/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace meshseq {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

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
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), 0.0);
    return grad;
}

namespace {
void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto d : shape)
        if (d == 0) throw ShapeError("tensor axis lengths must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) {
    check_shape(shape);
    impl_ = std::make_shared<TensorImpl>();
    impl_->data = std::make_shared<std::vector<double>>(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (shape_numel(shape) != values.size())
        throw ShapeError("tensor of shape " + shape_str(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
    for (double v : values)
        if (!std::isfinite(v)) throw NumericError("non-finite value in tensor construction");
    impl_ = std::make_shared<TensorImpl>();
    impl_->data = std::make_shared<std::vector<double>>(std::move(values));
    impl_->shape = std::move(shape);
}

Tensor Tensor::eye(std::size_t n) {
    Tensor t({n, n});
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return t;
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data->size() : 0; }

std::span<const double> Tensor::data() const {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return {impl_->data->data(), impl_->data->size()};
}

std::span<double> Tensor::mutable_data() {
    if (!impl_) throw ShapeError("use of undefined tensor");
    return {impl_->data->data(), impl_->data->size()};
}

std::vector<double> Tensor::to_vector() const {
    auto d = data();
    return {d.begin(), d.end()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return (*impl_->data)[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    shape();
    impl_->requires_grad = on;
    return *this;
}

std::vector<double> Tensor::grad() const {
    if (!impl_) return {};
    if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl>();
    t.impl_->shape = shape();
    t.impl_->data = std::make_shared<std::vector<double>>(*impl_->data);
    return t;
}

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss, std::vector<std::size_t>* visit_log) {
    if (loss.numel() != 1)
        throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
    loss.impl()->ensure_grad()[0] += 1.0;
    for (std::size_t i = entries_.size(); i-- > 0;) {
        auto& e = entries_[i];
        if (e.output->grad.empty()) continue;
        if (visit_log) visit_log->push_back(i);
        e.backward(*e.output);
        // Intermediate gradients are no longer needed once propagated.
        e.output->grad.clear();
    }
    entries_.clear();
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

bool needs_grad(const std::vector<Tensor>& inputs) {
    if (!g_active_tape) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

Tensor make_op_result(const std::string& name, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      std::function<void(const TensorImpl& out)> backward) {
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i]))
            throw NumericError(name + ": non-finite output at flat index " + std::to_string(i));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<std::vector<double>>(std::move(values));
    if (needs_grad(inputs)) {
        impl->requires_grad = true;
        Tape::Entry e;
        e.name = name;
        e.output = impl;
        e.inputs.reserve(inputs.size());
        for (const auto& t : inputs) e.inputs.push_back(t.impl());
        e.backward = std::move(backward);
        g_active_tape->record(std::move(e));
    }
    return Tensor::wrap(std::move(impl));
}

}  // namespace meshseq
