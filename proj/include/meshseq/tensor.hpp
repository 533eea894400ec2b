#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "meshseq/errors.hpp"

namespace meshseq {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;

    std::vector<double>& ensure_grad();
};

// Dense row-major array of doubles. Copies share storage; values are
// treated as immutable once an op has consumed them. Only leaves (parameters,
// gradcheck inputs) are mutated in place, and never while a tape is live.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
    static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
    static Tensor eye(std::size_t n);
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Mutable access for leaves only.
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;
    double item() const;
    double operator[](std::size_t flat) const { return (*impl_->data)[flat]; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Gradient buffer; zeros of the right size if nothing was accumulated.
    std::vector<double> grad() const;
    void zero_grad();

    // Fresh leaf with copied values and no tape history.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<TensorImpl> impl);

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of differentiable ops. Backward replays the record in exact
// reverse order, accumulating (adding) into each input's gradient buffer.
class Tape {
public:
    struct Entry {
        std::string name;
        std::shared_ptr<TensorImpl> output;
        std::vector<std::shared_ptr<TensorImpl>> inputs;
        std::function<void(const TensorImpl& out)> backward;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(Entry entry) { entries_.push_back(std::move(entry)); }
    std::size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }

    // Seeds d(loss)/d(loss) = 1 and propagates. Clears the record afterwards.
    // When visit_log is given it receives the indices of the replayed entries.
    void backward(const Tensor& loss, std::vector<std::size_t>* visit_log = nullptr);
    void clear() { entries_.clear(); }

    static Tape* active();

private:
    friend class TapeScope;
    std::vector<Entry> entries_;
};

// Makes `tape` the recording target for ops on this thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Builds the output of a differentiable op. The values are checked for
// finiteness; when a tape is active and any input requires grad, the op is
// recorded with `backward`, which reads out.grad and accumulates into the
// inputs' ensure_grad() buffers.
Tensor make_op_result(const std::string& name, Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs,
                      std::function<void(const TensorImpl& out)> backward);

// True when an op over `inputs` would be recorded.
bool needs_grad(const std::vector<Tensor>& inputs);

}  // namespace meshseq
