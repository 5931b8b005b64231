#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpad/tensor.hpp"

namespace lpad::diff {

enum class Mode { train, eval };

enum class Upsample { nearest, linear };

using Var = std::int32_t;

/// Eager reverse-mode tape. Ops compute their value on creation and record a
/// closure that routes the output gradient to the parents. backward() walks
/// the nodes in reverse creation order, so gradient accumulation follows one
/// canonical sequence and results are run-to-run deterministic at 64-bit.
class Tape {
public:
    explicit Tape(Mode mode = Mode::train) : mode_(mode) {}

    Mode mode() const { return mode_; }

    /// Scan every op output for non-finite values (slow; meant for tests).
    void set_check_finite(bool on) { check_finite_ = on; }

    /// Value that does not track gradients.
    Var constant(Tensor value);

    /// Gradient-tracked input (parameters, and any input whose gradient a
    /// caller wants to read back).
    Var leaf(Tensor value);

    const Tensor& val(Var v) const { return nodes_[check(v)].value; }
    bool tracked(Var v) const { return nodes_[check(v)].requires_grad; }

    /// Reverse pass from a scalar root. Must follow the forward construction
    /// on this tape; running it twice is an error.
    void backward(Var root);

    /// Gradient of the backward root with respect to node v.
    const Tensor& grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }

    // --- used by op implementations ---
    using BackwardFn = std::function<void(Tape&, Var self)>;
    Var make(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn);
    Tensor& grad_buf(Var v);
    bool has_grad(Var v) const { return nodes_[check(v)].has_grad; }
    const char* op_name(Var v) const { return nodes_[check(v)].op; }

private:
    struct Node {
        const char* op;
        Tensor value;
        std::vector<Var> parents;
        BackwardFn backward_fn;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
    };

    std::size_t check(Var v) const {
        if (v < 0 || static_cast<std::size_t>(v) >= nodes_.size()) {
            throw std::logic_error("Tape: variable id out of range");
        }
        return static_cast<std::size_t>(v);
    }

    std::vector<Node> nodes_;
    Mode mode_;
    bool check_finite_ = false;
    bool backward_done_ = false;
};

// Elementwise and scalar ops.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var add_scalar(Tape& t, Var a, double c);
Var scale(Tape& t, Var a, double c);
Var log(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var softplus(Tape& t, Var a);
Var relu(Tape& t, Var a);

// Reductions (over all elements; canonical index order).
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

// Linear algebra.
Var matmul(Tape& t, Var a, Var b);                    // [m,k]x[k,n]
Var bias_add_row(Tape& t, Var x, Var b);              // [r,c] + [c]

// Structure.
Var reshape(Tape& t, Var a, Shape shape);
Var concat_channels(Tape& t, const std::vector<Var>& parts);  // along axis 1 of [B,C,T]
Var slice_channels(Tape& t, Var a, std::int64_t c0, std::int64_t c1);
Var pad_right_edge(Tape& t, Var a, std::int64_t n);   // replicate last time step
Var crop_right(Tape& t, Var a, std::int64_t n);

// Network primitives over [B,C,T].
Var conv1d(Tape& t, Var x, Var w, Var b);             // w [F,C,K], K odd, same padding
Var tconv1d(Tape& t, Var x, Var w, Var b);            // w [C,F,K], K odd, same padding
Var maxpool2(Tape& t, Var x);                         // size-2, first-wins ties
Var upsample2(Tape& t, Var x, Upsample kind);
Var batchnorm1d(Tape& t, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                double momentum, bool update_running);

}  // namespace lpad::diff
