#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lsda/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every op of one forward pass. Parameters enter as leaves;
// backward() walks the tape in reverse and accumulates into Parameter::grad.
// Frozen parameters (trainable == false) enter as constants and never receive
// gradient.

namespace lsda {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Var constant(Tensor value);
    Var parameter(Parameter& p);

    // Records an op result. `backward` is dropped when no parent needs grad.
    Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
    Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                      std::move(backward));
    }

    const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
    double scalar(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

    // Gradient buffer of v, zero-initialised on first access.
    Tensor& grad(Var v);

    // Seeds d(output)/d(output) = 1 for a scalar output and propagates.
    void backward(Var output);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

namespace ops {

Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int pad);
Var silu(Tape& tape, Var x);
Var linear(Tape& tape, Var x, Var w, Var b);
Var global_avg_pool(Tape& tape, Var x);

Var concat_channels(Tape& tape, Var a, Var b);
Var concat_batch(Tape& tape, const std::vector<Var>& parts);
Var slice_batch(Tape& tape, Var x, int start, int count);

// Blocks gradient flow.
Var detach(Tape& tape, Var x);

// sum_i weights[i] * scalars[i]
Var weighted_sum(Tape& tape, const std::vector<Var>& scalars, const std::vector<double>& weights);

}  // namespace ops

}  // namespace lsda
