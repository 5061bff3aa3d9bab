#include "lsda/autograd.hpp"

#include <algorithm>
#include <cstring>

#include "lsda/error.hpp"
#include "lsda/kernels.hpp"

namespace lsda {

Var Tape::constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
    Node node;
    node.value = p.value;
    node.requires_grad = p.trainable;
    node.param = p.trainable ? &p : nullptr;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    for (Var p : parents) {
        if (p.valid() && requires_grad(p)) {
            node.requires_grad = true;
            break;
        }
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar(Var v) const {
    const Tensor& t = value(v);
    require(t.numel() == 1, ErrorKind::Argument, "tape: value is not a scalar " + shape_str(t.shape()));
    return t[0];
}

Tensor& Tape::grad(Var v) {
    Node& node = nodes_.at(static_cast<std::size_t>(v.id));
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape());
        node.has_grad = true;
    }
    return node.grad;
}

void Tape::backward(Var output) {
    require(value(output).numel() == 1, ErrorKind::Argument, "backward: output must be a scalar");
    if (!requires_grad(output)) {
        return;
    }
    grad(output)[0] = 1.0;
    for (int id = output.id; id >= 0; --id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (!node.has_grad || !node.requires_grad) {
            continue;
        }
        if (node.param != nullptr) {
            node.param->grad += node.grad;
        } else if (node.backward) {
            // The callback may append to grads of earlier nodes only, so the
            // reference to this node stays valid.
            node.backward(*this, node.grad);
        }
    }
}

namespace ops {

Var conv2d(Tape& tape, Var x, Var w, Var b, int stride, int pad) {
    Tensor y = kernels::conv2d_forward(tape.value(x), tape.value(w), tape.value(b), stride, pad);
    return tape.record(std::move(y), {x, w, b}, [=](Tape& t, const Tensor& gy) {
        Tensor* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
        Tensor* dw = t.requires_grad(w) ? &t.grad(w) : nullptr;
        Tensor* db = t.requires_grad(b) ? &t.grad(b) : nullptr;
        kernels::conv2d_backward(t.value(x), t.value(w), gy, stride, pad, dx, dw, db);
    });
}

Var silu(Tape& tape, Var x) {
    Tensor y = kernels::silu_forward(tape.value(x));
    return tape.record(std::move(y), {x}, [=](Tape& t, const Tensor& gy) {
        kernels::silu_backward(t.value(x), gy, t.grad(x));
    });
}

Var linear(Tape& tape, Var x, Var w, Var b) {
    Tensor y = kernels::linear_forward(tape.value(x), tape.value(w), tape.value(b));
    return tape.record(std::move(y), {x, w, b}, [=](Tape& t, const Tensor& gy) {
        Tensor* dx = t.requires_grad(x) ? &t.grad(x) : nullptr;
        Tensor* dw = t.requires_grad(w) ? &t.grad(w) : nullptr;
        Tensor* db = t.requires_grad(b) ? &t.grad(b) : nullptr;
        kernels::linear_backward(t.value(x), t.value(w), gy, dx, dw, db);
    });
}

Var global_avg_pool(Tape& tape, Var x) {
    Tensor y = kernels::global_avg_pool(tape.value(x));
    return tape.record(std::move(y), {x}, [=](Tape& t, const Tensor& gy) {
        Tensor& dx = t.grad(x);
        const std::size_t cells = static_cast<std::size_t>(dx.dim(2)) * dx.dim(3);
        const double inv = 1.0 / static_cast<double>(cells);
        for (std::size_t i = 0; i < gy.numel(); ++i) {
            double* plane = dx.data() + i * cells;
            for (std::size_t p = 0; p < cells; ++p) plane[p] += gy[i] * inv;
        }
    });
}

Var concat_channels(Tape& tape, Var a, Var b) {
    const Tensor& ta = tape.value(a);
    const Tensor& tb = tape.value(b);
    check_rank(ta, 4, "concat_channels");
    check_rank(tb, 4, "concat_channels");
    require(ta.dim(0) == tb.dim(0) && ta.dim(2) == tb.dim(2) && ta.dim(3) == tb.dim(3),
            ErrorKind::Argument,
            "concat_channels: shape mismatch " + shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    const int n = ta.dim(0);
    const std::size_t sa = ta.slice_size(), sb = tb.slice_size();
    Tensor y({n, ta.dim(1) + tb.dim(1), ta.dim(2), ta.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::copy_n(ta.data() + i * sa, sa, y.data() + i * (sa + sb));
        std::copy_n(tb.data() + i * sb, sb, y.data() + i * (sa + sb) + sa);
    }
    return tape.record(std::move(y), {a, b}, [=](Tape& t, const Tensor& gy) {
        if (t.requires_grad(a)) {
            Tensor& da = t.grad(a);
            for (int i = 0; i < n; ++i)
                for (std::size_t j = 0; j < sa; ++j) da[i * sa + j] += gy[i * (sa + sb) + j];
        }
        if (t.requires_grad(b)) {
            Tensor& db = t.grad(b);
            for (int i = 0; i < n; ++i)
                for (std::size_t j = 0; j < sb; ++j) db[i * sb + j] += gy[i * (sa + sb) + sa + j];
        }
    });
}

Var concat_batch(Tape& tape, const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::Argument, "concat_batch: no inputs");
    Shape shape = tape.value(parts.front()).shape();
    int total = 0;
    for (Var p : parts) {
        Shape s = tape.value(p).shape();
        require(s.size() == shape.size() && std::equal(s.begin() + 1, s.end(), shape.begin() + 1),
                ErrorKind::Argument, "concat_batch: trailing shape mismatch");
        total += s[0];
    }
    shape[0] = total;
    Tensor y(shape);
    std::size_t offset = 0;
    for (Var p : parts) {
        const Tensor& v = tape.value(p);
        std::copy_n(v.data(), v.numel(), y.data() + offset);
        offset += v.numel();
    }
    std::vector<Var> captured = parts;
    return tape.record(std::move(y), parts, [captured](Tape& t, const Tensor& gy) {
        std::size_t off = 0;
        for (Var p : captured) {
            const std::size_t n = t.value(p).numel();
            if (t.requires_grad(p)) {
                Tensor& dp = t.grad(p);
                for (std::size_t j = 0; j < n; ++j) dp[j] += gy[off + j];
            }
            off += n;
        }
    });
}

Var slice_batch(Tape& tape, Var x, int start, int count) {
    const Tensor& v = tape.value(x);
    require(v.rank() >= 1 && start >= 0 && count >= 0 && start + count <= v.dim(0), ErrorKind::Argument,
            "slice_batch: range out of bounds");
    Shape shape = v.shape();
    shape[0] = count;
    const std::size_t slice = v.slice_size();
    Tensor y(shape);
    std::copy_n(v.data() + start * slice, count * slice, y.data());
    return tape.record(std::move(y), {x}, [=](Tape& t, const Tensor& gy) {
        Tensor& dx = t.grad(x);
        for (std::size_t j = 0; j < gy.numel(); ++j) dx[start * slice + j] += gy[j];
    });
}

Var detach(Tape& tape, Var x) { return tape.constant(tape.value(x)); }

Var weighted_sum(Tape& tape, const std::vector<Var>& scalars, const std::vector<double>& weights) {
    require(scalars.size() == weights.size() && !scalars.empty(), ErrorKind::Argument,
            "weighted_sum: size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        total += weights[i] * tape.scalar(scalars[i]);
    }
    std::vector<Var> captured = scalars;
    std::vector<double> w = weights;
    return tape.record(Tensor({1}, total), scalars, [captured, w](Tape& t, const Tensor& gy) {
        for (std::size_t i = 0; i < captured.size(); ++i) {
            if (t.requires_grad(captured[i])) {
                t.grad(captured[i])[0] += w[i] * gy[0];
            }
        }
    });
}

}  // namespace ops

}  // namespace lsda
