#include "lsda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lsda/error.hpp"

namespace lsda {

std::string_view kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Argument: return "argument";
        case ErrorKind::Precondition: return "precondition";
        case ErrorKind::Config: return "config-invalid";
        case ErrorKind::Consistency: return "consistency";
        case ErrorKind::Divergence: return "training-divergence";
        case ErrorKind::Io: return "io";
        case ErrorKind::CorruptCheckpoint: return "corrupt-checkpoint";
    }
    return "runtime";
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? ", " : "") << shape[i];
    }
    out << ')';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        require(d >= 0, ErrorKind::Argument, "negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    require(values_.size() == shape_numel(shape_), ErrorKind::Argument,
            "tensor value count does not match shape " + shape_str(shape_));
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

void Tensor::reshape(Shape shape) {
    require(shape_numel(shape) == values_.size(), ErrorKind::Argument,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
}

Tensor& Tensor::operator+=(const Tensor& other) {
    check_same_shape(*this, other, "tensor +=");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] += other.values_[i];
    }
    return *this;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

double squared_norm(const Tensor& t) {
    double sum = 0.0;
    for (double v : t.values()) {
        sum += v * v;
    }
    return sum;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::Argument, std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
    }
}

void check_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        fail(ErrorKind::Argument, std::string(what) + ": expected rank " + std::to_string(rank) +
                                      ", got shape " + shape_str(t.shape()));
    }
}

}  // namespace lsda
