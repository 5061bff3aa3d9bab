#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace lsda {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Rank-4 tensors use NCHW layout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t numel() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    double& at(int n, int c, int h, int w) noexcept {
        return values_[offset(n, c, h, w)];
    }
    double at(int n, int c, int h, int w) const noexcept {
        return values_[offset(n, c, h, w)];
    }

    // Elements per leading-axis slice (C*H*W for NCHW).
    std::size_t slice_size() const noexcept {
        return shape_.empty() || shape_[0] == 0 ? 0 : values_.size() / static_cast<std::size_t>(shape_[0]);
    }

    void fill(double value);
    void reshape(Shape shape);
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    Tensor& operator+=(const Tensor& other);

private:
    std::size_t offset(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Shape shape_;
    std::vector<double> values_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& t);

// Throws Error(Argument) when shapes differ; `what` names the calling operation.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);
void check_rank(const Tensor& t, int rank, const char* what);

}  // namespace lsda
