#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace attnprompt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<float> data);

    /// Rank-1 tensor owning `data`.
    static Tensor vector(std::vector<float> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    const std::vector<float>& data() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // 2-D access, unchecked.
    float& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::span<float> row(std::size_t r);
    std::span<const float> row(std::size_t r) const;

    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Throws ErrorKind::numeric naming `what` when any value is NaN/Inf.
void require_finite(const Tensor& t, const std::string& what);

namespace ops {

// y = x * w (+ bias), x: [n, k], w: [k, m], bias: [m] or empty. 64-bit accumulation.
Tensor matmul(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

// Row-wise layer normalization; optionally reports per-row mean and variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  std::vector<double>* means = nullptr, std::vector<double>* variances = nullptr);

void softmax_rows(std::span<float> row);

enum class Activation { gelu, quick_gelu };
void activate(Tensor& x, Activation act);

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const float> a);
double norm(std::span<const double> a);

/// Cosine similarity; returns 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace ops

}  // namespace attnprompt
