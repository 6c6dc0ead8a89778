#include "attnprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "attnprompt/error.hpp"

namespace attnprompt {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        fail(ErrorKind::input_format, "tensor shape " + shape_string(shape_) + " does not match " +
                                          std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::vector(std::vector<float> data) {
    const std::size_t n = data.size();
    return Tensor(Shape{n}, std::move(data));
}

std::span<float> Tensor::row(std::size_t r) {
    const std::size_t cols = shape_.back();
    return std::span<float>(data_).subspan(r * cols, cols);
}

std::span<const float> Tensor::row(std::size_t r) const {
    const std::size_t cols = shape_.back();
    return std::span<const float>(data_).subspan(r * cols, cols);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite()) fail(ErrorKind::numeric, "non-finite values in " + what);
}

namespace ops {

Tensor matmul(const Tensor& x, const Tensor& w, const Tensor* bias) {
    const std::size_t n = x.dim(0), k = x.dim(1), m = w.dim(1);
    if (w.dim(0) != k) {
        fail(ErrorKind::input_format,
             "matmul shape mismatch " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
    }
    if (bias && bias->numel() != m) fail(ErrorKind::input_format, "matmul bias length mismatch");

    Tensor out({n, m});
    std::vector<double> acc(m);
    for (std::size_t i = 0; i < n; ++i) {
        if (bias) {
            for (std::size_t j = 0; j < m; ++j) acc[j] = (*bias)[j];
        } else {
            std::fill(acc.begin(), acc.end(), 0.0);
        }
        const float* xr = x.values().data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = xr[p];
            const float* wr = w.values().data() + p * m;
            for (std::size_t j = 0; j < m; ++j) acc[j] += xv * wr[j];
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) = static_cast<float>(acc[j]);
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                  std::vector<double>* means, std::vector<double>* variances) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor out({n, d});
    if (means) means->assign(n, 0.0);
    if (variances) variances->assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = x.row(i);
        double mean = 0.0;
        for (float v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (float v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out(i, j) = static_cast<float>((r[j] - mean) * inv * gamma[j] + beta[j]);
        }
        if (means) (*means)[i] = mean;
        if (variances) (*variances)[i] = var;
    }
    return out;
}

void softmax_rows(std::span<float> row) {
    if (row.empty()) return;
    const float mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (float& v : row) {
        v = static_cast<float>(std::exp(static_cast<double>(v) - mx));
        sum += v;
    }
    for (float& v : row) v = static_cast<float>(v / sum);
}

void activate(Tensor& x, Activation act) {
    for (float& v : x.values()) {
        const double z = v;
        if (act == Activation::gelu) {
            v = static_cast<float>(0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))));
        } else {
            v = static_cast<float>(z / (1.0 + std::exp(-1.702 * z)));
        }
    }
}

double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }
double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

}  // namespace ops

}  // namespace attnprompt
