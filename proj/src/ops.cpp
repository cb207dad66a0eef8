#include "unimot/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "kernels.hpp"
#include "unimot/error.hpp"

namespace unimot {

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorCode::shape_mismatch,
            "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + " has mismatched inner extents");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    kernels::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data(), false);
    return out;
}

double gelu(double x) noexcept {
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x) noexcept {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = gelu(v);
    return out;
}

Tensor softmax_last(const Tensor& x) {
    require(x.cols() >= 1, ErrorCode::shape_mismatch, "softmax_last: empty last extent");
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            s += v;
        }
        for (double& v : row) v /= s;
    }
    return out;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
    require(gain.size() == x.cols(), ErrorCode::shape_mismatch,
            "rms_norm: gain " + shape_str(gain.shape()) + " vs input " + shape_str(x.shape()));
    Tensor out = x;
    const std::size_t d = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = out.row(r);
        double ms = 0.0;
        for (double v : row) ms += v * v;
        ms /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(ms + eps);
        if (!std::isfinite(inv)) {
            // eps = 0 and an all-zero row: leave zeros in place
            std::fill(row.begin(), row.end(), 0.0);
            continue;
        }
        for (std::size_t j = 0; j < d; ++j) row[j] = row[j] * inv * gain[j];
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) noexcept {
    return std::sqrt(dot(v, v));
}

namespace {

void check_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), ErrorCode::shape_mismatch,
            std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace unimot
