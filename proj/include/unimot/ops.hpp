#pragma once

#include <cmath>
#include <span>

#include "unimot/tensor.hpp"

namespace unimot {

// Exact dense product of [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;
Tensor gelu(const Tensor& x);

// Softmax over the last extent, max-subtracted.
Tensor softmax_last(const Tensor& x);

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

double l2_norm(std::span<const double> v) noexcept;
double dot(std::span<const double> a, std::span<const double> b) noexcept;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// Neumaier-compensated running sum; error stays near one rounding regardless of
// the number of terms.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) comp_ += (sum_ - t) + x;
        else comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Largest |a_i - b_i|; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace unimot
