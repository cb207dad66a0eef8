#include "unimot/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "unimot/error.hpp"
#include "unimot/ops.hpp"

namespace unimot::ad {

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Tensor& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
    Node n;
    n.external = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    params_.emplace(&p, id);
    return Var{id};
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (n.grad.empty() && n.value_ref().size() != 0) n.grad = Tensor(n.value_ref().shape());
    return n.grad;
}

const Tensor* Tape::grad(Var v) const {
    const Node& n = node(v);
    return n.grad.empty() ? nullptr : &n.grad;
}

Tensor Tape::grad_of(const Tensor& p) const {
    auto it = params_.find(&p);
    if (it == params_.end()) return Tensor(p.shape());
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    return n.grad.empty() ? Tensor(p.shape()) : n.grad;
}

void Tape::backward(Var loss) {
    require(value(loss).size() == 1, ErrorCode::shape_mismatch, "backward: loss must be a single value");
    if (!requires_grad(loss)) return;
    grad_buffer(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward || n.grad.empty()) continue;
        // The node's own gradient is final once every later node has run.
        const Tensor g = std::move(n.grad);
        n.grad = Tensor();
        n.backward(*this, g);
        n.grad = g;
    }
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
    return std::any_of(vs.begin(), vs.end(), [&](Var v) { return t.requires_grad(v); });
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    Tensor out = unimot::matmul(av, bv);
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        const Tensor& av = tp.value(a);
        const Tensor& bv = tp.value(b);
        const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
        if (tp.requires_grad(a)) {
            kernels::gemm_nt(m, n, k, g.data().data(), bv.data().data(), tp.grad_buffer(a).data().data(), true);
        }
        if (tp.requires_grad(b)) {
            kernels::gemm_tn(m, k, n, av.data().data(), g.data().data(), tp.grad_buffer(b).data().data(), true);
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    Tensor out = unimot::add(t.value(a), t.value(b));
    return t.record(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, const Tensor& g) {
        for (Var v : {a, b}) {
            if (!tp.requires_grad(v)) continue;
            Tensor& gb = tp.grad_buffer(v);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Var add_bias(Tape& t, Var x, Var bias) {
    const Tensor& xv = t.value(x);
    const Tensor& bv = t.value(bias);
    require(bv.size() == xv.cols(), ErrorCode::shape_mismatch,
            "add_bias: bias " + shape_str(bv.shape()) + " vs input " + shape_str(xv.shape()));
    Tensor out = xv;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
    }
    return t.record(std::move(out), any_grad(t, {x, bias}), [x, bias](Tape& tp, const Tensor& g) {
        if (tp.requires_grad(x)) {
            Tensor& gx = tp.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.requires_grad(bias)) {
            Tensor& gb = tp.grad_buffer(bias);
            const std::size_t c = g.cols();
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
            }
        }
    });
}

Var add_const(Tape& t, Var x, const Tensor& c) {
    Tensor out = unimot::add(t.value(x), c);
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var scale(Tape& t, Var x, double s) {
    Tensor out = unimot::scale(t.value(x), s);
    return t.record(std::move(out), t.requires_grad(x), [x, s](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
    });
}

Var gelu(Tape& t, Var x) {
    Tensor out = unimot::gelu(t.value(x));
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad(xv[i]);
    });
}

Var rms_norm(Tape& t, Var x, Var gain, double eps) {
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gain);
    require(gv.size() == xv.cols(), ErrorCode::shape_mismatch,
            "rms_norm: gain " + shape_str(gv.shape()) + " vs input " + shape_str(xv.shape()));
    require(eps > 0.0, ErrorCode::invalid_argument, "rms_norm on the tape needs eps > 0");
    const std::size_t d = xv.cols();
    const std::size_t n = xv.rows();
    std::vector<double> inv(n);
    Tensor out = xv;
    for (std::size_t r = 0; r < n; ++r) {
        auto row = out.row(r);
        double ms = 0.0;
        for (double v : row) ms += v * v;
        inv[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
        for (std::size_t j = 0; j < d; ++j) row[j] = row[j] * inv[r] * gv[j];
    }
    return t.record(std::move(out), any_grad(t, {x, gain}),
                    [x, gain, inv = std::move(inv)](Tape& tp, const Tensor& g) {
                        const Tensor& xv = tp.value(x);
                        const Tensor& gv = tp.value(gain);
                        const std::size_t d = xv.cols();
                        const double dd = static_cast<double>(d);
                        Tensor* gx = tp.requires_grad(x) ? &tp.grad_buffer(x) : nullptr;
                        Tensor* gg = tp.requires_grad(gain) ? &tp.grad_buffer(gain) : nullptr;
                        for (std::size_t r = 0; r < xv.rows(); ++r) {
                            const double* xr = xv.data().data() + r * d;
                            const double* gr = g.data().data() + r * d;
                            const double s = inv[r];
                            if (gg) {
                                for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * xr[j] * s;
                            }
                            if (gx) {
                                // y_j = x_j s w_j,  ds/dx_k = -s^3 x_k / d
                                double c = 0.0;
                                for (std::size_t j = 0; j < d; ++j) c += gr[j] * gv[j] * xr[j];
                                double* out = gx->data().data() + r * d;
                                for (std::size_t k = 0; k < d; ++k) {
                                    out[k] += gr[k] * gv[k] * s - c * s * s * s * xr[k] / dd;
                                }
                            }
                        }
                    });
}

Var reshape(Tape& t, Var x, Shape shape) {
    Tensor out = t.value(x).reshaped(std::move(shape));
    return t.record(std::move(out), t.requires_grad(x), [x](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

Var gather_rows(Tape& t, Var x, std::span<const std::size_t> rows) {
    const Tensor& xv = t.value(x);
    const std::size_t c = xv.cols();
    Tensor out({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < xv.rows(), ErrorCode::invalid_argument, "gather_rows: row index out of range");
        std::copy_n(xv.data().data() + rows[i] * c, c, out.data().data() + i * c);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return t.record(std::move(out), t.requires_grad(x), [x, idx = std::move(idx)](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        const std::size_t c = g.cols();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = gx.data().data() + idx[i] * c;
            const double* src = g.data().data() + i * c;
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Var merge_rows(Tape& t, std::size_t n, std::span<const std::pair<Var, std::vector<std::size_t>>> parts) {
    std::size_t c = 0;
    bool needs = false;
    for (const auto& [v, idx] : parts) {
        if (!idx.empty()) c = t.value(v).cols();
        needs = needs || t.requires_grad(v);
    }
    Tensor out({n, c});
    std::vector<bool> seen(n, false);
    for (const auto& [v, idx] : parts) {
        const Tensor& pv = t.value(v);
        require(pv.rows() == idx.size(), ErrorCode::shape_mismatch, "merge_rows: part row count mismatch");
        for (std::size_t i = 0; i < idx.size(); ++i) {
            require(idx[i] < n && !seen[idx[i]], ErrorCode::invalid_argument, "merge_rows: bad destination row");
            require(pv.cols() == c, ErrorCode::shape_mismatch, "merge_rows: column mismatch");
            seen[idx[i]] = true;
            std::copy_n(pv.data().data() + i * c, c, out.data().data() + idx[i] * c);
        }
    }
    std::vector<std::pair<Var, std::vector<std::size_t>>> saved(parts.begin(), parts.end());
    return t.record(std::move(out), needs, [saved = std::move(saved)](Tape& tp, const Tensor& g) {
        const std::size_t c = g.cols();
        for (const auto& [v, idx] : saved) {
            if (!tp.requires_grad(v) || idx.empty()) continue;
            Tensor& gv = tp.grad_buffer(v);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* src = g.data().data() + idx[i] * c;
                double* dst = gv.data().data() + i * c;
                for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        }
    });
}

Var gather_flat(Tape& t, Var x, Shape out_shape, std::vector<std::size_t> index) {
    const Tensor& xv = t.value(x);
    require(shape_numel(out_shape) == index.size(), ErrorCode::shape_mismatch, "gather_flat: index/shape mismatch");
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] < xv.size(), ErrorCode::invalid_argument, "gather_flat: index out of range");
        out[i] = xv[index[i]];
    }
    return t.record(std::move(out), t.requires_grad(x), [x, index = std::move(index)](Tape& tp, const Tensor& g) {
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
    });
}

Var cross_entropy_sum(Tape& t, Var logits, std::span<const int> targets) {
    const Tensor& lv = t.value(logits);
    require(lv.rows() == targets.size(), ErrorCode::shape_mismatch,
            "cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(lv.rows()) + " rows");
    Tensor probs = softmax_last(lv);
    double total = 0.0;
    const std::size_t v = lv.cols();
    for (std::size_t r = 0; r < targets.size(); ++r) {
        require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < v, ErrorCode::invalid_argument,
                "cross_entropy: target " + std::to_string(targets[r]) + " outside vocab of " + std::to_string(v));
        // log p via log-sum-exp keeps the tail accurate
        auto row = lv.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double z : row) s += std::exp(z - mx);
        total += -(row[static_cast<std::size_t>(targets[r])] - mx - std::log(s));
    }
    std::vector<int> tg(targets.begin(), targets.end());
    return t.record(Tensor::scalar(total), t.requires_grad(logits),
                    [logits, probs = std::move(probs), tg = std::move(tg)](Tape& tp, const Tensor& g) {
                        Tensor& gl = tp.grad_buffer(logits);
                        const std::size_t v = probs.cols();
                        for (std::size_t r = 0; r < tg.size(); ++r) {
                            for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += g[0] * probs[r * v + j];
                            gl[r * v + static_cast<std::size_t>(tg[r])] -= g[0];
                        }
                    });
}

Var mse(Tape& t, Var x, const Tensor& target) {
    const Tensor& xv = t.value(x);
    require(xv.size() == target.size(), ErrorCode::shape_mismatch,
            "mse: " + shape_str(xv.shape()) + " vs " + shape_str(target.shape()));
    CompensatedSum s;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double d = xv[i] - target[i];
        s.add(d * d);
    }
    const double n = static_cast<double>(xv.size());
    return t.record(Tensor::scalar(s.value() / n), t.requires_grad(x), [x, target, n](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        Tensor& gx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[0] * 2.0 * (xv[i] - target[i]) / n;
    });
}

Var weighted_sum(Tape& t, std::span<const std::pair<Var, double>> terms) {
    double s = 0.0;
    bool needs = false;
    for (const auto& [v, w] : terms) {
        require(t.value(v).size() == 1, ErrorCode::shape_mismatch, "weighted_sum: terms must be scalars");
        s += w * t.value(v)[0];
        needs = needs || t.requires_grad(v);
    }
    std::vector<std::pair<Var, double>> saved(terms.begin(), terms.end());
    return t.record(Tensor::scalar(s), needs, [saved = std::move(saved)](Tape& tp, const Tensor& g) {
        for (const auto& [v, w] : saved) {
            if (tp.requires_grad(v)) tp.grad_buffer(v)[0] += w * g[0];
        }
    });
}

}  // namespace unimot::ad
