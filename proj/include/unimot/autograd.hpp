#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "unimot/tensor.hpp"

// Minimal reverse-mode tape. Values are computed eagerly when an op is recorded;
// backward() walks the tape once in reverse.
namespace unimot::ad {

struct Var {
    int id = -1;
    bool valid() const noexcept { return id >= 0; }
};

class Tape;
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

class Tape {
public:
    Var constant(Tensor value);
    // Binds an external parameter without copying. One node per parameter per tape.
    Var param(const Tensor& p);
    Var record(Tensor value, bool requires_grad, BackwardFn backward);

    const Tensor& value(Var v) const { return node(v).value_ref(); }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
    void backward(Var loss);

    // Accumulation target for the gradient of `v`; allocated as zeros on first use.
    Tensor& grad_buffer(Var v);
    const Tensor* grad(Var v) const;
    // Gradient w.r.t. a parameter bound through param(); zeros if it was never used.
    Tensor grad_of(const Tensor& p) const;

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;

        const Tensor& value_ref() const { return external ? *external : value; }
    };

    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }

    std::deque<Node> nodes_;
    std::unordered_map<const Tensor*, int> params_;
};

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
// x[r, :] + bias for every row; bias holds cols(x) values.
Var add_bias(Tape& t, Var x, Var bias);
Var add_const(Tape& t, Var x, const Tensor& c);
Var scale(Tape& t, Var x, double s);
Var gelu(Tape& t, Var x);
Var rms_norm(Tape& t, Var x, Var gain, double eps);

Var reshape(Tape& t, Var x, Shape shape);
Var gather_rows(Tape& t, Var x, std::span<const std::size_t> rows);
// Output of `n` rows; part i supplies the rows listed in its index vector.
Var merge_rows(Tape& t, std::size_t n, std::span<const std::pair<Var, std::vector<std::size_t>>> parts);
// out.flat[i] = x.flat[index[i]]; backward scatter-adds.
Var gather_flat(Tape& t, Var x, Shape out_shape, std::vector<std::size_t> index);

// Sum over rows of -log softmax(logits[r])[targets[r]]; returns a [1] tensor.
Var cross_entropy_sum(Tape& t, Var logits, std::span<const int> targets);
// mean((x - target)^2) as a [1] tensor.
Var mse(Tape& t, Var x, const Tensor& target);
// Σ w_i · v_i over [1] tensors.
Var weighted_sum(Tape& t, std::span<const std::pair<Var, double>> terms);

}  // namespace unimot::ad
