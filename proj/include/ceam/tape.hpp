#pragma once
// Minimal reverse-mode differentiation over dense row-major matrices.
//
// Every op appends a node holding its value and a closure that pushes the
// node's gradient into its inputs. backward() walks the nodes in reverse
// insertion order, so gradient accumulation order is fixed for a given
// sequence of ops.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ceam/linalg.hpp"

namespace ceam::ad {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

    // With recording off no closures are kept and backward() is unavailable.
    explicit Tape(bool record = true) : record_(record) {}

    Var constant(Matrix value);
    Var leaf(Matrix value);  // differentiable input

    Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
    Var push(Matrix value, std::span<const Var> inputs, Backward backward);

    const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
    bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
    bool recording() const { return record_; }

    // Gradient buffer of v (zero-initialised on first access).
    Matrix& grad(Var v);
    // Gradient of v after backward(); zeros when nothing flowed into it.
    Matrix grad_of(Var v) const;

    // Seeds d(out)/d(out) = 1 for a 1x1 output.
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }

    // Stores `value` for the tape's lifetime; closures may hold references to it.
    template <class T>
    const T& keep(T value) {
        auto p = std::make_shared<T>(std::move(value));
        const T& ref = *p;
        kept_.push_back(std::move(p));
        return ref;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool requires_grad = false;
        bool has_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<void>> kept_;
    bool record_;
};

// A . W^T  (A: n x k, W: m x k)
Var matmul_nt(Tape& t, Var a, Var w);
// A + 1 b  (b: 1 x m)
Var add_row(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var relu(Tape& t, Var a);
Var abs(Tape& t, Var a);
// [A | B]
Var concat_cols(Tape& t, Var a, Var b);
Var gather_rows(Tape& t, Var a, std::span<const std::uint32_t> rows);

struct RowBlock {
    Var value;
    std::vector<std::uint32_t> rows;  // destination row of each source row
};
// n x cols matrix of zeros with each block's rows written to its destinations.
Var scatter_rows(Tape& t, std::size_t n, std::size_t cols, std::span<const RowBlock> blocks);

// Row i multiplied by weights[group[i]]^T. Groups index into `weights`.
Var grouped_linear(Tape& t, Var x, std::span<const std::uint32_t> group, std::span<const Var> weights);

struct BceStats {
    std::size_t clamped = 0;
};
// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels; p is
// clamped to [1e-12, 1 - 1e-12] and clamped entries pass no gradient.
Var sigmoid_bce(Tape& t, Var logits, std::span<const double> labels, BceStats* stats = nullptr);

}  // namespace ceam::ad
