#include "ceam/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ceam::ad {

Var Tape::constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, false});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, {}, record_, false});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (record_) {
        for (auto v : inputs) needs = needs || requires_grad(v);
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs, false});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad(Var v) {
    auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.has_grad) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

Matrix Tape::grad_of(Var v) const {
    const auto& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var out) {
    if (!record_) throw std::logic_error("backward() on a non-recording tape");
    if (value(out).size() != 1) throw std::invalid_argument("backward() needs a scalar output");
    grad(out)(0, 0) += 1.0;
    for (auto i = static_cast<std::int64_t>(out.id); i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || !n.has_grad || !n.backward) continue;
        // The closure may grow other nodes' buffers but never this one's.
        Matrix g = std::move(n.grad);
        n.backward(*this, g);
        n.grad = std::move(g);
    }
}

namespace {

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("shape error: ") + what);
}

}  // namespace

Var matmul_nt(Tape& t, Var a, Var w) {
    const auto& A = t.value(a);
    const auto& W = t.value(w);
    check(A.cols() == W.cols(), "matmul_nt inner dimensions differ");
    Matrix out = A * W.transpose();
    return t.push(std::move(out), {a, w}, [a, w](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(w);
        if (t.requires_grad(w)) t.grad(w).noalias() += g.transpose() * t.value(a);
    });
}

Var add_row(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    check(B.rows() == 1 && B.cols() == A.cols(), "add_row bias shape");
    Matrix out = A.rowwise() + B.row(0);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) += g.colwise().sum();
    });
}

Var add(Tape& t, Var a, Var b) {
    check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "add");
    Matrix out = t.value(a) + t.value(b);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) += g;
    });
}

Var sub(Tape& t, Var a, Var b) {
    check(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(), "sub");
    Matrix out = t.value(a) - t.value(b);
    return t.push(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a) += g;
        if (t.requires_grad(b)) t.grad(b) -= g;
    });
}

Var relu(Tape& t, Var a) {
    Matrix out = t.value(a).cwiseMax(0.0);
    return t.push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        t.grad(a).array() += (t.value(a).array() > 0.0).select(g.array(), 0.0);
    });
}

Var abs(Tape& t, Var a) {
    Matrix out = t.value(a).cwiseAbs();
    return t.push(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
        const auto& x = t.value(a).array();
        t.grad(a).array() += g.array() * ((x > 0.0).cast<double>() - (x < 0.0).cast<double>());
    });
}

Var concat_cols(Tape& t, Var a, Var b) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    check(A.rows() == B.rows(), "concat_cols row counts differ");
    Matrix out(A.rows(), A.cols() + B.cols());
    out.leftCols(A.cols()) = A;
    out.rightCols(B.cols()) = B;
    auto ka = A.cols();
    return t.push(std::move(out), {a, b}, [a, b, ka](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.grad(a) += g.leftCols(ka);
        if (t.requires_grad(b)) t.grad(b) += g.rightCols(g.cols() - ka);
    });
}

Var gather_rows(Tape& t, Var a, std::span<const std::uint32_t> rows) {
    const auto& A = t.value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        check(rows[i] < A.rows(), "gather_rows index out of range");
        out.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
    }
    std::vector<std::uint32_t> idx(rows.begin(), rows.end());
    return t.push(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    });
}

Var scatter_rows(Tape& t, std::size_t n, std::size_t cols, std::span<const RowBlock> blocks) {
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols));
    std::vector<Var> inputs;
    for (const auto& b : blocks) {
        const auto& V = t.value(b.value);
        check(static_cast<std::size_t>(V.rows()) == b.rows.size(), "scatter_rows block row count");
        check(static_cast<std::size_t>(V.cols()) == cols, "scatter_rows block width");
        for (std::size_t i = 0; i < b.rows.size(); ++i) {
            check(b.rows[i] < n, "scatter_rows destination out of range");
            out.row(b.rows[i]) = V.row(static_cast<Eigen::Index>(i));
        }
        inputs.push_back(b.value);
    }
    std::vector<RowBlock> saved(blocks.begin(), blocks.end());
    return t.push(std::move(out), inputs, [saved = std::move(saved)](Tape& t, const Matrix& g) {
        for (const auto& b : saved) {
            if (!t.requires_grad(b.value)) continue;
            auto& gb = t.grad(b.value);
            for (std::size_t i = 0; i < b.rows.size(); ++i) gb.row(static_cast<Eigen::Index>(i)) += g.row(b.rows[i]);
        }
    });
}

Var grouped_linear(Tape& t, Var x, std::span<const std::uint32_t> group, std::span<const Var> weights) {
    const auto& X = t.value(x);
    check(static_cast<std::size_t>(X.rows()) == group.size(), "grouped_linear group size");
    check(!weights.empty(), "grouped_linear without weights");
    auto out_dim = t.value(weights[0]).rows();
    std::vector<std::vector<std::uint32_t>> members(weights.size());
    for (std::uint32_t i = 0; i < group.size(); ++i) {
        check(group[i] < weights.size(), "grouped_linear group index");
        members[group[i]].push_back(i);
    }
    Matrix out(X.rows(), out_dim);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (members[k].empty()) continue;
        const auto& W = t.value(weights[k]);
        check(W.cols() == X.cols() && W.rows() == out_dim, "grouped_linear weight shape");
        Matrix xs(static_cast<Eigen::Index>(members[k].size()), X.cols());
        for (std::size_t i = 0; i < members[k].size(); ++i) xs.row(static_cast<Eigen::Index>(i)) = X.row(members[k][i]);
        Matrix ys = xs * W.transpose();
        for (std::size_t i = 0; i < members[k].size(); ++i) out.row(members[k][i]) = ys.row(static_cast<Eigen::Index>(i));
    }
    std::vector<Var> inputs{x};
    inputs.insert(inputs.end(), weights.begin(), weights.end());
    std::vector<Var> ws(weights.begin(), weights.end());
    return t.push(std::move(out), inputs,
                  [x, ws = std::move(ws), members = std::move(members)](Tape& t, const Matrix& g) {
        const auto& X = t.value(x);
        bool gx = t.requires_grad(x);
        for (std::size_t k = 0; k < ws.size(); ++k) {
            const auto& m = members[k];
            if (m.empty()) continue;
            Matrix gs(static_cast<Eigen::Index>(m.size()), g.cols());
            Matrix xs(static_cast<Eigen::Index>(m.size()), X.cols());
            for (std::size_t i = 0; i < m.size(); ++i) {
                gs.row(static_cast<Eigen::Index>(i)) = g.row(m[i]);
                xs.row(static_cast<Eigen::Index>(i)) = X.row(m[i]);
            }
            if (t.requires_grad(ws[k])) t.grad(ws[k]).noalias() += gs.transpose() * xs;
            if (gx) {
                Matrix gxs = gs * t.value(ws[k]);
                auto& gX = t.grad(x);
                for (std::size_t i = 0; i < m.size(); ++i) gX.row(m[i]) += gxs.row(static_cast<Eigen::Index>(i));
            }
        }
    });
}

Var sigmoid_bce(Tape& t, Var logits, std::span<const double> labels, BceStats* stats) {
    const auto& Z = t.value(logits);
    check(Z.cols() == 1 && static_cast<std::size_t>(Z.rows()) == labels.size(), "sigmoid_bce shape");
    check(!labels.empty(), "sigmoid_bce on empty batch");
    // logit(1e-12) and logit(1 - 1e-12)
    const double lo = std::log(1e-12) - std::log1p(-1e-12);
    const double hi = -lo;
    auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
    auto n = static_cast<double>(labels.size());
    double loss = 0.0;
    Matrix dz(Z.rows(), 1);
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        double z = Z(i, 0);
        double y = labels[static_cast<std::size_t>(i)];
        bool clamped = z < lo || z > hi;
        if (clamped && stats) ++stats->clamped;
        double zc = std::clamp(z, lo, hi);
        loss += y * softplus(-zc) + (1.0 - y) * softplus(zc);
        dz(i, 0) = clamped ? 0.0 : (1.0 / (1.0 + std::exp(-z)) - y) / n;
    }
    Matrix out(1, 1);
    out(0, 0) = loss / n;
    return t.push(std::move(out), {logits}, [logits, dz = std::move(dz)](Tape& t, const Matrix& g) {
        t.grad(logits) += g(0, 0) * dz;
    });
}

}  // namespace ceam::ad
