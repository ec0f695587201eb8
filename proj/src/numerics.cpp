#include "mega/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mega {

namespace {

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int r = 0; r < a.rows(); ++r)
        for (int c = 0; c < a.cols(); ++c) t.at(c, r) = a.at(r, c);
    return t;
}

// Common tape of the tracked inputs; nullptr when every input is a constant.
Tape* tape_of(std::initializer_list<const Var*> vars) {
    Tape* t = nullptr;
    for (const Var* v : vars) {
        if (!v->tracked()) continue;
        if (t != nullptr && t != v->tape) throw ContractViolation("operation mixes values from two tapes");
        t = v->tape;
    }
    return t;
}

Var make_var(Matrix value, Tape* t, Tape::BackwardFn fn) {
    Var out(std::move(value));
    if (t != nullptr) {
        out.tape = t;
        out.node = t->record(out.value.rows(), out.value.cols(), std::move(fn));
    }
    return out;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix();
    const int cols = static_cast<int>(rows.front().size());
    Matrix m(static_cast<int>(rows.size()), cols);
    for (int r = 0; r < m.rows(); ++r) {
        if (static_cast<int>(rows[r].size()) != cols)
            throw ContractViolation("Matrix::from_rows: ragged input");
        for (int c = 0; c < cols; ++c) m.at(r, c) = rows[r][c];
    }
    return m;
}

Matrix Matrix::row_vector(const std::vector<double>& v) {
    Matrix m(1, static_cast<int>(v.size()));
    for (int c = 0; c < m.cols(); ++c) m.at(0, c) = v[c];
    return m;
}

bool Matrix::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Matrix::shape_str() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractViolation("max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

Matrix mat_mul(const Matrix& a, const Matrix& b, bool transpose_b) {
    const int inner = transpose_b ? b.cols() : b.rows();
    const int out_cols = transpose_b ? b.rows() : b.cols();
    if (a.cols() != inner)
        throw ContractViolation("mat_mul: inner dimension mismatch " + a.shape_str() + " vs " + b.shape_str() +
                                (transpose_b ? " (transposed)" : ""));
    Matrix c(a.rows(), out_cols);
    if (transpose_b) {
        for (int i = 0; i < a.rows(); ++i)
            for (int j = 0; j < out_cols; ++j) {
                double acc = 0.0;
                for (int k = 0; k < inner; ++k) acc += a.at(i, k) * b.at(j, k);
                c.at(i, j) = acc;
            }
    } else {
        for (int i = 0; i < a.rows(); ++i)
            for (int k = 0; k < inner; ++k) {
                const double aik = a.at(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < out_cols; ++j) c.at(i, j) += aik * b.at(k, j);
            }
    }
    return c;
}

Matrix mat_add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractViolation("mat_add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Matrix mat_sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ContractViolation("mat_sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

Matrix mat_scale(const Matrix& a, double s) {
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= s;
    return c;
}

std::vector<double> softmax(const std::vector<double>& v) {
    if (v.empty()) throw ContractViolation("softmax: empty input");
    const double c = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - c);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// --- Tape -------------------------------------------------------------------

Var Tape::watch(Param& p) {
    for (const auto& [ptr, node] : watched_)
        if (ptr == &p) {
            Var out(p.value);
            out.tape = this;
            out.node = node;
            return out;
        }
    Param* pp = &p;
    const int node = record(p.value.rows(), p.value.cols(), [pp](const Matrix& g, Tape&) {
        if (!g.same_shape(pp->grad))
            throw ContractViolation("leaf gradient shape mismatch for " + pp->name);
        for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
    });
    watched_.emplace_back(pp, node);
    Var out(p.value);
    out.tape = this;
    out.node = node;
    return out;
}

int Tape::record(int rows, int cols, BackwardFn fn) {
    nodes_.push_back(Node{rows, cols, std::move(fn)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int node, const Matrix& contribution) {
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
        throw ContractViolation("Tape::accumulate: bad node index");
    const Node& n = nodes_[node];
    if (contribution.rows() != n.rows || contribution.cols() != n.cols)
        throw ContractViolation("Tape::accumulate: gradient shape " + contribution.shape_str() + " does not match node shape");
    Matrix& g = grads_[node];
    if (g.empty() && !(n.rows == 0 || n.cols == 0)) {
        g = contribution;
        return;
    }
    if (g.empty()) g = Matrix(n.rows, n.cols);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

void Tape::backward(const Var& root) {
    if (!root.tracked() || root.tape != this)
        throw ContractViolation("Tape::backward: root is not tracked on this tape");
    if (root.value.rows() != 1 || root.value.cols() != 1)
        throw ContractViolation("Tape::backward: root must be a 1x1 scalar, got " + root.value.shape_str());
    accumulate(root.node, Matrix::filled(1, 1, 1.0));
    for (int i = root.node; i >= 0; --i) {
        if (grads_[i].empty()) continue;
        if (nodes_[i].backward) nodes_[i].backward(grads_[i], *this);
    }
}

// --- tracked operations -----------------------------------------------------

Var matmul(const Var& a, const Var& b, bool transpose_b) {
    Tape* t = tape_of({&a, &b});
    Matrix value = mat_mul(a.value, b.value, transpose_b);
    const int an = a.node;
    const int bn = b.node;
    const bool at = a.tracked();
    const bool bt = b.tracked();
    Matrix av = bt ? a.value : Matrix();
    Matrix bv = at ? b.value : Matrix();
    return make_var(std::move(value), t, [an, bn, at, bt, av, bv, transpose_b](const Matrix& g, Tape& tape) {
        if (at) tape.accumulate(an, transpose_b ? mat_mul(g, bv) : mat_mul(g, bv, true));
        if (bt) tape.accumulate(bn, transpose_b ? mat_mul(transpose(g), av) : mat_mul(transpose(av), g));
    });
}

Var add(const Var& a, const Var& b) {
    Tape* t = tape_of({&a, &b});
    Matrix value = mat_add(a.value, b.value);
    const int an = a.node;
    const int bn = b.node;
    const bool at = a.tracked();
    const bool bt = b.tracked();
    return make_var(std::move(value), t, [an, bn, at, bt](const Matrix& g, Tape& tape) {
        if (at) tape.accumulate(an, g);
        if (bt) tape.accumulate(bn, g);
    });
}

Var scale(const Var& a, double s) {
    Tape* t = tape_of({&a});
    const int an = a.node;
    return make_var(mat_scale(a.value, s), t, [an, s](const Matrix& g, Tape& tape) {
        tape.accumulate(an, mat_scale(g, s));
    });
}

Var relu(const Var& a) {
    Tape* t = tape_of({&a});
    Matrix value = a.value;
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = std::max(0.0, value[i]);
    const int an = a.node;
    Matrix av = t ? a.value : Matrix();
    return make_var(std::move(value), t, [an, av](const Matrix& g, Tape& tape) {
        Matrix d = g;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (av[i] <= 0.0) d[i] = 0.0;
        tape.accumulate(an, d);
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias, Activation act) {
    require(bias.value.rows() == 1, "linear: bias must be 1 x out, got " + bias.value.shape_str());
    require(bias.value.cols() == weight.value.rows(),
            "linear: bias width does not match weight rows, " + bias.value.shape_str() + " vs " + weight.value.shape_str());
    Tape* t = tape_of({&x, &weight, &bias});
    Matrix pre = mat_mul(x.value, weight.value, true);
    for (int r = 0; r < pre.rows(); ++r)
        for (int c = 0; c < pre.cols(); ++c) pre.at(r, c) += bias.value.at(0, c);
    Matrix value = pre;
    if (act == Activation::relu)
        for (std::size_t i = 0; i < value.size(); ++i) value[i] = std::max(0.0, value[i]);

    const int xn = x.node;
    const int wn = weight.node;
    const int bn = bias.node;
    const bool xt = x.tracked();
    const bool wt = weight.tracked();
    const bool bt = bias.tracked();
    Matrix xv = t ? x.value : Matrix();
    Matrix wv = t ? weight.value : Matrix();
    Matrix prev = (t && act == Activation::relu) ? pre : Matrix();
    return make_var(std::move(value), t, [=](const Matrix& g, Tape& tape) {
        Matrix gp = g;
        if (act == Activation::relu)
            for (std::size_t i = 0; i < gp.size(); ++i)
                if (prev[i] <= 0.0) gp[i] = 0.0;
        if (xt) tape.accumulate(xn, mat_mul(gp, wv));
        if (wt) tape.accumulate(wn, mat_mul(transpose(gp), xv));
        if (bt) {
            Matrix db(1, gp.cols());
            for (int r = 0; r < gp.rows(); ++r)
                for (int c = 0; c < gp.cols(); ++c) db.at(0, c) += gp.at(r, c);
            tape.accumulate(bn, db);
        }
    });
}

Var softmax_rows(const Var& logits) {
    Tape* t = tape_of({&logits});
    Matrix value(logits.value.rows(), logits.value.cols());
    for (int r = 0; r < value.rows(); ++r) {
        const std::vector<double> w = softmax(logits.value.row(r));
        for (int c = 0; c < value.cols(); ++c) value.at(r, c) = w[c];
    }
    const int ln = logits.node;
    Matrix wv = t ? value : Matrix();
    return make_var(std::move(value), t, [ln, wv](const Matrix& g, Tape& tape) {
        Matrix d(g.rows(), g.cols());
        for (int r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < g.cols(); ++c) dot += g.at(r, c) * wv.at(r, c);
            for (int c = 0; c < g.cols(); ++c) d.at(r, c) = wv.at(r, c) * (g.at(r, c) - dot);
        }
        tape.accumulate(ln, d);
    });
}

Var gated_softmax_rows(const Var& logits, const Var& gates) {
    require(logits.value.same_shape(gates.value),
            "gated_softmax_rows: shape mismatch " + logits.value.shape_str() + " vs " + gates.value.shape_str());
    require(logits.value.cols() > 0, "gated_softmax_rows: empty rows");
    Tape* t = tape_of({&logits, &gates});

    const int rows = logits.value.rows();
    const int cols = logits.value.cols();
    Matrix value(rows, cols);
    Matrix ratio(rows, cols);  // exp(a_j - c) / gated sum, used by the gate gradient
    std::vector<char> fallback(static_cast<std::size_t>(rows), 0);
    for (int r = 0; r < rows; ++r) {
        double c = logits.value.at(r, 0);
        for (int j = 1; j < cols; ++j) c = std::max(c, logits.value.at(r, j));
        std::vector<double> e(static_cast<std::size_t>(cols));
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            e[j] = std::exp(logits.value.at(r, j) - c);
            s += gates.value.at(r, j) * e[j];
        }
        if (s > 0.0) {
            for (int j = 0; j < cols; ++j) {
                value.at(r, j) = gates.value.at(r, j) * e[j] / s;
                ratio.at(r, j) = e[j] / s;
            }
        } else {
            fallback[r] = 1;
            const std::vector<double> w = softmax(logits.value.row(r));
            for (int j = 0; j < cols; ++j) value.at(r, j) = w[j];
        }
    }

    const int ln = logits.node;
    const int gn = gates.node;
    const bool lt = logits.tracked();
    const bool gt = gates.tracked();
    Matrix wv = t ? value : Matrix();
    Matrix rv = t ? ratio : Matrix();
    return make_var(std::move(value), t, [ln, gn, lt, gt, wv, rv, fallback](const Matrix& g, Tape& tape) {
        Matrix da(g.rows(), g.cols());
        Matrix dg(g.rows(), g.cols());
        for (int r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (int c = 0; c < g.cols(); ++c) dot += g.at(r, c) * wv.at(r, c);
            for (int c = 0; c < g.cols(); ++c) {
                da.at(r, c) = wv.at(r, c) * (g.at(r, c) - dot);
                // The fallback branch is constant in the gates; its rows keep
                // zero gate gradient.
                if (!fallback[r]) dg.at(r, c) = rv.at(r, c) * (g.at(r, c) - dot);
            }
        }
        if (lt) tape.accumulate(ln, da);
        if (gt) tape.accumulate(gn, dg);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no parts");
    const int cols = parts.front().value.cols();
    int rows = 0;
    for (const Var& p : parts) {
        require(p.value.cols() == cols, "concat_rows: column mismatch " + p.value.shape_str());
        rows += p.value.rows();
    }
    Tape* t = nullptr;
    for (const Var& p : parts)
        if (p.tracked()) {
            if (t != nullptr && t != p.tape) throw ContractViolation("concat_rows: parts from two tapes");
            t = p.tape;
        }
    Matrix value(rows, cols);
    struct Span {
        int node;
        int offset;
        int rows;
    };
    std::vector<Span> spans;
    int off = 0;
    for (const Var& p : parts) {
        for (int r = 0; r < p.value.rows(); ++r)
            for (int c = 0; c < cols; ++c) value.at(off + r, c) = p.value.at(r, c);
        if (p.tracked()) spans.push_back(Span{p.node, off, p.value.rows()});
        off += p.value.rows();
    }
    return make_var(std::move(value), t, [spans, cols](const Matrix& g, Tape& tape) {
        for (const auto& s : spans) {
            Matrix part(s.rows, cols);
            for (int r = 0; r < s.rows; ++r)
                for (int c = 0; c < cols; ++c) part.at(r, c) = g.at(s.offset + r, c);
            tape.accumulate(s.node, part);
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const int rows = parts.front().value.rows();
    int cols = 0;
    for (const Var& p : parts) {
        require(p.value.rows() == rows, "concat_cols: row mismatch " + p.value.shape_str());
        cols += p.value.cols();
    }
    Tape* t = nullptr;
    for (const Var& p : parts)
        if (p.tracked()) {
            if (t != nullptr && t != p.tape) throw ContractViolation("concat_cols: parts from two tapes");
            t = p.tape;
        }
    Matrix value(rows, cols);
    struct Span {
        int node;
        int offset;
        int cols;
    };
    std::vector<Span> spans;
    int off = 0;
    for (const Var& p : parts) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < p.value.cols(); ++c) value.at(r, off + c) = p.value.at(r, c);
        if (p.tracked()) spans.push_back(Span{p.node, off, p.value.cols()});
        off += p.value.cols();
    }
    return make_var(std::move(value), t, [spans, rows](const Matrix& g, Tape& tape) {
        for (const auto& s : spans) {
            Matrix part(rows, s.cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < s.cols; ++c) part.at(r, c) = g.at(r, s.offset + c);
            tape.accumulate(s.node, part);
        }
    });
}

Var slice_rows(const Var& a, int begin, int count) {
    require(begin >= 0 && count >= 0 && begin + count <= a.value.rows(),
            "slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") out of " +
                a.value.shape_str());
    Tape* t = tape_of({&a});
    Matrix value(count, a.value.cols());
    for (int r = 0; r < count; ++r)
        for (int c = 0; c < a.value.cols(); ++c) value.at(r, c) = a.value.at(begin + r, c);
    const int an = a.node;
    const int arows = a.value.rows();
    const int acols = a.value.cols();
    return make_var(std::move(value), t, [an, arows, acols, begin, count](const Matrix& g, Tape& tape) {
        Matrix d(arows, acols);
        for (int r = 0; r < count; ++r)
            for (int c = 0; c < acols; ++c) d.at(begin + r, c) = g.at(r, c);
        tape.accumulate(an, d);
    });
}

Var gather_rows(const Var& a, const std::vector<int>& indices) {
    for (int idx : indices)
        require(idx >= 0 && idx < a.value.rows(),
                "gather_rows: index " + std::to_string(idx) + " out of " + a.value.shape_str());
    Tape* t = tape_of({&a});
    Matrix value(static_cast<int>(indices.size()), a.value.cols());
    for (int r = 0; r < value.rows(); ++r)
        for (int c = 0; c < a.value.cols(); ++c) value.at(r, c) = a.value.at(indices[r], c);
    const int an = a.node;
    const int arows = a.value.rows();
    const int acols = a.value.cols();
    return make_var(std::move(value), t, [an, arows, acols, indices](const Matrix& g, Tape& tape) {
        Matrix d(arows, acols);
        for (int r = 0; r < g.rows(); ++r)
            for (int c = 0; c < acols; ++c) d.at(indices[r], c) += g.at(r, c);
        tape.accumulate(an, d);
    });
}

Var reshape(const Var& a, int rows, int cols) {
    require(static_cast<std::size_t>(rows) * cols == a.value.size(),
            "reshape: size mismatch, " + a.value.shape_str() + " to [" + std::to_string(rows) + "x" +
                std::to_string(cols) + "]");
    Tape* t = tape_of({&a});
    Matrix value(rows, cols);
    for (std::size_t i = 0; i < value.size(); ++i) value[i] = a.value[i];
    const int an = a.node;
    const int arows = a.value.rows();
    const int acols = a.value.cols();
    return make_var(std::move(value), t, [an, arows, acols](const Matrix& g, Tape& tape) {
        Matrix d(arows, acols);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i];
        tape.accumulate(an, d);
    });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    require(static_cast<int>(labels.size()) == logits.value.rows(),
            "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + logits.value.shape_str());
    for (int y : labels)
        require(y >= -1 && y < logits.value.cols(), "softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    Tape* t = tape_of({&logits});

    int counted = 0;
    double total = 0.0;
    Matrix probs(logits.value.rows(), logits.value.cols());
    for (int r = 0; r < logits.value.rows(); ++r) {
        if (labels[r] < 0) continue;
        ++counted;
        const std::vector<double> w = softmax(logits.value.row(r));
        for (int c = 0; c < logits.value.cols(); ++c) probs.at(r, c) = w[c];
        total -= std::log(std::max(w[labels[r]], 1e-300));
    }
    const int norm = std::max(1, counted);
    Matrix value = Matrix::filled(1, 1, total / norm);

    const int ln = logits.node;
    return make_var(std::move(value), t, [ln, probs, labels, norm](const Matrix& g, Tape& tape) {
        const double s = g.at(0, 0) / norm;
        Matrix d(probs.rows(), probs.cols());
        for (int r = 0; r < probs.rows(); ++r) {
            if (labels[r] < 0) continue;
            for (int c = 0; c < probs.cols(); ++c) d.at(r, c) = s * probs.at(r, c);
            d.at(r, labels[r]) -= s;
        }
        tape.accumulate(ln, d);
    });
}

Var smooth_l1_loss(const Var& pred, const Matrix& target, double beta, int normalizer) {
    require(pred.value.same_shape(target),
            "smooth_l1_loss: shape mismatch " + pred.value.shape_str() + " vs " + target.shape_str());
    require(beta > 0.0, "smooth_l1_loss: beta must be positive");
    Tape* t = tape_of({&pred});

    Matrix diff = mat_sub(pred.value, target);
    double total = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
        const double ad = std::abs(diff[i]);
        total += ad < beta ? 0.5 * diff[i] * diff[i] / beta : ad - 0.5 * beta;
    }
    const int norm = std::max(1, normalizer);
    Matrix value = Matrix::filled(1, 1, total / norm);

    const int pn = pred.node;
    return make_var(std::move(value), t, [pn, diff, beta, norm](const Matrix& g, Tape& tape) {
        const double s = g.at(0, 0) / norm;
        Matrix d(diff.rows(), diff.cols());
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double x = diff[i];
            d[i] = s * (std::abs(x) < beta ? x / beta : (x > 0.0 ? 1.0 : -1.0));
        }
        tape.accumulate(pn, d);
    });
}

// --- gradient checking ------------------------------------------------------

namespace {

double eval_scalar(const std::function<Var(Tape*)>& f) {
    Var v = f(nullptr);
    if (v.value.rows() != 1 || v.value.cols() != 1)
        throw ContractViolation("grad_check: f(nullptr) must return a scalar, got " + v.value.shape_str());
    return v.value.at(0, 0);
}

}  // namespace

double grad_check(const std::function<Var(Tape*)>& f, std::span<Param* const> params, double epsilon) {
    require(epsilon > 0.0, "grad_check: epsilon must be positive");
    for (Param* p : params) p->zero_grad();

    Tape tape;
    Var loss = f(&tape);
    if (loss.value.rows() != 1 || loss.value.cols() != 1)
        throw ContractViolation("grad_check: f(tape) must return a scalar, got " + loss.value.shape_str());
    if (!loss.tracked()) throw ContractViolation("grad_check: f(tape) returned an untracked value");
    if (!std::isfinite(loss.value.at(0, 0))) throw NumericError("grad_check: loss is not finite");
    tape.backward(loss);

    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Param* p : params) analytic.push_back(p->grad);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + epsilon;
            const double up = eval_scalar(f);
            p.value[i] = saved - epsilon;
            const double down = eval_scalar(f);
            p.value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("grad_check: non-finite probe at " + p.name + "[" + std::to_string(i) + "]");
            const double central = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi][i];
            const double err = std::abs(a - central) / std::max(1e-8, std::abs(a) + std::abs(central));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace mega
