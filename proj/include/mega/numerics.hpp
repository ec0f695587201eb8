#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mega/common.hpp"

namespace mega {

// Dense row-major matrix of 64-bit floats. A 1xN or Nx1 matrix doubles as a
// vector where an operation calls for one.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
        if (rows < 0 || cols < 0) throw ContractViolation("Matrix: negative shape");
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix filled(int rows, int cols, double value) {
        Matrix m(rows, cols);
        for (double& x : m.data_) x = value;
        return m;
    }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);
    static Matrix row_vector(const std::vector<double>& v);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::vector<double> row(int r) const {
        return std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r) * cols_,
                                   data_.begin() + static_cast<std::ptrdiff_t>(r + 1) * cols_);
    }

    bool all_finite() const;
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
    std::string shape_str() const;

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

bool bitwise_equal(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Plain (untracked) matrix arithmetic.
Matrix mat_mul(const Matrix& a, const Matrix& b, bool transpose_b = false);
Matrix mat_add(const Matrix& a, const Matrix& b);
Matrix mat_sub(const Matrix& a, const Matrix& b);
Matrix mat_scale(const Matrix& a, double s);

// Numerically stable softmax of a vector; output is nonnegative and sums to 1.
std::vector<double> softmax(const std::vector<double>& v);

// A trainable parameter: the value plus its gradient accumulator. Parameter
// identity is the address of this struct; a tape keyed on it accumulates into
// `grad` during backward.
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

// A matrix value optionally tracked on a tape. Untracked Vars (node < 0) are
// constants: operations on them run forward-only.
struct Var {
    Matrix value;
    Tape* tape = nullptr;
    int node = -1;

    Var() = default;
    Var(Matrix v) : value(std::move(v)) {}  // NOLINT: implicit constant wrap

    bool tracked() const { return tape != nullptr && node >= 0; }
    Var detach() const { return Var(value); }
};

// Reverse-mode gradient tape. Records one node per produced value; backward
// replays the records strictly in reverse order, accumulating into node grads
// and, at leaves, into the watched Param's grad. One training step owns one
// tape; no concurrent recording.
class Tape {
public:
    // Registers a parameter as a leaf and returns its tracked Var. Watching
    // the same Param twice returns the same node.
    Var watch(Param& p);

    // Seeds d(root)/d(root) = 1 (root must be 1x1) and runs all recorded
    // operations backward in exact reverse order of recording.
    void backward(const Var& root);

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

    // --- recording machinery (used by the op implementations) ---
    using BackwardFn = std::function<void(const Matrix& upstream, Tape& tape)>;
    int record(int rows, int cols, BackwardFn fn);
    void accumulate(int node, const Matrix& contribution);
    const Matrix& grad_at(int node) const { return grads_[node]; }

private:
    struct Node {
        int rows = 0;
        int cols = 0;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    std::vector<Matrix> grads_;  // parallel to nodes_, empty until touched
    std::vector<std::pair<const Param*, int>> watched_;
};

// --- tracked operations -----------------------------------------------------
// Each returns the forward value; when an input is tracked the operation is
// recorded on that tape. Shape violations throw ContractViolation naming both
// shapes.

Var matmul(const Var& a, const Var& b, bool transpose_b = false);
Var add(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);

enum class Activation { none, relu };

// x * weight^T + bias (bias is 1 x out, broadcast over rows), then optional ReLU.
Var linear(const Var& x, const Var& weight, const Var& bias, Activation act);

// Row-wise softmax with max-subtraction.
Var softmax_rows(const Var& logits);

// Row-wise gated softmax: w_ij = g_ij exp(a_ij) / sum_k g_ik exp(a_ik).
// A row whose gate mass is zero falls back to the plain softmax of its logits.
Var gated_softmax_rows(const Var& logits, const Var& gates);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int begin, int count);
Var gather_rows(const Var& a, const std::vector<int>& indices);
Var reshape(const Var& a, int rows, int cols);

// Mean cross-entropy over rows with label >= 0 (label -1 = ignored row).
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// Elementwise smooth-L1 against a constant target, summed and divided by
// max(1, normalizer).
Var smooth_l1_loss(const Var& pred, const Matrix& target, double beta, int normalizer);

// Watches p on the tape, or wraps its value as a constant when tape is null.
inline Var lift(Tape* tape, Param& p) { return tape != nullptr ? tape->watch(p) : Var(p.value); }

// --- gradient checking ------------------------------------------------------

// f builds the scalar loss: with a tape it must produce a tracked 1x1 Var
// (watching whatever parameters it uses); with nullptr it evaluates the same
// scalar forward-only. Returns the max over all parameter coordinates of
//   |analytic - central_difference| / max(1e-8, |analytic| + |central|).
// Throws NumericError naming the parameter and coordinate if probing produces
// a non-finite value.
double grad_check(const std::function<Var(Tape*)>& f, std::span<Param* const> params, double epsilon);

}  // namespace mega
