// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include "fasgnn/cmat.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fasgnn::ad {

// Reverse-mode tape over complex matrices.
//
// Every primitive is a smooth map of the underlying (re, im) pairs. The
// backward pass propagates gradients of a real scalar loss with respect to
// those pairs; the adjoint of a node is stored as a complex matrix whose
// entry is dL/d(re) + i*dL/d(im). For a real loss this is equivalent to
// Wirtinger-calculus gradients.
//
// Ops prefixed "block_" act independently on M vertically stacked blocks of
// a fixed row count; they exist so a whole batch of per-sample graphs can
// live on one tape as flat matrices.

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Neg,
    ScalarMul,   // by a fixed complex constant
    Cmul,        // elementwise product
    MulColvec,   // scale row r of A by v(r)
    ScaleScalar, // whole tensor times a 1x1 tape node
    Matmul,
    BlockMatmul,
    Hermitian,
    BlockHermitian,
    Conj,
    Concat, // axis 0 or 1
    SliceRows,
    SliceCols,
    Reshape,
    RepeatRows,   // each row repeated `reps` times consecutively
    BlockSumRows, // sum of each group of `reps` consecutive rows
    ReduceRows,   // row sums -> Rx1
    ReduceCols,   // column sums -> 1xC
    ReduceSum,    // -> 1x1
    ReduceMean,   // -> 1x1
    Re,
    Im,
    MakeComplex,
    ExpI,      // real phi -> exp(i*phi)
    LeakyRelu, // real
    CRelu,     // split activation: ReLU(re) + i*ReLU(im)
    Sigmoid,   // real
    SoftmaxRows,
    L2Norm, // Frobenius norm -> 1x1 real
    HpdInverse,
    BlockHpdInverse,
    Reciprocal, // complex elementwise
    SqrtReal,
    Log1pReal,
    MaxConst,
    MinConst,
    AbsSq, // |z|^2 -> real
    AddRowvec,
};

class Tape;

// Handle to a tape node. Cheap to copy; tied to the tape that created it.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}
    const CMat& value() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr && id_ >= 0; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
  public:
    struct Node {
        Op op = Op::Leaf;
        CMat value;
        std::array<int, 2> in = {-1, -1};
        std::vector<int> in_many; // Concat only
        double a = 0.0;           // op parameter (slope, clamp value, scalar re, ...)
        double b = 0.0;           // op parameter (scalar im, ...)
        int i0 = 0;               // slice begin / block rows / axis / reps
        int i1 = 0;               // slice end / block rows of rhs
        bool trainable = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(CMat value, bool trainable = true);
    Var constant(CMat value) { return leaf(std::move(value), false); }
    Var constant_scalar(cplx v) { return constant(CMat::scalar(v)); }

    std::size_t size() const { return nodes_.size(); }
    const CMat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    bool trainable(int id) const { return nodes_[static_cast<std::size_t>(id)].trainable; }

    // Propagates adjoints from `loss` (a real 1x1 node) down to the leaves.
    // Re-running replaces previous adjoints; results are bitwise repeatable.
    void backward(const Var& loss);

    // Valid after backward(); materializes a zero matrix for untouched nodes.
    const CMat& adjoint(const Var& v);

    // Number of near-singular Gram matrices that were ridge-regularized by
    // HpdInverse / BlockHpdInverse since construction or reset.
    std::size_t regularized_inverse_count() const { return regularized_inverses_; }
    // Number of entries clamped by a MaxConst guard (degenerate norms /
    // utilities) since construction or reset.
    std::size_t clamp_count() const { return clamps_; }
    void reset_diagnostics() {
        regularized_inverses_ = 0;
        clamps_ = 0;
    }

  private:
    friend struct TapeAccess;

    void accumulate(int id, const CMat& g);
    CMat& grad(int id);
    void backward_node(int id);

    std::vector<Node> nodes_;
    std::vector<CMat> adjoints_;
    std::size_t regularized_inverses_ = 0;
    std::size_t clamps_ = 0;
};

// ---- primitive builders ---------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var scalar_mul(Var a, cplx c);
Var cmul(Var a, Var b);
Var mul_colvec(Var a, Var v);     // v is rows(a) x 1
Var scale_scalar(Var a, Var s);   // s is 1x1
Var matmul(Var a, Var b);
Var block_matmul(Var a, Var b, std::size_t rows_a, std::size_t rows_b);
Var hermitian(Var a);
Var block_hermitian(Var a, std::size_t rows_a);
Var conj(Var a);
Var concat(const std::vector<Var>& parts, int axis);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var repeat_rows(Var a, std::size_t reps);
Var block_sum_rows(Var a, std::size_t reps);
Var reduce_rows(Var a);
Var reduce_cols(Var a);
Var reduce_sum(Var a);
Var reduce_mean(Var a);
Var re(Var a);
Var im(Var a);
Var make_complex(Var real_part, Var imag_part);
Var exp_i(Var phi);
Var leaky_relu(Var a, double slope = 0.01);
Var crelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var l2_norm(Var a);
Var hpd_inverse(Var a);
Var block_hpd_inverse(Var a, std::size_t block);
Var reciprocal(Var a);
Var sqrt_real(Var a);
Var log1p_real(Var a);
Var max_const(Var a, double c);
Var min_const(Var a, double c);
Var abs_sq(Var a);
Var add_rowvec(Var a, Var row);

// Value-level Hermitian positive-definite inverse, the same routine behind
// the HpdInverse op (pivoted elimination, ridge fallback, refinement).
CMat hpd_inverse_value(const CMat& a, std::size_t* regularized = nullptr);

// ---- gradient checking ----------------------------------------------------

struct GradCheckReport {
    struct Entry {
        std::size_t input = 0;
        std::size_t coord = 0; // flat index into the (re, im) coordinates
        double analytic = 0.0;
        double numeric = 0.0;
        double abs_err = 0.0;
        double rel_err = 0.0;
        bool below_resolution = false; // both sides under the measurement floor
    };
    std::vector<Entry> entries;
    // Largest relative error among resolvable coordinates. Coordinates where
    // both the analytic and the numeric value sit below `abs_floor` carry no
    // information at the given step (the difference quotient is rounding
    // noise of that size), and are excluded here but kept in the entries.
    double max_rel_err = 0.0;
    double abs_floor = 0.0;
    std::size_t coords_checked = 0;
    std::size_t below_resolution_count = 0;

    bool pass(double tol) const { return max_rel_err < tol; }
    void write_csv(std::ostream& out) const;
};

// f builds a real scalar loss from leaves created on the given tape in the
// order of `inputs`. The analytic gradient from backward() is compared
// against central finite differences of the same function, coordinate by
// coordinate. If max_coords > 0, a deterministic random subset of that many
// coordinates is checked instead of all of them. abs_floor is the smallest
// gradient magnitude the difference quotient can resolve for an O(1) loss
// at the given step.
GradCheckReport grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                           const std::vector<CMat>& inputs, double step = 1e-4,
                           std::size_t max_coords = 0, std::uint64_t seed = 0,
                           double abs_floor = 1e-8);

} // namespace fasgnn::ad
