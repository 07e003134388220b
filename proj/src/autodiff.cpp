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

#include "fasgnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fasgnn::ad {

namespace {

// Above this many complex multiply-adds a matmul kernel goes parallel.
constexpr std::size_t kParallelFlops = 1 << 15;

[[noreturn]] void fail(const std::string& what) { throw std::invalid_argument("autodiff: " + what); }

void require(bool ok, const std::string& what) {
    if (!ok) { fail(what); }
}

void require_real(const CMat& v, const char* op) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i].imag() != 0.0) { fail(std::string(op) + ": input must be a real tensor"); }
    }
}

// ---- dense complex kernels (raw (re, im) pairs) ----------------------------

// c += or = a * b
void matmul_nn(CMat& c, const CMat& a, const CMat& b, bool accumulate) {
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    if (!accumulate) { c = CMat(p, r); }
    const double* ad = a.reals();
    const double* bd = b.reals();
    double* cd = c.reals();
    const std::size_t work = p * q * r;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(p); ++i) {
        double* crow = cd + 2 * static_cast<std::size_t>(i) * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double ar = ad[2 * (static_cast<std::size_t>(i) * q + k)];
            const double ai = ad[2 * (static_cast<std::size_t>(i) * q + k) + 1];
            const double* brow = bd + 2 * k * r;
            for (std::size_t j = 0; j < r; ++j) {
                crow[2 * j] += ar * brow[2 * j] - ai * brow[2 * j + 1];
                crow[2 * j + 1] += ar * brow[2 * j + 1] + ai * brow[2 * j];
            }
        }
    }
    (void)work;
}

// c += a * b^H  (a: p x q, b: r x q, c: p x r)
void matmul_nh(CMat& c, const CMat& a, const CMat& b, bool accumulate) {
    const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
    if (!accumulate) { c = CMat(p, r); }
    const double* ad = a.reals();
    const double* bd = b.reals();
    double* cd = c.reals();
    const std::size_t work = p * q * r;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(p); ++i) {
        const double* arow = ad + 2 * static_cast<std::size_t>(i) * q;
        double* crow = cd + 2 * static_cast<std::size_t>(i) * r;
        for (std::size_t j = 0; j < r; ++j) {
            const double* brow = bd + 2 * j * q;
            double sr = 0.0, si = 0.0;
            for (std::size_t k = 0; k < q; ++k) {
                // a * conj(b)
                sr += arow[2 * k] * brow[2 * k] + arow[2 * k + 1] * brow[2 * k + 1];
                si += arow[2 * k + 1] * brow[2 * k] - arow[2 * k] * brow[2 * k + 1];
            }
            crow[2 * j] += sr;
            crow[2 * j + 1] += si;
        }
    }
    (void)work;
}

// c += a^H * b  (a: p x q, b: p x r, c: q x r)
void matmul_hn(CMat& c, const CMat& a, const CMat& b, bool accumulate) {
    const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
    if (!accumulate) { c = CMat(q, r); }
    const double* ad = a.reals();
    const double* bd = b.reals();
    double* cd = c.reals();
    const std::size_t work = p * q * r;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
#endif
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(q); ++k) {
        double* crow = cd + 2 * static_cast<std::size_t>(k) * r;
        for (std::size_t i = 0; i < p; ++i) {
            // conj(a(i,k))
            const double ar = ad[2 * (i * q + static_cast<std::size_t>(k))];
            const double ai = -ad[2 * (i * q + static_cast<std::size_t>(k)) + 1];
            const double* brow = bd + 2 * i * r;
            for (std::size_t j = 0; j < r; ++j) {
                crow[2 * j] += ar * brow[2 * j] - ai * brow[2 * j + 1];
                crow[2 * j + 1] += ar * brow[2 * j + 1] + ai * brow[2 * j];
            }
        }
    }
    (void)work;
}

CMat sub_block(const CMat& a, std::size_t r0, std::size_t r1) {
    CMat out(r1 - r0, a.cols());
    for (std::size_t i = r0; i < r1; ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) { out(i - r0, j) = a(i, j); }
    }
    return out;
}

// Gauss-Jordan inverse with partial pivoting; also reports max/min pivot
// magnitude as a cheap condition estimate. Throws on an exactly zero pivot.
CMat gauss_inverse(CMat a, double* cond_est) {
    const std::size_t n = a.rows();
    CMat inv = CMat::eye(n);
    double max_piv = 0.0, min_piv = std::numeric_limits<double>::infinity();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::abs(a(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double m = std::abs(a(r, col));
            if (m > best) {
                best = m;
                piv = r;
            }
        }
        if (best == 0.0) { fail("hpd_inverse: singular matrix"); }
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(a(col, j), a(piv, j));
                std::swap(inv(col, j), inv(piv, j));
            }
        }
        max_piv = std::max(max_piv, best);
        min_piv = std::min(min_piv, best);
        const cplx d = a(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            a(col, j) /= d;
            inv(col, j) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) { continue; }
            const cplx f = a(r, col);
            if (f == cplx{}) { continue; }
            for (std::size_t j = 0; j < n; ++j) {
                a(r, j) -= f * a(col, j);
                inv(r, j) -= f * inv(col, j);
            }
        }
    }
    if (cond_est != nullptr) { *cond_est = max_piv / min_piv; }
    return inv;
}

constexpr double kHermitianTol = 1e-10;
constexpr double kCondThreshold = 1e12;

// Inverse of one Hermitian positive-definite block, ridge-regularized when
// the pivot-based condition estimate crosses kCondThreshold.
CMat hpd_inverse_block(const CMat& a, std::size_t* regularized) {
    const std::size_t n = a.rows();
    double asym = 0.0;
    double trace_re = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        trace_re += a(i, i).real();
        for (std::size_t j = i; j < n; ++j) {
            asym = std::max(asym, std::abs(a(i, j) - std::conj(a(j, i))));
        }
    }
    if (asym > kHermitianTol * std::max(1.0, a.max_abs())) {
        fail("hpd_inverse: input is not Hermitian");
    }
    double cond = 0.0;
    CMat inv;
    bool ok = false;
    CMat target = a;
    try {
        inv = gauss_inverse(a, &cond);
        ok = cond <= kCondThreshold;
    } catch (const std::invalid_argument&) {
        ok = false;
    }
    if (!ok) {
        const double eps = 1e-9 * trace_re / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) { target(i, i) += eps; }
        inv = gauss_inverse(target, &cond);
        if (regularized != nullptr) { ++*regularized; }
    }
    // Newton refinement X <- X + X(I - A X) squares the residual. The
    // residual must be accumulated in extended precision: at condition 1e8
    // the cancellation noise of a plain double A*X is already ~1e-8, larger
    // than the quantity being corrected.
    for (int pass = 0; pass < 2; ++pass) {
        CMat resid(n, n);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                long double sr = i == j ? 1.0L : 0.0L;
                long double si = 0.0L;
                for (std::size_t k = 0; k < n; ++k) {
                    const cplx& x = target(i, k);
                    const cplx& y = inv(k, j);
                    sr -= static_cast<long double>(x.real()) * y.real() -
                          static_cast<long double>(x.imag()) * y.imag();
                    si -= static_cast<long double>(x.real()) * y.imag() +
                          static_cast<long double>(x.imag()) * y.real();
                }
                resid(i, j) = cplx(static_cast<double>(sr), static_cast<double>(si));
                worst = std::max(worst, std::abs(resid(i, j)));
            }
        }
        if (worst < 1e-15) { break; }
        CMat corr;
        matmul_nn(corr, inv, resid, false);
        for (std::size_t i = 0; i < inv.size(); ++i) { inv[i] += corr[i]; }
    }
    return inv;
}

} // namespace

const CMat& Var::value() const { return tape_->value(id_); }

CMat hpd_inverse_value(const CMat& a, std::size_t* regularized) {
    if (a.rows() != a.cols()) { fail("hpd_inverse: square input required"); }
    return hpd_inverse_block(a, regularized);
}

Var Tape::leaf(CMat value, bool trainable) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.trainable = trainable;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

// Private pusher exposed to the builders in this translation unit only.
struct TapeAccess {
    static Var push(Tape& t, Tape::Node n) {
        t.nodes_.push_back(std::move(n));
        return Var(&t, static_cast<int>(t.nodes_.size()) - 1);
    }
    static std::size_t* reg_counter(Tape& t) { return &t.regularized_inverses_; }
    static std::size_t* clamp_counter(Tape& t) { return &t.clamps_; }
    static const Tape::Node& node(const Tape& t, int id) {
        return t.nodes_[static_cast<std::size_t>(id)];
    }
};

namespace {

Tape::Node base_node(Op op, Var a) {
    Tape::Node n;
    n.op = op;
    n.in = {a.id(), -1};
    return n;
}

Tape::Node base_node(Op op, Var a, Var b) {
    Tape::Node n;
    n.op = op;
    n.in = {a.id(), b.id()};
    require(a.tape() == b.tape(), "operands belong to different tapes");
    return n;
}

} // namespace

Var add(Var a, Var b) {
    auto n = base_node(Op::Add, a, b);
    require(a.value().same_shape(b.value()), "add: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] += b.value()[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var sub(Var a, Var b) {
    auto n = base_node(Op::Sub, a, b);
    require(a.value().same_shape(b.value()), "sub: shape mismatch");
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] -= b.value()[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var neg(Var a) {
    auto n = base_node(Op::Neg, a);
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] = -n.value[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var scalar_mul(Var a, cplx c) {
    auto n = base_node(Op::ScalarMul, a);
    n.a = c.real();
    n.b = c.imag();
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] *= c; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var cmul(Var a, Var b) {
    auto n = base_node(Op::Cmul, a, b);
    require(a.value().same_shape(b.value()), "cmul: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] *= b.value()[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var mul_colvec(Var a, Var v) {
    auto n = base_node(Op::MulColvec, a, v);
    require(v.value().cols() == 1 && v.value().rows() == a.value().rows(),
            "mul_colvec: v must be rows(a) x 1");
    n.value = a.value();
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const cplx s = v.value()(r, 0);
        for (std::size_t c = 0; c < n.value.cols(); ++c) { n.value(r, c) *= s; }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var scale_scalar(Var a, Var s) {
    auto n = base_node(Op::ScaleScalar, a, s);
    require(s.value().rows() == 1 && s.value().cols() == 1, "scale_scalar: s must be 1x1");
    const cplx sv = s.value()(0, 0);
    n.value = a.value();
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] *= sv; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var matmul(Var a, Var b) {
    auto n = base_node(Op::Matmul, a, b);
    require(a.value().cols() == b.value().rows(),
            "matmul: " + a.value().shape_str() + " * " + b.value().shape_str());
    matmul_nn(n.value, a.value(), b.value(), false);
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var block_matmul(Var a, Var b, std::size_t rows_a, std::size_t rows_b) {
    auto n = base_node(Op::BlockMatmul, a, b);
    const CMat& av = a.value();
    const CMat& bv = b.value();
    require(rows_a > 0 && rows_b > 0 && av.rows() % rows_a == 0 && bv.rows() % rows_b == 0,
            "block_matmul: row counts not divisible by block sizes");
    const std::size_t m = av.rows() / rows_a;
    require(bv.rows() / rows_b == m, "block_matmul: block count mismatch");
    require(av.cols() == rows_b, "block_matmul: inner dimensions disagree");
    n.i0 = static_cast<int>(rows_a);
    n.i1 = static_cast<int>(rows_b);
    n.value = CMat(m * rows_a, bv.cols());
    const std::size_t work = m * rows_a * rows_b * bv.cols();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (work > kParallelFlops)
#endif
    for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(m); ++blk) {
        const std::size_t mb = static_cast<std::size_t>(blk);
        for (std::size_t i = 0; i < rows_a; ++i) {
            for (std::size_t k = 0; k < rows_b; ++k) {
                const cplx aik = av(mb * rows_a + i, k);
                if (aik == cplx{}) { continue; }
                for (std::size_t j = 0; j < bv.cols(); ++j) {
                    n.value(mb * rows_a + i, j) += aik * bv(mb * rows_b + k, j);
                }
            }
        }
    }
    (void)work;
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var hermitian(Var a) {
    auto n = base_node(Op::Hermitian, a);
    n.value = a.value().hermitian();
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var block_hermitian(Var a, std::size_t rows_a) {
    auto n = base_node(Op::BlockHermitian, a);
    const CMat& av = a.value();
    require(rows_a > 0 && av.rows() % rows_a == 0, "block_hermitian: bad block size");
    const std::size_t m = av.rows() / rows_a;
    n.i0 = static_cast<int>(rows_a);
    n.value = CMat(m * av.cols(), rows_a);
    for (std::size_t blk = 0; blk < m; ++blk) {
        for (std::size_t i = 0; i < rows_a; ++i) {
            for (std::size_t j = 0; j < av.cols(); ++j) {
                n.value(blk * av.cols() + j, i) = std::conj(av(blk * rows_a + i, j));
            }
        }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var conj(Var a) {
    auto n = base_node(Op::Conj, a);
    n.value = a.value().conjugate();
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var concat(const std::vector<Var>& parts, int axis) {
    require(!parts.empty(), "concat: empty input list");
    require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    Tape::Node n;
    n.op = Op::Concat;
    n.i0 = axis;
    n.in_many.reserve(parts.size());
    std::size_t rows = parts[0].value().rows();
    std::size_t cols = parts[0].value().cols();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        require(parts[p].tape() == parts[0].tape(), "concat: operands on different tapes");
        if (axis == 0) {
            require(parts[p].value().cols() == cols, "concat: column mismatch");
            rows += parts[p].value().rows();
        } else {
            require(parts[p].value().rows() == rows, "concat: row mismatch");
            cols += parts[p].value().cols();
        }
    }
    n.value = CMat(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        n.in_many.push_back(p.id());
        const CMat& v = p.value();
        for (std::size_t i = 0; i < v.rows(); ++i) {
            for (std::size_t j = 0; j < v.cols(); ++j) {
                if (axis == 0) {
                    n.value(off + i, j) = v(i, j);
                } else {
                    n.value(i, off + j) = v(i, j);
                }
            }
        }
        off += axis == 0 ? v.rows() : v.cols();
    }
    return TapeAccess::push(*parts[0].tape(), std::move(n));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    auto n = base_node(Op::SliceRows, a);
    require(begin < end && end <= a.value().rows(), "slice_rows: bad range");
    n.i0 = static_cast<int>(begin);
    n.i1 = static_cast<int>(end);
    n.value = sub_block(a.value(), begin, end);
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    auto n = base_node(Op::SliceCols, a);
    require(begin < end && end <= a.value().cols(), "slice_cols: bad range");
    n.i0 = static_cast<int>(begin);
    n.i1 = static_cast<int>(end);
    n.value = CMat(a.value().rows(), end - begin);
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
        for (std::size_t j = begin; j < end; ++j) { n.value(i, j - begin) = a.value()(i, j); }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    auto n = base_node(Op::Reshape, a);
    require(rows * cols == a.value().size(), "reshape: element count mismatch");
    n.value = CMat(rows, cols);
    for (std::size_t i = 0; i < a.value().size(); ++i) { n.value[i] = a.value()[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var repeat_rows(Var a, std::size_t reps) {
    auto n = base_node(Op::RepeatRows, a);
    require(reps >= 1, "repeat_rows: reps >= 1");
    n.i0 = static_cast<int>(reps);
    const CMat& av = a.value();
    n.value = CMat(av.rows() * reps, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t t = 0; t < reps; ++t) {
            for (std::size_t c = 0; c < av.cols(); ++c) { n.value(r * reps + t, c) = av(r, c); }
        }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var block_sum_rows(Var a, std::size_t reps) {
    auto n = base_node(Op::BlockSumRows, a);
    require(reps >= 1 && a.value().rows() % reps == 0, "block_sum_rows: bad group size");
    n.i0 = static_cast<int>(reps);
    const CMat& av = a.value();
    n.value = CMat(av.rows() / reps, av.cols());
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
        for (std::size_t t = 0; t < reps; ++t) {
            for (std::size_t c = 0; c < av.cols(); ++c) { n.value(r, c) += av(r * reps + t, c); }
        }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reduce_rows(Var a) {
    auto n = base_node(Op::ReduceRows, a);
    const CMat& av = a.value();
    n.value = CMat(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        cplx s{};
        for (std::size_t c = 0; c < av.cols(); ++c) { s += av(r, c); }
        n.value(r, 0) = s;
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reduce_cols(Var a) {
    auto n = base_node(Op::ReduceCols, a);
    const CMat& av = a.value();
    n.value = CMat(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) { n.value(0, c) += av(r, c); }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reduce_sum(Var a) {
    auto n = base_node(Op::ReduceSum, a);
    cplx s{};
    for (std::size_t i = 0; i < a.value().size(); ++i) { s += a.value()[i]; }
    n.value = CMat::scalar(s);
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reduce_mean(Var a) {
    auto n = base_node(Op::ReduceMean, a);
    require(a.value().size() > 0, "reduce_mean: empty tensor");
    cplx s{};
    for (std::size_t i = 0; i < a.value().size(); ++i) { s += a.value()[i]; }
    n.value = CMat::scalar(s / static_cast<double>(a.value().size()));
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var re(Var a) {
    auto n = base_node(Op::Re, a);
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] = a.value()[i].real(); }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var im(Var a) {
    auto n = base_node(Op::Im, a);
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] = a.value()[i].imag(); }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var make_complex(Var real_part, Var imag_part) {
    auto n = base_node(Op::MakeComplex, real_part, imag_part);
    require(real_part.value().same_shape(imag_part.value()), "make_complex: shape mismatch");
    require_real(real_part.value(), "make_complex");
    require_real(imag_part.value(), "make_complex");
    n.value = CMat(real_part.value().rows(), real_part.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        n.value[i] = cplx(real_part.value()[i].real(), imag_part.value()[i].real());
    }
    return TapeAccess::push(*real_part.tape(), std::move(n));
}

Var exp_i(Var phi) {
    auto n = base_node(Op::ExpI, phi);
    require_real(phi.value(), "exp_i");
    n.value = CMat(phi.value().rows(), phi.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = phi.value()[i].real();
        n.value[i] = cplx(std::cos(x), std::sin(x));
    }
    return TapeAccess::push(*phi.tape(), std::move(n));
}

Var leaky_relu(Var a, double slope) {
    auto n = base_node(Op::LeakyRelu, a);
    require_real(a.value(), "leaky_relu");
    n.a = slope;
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = a.value()[i].real();
        n.value[i] = x > 0.0 ? x : slope * x;
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var crelu(Var a) {
    auto n = base_node(Op::CRelu, a);
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const cplx z = a.value()[i];
        n.value[i] = cplx(z.real() > 0.0 ? z.real() : 0.0, z.imag() > 0.0 ? z.imag() : 0.0);
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var sigmoid(Var a) {
    auto n = base_node(Op::Sigmoid, a);
    require_real(a.value(), "sigmoid");
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = a.value()[i].real();
        // Evaluate on the negative side to avoid overflow in exp.
        n.value[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var softmax_rows(Var a) {
    auto n = base_node(Op::SoftmaxRows, a);
    require_real(a.value(), "softmax_rows");
    const CMat& av = a.value();
    n.value = CMat(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < av.cols(); ++c) { mx = std::max(mx, av(r, c).real()); }
        double denom = 0.0;
        for (std::size_t c = 0; c < av.cols(); ++c) {
            const double e = std::exp(av(r, c).real() - mx);
            n.value(r, c) = e;
            denom += e;
        }
        for (std::size_t c = 0; c < av.cols(); ++c) { n.value(r, c) /= denom; }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var l2_norm(Var a) {
    auto n = base_node(Op::L2Norm, a);
    n.value = CMat::scalar(a.value().frobenius());
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var hpd_inverse(Var a) {
    auto n = base_node(Op::HpdInverse, a);
    require(a.value().rows() == a.value().cols(), "hpd_inverse: square input required");
    n.value = hpd_inverse_block(a.value(), TapeAccess::reg_counter(*a.tape()));
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var block_hpd_inverse(Var a, std::size_t block) {
    auto n = base_node(Op::BlockHpdInverse, a);
    const CMat& av = a.value();
    require(block > 0 && av.cols() == block && av.rows() % block == 0,
            "block_hpd_inverse: expected stacked square blocks");
    n.i0 = static_cast<int>(block);
    const std::size_t m = av.rows() / block;
    n.value = CMat(av.rows(), block);
    for (std::size_t blk = 0; blk < m; ++blk) {
        const CMat inv = hpd_inverse_block(sub_block(av, blk * block, (blk + 1) * block),
                                           TapeAccess::reg_counter(*a.tape()));
        for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t j = 0; j < block; ++j) { n.value(blk * block + i, j) = inv(i, j); }
        }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var reciprocal(Var a) {
    auto n = base_node(Op::Reciprocal, a);
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] = 1.0 / a.value()[i]; }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var sqrt_real(Var a) {
    auto n = base_node(Op::SqrtReal, a);
    require_real(a.value(), "sqrt_real");
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = a.value()[i].real();
        require(x >= 0.0, "sqrt_real: negative input");
        n.value[i] = std::sqrt(x);
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var log1p_real(Var a) {
    auto n = base_node(Op::Log1pReal, a);
    require_real(a.value(), "log1p_real");
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = a.value()[i].real();
        require(x > -1.0, "log1p_real: input <= -1");
        n.value[i] = std::log1p(x);
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var max_const(Var a, double c) {
    auto n = base_node(Op::MaxConst, a);
    require_real(a.value(), "max_const");
    n.a = c;
    n.value = CMat(a.value().rows(), a.value().cols());
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        const double x = a.value()[i].real();
        if (x < c) { ++clamped; }
        n.value[i] = std::max(x, c);
    }
    *TapeAccess::clamp_counter(*a.tape()) += clamped;
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var min_const(Var a, double c) {
    auto n = base_node(Op::MinConst, a);
    require_real(a.value(), "min_const");
    n.a = c;
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) {
        n.value[i] = std::min(a.value()[i].real(), c);
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var abs_sq(Var a) {
    auto n = base_node(Op::AbsSq, a);
    n.value = CMat(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < n.value.size(); ++i) { n.value[i] = std::norm(a.value()[i]); }
    return TapeAccess::push(*a.tape(), std::move(n));
}

Var add_rowvec(Var a, Var row) {
    auto n = base_node(Op::AddRowvec, a, row);
    require(row.value().rows() == 1 && row.value().cols() == a.value().cols(),
            "add_rowvec: row must be 1 x cols(a)");
    n.value = a.value();
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
        for (std::size_t c = 0; c < n.value.cols(); ++c) { n.value(r, c) += row.value()(0, c); }
    }
    return TapeAccess::push(*a.tape(), std::move(n));
}

// ---- backward ---------------------------------------------------------------

CMat& Tape::grad(int id) {
    auto& g = adjoints_[static_cast<std::size_t>(id)];
    if (g.empty()) {
        const auto& v = nodes_[static_cast<std::size_t>(id)].value;
        g = CMat(v.rows(), v.cols());
    }
    return g;
}

void Tape::accumulate(int id, const CMat& g) {
    CMat& dst = grad(id);
    for (std::size_t i = 0; i < dst.size(); ++i) { dst[i] += g[i]; }
}

const CMat& Tape::adjoint(const Var& v) {
    require(adjoints_.size() == nodes_.size(), "adjoint: backward() has not run");
    return grad(v.id());
}

void Tape::backward(const Var& loss) {
    require(loss.tape() == this, "backward: loss from another tape");
    const CMat& lv = loss.value();
    require(lv.rows() == 1 && lv.cols() == 1, "backward: loss must be scalar");
    require(lv(0, 0).imag() == 0.0, "backward: loss must be real");

    adjoints_.assign(nodes_.size(), CMat());
    grad(loss.id())(0, 0) = 1.0;

    for (int id = loss.id(); id >= 0; --id) {
        const auto& g = adjoints_[static_cast<std::size_t>(id)];
        if (g.empty()) { continue; }
        if (nodes_[static_cast<std::size_t>(id)].op != Op::Leaf) { backward_node(id); }
    }

    // Contract: trainable leaves always come back with a gradient, zero when
    // the loss does not depend on them.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].trainable && adjoints_[i].empty()) {
            adjoints_[i] = CMat(nodes_[i].value.rows(), nodes_[i].value.cols());
        }
    }
}

void Tape::backward_node(int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const CMat& g = adjoints_[static_cast<std::size_t>(id)];
    const auto in_val = [&](int slot) -> const CMat& {
        return nodes_[static_cast<std::size_t>(n.in[static_cast<std::size_t>(slot)])].value;
    };

    switch (n.op) {
    case Op::Leaf:
        break;
    case Op::Add:
        accumulate(n.in[0], g);
        accumulate(n.in[1], g);
        break;
    case Op::Sub: {
        accumulate(n.in[0], g);
        CMat neg_g = g;
        for (std::size_t i = 0; i < neg_g.size(); ++i) { neg_g[i] = -neg_g[i]; }
        accumulate(n.in[1], neg_g);
        break;
    }
    case Op::Neg: {
        CMat neg_g = g;
        for (std::size_t i = 0; i < neg_g.size(); ++i) { neg_g[i] = -neg_g[i]; }
        accumulate(n.in[0], neg_g);
        break;
    }
    case Op::ScalarMul: {
        const cplx cc = std::conj(cplx(n.a, n.b));
        CMat ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] *= cc; }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Cmul: {
        const CMat& av = in_val(0);
        const CMat& bv = in_val(1);
        CMat ga(av.rows(), av.cols());
        CMat gb(av.rows(), av.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = std::conj(bv[i]) * g[i];
            gb[i] = std::conj(av[i]) * g[i];
        }
        accumulate(n.in[0], ga);
        accumulate(n.in[1], gb);
        break;
    }
    case Op::MulColvec: {
        const CMat& av = in_val(0);
        const CMat& vv = in_val(1);
        CMat ga(av.rows(), av.cols());
        CMat gv(vv.rows(), 1);
        for (std::size_t r = 0; r < av.rows(); ++r) {
            const cplx vc = std::conj(vv(r, 0));
            cplx s{};
            for (std::size_t c = 0; c < av.cols(); ++c) {
                ga(r, c) = vc * g(r, c);
                s += std::conj(av(r, c)) * g(r, c);
            }
            gv(r, 0) = s;
        }
        accumulate(n.in[0], ga);
        accumulate(n.in[1], gv);
        break;
    }
    case Op::ScaleScalar: {
        const CMat& av = in_val(0);
        const cplx sc = std::conj(in_val(1)(0, 0));
        CMat ga(av.rows(), av.cols());
        cplx gs{};
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = sc * g[i];
            gs += std::conj(av[i]) * g[i];
        }
        accumulate(n.in[0], ga);
        accumulate(n.in[1], CMat::scalar(gs));
        break;
    }
    case Op::Matmul: {
        // dA = g * B^H ; dB = A^H * g
        CMat ga, gb;
        matmul_nh(ga, g, in_val(1), false);
        matmul_hn(gb, in_val(0), g, false);
        accumulate(n.in[0], ga);
        accumulate(n.in[1], gb);
        break;
    }
    case Op::BlockMatmul: {
        const CMat& av = in_val(0);
        const CMat& bv = in_val(1);
        const auto ra = static_cast<std::size_t>(n.i0);
        const auto rb = static_cast<std::size_t>(n.i1);
        const std::size_t m = av.rows() / ra;
        CMat ga(av.rows(), av.cols());
        CMat gb(bv.rows(), bv.cols());
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * ra * rb * bv.cols() > kParallelFlops)
#endif
        for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(m); ++blk) {
            const std::size_t mb = static_cast<std::size_t>(blk);
            // per block: ga = g * B^H, gb = A^H * g
            for (std::size_t i = 0; i < ra; ++i) {
                for (std::size_t k = 0; k < rb; ++k) {
                    cplx s{};
                    for (std::size_t j = 0; j < bv.cols(); ++j) {
                        s += g(mb * ra + i, j) * std::conj(bv(mb * rb + k, j));
                    }
                    ga(mb * ra + i, k) = s;
                }
            }
            for (std::size_t k = 0; k < rb; ++k) {
                for (std::size_t i = 0; i < ra; ++i) {
                    const cplx af = std::conj(av(mb * ra + i, k));
                    if (af == cplx{}) { continue; }
                    for (std::size_t j = 0; j < bv.cols(); ++j) {
                        gb(mb * rb + k, j) += af * g(mb * ra + i, j);
                    }
                }
            }
        }
        accumulate(n.in[0], ga);
        accumulate(n.in[1], gb);
        break;
    }
    case Op::Hermitian:
        accumulate(n.in[0], g.hermitian());
        break;
    case Op::BlockHermitian: {
        const CMat& av = in_val(0);
        const auto ra = static_cast<std::size_t>(n.i0);
        const std::size_t m = av.rows() / ra;
        CMat ga(av.rows(), av.cols());
        for (std::size_t blk = 0; blk < m; ++blk) {
            for (std::size_t i = 0; i < ra; ++i) {
                for (std::size_t j = 0; j < av.cols(); ++j) {
                    ga(blk * ra + i, j) = std::conj(g(blk * av.cols() + j, i));
                }
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Conj:
        accumulate(n.in[0], g.conjugate());
        break;
    case Op::Concat: {
        std::size_t off = 0;
        for (int pid : n.in_many) {
            const CMat& pv = nodes_[static_cast<std::size_t>(pid)].value;
            CMat gp(pv.rows(), pv.cols());
            for (std::size_t i = 0; i < pv.rows(); ++i) {
                for (std::size_t j = 0; j < pv.cols(); ++j) {
                    gp(i, j) = n.i0 == 0 ? g(off + i, j) : g(i, off + j);
                }
            }
            accumulate(pid, gp);
            off += n.i0 == 0 ? pv.rows() : pv.cols();
        }
        break;
    }
    case Op::SliceRows: {
        const CMat& av = in_val(0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) {
                ga(static_cast<std::size_t>(n.i0) + i, j) = g(i, j);
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::SliceCols: {
        const CMat& av = in_val(0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) {
                ga(i, static_cast<std::size_t>(n.i0) + j) = g(i, j);
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Reshape: {
        const CMat& av = in_val(0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = g[i]; }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::RepeatRows: {
        const CMat& av = in_val(0);
        const auto reps = static_cast<std::size_t>(n.i0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r) {
            for (std::size_t t = 0; t < reps; ++t) {
                for (std::size_t c = 0; c < av.cols(); ++c) { ga(r, c) += g(r * reps + t, c); }
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::BlockSumRows: {
        const CMat& av = in_val(0);
        const auto reps = static_cast<std::size_t>(n.i0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t t = 0; t < reps; ++t) {
                for (std::size_t c = 0; c < av.cols(); ++c) { ga(r * reps + t, c) = g(r, c); }
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::ReduceRows: {
        const CMat& av = in_val(0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r) {
            for (std::size_t c = 0; c < av.cols(); ++c) { ga(r, c) = g(r, 0); }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::ReduceCols: {
        const CMat& av = in_val(0);
        CMat ga(av.rows(), av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r) {
            for (std::size_t c = 0; c < av.cols(); ++c) { ga(r, c) = g(0, c); }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::ReduceSum: {
        const CMat& av = in_val(0);
        accumulate(n.in[0], CMat::full(av.rows(), av.cols(), g(0, 0)));
        break;
    }
    case Op::ReduceMean: {
        const CMat& av = in_val(0);
        accumulate(n.in[0],
                   CMat::full(av.rows(), av.cols(), g(0, 0) / static_cast<double>(av.size())));
        break;
    }
    case Op::Re: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = g[i].real(); }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Im: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = cplx(0.0, g[i].real()); }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::MakeComplex: {
        CMat gr(g.rows(), g.cols());
        CMat gi(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
            gr[i] = g[i].real();
            gi[i] = g[i].imag();
        }
        accumulate(n.in[0], gr);
        accumulate(n.in[1], gi);
        break;
    }
    case Op::ExpI: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = (std::conj(n.value[i]) * g[i]).imag();
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::LeakyRelu: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = (av[i].real() > 0.0 ? 1.0 : n.a) * g[i].real();
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::CRelu: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = cplx(av[i].real() > 0.0 ? g[i].real() : 0.0,
                         av[i].imag() > 0.0 ? g[i].imag() : 0.0);
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Sigmoid: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double s = n.value[i].real();
            ga[i] = s * (1.0 - s) * g[i].real();
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::SoftmaxRows: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) {
                dot += g(r, c).real() * n.value(r, c).real();
            }
            for (std::size_t c = 0; c < g.cols(); ++c) {
                ga(r, c) = n.value(r, c).real() * (g(r, c).real() - dot);
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::L2Norm: {
        const CMat& av = in_val(0);
        const double norm = std::max(n.value(0, 0).real(), 1e-12);
        const double s = g(0, 0).real() / norm;
        CMat ga(av.rows(), av.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = av[i] * s; }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::HpdInverse: {
        // dA = -W^H g W^H with W = A^{-1}
        CMat tmp, ga;
        matmul_hn(tmp, n.value, g, false);
        matmul_nh(ga, tmp, n.value, false);
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = -ga[i]; }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::BlockHpdInverse: {
        const auto kk = static_cast<std::size_t>(n.i0);
        const std::size_t m = n.value.rows() / kk;
        CMat ga(n.value.rows(), kk);
        for (std::size_t blk = 0; blk < m; ++blk) {
            const CMat w = sub_block(n.value, blk * kk, (blk + 1) * kk);
            const CMat gb = sub_block(g, blk * kk, (blk + 1) * kk);
            CMat tmp, gablk;
            matmul_hn(tmp, w, gb, false);
            matmul_nh(gablk, tmp, w, false);
            for (std::size_t i = 0; i < kk; ++i) {
                for (std::size_t j = 0; j < kk; ++j) { ga(blk * kk + i, j) = -gablk(i, j); }
            }
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Reciprocal: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const cplx w = n.value[i];
            ga[i] = -std::conj(w * w) * g[i];
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::SqrtReal: {
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = g[i].real() / (2.0 * std::max(n.value[i].real(), 1e-12));
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::Log1pReal: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = g[i].real() / (1.0 + av[i].real());
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::MaxConst: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = av[i].real() > n.a ? g[i].real() : 0.0;
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::MinConst: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = av[i].real() < n.a ? g[i].real() : 0.0;
        }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::AbsSq: {
        const CMat& av = in_val(0);
        CMat ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < ga.size(); ++i) { ga[i] = 2.0 * av[i] * g[i].real(); }
        accumulate(n.in[0], ga);
        break;
    }
    case Op::AddRowvec: {
        accumulate(n.in[0], g);
        CMat gr(1, g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < g.cols(); ++c) { gr(0, c) += g(r, c); }
        }
        accumulate(n.in[1], gr);
        break;
    }
    }
}

// ---- gradient checking ------------------------------------------------------

void GradCheckReport::write_csv(std::ostream& out) const {
    out << "input,coord,analytic,numeric,abs_err,rel_err,below_resolution\n";
    out.precision(17);
    for (const auto& e : entries) {
        out << e.input << ',' << e.coord << ',' << e.analytic << ',' << e.numeric << ','
            << e.abs_err << ',' << e.rel_err << ',' << (e.below_resolution ? 1 : 0) << '\n';
    }
}

GradCheckReport grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                           const std::vector<CMat>& inputs, double step, std::size_t max_coords,
                           std::uint64_t seed, double abs_floor) {
    const auto eval = [&](const std::vector<CMat>& xs) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const auto& x : xs) { vars.push_back(t.leaf(x, true)); }
        const Var loss = f(t, vars);
        const CMat& lv = loss.value();
        require(lv.rows() == 1 && lv.cols() == 1 && lv(0, 0).imag() == 0.0,
                "grad_check: function must produce a real scalar");
        return lv(0, 0).real();
    };

    // Analytic gradients.
    Tape t;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& x : inputs) { vars.push_back(t.leaf(x, true)); }
    const Var loss = f(t, vars);
    t.backward(loss);
    std::vector<CMat> analytic;
    analytic.reserve(inputs.size());
    for (const auto& v : vars) { analytic.push_back(t.adjoint(v)); }

    // Coordinate list over the flat (re, im) parametrization.
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t c = 0; c < 2 * inputs[i].size(); ++c) { coords.emplace_back(i, c); }
    }
    if (max_coords > 0 && max_coords < coords.size()) {
        Rng rng(derive_seed(seed, 0xC0DE));
        for (std::size_t i = 0; i < max_coords; ++i) {
            const std::size_t j = i + rng.index(coords.size() - i);
            std::swap(coords[i], coords[j]);
        }
        coords.resize(max_coords);
    }

    GradCheckReport report;
    report.coords_checked = coords.size();
    report.abs_floor = abs_floor;
    report.entries.reserve(coords.size());
    for (const auto& [i, c] : coords) {
        std::vector<CMat> xs = inputs;
        const double orig = xs[i].reals()[c];
        xs[i].reals()[c] = orig + step;
        const double fp = eval(xs);
        xs[i].reals()[c] = orig - step;
        const double fm = eval(xs);
        xs[i].reals()[c] = orig;

        GradCheckReport::Entry e;
        e.input = i;
        e.coord = c;
        e.numeric = (fp - fm) / (2.0 * step);
        e.analytic = analytic[i].reals()[c];
        e.abs_err = std::abs(e.analytic - e.numeric);
        e.rel_err = e.abs_err / std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-12});
        e.below_resolution =
            std::abs(e.analytic) < abs_floor && std::abs(e.numeric) < abs_floor;
        if (e.below_resolution) {
            ++report.below_resolution_count;
        } else {
            report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
        }
        report.entries.push_back(e);
    }
    return report;
}

} // namespace fasgnn::ad
