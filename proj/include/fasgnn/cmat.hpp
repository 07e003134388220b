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

#include "fasgnn/common.hpp"

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fasgnn {

// Dense row-major complex matrix. Vectors are 1xC or Rx1, scalars 1x1.
class CMat {
  public:
    CMat() = default;
    CMat(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

    static CMat zeros(std::size_t rows, std::size_t cols) { return CMat(rows, cols); }

    static CMat full(std::size_t rows, std::size_t cols, cplx v) {
        CMat m(rows, cols);
        for (auto& e : m.data_) { e = v; }
        return m;
    }

    static CMat eye(std::size_t n) {
        CMat m(n, n);
        for (std::size_t i = 0; i < n; ++i) { m(i, i) = 1.0; }
        return m;
    }

    static CMat scalar(cplx v) {
        CMat m(1, 1);
        m(0, 0) = v;
        return m;
    }

    static CMat row(const std::vector<double>& v) {
        CMat m(1, v.size());
        for (std::size_t j = 0; j < v.size(); ++j) { m(0, j) = v[j]; }
        return m;
    }

    static CMat col(const std::vector<double>& v) {
        CMat m(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) { m(i, 0) = v[i]; }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    cplx& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const cplx& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    cplx& operator[](std::size_t i) { return data_[i]; }
    const cplx& operator[](std::size_t i) const { return data_[i]; }

    cplx* data() { return data_.data(); }
    const cplx* data() const { return data_.data(); }

    // Raw interleaved (re, im) view for hot kernels.
    double* reals() { return reinterpret_cast<double*>(data_.data()); }
    const double* reals() const { return reinterpret_cast<const double*>(data_.data()); }

    bool same_shape(const CMat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    CMat conjugate() const {
        CMat out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i) { out.data_[i] = std::conj(data_[i]); }
        return out;
    }

    CMat hermitian() const {
        CMat out(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i) {
            for (std::size_t j = 0; j < cols_; ++j) { out(j, i) = std::conj((*this)(i, j)); }
        }
        return out;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& e : data_) { m = std::max(m, std::abs(e)); }
        return m;
    }

    double frobenius() const {
        double s = 0.0;
        for (const auto& e : data_) { s += std::norm(e); }
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (const auto& e : data_) {
            if (!std::isfinite(e.real()) || !std::isfinite(e.imag())) { return false; }
        }
        return true;
    }

    bool all_real(double tol = 0.0) const {
        for (const auto& e : data_) {
            if (std::abs(e.imag()) > tol) { return false; }
        }
        return true;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<cplx> data_;
};

inline CMat matmul(const CMat& a, const CMat& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: " + a.shape_str() + " * " + b.shape_str());
    }
    CMat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const cplx aik = a(i, k);
            if (aik == cplx{}) { continue; }
            for (std::size_t j = 0; j < b.cols(); ++j) { c(i, j) += aik * b(k, j); }
        }
    }
    return c;
}

inline double max_abs_diff(const CMat& a, const CMat& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) { m = std::max(m, std::abs(a[i] - b[i])); }
    return m;
}

} // namespace fasgnn
