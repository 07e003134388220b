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

// Reference computations used by the tests. Everything here is written as
// directly as possible, independent of the library's evaluation paths, so a
// disagreement points at the implementation rather than at the oracle.

#pragma once

#include "fasgnn/cmat.hpp"
#include "fasgnn/channel.hpp"
#include "fasgnn/common.hpp"

#include <cmath>
#include <complex>
#include <vector>

namespace oracles {

using fasgnn::cplx;
using fasgnn::CMat;

// Entry-by-entry steering phase, evaluated as scalar arithmetic.
inline cplx steering_entry(double x, double theta, double lambda) {
    const double phase = 2.0 * fasgnn::kPi / lambda * x * std::cos(theta);
    return {std::cos(phase), std::sin(phase)};
}

// SINR of user k computed with plain loops over std::complex scalars.
inline double sinr_user(const CMat& w, const CMat& g, const fasgnn::SystemConfig& cfg,
                        std::size_t k) {
    const std::size_t n = cfg.n_antennas;
    const double dk = cfg.path_loss_of(k);
    double interference = 0.0;
    double signal = 0.0;
    for (std::size_t i = 0; i < cfg.n_users; ++i) {
        cplx acc = 0.0;
        for (std::size_t a = 0; a < n; ++a) {
            const cplx h_ka = std::conj(g(k, a)); // h_k entry
            acc += std::conj(w(a, i)) * std::sqrt(dk) * h_ka;
        }
        if (i == k) {
            signal = std::norm(acc);
        } else {
            interference += std::norm(acc);
        }
    }
    return signal / (interference + cfg.noise_power);
}

// Explicit pseudo-inverse U = G^H (G G^H)^{-1} for K = 2 using the closed
// form of a 2x2 inverse.
inline CMat zf_basis_2users(const CMat& g) {
    const std::size_t n = g.cols();
    cplx a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        a += g(0, j) * std::conj(g(0, j));
        b += g(0, j) * std::conj(g(1, j));
        c += g(1, j) * std::conj(g(0, j));
        d += g(1, j) * std::conj(g(1, j));
    }
    const cplx det = a * d - b * c;
    const cplx inv[2][2] = {{d / det, -b / det}, {-c / det, a / det}};
    CMat u(n, 2);
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t col = 0; col < 2; ++col) {
            u(row, col) = std::conj(g(0, row)) * inv[0][col] + std::conj(g(1, row)) * inv[1][col];
        }
    }
    return u;
}

// Gram-Schmidt orthonormal columns; used to construct Hermitian matrices
// with a prescribed spectrum for conditioning tests.
inline CMat random_unitary(std::size_t n, std::uint64_t seed) {
    fasgnn::Rng rng(seed);
    CMat q(n, n);
    for (std::size_t col = 0; col < n; ++col) {
        std::vector<cplx> v(n);
        for (auto& e : v) { e = cplx(rng.gaussian(), rng.gaussian()); }
        for (std::size_t prev = 0; prev < col; ++prev) {
            cplx dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) { dot += std::conj(q(i, prev)) * v[i]; }
            for (std::size_t i = 0; i < n; ++i) { v[i] -= dot * q(i, prev); }
        }
        double norm = 0.0;
        for (const auto& e : v) { norm += std::norm(e); }
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < n; ++i) { q(i, col) = v[i] / norm; }
    }
    return q;
}

// A = Q diag(eigs) Q^H; Hermitian positive definite when all eigs > 0.
inline CMat hermitian_with_spectrum(const std::vector<double>& eigs, std::uint64_t seed) {
    const std::size_t n = eigs.size();
    const CMat q = random_unitary(n, seed);
    CMat a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            cplx acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) { acc += q(i, k) * eigs[k] * std::conj(q(j, k)); }
            a(i, j) = acc;
        }
    }
    // Force exact Hermitian symmetry so the tolerance check is about the
    // implementation, not about this construction.
    for (std::size_t i = 0; i < n; ++i) {
        a(i, i) = a(i, i).real();
        for (std::size_t j = i + 1; j < n; ++j) { a(j, i) = std::conj(a(i, j)); }
    }
    return a;
}

// max |A*X - I| accumulated in long double, so the measurement itself does
// not drown in double-precision cancellation at high condition numbers.
inline double inverse_residual(const CMat& a, const CMat& x) {
    const std::size_t n = a.rows();
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            long double sr = i == j ? -1.0L : 0.0L;
            long double si = 0.0L;
            for (std::size_t k = 0; k < n; ++k) {
                sr += static_cast<long double>(a(i, k).real()) * x(k, j).real() -
                      static_cast<long double>(a(i, k).imag()) * x(k, j).imag();
                si += static_cast<long double>(a(i, k).real()) * x(k, j).imag() +
                      static_cast<long double>(a(i, k).imag()) * x(k, j).real();
            }
            worst = std::max(worst, static_cast<double>(std::sqrt(sr * sr + si * si)));
        }
    }
    return worst;
}

inline CMat random_cmat(std::size_t rows, std::size_t cols, std::uint64_t seed,
                        double scale = 1.0) {
    fasgnn::Rng rng(seed);
    CMat m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = cplx(rng.gaussian() * scale, rng.gaussian() * scale);
    }
    return m;
}

inline CMat random_real_cmat(std::size_t rows, std::size_t cols, std::uint64_t seed,
                             double scale = 1.0) {
    fasgnn::Rng rng(seed);
    CMat m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) { m[i] = rng.gaussian() * scale; }
    return m;
}

} // namespace oracles
