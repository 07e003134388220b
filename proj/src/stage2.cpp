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

#include "fasgnn/stage2.hpp"

#include <cmath>
#include <stdexcept>

namespace fasgnn::stage2 {

using ad::Var;

namespace {

constexpr double kNormFloor = 1e-12;

void check_finite(const Var& v, const std::string& where) {
    if (!v.value().all_finite()) {
        throw std::runtime_error("stage2: non-finite values after " + where);
    }
}

// Node-level branch: attention layers then per-node FC chain to one output.
Var branch(ad::Tape& t, Var feats, const gnn::BoundParams& p, const std::string& prefix,
           std::size_t n_gal, std::size_t n_fc, bool training, gnn::ParamStore* stats,
           std::size_t m, std::size_t k, const gnn::ArchConfig& arch) {
    Var nodes = feats;
    for (std::size_t g = 0; g < n_gal; ++g) {
        nodes = gnn::cgal_forward(t, nodes, p, prefix, g, m, k, arch);
        check_finite(nodes, prefix + "/gal" + std::to_string(g));
    }
    for (std::size_t f = 0; f + 1 < n_fc; ++f) {
        nodes = gnn::cfl_forward(t, nodes, p, prefix + "/fc" + std::to_string(f), training, stats,
                                 arch);
        check_finite(nodes, prefix + "/fc" + std::to_string(f));
    }
    return ad::re(gnn::cfl_final(t, nodes, p, prefix + "/fc" + std::to_string(n_fc - 1)));
}

// Unit columns per sample block, with the norm floored before division.
Var normalize_block_cols(Var x, std::size_t n) {
    const Var norms = ad::sqrt_real(ad::block_sum_rows(ad::abs_sq(x), n)); // M x K
    const Var inv = ad::reciprocal(ad::max_const(norms, kNormFloor));
    return ad::cmul(x, ad::repeat_rows(inv, n));
}

} // namespace

HeadVars forward(ad::Tape& t, Var features, const gnn::BoundParams& p, bool training,
                 gnn::ParamStore* stats, std::size_t m, std::size_t k,
                 const gnn::ArchConfig& arch, const SystemConfig& cfg) {
    HeadVars out;
    const Var p_head =
        branch(t, features, p, "s2_p", arch.g3, arch.f3, training, stats, m, k, arch);
    const Var a_head =
        branch(t, features, p, "s2_alpha", arch.g4, arch.f4, training, stats, m, k, arch);
    out.p_raw = ad::scalar_mul(ad::sigmoid(ad::reshape(p_head, m, k)), cfg.p_max);
    out.alpha = ad::sigmoid(ad::reshape(a_head, m, k));
    return out;
}

Var zf_directions(ad::Tape& t, Var g, std::size_t m, std::size_t k, std::size_t n) {
    (void)t;
    if (k > n) { throw std::invalid_argument("zf_directions: K <= N required"); }
    const Var gh = ad::block_hermitian(g, k);              // (M*N) x K
    const Var gram = ad::block_matmul(g, gh, k, n);        // (M*K) x K
    const Var inv = ad::block_hpd_inverse(gram, k);        // (M*K) x K
    (void)m;
    return ad::block_matmul(gh, inv, n, k);                // (M*N) x K
}

Var power_projection(ad::Tape& t, Var p_raw, double p_max) {
    // Rows always have positive sums here (sigmoid outputs), so the
    // reciprocal is safe; factor = min(1, P_max / sum).
    const Var sums = ad::reduce_rows(p_raw);
    const Var factor = ad::min_const(ad::scalar_mul(ad::reciprocal(sums), p_max), 1.0);
    (void)t;
    return ad::mul_colvec(p_raw, factor);
}

Var assemble_beams(ad::Tape& t, Var p_proj, Var alpha, Var zf_basis, Var channel_g,
                   std::size_t m, std::size_t k, std::size_t n) {
    const Var h_cols = ad::block_hermitian(channel_g, k); // (M*N) x K, col k = h_k
    const Var u_unit = normalize_block_cols(zf_basis, n);
    const Var h_unit = normalize_block_cols(h_cols, n);

    const Var alpha_rows = ad::repeat_rows(alpha, n); // (M*N) x K
    const Var ones = t.constant(CMat::full(m * n, k, 1.0));
    const Var mix = ad::add(ad::cmul(alpha_rows, u_unit),
                            ad::cmul(ad::sub(ones, alpha_rows), h_unit));
    const Var direction = normalize_block_cols(mix, n);
    return ad::cmul(direction, ad::repeat_rows(ad::sqrt_real(p_proj), n));
}

// ---- value path ----------------------------------------------------------------

ZFBasis zf_directions(const ChannelMatrix& g) {
    const std::size_t k = g.rows();
    const std::size_t n = g.cols();
    if (k > n) { throw std::invalid_argument("zf_directions: K <= N required"); }
    // gram = G G^H
    CMat gram(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            cplx acc{};
            for (std::size_t a = 0; a < n; ++a) { acc += g(i, a) * std::conj(g(j, a)); }
            gram(i, j) = acc;
        }
    }
    const CMat inv = ad::hpd_inverse_value(gram);
    CMat u(n, k);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t j = 0; j < k; ++j) {
            cplx acc{};
            for (std::size_t i = 0; i < k; ++i) { acc += std::conj(g(i, a)) * inv(i, j); }
            u(a, j) = acc;
        }
    }
    return u;
}

std::vector<cplx> hybrid_direction(const std::vector<cplx>& u_k, const std::vector<cplx>& h_k,
                                   double alpha_k) {
    if (u_k.size() != h_k.size() || u_k.empty()) {
        throw std::invalid_argument("hybrid_direction: vector size mismatch");
    }
    double un = 0.0, hn = 0.0;
    for (const auto& e : u_k) { un += std::norm(e); }
    for (const auto& e : h_k) { hn += std::norm(e); }
    un = std::max(std::sqrt(un), kNormFloor);
    hn = std::max(std::sqrt(hn), kNormFloor);
    std::vector<cplx> mix(u_k.size());
    double mixn = 0.0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        mix[i] = alpha_k * u_k[i] / un + (1.0 - alpha_k) * h_k[i] / hn;
        mixn += std::norm(mix[i]);
    }
    mixn = std::max(std::sqrt(mixn), kNormFloor);
    for (auto& e : mix) { e /= mixn; }
    return mix;
}

std::vector<double> power_projection(const std::vector<double>& p_raw, double p_max) {
    double sum = 0.0;
    for (double p : p_raw) {
        if (p < 0.0) { throw std::invalid_argument("power_projection: negative power"); }
        sum += p;
    }
    if (sum <= p_max || sum == 0.0) { return p_raw; }
    std::vector<double> out = p_raw;
    for (auto& p : out) { p *= p_max / sum; }
    return out;
}

BeamformingSolution assemble_beams(const HZFParams& hzf, const ZFBasis& basis,
                                   const ChannelMatrix& g) {
    const std::size_t n = basis.rows();
    const std::size_t k = basis.cols();
    if (hzf.p.size() != k || hzf.alpha.size() != k || g.rows() != k || g.cols() != n) {
        throw std::invalid_argument("assemble_beams: shape mismatch");
    }
    CMat w(n, k);
    for (std::size_t user = 0; user < k; ++user) {
        std::vector<cplx> u(n), h(n);
        for (std::size_t a = 0; a < n; ++a) {
            u[a] = basis(a, user);
            h[a] = std::conj(g(user, a));
        }
        const auto dir = hybrid_direction(u, h, hzf.alpha[user]);
        const double amp = std::sqrt(hzf.p[user]);
        for (std::size_t a = 0; a < n; ++a) { w(a, user) = amp * dir[a]; }
    }
    return w;
}

HZFParams forward_eval(const ChannelMatrix& g, const gnn::ParamStore& store,
                       const gnn::ArchConfig& arch, const SystemConfig& cfg) {
    const std::size_t k = g.rows();
    ad::Tape t;
    const gnn::BoundParams p = gnn::bind(t, store);
    // Node features are h^T rows = conj of the channel rows.
    const Var features = t.constant(g.conjugate());
    const HeadVars heads = forward(t, features, p, false, nullptr, 1, k, arch, cfg);
    const Var projected = power_projection(t, heads.p_raw, cfg.p_max);
    HZFParams out;
    out.p.resize(k);
    out.alpha.resize(k);
    for (std::size_t u = 0; u < k; ++u) {
        out.p[u] = projected.value()(0, u).real();
        out.alpha[u] = heads.alpha.value()(0, u).real();
    }
    return out;
}

} // namespace fasgnn::stage2
