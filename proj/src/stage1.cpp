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

#include "fasgnn/stage1.hpp"

#include <cmath>
#include <stdexcept>

namespace fasgnn::stage1 {

using ad::Var;

double delta_budget(const SystemConfig& cfg) {
    return cfg.aperture - static_cast<double>(cfg.n_antennas - 1) * cfg.min_spacing;
}

namespace {

void check_finite(const Var& v, const std::string& where) {
    if (!v.value().all_finite()) {
        throw std::runtime_error("stage1: non-finite values after " + where);
    }
}

// One branch: attention layers with the virtual-node readout, then the FC
// chain on the graph-level feature.
Var branch(ad::Tape& t, Var feats, const gnn::BoundParams& p, const std::string& prefix,
           std::size_t n_gal, std::size_t n_fc, bool training, gnn::ParamStore* stats,
           std::size_t m, std::size_t k, const gnn::ArchConfig& arch) {
    Var nodes = feats;
    Var virt = t.constant(CMat(m, feats.cols())); // v_0 = 0
    for (std::size_t g = 0; g < n_gal; ++g) {
        nodes = gnn::cgal_forward(t, nodes, p, prefix, g, m, k, arch);
        virt = gnn::virtual_node_forward(t, nodes, virt, p, prefix, g, m, k, arch);
        check_finite(virt, prefix + "/gal" + std::to_string(g));
    }
    Var h = virt;
    for (std::size_t f = 0; f + 1 < n_fc; ++f) {
        h = gnn::cfl_forward(t, h, p, prefix + "/fc" + std::to_string(f), training, stats, arch);
        check_finite(h, prefix + "/fc" + std::to_string(f));
    }
    return ad::re(gnn::cfl_final(t, h, p, prefix + "/fc" + std::to_string(n_fc - 1)));
}

} // namespace

HeadVars forward(ad::Tape& t, Var theta_feats, const gnn::BoundParams& p, bool training,
                 gnn::ParamStore* stats, std::size_t m, std::size_t k,
                 const gnn::ArchConfig& arch, const SystemConfig& cfg) {
    if (cfg.n_antennas < 2) {
        throw std::invalid_argument("stage1: N >= 2 required (head width is N-1)");
    }
    HeadVars out;
    out.xi = branch(t, theta_feats, p, "s1_xi", arch.g1, arch.f1, training, stats, m, k, arch);
    out.xi_max =
        branch(t, theta_feats, p, "s1_max", arch.g2, arch.f2, training, stats, m, k, arch);
    check_finite(out.xi, "s1_xi head");
    check_finite(out.xi_max, "s1_max head");
    return out;
}

Var xi_to_delta(ad::Tape& t, Var xi, Var xi_max, const SystemConfig& cfg) {
    (void)t;
    const Var weights = ad::softmax_rows(xi);           // rows sum to 1, positive
    const Var span = ad::sigmoid(xi_max);               // (0, 1)
    const Var scaled = ad::mul_colvec(weights, span);   // rows sum to sigmoid(xi_max)
    return ad::scalar_mul(scaled, delta_budget(cfg));
}

Var delta_to_positions(ad::Tape& t, Var delta, const SystemConfig& cfg) {
    const std::size_t n = cfg.n_antennas;
    const std::size_t m = delta.rows();
    if (delta.cols() != n - 1) {
        throw std::invalid_argument("delta_to_positions: expected N-1 spacing columns");
    }
    // x = [0 | delta] * U + (n-1)*Delta offsets, U upper-triangular ones.
    const Var full = ad::concat({t.constant(CMat(m, 1)), delta}, 1);
    CMat cum(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) { cum(i, j) = 1.0; }
    }
    CMat offsets(m, n);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            offsets(r, j) = static_cast<double>(j) * cfg.min_spacing;
        }
    }
    return ad::add(ad::matmul(full, t.constant(cum)), t.constant(offsets));
}

ChannelVars positions_to_channels(ad::Tape& t, Var positions,
                                  std::span<const ChannelSample> batch, const SystemConfig& cfg) {
    const std::size_t m = batch.size();
    const std::size_t n = cfg.n_antennas;
    if (positions.rows() != m || positions.cols() != n) {
        throw std::invalid_argument("positions_to_channels: positions must be M x N");
    }
    const std::size_t k = batch.empty() ? 0 : batch[0].angles.size();
    CMat freq(m * k, 1); // (2 pi / lambda) * cos(theta), per (sample, user)
    const double k0 = 2.0 * kPi / cfg.wavelength;
    for (std::size_t s = 0; s < m; ++s) {
        if (batch[s].angles.size() != k) {
            throw std::invalid_argument("positions_to_channels: ragged batch");
        }
        for (std::size_t u = 0; u < k; ++u) {
            freq(s * k + u, 0) = k0 * std::cos(batch[s].angles[u]);
        }
    }
    const Var phases = ad::mul_colvec(ad::repeat_rows(positions, k), t.constant(freq));
    ChannelVars out;
    out.features = ad::exp_i(phases); // rows h^T
    out.g = ad::conj(out.features);   // rows h^H
    return out;
}

SpacingVector xi_to_delta(const PositionHeadOutput& out, const SystemConfig& cfg) {
    ad::Tape t;
    const Var xi = t.constant(CMat::row(out.xi));
    const Var xi_max = t.constant(CMat::scalar(out.xi_max));
    const CMat d = xi_to_delta(t, xi, xi_max, cfg).value();
    SpacingVector sv;
    sv.delta_max = delta_budget(cfg);
    sv.delta.resize(cfg.n_antennas, 0.0);
    for (std::size_t i = 0; i + 1 < cfg.n_antennas; ++i) { sv.delta[i + 1] = d(0, i).real(); }
    return sv;
}

AntennaPositions delta_to_positions(const SpacingVector& sv, const SystemConfig& cfg) {
    if (sv.delta.size() != cfg.n_antennas || sv.delta[0] != 0.0) {
        throw std::invalid_argument("delta_to_positions: delta must have N entries with delta_1 = 0");
    }
    ad::Tape t;
    CMat d(1, cfg.n_antennas - 1);
    for (std::size_t i = 0; i + 1 < cfg.n_antennas; ++i) { d(0, i) = sv.delta[i + 1]; }
    const CMat x = delta_to_positions(t, t.constant(d), cfg).value();
    AntennaPositions out;
    out.x.resize(cfg.n_antennas);
    for (std::size_t i = 0; i < cfg.n_antennas; ++i) { out.x[i] = x(0, i).real(); }
    return out;
}

CMat theta_features(std::span<const ChannelSample> batch, const gnn::ArchConfig& arch) {
    const std::size_t m = batch.size();
    const std::size_t k = batch.empty() ? 0 : batch[0].angles.size();
    CMat feats(m * k, 1);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t u = 0; u < k; ++u) {
            const double theta = batch[s].angles[u];
            feats(s * k + u, 0) = arch.theta_phase_embedding
                                      ? cplx(std::cos(theta), std::sin(theta))
                                      : cplx(theta, 0.0);
        }
    }
    return feats;
}

PositionHeadOutput forward_eval(const ChannelSample& sample, const gnn::ParamStore& store,
                                const gnn::ArchConfig& arch, const SystemConfig& cfg) {
    ad::Tape t;
    const gnn::BoundParams p = gnn::bind(t, store);
    const std::span<const ChannelSample> batch(&sample, 1);
    const Var feats = t.constant(theta_features(batch, arch));
    const HeadVars heads =
        forward(t, feats, p, false, nullptr, 1, sample.angles.size(), arch, cfg);
    PositionHeadOutput out;
    out.xi.resize(cfg.n_antennas - 1);
    for (std::size_t i = 0; i + 1 < cfg.n_antennas; ++i) {
        out.xi[i] = heads.xi.value()(0, i).real();
    }
    out.xi_max = heads.xi_max.value()(0, 0).real();
    return out;
}

} // namespace fasgnn::stage1
