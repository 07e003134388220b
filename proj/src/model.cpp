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

#include "fasgnn/model.hpp"

#include "fasgnn/config.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fasgnn {

using ad::Var;

TwoStageModel::TwoStageModel(SystemConfig cfg, gnn::ArchConfig arch, std::uint64_t seed)
    : cfg_(std::move(cfg)), arch_(arch) {
    cfg_.validate();
    arch_.validate();
    if (cfg_.n_antennas < 2) {
        throw std::invalid_argument("TwoStageModel: N >= 2 required (stage-1 head is N-1 wide)");
    }
    const std::size_t n = cfg_.n_antennas;
    const std::size_t in1 = 1; // theta embedding is a complex scalar per node
    Rng rng(derive_seed(seed, 0x1217));
    gnn::init_branch(params_, "s1_xi", arch_.g1, arch_.f1, in1, n - 1, true, arch_, rng);
    gnn::init_branch(params_, "s1_max", arch_.g2, arch_.f2, in1, 1, true, arch_, rng);
    gnn::init_branch(params_, "s2_p", arch_.g3, arch_.f3, n, 1, false, arch_, rng);
    gnn::init_branch(params_, "s2_alpha", arch_.g4, arch_.f4, n, 1, false, arch_, rng);
}

TwoStageModel TwoStageModel::from_checkpoint(const std::string& path) {
    gnn::Checkpoint ck = gnn::load_checkpoint(path);
    TwoStageModel model(system_from_json(ck.system_json), arch_from_json(ck.arch_json), 0);
    if (model.params_.size() != ck.params.size()) {
        throw std::runtime_error("from_checkpoint: parameter set does not match architecture");
    }
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        auto& dst = model.params_.entry(i);
        const auto& src = ck.params.entry(i);
        if (dst.name != src.name || !dst.value.same_shape(src.value)) {
            throw std::runtime_error("from_checkpoint: mismatched entry " + src.name);
        }
        dst.value = src.value;
    }
    return model;
}

void TwoStageModel::save_checkpoint(const std::string& path) const {
    gnn::Checkpoint ck;
    ck.arch_json = arch_to_json(arch_);
    ck.system_json = system_to_json(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& e = params_.entry(i);
        ck.params.add(e.name, e.value, e.trainable);
    }
    gnn::save_checkpoint(ck, path);
}

TwoStageModel::ForwardVars TwoStageModel::forward(ad::Tape& t,
                                                  std::span<const ChannelSample> batch,
                                                  const Options& opts,
                                                  gnn::ParamStore* mutable_stats) const {
    if (batch.empty()) { throw std::invalid_argument("forward: empty batch"); }
    const std::size_t m = batch.size();
    const std::size_t k = batch[0].angles.size();
    const std::size_t n = cfg_.n_antennas;
    if (k < 1 || k > n) {
        throw std::invalid_argument("forward: 1 <= K <= N required for the zero-forcing basis");
    }
    if (!cfg_.path_loss.empty() && cfg_.path_loss.size() != k) {
        throw std::invalid_argument("forward: path_loss length does not match batch K");
    }
    for (const auto& s : batch) {
        if (s.angles.size() != k) { throw std::invalid_argument("forward: ragged batch"); }
    }
    if (opts.training && mutable_stats == nullptr) {
        throw std::invalid_argument("forward: training mode needs mutable statistics");
    }

    ForwardVars out;
    out.m = m;
    out.k = k;
    out.bound = gnn::bind(t, params_);

    // Stage 1: antenna positions (or the fixed ablation geometry).
    if (opts.fixed_positions == nullptr) {
        const Var theta = t.constant(stage1::theta_features(batch, arch_));
        const auto heads = stage1::forward(t, theta, out.bound, opts.training, mutable_stats, m,
                                           k, arch_, cfg_);
        const Var delta = stage1::xi_to_delta(t, heads.xi, heads.xi_max, cfg_);
        out.positions = stage1::delta_to_positions(t, delta, cfg_);
    } else {
        if (opts.fixed_positions->x.size() != n) {
            throw std::invalid_argument("forward: fixed positions must have N coordinates");
        }
        CMat xs(m, n);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < n; ++c) { xs(r, c) = opts.fixed_positions->x[c]; }
        }
        out.positions = t.constant(xs);
    }

    // Residual connection: differentiable channel from the positions.
    const auto chan = stage1::positions_to_channels(t, out.positions, batch, cfg_);

    // Stage 2: powers and mixing weights, then feasible beams.
    const auto heads =
        stage2::forward(t, chan.features, out.bound, opts.training, mutable_stats, m, k, arch_, cfg_);
    out.p = stage2::power_projection(t, heads.p_raw, cfg_.p_max);
    out.alpha = heads.alpha;
    const Var basis = stage2::zf_directions(t, chan.g, m, k, n);
    out.beams = stage2::assemble_beams(t, out.p, out.alpha, basis, chan.g, m, k, n);

    // Utilities per sample.
    const Var products = ad::block_matmul(chan.g, out.beams, k, n); // (M*K) x K, h_k^H w_i
    const Var powers2 = ad::abs_sq(products);
    CMat diag_mask(m * k, k);
    CMat off_mask(m * k, k);
    CMat dvec(m * k, 1);
    CMat noise(m * k, 1);
    for (std::size_t s = 0; s < m; ++s) {
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t i = 0; i < k; ++i) {
                (i == u ? diag_mask : off_mask)(s * k + u, i) = 1.0;
            }
            dvec(s * k + u, 0) = cfg_.path_loss_of(u);
            noise(s * k + u, 0) = cfg_.noise_power;
        }
    }
    const Var signal =
        ad::cmul(ad::reduce_rows(ad::cmul(powers2, t.constant(diag_mask))), t.constant(dvec));
    const Var interference =
        ad::cmul(ad::reduce_rows(ad::cmul(powers2, t.constant(off_mask))), t.constant(dvec));
    const Var gamma = ad::cmul(signal, ad::reciprocal(ad::add(interference, t.constant(noise))));

    const double inv_ln2 = 1.0 / std::numbers::ln2;
    const Var per_user_rate = ad::scalar_mul(ad::log1p_real(gamma), inv_ln2);
    out.sum_rate = ad::reduce_rows(ad::reshape(per_user_rate, m, k)); // M x 1

    const Var tx_power = ad::reduce_rows(out.p); // M x 1
    const Var pc = t.constant(CMat::full(m, 1, cfg_.p_c));
    out.ee = ad::cmul(out.sum_rate, ad::reciprocal(ad::add(tx_power, pc)));

    out.utility = opts.utility == Utility::SumRate ? out.sum_rate : out.ee;
    out.loss = ad::reduce_mean(ad::reciprocal(ad::max_const(out.utility, kUtilityFloor)));
    return out;
}

namespace {

TwoStageModel::Inference extract(const TwoStageModel::ForwardVars& fv, std::size_t n,
                                 std::size_t k) {
    TwoStageModel::Inference inf;
    inf.positions.x.resize(n);
    for (std::size_t c = 0; c < n; ++c) { inf.positions.x[c] = fv.positions.value()(0, c).real(); }
    inf.beams = CMat(n, k);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t u = 0; u < k; ++u) { inf.beams(a, u) = fv.beams.value()(a, u); }
    }
    inf.p.resize(k);
    inf.alpha.resize(k);
    for (std::size_t u = 0; u < k; ++u) {
        inf.p[u] = fv.p.value()(0, u).real();
        inf.alpha[u] = fv.alpha.value()(0, u).real();
    }
    inf.sum_rate = fv.sum_rate.value()(0, 0).real();
    inf.ee = fv.ee.value()(0, 0).real();
    return inf;
}

} // namespace

TwoStageModel::Inference TwoStageModel::infer(const ChannelSample& sample) const {
    ad::Tape t;
    const auto fv = forward(t, std::span<const ChannelSample>(&sample, 1), Options{}, nullptr);
    return extract(fv, cfg_.n_antennas, sample.angles.size());
}

TwoStageModel::Inference TwoStageModel::infer_fixed_positions(
    const ChannelSample& sample, const AntennaPositions& positions) const {
    ad::Tape t;
    Options opts;
    opts.fixed_positions = &positions;
    const auto fv = forward(t, std::span<const ChannelSample>(&sample, 1), opts, nullptr);
    return extract(fv, cfg_.n_antennas, sample.angles.size());
}

} // namespace fasgnn
