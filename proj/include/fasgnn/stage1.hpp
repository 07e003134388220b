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

#include "fasgnn/autodiff.hpp"
#include "fasgnn/channel.hpp"
#include "fasgnn/gnn.hpp"

#include <span>
#include <vector>

namespace fasgnn::stage1 {

// Raw head outputs: unconstrained spacing logits xi_2..xi_N and the span
// logit xi_max. Feasible positions are reconstructed from these by
// construction, for any real values.
struct PositionHeadOutput {
    std::vector<double> xi; // length N-1
    double xi_max = 0.0;
};

struct SpacingVector {
    std::vector<double> delta; // length N, delta[0] == 0
    double delta_max = 0.0;    // D - (N-1) * min_spacing
};

double delta_budget(const SystemConfig& cfg);

// ---- batched tape path -------------------------------------------------------

struct HeadVars {
    ad::Var xi;     // M x (N-1), real
    ad::Var xi_max; // M x 1, real
};

// theta_feats: (M*K) x 1 complex node features (theta + 0i, or e^{i theta}
// behind the arch flag). Runs the two stage-1 branches (spacing logits and
// span logit) through their attention + virtual-node + FC chains.
HeadVars forward(ad::Tape& t, ad::Var theta_feats, const gnn::BoundParams& p, bool training,
                 gnn::ParamStore* stats, std::size_t m, std::size_t k,
                 const gnn::ArchConfig& arch, const SystemConfig& cfg);

// M x (N-1) spacing excesses: softmax(xi) * delta_max * sigmoid(xi_max).
ad::Var xi_to_delta(ad::Tape& t, ad::Var xi, ad::Var xi_max, const SystemConfig& cfg);

// M x N positions: x_n = (n-1) * min_spacing + cumulative spacing excess.
ad::Var delta_to_positions(ad::Tape& t, ad::Var delta, const SystemConfig& cfg);

struct ChannelVars {
    ad::Var g;        // (M*K) x N; row (m,k) is h(x_m, theta_k)^H
    ad::Var features; // (M*K) x N; row (m,k) is h(x_m, theta_k)^T
};

// Differentiable channel construction from on-tape positions; values match
// channel_matrix() bitwise on identical inputs.
ChannelVars positions_to_channels(ad::Tape& t, ad::Var positions,
                                  std::span<const ChannelSample> batch, const SystemConfig& cfg);

// ---- single-instance value path ------------------------------------------------

SpacingVector xi_to_delta(const PositionHeadOutput& out, const SystemConfig& cfg);
AntennaPositions delta_to_positions(const SpacingVector& delta, const SystemConfig& cfg);

// Evaluation-mode head outputs for one sample.
PositionHeadOutput forward_eval(const ChannelSample& sample, const gnn::ParamStore& store,
                                const gnn::ArchConfig& arch, const SystemConfig& cfg);

// Builds the constant theta node-feature column for a batch.
CMat theta_features(std::span<const ChannelSample> batch, const gnn::ArchConfig& arch);

} // namespace fasgnn::stage1
