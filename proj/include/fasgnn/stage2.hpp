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

#include <vector>

namespace fasgnn::stage2 {

// Per-user hybrid MRT/ZF coefficients: transmit powers and mixing weights.
struct HZFParams {
    std::vector<double> p;     // watts, in (0, P_max) before projection
    std::vector<double> alpha; // in (0, 1)
};

// N x K matrix whose column k zero-forces the other users: G U = I.
using ZFBasis = CMat;

// ---- batched tape path -------------------------------------------------------

struct HeadVars {
    ad::Var p_raw; // M x K, P_max * sigmoid(.), before the power projection
    ad::Var alpha; // M x K, sigmoid(.)
};

// features: (M*K) x N channel node features h(x, theta_k)^T.
HeadVars forward(ad::Tape& t, ad::Var features, const gnn::BoundParams& p, bool training,
                 gnn::ParamStore* stats, std::size_t m, std::size_t k,
                 const gnn::ArchConfig& arch, const SystemConfig& cfg);

// (M*N) x K stacked ZF bases U = G^H (G G^H)^{-1} per sample.
ad::Var zf_directions(ad::Tape& t, ad::Var g, std::size_t m, std::size_t k, std::size_t n);

// Conditional rescaling onto the power budget: rows with sum p > P_max are
// scaled back to exactly P_max, rows inside the budget pass through.
ad::Var power_projection(ad::Tape& t, ad::Var p_raw, double p_max);

// (M*N) x K beams w_k = sqrt(p_k) * normalize(alpha_k u_k/|u_k| + (1-alpha_k) h_k/|h_k|).
ad::Var assemble_beams(ad::Tape& t, ad::Var p_proj, ad::Var alpha, ad::Var zf_basis,
                       ad::Var channel_g, std::size_t m, std::size_t k, std::size_t n);

// ---- single-instance value path ------------------------------------------------

ZFBasis zf_directions(const ChannelMatrix& g);

// Unit-norm convex combination of the normalized ZF and MRT directions.
std::vector<cplx> hybrid_direction(const std::vector<cplx>& u_k, const std::vector<cplx>& h_k,
                                   double alpha_k);

std::vector<double> power_projection(const std::vector<double>& p_raw, double p_max);

BeamformingSolution assemble_beams(const HZFParams& hzf, const ZFBasis& basis,
                                   const ChannelMatrix& g);

// Evaluation-mode head outputs for one sample's channel.
HZFParams forward_eval(const ChannelMatrix& g, const gnn::ParamStore& store,
                       const gnn::ArchConfig& arch, const SystemConfig& cfg);

} // namespace fasgnn::stage2
