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

#include "fasgnn/channel.hpp"
#include "fasgnn/gnn.hpp"
#include "fasgnn/stage1.hpp"
#include "fasgnn/stage2.hpp"

#include <span>
#include <string>

namespace fasgnn {

// The full two-stage network: antenna-position learning feeding beamforming
// learning through the differentiable channel. The learnable set is
// independent of K, so one model evaluates any user count 1 <= K <= N.
class TwoStageModel {
  public:
    TwoStageModel(SystemConfig cfg, gnn::ArchConfig arch, std::uint64_t seed);

    static TwoStageModel from_checkpoint(const std::string& path);
    void save_checkpoint(const std::string& path) const;

    const SystemConfig& config() const { return cfg_; }
    const gnn::ArchConfig& arch() const { return arch_; }
    const gnn::ParamStore& params() const { return params_; }
    gnn::ParamStore& params() { return params_; }

    // Flattened length of the learnable real-pair vector Theta.
    std::size_t parameter_count() const { return params_.trainable_real_coords(); }

    struct Options {
        bool training = false;                             // BN mode + stats updates
        Utility utility = Utility::SumRate;                // objective for `loss`
        const AntennaPositions* fixed_positions = nullptr; // ablation: bypass stage 1
    };

    struct ForwardVars {
        std::size_t m = 0, k = 0;
        ad::Var positions; // M x N real
        ad::Var p;         // M x K projected powers
        ad::Var alpha;     // M x K mixing weights
        ad::Var beams;     // (M*N) x K
        ad::Var sum_rate;  // M x 1
        ad::Var ee;        // M x 1
        ad::Var utility;   // M x 1, selected objective
        ad::Var loss;      // 1 x 1, mean of 1/U with the degenerate-U clamp
        gnn::BoundParams bound;
    };

    // Builds the whole batch on one tape. In training mode `mutable_stats`
    // must point at this model's ParamStore (BatchNorm running statistics
    // are updated in place); in evaluation mode pass nullptr.
    ForwardVars forward(ad::Tape& t, std::span<const ChannelSample> batch, const Options& opts,
                        gnn::ParamStore* mutable_stats) const;

    struct Inference {
        AntennaPositions positions;
        BeamformingSolution beams;
        std::vector<double> p;
        std::vector<double> alpha;
        double sum_rate = 0.0;
        double ee = 0.0;
    };

    // Deterministic evaluation-mode forward for one sample.
    Inference infer(const ChannelSample& sample) const;
    Inference infer_fixed_positions(const ChannelSample& sample,
                                    const AntennaPositions& positions) const;

  private:
    SystemConfig cfg_;
    gnn::ArchConfig arch_;
    gnn::ParamStore params_;
};

// Degenerate-utility clamp used by the unsupervised loss (Eq.-style 1/U).
inline constexpr double kUtilityFloor = 1e-9;

} // namespace fasgnn
