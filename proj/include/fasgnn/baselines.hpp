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
#include "fasgnn/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace fasgnn::baselines {

struct GridSpec {
    std::size_t alpha_points = 11;    // per-user grid on [0, 1]
    std::size_t power_points = 11;    // per-user power levels for the simplex
    std::size_t position_points = 50; // per free antenna coordinate
    std::size_t budget = 200'000'000; // utility evaluations allowed per sample

    void validate() const;
};

struct BaselineResult {
    std::string method;
    AntennaPositions positions;
    BeamformingSolution beams;
    double utility = 0.0;
    double seconds = 0.0;
};

// w_k = sqrt(P_max/K) h_k / ||h_k||.
BeamformingSolution mrt_equal_power(const ChannelMatrix& g, const SystemConfig& cfg);

// w_k = sqrt(P_max/K) u_k / ||u_k||.
BeamformingSolution zf_equal_power(const ChannelMatrix& g, const SystemConfig& cfg);

// Exhaustive search over the per-user alpha grid and the power simplex grid
// (level tuples with sum <= P_max plus their full-power projections) for
// fixed antenna positions. Ties break toward the lexicographically smallest
// grid index. Throws when the grid exceeds spec.budget, naming the needed
// budget.
BaselineResult hzf_grid_search(const ChannelMatrix& g, const AntennaPositions& x,
                               const SystemConfig& cfg, Utility utility, const GridSpec& spec);

// Nested exhaustive search over feasible positions (x_1 = 0; the remaining
// coordinates on grids respecting the spacing and aperture) with
// hzf_grid_search as the inner solver. Desk-scale reference: N <= 3.
BaselineResult position_grid_oracle(const ChannelSample& sample, const SystemConfig& cfg,
                                    Utility utility, const GridSpec& spec);

enum class Method {
    EquidistantMrt,
    EquidistantZf,
    EquidistantHzfGrid,
    EquidistantStage2,
    Stage1Stage2,
    Stage1HzfGrid,
};

std::string method_name(Method m);

struct ComparisonRow {
    std::string method;
    double mean_utility = 0.0;
    double mean_seconds = 0.0;
};

// Per-method mean utility over a dataset. Methods using the learned stages
// require a model; classical rows run without one.
std::vector<ComparisonRow> compare_table(const std::vector<Method>& methods,
                                         const Dataset& data, const SystemConfig& cfg,
                                         Utility utility, const GridSpec& spec,
                                         const TwoStageModel* model);

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows,
                          bool with_timing = true);
void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows);

} // namespace fasgnn::baselines
