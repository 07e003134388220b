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

#include "fasgnn/cmat.hpp"
#include "fasgnn/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fasgnn {

// Physical and budget constants of the MU-MISO fluid-antenna downlink.
struct SystemConfig {
    std::size_t n_antennas = 4;                    // N
    std::size_t n_users = 2;                       // K
    double wavelength = kSpeedOfLight / 1.8e9;     // lambda [m]
    double aperture = 10.0 * kSpeedOfLight / 1.8e9; // D [m]
    double min_spacing = 0.5 * kSpeedOfLight / 1.8e9; // Delta [m]
    double p_max = 1.0;                            // transmit power budget [W]
    double p_c = 0.5;                              // constant circuit power [W]
    double noise_power = 0.01;                     // sigma^2 [W], 20 dB below p_max
    std::vector<double> path_loss;                 // d_k; empty means all ones

    double path_loss_of(std::size_t k) const {
        return path_loss.empty() ? 1.0 : path_loss.at(k);
    }

    // Throws std::invalid_argument when any invariant fails, including the
    // geometric feasibility requirement D >= (N-1)*Delta.
    void validate() const;

    std::string canonical_string() const;
    std::uint64_t hash() const { return fnv1a64(canonical_string()); }
};

// One problem instance: the K user steering angles, radians in [0, pi).
struct ChannelSample {
    std::vector<double> angles;
};

struct AntennaPositions {
    std::vector<double> x; // meters, ascending
};

// K x N matrix whose row k is h(x, theta_k)^H; all entries unit modulus.
using ChannelMatrix = CMat;

// N x K matrix whose column k is the beam w_k for user k.
using BeamformingSolution = CMat;

// Position tolerance (meters) and relative power tolerance shared by all
// feasibility checks in this project.
inline constexpr double kPositionTol = 1e-9;
inline constexpr double kPowerRelTol = 1e-9;

enum class Utility {
    SumRate,          // bits/s/Hz
    EnergyEfficiency, // bits/J/Hz
};

double utility_of(Utility u, const BeamformingSolution& w, const ChannelMatrix& g,
                  const SystemConfig& cfg);

struct FeasibilityReport {
    struct Constraint {
        std::string name;
        bool pass = true;
        double slack = 0.0; // >= 0 means satisfied; most negative violation otherwise
    };
    Constraint power;   // sum_k ||w_k||^2 <= P_max
    Constraint bounds;  // x_1 >= 0 and x_N <= D
    Constraint spacing; // x_n - x_{n-1} >= Delta
    bool pass() const { return power.pass && bounds.pass && spacing.pass; }
};

std::vector<cplx> steering_vector(const AntennaPositions& x, double theta, double wavelength);

ChannelMatrix channel_matrix(const AntennaPositions& x, const ChannelSample& sample,
                             const SystemConfig& cfg);

std::vector<double> sinr_all(const BeamformingSolution& w, const ChannelMatrix& g,
                             const SystemConfig& cfg);

double sum_rate(const BeamformingSolution& w, const ChannelMatrix& g, const SystemConfig& cfg);

double energy_efficiency(const BeamformingSolution& w, const ChannelMatrix& g,
                         const SystemConfig& cfg);

double total_power(const BeamformingSolution& w);

FeasibilityReport check_feasibility(const BeamformingSolution& w, const AntennaPositions& x,
                                    const SystemConfig& cfg);

enum class EquidistantMode {
    FullAperture, // x_n = (n-1) * D/(N-1)
    HalfLambda,   // x_n = (n-1) * lambda/2
};

AntennaPositions equidistant_positions(const SystemConfig& cfg,
                                       EquidistantMode mode = EquidistantMode::FullAperture);

// i.i.d. steering-angle dataset. Per-sample streams are derived from
// (seed, sample index), so generation order does not matter.
struct Dataset {
    std::size_t n_antennas = 0;
    std::size_t n_users = 0;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::vector<ChannelSample> samples;

    std::size_t size() const { return samples.size(); }
    Dataset slice(std::size_t begin, std::size_t end) const;
};

Dataset sample_dataset(const SystemConfig& cfg, std::size_t size, std::uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_dataset_csv(const Dataset& ds, std::ostream& out);

} // namespace fasgnn
