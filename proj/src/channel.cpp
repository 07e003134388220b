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

#include "fasgnn/channel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fasgnn {

void SystemConfig::validate() const {
    if (n_antennas < 1) { throw std::invalid_argument("SystemConfig: N >= 1 required"); }
    if (n_users < 1) { throw std::invalid_argument("SystemConfig: K >= 1 required"); }
    if (!(wavelength > 0.0)) { throw std::invalid_argument("SystemConfig: wavelength > 0 required"); }
    if (!(min_spacing > 0.0)) { throw std::invalid_argument("SystemConfig: min_spacing > 0 required"); }
    if (!(p_max > 0.0)) { throw std::invalid_argument("SystemConfig: p_max > 0 required"); }
    if (!(p_c >= 0.0)) { throw std::invalid_argument("SystemConfig: p_c >= 0 required"); }
    if (!(noise_power > 0.0)) { throw std::invalid_argument("SystemConfig: noise_power > 0 required"); }
    if (aperture < static_cast<double>(n_antennas - 1) * min_spacing) {
        throw std::invalid_argument("SystemConfig: aperture < (N-1)*min_spacing, no feasible positions");
    }
    if (!path_loss.empty() && path_loss.size() != n_users) {
        throw std::invalid_argument("SystemConfig: path_loss must have K entries (or be empty)");
    }
    for (double d : path_loss) {
        if (!(d > 0.0)) { throw std::invalid_argument("SystemConfig: path_loss entries must be > 0"); }
    }
}

std::string SystemConfig::canonical_string() const {
    std::ostringstream os;
    os.precision(17);
    os << "N=" << n_antennas << ";K=" << n_users << ";lambda=" << wavelength
       << ";D=" << aperture << ";Delta=" << min_spacing << ";Pmax=" << p_max
       << ";Pc=" << p_c << ";sigma2=" << noise_power << ";d=";
    for (double d : path_loss) { os << d << ","; }
    return os.str();
}

static void check_positions(const AntennaPositions& x, const SystemConfig& cfg) {
    if (x.x.size() != cfg.n_antennas) {
        throw std::invalid_argument("positions: expected N=" + std::to_string(cfg.n_antennas) +
                                    " coordinates, got " + std::to_string(x.x.size()));
    }
}

std::vector<cplx> steering_vector(const AntennaPositions& x, double theta, double wavelength) {
    if (!(theta >= 0.0 && theta < kPi)) {
        throw std::invalid_argument("steering_vector: theta must lie in [0, pi)");
    }
    // Spatial frequency (2*pi/lambda)*cos(theta); the product order matches
    // the tape-side channel construction so the two agree bitwise.
    const double w = (2.0 * kPi / wavelength) * std::cos(theta);
    std::vector<cplx> h(x.x.size());
    for (std::size_t n = 0; n < x.x.size(); ++n) {
        const double arg = w * x.x[n];
        h[n] = cplx(std::cos(arg), std::sin(arg));
    }
    return h;
}

ChannelMatrix channel_matrix(const AntennaPositions& x, const ChannelSample& sample,
                             const SystemConfig& cfg) {
    check_positions(x, cfg);
    if (sample.angles.size() != cfg.n_users) {
        throw std::invalid_argument("channel_matrix: sample has " +
                                    std::to_string(sample.angles.size()) + " angles, config expects K=" +
                                    std::to_string(cfg.n_users));
    }
    CMat g(cfg.n_users, cfg.n_antennas);
    for (std::size_t k = 0; k < cfg.n_users; ++k) {
        const auto h = steering_vector(x, sample.angles[k], cfg.wavelength);
        for (std::size_t n = 0; n < cfg.n_antennas; ++n) { g(k, n) = std::conj(h[n]); }
    }
    return g;
}

std::vector<double> sinr_all(const BeamformingSolution& w, const ChannelMatrix& g,
                             const SystemConfig& cfg) {
    const std::size_t n = cfg.n_antennas;
    const std::size_t kk = cfg.n_users;
    if (w.rows() != n || w.cols() != kk || g.rows() != kk || g.cols() != n) {
        throw std::invalid_argument("sinr_all: shape mismatch, w=" + w.shape_str() + " g=" + g.shape_str());
    }
    std::vector<double> gamma(kk);
    for (std::size_t k = 0; k < kk; ++k) {
        const double dk = cfg.path_loss_of(k);
        double signal = 0.0;
        double interference = 0.0;
        for (std::size_t i = 0; i < kk; ++i) {
            // w_i^H h_k with h_k = conj(row k of g).
            cplx dot{};
            for (std::size_t a = 0; a < n; ++a) { dot += std::conj(w(a, i)) * std::conj(g(k, a)); }
            const double p = dk * std::norm(dot);
            if (i == k) {
                signal = p;
            } else {
                interference += p;
            }
        }
        gamma[k] = signal / (interference + cfg.noise_power);
    }
    return gamma;
}

double sum_rate(const BeamformingSolution& w, const ChannelMatrix& g, const SystemConfig& cfg) {
    double rate = 0.0;
    for (double gk : sinr_all(w, g, cfg)) { rate += std::log2(1.0 + gk); }
    return rate;
}

double total_power(const BeamformingSolution& w) {
    double p = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) { p += std::norm(w[i]); }
    return p;
}

double energy_efficiency(const BeamformingSolution& w, const ChannelMatrix& g,
                         const SystemConfig& cfg) {
    return sum_rate(w, g, cfg) / (total_power(w) + cfg.p_c);
}

double utility_of(Utility u, const BeamformingSolution& w, const ChannelMatrix& g,
                  const SystemConfig& cfg) {
    return u == Utility::SumRate ? sum_rate(w, g, cfg) : energy_efficiency(w, g, cfg);
}

FeasibilityReport check_feasibility(const BeamformingSolution& w, const AntennaPositions& x,
                                    const SystemConfig& cfg) {
    FeasibilityReport rep;

    rep.power.name = "power_budget";
    const double p = total_power(w);
    rep.power.slack = (cfg.p_max - p) / cfg.p_max;
    rep.power.pass = p <= cfg.p_max * (1.0 + kPowerRelTol);

    rep.bounds.name = "aperture_bounds";
    rep.spacing.name = "min_spacing";
    if (x.x.size() != cfg.n_antennas) {
        rep.bounds.pass = false;
        rep.bounds.slack = -1.0;
        rep.spacing.pass = false;
        rep.spacing.slack = -1.0;
        return rep;
    }
    double bounds_slack = x.x.front();
    bounds_slack = std::min(bounds_slack, cfg.aperture - x.x.back());
    rep.bounds.slack = bounds_slack;
    rep.bounds.pass = bounds_slack >= -kPositionTol;

    double spacing_slack = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < x.x.size(); ++i) {
        spacing_slack = std::min(spacing_slack, x.x[i] - x.x[i - 1] - cfg.min_spacing);
    }
    if (x.x.size() < 2) { spacing_slack = 0.0; }
    rep.spacing.slack = spacing_slack;
    rep.spacing.pass = spacing_slack >= -kPositionTol;
    return rep;
}

AntennaPositions equidistant_positions(const SystemConfig& cfg, EquidistantMode mode) {
    const std::size_t n = cfg.n_antennas;
    AntennaPositions out;
    out.x.resize(n, 0.0);
    if (n == 1) { return out; }
    const double step = mode == EquidistantMode::FullAperture
                            ? cfg.aperture / static_cast<double>(n - 1)
                            : cfg.wavelength / 2.0;
    for (std::size_t i = 0; i < n; ++i) { out.x[i] = static_cast<double>(i) * step; }
    return out;
}

Dataset sample_dataset(const SystemConfig& cfg, std::size_t size, std::uint64_t seed) {
    cfg.validate();
    Dataset ds;
    ds.n_antennas = cfg.n_antennas;
    ds.n_users = cfg.n_users;
    ds.seed = seed;
    ds.config_hash = cfg.hash();
    ds.samples.resize(size);
    for (std::size_t m = 0; m < size; ++m) {
        Rng rng(derive_seed(seed, m));
        auto& angles = ds.samples[m].angles;
        angles.resize(cfg.n_users);
        for (std::size_t k = 0; k < cfg.n_users; ++k) { angles[k] = rng.uniform() * kPi; }
    }
    return ds;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
    Dataset out = *this;
    out.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                       samples.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

namespace {

// File format is little-endian; native IO is correct on every platform we
// target, and this trips loudly anywhere else.
static_assert(std::endian::native == std::endian::little);

constexpr char kDatasetMagic[8] = {'F', 'G', 'D', 'S', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) { throw std::runtime_error("save_dataset: cannot open " + path); }
    os.write(kDatasetMagic, sizeof(kDatasetMagic));
    write_pod<std::uint64_t>(os, ds.n_antennas);
    write_pod<std::uint64_t>(os, ds.n_users);
    write_pod<std::uint64_t>(os, ds.seed);
    write_pod<std::uint64_t>(os, ds.samples.size());
    write_pod<std::uint64_t>(os, ds.config_hash);
    for (const auto& s : ds.samples) {
        for (double a : s.angles) { write_pod<double>(os, a); }
    }
    if (!os) { throw std::runtime_error("save_dataset: write failed for " + path); }
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) { throw std::runtime_error("load_dataset: cannot open " + path); }
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("load_dataset: bad magic in " + path);
    }
    Dataset ds;
    ds.n_antennas = read_pod<std::uint64_t>(is);
    ds.n_users = read_pod<std::uint64_t>(is);
    ds.seed = read_pod<std::uint64_t>(is);
    const auto count = read_pod<std::uint64_t>(is);
    ds.config_hash = read_pod<std::uint64_t>(is);
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.angles.resize(ds.n_users);
        for (auto& a : s.angles) { a = read_pod<double>(is); }
    }
    if (!is) { throw std::runtime_error("load_dataset: truncated file " + path); }
    return ds;
}

void export_dataset_csv(const Dataset& ds, std::ostream& out) {
    for (std::size_t k = 1; k <= ds.n_users; ++k) {
        out << "theta_" << k << (k == ds.n_users ? "\n" : ",");
    }
    out.precision(17);
    for (const auto& s : ds.samples) {
        for (std::size_t k = 0; k < s.angles.size(); ++k) {
            out << s.angles[k] << (k + 1 == s.angles.size() ? "\n" : ",");
        }
    }
}

} // namespace fasgnn
