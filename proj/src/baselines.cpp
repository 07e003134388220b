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

#include "fasgnn/baselines.hpp"

#include "fasgnn/stage2.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fasgnn::baselines {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

BeamformingSolution equal_power_from_columns(const CMat& directions, double p_max) {
    const std::size_t n = directions.rows();
    const std::size_t k = directions.cols();
    const double amp = std::sqrt(p_max / static_cast<double>(k));
    CMat w(n, k);
    for (std::size_t user = 0; user < k; ++user) {
        double norm = 0.0;
        for (std::size_t a = 0; a < n; ++a) { norm += std::norm(directions(a, user)); }
        norm = std::max(std::sqrt(norm), 1e-12);
        for (std::size_t a = 0; a < n; ++a) { w(a, user) = amp * directions(a, user) / norm; }
    }
    return w;
}

// Power tuples: all per-user level combinations with sum <= P_max, plus the
// full-power projection of every nonzero combination. Lexicographic
// enumeration order doubles as the tie-break order.
std::vector<std::vector<double>> power_tuples(std::size_t k, std::size_t levels, double p_max) {
    std::vector<std::vector<double>> out;
    std::vector<std::size_t> idx(k, 0);
    const double step = p_max / static_cast<double>(levels - 1);
    while (true) {
        double sum = 0.0;
        std::vector<double> p(k);
        for (std::size_t u = 0; u < k; ++u) {
            p[u] = static_cast<double>(idx[u]) * step;
            sum += p[u];
        }
        if (sum <= p_max) { out.push_back(p); }
        if (sum > 0.0) {
            std::vector<double> boundary = p;
            const double scale = p_max / sum;
            for (auto& v : boundary) { v *= scale; }
            out.push_back(std::move(boundary));
        }
        std::size_t pos = k;
        while (pos > 0) {
            if (++idx[pos - 1] < levels) { break; }
            idx[pos - 1] = 0;
            --pos;
        }
        if (pos == 0) { break; }
    }
    return out;
}

double utility_from_split(Utility utility, const std::vector<double>& rate_terms,
                          double tx_power, const SystemConfig& cfg) {
    double rate = 0.0;
    for (double r : rate_terms) { rate += r; }
    return utility == Utility::SumRate ? rate : rate / (tx_power + cfg.p_c);
}

} // namespace

void GridSpec::validate() const {
    if (alpha_points < 2 || power_points < 2 || position_points < 2) {
        throw std::invalid_argument("grid: all point counts must be >= 2");
    }
    if (budget < 1) { throw std::invalid_argument("grid: budget must be >= 1"); }
}

BeamformingSolution mrt_equal_power(const ChannelMatrix& g, const SystemConfig& cfg) {
    // h_k columns are the conjugated channel rows.
    return equal_power_from_columns(g.hermitian(), cfg.p_max);
}

BeamformingSolution zf_equal_power(const ChannelMatrix& g, const SystemConfig& cfg) {
    return equal_power_from_columns(stage2::zf_directions(g), cfg.p_max);
}

BaselineResult hzf_grid_search(const ChannelMatrix& g, const AntennaPositions& x,
                               const SystemConfig& cfg, Utility utility, const GridSpec& spec) {
    spec.validate();
    const auto start = Clock::now();
    const std::size_t k = g.rows();
    const std::size_t n = g.cols();
    const std::size_t a_points = spec.alpha_points;

    double combos = 1.0;
    for (std::size_t u = 0; u < k; ++u) { combos *= static_cast<double>(a_points); }
    const auto powers = power_tuples(k, spec.power_points, cfg.p_max);
    combos *= static_cast<double>(powers.size());
    if (combos > static_cast<double>(spec.budget)) {
        throw std::invalid_argument(
            "hzf_grid_search: grid needs a budget of " +
            std::to_string(static_cast<std::size_t>(combos)) + " evaluations, configured " +
            std::to_string(spec.budget));
    }

    // Hybrid directions per (user, alpha index), and their projections onto
    // every channel: proj2[u][a][j] = d_j |h_j^H dir_{u,a}|^2.
    const CMat basis = stage2::zf_directions(g);
    std::vector<std::vector<std::vector<cplx>>> dirs(k);
    std::vector<std::vector<std::vector<double>>> proj2(k);
    for (std::size_t u = 0; u < k; ++u) {
        std::vector<cplx> uk(n), hk(n);
        for (std::size_t a = 0; a < n; ++a) {
            uk[a] = basis(a, u);
            hk[a] = std::conj(g(u, a));
        }
        dirs[u].resize(a_points);
        proj2[u].resize(a_points);
        for (std::size_t ai = 0; ai < a_points; ++ai) {
            const double alpha =
                static_cast<double>(ai) / static_cast<double>(a_points - 1);
            dirs[u][ai] = stage2::hybrid_direction(uk, hk, alpha);
            proj2[u][ai].resize(k);
            for (std::size_t j = 0; j < k; ++j) {
                cplx dot{};
                for (std::size_t a = 0; a < n; ++a) { dot += g(j, a) * dirs[u][ai][a]; }
                proj2[u][ai][j] = cfg.path_loss_of(j) * std::norm(dot);
            }
        }
    }

    double best_utility = -1.0;
    std::vector<std::size_t> best_alpha(k, 0);
    std::vector<double> best_power(k, 0.0);

    std::vector<std::size_t> ai(k, 0);
    std::vector<double> cross(k * k); // cross[i*k+j] = proj2[i][ai[i]][j]
    std::vector<double> rate_terms(k);
    while (true) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < k; ++j) { cross[i * k + j] = proj2[i][ai[i]][j]; }
        }
        for (const auto& p : powers) {
            double tx = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double signal = p[j] * cross[j * k + j];
                double interference = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    if (i != j) { interference += p[i] * cross[i * k + j]; }
                }
                rate_terms[j] = std::log2(1.0 + signal / (interference + cfg.noise_power));
                tx += p[j];
            }
            const double u = utility_from_split(utility, rate_terms, tx, cfg);
            if (u > best_utility) {
                best_utility = u;
                best_alpha = ai;
                best_power = p;
            }
        }
        std::size_t pos = k;
        while (pos > 0) {
            if (++ai[pos - 1] < a_points) { break; }
            ai[pos - 1] = 0;
            --pos;
        }
        if (pos == 0) { break; }
    }

    BaselineResult res;
    res.method = "hzf_grid";
    res.positions = x;
    res.utility = best_utility;
    res.beams = CMat(n, k);
    for (std::size_t u = 0; u < k; ++u) {
        const double amp = std::sqrt(best_power[u]);
        for (std::size_t a = 0; a < n; ++a) { res.beams(a, u) = amp * dirs[u][best_alpha[u]][a]; }
    }
    res.seconds = seconds_since(start);
    return res;
}

BaselineResult position_grid_oracle(const ChannelSample& sample, const SystemConfig& cfg,
                                    Utility utility, const GridSpec& spec) {
    spec.validate();
    const auto start = Clock::now();
    const std::size_t n = cfg.n_antennas;
    if (n > 3) {
        throw std::invalid_argument("position_grid_oracle: N <= 3 required (grid budget)");
    }

    // Candidate geometries with x_1 = 0 (no optimality loss under the
    // spacing reformulation).
    std::vector<AntennaPositions> candidates;
    if (n == 1) {
        candidates.push_back(AntennaPositions{{0.0}});
    } else if (n == 2) {
        for (std::size_t i = 0; i < spec.position_points; ++i) {
            const double frac = static_cast<double>(i) / static_cast<double>(spec.position_points - 1);
            const double x2 = cfg.min_spacing + frac * (cfg.aperture - cfg.min_spacing);
            candidates.push_back(AntennaPositions{{0.0, x2}});
        }
    } else {
        for (std::size_t i = 0; i < spec.position_points; ++i) {
            const double f2 = static_cast<double>(i) / static_cast<double>(spec.position_points - 1);
            const double x2 = cfg.min_spacing + f2 * (cfg.aperture - 2.0 * cfg.min_spacing);
            for (std::size_t j = 0; j < spec.position_points; ++j) {
                const double f3 =
                    static_cast<double>(j) / static_cast<double>(spec.position_points - 1);
                const double x3 = x2 + cfg.min_spacing + f3 * (cfg.aperture - x2 - cfg.min_spacing);
                candidates.push_back(AntennaPositions{{0.0, x2, x3}});
            }
        }
    }

    const std::size_t k = sample.angles.size();
    double inner = 1.0;
    for (std::size_t u = 0; u < k; ++u) { inner *= static_cast<double>(spec.alpha_points); }
    inner *= 2.0 * std::pow(static_cast<double>(spec.power_points), static_cast<double>(k));
    if (static_cast<double>(candidates.size()) * inner > static_cast<double>(spec.budget)) {
        throw std::invalid_argument("position_grid_oracle: grid exceeds the configured budget");
    }

    BaselineResult best;
    best.method = "position_oracle";
    best.utility = -1.0;
    for (const auto& x : candidates) {
        const auto g = channel_matrix(x, sample, cfg);
        auto res = hzf_grid_search(g, x, cfg, utility, spec);
        if (res.utility > best.utility) {
            best.positions = x;
            best.beams = res.beams;
            best.utility = res.utility;
        }
    }
    best.seconds = seconds_since(start);
    return best;
}

std::string method_name(Method m) {
    switch (m) {
    case Method::EquidistantMrt: return "equidistant+mrt_equal";
    case Method::EquidistantZf: return "equidistant+zf_equal";
    case Method::EquidistantHzfGrid: return "equidistant+hzf_grid";
    case Method::EquidistantStage2: return "equidistant+stage2";
    case Method::Stage1Stage2: return "stage1+stage2";
    case Method::Stage1HzfGrid: return "stage1+hzf_grid";
    }
    return "unknown";
}

std::vector<ComparisonRow> compare_table(const std::vector<Method>& methods,
                                         const Dataset& data, const SystemConfig& cfg,
                                         Utility utility, const GridSpec& spec,
                                         const TwoStageModel* model) {
    if (data.samples.empty()) { throw std::invalid_argument("compare_table: empty dataset"); }
    const auto equidistant = equidistant_positions(cfg);

    std::vector<ComparisonRow> rows;
    for (const Method method : methods) {
        const bool needs_model = method == Method::EquidistantStage2 ||
                                 method == Method::Stage1Stage2 ||
                                 method == Method::Stage1HzfGrid;
        if (needs_model && model == nullptr) {
            throw std::invalid_argument("compare_table: method " + method_name(method) +
                                        " needs a trained model");
        }
        const std::size_t count = data.samples.size();
        std::vector<double> utilities(count, 0.0);
        std::vector<double> seconds(count, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
            const auto& sample = data.samples[static_cast<std::size_t>(i)];
            const auto start = Clock::now();
            double value = 0.0;
            switch (method) {
            case Method::EquidistantMrt: {
                const auto g = channel_matrix(equidistant, sample, cfg);
                value = utility_of(utility, mrt_equal_power(g, cfg), g, cfg);
                break;
            }
            case Method::EquidistantZf: {
                const auto g = channel_matrix(equidistant, sample, cfg);
                value = utility_of(utility, zf_equal_power(g, cfg), g, cfg);
                break;
            }
            case Method::EquidistantHzfGrid: {
                const auto g = channel_matrix(equidistant, sample, cfg);
                value = hzf_grid_search(g, equidistant, cfg, utility, spec).utility;
                break;
            }
            case Method::EquidistantStage2: {
                const auto inf = model->infer_fixed_positions(sample, equidistant);
                value = utility == Utility::SumRate ? inf.sum_rate : inf.ee;
                break;
            }
            case Method::Stage1Stage2: {
                const auto inf = model->infer(sample);
                value = utility == Utility::SumRate ? inf.sum_rate : inf.ee;
                break;
            }
            case Method::Stage1HzfGrid: {
                const auto inf = model->infer(sample);
                const auto g = channel_matrix(inf.positions, sample, cfg);
                value = hzf_grid_search(g, inf.positions, cfg, utility, spec).utility;
                break;
            }
            }
            utilities[static_cast<std::size_t>(i)] = value;
            seconds[static_cast<std::size_t>(i)] = seconds_since(start);
        }
        ComparisonRow row;
        row.method = method_name(method);
        for (std::size_t i = 0; i < count; ++i) {
            row.mean_utility += utilities[i];
            row.mean_seconds += seconds[i];
        }
        row.mean_utility /= static_cast<double>(count);
        row.mean_seconds /= static_cast<double>(count);
        rows.push_back(row);
    }
    return rows;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows,
                          bool with_timing) {
    out << "method,mean_utility";
    if (with_timing) { out << ",mean_seconds"; }
    out << "\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.method << ',' << r.mean_utility;
        if (with_timing) { out << ',' << r.mean_seconds; }
        out << "\n";
    }
}

void write_comparison_text(std::ostream& out, const std::vector<ComparisonRow>& rows) {
    out << std::left << std::setw(26) << "method" << std::right << std::setw(14)
        << "mean_utility" << std::setw(14) << "mean_sec" << "\n";
    for (const auto& r : rows) {
        out << std::left << std::setw(26) << r.method << std::right << std::setw(14)
            << std::setprecision(5) << std::fixed << r.mean_utility << std::setw(14)
            << r.mean_seconds << "\n";
        out.unsetf(std::ios::fixed);
    }
}

} // namespace fasgnn::baselines
