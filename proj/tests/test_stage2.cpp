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

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace fasgnn;

namespace {

SystemConfig paper_config(std::size_t n, std::size_t k) {
    SystemConfig cfg;
    cfg.n_antennas = n;
    cfg.n_users = k;
    return cfg;
}

gnn::ArchConfig small_arch() {
    gnn::ArchConfig a;
    a.heads = 2;
    a.d_head = 4;
    a.fc_hidden = 8;
    return a;
}

gnn::ParamStore stage2_params(const SystemConfig& cfg, const gnn::ArchConfig& arch,
                              std::uint64_t seed) {
    gnn::ParamStore store;
    Rng rng(seed);
    gnn::init_branch(store, "s2_p", arch.g3, arch.f3, cfg.n_antennas, 1, false, arch, rng);
    gnn::init_branch(store, "s2_alpha", arch.g4, arch.f4, cfg.n_antennas, 1, false, arch, rng);
    return store;
}

// Zero-forcing quality of a basis against its channel.
double zf_residual(const CMat& g, const CMat& u) {
    const std::size_t k = g.rows();
    double worst = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            cplx dot{};
            for (std::size_t a = 0; a < g.cols(); ++a) { dot += g(i, a) * u(a, j); }
            worst = std::max(worst, std::abs(dot - (i == j ? cplx(1.0, 0.0) : cplx{})));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("zero-forcing directions") {
    SUBCASE("K=1 gives h/||h||^2") {
        auto cfg = paper_config(4, 1);
        const auto x = equidistant_positions(cfg);
        const auto g = channel_matrix(x, ChannelSample{{0.9}}, cfg);
        const auto u = stage2::zf_directions(g);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(std::abs(u(a, 0) - std::conj(g(0, a)) / 4.0) < 1e-12);
        }
    }
    SUBCASE("orthogonal rows align ZF with MRT") {
        // Broadside + a user whose phase pattern is orthogonal on this array.
        CMat g(2, 4);
        for (std::size_t a = 0; a < 4; ++a) {
            g(0, a) = 1.0;
            g(1, a) = (a % 2 == 0) ? 1.0 : -1.0;
        }
        const auto u = stage2::zf_directions(g);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(std::abs(u(a, 0) - std::conj(g(0, a)) / 4.0) < 1e-12);
            CHECK(std::abs(u(a, 1) - std::conj(g(1, a)) / 4.0) < 1e-12);
        }
    }
    SUBCASE("G U = I on random instances") {
        auto cfg = paper_config(4, 2);
        const auto x = equidistant_positions(cfg);
        const auto ds = sample_dataset(cfg, 64, 41);
        for (const auto& s : ds.samples) {
            const auto g = channel_matrix(x, s, cfg);
            const auto u = stage2::zf_directions(g);
            if (u.max_abs() > 1e5) { continue; } // near-collinear draw
            CHECK(zf_residual(g, u) < 1e-10);
        }
    }
    SUBCASE("2-user basis matches the closed-form pseudo-inverse") {
        auto cfg = paper_config(5, 2);
        const auto x = equidistant_positions(cfg);
        const auto g = channel_matrix(x, ChannelSample{{0.7, 2.4}}, cfg);
        const auto u = stage2::zf_directions(g);
        const auto oracle = oracles::zf_basis_2users(g);
        CHECK(max_abs_diff(u, oracle) < 1e-10);
    }
    SUBCASE("batched tape path matches the value path") {
        auto cfg = paper_config(4, 2);
        const auto x = equidistant_positions(cfg);
        const auto ds = sample_dataset(cfg, 3, 43);
        ad::Tape t;
        CMat stacked(3 * 2, 4);
        for (std::size_t m = 0; m < 3; ++m) {
            const auto g = channel_matrix(x, ds.samples[m], cfg);
            for (std::size_t r = 0; r < 2; ++r) {
                for (std::size_t c = 0; c < 4; ++c) { stacked(m * 2 + r, c) = g(r, c); }
            }
        }
        const auto u_all = stage2::zf_directions(t, t.constant(stacked), 3, 2, 4).value();
        for (std::size_t m = 0; m < 3; ++m) {
            const auto g = channel_matrix(x, ds.samples[m], cfg);
            const auto u = stage2::zf_directions(g);
            for (std::size_t a = 0; a < 4; ++a) {
                for (std::size_t j = 0; j < 2; ++j) {
                    CHECK(std::abs(u_all(m * 4 + a, j) - u(a, j)) < 1e-13);
                }
            }
        }
    }
    SUBCASE("K > N rejected") {
        CMat g(3, 2);
        CHECK_THROWS_AS((void)stage2::zf_directions(g), std::invalid_argument);
    }
}

TEST_CASE("hybrid directions") {
    Rng rng(47);
    const std::size_t n = 4;
    std::vector<cplx> u(n), h(n);
    for (std::size_t a = 0; a < n; ++a) {
        u[a] = cplx(rng.gaussian(), rng.gaussian());
        h[a] = cplx(rng.gaussian(), rng.gaussian());
    }

    SUBCASE("alpha = 0 is pure MRT") {
        const auto d = stage2::hybrid_direction(u, h, 0.0);
        double hn = 0.0;
        for (const auto& e : h) { hn += std::norm(e); }
        hn = std::sqrt(hn);
        for (std::size_t a = 0; a < n; ++a) { CHECK(std::abs(d[a] - h[a] / hn) < 1e-12); }
    }
    SUBCASE("alpha = 1 is pure ZF") {
        const auto d = stage2::hybrid_direction(u, h, 1.0);
        double un = 0.0;
        for (const auto& e : u) { un += std::norm(e); }
        un = std::sqrt(un);
        for (std::size_t a = 0; a < n; ++a) { CHECK(std::abs(d[a] - u[a] / un) < 1e-12); }
    }
    SUBCASE("unit norm for any alpha") {
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<cplx> uu(n), hh(n);
            for (std::size_t a = 0; a < n; ++a) {
                uu[a] = cplx(rng.gaussian(), rng.gaussian());
                hh[a] = cplx(rng.gaussian(), rng.gaussian());
            }
            const auto d = stage2::hybrid_direction(uu, hh, rng.uniform());
            double norm = 0.0;
            for (const auto& e : d) { norm += std::norm(e); }
            CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
        }
    }
    SUBCASE("antipodal degenerate mix stays finite through the floor") {
        std::vector<cplx> uu = {1.0, 0.0};
        std::vector<cplx> hh = {-1.0, 0.0};
        const auto d = stage2::hybrid_direction(uu, hh, 0.5);
        for (const auto& e : d) {
            CHECK(std::isfinite(e.real()));
            CHECK(std::isfinite(e.imag()));
        }
    }
}

TEST_CASE("power projection") {
    SUBCASE("inside the budget passes through") {
        const auto p = stage2::power_projection(std::vector<double>{0.3, 0.4}, 1.0);
        CHECK(p == std::vector<double>{0.3, 0.4});
    }
    SUBCASE("outside the budget rescales onto the boundary") {
        const auto p = stage2::power_projection(std::vector<double>{0.5, 0.6}, 1.0);
        CHECK(p[0] == doctest::Approx(0.5 / 1.1).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(0.6 / 1.1).epsilon(1e-15));
    }
    SUBCASE("all-zero input is returned unchanged") {
        const auto p = stage2::power_projection(std::vector<double>{0.0, 0.0}, 1.0);
        CHECK(p == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("tape path agrees with the value path") {
        ad::Tape t;
        CMat raw(2, 3);
        raw(0, 0) = 0.5;
        raw(0, 1) = 0.6;
        raw(0, 2) = 0.2;
        raw(1, 0) = 0.1;
        raw(1, 1) = 0.2;
        raw(1, 2) = 0.3;
        const CMat out = stage2::power_projection(t, t.constant(raw), 1.0).value();
        const auto row0 =
            stage2::power_projection(std::vector<double>{0.5, 0.6, 0.2}, 1.0);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(out(0, j).real() == doctest::Approx(row0[j]).epsilon(1e-15));
            CHECK(out(1, j).real() == doctest::Approx(raw(1, j).real()).epsilon(1e-15));
        }
    }
}

TEST_CASE("beam assembly") {
    auto cfg = paper_config(4, 2);
    const auto x = equidistant_positions(cfg);
    const auto ds = sample_dataset(cfg, 32, 53);
    Rng rng(59);

    SUBCASE("||w_k||^2 equals p_k") {
        for (const auto& s : ds.samples) {
            const auto g = channel_matrix(x, s, cfg);
            stage2::HZFParams hzf;
            hzf.p = {rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5)};
            hzf.alpha = {rng.uniform(), rng.uniform()};
            const auto w = stage2::assemble_beams(hzf, stage2::zf_directions(g), g);
            for (std::size_t u = 0; u < 2; ++u) {
                double pw = 0.0;
                for (std::size_t a = 0; a < 4; ++a) { pw += std::norm(w(a, u)); }
                CHECK(pw == doctest::Approx(hzf.p[u]).epsilon(1e-12));
            }
            CHECK(check_feasibility(w, x, cfg).power.pass);
        }
    }
    SUBCASE("zero power gives a zero beam") {
        const auto g = channel_matrix(x, ds.samples[0], cfg);
        stage2::HZFParams hzf;
        hzf.p = {0.0, 0.3};
        hzf.alpha = {0.5, 0.5};
        const auto w = stage2::assemble_beams(hzf, stage2::zf_directions(g), g);
        for (std::size_t a = 0; a < 4; ++a) { CHECK(w(a, 0) == cplx(0.0, 0.0)); }
    }
    SUBCASE("alpha = 1 nulls the interference below 1e-10 sigma^2") {
        for (const auto& s : ds.samples) {
            const auto g = channel_matrix(x, s, cfg);
            const auto u = stage2::zf_directions(g);
            if (u.max_abs() > 1e5) { continue; }
            stage2::HZFParams hzf;
            hzf.p = {0.5, 0.5};
            hzf.alpha = {1.0, 1.0};
            const auto w = stage2::assemble_beams(hzf, u, g);
            for (std::size_t j = 0; j < 2; ++j) {
                for (std::size_t i = 0; i < 2; ++i) {
                    if (i == j) { continue; }
                    cplx dot{};
                    for (std::size_t a = 0; a < 4; ++a) { dot += g(j, a) * w(a, i); }
                    CHECK(std::norm(dot) < 1e-10 * cfg.noise_power);
                }
            }
        }
    }
}

TEST_CASE("stage-2 head forward") {
    auto cfg = paper_config(4, 3);
    const auto arch = small_arch();
    const auto x = equidistant_positions(cfg);

    SUBCASE("zero parameters emit the sigmoid midpoints") {
        auto store = stage2_params(cfg, arch, 61);
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (store.entry(i).trainable) {
                auto& v = store.entry(i).value;
                for (std::size_t j = 0; j < v.size(); ++j) { v[j] = 0.0; }
            }
        }
        const auto g = channel_matrix(x, ChannelSample{{0.2, 1.3, 2.9}}, cfg);
        const auto hzf = stage2::forward_eval(g, store, arch, cfg);
        for (std::size_t u = 0; u < 3; ++u) {
            CHECK(hzf.alpha[u] == doctest::Approx(0.5).epsilon(1e-15));
        }
        // p = P_max/2 per user sums to 1.5 P_max, so the projection rescales
        // onto the boundary: p_k = P_max/3.
        for (std::size_t u = 0; u < 3; ++u) {
            CHECK(hzf.p[u] == doctest::Approx(cfg.p_max / 3.0).epsilon(1e-12));
        }
    }
    SUBCASE("outputs live in the open boxes") {
        const auto store = stage2_params(cfg, arch, 67);
        const auto ds = sample_dataset(cfg, 16, 71);
        for (const auto& s : ds.samples) {
            const auto g = channel_matrix(x, s, cfg);
            const auto hzf = stage2::forward_eval(g, store, arch, cfg);
            for (std::size_t u = 0; u < 3; ++u) {
                CHECK(hzf.p[u] > 0.0);
                CHECK(hzf.p[u] < cfg.p_max);
                CHECK(hzf.alpha[u] > 0.0);
                CHECK(hzf.alpha[u] < 1.0);
            }
        }
    }
    SUBCASE("user permutation permutes the outputs") {
        const auto store = stage2_params(cfg, arch, 73);
        const ChannelSample s{{0.3, 1.1, 2.7}};
        const ChannelSample sp{{1.1, 2.7, 0.3}}; // cycle left by one
        const auto a = stage2::forward_eval(channel_matrix(x, s, cfg), store, arch, cfg);
        const auto b = stage2::forward_eval(channel_matrix(x, sp, cfg), store, arch, cfg);
        const std::size_t perm[3] = {1, 2, 0}; // b[u] corresponds to a[perm[u]]
        for (std::size_t u = 0; u < 3; ++u) {
            CHECK(b.alpha[u] == doctest::Approx(a.alpha[perm[u]]).epsilon(1e-11));
            CHECK(b.p[u] == doctest::Approx(a.p[perm[u]]).epsilon(1e-11));
        }
    }
}
