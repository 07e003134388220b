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

#include "fasgnn/gnn.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

using namespace fasgnn;
using gnn::ArchConfig;
using gnn::ParamStore;

namespace {

ArchConfig small_arch() {
    ArchConfig a;
    a.heads = 2;
    a.d_head = 4;
    a.fc_hidden = 8;
    return a;
}

ParamStore branch_params(const ArchConfig& arch, std::size_t in_dim, std::size_t out_dim,
                         bool with_virtual, std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    gnn::init_branch(store, "br", 2, 2, in_dim, out_dim, with_virtual, arch, rng);
    return store;
}

void zero_trainables(ParamStore& store) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (store.entry(i).trainable) {
            auto& v = store.entry(i).value;
            for (std::size_t j = 0; j < v.size(); ++j) { v[j] = 0.0; }
        }
    }
}

CMat permute_rows(const CMat& m, const std::vector<std::size_t>& perm) {
    CMat out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) { out(i, j) = m(perm[i], j); }
    }
    return out;
}

} // namespace

TEST_CASE("attention layer structure") {
    const auto arch = small_arch();

    SUBCASE("all-zero parameters map everything to zero") {
        auto store = branch_params(arch, 3, 1, false, 5);
        zero_trainables(store);
        const CMat feats = oracles::random_cmat(4, 3, 6);
        const CMat out = gnn::cgal_eval(feats, store, "br", 0, arch);
        CHECK(out.rows() == 4);
        CHECK(out.cols() == arch.width());
        CHECK(out.max_abs() == 0.0);
    }

    SUBCASE("K=1: softmax of a singleton, output = CReLU(vW + vWres)") {
        const auto store = branch_params(arch, 3, 1, false, 7);
        const CMat feats = oracles::random_cmat(1, 3, 8);
        const CMat out = gnn::cgal_eval(feats, store, "br", 0, arch);
        for (std::size_t z = 0; z < arch.heads; ++z) {
            const CMat& w = store.at("br/gal0/h" + std::to_string(z) + "/W");
            const CMat& wr = store.at("br/gal0/h" + std::to_string(z) + "/Wres");
            for (std::size_t c = 0; c < arch.d_head; ++c) {
                cplx pre{};
                for (std::size_t i = 0; i < 3; ++i) { pre += feats(0, i) * (w(i, c) + wr(i, c)); }
                const cplx expected(std::max(pre.real(), 0.0), std::max(pre.imag(), 0.0));
                CHECK(std::abs(out(0, z * arch.d_head + c) - expected) < 1e-12);
            }
        }
    }

    SUBCASE("node permutation equivariance") {
        const auto store = branch_params(arch, 3, 1, false, 9);
        const CMat feats = oracles::random_cmat(5, 3, 10);
        const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
        const CMat out = gnn::cgal_eval(feats, store, "br", 0, arch);
        const CMat out_perm = gnn::cgal_eval(permute_rows(feats, perm), store, "br", 0, arch);
        CHECK(max_abs_diff(out_perm, permute_rows(out, perm)) < 1e-12);
    }

    SUBCASE("batched evaluation equals per-sample evaluation") {
        const auto store = branch_params(arch, 3, 1, false, 11);
        const CMat f0 = oracles::random_cmat(3, 3, 12);
        const CMat f1 = oracles::random_cmat(3, 3, 13);
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const ad::Var stacked = ad::concat({t.constant(f0), t.constant(f1)}, 0);
        const CMat both = gnn::cgal_forward(t, stacked, p, "br", 0, 2, 3, arch).value();
        const CMat e0 = gnn::cgal_eval(f0, store, "br", 0, arch);
        const CMat e1 = gnn::cgal_eval(f1, store, "br", 0, arch);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < arch.width(); ++j) {
                CHECK(both(i, j) == e0(i, j));
                CHECK(both(3 + i, j) == e1(i, j));
            }
        }
    }
}

TEST_CASE("virtual node readout") {
    const auto arch = small_arch();
    const auto store = branch_params(arch, arch.width(), 1, true, 15);
    const std::size_t k = 4;
    const CMat updated = oracles::random_cmat(k, arch.width(), 16);
    const CMat v_prev = oracles::random_cmat(1, arch.width(), 17);

    SUBCASE("identical node features give uniform attention") {
        CMat same(k, arch.width());
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < arch.width(); ++j) { same(i, j) = updated(0, j); }
        }
        const CMat out = gnn::virtual_node_eval(same, v_prev, store, "br", 0, arch);
        // With identical rows, the beta-weighted pool equals any single row's
        // projection; compute the expectation directly.
        for (std::size_t z = 0; z < arch.heads; ++z) {
            const CMat& wv = store.at("br/gal0/h" + std::to_string(z) + "/Wv");
            const CMat& wvr = store.at("br/gal0/h" + std::to_string(z) + "/Wvres");
            for (std::size_t c = 0; c < arch.d_head; ++c) {
                cplx pool{};
                for (std::size_t i = 0; i < arch.width(); ++i) { pool += same(0, i) * wv(i, c); }
                cplx res{};
                for (std::size_t i = 0; i < arch.width(); ++i) { res += v_prev(0, i) * wvr(i, c); }
                const cplx pre = pool + res;
                const cplx expected(std::max(pre.real(), 0.0), std::max(pre.imag(), 0.0));
                CHECK(std::abs(out(0, z * arch.d_head + c) - expected) < 1e-10);
            }
        }
    }

    SUBCASE("permutation invariance") {
        const std::vector<std::size_t> perm = {2, 0, 3, 1};
        const CMat out = gnn::virtual_node_eval(updated, v_prev, store, "br", 0, arch);
        const CMat out_perm =
            gnn::virtual_node_eval(permute_rows(updated, perm), v_prev, store, "br", 0, arch);
        CHECK(max_abs_diff(out, out_perm) < 1e-12);
    }

    SUBCASE("K=1 beta is the singleton distribution") {
        const CMat one = oracles::random_cmat(1, arch.width(), 18);
        const CMat out = gnn::virtual_node_eval(one, v_prev, store, "br", 0, arch);
        CHECK(out.rows() == 1);
        CHECK(out.all_finite());
    }
}

TEST_CASE("fully-connected layers") {
    const auto arch = small_arch();
    const auto store = branch_params(arch, 3, 2, false, 19);

    SUBCASE("final layer is linear") {
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const CMat a = oracles::random_cmat(4, arch.fc_hidden, 20);
        const CMat b = oracles::random_cmat(4, arch.fc_hidden, 21);
        const auto eval = [&](const CMat& x) {
            return gnn::cfl_final(t, t.constant(x), p, "br/fc1").value();
        };
        CMat apb = a;
        for (std::size_t i = 0; i < apb.size(); ++i) { apb[i] += b[i]; }
        const CMat fa = eval(a);
        const CMat fb = eval(b);
        const CMat fab = eval(apb);
        const CMat f0 = eval(CMat(4, arch.fc_hidden));
        for (std::size_t i = 0; i < fa.size(); ++i) {
            CHECK(std::abs(fab[i] - (fa[i] + fb[i] - f0[i])) < 1e-12);
        }
    }

    SUBCASE("zero weights leave only the bias") {
        auto zeroed = branch_params(arch, 3, 2, false, 22);
        zero_trainables(zeroed);
        zeroed.at("br/fc1/b")(0, 0) = cplx(0.25, -1.5);
        ad::Tape t;
        const auto p = gnn::bind(t, zeroed);
        const CMat out =
            gnn::cfl_final(t, t.constant(CMat(3, arch.fc_hidden)), p, "br/fc1").value();
        for (std::size_t r = 0; r < 3; ++r) { CHECK(out(r, 0) == cplx(0.25, -1.5)); }
    }

    SUBCASE("shared bias rows: duplicated input rows give duplicated outputs") {
        gnn::ParamStore stats = store;
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        CMat feats = oracles::random_cmat(4, arch.width(), 23);
        for (std::size_t j = 0; j < arch.width(); ++j) { feats(3, j) = feats(1, j); }
        const CMat out =
            gnn::cfl_forward(t, t.constant(feats), p, "br/fc0", true, &stats, arch).value();
        for (std::size_t j = 0; j < out.cols(); ++j) { CHECK(out(3, j) == out(1, j)); }
    }
}

TEST_CASE("complex batch normalization") {
    auto arch = small_arch();
    const auto store = branch_params(arch, 3, 2, false, 25);
    const std::string bn = "br/fc0/bn";

    SUBCASE("constant batch in training mode centers to the shift") {
        gnn::ParamStore stats = store;
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const CMat row = oracles::random_cmat(1, arch.fc_hidden, 26);
        CMat feats(6, arch.fc_hidden);
        for (std::size_t r = 0; r < 6; ++r) {
            for (std::size_t c = 0; c < arch.fc_hidden; ++c) { feats(r, c) = row(0, c); }
        }
        const CMat out =
            gnn::complex_batchnorm(t, t.constant(feats), p, bn, true, &stats, arch).value();
        // Zero variance batch: whitened values are exactly zero, so only the
        // (zero-initialized) shift remains.
        CHECK(out.max_abs() < 1e-9);
    }

    SUBCASE("training mode whitens to unit circular covariance") {
        // Small epsilon so the covariance check probes the whitening math
        // itself; the regularizer perturbs the result at the eps/lambda_min
        // scale and would dominate a 1e-6 bound otherwise.
        ArchConfig tight = arch;
        tight.bn_epsilon = 1e-10;
        const std::size_t rows = 4096;
        // Correlated, scaled, shifted input with a well-conditioned 2x2
        // covariance per feature.
        Rng rng(27);
        CMat feats(rows, 2);
        for (std::size_t r = 0; r < rows; ++r) {
            const double a = rng.gaussian();
            const double b = rng.gaussian();
            feats(r, 0) = cplx(2.0 * a + 1.0, 0.3 * a + b - 2.0);
            feats(r, 1) = cplx(0.2 * b + 5.0, a + 0.4 * b);
        }
        // Feature width here is 2, not fc_hidden; build matching BN params
        // with identity scale and zero shift to observe the whitening.
        gnn::ParamStore bn2;
        bn2.add("bn/gamma_rr", CMat::full(1, 2, 1.0));
        bn2.add("bn/gamma_ri", CMat(1, 2));
        bn2.add("bn/gamma_ii", CMat::full(1, 2, 1.0));
        bn2.add("bn/beta", CMat(1, 2));
        bn2.add("bn/run_mean", CMat(1, 2), false);
        bn2.add("bn/run_vrr", CMat::full(1, 2, 0.5), false);
        bn2.add("bn/run_vri", CMat(1, 2), false);
        bn2.add("bn/run_vii", CMat::full(1, 2, 0.5), false);
        gnn::ParamStore bn2_stats = bn2;
        ad::Tape t2;
        const auto p2 = gnn::bind(t2, bn2);
        const CMat out =
            gnn::complex_batchnorm(t2, t2.constant(feats), p2, "bn", true, &bn2_stats, tight)
                .value();
        for (std::size_t c = 0; c < 2; ++c) {
            double mr = 0.0, mi = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                mr += out(r, c).real();
                mi += out(r, c).imag();
            }
            mr /= rows;
            mi /= rows;
            CHECK(std::abs(mr) < 1e-9);
            CHECK(std::abs(mi) < 1e-9);
            double vrr = 0.0, vri = 0.0, vii = 0.0;
            for (std::size_t r = 0; r < rows; ++r) {
                vrr += out(r, c).real() * out(r, c).real();
                vri += out(r, c).real() * out(r, c).imag();
                vii += out(r, c).imag() * out(r, c).imag();
            }
            CHECK(std::abs(vrr / rows - 1.0) < 1e-6);
            CHECK(std::abs(vii / rows - 1.0) < 1e-6);
            CHECK(std::abs(vri / rows) < 1e-6);
        }
        // Running statistics moved toward the batch statistics.
        CHECK(bn2_stats.at("bn/run_mean").max_abs() > 0.0);
        // Scale initialization keeps the complex feature at unit power:
        // gamma = I/sqrt(2) halves each part's variance.
        CHECK(bn2_stats.at("bn/run_vrr").max_abs() > 0.0);
    }

    SUBCASE("evaluation mode is deterministic and ignores the batch") {
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const CMat feats = oracles::random_cmat(5, arch.fc_hidden, 28);
        const CMat a =
            gnn::complex_batchnorm(t, t.constant(feats), p, bn, false, nullptr, arch).value();
        ad::Tape t2;
        const auto p2 = gnn::bind(t2, store);
        const CMat b =
            gnn::complex_batchnorm(t2, t2.constant(feats), p2, bn, false, nullptr, arch).value();
        for (std::size_t i = 0; i < a.size(); ++i) { CHECK(a[i] == b[i]); }
    }

    SUBCASE("training mode rejects single-row batches") {
        gnn::ParamStore stats = store;
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const CMat one = oracles::random_cmat(1, arch.fc_hidden, 29);
        CHECK_THROWS_AS(
            (void)gnn::complex_batchnorm(t, t.constant(one), p, bn, true, &stats, arch),
            std::invalid_argument);
    }

    SUBCASE("split mode standardizes parts independently") {
        arch.bn_mode = gnn::BnMode::Split;
        gnn::ParamStore stats = store;
        ad::Tape t;
        const auto p = gnn::bind(t, store);
        const CMat feats = oracles::random_cmat(64, arch.fc_hidden, 30);
        const CMat out =
            gnn::complex_batchnorm(t, t.constant(feats), p, bn, true, &stats, arch).value();
        CHECK(out.all_finite());
    }
}

TEST_CASE("finite differences through the layers") {
    const auto arch = small_arch();

    SUBCASE("attention layer gradient") {
        const auto store = branch_params(arch, 2, 1, false, 31);
        const auto rep = ad::grad_check(
            [&](ad::Tape& t, const std::vector<ad::Var>& vs) {
                auto p = gnn::bind(t, store);
                // Substitute two of the learnable tensors with checked leaves.
                p.vars[store.index_of("br/gal0/h0/W")] = vs[1];
                p.vars[store.index_of("br/gal0/h0/att")] = vs[2];
                const ad::Var out = gnn::cgal_forward(t, vs[0], p, "br", 0, 2, 3, arch);
                return ad::re(ad::reduce_sum(ad::cmul(out, ad::conj(out))));
            },
            {oracles::random_cmat(6, 2, 32), store.at("br/gal0/h0/W"),
             store.at("br/gal0/h0/att")},
            1e-4, 60, 33);
        CHECK(rep.max_rel_err < 1e-5);
    }

    SUBCASE("batchnorm training-mode gradient, complex and split") {
        for (const auto mode : {gnn::BnMode::Complex, gnn::BnMode::Split}) {
            ArchConfig a2 = arch;
            a2.bn_mode = mode;
            gnn::ParamStore bn;
            bn.add("bn/gamma_rr", CMat::full(1, 3, 1.0 / std::sqrt(2.0)));
            bn.add("bn/gamma_ri", CMat(1, 3));
            bn.add("bn/gamma_ii", CMat::full(1, 3, 1.0 / std::sqrt(2.0)));
            bn.add("bn/beta", CMat(1, 3));
            bn.add("bn/run_mean", CMat(1, 3), false);
            bn.add("bn/run_vrr", CMat::full(1, 3, 0.5), false);
            bn.add("bn/run_vri", CMat(1, 3), false);
            bn.add("bn/run_vii", CMat::full(1, 3, 0.5), false);
            // Per-entry weights keep every parameter's gradient away from
            // structural zeros (e.g. beta's gradient is a sum of zero-mean
            // whitened values under a uniform loss).
            const CMat weights = oracles::random_cmat(8, 3, 37);
            const auto rep = ad::grad_check(
                [&](ad::Tape& t, const std::vector<ad::Var>& vs) {
                    gnn::ParamStore scratch = bn;
                    auto p = gnn::bind(t, bn);
                    // The 2x2 scale entries are real parameters; route the
                    // checked leaves through re() so off-axis perturbations
                    // stay inside the layer's contract.
                    p.vars[bn.index_of("bn/gamma_rr")] = ad::re(vs[1]);
                    p.vars[bn.index_of("bn/gamma_ri")] = ad::re(vs[2]);
                    p.vars[bn.index_of("bn/beta")] = vs[3];
                    const ad::Var out =
                        gnn::complex_batchnorm(t, vs[0], p, "bn", true, &scratch, a2);
                    const ad::Var weighted = ad::cmul(out, t.constant(weights));
                    return ad::re(ad::reduce_sum(ad::abs_sq(ad::add_rowvec(weighted, vs[3]))));
                },
                {oracles::random_cmat(8, 3, 34), CMat::full(1, 3, 1.0 / std::sqrt(2.0)),
                 oracles::random_real_cmat(1, 3, 35, 0.1), CMat(1, 3)},
                1e-4, 60, 36);
            CHECK(rep.max_rel_err < 1e-5);
        }
    }
}

TEST_CASE("initialization statistics") {
    const auto arch = small_arch();

    SUBCASE("deterministic per seed") {
        const auto a = branch_params(arch, 3, 2, true, 40);
        const auto b = branch_params(arch, 3, 2, true, 40);
        const auto c = branch_params(arch, 3, 2, true, 41);
        REQUIRE(a.size() == b.size());
        bool all_equal = true;
        bool any_diff_c = false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            for (std::size_t j = 0; j < a.entry(i).value.size(); ++j) {
                all_equal = all_equal && a.entry(i).value[j] == b.entry(i).value[j];
                any_diff_c = any_diff_c || a.entry(i).value[j] != c.entry(i).value[j];
            }
        }
        CHECK(all_equal);
        CHECK(any_diff_c);
    }

    SUBCASE("complex entry variance matches 2/fan_in within 20%") {
        ParamStore store;
        ArchConfig big = small_arch();
        big.d_head = 64;
        big.heads = 1;
        Rng rng(42);
        gnn::init_branch(store, "br", 1, 1, 64, 1, false, big, rng);
        const CMat& w = store.at("br/gal0/h0/W"); // 64 x 64, fan_in 64
        double second_moment = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) { second_moment += std::norm(w[i]); }
        second_moment /= static_cast<double>(w.size());
        const double target = 2.0 / 64.0;
        CHECK(second_moment > 0.8 * target);
        CHECK(second_moment < 1.2 * target);
    }

    SUBCASE("biases are exactly zero") {
        const auto store = branch_params(arch, 3, 2, false, 43);
        CHECK(store.at("br/fc0/b").max_abs() == 0.0);
        CHECK(store.at("br/fc1/b").max_abs() == 0.0);
    }
}

TEST_CASE("checkpoint round-trip is bitwise") {
    const auto arch = small_arch();
    auto store = branch_params(arch, 3, 2, true, 50);
    gnn::Checkpoint ck;
    ck.arch_json = "{\"heads\":2}";
    ck.system_json = "{\"n_antennas\":4}";
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        ck.params.add(e.name, e.value, e.trainable);
    }
    const auto path = std::filesystem::temp_directory_path() / "fasgnn_ck_test.bin";
    gnn::save_checkpoint(ck, path.string());
    const auto back = gnn::load_checkpoint(path.string());
    std::filesystem::remove(path);

    CHECK(back.arch_json == ck.arch_json);
    CHECK(back.system_json == ck.system_json);
    REQUIRE(back.params.size() == store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& src = store.entry(i);
        const auto& dst = back.params.entry(i);
        CHECK(dst.name == src.name);
        CHECK(dst.trainable == src.trainable);
        REQUIRE(dst.value.same_shape(src.value));
        for (std::size_t j = 0; j < src.value.size(); ++j) {
            // Bitwise: compare the raw doubles.
            CHECK(std::memcmp(&dst.value[j], &src.value[j], sizeof(cplx)) == 0);
        }
    }
}
