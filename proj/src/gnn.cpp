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

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fasgnn::gnn {

using ad::Var;

void ArchConfig::validate() const {
    if (heads < 1 || d_head < 1) { throw std::invalid_argument("arch: heads and d_head must be >= 1"); }
    if (g1 < 1 || g2 < 1 || g3 < 1 || g4 < 1) {
        throw std::invalid_argument("arch: every branch needs at least one attention layer");
    }
    if (f1 < 1 || f2 < 1 || f3 < 1 || f4 < 1) {
        throw std::invalid_argument("arch: every branch needs at least one fully-connected layer");
    }
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) {
        throw std::invalid_argument("arch: bn_momentum must lie in (0, 1)");
    }
    if (!(bn_epsilon > 0.0)) { throw std::invalid_argument("arch: bn_epsilon must be > 0"); }
}

CMat& ParamStore::add(const std::string& name, CMat value, bool trainable) {
    if (has(name)) { throw std::invalid_argument("ParamStore: duplicate entry " + name); }
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(value), trainable});
    return entries_.back().value;
}

std::size_t ParamStore::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) { throw std::invalid_argument("ParamStore: missing entry " + name); }
    return it->second;
}

CMat& ParamStore::at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) { throw std::invalid_argument("ParamStore: missing entry " + name); }
    return entries_[it->second].value;
}

const CMat& ParamStore::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) { throw std::invalid_argument("ParamStore: missing entry " + name); }
    return entries_[it->second].value;
}

std::size_t ParamStore::trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) { n += e.trainable ? 1 : 0; }
    return n;
}

std::size_t ParamStore::trainable_real_coords() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        if (e.trainable) { n += 2 * e.value.size(); }
    }
    return n;
}

Var BoundParams::at(const std::string& name) const {
    return vars[store->index_of(name)];
}

BoundParams bind(ad::Tape& tape, const ParamStore& store) {
    BoundParams bp;
    bp.tape = &tape;
    bp.store = &store;
    bp.vars.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        bp.vars.push_back(tape.leaf(e.value, e.trainable));
    }
    return bp;
}

// ---- initialization ----------------------------------------------------------

namespace {

// Kaiming-normal fan-in with variance split across the two real parts, so
// E|w|^2 = 2 / fan_in for the complex entry.
CMat kaiming_complex(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    const double std_part = std::sqrt(1.0 / static_cast<double>(fan_in));
    CMat w(rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = cplx(rng.gaussian() * std_part, rng.gaussian() * std_part);
    }
    return w;
}

void init_bn(ParamStore& store, const std::string& bn_prefix, std::size_t width) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    store.add(bn_prefix + "/gamma_rr", CMat::full(1, width, inv_sqrt2));
    store.add(bn_prefix + "/gamma_ri", CMat(1, width));
    store.add(bn_prefix + "/gamma_ii", CMat::full(1, width, inv_sqrt2));
    store.add(bn_prefix + "/beta", CMat(1, width));
    store.add(bn_prefix + "/run_mean", CMat(1, width), false);
    store.add(bn_prefix + "/run_vrr", CMat::full(1, width, 0.5), false);
    store.add(bn_prefix + "/run_vri", CMat(1, width), false);
    store.add(bn_prefix + "/run_vii", CMat::full(1, width, 0.5), false);
}

} // namespace

void init_branch(ParamStore& store, const std::string& prefix, std::size_t n_gal,
                 std::size_t n_fc, std::size_t in_dim, std::size_t out_dim, bool with_virtual,
                 const ArchConfig& arch, Rng& rng) {
    const std::size_t d = arch.d_head;
    const std::size_t width = arch.width();

    std::size_t vin = in_dim;
    std::size_t vprev = in_dim; // width of the initial virtual feature v_0
    for (std::size_t g = 0; g < n_gal; ++g) {
        const std::string gp = prefix + "/gal" + std::to_string(g);
        for (std::size_t z = 0; z < arch.heads; ++z) {
            const std::string hp = gp + "/h" + std::to_string(z);
            store.add(hp + "/att", kaiming_complex(2 * d, 1, 2 * d, rng));
            store.add(hp + "/W", kaiming_complex(vin, d, vin, rng));
            store.add(hp + "/Wres", kaiming_complex(vin, d, vin, rng));
            if (with_virtual) {
                store.add(hp + "/vatt", kaiming_complex(d, 1, d, rng));
                store.add(hp + "/Wv", kaiming_complex(width, d, width, rng));
                store.add(hp + "/Wvres", kaiming_complex(vprev, d, vprev, rng));
            }
        }
        vin = width;
        vprev = width;
    }

    std::size_t hin = width;
    for (std::size_t f = 0; f < n_fc; ++f) {
        const std::string fp = prefix + "/fc" + std::to_string(f);
        const bool final_layer = f + 1 == n_fc;
        const std::size_t hout = final_layer ? out_dim : arch.fc_hidden;
        store.add(fp + "/W", kaiming_complex(hin, hout, hin, rng));
        store.add(fp + "/b", CMat(1, hout));
        if (!final_layer) { init_bn(store, fp + "/bn", hout); }
        hin = hout;
    }
}

// ---- layer forward passes ------------------------------------------------------

Var cgal_forward(ad::Tape& t, Var feats, const BoundParams& p, const std::string& prefix,
                 std::size_t gal_index, std::size_t m, std::size_t k, const ArchConfig& arch) {
    if (feats.rows() != m * k) { throw std::invalid_argument("cgal_forward: features must have M*K rows"); }
    const std::string gp = prefix + "/gal" + std::to_string(gal_index);
    const std::size_t d = arch.d_head;
    const Var ones_row = t.constant(CMat::full(1, k, 1.0));

    std::vector<Var> heads;
    heads.reserve(arch.heads);
    for (std::size_t z = 0; z < arch.heads; ++z) {
        const std::string hp = gp + "/h" + std::to_string(z);
        const Var w = p.at(hp + "/W");
        if (w.rows() != feats.cols()) {
            throw std::invalid_argument("cgal_forward: feature width " +
                                        std::to_string(feats.cols()) + " does not match W rows " +
                                        std::to_string(w.rows()));
        }
        const Var projected = ad::matmul(feats, w); // (M*K) x d

        // Pairwise logits: a^T [v_k W || v_j W] = a1^T(v_k W) + a2^T(v_j W).
        const Var att = p.at(hp + "/att");
        const Var a1 = ad::slice_rows(att, 0, d);
        const Var a2 = ad::slice_rows(att, d, 2 * d);
        const Var s_self = ad::matmul(projected, a1);  // (M*K) x 1
        const Var s_other = ad::matmul(projected, a2); // (M*K) x 1
        const Var self_mat = ad::matmul(s_self, ones_row);                       // row-constant
        const Var other_mat = ad::repeat_rows(ad::reshape(s_other, m, k), k);    // per-sample row
        const Var logits = ad::leaky_relu(ad::re(ad::add(self_mat, other_mat)), arch.leaky_slope);
        const Var attn = ad::softmax_rows(logits); // rows are probability vectors

        const Var aggregated = ad::block_matmul(attn, projected, k, k);
        const Var residual = ad::matmul(feats, p.at(hp + "/Wres"));
        heads.push_back(ad::crelu(ad::add(aggregated, residual)));
    }
    return ad::concat(heads, 1);
}

Var virtual_node_forward(ad::Tape& t, Var updated_feats, Var v_prev, const BoundParams& p,
                         const std::string& prefix, std::size_t gal_index, std::size_t m,
                         std::size_t k, const ArchConfig& arch) {
    if (updated_feats.rows() != m * k) {
        throw std::invalid_argument("virtual_node_forward: features must have M*K rows");
    }
    if (v_prev.rows() != m) {
        throw std::invalid_argument("virtual_node_forward: v_prev must have M rows");
    }
    const std::string gp = prefix + "/gal" + std::to_string(gal_index);

    std::vector<Var> heads;
    heads.reserve(arch.heads);
    for (std::size_t z = 0; z < arch.heads; ++z) {
        const std::string hp = gp + "/h" + std::to_string(z);
        const Var q = ad::matmul(updated_feats, p.at(hp + "/Wv")); // (M*K) x d
        const Var scores = ad::matmul(q, p.at(hp + "/vatt"));      // (M*K) x 1
        const Var logits = ad::leaky_relu(ad::re(ad::reshape(scores, m, k)), arch.leaky_slope);
        const Var beta = ad::softmax_rows(logits); // M x K

        const Var pooled = ad::block_matmul(beta, q, 1, k); // M x d
        const Var residual = ad::matmul(v_prev, p.at(hp + "/Wvres"));
        const Var pre = ad::add(pooled, residual);
        heads.push_back(arch.vn_activation == VirtualNodeActivation::CRelu
                            ? ad::crelu(pre)
                            : ad::leaky_relu(ad::re(pre), 0.0));
    }
    (void)t;
    return ad::concat(heads, 1);
}

Var complex_batchnorm(ad::Tape& t, Var feats, const BoundParams& p, const std::string& bn_prefix,
                      bool training, ParamStore* stats, const ArchConfig& arch) {
    const std::size_t rows = feats.rows();
    const std::size_t width = feats.cols();
    if (training && rows < 2) {
        throw std::invalid_argument("complex_batchnorm: training mode needs a batch of >= 2 rows");
    }
    if (training && stats == nullptr) {
        throw std::invalid_argument("complex_batchnorm: training mode needs mutable statistics");
    }
    const double inv_rows = 1.0 / static_cast<double>(rows);
    const double mom = arch.bn_momentum;

    Var mu, c_re, c_im, var_rr, var_ri, var_ii;
    if (training) {
        mu = ad::scalar_mul(ad::reduce_cols(feats), inv_rows); // 1 x H
        const Var centered = ad::sub(feats, ad::repeat_rows(mu, rows));
        c_re = ad::re(centered);
        c_im = ad::im(centered);
        var_rr = ad::scalar_mul(ad::reduce_cols(ad::cmul(c_re, c_re)), inv_rows);
        var_ri = ad::scalar_mul(ad::reduce_cols(ad::cmul(c_re, c_im)), inv_rows);
        var_ii = ad::scalar_mul(ad::reduce_cols(ad::cmul(c_im, c_im)), inv_rows);

        // Running statistics are plain values, not part of the graph.
        const auto blend = [mom](CMat& run, const CMat& batch) {
            for (std::size_t i = 0; i < run.size(); ++i) {
                run[i] = (1.0 - mom) * run[i] + mom * batch[i];
            }
        };
        blend(stats->at(bn_prefix + "/run_mean"), mu.value());
        blend(stats->at(bn_prefix + "/run_vrr"), var_rr.value());
        blend(stats->at(bn_prefix + "/run_vri"), var_ri.value());
        blend(stats->at(bn_prefix + "/run_vii"), var_ii.value());
    } else {
        mu = t.constant(p.store->at(bn_prefix + "/run_mean"));
        const Var centered = ad::sub(feats, ad::repeat_rows(mu, rows));
        c_re = ad::re(centered);
        c_im = ad::im(centered);
        var_rr = t.constant(p.store->at(bn_prefix + "/run_vrr"));
        var_ri = t.constant(p.store->at(bn_prefix + "/run_vri"));
        var_ii = t.constant(p.store->at(bn_prefix + "/run_vii"));
    }

    const Var eps = t.constant(CMat::full(1, width, arch.bn_epsilon));
    const Var a = ad::add(var_rr, eps);
    const Var dd = ad::add(var_ii, eps);

    Var rw, iw;
    if (arch.bn_mode == BnMode::Complex) {
        // Closed-form inverse square root of the 2x2 covariance
        // [[a, b], [b, d]]: P = [[d+s, -b], [-b, a+s]] / (s * tau),
        // s = sqrt(det), tau = sqrt(trace + 2 s).
        const Var b = var_ri;
        const Var det = ad::sub(ad::cmul(a, dd), ad::cmul(b, b));
        const Var s = ad::sqrt_real(ad::max_const(det, 0.0));
        const Var tau = ad::sqrt_real(ad::add(ad::add(a, dd), ad::scalar_mul(s, 2.0)));
        const Var denom = ad::reciprocal(ad::cmul(s, tau));
        const Var p_rr = ad::cmul(ad::add(dd, s), denom);
        const Var p_ii = ad::cmul(ad::add(a, s), denom);
        const Var p_ri = ad::neg(ad::cmul(b, denom));
        rw = ad::add(ad::cmul(c_re, ad::repeat_rows(p_rr, rows)),
                     ad::cmul(c_im, ad::repeat_rows(p_ri, rows)));
        iw = ad::add(ad::cmul(c_re, ad::repeat_rows(p_ri, rows)),
                     ad::cmul(c_im, ad::repeat_rows(p_ii, rows)));
    } else {
        const Var inv_r = ad::reciprocal(ad::sqrt_real(a));
        const Var inv_i = ad::reciprocal(ad::sqrt_real(dd));
        rw = ad::cmul(c_re, ad::repeat_rows(inv_r, rows));
        iw = ad::cmul(c_im, ad::repeat_rows(inv_i, rows));
    }

    // The 2x2 scale is a real parameter triple; re() pins that down so the
    // loss stays defined (with zero gradient) along the unused imaginary
    // coordinates of the stored tensors.
    const Var g_rr = ad::repeat_rows(ad::re(p.at(bn_prefix + "/gamma_rr")), rows);
    const Var g_ri = ad::repeat_rows(ad::re(p.at(bn_prefix + "/gamma_ri")), rows);
    const Var g_ii = ad::repeat_rows(ad::re(p.at(bn_prefix + "/gamma_ii")), rows);
    const Var out_re = ad::add(ad::cmul(g_rr, rw), ad::cmul(g_ri, iw));
    const Var out_im = ad::add(ad::cmul(g_ri, rw), ad::cmul(g_ii, iw));
    return ad::add_rowvec(ad::make_complex(out_re, out_im), p.at(bn_prefix + "/beta"));
}

Var cfl_forward(ad::Tape& t, Var feats, const BoundParams& p, const std::string& prefix,
                bool training, ParamStore* stats, const ArchConfig& arch) {
    const Var pre = ad::add_rowvec(ad::matmul(feats, p.at(prefix + "/W")), p.at(prefix + "/b"));
    const Var activated = ad::crelu(pre);
    return complex_batchnorm(t, activated, p, prefix + "/bn", training, stats, arch);
}

Var cfl_final(ad::Tape& t, Var feats, const BoundParams& p, const std::string& prefix) {
    (void)t;
    return ad::add_rowvec(ad::matmul(feats, p.at(prefix + "/W")), p.at(prefix + "/b"));
}

// ---- single-graph wrappers -----------------------------------------------------

CMat cgal_eval(const CMat& feats, const ParamStore& store, const std::string& prefix,
               std::size_t gal_index, const ArchConfig& arch) {
    ad::Tape t;
    const BoundParams p = bind(t, store);
    const Var v = t.constant(feats);
    return cgal_forward(t, v, p, prefix, gal_index, 1, feats.rows(), arch).value();
}

CMat virtual_node_eval(const CMat& updated_feats, const CMat& v_prev, const ParamStore& store,
                       const std::string& prefix, std::size_t gal_index, const ArchConfig& arch) {
    ad::Tape t;
    const BoundParams p = bind(t, store);
    const Var v = t.constant(updated_feats);
    const Var vp = t.constant(v_prev);
    return virtual_node_forward(t, v, vp, p, prefix, gal_index, 1, updated_feats.rows(), arch)
        .value();
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little);

constexpr char kCheckpointMagic[8] = {'F', 'G', 'C', 'K', '0', '0', '0', '1'};

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

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto len = read_pod<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) { throw std::runtime_error("save_checkpoint: cannot open " + path); }
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod<std::uint32_t>(os, ck.version);
    write_string(os, ck.arch_json);
    write_string(os, ck.system_json);
    write_pod<std::uint64_t>(os, ck.params.size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        const auto& e = ck.params.entry(i);
        write_string(os, e.name);
        write_pod<std::uint8_t>(os, e.trainable ? 1 : 0);
        write_pod<std::uint64_t>(os, e.value.rows());
        write_pod<std::uint64_t>(os, e.value.cols());
        os.write(reinterpret_cast<const char*>(e.value.reals()),
                 static_cast<std::streamsize>(2 * e.value.size() * sizeof(double)));
    }
    if (!os) { throw std::runtime_error("save_checkpoint: write failed for " + path); }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) { throw std::runtime_error("load_checkpoint: cannot open " + path); }
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    Checkpoint ck;
    ck.version = read_pod<std::uint32_t>(is);
    ck.arch_json = read_string(is);
    ck.system_json = read_string(is);
    const auto count = read_pod<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = read_string(is);
        const bool trainable = read_pod<std::uint8_t>(is) != 0;
        const auto rows = read_pod<std::uint64_t>(is);
        const auto cols = read_pod<std::uint64_t>(is);
        CMat value(rows, cols);
        is.read(reinterpret_cast<char*>(value.reals()),
                static_cast<std::streamsize>(2 * value.size() * sizeof(double)));
        ck.params.add(name, std::move(value), trainable);
    }
    if (!is) { throw std::runtime_error("load_checkpoint: truncated file " + path); }
    return ck;
}

} // namespace fasgnn::gnn
