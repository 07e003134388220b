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
#include "fasgnn/cmat.hpp"
#include "fasgnn/common.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace fasgnn::gnn {

enum class BnMode {
    Complex, // 2x2 whitening of the (re, im) pair per feature
    Split,   // independent real/imag standardization
};

enum class VirtualNodeActivation {
    CRelu,  // split-complex ReLU, same as the node update
    ReluRe, // ReLU on real parts, imaginary parts dropped
};

// Network hyperparameters. All four branches (stage-1 spacing, stage-1 span,
// stage-2 power, stage-2 mixing) share this shape configuration; none of the
// parameter shapes depend on the user count K.
struct ArchConfig {
    std::size_t g1 = 2, g2 = 2, g3 = 2, g4 = 2; // attention layers per branch
    std::size_t f1 = 2, f2 = 2, f3 = 2, f4 = 2; // fully-connected layers per branch
    std::size_t heads = 4;                      // Z
    std::size_t d_head = 16;                    // per-head width
    std::size_t fc_hidden = 64;                 // width of non-final FC layers
    BnMode bn_mode = BnMode::Complex;
    VirtualNodeActivation vn_activation = VirtualNodeActivation::CRelu;
    bool theta_phase_embedding = false; // stage-1 node feature e^{i theta} instead of theta
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
    double leaky_slope = 0.01;

    std::size_t width() const { return heads * d_head; } // V_g = Z * d_head
    void validate() const;
};

// Flat, insertion-ordered container for the learnable set and the BatchNorm
// running statistics. Insertion order defines the flattened coordinate
// layout used by the optimizer and the checkpoints.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        CMat value;
        bool trainable = true;
    };

    CMat& add(const std::string& name, CMat value, bool trainable = true);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;
    CMat& at(const std::string& name);
    const CMat& at(const std::string& name) const;

    std::size_t size() const { return entries_.size(); }
    Entry& entry(std::size_t i) { return entries_[i]; }
    const Entry& entry(std::size_t i) const { return entries_[i]; }

    std::size_t trainable_count() const;
    // Length of the flattened real-pair parameter vector Theta.
    std::size_t trainable_real_coords() const;

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Tape-side view of a ParamStore: every entry registered as a leaf.
struct BoundParams {
    ad::Tape* tape = nullptr;
    const ParamStore* store = nullptr;
    std::vector<ad::Var> vars;

    ad::Var at(const std::string& name) const;
};

BoundParams bind(ad::Tape& tape, const ParamStore& store);

// ---- parameter initialization ----------------------------------------------

// Adds the parameters of one branch (prefix e.g. "s1_xi"): n_gal attention
// layers from in_dim-wide node features, n_fc fully-connected layers ending
// in out_dim, virtual-node parameters when with_virtual is set. Kaiming
// fan-in initialization, halved per (re, im) part; biases zero.
void init_branch(ParamStore& store, const std::string& prefix, std::size_t n_gal,
                 std::size_t n_fc, std::size_t in_dim, std::size_t out_dim, bool with_virtual,
                 const ArchConfig& arch, Rng& rng);

// ---- layer forward passes (batched, on-tape) --------------------------------
//
// Node features are stored flat: M per-sample blocks of K rows each. Layer
// ops never mix rows across blocks except through the per-sample attention.

// Eq-style multi-head attention update of node features:
// (M*K) x Vin -> (M*K) x (Z*d_head).
ad::Var cgal_forward(ad::Tape& t, ad::Var feats, const BoundParams& p, const std::string& prefix,
                     std::size_t gal_index, std::size_t m, std::size_t k, const ArchConfig& arch);

// Virtual-node update from the already-updated node features (graph-level
// readout): joint with the previous virtual feature v_prev (M x Vprev),
// returns M x (Z*d_head).
ad::Var virtual_node_forward(ad::Tape& t, ad::Var updated_feats, ad::Var v_prev,
                             const BoundParams& p, const std::string& prefix,
                             std::size_t gal_index, std::size_t m, std::size_t k,
                             const ArchConfig& arch);

// Non-final fully-connected layer: CReLU(V W + B) followed by complex
// BatchNorm over the rows. In training mode `stats` receives the running
// statistics update and must be non-null.
ad::Var cfl_forward(ad::Tape& t, ad::Var feats, const BoundParams& p, const std::string& prefix,
                    bool training, ParamStore* stats, const ArchConfig& arch);

// Final fully-connected layer: V W + b, no activation, no normalization.
ad::Var cfl_final(ad::Tape& t, ad::Var feats, const BoundParams& p, const std::string& prefix);

// Standalone complex BatchNorm (prefix points at a ".../bn" parameter group).
ad::Var complex_batchnorm(ad::Tape& t, ad::Var feats, const BoundParams& p,
                          const std::string& bn_prefix, bool training, ParamStore* stats,
                          const ArchConfig& arch);

// ---- single-graph evaluation wrappers ---------------------------------------
// Convenience paths for K x V features of one graph in evaluation mode.

CMat cgal_eval(const CMat& feats, const ParamStore& store, const std::string& prefix,
               std::size_t gal_index, const ArchConfig& arch);
CMat virtual_node_eval(const CMat& updated_feats, const CMat& v_prev, const ParamStore& store,
                       const std::string& prefix, std::size_t gal_index, const ArchConfig& arch);

// ---- checkpoints -------------------------------------------------------------

struct Checkpoint {
    std::uint32_t version = 1;
    std::string arch_json;
    std::string system_json;
    ParamStore params;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace fasgnn::gnn
