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

#include "fasgnn/model.hpp"

#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace fasgnn::training {

struct TrainConfig {
    double learning_rate = 1e-6;
    std::size_t batch_size = 1024;
    std::size_t max_epochs = 2000;
    std::size_t patience = 50; // epochs without validation improvement
    Utility utility = Utility::SumRate;
    std::uint64_t seed = 1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

// First/second moment accumulators over the real-pair parametrization,
// aligned index-for-index with the ParamStore (empty slots for the
// non-trainable entries).
struct AdamState {
    std::vector<CMat> m1;
    std::vector<CMat> m2;
    std::uint64_t step = 0;
    std::size_t skipped_steps = 0; // non-finite gradient batches

    static AdamState init(const gnn::ParamStore& store);
};

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_utility = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;
    std::size_t best_epoch = 0;
    double best_val_utility = -std::numeric_limits<double>::infinity();
    std::string stop_reason;

    // `with_timing = false` drops the wall-clock column, leaving only the
    // bitwise-reproducible fields.
    void write_csv(std::ostream& out, bool with_timing = true) const;
};

struct LossResult {
    double value = 0.0;
    std::vector<CMat> grads; // aligned with ParamStore entries
    bool finite = true;
    std::size_t clamped = 0; // utility-floor activations in the batch
};

// Mean of 1/U over the batch under the model's current parameters.
double loss_value(const TwoStageModel& model, std::span<const ChannelSample> batch,
                  Utility utility, bool training, gnn::ParamStore* mutable_stats);

// Same, plus gradients with respect to every trainable entry.
LossResult loss_and_grads(const TwoStageModel& model, std::span<const ChannelSample> batch,
                          Utility utility, bool training, gnn::ParamStore* mutable_stats);

// Bias-corrected Adam update in place; a non-finite gradient skips the step
// and bumps state.skipped_steps.
void adam_step(gnn::ParamStore& store, const std::vector<CMat>& grads, AdamState& state,
               const TrainConfig& cfg);

struct FitResult {
    TrainReport report;
    gnn::ParamStore best_params; // deep copy at the best validation epoch
};

FitResult fit(TwoStageModel& model, const Dataset& train_set, const Dataset& val_set,
              const TrainConfig& cfg);

struct Metrics {
    std::size_t n_samples = 0;
    std::size_t n_users = 0;
    std::size_t n_antennas = 0;
    double mean_utility = 0.0;
    double median_utility = 0.0;
    double mean_sum_rate = 0.0;
    double mean_ee = 0.0;
    double feasibility_rate = 0.0;
    double mean_inference_ms = 0.0;
};

Metrics evaluate(const TwoStageModel& model, const Dataset& data, Utility utility);

void write_metrics_csv(std::ostream& out, const std::string& dataset_id, const Metrics& m,
                       bool with_timing = true);

// Central-difference check of the whole training loss against backward(),
// over a random subset of Theta coordinates. The activations are piecewise
// linear, so a coordinate that disagrees at `step` is re-measured at step/10:
// kink-crossing artifacts vanish under refinement, genuine gradient bugs do
// not. Coordinates whose gradient is below the measurement floor on both
// sides are excluded from the verdict (structural zeros).
struct PipelineGradReport {
    struct Entry {
        std::string name;
        std::size_t coord = 0;
        double analytic = 0.0;
        double numeric = 0.0;
        double rel_err = 0.0; // after refinement, if any
        bool refined = false;
        bool below_resolution = false;
    };
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
    std::size_t refined_count = 0;
    std::size_t below_resolution_count = 0;

    bool pass(double tol) const { return max_rel_err < tol; }
    void write_csv(std::ostream& out) const;
};

PipelineGradReport pipeline_grad_check(const TwoStageModel& model,
                                       std::span<const ChannelSample> batch, Utility utility,
                                       std::size_t n_coords, std::uint64_t seed,
                                       double step = 1e-4, double tol = 1e-3,
                                       double abs_floor = 1e-8);

} // namespace fasgnn::training
