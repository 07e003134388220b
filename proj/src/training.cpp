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

#include "fasgnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fasgnn::training {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Evaluation chunk size: batched evaluation produces bitwise-identical
// per-sample values (all ops are block-local), with far less tape overhead.
constexpr std::size_t kEvalChunk = 64;

double mean_utility_eval(const TwoStageModel& model, const std::vector<ChannelSample>& samples,
                         Utility utility) {
    const std::size_t n = samples.size();
    const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
    std::vector<double> chunk_sums(chunks, 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
        const std::size_t begin = static_cast<std::size_t>(c) * kEvalChunk;
        const std::size_t end = std::min(begin + kEvalChunk, n);
        ad::Tape t;
        TwoStageModel::Options opts;
        opts.utility = utility;
        const auto fv = model.forward(
            t, std::span<const ChannelSample>(samples.data() + begin, end - begin), opts,
            nullptr);
        double s = 0.0;
        for (std::size_t i = 0; i < end - begin; ++i) { s += fv.utility.value()(i, 0).real(); }
        chunk_sums[static_cast<std::size_t>(c)] = s;
    }
    double total = 0.0;
    for (double s : chunk_sums) { total += s; }
    return total / static_cast<double>(n);
}

} // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) { throw std::invalid_argument("train: learning_rate must be > 0"); }
    if (batch_size < 1) { throw std::invalid_argument("train: batch_size must be >= 1"); }
    if (patience < 1) { throw std::invalid_argument("train: patience must be >= 1"); }
    if (max_epochs < 1) { throw std::invalid_argument("train: max_epochs must be >= 1"); }
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train: adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) { throw std::invalid_argument("train: adam epsilon must be > 0"); }
}

AdamState AdamState::init(const gnn::ParamStore& store) {
    AdamState st;
    st.m1.resize(store.size());
    st.m2.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& e = store.entry(i);
        if (e.trainable) {
            st.m1[i] = CMat(e.value.rows(), e.value.cols());
            st.m2[i] = CMat(e.value.rows(), e.value.cols());
        }
    }
    return st;
}

double loss_value(const TwoStageModel& model, std::span<const ChannelSample> batch,
                  Utility utility, bool training, gnn::ParamStore* mutable_stats) {
    ad::Tape t;
    TwoStageModel::Options opts;
    opts.training = training;
    opts.utility = utility;
    const auto fv = model.forward(t, batch, opts, mutable_stats);
    return fv.loss.value()(0, 0).real();
}

LossResult loss_and_grads(const TwoStageModel& model, std::span<const ChannelSample> batch,
                          Utility utility, bool training, gnn::ParamStore* mutable_stats) {
    ad::Tape t;
    TwoStageModel::Options opts;
    opts.training = training;
    opts.utility = utility;
    const auto fv = model.forward(t, batch, opts, mutable_stats);

    LossResult out;
    out.value = fv.loss.value()(0, 0).real();
    out.clamped = t.clamp_count();
    t.backward(fv.loss);
    out.grads.resize(model.params().size());
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        if (!model.params().entry(i).trainable) { continue; }
        out.grads[i] = t.adjoint(fv.bound.vars[i]);
        if (!out.grads[i].all_finite()) { out.finite = false; }
    }
    return out;
}

void adam_step(gnn::ParamStore& store, const std::vector<CMat>& grads, AdamState& state,
               const TrainConfig& cfg) {
    if (grads.size() != store.size()) {
        throw std::invalid_argument("adam_step: gradient set does not match parameter store");
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (!store.entry(i).trainable) { continue; }
        if (!grads[i].same_shape(store.entry(i).value)) {
            throw std::invalid_argument("adam_step: gradient shape mismatch at " +
                                        store.entry(i).name);
        }
        if (!grads[i].all_finite()) {
            ++state.skipped_steps;
            return;
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (!store.entry(i).trainable) { continue; }
        double* theta = store.entry(i).value.reals();
        double* m1 = state.m1[i].reals();
        double* m2 = state.m2[i].reals();
        const double* g = grads[i].reals();
        const std::size_t len = 2 * store.entry(i).value.size();
        for (std::size_t c = 0; c < len; ++c) {
            m1[c] = cfg.beta1 * m1[c] + (1.0 - cfg.beta1) * g[c];
            m2[c] = cfg.beta2 * m2[c] + (1.0 - cfg.beta2) * g[c] * g[c];
            const double mhat = m1[c] / bc1;
            const double vhat = m2[c] / bc2;
            theta[c] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        }
    }
}

FitResult fit(TwoStageModel& model, const Dataset& train_set, const Dataset& val_set,
              const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.samples.empty() || val_set.samples.empty()) {
        throw std::invalid_argument("fit: training and validation sets must be nonempty");
    }

    AdamState state = AdamState::init(model.params());
    FitResult result;
    result.best_params = model.params();
    std::size_t epochs_since_best = 0;
    std::vector<std::size_t> order(train_set.samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) { order[i] = i; }

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto epoch_start = Clock::now();

        // Seeded per-epoch shuffle (Fisher-Yates on the derived stream).
        Rng rng(derive_seed(cfg.seed, 0xE90C + epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        std::vector<ChannelSample> batch;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            // BatchNorm in training mode needs at least two rows; a trailing
            // singleton batch is dropped.
            if (end - begin < 2 && cfg.batch_size > 1) { continue; }
            batch.clear();
            for (std::size_t i = begin; i < end; ++i) {
                batch.push_back(train_set.samples[order[i]]);
            }
            const auto lr =
                loss_and_grads(model, batch, cfg.utility, true, &model.params());
            if (!std::isfinite(lr.value)) {
                throw std::runtime_error("fit: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch offset " +
                                         std::to_string(begin));
            }
            loss_sum += lr.value * static_cast<double>(batch.size());
            loss_count += batch.size();
            adam_step(model.params(), lr.grads, state, cfg);
        }

        const double val_utility = mean_utility_eval(model, val_set.samples, cfg.utility);

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        row.val_utility = val_utility;
        row.seconds = seconds_since(epoch_start);
        result.report.rows.push_back(row);

        if (val_utility > result.report.best_val_utility) {
            result.report.best_val_utility = val_utility;
            result.report.best_epoch = epoch;
            result.best_params = model.params();
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        if (epochs_since_best >= cfg.patience) {
            result.report.stop_reason = "patience";
            break;
        }
    }
    if (result.report.stop_reason.empty()) { result.report.stop_reason = "max_epochs"; }
    return result;
}

Metrics evaluate(const TwoStageModel& model, const Dataset& data, Utility utility) {
    if (data.n_antennas != model.config().n_antennas) {
        throw std::invalid_argument("evaluate: dataset N=" + std::to_string(data.n_antennas) +
                                    " does not match model N=" +
                                    std::to_string(model.config().n_antennas));
    }
    if (data.samples.empty()) { throw std::invalid_argument("evaluate: empty dataset"); }

    const std::size_t n = data.samples.size();
    std::vector<double> sr(n), ee(n), ms(n);
    std::vector<unsigned char> feasible(n);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const auto& sample = data.samples[static_cast<std::size_t>(i)];
        const auto start = Clock::now();
        const auto inf = model.infer(sample);
        ms[static_cast<std::size_t>(i)] = seconds_since(start) * 1e3;
        sr[static_cast<std::size_t>(i)] = inf.sum_rate;
        ee[static_cast<std::size_t>(i)] = inf.ee;
        feasible[static_cast<std::size_t>(i)] =
            check_feasibility(inf.beams, inf.positions, model.config()).pass() ? 1 : 0;
    }

    Metrics m;
    m.n_samples = n;
    m.n_users = data.n_users;
    m.n_antennas = data.n_antennas;
    std::vector<double> util(n);
    for (std::size_t i = 0; i < n; ++i) {
        util[i] = utility == Utility::SumRate ? sr[i] : ee[i];
        m.mean_sum_rate += sr[i];
        m.mean_ee += ee[i];
        m.feasibility_rate += feasible[i];
        m.mean_inference_ms += ms[i];
        m.mean_utility += util[i];
    }
    const double dn = static_cast<double>(n);
    m.mean_sum_rate /= dn;
    m.mean_ee /= dn;
    m.feasibility_rate /= dn;
    m.mean_inference_ms /= dn;
    m.mean_utility /= dn;
    std::sort(util.begin(), util.end());
    m.median_utility = n % 2 == 1 ? util[n / 2] : 0.5 * (util[n / 2 - 1] + util[n / 2]);
    return m;
}

void TrainReport::write_csv(std::ostream& out, bool with_timing) const {
    out << "epoch,train_loss,val_utility";
    if (with_timing) { out << ",seconds"; }
    out << "\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.train_loss << ',' << r.val_utility;
        if (with_timing) { out << ',' << r.seconds; }
        out << "\n";
    }
    out << "# best_epoch=" << best_epoch << " best_val_utility=" << best_val_utility
        << " stop_reason=" << stop_reason << "\n";
}

PipelineGradReport pipeline_grad_check(const TwoStageModel& model,
                                       std::span<const ChannelSample> batch, Utility utility,
                                       std::size_t n_coords, std::uint64_t seed, double step,
                                       double tol, double abs_floor) {
    gnn::ParamStore scratch = model.params();
    const auto analytic = loss_and_grads(model, batch, utility, true, &scratch);

    PipelineGradReport report;
    Rng rng(derive_seed(seed, 0x6AD));
    for (std::size_t probe = 0; probe < n_coords; ++probe) {
        std::size_t entry = rng.index(model.params().size());
        while (!model.params().entry(entry).trainable) {
            entry = rng.index(model.params().size());
        }
        const std::size_t coord = rng.index(2 * model.params().entry(entry).value.size());

        TwoStageModel perturbed = model;
        double* slot = perturbed.params().entry(entry).value.reals() + coord;
        const double orig = *slot;
        const auto numeric_at = [&](double h) {
            *slot = orig + h;
            gnn::ParamStore s1 = perturbed.params();
            const double fp = loss_value(perturbed, batch, utility, true, &s1);
            *slot = orig - h;
            gnn::ParamStore s2 = perturbed.params();
            const double fm = loss_value(perturbed, batch, utility, true, &s2);
            *slot = orig;
            return (fp - fm) / (2.0 * h);
        };
        const auto rel = [&](double a, double n) {
            return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
        };

        PipelineGradReport::Entry e;
        e.name = model.params().entry(entry).name;
        e.coord = coord;
        e.analytic = analytic.grads[entry].reals()[coord];
        e.numeric = numeric_at(step);
        e.rel_err = rel(e.analytic, e.numeric);
        if (e.rel_err >= tol) {
            e.numeric = numeric_at(step / 10.0);
            e.rel_err = rel(e.analytic, e.numeric);
            e.refined = true;
            ++report.refined_count;
        }
        e.below_resolution =
            std::abs(e.analytic) < abs_floor && std::abs(e.numeric) < abs_floor;
        if (e.below_resolution) {
            ++report.below_resolution_count;
        } else {
            report.max_rel_err = std::max(report.max_rel_err, e.rel_err);
        }
        report.entries.push_back(std::move(e));
    }
    report.coords_checked = n_coords;
    return report;
}

void PipelineGradReport::write_csv(std::ostream& out) const {
    out << "parameter,coord,analytic,numeric,rel_err,refined,below_resolution\n";
    out.precision(17);
    for (const auto& e : entries) {
        out << e.name << ',' << e.coord << ',' << e.analytic << ',' << e.numeric << ','
            << e.rel_err << ',' << (e.refined ? 1 : 0) << ',' << (e.below_resolution ? 1 : 0)
            << '\n';
    }
}

void write_metrics_csv(std::ostream& out, const std::string& dataset_id, const Metrics& m,
                       bool with_timing) {
    out << "dataset,k,n,samples,mean_utility,median_utility,mean_sum_rate,mean_ee,"
           "feasibility_rate";
    if (with_timing) { out << ",mean_inference_ms"; }
    out << "\n";
    out.precision(17);
    out << dataset_id << ',' << m.n_users << ',' << m.n_antennas << ',' << m.n_samples << ','
        << m.mean_utility << ',' << m.median_utility << ',' << m.mean_sum_rate << ','
        << m.mean_ee << ',' << m.feasibility_rate;
    if (with_timing) { out << ',' << m.mean_inference_ms; }
    out << "\n";
}

} // namespace fasgnn::training
