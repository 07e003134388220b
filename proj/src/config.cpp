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

#include "fasgnn/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fasgnn {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (allowed.find(key) == allowed.end()) {
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
        }
    }
}

json system_json(const SystemConfig& cfg) {
    json j;
    j["n_antennas"] = cfg.n_antennas;
    j["n_users"] = cfg.n_users;
    j["wavelength"] = cfg.wavelength;
    j["aperture"] = cfg.aperture;
    j["min_spacing"] = cfg.min_spacing;
    j["p_max"] = cfg.p_max;
    j["p_c"] = cfg.p_c;
    j["noise_power"] = cfg.noise_power;
    j["path_loss"] = cfg.path_loss;
    return j;
}

SystemConfig system_from(const json& j) {
    reject_unknown_keys(j,
                        {"n_antennas", "n_users", "wavelength", "aperture", "min_spacing",
                         "p_max", "p_c", "noise_power", "path_loss"},
                        "system");
    SystemConfig cfg;
    cfg.n_antennas = j.value("n_antennas", cfg.n_antennas);
    cfg.n_users = j.value("n_users", cfg.n_users);
    cfg.wavelength = j.value("wavelength", cfg.wavelength);
    // The aperture and spacing defaults scale with the wavelength.
    cfg.aperture = j.value("aperture", 10.0 * cfg.wavelength);
    cfg.min_spacing = j.value("min_spacing", 0.5 * cfg.wavelength);
    cfg.p_max = j.value("p_max", cfg.p_max);
    cfg.p_c = j.value("p_c", cfg.p_c);
    cfg.noise_power = j.value("noise_power", cfg.noise_power);
    cfg.path_loss = j.value("path_loss", cfg.path_loss);
    cfg.validate();
    return cfg;
}

json arch_json(const gnn::ArchConfig& a) {
    json j;
    j["g1"] = a.g1;
    j["g2"] = a.g2;
    j["g3"] = a.g3;
    j["g4"] = a.g4;
    j["f1"] = a.f1;
    j["f2"] = a.f2;
    j["f3"] = a.f3;
    j["f4"] = a.f4;
    j["heads"] = a.heads;
    j["d_head"] = a.d_head;
    j["fc_hidden"] = a.fc_hidden;
    j["bn_mode"] = a.bn_mode == gnn::BnMode::Complex ? "complex" : "split";
    j["vn_activation"] =
        a.vn_activation == gnn::VirtualNodeActivation::CRelu ? "crelu" : "relu_re";
    j["theta_phase_embedding"] = a.theta_phase_embedding;
    j["bn_momentum"] = a.bn_momentum;
    j["bn_epsilon"] = a.bn_epsilon;
    j["leaky_slope"] = a.leaky_slope;
    return j;
}

gnn::ArchConfig arch_from(const json& j) {
    reject_unknown_keys(j,
                        {"g1", "g2", "g3", "g4", "f1", "f2", "f3", "f4", "heads", "d_head",
                         "fc_hidden", "bn_mode", "vn_activation", "theta_phase_embedding",
                         "bn_momentum", "bn_epsilon", "leaky_slope"},
                        "architecture");
    gnn::ArchConfig a;
    a.g1 = j.value("g1", a.g1);
    a.g2 = j.value("g2", a.g2);
    a.g3 = j.value("g3", a.g3);
    a.g4 = j.value("g4", a.g4);
    a.f1 = j.value("f1", a.f1);
    a.f2 = j.value("f2", a.f2);
    a.f3 = j.value("f3", a.f3);
    a.f4 = j.value("f4", a.f4);
    a.heads = j.value("heads", a.heads);
    a.d_head = j.value("d_head", a.d_head);
    a.fc_hidden = j.value("fc_hidden", a.fc_hidden);
    const std::string bn = j.value("bn_mode", std::string("complex"));
    if (bn == "complex") {
        a.bn_mode = gnn::BnMode::Complex;
    } else if (bn == "split") {
        a.bn_mode = gnn::BnMode::Split;
    } else {
        throw std::invalid_argument("config: bn_mode must be 'complex' or 'split'");
    }
    const std::string vn = j.value("vn_activation", std::string("crelu"));
    if (vn == "crelu") {
        a.vn_activation = gnn::VirtualNodeActivation::CRelu;
    } else if (vn == "relu_re") {
        a.vn_activation = gnn::VirtualNodeActivation::ReluRe;
    } else {
        throw std::invalid_argument("config: vn_activation must be 'crelu' or 'relu_re'");
    }
    a.theta_phase_embedding = j.value("theta_phase_embedding", a.theta_phase_embedding);
    a.bn_momentum = j.value("bn_momentum", a.bn_momentum);
    a.bn_epsilon = j.value("bn_epsilon", a.bn_epsilon);
    a.leaky_slope = j.value("leaky_slope", a.leaky_slope);
    a.validate();
    return a;
}

json train_json(const training::TrainConfig& t) {
    json j;
    j["learning_rate"] = t.learning_rate;
    j["batch_size"] = t.batch_size;
    j["max_epochs"] = t.max_epochs;
    j["patience"] = t.patience;
    j["utility"] = t.utility == Utility::SumRate ? "sum_rate" : "energy_efficiency";
    j["seed"] = t.seed;
    j["beta1"] = t.beta1;
    j["beta2"] = t.beta2;
    j["epsilon"] = t.epsilon;
    return j;
}

training::TrainConfig train_from(const json& j) {
    reject_unknown_keys(j,
                        {"learning_rate", "batch_size", "max_epochs", "patience", "utility",
                         "seed", "beta1", "beta2", "epsilon"},
                        "training");
    training::TrainConfig t;
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.max_epochs = j.value("max_epochs", t.max_epochs);
    t.patience = j.value("patience", t.patience);
    const std::string u = j.value("utility", std::string("sum_rate"));
    if (u == "sum_rate") {
        t.utility = Utility::SumRate;
    } else if (u == "energy_efficiency" || u == "ee") {
        t.utility = Utility::EnergyEfficiency;
    } else {
        throw std::invalid_argument("config: utility must be 'sum_rate' or 'energy_efficiency'");
    }
    t.seed = j.value("seed", t.seed);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.epsilon = j.value("epsilon", t.epsilon);
    t.validate();
    return t;
}

} // namespace

std::string system_to_json(const SystemConfig& cfg) { return system_json(cfg).dump(2); }

SystemConfig system_from_json(const std::string& text) {
    return system_from(json::parse(text));
}

std::string arch_to_json(const gnn::ArchConfig& arch) { return arch_json(arch).dump(2); }

gnn::ArchConfig arch_from_json(const std::string& text) { return arch_from(json::parse(text)); }

std::string experiment_to_json(const ExperimentConfig& cfg) {
    json j;
    j["system"] = system_json(cfg.system);
    j["architecture"] = arch_json(cfg.arch);
    j["training"] = train_json(cfg.train);
    json paths;
    paths["dataset"] = cfg.dataset_path;
    paths["checkpoint"] = cfg.checkpoint_path;
    paths["output_dir"] = cfg.output_dir;
    j["paths"] = paths;
    return j.dump(2);
}

ExperimentConfig experiment_from_json(const std::string& text) {
    const json j = json::parse(text);
    reject_unknown_keys(j, {"system", "architecture", "training", "paths"}, "experiment");
    ExperimentConfig cfg;
    if (j.contains("system")) { cfg.system = system_from(j.at("system")); }
    if (j.contains("architecture")) { cfg.arch = arch_from(j.at("architecture")); }
    if (j.contains("training")) { cfg.train = train_from(j.at("training")); }
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown_keys(p, {"dataset", "checkpoint", "output_dir"}, "paths");
        cfg.dataset_path = p.value("dataset", cfg.dataset_path);
        cfg.checkpoint_path = p.value("checkpoint", cfg.checkpoint_path);
        cfg.output_dir = p.value("output_dir", cfg.output_dir);
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) { throw std::runtime_error("config: cannot open " + path); }
    std::ostringstream buf;
    buf << is.rdbuf();
    return experiment_from_json(buf.str());
}

std::uint64_t experiment_hash(const ExperimentConfig& cfg) {
    return fnv1a64(experiment_to_json(cfg));
}

} // namespace fasgnn
