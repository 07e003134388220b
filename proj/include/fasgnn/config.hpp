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

#include "fasgnn/channel.hpp"
#include "fasgnn/gnn.hpp"
#include "fasgnn/training.hpp"

#include <string>

namespace fasgnn {

// Experiment description: system constants, network architecture, training
// hyperparameters, and file paths. JSON on disk; unknown keys are rejected
// so typos fail loudly instead of silently falling back to defaults.
struct ExperimentConfig {
    SystemConfig system;
    gnn::ArchConfig arch;
    training::TrainConfig train;
    std::string dataset_path;
    std::string checkpoint_path;
    std::string output_dir = ".";
};

std::string system_to_json(const SystemConfig& cfg);
SystemConfig system_from_json(const std::string& text);

std::string arch_to_json(const gnn::ArchConfig& arch);
gnn::ArchConfig arch_from_json(const std::string& text);

std::string experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

std::uint64_t experiment_hash(const ExperimentConfig& cfg);

} // namespace fasgnn
