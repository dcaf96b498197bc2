// Copyright 2026 The KGI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KGI_OPTIMIZER_H_
#define KGI_OPTIMIZER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kgi {

enum class Schedule { kLinear, kTriangular };

Schedule parse_schedule(const std::string &name);
std::string schedule_name(Schedule s);

// Optimization hyperparameters. Defaults are the DPR training column.
struct TrainConfig {
  double learn_rate = 5e-5;
  std::size_t batch_size = 128;
  int epochs = 2;
  long warmup_instances = 0;
  Schedule schedule = Schedule::kLinear;
  double max_grad_norm = 1.0;
  double weight_decay = 0.0;
  double adam_epsilon = 1e-8;
  uint64_t seed = 42;

  static TrainConfig dpr_defaults();
  static TrainConfig rag_defaults();
  static TrainConfig few_shot_defaults();
  void validate() const;
};

// Learning rate at optimizer step `step` of `total_steps`.
double lr_at(long step, long total_steps, const TrainConfig &config);

// A parameter tensor and its gradient, viewed flat.
struct ParamView {
  std::span<double> value;
  std::span<const double> grad;
};

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;

double global_grad_norm(std::span<const ParamView> params);

// Global-norm clipping to config.max_grad_norm, then one Adam step with
// decoupled weight decay. State is sized on first use.
void optimizer_step(std::span<const ParamView> params, OptimizerState &state, double lr,
                    const TrainConfig &config);

}  // namespace kgi

#endif  // KGI_OPTIMIZER_H_
