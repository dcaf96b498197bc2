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

#include "kgi/optimizer.h"

#include <algorithm>
#include <cmath>

#include "kgi/common.h"

namespace kgi {

Schedule parse_schedule(const std::string &name) {
  if (name == "linear") return Schedule::kLinear;
  if (name == "triangular") return Schedule::kTriangular;
  throw ValidationError("unknown learning schedule '" + name + "'");
}

std::string schedule_name(Schedule s) {
  return s == Schedule::kLinear ? "linear" : "triangular";
}

TrainConfig TrainConfig::dpr_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::rag_defaults() {
  TrainConfig c;
  c.learn_rate = 3e-5;
  c.batch_size = 128;
  c.epochs = 1;
  c.warmup_instances = 10000;
  c.schedule = Schedule::kTriangular;
  return c;
}

TrainConfig TrainConfig::few_shot_defaults() {
  TrainConfig c;
  c.learn_rate = 3e-6;
  c.batch_size = 1;
  c.epochs = 3;
  c.warmup_instances = 0;
  c.schedule = Schedule::kLinear;
  return c;
}

void TrainConfig::validate() const {
  require(learn_rate >= 0.0, "learn_rate must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 1, "epochs must be >= 1");
  require(warmup_instances >= 0, "warmup_instances must be >= 0");
  require(max_grad_norm > 0.0, "max_grad_norm must be > 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(adam_epsilon > 0.0, "adam_epsilon must be > 0");
}

double lr_at(long step, long total_steps, const TrainConfig &config) {
  require(total_steps > 0, "lr_at: total_steps must be > 0");
  require(step >= 0 && step <= total_steps, "lr_at: step outside [0, total_steps]");
  const double lr = config.learn_rate;
  const double t = static_cast<double>(step);
  const double total = static_cast<double>(total_steps);
  if (config.schedule == Schedule::kLinear) return lr * (1.0 - t / total);
  const long warmup = std::min<long>(
      total_steps, config.warmup_instances / static_cast<long>(config.batch_size));
  if (step < warmup) return lr * t / static_cast<double>(warmup);
  if (warmup == total_steps) return lr;
  return lr * (total - t) / (total - static_cast<double>(warmup));
}

double global_grad_norm(std::span<const ParamView> params) {
  double sq = 0.0;
  for (const auto &p : params) {
    for (double g : p.grad) sq += g * g;
  }
  return std::sqrt(sq);
}

void optimizer_step(std::span<const ParamView> params, OptimizerState &state, double lr,
                    const TrainConfig &config) {
  if (state.first_moment.empty()) {
    for (const auto &p : params) {
      state.first_moment.emplace_back(p.value.size(), 0.0);
      state.second_moment.emplace_back(p.value.size(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(), "optimizer state/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].value.size() == params[i].grad.size() &&
                state.first_moment[i].size() == params[i].value.size(),
            "optimizer state/parameter shape mismatch");
  }
  const double gnorm = global_grad_norm(params);
  if (!std::isfinite(gnorm)) throw ValidationError("optimizer_step: non-finite gradient");
  const double scale = gnorm > config.max_grad_norm ? config.max_grad_norm / gnorm : 1.0;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value;
    auto grad = params[i].grad;
    auto &m = state.first_moment[i];
    auto &v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j] * scale;
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
      if (lr == 0.0) continue;
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config.adam_epsilon);
      value[j] -= lr * (update + config.weight_decay * value[j]);
    }
  }
}

}  // namespace kgi
