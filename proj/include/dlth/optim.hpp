#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "dlth/tensor.hpp"
#include "dlth/weight_mask.hpp"

namespace dlth {

enum class OptimizerKind { adamw, sgd };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
  int batch_size = 64;
  int lr_warmup_epochs = 0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

// Linear warmup then cosine decay to min_lr, evaluated per step.
double scheduled_lr(const OptimConfig& config, int epoch, int step_in_epoch, int steps_per_epoch, int total_epochs);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adamw;
  std::int64_t step = 0;
  ParamSet<float> first;   // Adam m / SGD momentum buffer
  ParamSet<float> second;  // Adam v (empty for SGD)
};

class Optimizer {
 public:
  Optimizer(const OptimConfig& config, const ParamSet<float>& params);
  Optimizer(const OptimConfig& config, OptimizerState state);

  // One update. Masked weights receive no gradient and are forced to exactly
  // zero afterwards.
  void step(ParamSet<float>& params, ParamSet<float>& grads, double lr, const WeightMask* mask = nullptr);

  const OptimizerState& state() const { return state_; }

 private:
  OptimConfig config_;
  OptimizerState state_;
};

}  // namespace dlth
