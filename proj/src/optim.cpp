#include "dlth/optim.hpp"

#include <cmath>

namespace dlth {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adamw ? "adamw" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adamw") return OptimizerKind::adamw;
  if (text == "sgd") return OptimizerKind::sgd;
  fail(ErrorKind::configuration, "unknown optimizer '" + text + "'");
}

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"lr", c.lr},
                     {"min_lr", c.min_lr},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"lr_warmup_epochs", c.lr_warmup_epochs},
                     {"grad_clip", c.grad_clip}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  c.kind = parse_optimizer(j.at("kind").get<std::string>());
  j.at("lr").get_to(c.lr);
  j.at("min_lr").get_to(c.min_lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("eps").get_to(c.eps);
  j.at("momentum").get_to(c.momentum);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr_warmup_epochs").get_to(c.lr_warmup_epochs);
  j.at("grad_clip").get_to(c.grad_clip);
}

double scheduled_lr(const OptimConfig& config, int epoch, int step_in_epoch, int steps_per_epoch, int total_epochs) {
  const double steps = std::max(1, steps_per_epoch);
  const double t = epoch + step_in_epoch / steps;
  if (config.lr_warmup_epochs > 0 && t < config.lr_warmup_epochs)
    return config.lr * (t + 1.0 / steps) / config.lr_warmup_epochs;
  const double span = std::max(1e-9, static_cast<double>(total_epochs - config.lr_warmup_epochs));
  const double progress = std::clamp((t - config.lr_warmup_epochs) / span, 0.0, 1.0);
  return config.min_lr + 0.5 * (config.lr - config.min_lr) * (1.0 + std::cos(M_PI * progress));
}

namespace {

bool decays(const std::string& name, const Tensor<float>& t) { return t.shape.size() >= 2 && name.ends_with(".weight"); }

}  // namespace

Optimizer::Optimizer(const OptimConfig& config, const ParamSet<float>& params) : config_(config) {
  state_.kind = config.kind;
  state_.first = params.zeros_like();
  if (config.kind == OptimizerKind::adamw) state_.second = params.zeros_like();
}

Optimizer::Optimizer(const OptimConfig& config, OptimizerState state) : config_(config), state_(std::move(state)) {
  require(state_.kind == config.kind, ErrorKind::configuration, "optimizer state kind does not match configuration");
}

void Optimizer::step(ParamSet<float>& params, ParamSet<float>& grads, double lr, const WeightMask* mask) {
  require(params.same_layout(grads) && params.same_layout(state_.first), ErrorKind::alignment,
          "optimizer state does not match parameters");
  if (mask != nullptr) {
    mask->check_alignment(params);
    mask->apply(grads);
  }

  if (config_.grad_clip > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (grads.trainable(i)) sq += grads[i].vector().cast<double>().squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) {
      const float scale = static_cast<float>(config_.grad_clip / norm);
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i].vector() *= scale;
    }
  }

  ++state_.step;
  const float lr_f = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    auto w = params[i].vector();
    auto g = grads[i].vector();
    auto m = state_.first[i].vector();
    const bool wd = decays(params.name(i), params[i]) && config_.weight_decay > 0.0;
    if (config_.kind == OptimizerKind::adamw) {
      auto v = state_.second[i].vector();
      const float b1 = static_cast<float>(config_.beta1);
      const float b2 = static_cast<float>(config_.beta2);
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(state_.step));
      const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(state_.step));
      const float step_size = static_cast<float>(lr / bc1);
      const float denom_scale = static_cast<float>(1.0 / std::sqrt(bc2));
      if (wd) w *= 1.0f - lr_f * static_cast<float>(config_.weight_decay);
      w.array() -= step_size * m.array() / (v.array().sqrt() * denom_scale + static_cast<float>(config_.eps));
    } else {
      if (wd) g += static_cast<float>(config_.weight_decay) * w;
      m = static_cast<float>(config_.momentum) * m + g;
      w -= lr_f * m;
    }
  }
  if (mask != nullptr) mask->apply(params);
}

}  // namespace dlth
