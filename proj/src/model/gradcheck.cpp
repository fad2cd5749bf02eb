#include "dlth/model/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dlth/rng.hpp"

namespace dlth {

namespace {

double loss_at(const ModelConfig& config, ParamSet<double> params, const ImageBatch<double>& batch,
               std::span<const int> labels, const KeptIndices& kept) {
  auto scratch = params.zeros_like();
  const auto stats = loss_and_grad(config, params, batch, kept, labels, nullptr, LossOptions{}, scratch);
  require(std::isfinite(stats.loss), ErrorKind::numerical, "non-finite loss during finite differencing");
  return stats.loss;
}

}  // namespace

GradCheckReport finite_diff_check(const ModelState& model, const ImageBatch<double>& batch, std::span<const int> labels,
                                  const KeptIndices& kept, const GradCheckOptions& options) {
  const auto& config = model.config;
  if (config.arch == ArchKind::vit) {
    require(config.depth <= 2 && config.embed_dim <= 16, ErrorKind::configuration,
            "finite-difference check needs a tiny ViT (depth <= 2, embed_dim <= 16)");
  } else {
    require(config.depth == 8 && config.embed_dim <= 8, ErrorKind::configuration,
            "finite-difference check needs a tiny CNN (depth 8, width <= 8)");
  }

  ParamSet<double> params = model.params.cast<double>();
  ParamSet<double> grads = params.zeros_like();
  {
    auto working = params;
    const auto stats = loss_and_grad(config, working, batch, kept, labels, nullptr, LossOptions{}, grads);
    require(std::isfinite(stats.loss), ErrorKind::numerical, "non-finite loss");
  }

  GradCheckReport report;
  Rng rng(options.seed);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    const auto count = params[i].numel();
    const int samples = static_cast<int>(std::min<std::size_t>(count, static_cast<std::size_t>(options.samples_per_tensor)));
    for (int s = 0; s < samples; ++s) {
      const std::size_t k = count <= static_cast<std::size_t>(options.samples_per_tensor) ? static_cast<std::size_t>(s)
                                                                                           : rng.index(count);
      auto plus = params;
      auto minus = params;
      plus[i].data[k] += options.step;
      minus[i].data[k] -= options.step;
      const double numeric =
          (loss_at(config, plus, batch, labels, kept) - loss_at(config, minus, batch, labels, kept)) / (2.0 * options.step);
      const double analytic = grads[i].data[k];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), options.magnitude_floor});
      const double rel = std::abs(numeric - analytic) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_param = params.name(i) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return report;
}

}  // namespace dlth
