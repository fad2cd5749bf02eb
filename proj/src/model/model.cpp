#include "dlth/model/model.hpp"

#include <algorithm>

#include "dlth/digest.hpp"
#include "dlth/model/layers.hpp"
#include "dlth/rng.hpp"

namespace dlth {

std::string ModelState::digest() const {
  Sha256 h;
  h.update(nlohmann::json(config).dump());
  h.update_pod(seed);
  h.update_pod(epoch);
  for (std::size_t i = 0; i < params.size(); ++i) {
    h.update(params.name(i));
    for (int d : params[i].shape) h.update_pod(d);
    h.update(std::as_bytes(std::span(params[i].data)));
  }
  return h.hex();
}

template <typename T>
ParamSet<T> declare_params(const ModelConfig& config) {
  config.validate();
  ParamSet<T> params;
  if (config.arch == ArchKind::vit) {
    vit_declare_params(config, params);
  } else {
    cnn_declare_params(config, params);
  }
  return params;
}

template ParamSet<float> declare_params<float>(const ModelConfig&);
template ParamSet<double> declare_params<double>(const ModelConfig&);

ModelState build_model(const ModelConfig& config, std::uint64_t seed) {
  ModelState state;
  state.config = config;
  state.params = declare_params<float>(config);
  state.seed = seed;
  Rng rng(combine_seed(seed, 0x1417ULL));
  if (config.arch == ArchKind::vit) {
    vit_init_params(config, state.params, rng);
  } else {
    cnn_init_params(config, state.params, rng);
  }
  return state;
}

template <typename T>
std::pair<Mat<T>, std::vector<AttentionTrace<T>>> forward_with_attention(const ModelConfig& config,
                                                                         const ParamSet<T>& params,
                                                                         const ImageBatch<T>& batch) {
  VitOptions options;
  options.capture_attention = true;
  auto result = vit_forward(config, params, batch, {}, options, static_cast<VitTape<T>*>(nullptr));
  return {std::move(result.logits), std::move(result.traces)};
}

template std::pair<Mat<float>, std::vector<AttentionTrace<float>>> forward_with_attention(const ModelConfig&,
                                                                                          const ParamSet<float>&,
                                                                                          const ImageBatch<float>&);
template std::pair<Mat<double>, std::vector<AttentionTrace<double>>> forward_with_attention(const ModelConfig&,
                                                                                            const ParamSet<double>&,
                                                                                            const ImageBatch<double>&);

std::pair<Mat<float>, std::vector<AttentionTrace<float>>> forward_with_attention(const ModelState& model,
                                                                                 const ImageBatch<float>& batch) {
  return forward_with_attention(model.config, model.params, batch);
}

KeptIndices kept_from_masks(const ModelConfig& config, std::span<const PatchMask> masks) {
  KeptIndices kept;
  kept.reserve(masks.size());
  for (const auto& m : masks) {
    require(m.grid_side == config.grid_side() && m.size() == config.num_patches(), ErrorKind::shape,
            "mask grid " + std::to_string(m.grid_side) + " does not match model grid " +
                std::to_string(config.grid_side()));
    auto indices = m.kept_indices();
    require(!indices.empty(), ErrorKind::degenerate_input, "mask keeps zero patches");
    kept.push_back(std::move(indices));
  }
  return kept;
}

template <typename T>
Mat<T> forward_subset(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
                      std::span<const PatchMask> masks) {
  require(static_cast<int>(masks.size()) == batch.count, ErrorKind::shape, "one mask per image required");
  const auto kept = kept_from_masks(config, masks);
  return vit_forward(config, params, batch, kept, VitOptions{}, static_cast<VitTape<T>*>(nullptr)).logits;
}

template Mat<float> forward_subset(const ModelConfig&, const ParamSet<float>&, const ImageBatch<float>&,
                                   std::span<const PatchMask>);
template Mat<double> forward_subset(const ModelConfig&, const ParamSet<double>&, const ImageBatch<double>&,
                                    std::span<const PatchMask>);

Mat<float> forward_subset(const ModelState& model, const ImageBatch<float>& batch, std::span<const PatchMask> masks) {
  return forward_subset(model.config, model.params, batch, masks);
}

Mat<float> predict(const ModelState& model, const ImageBatch<float>& batch, const KeptIndices& kept) {
  if (model.config.arch == ArchKind::vit)
    return vit_forward(model.config, model.params, batch, kept, VitOptions{}, static_cast<VitTape<float>*>(nullptr))
        .logits;
  require(kept.empty(), ErrorKind::configuration, "CNN models accept occluded inputs only, not token subsets");
  // Evaluation mode reads running statistics only; the copy keeps `model` const.
  auto params = model.params;
  return cnn_forward(model.config, params, batch, false, static_cast<CnnTape<float>*>(nullptr));
}

namespace {

template <typename T>
int count_correct(const Mat<T>& logits, std::span<const int> labels) {
  int correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg = 0;
    logits.row(r).maxCoeff(&arg);
    if (static_cast<int>(arg) == labels[static_cast<std::size_t>(r)]) ++correct;
  }
  return correct;
}

}  // namespace

template <typename T>
StepStats loss_and_grad(const ModelConfig& config, ParamSet<T>& params, const ImageBatch<T>& batch,
                        const KeptIndices& kept, std::span<const int> labels,
                        const std::vector<std::vector<int>>* token_labels, const LossOptions& options,
                        ParamSet<T>& grads) {
  require(static_cast<int>(labels.size()) == batch.count, ErrorKind::shape, "one label per image required");
  StepStats stats;
  Mat<T> dlogits;
  if (config.arch == ArchKind::cnn) {
    require(kept.empty(), ErrorKind::configuration, "CNN models accept occluded inputs only, not token subsets");
    CnnTape<T> tape;
    const Mat<T> logits = cnn_forward(config, params, batch, true, &tape);
    stats.loss = cross_entropy(logits, labels, dlogits);
    stats.correct = count_correct(logits, labels);
    cnn_backward(config, params, tape, dlogits, grads);
    return stats;
  }

  const bool dense = token_labels != nullptr && options.token_label_weight > 0.0;
  VitOptions vit_options;
  vit_options.token_logits = dense;
  VitTape<T> tape;
  const auto result = vit_forward(config, params, batch, kept, vit_options, &tape);
  stats.loss = cross_entropy(result.logits, labels, dlogits);
  stats.correct = count_correct(result.logits, labels);
  Mat<T> dtoken;
  if (dense) {
    std::vector<int> flat;
    flat.reserve(static_cast<std::size_t>(result.token_logits.rows()));
    require(static_cast<int>(token_labels->size()) == batch.count, ErrorKind::alignment,
            "one token-label list per image required");
    for (int b = 0; b < batch.count; ++b) {
      const int n = result.offsets[static_cast<std::size_t>(b) + 1] - result.offsets[static_cast<std::size_t>(b)] - 1;
      const auto& labels_b = (*token_labels)[static_cast<std::size_t>(b)];
      require(static_cast<int>(labels_b.size()) == n, ErrorKind::alignment,
              "token labels do not match the surviving token count");
      flat.insert(flat.end(), labels_b.begin(), labels_b.end());
    }
    stats.loss += options.token_label_weight * cross_entropy(result.token_logits, flat, dtoken, options.token_label_weight);
  }
  vit_backward(config, params, tape, dlogits, dense ? &dtoken : nullptr, grads);
  return stats;
}

template StepStats loss_and_grad(const ModelConfig&, ParamSet<float>&, const ImageBatch<float>&, const KeptIndices&,
                                 std::span<const int>, const std::vector<std::vector<int>>*, const LossOptions&,
                                 ParamSet<float>&);
template StepStats loss_and_grad(const ModelConfig&, ParamSet<double>&, const ImageBatch<double>&, const KeptIndices&,
                                 std::span<const int>, const std::vector<std::vector<int>>*, const LossOptions&,
                                 ParamSet<double>&);

}  // namespace dlth
