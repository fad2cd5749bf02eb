#include "dlth/model/vit.hpp"

#include <cmath>
#include <string>

#include <unsupported/Eigen/SpecialFunctions>

#include "dlth/model/layers.hpp"

namespace dlth {

namespace {

std::string block_name(int layer, const char* suffix) { return "blocks." + std::to_string(layer) + "." + suffix; }

template <typename T>
void check_batch(const ModelConfig& config, const ImageBatch<T>& batch, const KeptIndices& kept) {
  require(config.arch == ArchKind::vit, ErrorKind::configuration, "model is not a ViT");
  require(batch.count >= 1, ErrorKind::shape, "empty batch");
  require(batch.height == config.image_size && batch.width == config.image_size &&
              batch.channels == config.in_channels,
          ErrorKind::shape,
          "batch is " + std::to_string(batch.channels) + "x" + std::to_string(batch.height) + "x" +
              std::to_string(batch.width) + ", model expects " + std::to_string(config.in_channels) + "x" +
              std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  require(kept.empty() || static_cast<int>(kept.size()) == batch.count, ErrorKind::shape,
          "one kept-index list per image required");
  const int n = config.num_patches();
  for (const auto& list : kept)
    for (int idx : list) require(idx >= 0 && idx < n, ErrorKind::shape, "patch index out of range");
}

// Copies patch `index` of a CHW image into `dst`, (c, py, px) order to match
// the patch-embedding weight layout.
template <typename T>
void gather_patch(const ModelConfig& config, const T* image, int index, T* dst) {
  const int p = config.patch_size;
  const int side = config.grid_side();
  const int y0 = (index / side) * p;
  const int x0 = (index % side) * p;
  const int hw = config.image_size;
  for (int c = 0; c < config.in_channels; ++c)
    for (int py = 0; py < p; ++py)
      for (int px = 0; px < p; ++px)
        *dst++ = image[(static_cast<std::size_t>(c) * hw + y0 + py) * hw + x0 + px];
}

}  // namespace

template <typename T>
void vit_declare_params(const ModelConfig& config, ParamSet<T>& params) {
  const int d = config.embed_dim;
  const int hidden = d * config.mlp_ratio;
  params.add("cls_token", {1, d});
  params.add("pos_embed", {config.num_patches() + 1, d});
  params.add("patch_embed.weight", {d, config.patch_dim()});
  params.add("patch_embed.bias", {d});
  for (int l = 0; l < config.depth; ++l) {
    params.add(block_name(l, "norm1.weight"), {d});
    params.add(block_name(l, "norm1.bias"), {d});
    params.add(block_name(l, "attn.qkv.weight"), {3 * d, d});
    params.add(block_name(l, "attn.qkv.bias"), {3 * d});
    params.add(block_name(l, "attn.proj.weight"), {d, d});
    params.add(block_name(l, "attn.proj.bias"), {d});
    params.add(block_name(l, "norm2.weight"), {d});
    params.add(block_name(l, "norm2.bias"), {d});
    params.add(block_name(l, "mlp.fc1.weight"), {hidden, d});
    params.add(block_name(l, "mlp.fc1.bias"), {hidden});
    params.add(block_name(l, "mlp.fc2.weight"), {d, hidden});
    params.add(block_name(l, "mlp.fc2.bias"), {d});
  }
  params.add("norm.weight", {d});
  params.add("norm.bias", {d});
  params.add("head.weight", {config.num_classes, d});
  params.add("head.bias", {config.num_classes});
}

void vit_init_params(const ModelConfig& config, ParamSet<float>& params, Rng& rng) {
  (void)config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    auto& t = params[i];
    const bool is_norm_scale = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") ||
                               name == "norm.weight";
    if (is_norm_scale) {
      t.fill(1.0f);
    } else if (name.ends_with(".bias")) {
      t.fill(0.0f);
    } else if (name == "cls_token" || name == "pos_embed") {
      for (auto& v : t.data) v = static_cast<float>(rng.trunc_normal(0.02));
    } else {
      // Linear weights [out, in]. Tiny-std truncated normal stalls small ViTs
      // trained from scratch on a few thousand images; fan-in uniform does not.
      const double fan_in = t.shape[1];
      const double bound = name.ends_with("attn.qkv.weight") ? std::sqrt(6.0 / (fan_in + t.shape[0] / 3.0))
                                                             : 1.0 / std::sqrt(fan_in);
      for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
}

template <typename T>
void vit_embed(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
               const KeptIndices& kept, Mat<T>& tokens, std::vector<int>& offsets, VitTape<T>* tape) {
  check_batch(config, batch, kept);
  const int d = config.embed_dim;
  const int all = config.num_patches();

  offsets.assign(static_cast<std::size_t>(batch.count) + 1, 0);
  int total_patches = 0;
  for (int b = 0; b < batch.count; ++b) {
    const int n = kept.empty() || kept[static_cast<std::size_t>(b)].empty()
                      ? all
                      : static_cast<int>(kept[static_cast<std::size_t>(b)].size());
    total_patches += n;
    offsets[static_cast<std::size_t>(b) + 1] = offsets[static_cast<std::size_t>(b)] + n + 1;
  }

  Mat<T> patches(total_patches, config.patch_dim());
  std::vector<int> pos_index(static_cast<std::size_t>(offsets.back()));
  std::vector<int> patch_rows(static_cast<std::size_t>(total_patches));
  int row = 0;
  for (int b = 0; b < batch.count; ++b) {
    const bool everything = kept.empty() || kept[static_cast<std::size_t>(b)].empty();
    const int n = everything ? all : static_cast<int>(kept[static_cast<std::size_t>(b)].size());
    const int base = offsets[static_cast<std::size_t>(b)];
    pos_index[static_cast<std::size_t>(base)] = 0;
    for (int j = 0; j < n; ++j) {
      const int original = everything ? j : kept[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
      gather_patch(config, batch.image(b), original, patches.row(row).data());
      pos_index[static_cast<std::size_t>(base + 1 + j)] = original + 1;
      patch_rows[static_cast<std::size_t>(row)] = base + 1 + j;
      ++row;
    }
  }

  Mat<T> embedded;
  linear_forward(patches, params.at("patch_embed.weight"), params.at("patch_embed.bias"), embedded);

  const auto pos = params.at("pos_embed").matrix();
  const auto cls = params.at("cls_token").matrix();
  tokens.resize(offsets.back(), d);
  for (int b = 0; b < batch.count; ++b) tokens.row(offsets[static_cast<std::size_t>(b)]) = cls.row(0) + pos.row(0);
  for (int r = 0; r < total_patches; ++r) {
    const int t = patch_rows[static_cast<std::size_t>(r)];
    tokens.row(t) = embedded.row(r) + pos.row(pos_index[static_cast<std::size_t>(t)]);
  }

  if (tape != nullptr) {
    tape->offsets = offsets;
    tape->pos_index = std::move(pos_index);
    tape->patch_rows = std::move(patch_rows);
    tape->patches = std::move(patches);
  }
}

template <typename T>
void vit_block(const ModelConfig& config, const ParamSet<T>& params, int layer, Mat<T>& tokens,
               const std::vector<int>& offsets, BlockTape<T>* tape, std::vector<AttentionLayer<T>>* attention) {
  const int d = config.embed_dim;
  const int heads = config.num_heads;
  const int hd = config.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const int images = static_cast<int>(offsets.size()) - 1;

  Mat<T> ln1_hat, ln1_out, qkv, attn, projected;
  Vec<T> ln1_rstd;
  layer_norm_forward(tokens, params.at(block_name(layer, "norm1.weight")), params.at(block_name(layer, "norm1.bias")),
                     ln1_hat, ln1_rstd, ln1_out);
  linear_forward(ln1_out, params.at(block_name(layer, "attn.qkv.weight")),
                 params.at(block_name(layer, "attn.qkv.bias")), qkv);

  attn.resize(tokens.rows(), d);
  if (tape != nullptr) tape->probs.resize(static_cast<std::size_t>(images * heads));
  if (attention != nullptr) attention->resize(static_cast<std::size_t>(images));

  Mat<T> scores;
  for (int b = 0; b < images; ++b) {
    const int o = offsets[static_cast<std::size_t>(b)];
    const int n = offsets[static_cast<std::size_t>(b) + 1] - o;
    if (attention != nullptr) {
      auto& a = (*attention)[static_cast<std::size_t>(b)];
      a.heads = heads;
      a.tokens = n;
      a.probs.resize(static_cast<std::size_t>(heads * n * n));
    }
    for (int h = 0; h < heads; ++h) {
      scores.noalias() = qkv.block(o, h * hd, n, hd) * qkv.block(o, d + h * hd, n, hd).transpose();
      scores *= scale;
      softmax_rows(scores);
      attn.block(o, h * hd, n, hd).noalias() = scores * qkv.block(o, 2 * d + h * hd, n, hd);
      if (attention != nullptr) {
        auto& a = (*attention)[static_cast<std::size_t>(b)];
        std::copy(scores.data(), scores.data() + static_cast<std::ptrdiff_t>(n) * n,
                  a.probs.begin() + static_cast<std::ptrdiff_t>(h) * n * n);
      }
      if (tape != nullptr) tape->probs[static_cast<std::size_t>(b * heads + h)] = scores;
    }
  }

  linear_forward(attn, params.at(block_name(layer, "attn.proj.weight")),
                 params.at(block_name(layer, "attn.proj.bias")), projected);
  if (tape != nullptr) {
    tape->ln1_hat = std::move(ln1_hat);
    tape->ln1_out = std::move(ln1_out);
    tape->ln1_rstd = std::move(ln1_rstd);
    tape->qkv = std::move(qkv);
    tape->attn = std::move(attn);
  }
  tokens += projected;

  Mat<T> ln2_hat, ln2_out, fc1, act, fc2;
  Vec<T> ln2_rstd;
  layer_norm_forward(tokens, params.at(block_name(layer, "norm2.weight")), params.at(block_name(layer, "norm2.bias")),
                     ln2_hat, ln2_rstd, ln2_out);
  linear_forward(ln2_out, params.at(block_name(layer, "mlp.fc1.weight")), params.at(block_name(layer, "mlp.fc1.bias")),
                 fc1);
  gelu_forward(fc1, act);
  linear_forward(act, params.at(block_name(layer, "mlp.fc2.weight")), params.at(block_name(layer, "mlp.fc2.bias")),
                 fc2);
  if (tape != nullptr) {
    tape->ln2_hat = std::move(ln2_hat);
    tape->ln2_out = std::move(ln2_out);
    tape->ln2_rstd = std::move(ln2_rstd);
    tape->fc1 = std::move(fc1);
    tape->act = std::move(act);
  }
  tokens += fc2;
}

template <typename T>
VitResult<T> vit_forward(const ModelConfig& config, const ParamSet<T>& params, const ImageBatch<T>& batch,
                         const KeptIndices& kept, const VitOptions& options, VitTape<T>* tape) {
  VitResult<T> result;
  Mat<T> tokens;
  vit_embed(config, params, batch, kept, tokens, result.offsets, tape);
  const int images = batch.count;

  if (tape != nullptr) {
    tape->blocks.resize(static_cast<std::size_t>(config.depth));
    tape->token_logits = options.token_logits;
  }
  if (options.capture_attention) {
    result.traces.resize(static_cast<std::size_t>(images));
    for (auto& trace : result.traces) trace.layers.resize(static_cast<std::size_t>(config.depth));
  }

  std::vector<AttentionLayer<T>> layer_attention;
  for (int l = 0; l < config.depth; ++l) {
    vit_block(config, params, l, tokens, result.offsets, tape ? &tape->blocks[static_cast<std::size_t>(l)] : nullptr,
              options.capture_attention ? &layer_attention : nullptr);
    if (options.capture_attention)
      for (int b = 0; b < images; ++b)
        result.traces[static_cast<std::size_t>(b)].layers[static_cast<std::size_t>(l)] =
            std::move(layer_attention[static_cast<std::size_t>(b)]);
  }

  // Final norm: all rows when patch tokens are classified too, else CLS rows.
  Mat<T> final_in;
  if (options.token_logits) {
    final_in = std::move(tokens);
  } else {
    final_in.resize(images, config.embed_dim);
    for (int b = 0; b < images; ++b) final_in.row(b) = tokens.row(result.offsets[static_cast<std::size_t>(b)]);
  }
  Mat<T> hat, out;
  Vec<T> rstd;
  layer_norm_forward(final_in, params.at("norm.weight"), params.at("norm.bias"), hat, rstd, out);

  const auto& head_w = params.at("head.weight");
  const auto& head_b = params.at("head.bias");
  if (options.token_logits) {
    Mat<T> cls_rows(images, config.embed_dim);
    const int patch_tokens = static_cast<int>(out.rows()) - images;
    Mat<T> patch_rows(patch_tokens, config.embed_dim);
    int p = 0;
    for (int b = 0; b < images; ++b) {
      const int o = result.offsets[static_cast<std::size_t>(b)];
      const int e = result.offsets[static_cast<std::size_t>(b) + 1];
      cls_rows.row(b) = out.row(o);
      for (int r = o + 1; r < e; ++r) patch_rows.row(p++) = out.row(r);
    }
    linear_forward(cls_rows, head_w, head_b, result.logits);
    linear_forward(patch_rows, head_w, head_b, result.token_logits);
  } else {
    linear_forward(out, head_w, head_b, result.logits);
  }

  if (tape != nullptr) {
    tape->final_hat = std::move(hat);
    tape->final_out = std::move(out);
    tape->final_rstd = std::move(rstd);
  }
  return result;
}

template <typename T>
void vit_backward(const ModelConfig& config, const ParamSet<T>& params, const VitTape<T>& tape,
                  const Mat<T>& dlogits, const Mat<T>* dtoken_logits, ParamSet<T>& grads) {
  const int d = config.embed_dim;
  const int heads = config.num_heads;
  const int hd = config.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const int images = static_cast<int>(tape.offsets.size()) - 1;
  const int rows = tape.offsets.back();

  // Classifier head and final norm.
  const auto& head_w = params.at("head.weight");
  auto& g_head_w = grads.at("head.weight");
  auto& g_head_b = grads.at("head.bias");
  Mat<T> dfinal_out = Mat<T>::Zero(tape.final_out.rows(), d);
  if (tape.token_logits) {
    int p = 0;
    for (int b = 0; b < images; ++b) {
      const int o = tape.offsets[static_cast<std::size_t>(b)];
      const int e = tape.offsets[static_cast<std::size_t>(b) + 1];
      dfinal_out.row(o) = dlogits.row(b) * head_w.matrix();
      g_head_w.matrix().noalias() += dlogits.row(b).transpose() * tape.final_out.row(o);
      g_head_b.vector() += dlogits.row(b).transpose();
      if (dtoken_logits != nullptr) {
        for (int r = o + 1; r < e; ++r, ++p) {
          dfinal_out.row(r) = dtoken_logits->row(p) * head_w.matrix();
          g_head_w.matrix().noalias() += dtoken_logits->row(p).transpose() * tape.final_out.row(r);
          g_head_b.vector() += dtoken_logits->row(p).transpose();
        }
      }
    }
  } else {
    dfinal_out.noalias() = dlogits * head_w.matrix();
    g_head_w.matrix().noalias() += dlogits.transpose() * tape.final_out;
    g_head_b.vector() += dlogits.colwise().sum().transpose();
  }

  Mat<T> dfinal_in;
  layer_norm_backward(tape.final_hat, tape.final_rstd, params.at("norm.weight"), dfinal_out, grads.at("norm.weight"),
                      grads.at("norm.bias"), dfinal_in);

  Mat<T> dtokens;
  if (tape.token_logits) {
    dtokens = std::move(dfinal_in);
  } else {
    dtokens = Mat<T>::Zero(rows, d);
    for (int b = 0; b < images; ++b) dtokens.row(tape.offsets[static_cast<std::size_t>(b)]) = dfinal_in.row(b);
  }

  Mat<T> d_act, d_fc1, d_ln_out, d_ln_in, d_attn, d_qkv, dO, dP, dS;
  for (int l = config.depth - 1; l >= 0; --l) {
    const auto& bt = tape.blocks[static_cast<std::size_t>(l)];

    // MLP branch.
    linear_backward(bt.act, params.at(block_name(l, "mlp.fc2.weight")), dtokens, grads.at(block_name(l, "mlp.fc2.weight")),
                    grads.at(block_name(l, "mlp.fc2.bias")), &d_act);
    gelu_backward(bt.fc1, d_act, d_fc1);
    linear_backward(bt.ln2_out, params.at(block_name(l, "mlp.fc1.weight")), d_fc1,
                    grads.at(block_name(l, "mlp.fc1.weight")), grads.at(block_name(l, "mlp.fc1.bias")), &d_ln_out);
    layer_norm_backward(bt.ln2_hat, bt.ln2_rstd, params.at(block_name(l, "norm2.weight")), d_ln_out,
                        grads.at(block_name(l, "norm2.weight")), grads.at(block_name(l, "norm2.bias")), d_ln_in);
    dtokens += d_ln_in;

    // Attention branch.
    linear_backward(bt.attn, params.at(block_name(l, "attn.proj.weight")), dtokens,
                    grads.at(block_name(l, "attn.proj.weight")), grads.at(block_name(l, "attn.proj.bias")), &d_attn);
    d_qkv.resize(rows, 3 * d);
    for (int b = 0; b < images; ++b) {
      const int o = tape.offsets[static_cast<std::size_t>(b)];
      const int n = tape.offsets[static_cast<std::size_t>(b) + 1] - o;
      for (int h = 0; h < heads; ++h) {
        const auto& P = bt.probs[static_cast<std::size_t>(b * heads + h)];
        const auto Q = bt.qkv.block(o, h * hd, n, hd);
        const auto K = bt.qkv.block(o, d + h * hd, n, hd);
        const auto V = bt.qkv.block(o, 2 * d + h * hd, n, hd);
        dO = d_attn.block(o, h * hd, n, hd);
        d_qkv.block(o, 2 * d + h * hd, n, hd).noalias() = P.transpose() * dO;
        dP.noalias() = dO * V.transpose();
        const Vec<T> row_dot = (dP.array() * P.array()).rowwise().sum();
        dS = P.array() * (dP.colwise() - row_dot).array();
        dS *= scale;
        d_qkv.block(o, h * hd, n, hd).noalias() = dS * K;
        d_qkv.block(o, d + h * hd, n, hd).noalias() = dS.transpose() * Q;
      }
    }
    linear_backward(bt.ln1_out, params.at(block_name(l, "attn.qkv.weight")), d_qkv,
                    grads.at(block_name(l, "attn.qkv.weight")), grads.at(block_name(l, "attn.qkv.bias")), &d_ln_out);
    layer_norm_backward(bt.ln1_hat, bt.ln1_rstd, params.at(block_name(l, "norm1.weight")), d_ln_out,
                        grads.at(block_name(l, "norm1.weight")), grads.at(block_name(l, "norm1.bias")), d_ln_in);
    dtokens += d_ln_in;
  }

  // Embedding: CLS token, positional rows, patch projection.
  auto g_cls = grads.at("cls_token").matrix();
  auto g_pos = grads.at("pos_embed").matrix();
  for (int r = 0; r < rows; ++r) g_pos.row(tape.pos_index[static_cast<std::size_t>(r)]) += dtokens.row(r);
  for (int b = 0; b < images; ++b) g_cls.row(0) += dtokens.row(tape.offsets[static_cast<std::size_t>(b)]);
  Mat<T> d_embedded(static_cast<int>(tape.patch_rows.size()), d);
  for (std::size_t r = 0; r < tape.patch_rows.size(); ++r)
    d_embedded.row(static_cast<int>(r)) = dtokens.row(tape.patch_rows[r]);
  linear_backward(tape.patches, params.at("patch_embed.weight"), d_embedded, grads.at("patch_embed.weight"),
                  grads.at("patch_embed.bias"), static_cast<Mat<T>*>(nullptr));
}

#define DLTH_INSTANTIATE_VIT(T)                                                                                     \
  template void vit_declare_params<T>(const ModelConfig&, ParamSet<T>&);                                            \
  template void vit_embed<T>(const ModelConfig&, const ParamSet<T>&, const ImageBatch<T>&, const KeptIndices&,      \
                             Mat<T>&, std::vector<int>&, VitTape<T>*);                                              \
  template void vit_block<T>(const ModelConfig&, const ParamSet<T>&, int, Mat<T>&, const std::vector<int>&,         \
                             BlockTape<T>*, std::vector<AttentionLayer<T>>*);                                       \
  template VitResult<T> vit_forward<T>(const ModelConfig&, const ParamSet<T>&, const ImageBatch<T>&,                \
                                       const KeptIndices&, const VitOptions&, VitTape<T>*);                         \
  template void vit_backward<T>(const ModelConfig&, const ParamSet<T>&, const VitTape<T>&, const Mat<T>&,           \
                                const Mat<T>*, ParamSet<T>&);

DLTH_INSTANTIATE_VIT(float)
DLTH_INSTANTIATE_VIT(double)

}  // namespace dlth
