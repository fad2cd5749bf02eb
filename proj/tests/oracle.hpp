#pragma once

// Brute-force ticket selection written with plain loops: its own layer norm,
// softmax, attention and GELU, a full sort at every stage, and the final mask
// as the intersection of all stage survivor sets. Shares nothing with the
// library's forward pass except the parameter names.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dlth/image.hpp"
#include "dlth/model/model.hpp"

namespace dlth::oracle {

using Rows = std::vector<std::vector<double>>;

inline std::vector<double> weights(const ModelState& m, const std::string& name) {
  const auto& t = m.params.at(name);
  return {t.data.begin(), t.data.end()};
}

// y = x W^T + b, W stored [out, in].
inline Rows linear(const Rows& x, const std::vector<double>& w, const std::vector<double>& b) {
  const std::size_t out = b.size(), in = w.size() / out;
  Rows y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w[o * in + i];
      y[r][o] = s;
    }
  return y;
}

inline Rows layer_norm(const Rows& x, const std::vector<double>& g, const std::vector<double>& b) {
  Rows y = x;
  for (auto& row : y) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mean) * inv * g[i] + b[i];
  }
  return y;
}

struct Trace {
  std::vector<std::vector<int>> stage_kept;
  std::vector<std::uint8_t> mask;
};

inline Trace select(const ModelState& m, const Image& img, const NormStats& stats, const std::vector<int>& depths,
                    double keep_rate) {
  const auto& c = m.config;
  const int p = c.patch_size, side = c.grid_side(), n = c.num_patches(), d = c.embed_dim;
  const int heads = c.num_heads, hd = d / heads;

  Rows patches(static_cast<std::size_t>(n));
  for (int idx = 0; idx < n; ++idx)
    for (int ch = 0; ch < c.in_channels; ++ch)
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x) {
          const double v = img.at((idx / side) * p + y, (idx % side) * p + x, ch) / 255.0;
          patches[static_cast<std::size_t>(idx)].push_back((v - stats.mean[static_cast<std::size_t>(ch)]) /
                                                           stats.stddev[static_cast<std::size_t>(ch)]);
        }
  const Rows emb = linear(patches, weights(m, "patch_embed.weight"), weights(m, "patch_embed.bias"));
  const auto pos = weights(m, "pos_embed");
  const auto cls = weights(m, "cls_token");

  std::vector<int> alive(static_cast<std::size_t>(n));
  std::iota(alive.begin(), alive.end(), 0);
  Rows tok;
  tok.emplace_back(d);
  for (int j = 0; j < d; ++j) tok[0][static_cast<std::size_t>(j)] = cls[static_cast<std::size_t>(j)] + pos[static_cast<std::size_t>(j)];
  for (int idx = 0; idx < n; ++idx) {
    std::vector<double> row(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j)
      row[static_cast<std::size_t>(j)] = emb[static_cast<std::size_t>(idx)][static_cast<std::size_t>(j)] +
                                         pos[static_cast<std::size_t>((idx + 1) * d + j)];
    tok.push_back(row);
  }

  Trace trace;
  int kept = n;
  std::vector<std::uint8_t> inter(static_cast<std::size_t>(n), 1);
  for (int l = 0; l < c.depth; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    const Rows h = layer_norm(tok, weights(m, pre + "norm1.weight"), weights(m, pre + "norm1.bias"));
    const Rows qkv = linear(h, weights(m, pre + "attn.qkv.weight"), weights(m, pre + "attn.qkv.bias"));
    const std::size_t t = tok.size();
    Rows att(t, std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<double> cls_row(t, 0.0);
    for (int hh = 0; hh < heads; ++hh)
      for (std::size_t i = 0; i < t; ++i) {
        std::vector<double> s(t);
        double mx = -1e300;
        for (std::size_t j = 0; j < t; ++j) {
          double dot = 0;
          for (int e = 0; e < hd; ++e)
            dot += qkv[i][static_cast<std::size_t>(hh * hd + e)] * qkv[j][static_cast<std::size_t>(d + hh * hd + e)];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (auto& v : s) v /= z;
        if (i == 0)
          for (std::size_t j = 0; j < t; ++j) cls_row[j] += s[j] / heads;
        for (std::size_t j = 0; j < t; ++j)
          for (int e = 0; e < hd; ++e)
            att[i][static_cast<std::size_t>(hh * hd + e)] += s[j] * qkv[j][static_cast<std::size_t>(2 * d + hh * hd + e)];
      }
    const Rows proj = linear(att, weights(m, pre + "attn.proj.weight"), weights(m, pre + "attn.proj.bias"));
    for (std::size_t i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) tok[i][static_cast<std::size_t>(j)] += proj[i][static_cast<std::size_t>(j)];
    const Rows h2 = layer_norm(tok, weights(m, pre + "norm2.weight"), weights(m, pre + "norm2.bias"));
    Rows f1 = linear(h2, weights(m, pre + "mlp.fc1.weight"), weights(m, pre + "mlp.fc1.bias"));
    for (auto& row : f1)
      for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    const Rows f2 = linear(f1, weights(m, pre + "mlp.fc2.weight"), weights(m, pre + "mlp.fc2.bias"));
    for (std::size_t i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) tok[i][static_cast<std::size_t>(j)] += f2[i][static_cast<std::size_t>(j)];

    if (std::find(depths.begin(), depths.end(), l + 1) == depths.end()) continue;
    kept = static_cast<int>(std::floor(keep_rate * kept + 0.5 + 1e-9));
    std::vector<std::size_t> order(alive.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (cls_row[a + 1] != cls_row[b + 1]) return cls_row[a + 1] > cls_row[b + 1];
      return alive[a] < alive[b];
    });
    std::vector<std::size_t> chosen(order.begin(), order.begin() + kept);
    std::sort(chosen.begin(), chosen.end());
    Rows next{tok[0]};
    std::vector<int> survivors;
    for (auto k : chosen) {
      next.push_back(tok[k + 1]);
      survivors.push_back(alive[k]);
    }
    std::vector<std::uint8_t> stage(static_cast<std::size_t>(n), 0);
    for (int s : survivors) stage[static_cast<std::size_t>(s)] = 1;
    for (int i = 0; i < n; ++i) inter[static_cast<std::size_t>(i)] &= stage[static_cast<std::size_t>(i)];
    tok = std::move(next);
    alive = survivors;
    trace.stage_kept.push_back(survivors);
  }
  trace.mask = inter;
  return trace;
}

}  // namespace dlth::oracle
