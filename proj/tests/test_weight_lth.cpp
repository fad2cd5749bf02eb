#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "dlth/weight_lth.hpp"
#include "support.hpp"

using namespace dlth;

namespace {

// Pruned positions by brute force: every in-scope weight as (|w|, tensor, offset), fully sorted.
std::vector<std::pair<std::string, std::size_t>> prune_oracle(const ParamSet<float>& p, PruneScope scope,
                                                              std::size_t count) {
  std::vector<std::tuple<float, std::size_t, std::size_t>> all;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (!p.trainable(t) || !in_scope(scope, p.name(t))) continue;
    for (std::size_t i = 0; i < p[t].numel(); ++i) all.emplace_back(std::abs(p[t].data[i]), t, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t k = 0; k < count; ++k) out.emplace_back(p.name(std::get<1>(all[k])), std::get<2>(all[k]));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::string, std::size_t>> zeros_of(const WeightMask& m) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (const auto& [name, bits] : m.masks)
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (!bits[i]) out.emplace_back(name, i);
  std::sort(out.begin(), out.end());
  return out;
}

LthRun run(InitKind kind, PruneScope scope, double sparsity, double acc, const std::string& key, bool rewound = false) {
  LthRun r;
  r.kind = kind;
  r.scope = scope;
  r.sparsity = sparsity;
  r.accuracy = acc;
  r.pairing = key;
  r.rewound = rewound;
  return r;
}

}  // namespace

TEST_CASE("scope membership") {
  CHECK(in_scope(PruneScope::msa, "blocks.0.attn.qkv.weight"));
  CHECK(in_scope(PruneScope::msa, "blocks.3.attn.proj.weight"));
  CHECK_FALSE(in_scope(PruneScope::msa, "blocks.0.mlp.fc1.weight"));
  CHECK(in_scope(PruneScope::msa_mlp, "blocks.0.mlp.fc2.weight"));
  CHECK_FALSE(in_scope(PruneScope::msa_mlp, "blocks.0.attn.qkv.bias"));
  CHECK_FALSE(in_scope(PruneScope::msa_mlp, "head.weight"));
  CHECK_FALSE(in_scope(PruneScope::msa_mlp, "patch_embed.weight"));
  CHECK(parse_scope(to_string(PruneScope::conv_all)) == PruneScope::conv_all);
  CHECK_THROWS_AS(parse_scope("everything"), Error);
}

TEST_CASE("magnitude pruning matches a full sort") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto model = build_model(test::tiny_vit(2, 16, 2, 8), seed);
    for (auto scope : {PruneScope::msa, PruneScope::msa_mlp}) {
      for (std::int64_t count : {0, 1, 100, 700}) {
        const auto mask = magnitude_prune_count(model.params, scope, count);
        CHECK(mask.pruned == count);
        CHECK(zeros_of(mask) == prune_oracle(model.params, scope, static_cast<std::size_t>(count)));
      }
    }
  }
}

TEST_CASE("equal magnitudes go to the lower position") {
  auto model = build_model(test::tiny_vit(2, 16, 2, 8), 4);
  for (std::size_t t = 0; t < model.params.size(); ++t) model.params[t].fill(0.5f);
  const auto mask = magnitude_prune_count(model.params, PruneScope::msa, 10);
  const auto zeros = zeros_of(mask);
  REQUIRE(zeros.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(zeros[i].first == "blocks.0.attn.qkv.weight");
    CHECK(zeros[i].second == i);
  }
}

TEST_CASE("target sparsity is over all parameters and must be feasible") {
  const auto model = build_model(test::tiny_vit(2, 16, 2, 8), 5);
  const auto total = static_cast<double>(model.params.trainable_count());
  const auto mask = magnitude_prune(model, PruneScope::msa_mlp, 0.44);
  CHECK(mask.total_params == static_cast<std::int64_t>(total));
  CHECK(mask.pruned == std::llround(0.44 * total));
  CHECK(std::abs(mask.achieved_sparsity() - 0.44) <= 0.5 / total);
  try {
    magnitude_prune(model, PruneScope::msa, 0.9);
    FAIL("pruned more than the scope holds");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::infeasible_sparsity);
  }
  CHECK_THROWS_AS(magnitude_prune(model, PruneScope::msa, 1.0), Error);

  const auto rm = random_weight_mask(model.config, PruneScope::msa_mlp, 0.44, 9);
  CHECK(rm.pruned == mask.pruned);
  CHECK(zeros_of(rm) != zeros_of(mask));
  CHECK(zeros_of(rm) == zeros_of(random_weight_mask(model.config, PruneScope::msa_mlp, 0.44, 9)));
  for (const auto& [name, bits] : rm.masks) CHECK(in_scope(PruneScope::msa_mlp, name));
}

TEST_CASE("masked training keeps pruned weights at zero") {
  DatasetSpec spec;
  spec.count = 32;
  const auto data = open_dataset(spec);
  const auto model = build_model(test::tiny_vit(2, 16, 2, 8), 6);
  const auto mask = magnitude_prune(model, PruneScope::msa_mlp, 0.3);
  RunConfig cfg;
  cfg.epochs = 2;
  cfg.optim.batch_size = 16;
  const auto [trained, history] = train_masked(random_reinit(model.config, 1), mask, data, cfg);
  for (const auto& [name, bits] : mask.masks) {
    const auto& t = trained.params.at(name);
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (!bits[i]) CHECK(t.data[i] == 0.0f);
  }
  CHECK(history.epochs.size() == 2);
  CHECK(random_reinit(model.config, 1).digest() != model.digest());

  auto misaligned = mask;
  misaligned.masks["blocks.9.attn.qkv.weight"] = {1};
  try {
    train_masked(model, misaligned, data, cfg);
    FAIL("misaligned mask accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::alignment);
  }
}

TEST_CASE("default rewind epoch") {
  CHECK(default_rewind_epoch(300) == 15);
  CHECK(default_rewind_epoch(20) == 1);
  CHECK(default_rewind_epoch(21) == 2);
  CHECK(default_rewind_epoch(0) == 0);
}

TEST_CASE("report pairs runs and takes LTH minus RR") {
  const std::vector<LthRun> runs{
      run(InitKind::lth, PruneScope::msa_mlp, 71, 74.9, "vit71", true),
      run(InitKind::rr, PruneScope::msa_mlp, 71, 72.5, "vit71", true),
      run(InitKind::rr, PruneScope::conv_all, 83.2, 87.9, "cnn83"),
      run(InitKind::lth, PruneScope::conv_all, 83.2, 90.1, "cnn83"),
      run(InitKind::rm, PruneScope::conv_all, 83.2, 80.0, "cnn83"),
  };
  const auto rows = lth_report(runs);
  REQUIRE(rows.size() == 2);
  CHECK(format_tenths(rows[0].diff) == "2.4");
  CHECK(rows[0].rewound);
  CHECK_FALSE(rows[0].rm.has_value());
  CHECK(format_tenths(rows[1].diff) == "2.2");
  CHECK(rows[1].rm == 80.0);

  const auto table = render_lth_table(rows);
  CHECK(table.find("MSA+MLP") != std::string::npos);
  CHECK(table.find("83.2%") != std::string::npos);
  const auto csv = lth_csv(rows);
  CHECK(csv.starts_with("scope,sparsity,lth_acc,rr_acc,rm_acc,diff,rewound\n"));
  CHECK(csv.find("msa_mlp,71.0,74.9,72.5,,2.4,1\n") != std::string::npos);
}

TEST_CASE("report refuses unpaired or ambiguous runs") {
  auto kind = [](const std::vector<LthRun>& runs) {
    try {
      lth_report(runs);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::usage;
  };
  const auto lth = run(InitKind::lth, PruneScope::msa, 12, 79.6, "a");
  const auto rr = run(InitKind::rr, PruneScope::msa, 12, 79.5, "a");
  CHECK(kind({lth}) == ErrorKind::report);
  CHECK(kind({rr}) == ErrorKind::report);
  CHECK(kind({lth, rr, rr}) == ErrorKind::report);
  CHECK(kind({lth, lth, rr}) == ErrorKind::report);
  auto off = rr;
  off.sparsity = 13;
  CHECK(kind({lth, off}) == ErrorKind::report);
  CHECK(lth_report({lth, rr}).size() == 1);
}

TEST_CASE("tenths formatting") {
  CHECK(format_tenths(-0.04) == "0.0");
  CHECK(format_tenths(-0.1) == "-0.1");
  CHECK(format_tenths(74.9 - 72.5) == "2.4");
  CHECK(format_tenths(48.8) == "48.8");
  CHECK(format_tenths(0.0) == "0.0");
}
