// Acceptance run: one PASS/FAIL line per criterion. The two desk-scale
// training criteria take hours and only run with --long; their runs live
// under --work and resume from checkpoints, so a rerun only re-evaluates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlth/digest.hpp"
#include "dlth/eval.hpp"
#include "dlth/model/gradcheck.hpp"
#include "dlth/model/macs.hpp"
#include "dlth/patch_apply.hpp"
#include "dlth/selector.hpp"
#include "dlth/ticket_store.hpp"
#include "dlth/trainer.hpp"
#include "dlth/weight_lth.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace dlth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  bool long_run = false;
  std::string work = "acceptance-work";
  int seeds = 3;
  // criterion 6
  int c6_epochs = 15;
  int c6_train = 5000;
  double c6_lr = 1e-3;
  // criterion 7
  int c7_cnn_train = 2000;  // 5000 images push both arms to the accuracy ceiling
  int c7_vit_train = 5000;
  int c7_cnn_epochs = 12;
  double c7_cnn_lr = 0.05;
  double c7_cnn_sparsity = 0.8;
  int c7_vit_epochs = 20;
  double c7_vit_lr = 1e-3;
  double c7_vit_sparsity = 0.44;
  std::string c7_vit_model = "vit-micro";
  int rewind_epoch = 0;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void log(const std::string& msg) {
  std::fprintf(stderr, "  [%s]\n", msg.c_str());
  std::fflush(stderr);
}

DatasetHandle builtin(const std::string& split, int count) {
  DatasetSpec s;
  s.split = split;
  s.count = count;
  return open_dataset(s);
}

// ---- fast criteria ----

Outcome sparsity_arithmetic() {
  const std::pair<double, double> table[] = {{0.95, 14.3}, {0.9, 27.1}, {0.85, 38.6}, {0.8, 48.8}};
  Outcome o{true, ""};
  for (auto [rho, want] : table) {
    SelectorConfig sc;
    sc.keep_rate = rho;
    sc.stage_depths = default_stage_depths(12);
    const double got = 100.0 * target_sparsity(sc);
    o.pass = o.pass && std::abs(got - want) <= 0.05;
    o.detail += (o.detail.empty() ? "" : " ") + fmt("%.2f", rho) + "->" + fmt("%.2f%%", got);
  }
  return o;
}

Outcome macs_model() {
  const auto c = preset("deit-small-like");
  const double full = static_cast<double>(count_macs(c, 197)) / 1e9;
  const double kept = static_cast<double>(count_macs(c, 102)) / 1e9;
  const bool pass = std::abs(full - 4.6) <= 0.05 * 4.6 && std::abs(kept - 2.2) <= 0.10 * 2.2;
  return {pass, "197 tokens " + fmt("%.3fG", full) + ", 102 tokens " + fmt("%.3fG", kept)};
}

Outcome selection_oracle() {
  Rng rng(20240);
  int pairs = 0, equal = 0;
  for (; pairs < 120; ++pairs) {
    const int heads = 1 + static_cast<int>(rng.index(3));
    const int head_dim = 4 + 2 * static_cast<int>(rng.index(2));
    const int depth = 2 + static_cast<int>(rng.index(4));
    const int patch = rng.bernoulli(0.5) ? 4 : 8;
    auto config = test::tiny_vit(depth, heads * head_dim, heads, patch);
    const auto model = build_model(config, rng.next());
    SelectorConfig sc;
    sc.stage_depths = default_stage_depths(depth);
    sc.keep_rate = rng.uniform(0.3, 0.95);
    TicketSelector selector(model, sc, test::unit_stats());
    const auto img = test::noise_image(rng.next());
    const auto got = selector.select(img);
    const auto want = oracle::select(model, img, test::unit_stats(), sc.stage_depths, sc.keep_rate);
    equal += got.mask.bits == want.mask && got.stage_kept == want.stage_kept;
  }
  return {equal == pairs, std::to_string(equal) + "/" + std::to_string(pairs) + " pairs bit-identical"};
}

Outcome fixed_topology(const fs::path& scratch) {
  const auto data = builtin("train", 200);
  const auto model = build_model(test::tiny_vit(4, 32, 2, 4), 3);
  SelectorConfig sc;
  sc.stage_depths = default_stage_depths(4);
  sc.keep_rate = 0.8;
  TicketSelector selector(model, sc, data.stats);
  fs::create_directories(scratch);
  TicketStore a, b;
  materialize(a, selector, data, {scratch / "a.tickets"});
  materialize(b, selector, data, {scratch / "b.tickets"});
  const bool same = sha256_file(scratch / "a.tickets") == sha256_file(scratch / "b.tickets");
  const auto report = verify_fixed_topology(TicketStore::load(scratch / "a.tickets"), selector, data, data.ids);
  fs::remove_all(scratch);
  return {same && report.clean() && report.checked == data.size(),
          std::string(same ? "identical" : "different") + " files, " + std::to_string(report.mismatches.size()) +
              " mismatches over " + std::to_string(report.checked) + " images"};
}

Outcome gradient_integrity() {
  const auto model = build_model(test::tiny_vit(2, 16, 2, 8), 11);
  ImageBatch<double> batch;
  for (int i = 0; i < 3; ++i) batch.append(test::noise_image(40 + static_cast<std::uint64_t>(i)), test::unit_stats());
  const std::vector<int> labels{1, 4, 7};
  const auto full = finite_diff_check(model, batch, labels);
  KeptIndices kept;
  for (std::uint64_t s = 0; s < 3; ++s) kept.push_back(random_mask(16, 8, s).kept_indices());
  const auto half = finite_diff_check(model, batch, labels, kept);
  return {full.max_relative_error <= 1e-4 && half.max_relative_error <= 1e-4,
          "full " + fmt("%.2e", full.max_relative_error) + ", 50% masked " + fmt("%.2e", half.max_relative_error)};
}

Outcome warmup_schedule() {
  bool pass = true;
  double worst_mid = 0.0;
  for (double target : {0.143, 0.271, 0.386, 0.488}) {
    for (int tw : {1, 5, 30}) {
      pass = pass && warmup_sparsity(0.0, tw, target) == 0.0 && warmup_sparsity(tw, tw, target) == target;
      worst_mid = std::max(worst_mid, std::abs(warmup_sparsity(tw / 2.0, tw, target) - target / 2.0));
      double prev = 0.0;
      for (int i = 0; i <= 100000; ++i) {
        const double s = warmup_sparsity(tw * i / 100000.0, tw, target);
        pass = pass && s >= prev;
        prev = s;
      }
    }
  }
  return {pass && worst_mid <= 1e-12, "endpoints exact, monotone, midpoint error " + fmt("%.1e", worst_mid)};
}

Outcome mask_contracts() {
  bool pass = true;
  // occlusion
  Image img(32, 32, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(1 + i % 250);
  for (int patch : {4, 8}) {
    const int n = (32 / patch) * (32 / patch);
    for (int kept : {1, n / 2, n - 1}) {
      const auto out = occlude_patches(img, random_mask(n, kept, static_cast<std::uint64_t>(kept)), patch);
      const auto zeros = std::count(out.pixels.begin(), out.pixels.end(), std::uint8_t{0});
      pass = pass && out.height == 32 && out.width == 32 && out.channels == 3 &&
             zeros == static_cast<long>(n - kept) * patch * patch * 3;
    }
  }
  // removal
  const auto model = build_model(test::tiny_vit(2, 16, 2, 4), 9);
  ImageBatch<float> batch;
  for (int i = 0; i < 3; ++i) batch.append(test::noise_image(70 + static_cast<std::uint64_t>(i)), test::unit_stats());
  KeptIndices kept{random_mask(64, 5, 1).kept_indices(), random_mask(64, 32, 2).kept_indices(),
                   random_mask(64, 64, 3).kept_indices()};
  const auto r = vit_forward(model.config, model.params, batch, kept, VitOptions{}, static_cast<VitTape<float>*>(nullptr));
  pass = pass && r.offsets == std::vector<int>{0, 6, 39, 104};
  // all-ones
  const std::vector<PatchMask> ones(3, PatchMask::all_ones(8));
  const double diff = (predict(model, batch) - forward_subset(model, batch, ones)).cwiseAbs().maxCoeff();
  pass = pass && diff <= 1e-6;
  return {pass, "occlusion counts exact, sequence lengths kept+1, all-ones max diff " + fmt("%.1e", diff)};
}

Outcome verdict_arithmetic() {
  EvalMatrix m;
  m.pretrain_dense = 83.3;
  m.lt_sparse = 82.4;
  m.rc_sparse = 81.9;
  const auto v = verdict(m, 1.0, 0.5);
  EvalMatrix eq = m;
  eq.rc_sparse = eq.lt_sparse;
  const auto e = verdict(eq, 1.0, 0.5);
  return {v.is_winning && !e.clear_advantage, std::string("LV-ViT column winning=") + (v.is_winning ? "yes" : "no") +
                                                  ", equal LT/RC clear_advantage=" + (e.clear_advantage ? "yes" : "no")};
}

// ---- long criteria ----

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.1f", x);
  return s;
}

TrainContext progress(const std::string& tag) {
  TrainContext ctx;
  ctx.resume = true;
  ctx.on_epoch = [tag](const EpochRecord& r) {
    log(tag + " epoch " + std::to_string(r.epoch) + " loss " + fmt("%.3f", r.loss) + " train acc " +
        fmt("%.1f", r.train_accuracy));
  };
  return ctx;
}

TicketStore cached_store(const fs::path& path, const TicketSelector& selector, const DatasetHandle& data) {
  TicketStore store = fs::exists(path) ? TicketStore::load(path) : TicketStore{};
  MaterializeOptions mo;
  mo.path = path;
  materialize(store, selector, data, mo);
  return store;
}

Outcome desk_hypothesis(const Options& o) {
  const auto train_set = builtin("train", o.c6_train);
  const auto test_set = builtin("test", 0);
  const auto config = preset("tiny-desk");
  std::vector<double> lt, rc, full;
  for (int s = 1; s <= o.seeds; ++s) {
    const fs::path dir = fs::path(o.work) / "desk" / ("e" + std::to_string(o.c6_epochs)) / ("seed-" + std::to_string(s));
    const auto seed = static_cast<std::uint64_t>(s);
    RunConfig run;
    run.epochs = o.c6_epochs;
    run.seed = seed;
    run.optim.lr = o.c6_lr;
    run.optim.lr_warmup_epochs = 2;
    run.checkpoint_every = 5;
    run.selector.stage_depths = default_stage_depths(config.depth);
    run.selector.keep_rate = 0.8;

    run.path = TrainPath::full;
    run.run_dir = (dir / "full").string();
    const auto full_model = train(build_model(config, seed), train_set, run, progress("full s" + std::to_string(s))).first;

    TicketSelector selector(full_model, run.selector, train_set.stats);
    const auto train_store = cached_store(dir / "train.tickets", selector, train_set);
    const auto test_store = cached_store(dir / "test.tickets", selector, test_set);

    auto lt_ctx = progress("lt s" + std::to_string(s));
    lt_ctx.store = &train_store;
    lt_ctx.selector_fingerprint = selector.fingerprint();
    run.path = TrainPath::lt;
    run.run_dir = (dir / "lt").string();
    const auto lt_model = train(build_model(config, seed), train_set, run, lt_ctx).first;

    auto rc_ctx = progress("rc s" + std::to_string(s));
    rc_ctx.store = &train_store;
    run.path = TrainPath::rc;
    run.run_dir = (dir / "rc").string();
    const auto rc_model = train(build_model(config, seed), train_set, run, rc_ctx).first;

    const auto m = build_matrix({&lt_model, &rc_model, &full_model}, test_set, test_store);
    lt.push_back(*m.lt_sparse);
    rc.push_back(*m.rc_sparse);
    full.push_back(*m.pretrain_dense);
    log("seed " + std::to_string(s) + "\n" + render_matrix(m));
  }
  const double adv = mean(lt) - mean(rc), gap = mean(full) - mean(lt);
  return {adv >= 1.0 && gap <= 3.0, "LT " + list(lt) + " RC " + list(rc) + " FULL " + list(full) + "; LT-RC " +
                                        fmt("%+.2f", adv) + " pp, FULL-LT " + fmt("%+.2f", gap) + " pp"};
}

struct LthPair {
  double lth = 0.0, rr = 0.0;
};

LthPair weight_lth_pair(const Options& o, const std::string& tag, const std::string& model_name, PruneScope scope,
                        double sparsity, int epochs, double lr, std::uint64_t seed, const DatasetHandle& train_set,
                        const DatasetHandle& test_set) {
  const auto config = preset(model_name);
  const fs::path dir = fs::path(o.work) / tag / ("seed-" + std::to_string(seed));
  RunConfig run;
  run.epochs = epochs;
  run.seed = seed;
  run.optim.lr = lr;
  run.optim.lr_warmup_epochs = 1;
  if (config.arch == ArchKind::cnn) {
    run.optim.kind = OptimizerKind::sgd;
    run.optim.weight_decay = 5e-4;
  }
  run.checkpoint_every = 1;
  run.run_dir = (dir / "pretrain").string();
  const auto pretrained = train(build_model(config, seed), train_set, run, progress(tag + " pretrain s" + std::to_string(seed))).first;

  const auto mask = magnitude_prune(pretrained, scope, sparsity);
  const RewindSpec rewind{o.rewind_epoch, {}};
  run.checkpoint_every = 5;
  run.run_dir = (dir / "lth").string();
  const auto lth = train_masked(rewind_state((dir / "pretrain").string(), rewind), mask, train_set, run, rewind, true).first;
  auto rr_init = random_reinit(config, seed);
  rr_init.epoch = o.rewind_epoch;
  run.run_dir = (dir / "rr").string();
  const auto rr = train_masked(std::move(rr_init), mask, train_set, run, rewind, true).first;
  LthPair p{evaluate(lth, test_set, EvalMode::dense), evaluate(rr, test_set, EvalMode::dense)};
  log(tag + " seed " + std::to_string(seed) + " sparsity " + fmt("%.1f%%", 100 * mask.achieved_sparsity()) + " LTH " +
      fmt("%.2f", p.lth) + " RR " + fmt("%.2f", p.rr));
  return p;
}

Outcome weight_lth_check(const Options& o) {
  const auto cnn_train = builtin("train", o.c7_cnn_train);
  const auto vit_train = builtin("train", o.c7_vit_train);
  const auto test_set = builtin("test", 0);
  std::vector<double> cnn_diff, vit_diff;
  for (int s = 1; s <= o.seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const auto c = weight_lth_pair(o, "weight-cnn", "cnn-desk", PruneScope::conv_all, o.c7_cnn_sparsity,
                                   o.c7_cnn_epochs, o.c7_cnn_lr, seed, cnn_train, test_set);
    cnn_diff.push_back(c.lth - c.rr);
    const auto v = weight_lth_pair(o, "weight-vit", o.c7_vit_model, PruneScope::msa_mlp, o.c7_vit_sparsity,
                                   o.c7_vit_epochs, o.c7_vit_lr, seed, vit_train, test_set);
    vit_diff.push_back(v.lth - v.rr);
  }
  const double cnn = mean(cnn_diff), vit = mean(vit_diff);
  return {cnn >= 1.0 && std::abs(vit) <= 1.0, "CNN LTH-RR " + list(cnn_diff) + " mean " + fmt("%+.2f", cnn) +
                                                  " pp; ViT LTH-RR " + list(vit_diff) + " mean " + fmt("%+.2f", vit) +
                                                  " pp"};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"acceptance criteria"};
  app.add_flag("--long", o.long_run, "also run the desk-scale training criteria");
  app.add_option("--work", o.work, "run directory for the long criteria");
  app.add_option("--seeds", o.seeds)->check(CLI::PositiveNumber);
  app.add_option("--desk-epochs", o.c6_epochs);
  app.add_option("--desk-train", o.c6_train);
  app.add_option("--desk-lr", o.c6_lr);
  app.add_option("--cnn-train", o.c7_cnn_train);
  app.add_option("--vit-train", o.c7_vit_train);
  app.add_option("--cnn-epochs", o.c7_cnn_epochs);
  app.add_option("--cnn-lr", o.c7_cnn_lr);
  app.add_option("--cnn-sparsity", o.c7_cnn_sparsity);
  app.add_option("--vit-epochs", o.c7_vit_epochs);
  app.add_option("--vit-lr", o.c7_vit_lr);
  app.add_option("--vit-sparsity", o.c7_vit_sparsity);
  app.add_option("--vit-model", o.c7_vit_model);
  app.add_option("--rewind-epoch", o.rewind_epoch);
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const fs::path scratch = fs::temp_directory_path() / ("dlth-acceptance-" + std::to_string(::getpid()));
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"sparsity arithmetic", sparsity_arithmetic},
      {"MACs model", macs_model},
      {"selection oracle", selection_oracle},
      {"fixed topology", [&] { return fixed_topology(scratch); }},
      {"gradient integrity", gradient_integrity},
      {"desk-scale LT vs RC vs FULL", [&] { return desk_hypothesis(o); }},
      {"weight-level LTH vs RR", [&] { return weight_lth_check(o); }},
      {"warmup schedule", warmup_schedule},
      {"mask contracts", mask_contracts},
      {"verdict arithmetic", verdict_arithmetic},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    if (!only.empty() && std::find(only.begin(), only.end(), static_cast<int>(i + 1)) == only.end()) continue;
    const bool is_long = i == 5 || i == 6;
    if (is_long && !o.long_run) {
      std::printf("criterion %2zu SKIP  %s (needs --long)\n", i + 1, name.c_str());
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2zu %s  %s: %s [%.1fs]\n", i + 1, r.pass ? "PASS" : "FAIL", name.c_str(), r.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !r.pass;
  }
  return failed == 0 ? 0 : 1;
}
