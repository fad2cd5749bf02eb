#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dlth/data.hpp"
#include "dlth/digest.hpp"
#include "dlth/error.hpp"
#include "dlth/eval.hpp"
#include "dlth/model/checkpoint.hpp"
#include "dlth/model/macs.hpp"
#include "dlth/selector.hpp"
#include "dlth/ticket_store.hpp"
#include "dlth/trainer.hpp"
#include "dlth/visualize.hpp"
#include "dlth/weight_lth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dlth;

namespace {

// Relative paths land under $DLTH_ARTIFACT_ROOT when it is set.
fs::path resolve(const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  if (path.is_absolute()) return path.lexically_normal();
  if (const char* root = std::getenv("DLTH_ARTIFACT_ROOT"); root != nullptr && *root != '\0')
    return (fs::absolute(root) / path).lexically_normal();
  return fs::absolute(path).lexically_normal();
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      require(used == item.size(), ErrorKind::usage, "bad integer '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorKind::usage, "bad integer list '" + text + "'");
    }
  }
  return out;
}

// Everything a subcommand read and wrote; becomes the manifest beside its output.
struct Record {
  std::vector<std::string> argv;
  std::string command;
  json config = json::object();
  std::map<std::string, fs::path> inputs;
  fs::path out;
  bool out_is_dir = true;
  std::vector<fs::path> extra_outputs;  // written outside `out` (visualize)
};

Record g_record;

fs::path manifest_path(const Record& r) {
  return r.out_is_dir ? r.out / "manifest.json" : fs::path(r.out.string() + ".manifest.json");
}

bool excluded(const fs::path& p, const Record& r) {
  if (p == manifest_path(r)) return true;
  // Ticket sidecars carry a creation timestamp.
  return p.extension() == ".json" && fs::path(p).replace_extension().extension() == ".tickets";
}

std::string role(const fs::path& p, const fs::path& out) {
  const auto s = p.string(), o = out.string();
  return s.starts_with(o) ? "<out>" + s.substr(o.size()) : s;
}

json output_digests(const Record& r) {
  json outs = json::object();
  std::vector<fs::path> files;
  if (r.out_is_dir) {
    if (fs::is_directory(r.out))
      for (const auto& e : fs::recursive_directory_iterator(r.out))
        if (e.is_regular_file()) files.push_back(e.path());
  } else if (fs::is_regular_file(r.out)) {
    files.push_back(r.out);
  }
  for (const auto& p : r.extra_outputs) files.push_back(p);
  std::sort(files.begin(), files.end());
  for (const auto& p : files)
    if (!excluded(p, r)) outs[role(p, r.out)] = sha256_file(p);
  return outs;
}

void write_manifest(const Record& r) {
  if (r.out.empty()) return;
  json inputs = json::object();
  for (const auto& [name, path] : r.inputs) {
    json entry = {{"path", path.string()}};
    if (fs::is_regular_file(path)) entry["sha256"] = sha256_file(path);
    inputs[name] = entry;
  }
  json m = {{"command", r.command},
            {"argv", r.argv},
            {"cwd", fs::current_path().string()},
            {"artifact_root", std::getenv("DLTH_ARTIFACT_ROOT") ? std::getenv("DLTH_ARTIFACT_ROOT") : ""},
            {"created", now_utc()},
            {"config", r.config},
            {"inputs", inputs},
            {"out", r.out.string()},
            {"outputs", output_digests(r)}};
  const auto path = manifest_path(r);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  atomic_write(path, m.dump(2) + "\n");
}

struct DataOptions {
  std::string kind = "builtin";
  std::string path;
  std::string split;
  int count = 0;
  std::uint64_t seed = 2024;
  int limit = 0;

  void add(CLI::App* app, const std::string& default_split) {
    split = default_split;
    app->add_option("--data", kind, "builtin | folder | cifar10")->capture_default_str();
    app->add_option("--data-path", path, "dataset root for folder/cifar10");
    app->add_option("--split", split, "dataset split")->capture_default_str();
    app->add_option("--count", count, "builtin image count (0 = split default)");
    app->add_option("--data-seed", seed, "builtin generator seed")->capture_default_str();
    app->add_option("--limit", limit, "keep only the first N ids");
  }

  DatasetHandle open() const {
    DatasetSpec spec;
    spec.kind = parse_source(kind);
    if (!path.empty()) {
      spec.path = resolve(path).string();
      g_record.inputs["data"] = spec.path;
    }
    require(spec.kind == SourceKind::builtin || !spec.path.empty(), ErrorKind::usage,
            "--data-path is required for " + kind);
    spec.split = split;
    spec.count = count;
    spec.seed = seed;
    spec.limit = limit;
    auto data = open_dataset(spec);
    g_record.config["data"] = spec;
    g_record.config["data"]["digest"] = data.digest;
    return data;
  }
};

ModelState load_model(const std::string& path, const std::string& name) {
  const auto p = resolve(path);
  g_record.inputs[name] = p;
  auto model = load_checkpoint(p).model;
  g_record.config[name + "_digest"] = model.digest();
  return model;
}

TicketStore load_store(const std::string& path, const std::string& name = "store") {
  const auto p = resolve(path);
  g_record.inputs[name] = p;
  auto store = TicketStore::load(p);
  g_record.config[name + "_digest"] = store.digest();
  return store;
}

void print_table_line(const std::string& s) { std::fputs(s.c_str(), stdout); }

// ---- train / pretrain ----

struct TrainOptions {
  std::string path = "full";
  std::string model = "tiny-desk";
  std::string resume_from;
  std::uint64_t init_seed = 1;
  RunConfig run;
  std::string optimizer = "adamw";
  double keep_rate = 0.8;
  std::string stages;
  std::string input_mode = "remove";
  bool no_augment = false;
  bool resume = false;
  std::string store, selector, teacher, out;
  DataOptions data;
};

void add_train_options(CLI::App* app, TrainOptions& o, bool with_path) {
  if (with_path) app->add_option("--path", o.path, "lt | rc | full")->required();
  app->add_option("--model", o.model, "preset name")->capture_default_str();
  app->add_option("--init", o.resume_from, "start from this checkpoint instead of a fresh model");
  app->add_option("--init-seed", o.init_seed, "model initialization seed")->capture_default_str();
  app->add_option("--seed", o.run.seed, "data order, augmentation and random-mask seed")->capture_default_str();
  app->add_option("--epochs", o.run.epochs)->capture_default_str();
  app->add_option("--warmup-epochs", o.run.warmup_epochs, "sparsity warmup epochs")->capture_default_str();
  app->add_option("--optimizer", o.optimizer)->capture_default_str();
  app->add_option("--lr", o.run.optim.lr)->capture_default_str();
  app->add_option("--min-lr", o.run.optim.min_lr)->capture_default_str();
  app->add_option("--weight-decay", o.run.optim.weight_decay)->capture_default_str();
  app->add_option("--momentum", o.run.optim.momentum)->capture_default_str();
  app->add_option("--batch-size", o.run.optim.batch_size)->capture_default_str();
  app->add_option("--lr-warmup-epochs", o.run.optim.lr_warmup_epochs)->capture_default_str();
  app->add_option("--grad-clip", o.run.optim.grad_clip)->capture_default_str();
  app->add_option("--keep-rate", o.keep_rate, "per-stage keep rate")->capture_default_str();
  app->add_option("--stages", o.stages, "selection depths, comma separated");
  app->add_option("--input-mode", o.input_mode, "remove | occlude")->capture_default_str();
  app->add_flag("--rc-resample", o.run.rc_resample, "fresh random masks every epoch");
  app->add_flag("--no-augment", o.no_augment);
  app->add_option("--checkpoint-every", o.run.checkpoint_every)->capture_default_str();
  app->add_option("--token-label-weight", o.run.token_label_weight)->capture_default_str();
  app->add_option("--teacher", o.teacher, "checkpoint producing per-token labels");
  app->add_option("--store", o.store, "ticket store (.tickets)");
  app->add_option("--selector", o.selector, "selector checkpoint the store was built from");
  app->add_flag("--resume", o.resume, "continue from the newest checkpoint in --out");
  app->add_option("--out", o.out, "run directory")->required();
  o.data.add(app, "train");
}

int run_train(TrainOptions& o, CLI::App* app) {
  auto& run = o.run;
  run.path = parse_path(o.path);
  run.optim.kind = parse_optimizer(o.optimizer);
  run.input_mode = parse_input_mode(o.input_mode);
  run.augment = !o.no_augment;
  const fs::path out = resolve(o.out);
  run.run_dir = out.string();
  g_record.out = out;

  if (run.path == TrainPath::lt) {
    require(!o.store.empty(), ErrorKind::usage, "train --path lt needs --store");
    require(!o.selector.empty(), ErrorKind::usage, "train --path lt needs --selector");
  }
  require(o.teacher.empty() == (run.token_label_weight == 0.0), ErrorKind::usage,
          "--teacher and --token-label-weight go together");

  ModelState model = o.resume_from.empty() ? build_model(preset(o.model), o.init_seed) : load_model(o.resume_from, "init");
  const auto data = o.data.open();

  std::optional<TicketStore> store;
  TrainContext ctx;
  if (!o.store.empty()) {
    store = load_store(o.store);
    ctx.store = &*store;
    // Selection settings follow the store unless given explicitly.
    run.selector = store->manifest().selector;
  }
  if (!o.stages.empty()) run.selector.stage_depths = parse_int_list(o.stages);
  else if (!store) run.selector.stage_depths = default_stage_depths(model.config.depth);
  if (app->count("--keep-rate") > 0 || !store) run.selector.keep_rate = o.keep_rate;
  if (!o.selector.empty()) {
    const auto p = resolve(o.selector);
    g_record.inputs["selector"] = p;
    ctx.selector_fingerprint = load_checkpoint(p).model.digest();
    g_record.config["selector_digest"] = ctx.selector_fingerprint;
  }
  std::vector<TokenLabelSet> token_labels;
  if (!o.teacher.empty()) {
    token_labels = teacher_token_labels(load_model(o.teacher, "teacher"), data);
    ctx.token_labels = &token_labels;
  }
  ctx.resume = o.resume;
  ctx.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %d  loss %.4f  train-acc %.2f  sparsity %.3f\n", r.epoch, r.loss, r.train_accuracy,
                r.sparsity);
    std::fflush(stdout);
  };
  g_record.config["model"] = model.config;
  g_record.config["run"] = run;
  g_record.config["init_seed"] = o.init_seed;

  fs::create_directories(out);
  auto [trained, history] = train(std::move(model), data, run, ctx);
  const auto digest = save_checkpoint(out / "final.ckpt", trained);
  std::printf("final checkpoint %s (%s)\n", (out / "final.ckpt").c_str(), digest.c_str());
  return 0;
}

// ---- select ----

struct SelectOptions {
  std::string selector, out, stages;
  double keep_rate = 0.8;
  bool resume = false;
  int flush_every = 256, batch_size = 32;
  DataOptions data;
};

int run_select(SelectOptions& o) {
  const fs::path out = resolve(o.out);
  g_record.out = out;
  g_record.out_is_dir = false;
  const auto model = load_model(o.selector, "selector");
  SelectorConfig config;
  config.keep_rate = o.keep_rate;
  config.stage_depths = o.stages.empty() ? default_stage_depths(model.config.depth) : parse_int_list(o.stages);
  config.validate(model.config.depth);
  const auto data = o.data.open();
  TicketSelector selector(model, config, data.stats);

  TicketStore store;
  if (o.resume && fs::exists(out)) store = TicketStore::load(out);
  else if (fs::exists(out)) fs::remove(out);
  MaterializeOptions mo;
  mo.path = out;
  mo.flush_every = o.flush_every;
  mo.batch_size = o.batch_size;
  const int added = materialize(store, selector, data, mo);
  store.save(out);
  g_record.config["selector"] = config;

  const auto counts = stage_keep_counts(model.config.num_patches(), config);
  std::printf("keep rate %.4g over %d stages at depths", config.keep_rate, config.stages());
  for (int d : config.stage_depths) std::printf(" %d", d);
  std::printf("\nkept per stage");
  for (int k : counts) std::printf(" %d", k);
  std::printf(" of %d\ntarget sparsity %.1f%%\n", model.config.num_patches(), 100.0 * target_sparsity(config));
  std::printf("%zu records (%d new) -> %s\n", store.size(), added, out.c_str());
  return 0;
}

// ---- eval ----

struct EvalOptions {
  std::string model, lt, rc, pretrain, store, mode = "dense", input_mode = "remove", out;
  double epsilon = 0.5, delta = 1.0;
  DataOptions data;
};

int run_eval(EvalOptions& o) {
  const bool matrix = !o.lt.empty() || !o.rc.empty() || !o.pretrain.empty();
  require(matrix != !o.model.empty(), ErrorKind::usage, "give either --model or --lt/--rc/--pretrain");
  if (!o.out.empty()) {
    g_record.out = resolve(o.out);
    g_record.out_is_dir = false;
  }
  const auto input_mode = parse_input_mode(o.input_mode);
  const auto test = o.data.open();
  std::optional<TicketStore> store;
  if (!o.store.empty()) store = load_store(o.store);

  std::string text;
  if (!matrix) {
    const auto mode = o.mode == "sparse" ? EvalMode::sparse : EvalMode::dense;
    require(o.mode == "sparse" || o.mode == "dense", ErrorKind::usage, "--mode is dense or sparse");
    require(mode == EvalMode::dense || store.has_value(), ErrorKind::usage, "sparse evaluation needs --store");
    const auto model = load_model(o.model, "model");
    const double acc = evaluate(model, test, mode, store ? &*store : nullptr, input_mode);
    std::ostringstream ss;
    ss << "mode,accuracy\n" << to_string(mode) << "," << format_tenths(acc) << "\n";
    text = ss.str();
    std::printf("%s accuracy %.2f%% on %d images\n", to_string(mode).c_str(), acc, test.size());
  } else {
    require(store.has_value(), ErrorKind::usage, "matrix evaluation needs --store");
    std::optional<ModelState> lt, rc, pre;
    if (!o.lt.empty()) lt = load_model(o.lt, "lt");
    if (!o.rc.empty()) rc = load_model(o.rc, "rc");
    if (!o.pretrain.empty()) pre = load_model(o.pretrain, "pretrain");
    MatrixModels models{lt ? &*lt : nullptr, rc ? &*rc : nullptr, pre ? &*pre : nullptr};
    const auto m = build_matrix(models, test, *store, input_mode);
    print_table_line(render_matrix(m));
    text = matrix_csv(m);
    if (lt && rc && pre) {
      const auto v = verdict(m, o.epsilon, o.delta);
      print_table_line(render_verdict(v));
    }
  }
  g_record.config["eval"] = {{"input_mode", o.input_mode}, {"epsilon", o.epsilon}, {"delta", o.delta}};
  if (!o.out.empty()) atomic_write(g_record.out, text);
  return 0;
}

// ---- macs ----

struct MacsOptions {
  std::string model = "deit-small-like", ckpt, store;
  int tokens = 0;
};

int run_macs(MacsOptions& o) {
  const ModelConfig config = o.ckpt.empty() ? preset(o.model) : load_model(o.ckpt, "model").config;
  const int full = config.num_patches() + 1;
  if (!o.store.empty()) {
    const auto r = macs_report(config, load_store(o.store));
    std::printf("dense %.3e  sparse %.3e  ratio %.3f\n", r.dense, r.sparse, r.ratio);
    return 0;
  }
  const int n = o.tokens > 0 ? o.tokens : full;
  require(n >= 1 && n <= full, ErrorKind::usage, "--tokens must be in [1, " + std::to_string(full) + "]");
  const auto macs = count_macs(config, n);
  std::printf("%d tokens: %.3e MACs (%.1fG)\n", n, static_cast<double>(macs), macs / 1e9);
  return 0;
}

// ---- visualize ----

struct VisOptions {
  std::string selector, image, id, stages, out;
  double keep_rate = 0.8;
  int scale = 4;
  bool occlusion = false;
  DataOptions data;
};

int run_visualize(VisOptions& o, CLI::App* app) {
  const fs::path out = resolve(o.out);
  g_record.out = out;
  g_record.out_is_dir = false;
  const auto model = load_model(o.selector, "selector");
  SelectorConfig config;
  config.keep_rate = o.keep_rate;
  config.stage_depths = o.stages.empty() ? default_stage_depths(model.config.depth) : parse_int_list(o.stages);
  config.validate(model.config.depth);

  Image image;
  NormStats stats;
  if (!o.image.empty()) {
    const auto p = resolve(o.image);
    g_record.inputs["image"] = p;
    image = read_pnm(p);
    const bool explicit_data = app->count("--data") > 0;
    stats = explicit_data ? o.data.open().stats : NormStats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  } else {
    const auto data = o.data.open();
    const int index = o.id.empty() ? 0 : data.index_of(o.id);
    require(index >= 0, ErrorKind::usage, "no image with id '" + o.id + "'");
    image = data.images[static_cast<std::size_t>(index)];
    stats = data.stats;
    g_record.config["image_id"] = data.ids[static_cast<std::size_t>(index)];
  }
  require(o.scale >= 1, ErrorKind::usage, "--scale must be positive");
  TicketSelector selector(model, config, stats);
  const auto sel = selector.select(image);
  auto stages = render_stages(image, sel.stage_kept, model.config.patch_size, o.occlusion);
  for (auto& s : stages) s = upscale(s, o.scale);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  g_record.extra_outputs = write_stages(out, upscale(image, o.scale), stages);
  g_record.config["selector"] = config;
  for (const auto& p : g_record.extra_outputs) std::printf("%s\n", p.c_str());
  return 0;
}

// ---- weight-lth ----

struct LthOptions {
  std::string pretrain, scope = "msa+mlp", init = "lth", out, optimizer = "adamw";
  double sparsity = 0.5;
  int rewind_epoch = -1;
  std::uint64_t seed = 0;
  RunConfig run;
  DataOptions data, test;
};

int run_weight_lth(LthOptions& o) {
  const fs::path out = resolve(o.out);
  g_record.out = out;
  const fs::path pre = resolve(o.pretrain);
  g_record.inputs["pretrain"] = pre;
  const auto final_model = load_model((pre / "final.ckpt").string(), "pretrained");
  const auto scope = parse_scope(o.scope);
  auto& run = o.run;
  run.seed = o.seed;
  run.optim.kind = parse_optimizer(o.optimizer);
  run.run_dir = out.string();
  const int k = o.rewind_epoch >= 0 ? o.rewind_epoch : default_rewind_epoch(run.epochs);
  const RewindSpec rewind{k, {}};

  InitKind kind;
  if (o.init == "lth") kind = InitKind::lth;
  else if (o.init == "rr") kind = InitKind::rr;
  else if (o.init == "rm") kind = InitKind::rm;
  else fail(ErrorKind::usage, "--init is lth, rr or rm");

  const auto magnitude = magnitude_prune(final_model, scope, o.sparsity);
  const WeightMask mask =
      kind == InitKind::rm ? random_weight_mask(final_model.config, scope, o.sparsity, combine_seed(o.seed, 0x726d)) : magnitude;
  ModelState init;
  if (kind == InitKind::rr) {
    init = random_reinit(final_model.config, o.seed);
    init.epoch = k;
  } else {
    init = rewind_state(pre.string(), rewind);
  }
  const auto data = o.data.open();
  const auto test = o.test.open();
  fs::create_directories(out);
  auto [trained, history] = train_masked(std::move(init), mask, data, run, rewind);
  save_checkpoint(out / "final.ckpt", trained);
  const double acc = evaluate(trained, test, EvalMode::dense);

  // Runs that share mask source, scope, sparsity, schedule and seed pair up.
  RunConfig key = run;
  key.run_dir.clear();
  Sha256 h;
  h.update(final_model.digest()).update(to_string(scope)).update(json(key).dump());
  h.update_pod(o.sparsity).update_pod(k);
  json result = {{"kind", to_string(kind)},
                 {"scope", to_string(scope)},
                 {"sparsity", 100.0 * mask.achieved_sparsity()},
                 {"accuracy", acc},
                 {"rewound", k > 0},
                 {"pairing", h.hex()}};
  atomic_write(out / "result.json", result.dump(2) + "\n");
  g_record.config["run"] = run;
  g_record.config["weight_lth"] = {{"scope", to_string(scope)}, {"target", o.sparsity}, {"rewind_epoch", k},
                                   {"init", o.init}};
  std::printf("%s %s sparsity %.1f%% accuracy %.2f%%\n", to_string(kind).c_str(), to_string(scope).c_str(),
              100.0 * mask.achieved_sparsity(), acc);
  return 0;
}

struct ReportOptions {
  std::vector<std::string> runs;
  std::string out;
};

int run_lth_report(ReportOptions& o) {
  std::vector<LthRun> runs;
  for (const auto& r : o.runs) {
    const auto p = resolve(r);
    const auto file = fs::is_directory(p) ? p / "result.json" : p;
    g_record.inputs["run:" + r] = file;
    const auto j = json::parse(read_file(file));
    LthRun run;
    const auto kind = j.at("kind").get<std::string>();
    run.kind = kind == "lth" ? InitKind::lth : kind == "rr" ? InitKind::rr : InitKind::rm;
    run.scope = parse_scope(j.at("scope").get<std::string>());
    run.sparsity = j.at("sparsity").get<double>();
    run.accuracy = j.at("accuracy").get<double>();
    run.rewound = j.at("rewound").get<bool>();
    run.pairing = j.at("pairing").get<std::string>();
    runs.push_back(run);
  }
  const auto rows = lth_report(runs);
  print_table_line(render_lth_table(rows));
  if (!o.out.empty()) {
    g_record.out = resolve(o.out);
    g_record.out_is_dir = false;
    atomic_write(g_record.out, lth_csv(rows));
  }
  return 0;
}

// ---- replay ----

int dispatch(std::vector<std::string> args);

int run_replay(const std::string& manifest_file, const std::string& new_out) {
  const auto m = json::parse(read_file(resolve(manifest_file)));
  for (const auto& [name, entry] : m.at("inputs").items()) {
    if (!entry.contains("sha256")) continue;
    const fs::path p = entry.at("path").get<std::string>();
    require(fs::is_regular_file(p) && sha256_file(p) == entry.at("sha256").get<std::string>(), ErrorKind::provenance,
            "input " + name + " (" + p.string() + ") changed since the recorded run");
  }
  auto argv = m.at("argv").get<std::vector<std::string>>();
  const fs::path target = resolve(new_out);
  bool replaced = false;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--out" && i + 1 < argv.size()) {
      argv[i + 1] = target.string();
      replaced = true;
    } else if (argv[i].starts_with("--out=")) {
      argv[i] = "--out=" + target.string();
      replaced = true;
    }
  }
  std::erase(argv, std::string("--resume"));  // a replay always starts from scratch
  require(replaced, ErrorKind::usage, "recorded command has no --out to redirect");

  // Same working directory and artifact root as the original run.
  const auto cwd = fs::current_path();
  fs::current_path(m.at("cwd").get<std::string>());
  const auto root = m.at("artifact_root").get<std::string>();
  if (root.empty()) unsetenv("DLTH_ARTIFACT_ROOT");
  else setenv("DLTH_ARTIFACT_ROOT", root.c_str(), 1);
  const int status = dispatch(argv);
  fs::current_path(cwd);
  if (status != 0) return status;

  const auto& before = m.at("outputs");
  const auto after = output_digests(g_record);
  int same = 0;
  std::vector<std::string> diffs;
  for (const auto& [name, digest] : before.items()) {
    if (after.contains(name) && after[name] == digest) ++same;
    else diffs.push_back(name);
  }
  for (const auto& [name, digest] : after.items())
    if (!before.contains(name)) diffs.push_back(name + " (new)");
  for (const auto& d : diffs) std::fprintf(stderr, "replay: differs: %s\n", d.c_str());
  std::printf("replay: %d of %zu artifacts identical\n", same, before.size());
  return diffs.empty() ? 0 : 1;
}

int dispatch(std::vector<std::string> args) {
  g_record = Record{};
  g_record.argv = args;

  CLI::App app{"Data-level winning tickets for vision transformers"};
  app.set_config("--config", "", "INI/TOML file; [subcommand] sections, flags override")->check(CLI::ExistingFile);
  app.require_subcommand(1);

  TrainOptions pretrain_o, train_o;
  auto* pretrain = app.add_subcommand("pretrain", "train a dense model on full images (selector source)");
  add_train_options(pretrain, pretrain_o, false);
  auto* train_cmd = app.add_subcommand("train", "train along the lt, rc or full path");
  add_train_options(train_cmd, train_o, true);

  SelectOptions select_o;
  auto* select = app.add_subcommand("select", "materialize winning tickets for a dataset");
  select->add_option("--selector", select_o.selector, "pretrained checkpoint")->required();
  select->add_option("--keep-rate", select_o.keep_rate)->capture_default_str();
  select->add_option("--stages", select_o.stages, "selection depths, comma separated");
  select->add_option("--flush-every", select_o.flush_every)->capture_default_str();
  select->add_option("--batch-size", select_o.batch_size)->capture_default_str();
  select->add_flag("--resume", select_o.resume, "keep records already in --out");
  select->add_option("--out", select_o.out, "ticket store path")->required();
  select_o.data.add(select, "train");

  LthOptions lth_o;
  ReportOptions report_o;
  auto* lth = app.add_subcommand("weight-lth", "weight-level lottery ticket runs");
  lth->require_subcommand(1);
  auto* lth_run = lth->add_subcommand("run", "prune, reinitialize and retrain");
  lth_run->add_option("--pretrain", lth_o.pretrain, "dense run directory with per-epoch checkpoints")->required();
  lth_run->add_option("--scope", lth_o.scope, "msa | msa+mlp | conv")->capture_default_str();
  lth_run->add_option("--sparsity", lth_o.sparsity, "fraction of all parameters")->capture_default_str();
  lth_run->add_option("--init", lth_o.init, "lth | rr | rm")->capture_default_str();
  lth_run->add_option("--rewind-epoch", lth_o.rewind_epoch, "default ceil(0.05 * epochs)");
  lth_run->add_option("--seed", lth_o.seed)->capture_default_str();
  lth_run->add_option("--epochs", lth_o.run.epochs)->capture_default_str();
  lth_run->add_option("--optimizer", lth_o.optimizer)->capture_default_str();
  lth_run->add_option("--lr", lth_o.run.optim.lr)->capture_default_str();
  lth_run->add_option("--weight-decay", lth_o.run.optim.weight_decay)->capture_default_str();
  lth_run->add_option("--batch-size", lth_o.run.optim.batch_size)->capture_default_str();
  lth_run->add_option("--lr-warmup-epochs", lth_o.run.optim.lr_warmup_epochs)->capture_default_str();
  lth_run->add_option("--checkpoint-every", lth_o.run.checkpoint_every)->capture_default_str();
  lth_run->add_option("--out", lth_o.out, "run directory")->required();
  lth_o.data.add(lth_run, "train");
  lth_o.test.split = "test";
  lth_run->add_option("--test-split", lth_o.test.split)->capture_default_str();
  auto* lth_report_cmd = lth->add_subcommand("report", "pair LTH with RR/RM runs into a table");
  lth_report_cmd->add_option("runs", report_o.runs, "run directories or result.json files")->required();
  lth_report_cmd->add_option("--out", report_o.out, "CSV output");

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "accuracy of one model, or the LT/RC/pretrain matrix");
  eval->add_option("--model", eval_o.model, "checkpoint (single-model mode)");
  eval->add_option("--mode", eval_o.mode, "dense | sparse")->capture_default_str();
  eval->add_option("--lt", eval_o.lt);
  eval->add_option("--rc", eval_o.rc);
  eval->add_option("--pretrain", eval_o.pretrain);
  eval->add_option("--store", eval_o.store, "ticket store covering the evaluation split");
  eval->add_option("--input-mode", eval_o.input_mode, "remove | occlude")->capture_default_str();
  eval->add_option("--epsilon", eval_o.epsilon, "match-pretrain tolerance, pp")->capture_default_str();
  eval->add_option("--delta", eval_o.delta, "required LT - RC margin, pp")->capture_default_str();
  eval->add_option("--out", eval_o.out, "CSV output");
  eval_o.data.add(eval, "test");

  MacsOptions macs_o;
  auto* macs = app.add_subcommand("macs", "analytic multiply-accumulate counts");
  macs->add_option("--model", macs_o.model, "preset name")->capture_default_str();
  macs->add_option("--ckpt", macs_o.ckpt, "read the configuration from a checkpoint");
  macs->add_option("--tokens", macs_o.tokens, "tokens including CLS (default: all)");
  macs->add_option("--store", macs_o.store, "average over a ticket store's kept counts");

  VisOptions vis_o;
  auto* vis = app.add_subcommand("visualize", "render each selection stage of one image");
  vis->add_option("--selector", vis_o.selector, "pretrained checkpoint")->required();
  vis->add_option("--keep-rate", vis_o.keep_rate)->capture_default_str();
  vis->add_option("--stages", vis_o.stages, "selection depths, comma separated");
  vis->add_option("--image", vis_o.image, "PPM/PGM file instead of a dataset image");
  vis->add_option("--id", vis_o.id, "dataset image id (default: the first)");
  vis->add_option("--scale", vis_o.scale, "integer upscaling")->capture_default_str();
  vis->add_flag("--occlusion", vis_o.occlusion, "black instead of gray for dropped patches");
  vis->add_option("--out", vis_o.out, "output prefix")->required();
  vis_o.data.add(vis, "test");

  std::string replay_manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "rerun a recorded command and compare artifact digests");
  replay->add_option("manifest", replay_manifest)->required();
  replay->add_option("--out", replay_out, "where the rerun writes")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  int status = 0;
  std::string command;
  if (*pretrain) {
    command = "pretrain";
    pretrain_o.path = "full";
    g_record.command = command;
    status = run_train(pretrain_o, pretrain);
  } else if (*train_cmd) {
    command = "train";
    g_record.command = command;
    status = run_train(train_o, train_cmd);
  } else if (*select) {
    g_record.command = command = "select";
    status = run_select(select_o);
  } else if (*lth_run) {
    g_record.command = command = "weight-lth run";
    status = run_weight_lth(lth_o);
  } else if (*lth_report_cmd) {
    g_record.command = command = "weight-lth report";
    status = run_lth_report(report_o);
  } else if (*eval) {
    g_record.command = command = "eval";
    status = run_eval(eval_o);
  } else if (*macs) {
    g_record.command = command = "macs";
    status = run_macs(macs_o);
  } else if (*vis) {
    g_record.command = command = "visualize";
    status = run_visualize(vis_o, vis);
  } else if (*replay) {
    return run_replay(replay_manifest, replay_out);
  }
  if (status == 0) {
    if (const auto cfg = app.get_config_ptr(); cfg != nullptr && cfg->count() > 0) {
      g_record.inputs["config"] = resolve(cfg->as<std::string>());
    }
    write_manifest(g_record);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const Error& e) {
    std::fprintf(stderr, "dlth: %s\n", e.what());
    return e.kind() == ErrorKind::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dlth: %s\n", e.what());
    return 1;
  }
}
