#include "dlth/trainer.hpp"

#include <cmath>
#include <filesystem>

#include "dlth/digest.hpp"
#include "dlth/model/checkpoint.hpp"

namespace dlth {

namespace fs = std::filesystem;

std::string to_string(TrainPath p) {
  switch (p) {
    case TrainPath::lt: return "lt";
    case TrainPath::rc: return "rc";
    case TrainPath::full: return "full";
  }
  return "?";
}

TrainPath parse_path(const std::string& text) {
  if (text == "lt") return TrainPath::lt;
  if (text == "rc") return TrainPath::rc;
  if (text == "full") return TrainPath::full;
  fail(ErrorKind::configuration, "unknown training path '" + text + "'");
}

std::string to_string(InputMode m) { return m == InputMode::remove ? "remove" : "occlude"; }

InputMode parse_input_mode(const std::string& text) {
  if (text == "remove") return InputMode::remove;
  if (text == "occlude") return InputMode::occlude;
  fail(ErrorKind::configuration, "unknown input mode '" + text + "'");
}

void RunConfig::validate() const {
  require(epochs >= 0, ErrorKind::configuration, "epochs must be nonnegative");
  require(warmup_epochs >= 0 && warmup_epochs <= epochs, ErrorKind::configuration, "warmup epochs must lie in [0, T]");
  require(checkpoint_every >= 0, ErrorKind::configuration, "checkpoint cadence must be nonnegative");
  require(optim.batch_size >= 1, ErrorKind::configuration, "batch size must be positive");
  require(selector.keep_rate > 0.0 && selector.keep_rate <= 1.0 && selector.stages() >= 1, ErrorKind::configuration,
          "invalid selector keep rate or stage list");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"path", to_string(c.path)},
                     {"epochs", c.epochs},
                     {"finetune_epochs", c.finetune_epochs},
                     {"warmup_epochs", c.warmup_epochs},
                     {"selector", c.selector},
                     {"seed", c.seed},
                     {"rc_resample", c.rc_resample},
                     {"input_mode", to_string(c.input_mode)},
                     {"optim", c.optim},
                     {"augment", c.augment},
                     {"checkpoint_every", c.checkpoint_every},
                     {"run_dir", c.run_dir},
                     {"token_label_weight", c.token_label_weight}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  c.path = parse_path(j.at("path").get<std::string>());
  j.at("epochs").get_to(c.epochs);
  c.finetune_epochs = j.value("finetune_epochs", 0);
  c.warmup_epochs = j.value("warmup_epochs", 0);
  j.at("selector").get_to(c.selector);
  j.at("seed").get_to(c.seed);
  c.rc_resample = j.value("rc_resample", false);
  c.input_mode = parse_input_mode(j.value("input_mode", std::string{"remove"}));
  j.at("optim").get_to(c.optim);
  c.augment = j.value("augment", true);
  c.checkpoint_every = j.value("checkpoint_every", 1);
  c.run_dir = j.value("run_dir", std::string{});
  c.token_label_weight = j.value("token_label_weight", 0.0);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch},       {"loss", r.loss},     {"train_accuracy", r.train_accuracy},
                     {"sparsity", r.sparsity}, {"tokens", r.tokens}, {"digest", r.digest}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  j.at("epoch").get_to(r.epoch);
  j.at("loss").get_to(r.loss);
  j.at("train_accuracy").get_to(r.train_accuracy);
  j.at("sparsity").get_to(r.sparsity);
  j.at("tokens").get_to(r.tokens);
  j.at("digest").get_to(r.digest);
}

double warmup_sparsity(double t, int warmup_epochs, double s_target) {
  if (warmup_epochs <= 0 || t >= warmup_epochs) return s_target;
  const double clamped = std::max(0.0, t);
  return s_target * (1.0 - std::cos(M_PI * clamped / warmup_epochs)) / 2.0;
}

double effective_keep_rate(double sparsity, int stages) {
  require(sparsity >= 0.0 && sparsity < 1.0, ErrorKind::argument, "sparsity must lie in [0, 1)");
  require(stages >= 1, ErrorKind::argument, "stage count must be positive");
  return std::pow(1.0 - sparsity, 1.0 / stages);
}

int epoch_keep_count(const RunConfig& config, int n_patches, int epoch) {
  if (config.path == TrainPath::full) return n_patches;
  if (config.warmup_epochs > 0 && epoch < config.warmup_epochs) {
    const double s = warmup_sparsity(epoch, config.warmup_epochs, target_sparsity(config.selector));
    return stage_keep_counts(n_patches, effective_keep_rate(s, config.selector.stages()), config.selector.stages())
        .back();
  }
  return stage_keep_counts(n_patches, config.selector).back();
}

namespace {

struct Prepared {
  ImageBatch<float> batch;
  KeptIndices kept;
  std::vector<int> labels;
  std::vector<std::vector<int>> token_labels;
  std::vector<int> kept_counts;
};

class Feeder {
 public:
  Feeder(const ModelState& model, const DatasetHandle& data, const RunConfig& config, const TrainContext& context)
      : model_(model), data_(data), config_(config), context_(context) {
    grid_side_ = context.store != nullptr ? context.store->manifest().grid_side : model.config.grid_side();
    n_ = grid_side_ * grid_side_;
    if (config.input_mode == InputMode::remove)
      require(grid_side_ == model.config.grid_side(), ErrorKind::configuration,
              "token removal needs the store grid to equal the model patch grid");
  }

  int n_patches() const { return n_; }

  // keep < 0 selects the target sparsity; otherwise the warmup count.
  PatchMask mask_for(int index, int epoch, int keep) const {
    const auto& id = data_.ids[static_cast<std::size_t>(index)];
    if (config_.path == TrainPath::lt) {
      const auto& rec = context_.store->get(id);
      if (keep < 0 || keep == rec.mask.kept_count()) return rec.mask;
      require(static_cast<int>(rec.ranking.size()) == n_, ErrorKind::configuration,
              "sparsity warmup needs stored survival rankings");
      std::vector<int> prefix(rec.ranking.begin(), rec.ranking.begin() + keep);
      return PatchMask::from_indices(grid_side_, prefix);
    }
    if (keep < 0)  // per-image parity with the ticket when one exists
      keep = context_.store != nullptr ? context_.store->get(id).mask.kept_count() : epoch_keep_count(config_, n_, epoch);
    std::uint64_t seed = combine_seed(config_.seed, hash_string(id));
    if (config_.rc_resample) seed = combine_seed(seed, static_cast<std::uint64_t>(epoch) + 1);
    return random_mask(n_, keep, seed);
  }

  Prepared prepare(const BatchPlan& plan, int epoch, int keep) const {
    Prepared p;
    const bool masked = config_.path != TrainPath::full;
    const bool dense = config_.token_label_weight > 0.0 && context_.token_labels != nullptr;
    for (std::size_t i = 0; i < plan.indices.size(); ++i) {
      const int index = plan.indices[i];
      const auto& aug = plan.augment[i];
      Image img = apply_augment(data_.images[static_cast<std::size_t>(index)], aug, kPad);
      PatchMask mask = masked ? mask_for(index, epoch, keep) : PatchMask::all_ones(grid_side_);
      if (aug.flip) mask = mask.flipped_horizontal();
      if (masked && config_.input_mode == InputMode::occlude) img = occlude_patches(img, mask, img.height / grid_side_);
      p.batch.append(img, data_.stats);
      p.labels.push_back(data_.labels[static_cast<std::size_t>(index)]);
      p.kept_counts.push_back(mask.kept_count());
      if (masked && config_.input_mode == InputMode::remove) p.kept.push_back(mask.kept_indices());
      if (dense) {
        auto labels = (*context_.token_labels)[static_cast<std::size_t>(index)];
        if (aug.flip) labels = flip_token_labels(labels, grid_side_);
        p.token_labels.push_back(config_.input_mode == InputMode::remove ? mask_token_labels(labels, mask) : labels);
      }
    }
    return p;
  }

  static constexpr int kPad = 4;

 private:
  const ModelState& model_;
  const DatasetHandle& data_;
  const RunConfig& config_;
  const TrainContext& context_;
  int grid_side_ = 0;
  int n_ = 0;
};

void save_history(const RunConfig& config, const TrainHistory& history) {
  if (config.run_dir.empty()) return;
  atomic_write(fs::path(config.run_dir) / "history.json", nlohmann::json(history.epochs).dump(2) + "\n");
}

// Newest checkpoint with optimizer state in (start, limit], or -1.
int newest_checkpoint(const RunConfig& config, int start, int limit) {
  int best = -1;
  const fs::path dir = fs::path(config.run_dir) / "ckpt";
  if (!fs::is_directory(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (!name.starts_with("epoch-")) continue;
    const int e = std::stoi(name.substr(6));
    if (e > start && e <= limit && e > best) best = e;
  }
  return best;
}

}  // namespace

std::pair<ModelState, TrainHistory> train(ModelState model, const DatasetHandle& data, const RunConfig& config,
                                          const TrainContext& context) {
  config.validate();
  if (config.path == TrainPath::lt) {
    require(context.store != nullptr, ErrorKind::configuration, "the LT path needs a ticket store");
    require(!context.selector_fingerprint.empty(), ErrorKind::provenance, "the LT path needs a declared selector");
    context.store->require_fingerprint(context.selector_fingerprint);
    require(context.store->manifest().selector == config.selector, ErrorKind::configuration,
            "run selector config differs from the ticket store's");
  }
  if (context.store != nullptr && config.path != TrainPath::full)
    require(context.store->manifest().dataset_id == data.digest, ErrorKind::provenance,
            "ticket store was built for another dataset");
  if (config.input_mode == InputMode::remove && config.path != TrainPath::full)
    require(model.config.arch == ArchKind::vit, ErrorKind::configuration, "token removal needs a ViT; use occlusion");
  if (context.weight_mask != nullptr) {
    context.weight_mask->check_alignment(model.params);
    context.weight_mask->apply(model.params);
  }

  TrainHistory history;
  Optimizer optimizer(config.optim, model.params);
  const bool persist = !config.run_dir.empty() && config.checkpoint_every > 0;
  if (persist) fs::create_directories(fs::path(config.run_dir) / "ckpt");

  if (persist && context.resume) {
    const int found = newest_checkpoint(config, model.epoch, config.epochs);
    if (found > 0) {
      auto ckpt = load_checkpoint(checkpoint_path(config.run_dir, found));
      require(ckpt.model.config == model.config, ErrorKind::corruption, "resume checkpoint has another model config");
      require(ckpt.optimizer.has_value(), ErrorKind::corruption, "resume checkpoint lacks optimizer state");
      model = std::move(ckpt.model);
      optimizer = Optimizer(config.optim, std::move(*ckpt.optimizer));
      const auto hist_path = fs::path(config.run_dir) / "history.json";
      if (fs::exists(hist_path)) {
        history.epochs = nlohmann::json::parse(read_file(hist_path)).get<std::vector<EpochRecord>>();
        std::erase_if(history.epochs, [&](const EpochRecord& r) { return r.epoch > model.epoch; });
      }
    }
  }
  if (persist && !fs::exists(checkpoint_path(config.run_dir, model.epoch)))
    save_checkpoint(checkpoint_path(config.run_dir, model.epoch), model, &optimizer.state());

  Feeder feeder(model, data, config, context);
  BatchOptions options;
  options.batch_size = config.optim.batch_size;
  options.augment = config.augment;
  options.crop = false;  // every path sees the same flips; pixel shifts would misalign fixed masks
  options.pad = Feeder::kPad;
  LossOptions loss_options;
  loss_options.token_label_weight = config.token_label_weight;
  const bool dense = config.token_label_weight > 0.0 && context.token_labels != nullptr;

  auto grads = model.params.zeros_like();
  for (int epoch = model.epoch; epoch < config.epochs; ++epoch) {
    const bool warming = config.warmup_epochs > 0 && epoch < config.warmup_epochs;
    const int keep = warming ? epoch_keep_count(config, feeder.n_patches(), epoch) : -1;
    const auto plans = batches(data, config.seed, epoch, options);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0, withheld = 0;
    for (std::size_t step = 0; step < plans.size(); ++step) {
      auto prepared = feeder.prepare(plans[step], epoch, keep);
      grads.zero();
      const auto stats = loss_and_grad<float>(model.config, model.params, prepared.batch, prepared.kept,
                                               prepared.labels, dense ? &prepared.token_labels : nullptr,
                                               loss_options, grads);
      require(std::isfinite(stats.loss), ErrorKind::numerical,
              "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                  (persist ? "; last good checkpoint kept in " + config.run_dir : std::string{}));
      const double lr = scheduled_lr(config.optim, epoch, static_cast<int>(step), static_cast<int>(plans.size()),
                                     config.epochs);
      optimizer.step(model.params, grads, lr, context.weight_mask);

      const auto n = static_cast<std::int64_t>(prepared.labels.size());
      loss_sum += stats.loss * static_cast<double>(n);
      correct += stats.correct;
      seen += n;
      for (int k : prepared.kept_counts) {
        rec.tokens += k;
        withheld += feeder.n_patches() - k;
      }
      if (context.observer)
        context.observer({epoch, static_cast<int>(step), plans[step].indices, std::move(prepared.kept_counts)});
    }
    model.epoch = epoch + 1;
    rec.loss = seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
    rec.train_accuracy = seen == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(seen);
    rec.sparsity = seen == 0 ? 0.0 : static_cast<double>(withheld) / (static_cast<double>(seen) * feeder.n_patches());
    if (persist && (model.epoch % config.checkpoint_every == 0 || model.epoch == config.epochs))
      rec.digest = save_checkpoint(checkpoint_path(config.run_dir, model.epoch), model, &optimizer.state());
    history.epochs.push_back(rec);
    save_history(config, history);
    if (context.on_epoch) context.on_epoch(rec);
  }
  return {std::move(model), std::move(history)};
}

std::vector<TokenLabelSet> teacher_token_labels(const ModelState& teacher, const DatasetHandle& data) {
  require(teacher.config.arch == ArchKind::vit, ErrorKind::configuration, "token labels need a ViT teacher");
  std::vector<TokenLabelSet> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  VitOptions options;
  options.token_logits = true;
  const int n = teacher.config.num_patches();
  for (int start = 0; start < data.size(); start += 64) {
    ImageBatch<float> batch;
    const int end = std::min(data.size(), start + 64);
    for (int i = start; i < end; ++i) batch.append(data.images[static_cast<std::size_t>(i)], data.stats);
    const auto result = vit_forward(teacher.config, teacher.params, batch, {}, options,
                                    static_cast<VitTape<float>*>(nullptr));
    for (int b = 0; b < batch.count; ++b) {
      TokenLabelSet labels(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) {
        Eigen::Index arg = 0;
        result.token_logits.row(b * n + j).maxCoeff(&arg);
        labels[static_cast<std::size_t>(j)] = static_cast<int>(arg);
      }
      out.push_back(std::move(labels));
    }
  }
  return out;
}

}  // namespace dlth
