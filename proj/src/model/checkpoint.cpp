#include "dlth/model/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dlth/digest.hpp"

namespace dlth {

namespace {

constexpr std::string_view kMagic = "DLTHCKPT 1\n";

void append_tensors(const ParamSet<float>& set, const std::string& prefix, nlohmann::json& table, std::string& payload) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    table.push_back({{"name", prefix + set.name(i)},
                     {"shape", set[i].shape},
                     {"trainable", set.trainable(i)},
                     {"offset", payload.size()}});
    const auto bytes = std::as_bytes(std::span(set[i].data));
    payload.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
}

std::string optimizer_digest(const OptimizerState& s) {
  Sha256 h;
  h.update(to_string(s.kind));
  h.update_pod(s.step);
  for (const auto* set : {&s.first, &s.second})
    for (std::size_t i = 0; i < set->size(); ++i) {
      h.update(set->name(i));
      h.update(std::as_bytes(std::span((*set)[i].data)));
    }
  return h.hex();
}

void read_tensors(const nlohmann::json& table, const std::string& prefix, std::string_view payload,
                  ParamSet<float>& out) {
  for (const auto& entry : table) {
    const auto name = entry.at("name").get<std::string>();
    if (!name.starts_with(prefix)) continue;
    auto& t = out.add(name.substr(prefix.size()), entry.at("shape").get<std::vector<int>>(),
                      entry.at("trainable").get<bool>());
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = t.numel() * sizeof(float);
    require(offset + nbytes <= payload.size(), ErrorKind::corruption, "tensor " + name + " truncated");
    std::memcpy(t.data.data(), payload.data() + offset, nbytes);
  }
}

}  // namespace

std::string save_checkpoint(const std::filesystem::path& path, const ModelState& model, const OptimizerState* optimizer) {
  nlohmann::json header;
  header["config"] = model.config;
  header["seed"] = model.seed;
  header["epoch"] = model.epoch;
  const auto digest = model.digest();
  header["digest"] = digest;
  nlohmann::json table = nlohmann::json::array();
  std::string payload;
  append_tensors(model.params, "model.", table, payload);
  if (optimizer != nullptr) {
    header["optimizer"] = {{"kind", to_string(optimizer->kind)},
                           {"step", optimizer->step},
                           {"digest", optimizer_digest(*optimizer)}};
    append_tensors(optimizer->first, "opt.first.", table, payload);
    append_tensors(optimizer->second, "opt.second.", table, payload);
  }
  header["tensors"] = std::move(table);
  const auto text = header.dump();

  std::string bytes(kMagic);
  const std::uint64_t len = text.size();
  bytes.append(reinterpret_cast<const char*>(&len), sizeof(len));
  bytes += text;
  bytes += payload;
  atomic_write(path, bytes);
  return digest;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  require(bytes.starts_with(kMagic), ErrorKind::corruption, path.string() + " is not a checkpoint");
  std::uint64_t len = 0;
  require(bytes.size() >= kMagic.size() + sizeof(len), ErrorKind::corruption, "truncated checkpoint header");
  std::memcpy(&len, bytes.data() + kMagic.size(), sizeof(len));
  const auto header_start = kMagic.size() + sizeof(len);
  require(header_start + len <= bytes.size(), ErrorKind::corruption, "truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corruption, std::string("unreadable checkpoint header: ") + e.what());
  }
  const std::string_view payload(bytes.data() + header_start + len, bytes.size() - header_start - len);

  Checkpoint ckpt;
  ckpt.model.config = header.at("config").get<ModelConfig>();
  ckpt.model.seed = header.at("seed").get<std::uint64_t>();
  ckpt.model.epoch = header.at("epoch").get<int>();
  read_tensors(header.at("tensors"), "model.", payload, ckpt.model.params);
  require(ckpt.model.params.same_layout(declare_params<float>(ckpt.model.config)), ErrorKind::corruption,
          "checkpoint tensors do not match its configuration");
  require(ckpt.model.digest() == header.at("digest").get<std::string>(), ErrorKind::corruption,
          "model digest mismatch in " + path.string());

  if (header.contains("optimizer")) {
    const auto& o = header["optimizer"];
    OptimizerState state;
    state.kind = parse_optimizer(o.at("kind").get<std::string>());
    state.step = o.at("step").get<std::int64_t>();
    read_tensors(header.at("tensors"), "opt.first.", payload, state.first);
    read_tensors(header.at("tensors"), "opt.second.", payload, state.second);
    require(optimizer_digest(state) == o.at("digest").get<std::string>(), ErrorKind::corruption,
            "optimizer digest mismatch in " + path.string());
    ckpt.optimizer = std::move(state);
  }
  return ckpt;
}

Checkpoint checkpoint_restore(const std::filesystem::path& path, const std::string& digest) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) {
    auto ckpt = load_checkpoint(path);
    require(ckpt.model.digest() == digest, ErrorKind::corruption,
            "checkpoint " + path.string() + " does not carry digest " + digest);
    return ckpt;
  }
  require(fs::is_directory(path), ErrorKind::io, "no checkpoint at " + path.string());
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    const auto bytes_head = [&] {
      std::ifstream in(entry.path(), std::ios::binary);
      std::string head(kMagic.size(), '\0');
      in.read(head.data(), static_cast<std::streamsize>(head.size()));
      return head;
    }();
    if (bytes_head != kMagic) continue;
    auto ckpt = load_checkpoint(entry.path());
    if (ckpt.model.digest() == digest) return ckpt;
  }
  fail(ErrorKind::corruption, "no checkpoint with digest " + digest + " under " + path.string());
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch) {
  return run_dir / "ckpt" / ("epoch-" + std::to_string(epoch));
}

}  // namespace dlth
