#include "dlth/model/config.hpp"

#include "dlth/error.hpp"

namespace dlth {

std::string to_string(ArchKind kind) { return kind == ArchKind::vit ? "vit" : "cnn"; }

ArchKind parse_arch_kind(const std::string& text) {
  if (text == "vit") return ArchKind::vit;
  if (text == "cnn") return ArchKind::cnn;
  fail(ErrorKind::configuration, "unknown arch kind '" + text + "'");
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::configuration, what); };
  check(patch_size >= 1 && image_size >= 1, "patch_size and image_size must be positive");
  check(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  check(num_classes >= 2, "num_classes must be at least 2");
  check(in_channels >= 1, "in_channels must be positive");
  check(embed_dim >= 1, "embed_dim must be positive");
  if (arch == ArchKind::vit) {
    check(depth >= 0, "depth must be non-negative");
    check(num_heads >= 1 && embed_dim % num_heads == 0, "embed_dim must be divisible by num_heads");
    check(mlp_ratio >= 1, "mlp_ratio must be positive");
  } else {
    check(depth >= 8 && (depth - 2) % 6 == 0, "cnn depth must be 6n+2 with n >= 1");
    check(image_size % 4 == 0, "cnn image_size must be divisible by 4");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"arch", to_string(c.arch)},       {"depth", c.depth},
                     {"embed_dim", c.embed_dim},        {"num_heads", c.num_heads},
                     {"patch_size", c.patch_size},      {"image_size", c.image_size},
                     {"num_classes", c.num_classes},    {"mlp_ratio", c.mlp_ratio},
                     {"in_channels", c.in_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.arch = parse_arch_kind(j.at("arch").get<std::string>());
  j.at("depth").get_to(c.depth);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("num_heads").get_to(c.num_heads);
  j.at("patch_size").get_to(c.patch_size);
  j.at("image_size").get_to(c.image_size);
  j.at("num_classes").get_to(c.num_classes);
  c.mlp_ratio = j.value("mlp_ratio", 4);
  c.in_channels = j.value("in_channels", 3);
}

namespace {

ModelConfig deit_like(int embed_dim, int heads) {
  ModelConfig c;
  c.arch = ArchKind::vit;
  c.depth = 12;
  c.embed_dim = embed_dim;
  c.num_heads = heads;
  c.patch_size = 16;
  c.image_size = 224;
  c.num_classes = 1000;
  return c;
}

}  // namespace

ModelConfig preset(const std::string& name) {
  if (name == "tiny-desk") return ModelConfig{};
  if (name == "vit-micro") {
    ModelConfig c;
    c.depth = 4;
    c.embed_dim = 64;
    c.num_heads = 4;
    c.mlp_ratio = 2;
    return c;
  }
  // The DeiT dimensions come from the DeiT family itself, hence "-like".
  if (name == "deit-tiny-like") return deit_like(192, 3);
  if (name == "deit-small-like") return deit_like(384, 6);
  if (name == "deit-medium-like") return deit_like(576, 9);
  if (name == "cnn-desk") {
    ModelConfig c;
    c.arch = ArchKind::cnn;
    c.depth = 14;
    c.embed_dim = 16;
    c.num_heads = 1;
    return c;
  }
  fail(ErrorKind::configuration, "unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() {
  return {"tiny-desk", "vit-micro", "deit-tiny-like", "deit-small-like", "deit-medium-like", "cnn-desk"};
}

}  // namespace dlth
