#include "dlth/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "dlth/digest.hpp"
#include "dlth/rng.hpp"

namespace dlth {

namespace fs = std::filesystem;

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::builtin: return "builtin";
    case SourceKind::folder: return "folder";
    case SourceKind::cifar10: return "cifar10";
  }
  return "?";
}

SourceKind parse_source(const std::string& text) {
  if (text == "builtin") return SourceKind::builtin;
  if (text == "folder") return SourceKind::folder;
  if (text == "cifar10") return SourceKind::cifar10;
  fail(ErrorKind::configuration, "unknown dataset source '" + text + "'");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)}, {"path", s.path},   {"split", s.split},
                     {"count", s.count},          {"seed", s.seed},   {"limit", s.limit}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  s.kind = parse_source(j.at("kind").get<std::string>());
  s.path = j.value("path", std::string{});
  s.split = j.value("split", std::string{"train"});
  s.count = j.value("count", 0);
  s.seed = j.value("seed", std::uint64_t{2024});
  s.limit = j.value("limit", 0);
}

int DatasetHandle::index_of(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
}

// ---------------------------------------------------------------- PNM

namespace {

struct PnmReader {
  const std::string& bytes;
  std::size_t pos = 0;
  const fs::path& path;

  void skip_space() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  }

  int number() {
    skip_space();
    require(pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])), ErrorKind::ingest,
            "malformed image header in " + path.string());
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      require(v < (1 << 20), ErrorKind::ingest, "implausible value in " + path.string());
    }
    return static_cast<int>(v);
  }
};

}  // namespace

Image read_pnm(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    fail(ErrorKind::ingest, "cannot read " + path.string());
  }
  require(bytes.size() >= 2 && bytes[0] == 'P', ErrorKind::ingest, path.string() + " is not a PNM image");
  const char kind = bytes[1];
  require(kind == '2' || kind == '3' || kind == '5' || kind == '6', ErrorKind::ingest,
          path.string() + ": unsupported PNM variant P" + std::string(1, kind));
  PnmReader r{bytes, 2, path};
  const int w = r.number();
  const int h = r.number();
  const int maxval = r.number();
  require(w > 0 && h > 0 && maxval > 0 && maxval < 256, ErrorKind::ingest,
          path.string() + ": unsupported dimensions or bit depth");
  const int channels = (kind == '3' || kind == '6') ? 3 : 1;
  Image img(h, w, channels);
  const std::size_t n = img.pixels.size();
  if (kind == '5' || kind == '6') {
    ++r.pos;  // single whitespace after maxval
    require(r.pos + n <= bytes.size(), ErrorKind::ingest, path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < n; ++i) {
      const int v = static_cast<unsigned char>(bytes[r.pos + i]);
      img.pixels[i] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const int v = r.number();
      require(v <= maxval, ErrorKind::ingest, path.string() + ": sample exceeds maxval");
      img.pixels[i] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  require(image.channels == 1 || image.channels == 3, ErrorKind::shape, "PNM output needs 1 or 3 channels");
  std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  atomic_write(path, out);
}

// ---------------------------------------------------------------- desk-shapes

const std::vector<std::string>& desk_shape_classes() {
  static const std::vector<std::string> names{"disk",   "square", "triangle", "plus",  "ring",
                                              "diamond", "stripes", "cross",   "frame", "wedge"};
  return names;
}

namespace {

bool inside(int label, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (label) {
    case 0: return u * u + v * v <= 1.0;
    case 1: return au <= 0.8 && av <= 0.8;
    case 2: return av <= 0.9 && au <= (v + 0.9) / 1.8;
    case 3: return (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95);
    case 4: {
      const double r = std::sqrt(u * u + v * v);
      return r >= 0.55 && r <= 1.0;
    }
    case 5: return au + av <= 1.0;
    case 6: return au <= 0.95 && (std::abs(v - 0.5) <= 0.22 || std::abs(v + 0.5) <= 0.22);
    case 7: return au <= 0.95 && av <= 0.95 && (std::abs(u - v) <= 0.35 || std::abs(u + v) <= 0.35);
    case 8: {
      const double m = std::max(au, av);
      return m <= 0.9 && m >= 0.55;
    }
    case 9: return av <= 0.9 && au <= (0.9 - v) / 1.8;
    default: return false;
  }
}

std::uint8_t clamp_px(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image draw_desk_shape(int label, std::uint64_t seed, int size) {
  require(label >= 0 && label < 10, ErrorKind::argument, "desk-shapes label out of range");
  Rng rng(seed);
  Image img(size, size, 3);

  // Textured background: tinted gray, a linear gradient, and per-pixel noise.
  std::array<double, 3> base{};
  const double level = rng.uniform(60.0, 150.0);
  for (auto& b : base) b = level + rng.uniform(-25.0, 25.0);
  const double gx = rng.uniform(-1.2, 1.2), gy = rng.uniform(-1.2, 1.2);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = clamp_px(base[static_cast<std::size_t>(c)] + gx * (x - size / 2) + gy * (y - size / 2) +
                                   rng.uniform(-14.0, 14.0));

  auto color = [&] {
    std::array<double, 3> col{};
    for (int tries = 0; tries < 64; ++tries) {
      double dist = 0.0;
      for (int c = 0; c < 3; ++c) {
        col[static_cast<std::size_t>(c)] = rng.uniform(0.0, 255.0);
        dist += std::abs(col[static_cast<std::size_t>(c)] - base[static_cast<std::size_t>(c)]);
      }
      if (dist >= 150.0) break;
    }
    return col;
  };

  // Distractor blobs, drawn first so the shape sits on top.
  const int blobs = 2 + static_cast<int>(rng.index(3));
  for (int b = 0; b < blobs; ++b) {
    const auto col = color();
    const double r = rng.uniform(1.2, 2.4);
    const double cx = rng.uniform(0.0, size), cy = rng.uniform(0.0, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double du = x + 0.5 - cx, dv = y + 0.5 - cy;
        if (du * du + dv * dv <= r * r)
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp_px(col[static_cast<std::size_t>(c)]);
      }
  }

  const auto col = color();
  const double r = rng.uniform(5.0, 7.0);
  const double cx = rng.uniform(r, size - r), cy = rng.uniform(r, size - r);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (inside(label, (x + 0.5 - cx) / r, (y + 0.5 - cy) / r))
        for (int c = 0; c < 3; ++c)
          img.at(y, x, c) = clamp_px(col[static_cast<std::size_t>(c)] + rng.uniform(-10.0, 10.0));
  return img;
}

// ---------------------------------------------------------------- sources

namespace {

void open_builtin(const DatasetSpec& spec, DatasetHandle& h) {
  const int n = spec.count > 0 ? spec.count : (spec.split == "train" ? 5000 : 1000);
  h.classes = desk_shape_classes();
  const std::uint64_t split_seed = combine_seed(spec.seed, hash_string(spec.split));
  Rng label_rng(split_seed);
  for (int i = 0; i < n; ++i) {
    const int label = static_cast<int>(label_rng.index(10));
    h.ids.push_back(std::to_string(i));
    h.labels.push_back(label);
    h.images.push_back(draw_desk_shape(label, combine_seed(split_seed, static_cast<std::uint64_t>(i))));
  }
  // Measured once over the default 5000-image train split.
  h.stats = {{0.4232, 0.4236, 0.4234}, {0.1592, 0.1585, 0.1582}};
}

void open_folder(const DatasetSpec& spec, DatasetHandle& h) {
  fs::path root = spec.path;
  require(fs::is_directory(root), ErrorKind::ingest, "dataset folder " + root.string() + " does not exist");
  if (!spec.split.empty() && fs::is_directory(root / spec.split)) root /= spec.split;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) h.classes.push_back(entry.path().filename().string());
  std::sort(h.classes.begin(), h.classes.end());
  require(!h.classes.empty(), ErrorKind::ingest, "no class folders under " + root.string());

  for (std::size_t c = 0; c < h.classes.size(); ++c) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root / h.classes[c]))
      if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), root).generic_string());
    std::sort(files.begin(), files.end());
    for (auto& rel : files) {
      h.images.push_back(read_pnm(root / rel));
      h.ids.push_back(std::move(rel));
      h.labels.push_back(static_cast<int>(c));
    }
  }
  require(!h.ids.empty(), ErrorKind::ingest, "no images under " + root.string());
  const auto& first = h.images.front();
  for (std::size_t i = 0; i < h.images.size(); ++i) {
    const auto& img = h.images[i];
    require(img.height == first.height && img.width == first.width && img.channels == first.channels,
            ErrorKind::ingest, "image " + h.ids[i] + " differs in shape from " + h.ids.front());
  }
  h.stats = {std::vector<double>(static_cast<std::size_t>(first.channels), 0.5),
             std::vector<double>(static_cast<std::size_t>(first.channels), 0.25)};
}

void open_cifar(const DatasetSpec& spec, DatasetHandle& h) {
  const fs::path root = spec.path;
  std::vector<std::string> files;
  if (spec.split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  h.classes = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  for (const auto& f : files) {
    std::string bytes;
    try {
      bytes = read_file(root / f);
    } catch (const Error&) {
      fail(ErrorKind::ingest, "missing CIFAR-10 file " + (root / f).string());
    }
    require(bytes.size() % kRecord == 0, ErrorKind::ingest, (root / f).string() + " has a partial record");
    for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
      const int label = static_cast<unsigned char>(bytes[off]);
      require(label < 10, ErrorKind::ingest, (root / f).string() + ": label out of range");
      Image img(32, 32, 3);
      for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 1024; ++p)
          img.pixels[static_cast<std::size_t>(p * 3 + c)] =
              static_cast<std::uint8_t>(bytes[off + 1 + static_cast<std::size_t>(c * 1024 + p)]);
      h.ids.push_back(std::to_string(h.ids.size()));
      h.labels.push_back(label);
      h.images.push_back(std::move(img));
    }
  }
  h.stats = {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
}

}  // namespace

DatasetHandle open_dataset(const DatasetSpec& spec) {
  DatasetHandle h;
  h.kind = spec.kind;
  h.split = spec.split;
  switch (spec.kind) {
    case SourceKind::builtin: open_builtin(spec, h); break;
    case SourceKind::folder: open_folder(spec, h); break;
    case SourceKind::cifar10: open_cifar(spec, h); break;
  }
  if (spec.limit > 0 && spec.limit < h.size()) {
    h.ids.resize(static_cast<std::size_t>(spec.limit));
    h.labels.resize(static_cast<std::size_t>(spec.limit));
    h.images.resize(static_cast<std::size_t>(spec.limit));
  }
  Sha256 sha;
  sha.update(to_string(h.kind));
  for (int i = 0; i < h.size(); ++i) {
    const auto& img = h.images[static_cast<std::size_t>(i)];
    sha.update(h.ids[static_cast<std::size_t>(i)]);
    sha.update_pod(h.labels[static_cast<std::size_t>(i)]);
    sha.update_pod(img.height);
    sha.update_pod(img.width);
    sha.update_pod(img.channels);
    sha.update(std::as_bytes(std::span(img.pixels)));
  }
  h.digest = sha.hex();
  return h;
}

// ---------------------------------------------------------------- batches

std::vector<BatchPlan> batches(const DatasetHandle& data, std::uint64_t seed, int epoch, const BatchOptions& options) {
  require(options.batch_size >= 1, ErrorKind::configuration, "batch size must be positive");
  const std::uint64_t epoch_seed = combine_seed(seed, static_cast<std::uint64_t>(epoch));
  std::vector<int> order;
  if (options.shuffle) {
    Rng rng(epoch_seed);
    order = rng.permutation(data.size());
  } else {
    order.resize(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
  }
  // Augmentation draws happen whether or not they are used, so paths that
  // disable crops still see the same flips as paths that do not.
  Rng aug(combine_seed(epoch_seed, 0xa06ULL));
  std::vector<BatchPlan> plans;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
    BatchPlan plan;
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
    for (auto i = start; i < end; ++i) {
      Augment a;
      const bool flip = aug.bernoulli(0.5);
      const int dy = static_cast<int>(aug.index(static_cast<std::size_t>(2 * options.pad + 1))) - options.pad;
      const int dx = static_cast<int>(aug.index(static_cast<std::size_t>(2 * options.pad + 1))) - options.pad;
      if (options.augment) {
        a.flip = flip;
        if (options.crop) {
          a.dy = dy;
          a.dx = dx;
        }
      }
      plan.indices.push_back(order[i]);
      plan.augment.push_back(a);
    }
    plans.push_back(std::move(plan));
  }
  return plans;
}

Image apply_augment(const Image& image, const Augment& augment, int pad) {
  if (!augment.flip && augment.dy == 0 && augment.dx == 0) return image;
  require(std::abs(augment.dy) <= pad && std::abs(augment.dx) <= pad, ErrorKind::argument, "crop shift exceeds padding");
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const int sy = y + augment.dy;
      int sx = x + augment.dx;
      if (sy < 0 || sy >= image.height || sx < 0 || sx >= image.width) continue;
      if (augment.flip) sx = image.width - 1 - sx;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  return out;
}

}  // namespace dlth
