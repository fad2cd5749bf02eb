#include "dlth/ticket_store.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "dlth/digest.hpp"

namespace dlth {

namespace {

constexpr std::string_view kMagic = "DLTHTICKETS 1\n";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

struct Cursor {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    require(pos + n <= bytes.size(), ErrorKind::corruption, "ticket store is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[pos]) |
                                              (static_cast<unsigned char>(bytes[pos + 1]) << 8));
    pos += 2;
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    auto s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

nlohmann::json manifest_json(const StoreManifest& m, bool with_timestamp) {
  nlohmann::json j{{"format_version", m.format_version},
                   {"fingerprint", m.fingerprint},
                   {"selector", m.selector},
                   {"target_sparsity", target_sparsity(m.selector)},
                   {"dataset_id", m.dataset_id},
                   {"grid_side", m.grid_side},
                   {"record_count", m.record_count}};
  if (with_timestamp) j["created"] = m.created;
  return j;
}

void TicketStore::put(const std::string& id, const PatchMask& mask, std::vector<std::uint16_t> ranking) {
  if (manifest_.grid_side == 0) manifest_.grid_side = mask.grid_side;
  require(mask.grid_side == manifest_.grid_side && mask.size() == static_cast<int>(mask.bits.size()),
          ErrorKind::shape, "mask grid does not match the store grid");
  require(mask.kept_count() >= 1, ErrorKind::degenerate_input, "mask for " + id + " keeps zero patches");
  require(ranking.empty() || static_cast<int>(ranking.size()) == mask.size(), ErrorKind::shape,
          "ranking must list every patch");
  if (auto it = records_.find(id); it != records_.end()) {
    require(it->second.mask == mask, ErrorKind::topology_violation, "conflicting mask for image " + id);
    return;
  }
  MaskRecord rec{id, mask, std::move(ranking)};
  rec.mask.provenance = MaskProvenance::ticket;
  rec.mask.target_sparsity = target_sparsity(manifest_.selector);
  records_.emplace(id, std::move(rec));
  manifest_.record_count = static_cast<int>(records_.size());
}

const MaskRecord* TicketStore::find(const std::string& id) const {
  auto it = records_.find(id);
  return it == records_.end() ? nullptr : &it->second;
}

const MaskRecord& TicketStore::get(const std::string& id) const {
  const auto* rec = find(id);
  require(rec != nullptr, ErrorKind::store_coverage, "ticket store has no mask for image " + id);
  return *rec;
}

void TicketStore::require_fingerprint(const std::string& fingerprint) const {
  require(manifest_.fingerprint == fingerprint, ErrorKind::provenance,
          "ticket store was made by selector " + manifest_.fingerprint.substr(0, 12) + ", not " +
              fingerprint.substr(0, 12));
}

std::string TicketStore::serialize() const {
  auto m = manifest_;
  m.record_count = static_cast<int>(records_.size());
  std::string out(kMagic);
  out += manifest_json(m, false).dump();
  out += '\n';
  for (const auto& [id, rec] : records_) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
    const auto packed = rec.mask.packed();
    out.append(reinterpret_cast<const char*>(packed.data()), packed.size());
    put_u16(out, static_cast<std::uint16_t>(rec.ranking.size()));
    for (auto r : rec.ranking) put_u16(out, r);
  }
  return out;
}

TicketStore TicketStore::deserialize(const std::string& bytes) {
  require(bytes.starts_with(kMagic), ErrorKind::corruption, "not a ticket store");
  const auto eol = bytes.find('\n', kMagic.size());
  require(eol != std::string::npos, ErrorKind::corruption, "ticket store manifest is truncated");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.substr(kMagic.size(), eol - kMagic.size()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corruption, std::string("unreadable ticket store manifest: ") + e.what());
  }
  StoreManifest m;
  m.format_version = j.at("format_version").get<int>();
  require(m.format_version == 1, ErrorKind::corruption, "unsupported ticket store version");
  m.fingerprint = j.at("fingerprint").get<std::string>();
  m.selector = j.at("selector").get<SelectorConfig>();
  m.dataset_id = j.at("dataset_id").get<std::string>();
  m.grid_side = j.at("grid_side").get<int>();
  const int count = j.at("record_count").get<int>();

  TicketStore store(m);
  Cursor c{bytes, eol + 1};
  const int n = m.grid_side * m.grid_side;
  for (int r = 0; r < count; ++r) {
    const auto id = c.take(c.u32());
    const auto raw = c.take(static_cast<std::size_t>((n + 7) / 8));
    PatchMask mask;
    mask.grid_side = m.grid_side;
    mask.bits = PatchMask::unpack(std::vector<std::uint8_t>(raw.begin(), raw.end()), n);
    std::vector<std::uint16_t> ranking(c.u16());
    for (auto& v : ranking) v = c.u16();
    require(ranking.empty() || static_cast<int>(ranking.size()) == n, ErrorKind::corruption,
            "record " + id + " has a partial ranking");
    for (auto v : ranking) require(v < n, ErrorKind::corruption, "record " + id + " ranks a patch off the grid");
    require(!store.contains(id), ErrorKind::corruption, "duplicate record " + id);
    store.put(id, mask, std::move(ranking));
  }
  require(c.pos == bytes.size(), ErrorKind::corruption, "trailing bytes after the last ticket record");
  store.manifest_.record_count = count;
  return store;
}

void TicketStore::save(const std::filesystem::path& path) const {
  atomic_write(path, serialize());
  auto m = manifest_;
  m.record_count = static_cast<int>(records_.size());
  if (m.created.empty()) m.created = now_utc();
  auto side = manifest_json(m, true);
  side["container_sha256"] = digest();
  atomic_write(path.string() + ".json", side.dump(2) + "\n");
}

TicketStore TicketStore::load(const std::filesystem::path& path) {
  auto store = deserialize(read_file(path));
  const auto sidecar = path.string() + ".json";
  if (!std::filesystem::exists(sidecar)) return store;
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(read_file(sidecar));
  } catch (const nlohmann::json::exception&) {
    return store;  // unreadable sidecar: the container stands on its own
  }
  store.manifest_.created = side.value("created", std::string{});
  const auto recorded = side.value("container_sha256", std::string{});
  require(recorded.empty() || recorded == store.digest(), ErrorKind::corruption,
          path.string() + " does not match the digest recorded in its sidecar");
  return store;
}

std::string TicketStore::digest() const { return sha256_hex(serialize()); }

int materialize(TicketStore& store, const TicketSelector& selector, const DatasetHandle& data,
                const MaterializeOptions& options) {
  auto& m = store.manifest();
  if (store.size() == 0 && m.fingerprint.empty()) {
    m.fingerprint = selector.fingerprint();
    m.selector = selector.config();
    m.dataset_id = data.digest;
    m.grid_side = selector.model_config().grid_side();
  }
  store.require_fingerprint(selector.fingerprint());
  require(m.selector == selector.config(), ErrorKind::provenance, "ticket store was made with another selector config");
  require(m.dataset_id == data.digest, ErrorKind::provenance, "ticket store belongs to another dataset");
  if (m.created.empty()) m.created = now_utc();

  std::vector<int> todo;
  for (int i = 0; i < data.size(); ++i)
    if (!store.contains(data.ids[static_cast<std::size_t>(i)])) todo.push_back(i);
  if (options.stop_after >= 0 && static_cast<int>(todo.size()) > options.stop_after)
    todo.resize(static_cast<std::size_t>(options.stop_after));

  int added = 0, since_flush = 0;
  for (std::size_t start = 0; start < todo.size(); start += static_cast<std::size_t>(options.batch_size)) {
    const auto end = std::min(todo.size(), start + static_cast<std::size_t>(options.batch_size));
    std::vector<Image> images;
    for (auto i = start; i < end; ++i) images.push_back(data.images[static_cast<std::size_t>(todo[i])]);
    const auto selections = selector.select(images);
    for (auto i = start; i < end; ++i) {
      const auto& sel = selections[i - start];
      std::vector<std::uint16_t> ranking(sel.ranking.begin(), sel.ranking.end());
      store.put(data.ids[static_cast<std::size_t>(todo[i])], sel.mask, std::move(ranking));
      ++added;
      ++since_flush;
    }
    if (!options.path.empty() && since_flush >= options.flush_every) {
      store.save(options.path);
      since_flush = 0;
    }
  }
  if (!options.path.empty()) store.save(options.path);
  return added;
}

TopologyReport verify_fixed_topology(const TicketStore& store, const TicketSelector& selector,
                                     const DatasetHandle& data, const std::vector<std::string>& sample_ids) {
  store.require_fingerprint(selector.fingerprint());
  std::vector<std::string> ids = sample_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  TopologyReport report;
  for (const auto& id : ids) {
    const int index = data.index_of(id);
    require(index >= 0, ErrorKind::store_coverage, "image " + id + " is not in the dataset");
    const auto& rec = store.get(id);
    const auto fresh = selector.select(data.images[static_cast<std::size_t>(index)]).mask;
    ++report.checked;
    if (!(fresh == rec.mask)) report.mismatches.push_back(id);
  }
  return report;
}

}  // namespace dlth
