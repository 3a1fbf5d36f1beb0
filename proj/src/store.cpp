#include "wlds/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "wlds/json_codec.hpp"
#include "wlds/wire.hpp"

namespace fs = std::filesystem;

namespace wlds::store {

namespace {

// Frames at rest are sealed with a fixed key: the store relies on the record
// CRC for integrity, the tag only keeps the codec path identical.
const wire::Key kStoreKey{};

constexpr std::size_t kPayloadSize = wire::kFrameSize + 8 + 8 + 8 + 3 + 7 * 8;
constexpr std::uint32_t kMaxPayload = 1u << 20;

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 7; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return in_[pos_++]; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | in_[pos_++];
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = v << 8 | in_[pos_++];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::string segment_name(std::uint64_t first_offset) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "seg-%020llu.log", static_cast<unsigned long long>(first_offset));
  return buf;
}

void fsync_dir(const fs::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::vector<std::uint8_t> encode_record(const StoredRecord& r) {
  std::vector<std::uint8_t> out;
  out.reserve(kPayloadSize);
  Writer w(out);
  w.bytes(wire::encode_frame(r.reading, kStoreKey));
  w.u64(r.ingest_offset);
  w.f64(r.derived.distance_cm);
  w.f64(r.derived.garbage_level_cm);
  w.u8(r.derived.anomalous ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(r.evaluation.state));
  w.u8(r.evaluation.causes.bits());
  w.f64(r.spec.pipe_height_cm);
  w.f64(r.spec.set_limit_flow_lpm);
  w.f64(r.spec.fill_threshold_cm);
  w.f64(r.spec.gas_threshold_ppm);
  w.f64(r.spec.location.lat_deg);
  w.f64(r.spec.location.lon_deg);
  w.f64(r.sonic_speed_mps);
  return out;
}

std::optional<StoredRecord> decode_record(std::span<const std::uint8_t> payload) {
  if (payload.size() != kPayloadSize) return std::nullopt;
  Reader rd(payload);
  auto decoded = wire::decode_frame(rd.bytes(wire::kFrameSize), kStoreKey);
  auto* d = std::get_if<wire::Decoded>(&decoded);
  if (!d) return std::nullopt;
  const auto offset = rd.u64();
  DerivedDepths depths;
  depths.distance_cm = rd.f64();
  depths.garbage_level_cm = rd.f64();
  const auto anomalous = rd.u8();
  const auto state = rd.u8();
  const auto causes = rd.u8();
  if (anomalous > 1 || state > 1 || causes > 3) return std::nullopt;
  depths.anomalous = anomalous == 1;
  const double ph = rd.f64(), limit = rd.f64(), fill = rd.f64(), gas = rd.f64();
  const double lat = rd.f64(), lon = rd.f64();
  const double sonic = rd.f64();
  return StoredRecord{
      .reading = d->reading,
      .derived = depths,
      .evaluation = AlertEvaluation{static_cast<AlertState>(state), CauseSet(causes), depths.garbage_level_cm},
      .ingest_offset = offset,
      .spec = PipeSpec{d->reading.node_id, ph, limit, fill, gas, GeoPoint{lat, lon}},
      .sonic_speed_mps = sonic,
  };
}

struct Store::Partition {
  struct Segment {
    fs::path path;
    std::uint64_t first_offset;
    std::uint64_t count = 0;
    std::uint64_t bytes = 0;
    std::uint64_t max_ts = 0;
  };

  explicit Partition(NodeId n, fs::path d) : node(n), dir(std::move(d)) {}
  ~Partition() {
    if (fd >= 0) ::close(fd);
  }

  const StoredRecord& at_offset(std::uint64_t offset) const { return records[offset - records.front().ingest_offset]; }

  void index(const StoredRecord& r) {
    const std::pair key{r.reading.timestamp_ms, r.ingest_offset};
    if (order.empty() || order.back() < key) order.push_back(key);
    else order.insert(std::upper_bound(order.begin(), order.end(), key), key);
  }

  NodeId node;
  fs::path dir;
  mutable std::shared_mutex mu;
  std::vector<StoredRecord> records;  // ingest order, offsets contiguous
  std::vector<std::pair<std::uint64_t, std::uint64_t>> order;  // (timestamp_ms, offset)
  std::vector<Segment> segments;
  int fd = -1;
  std::uint64_t next_offset = 1;
};

Store::Store(fs::path dir, StoreOptions options) : dir_(std::move(dir)), options_(options) {
  fs::create_directories(dir_ / "nodes");
  for (const auto& entry : fs::directory_iterator(dir_ / "nodes"))
    if (entry.is_directory()) load_partition(entry.path());
}

Store::~Store() = default;

void Store::load_partition(const fs::path& node_dir) {
  const auto id = NodeId::try_parse(node_dir.filename().string());
  if (!id) return;
  auto p = std::make_unique<Partition>(*id, node_dir);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(node_dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("seg-") && name.ends_with(".log")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  for (const auto& file : files) {
    const auto data = read_file(file);
    Partition::Segment seg{file, 0};
    std::size_t pos = 0;
    bool torn = false;
    while (pos < data.size()) {
      if (data.size() - pos < 4) {
        torn = true;
        break;
      }
      const std::uint32_t len = Reader(std::span(data).subspan(pos, 4)).u32();
      if (len > kMaxPayload || data.size() - pos < 8ull + len) {
        torn = true;
        break;
      }
      const auto payload = std::span(data).subspan(pos + 4, len);
      const std::uint32_t crc = Reader(std::span(data).subspan(pos + 4 + len, 4)).u32();
      auto rec = crc == wire::crc32(payload) ? decode_record(payload) : std::nullopt;
      if (!rec || rec->reading.node_id != *id || rec->ingest_offset < p->next_offset ||
          (!p->records.empty() && rec->ingest_offset != p->records.back().ingest_offset + 1)) {
        torn = true;
        break;
      }
      if (seg.count == 0) seg.first_offset = rec->ingest_offset;
      ++seg.count;
      seg.max_ts = std::max(seg.max_ts, rec->reading.timestamp_ms);
      p->next_offset = rec->ingest_offset + 1;
      p->index(*rec);
      p->records.push_back(std::move(*rec));
      pos += 8 + len;
    }
    if (torn) {
      std::cerr << R"({"event":"store_recovery","segment":")" << file.string() << R"(","truncated_bytes":)"
                << data.size() - pos << "}\n";
      fs::resize_file(file, pos);
      recovery_.truncated_bytes += data.size() - pos;
      ++recovery_.torn_segments;
    }
    seg.bytes = pos;
    if (seg.count == 0) {
      fs::remove(file);
      continue;
    }
    p->segments.push_back(std::move(seg));
  }
  recovery_.records += p->records.size();
  partitions_.emplace(*id, std::move(p));
}

Store::Partition& Store::partition_for(const NodeId& node) {
  {
    std::shared_lock lk(map_mu_);
    if (auto it = partitions_.find(node); it != partitions_.end()) return *it->second;
  }
  std::unique_lock lk(map_mu_);
  auto& slot = partitions_[node];
  if (!slot) {
    auto dir = dir_ / "nodes" / node.to_string();
    fs::create_directories(dir);
    fsync_dir(dir_ / "nodes");
    slot = std::make_unique<Partition>(node, std::move(dir));
  }
  return *slot;
}

const Store::Partition* Store::find(const NodeId& node) const {
  std::shared_lock lk(map_mu_);
  auto it = partitions_.find(node);
  return it == partitions_.end() ? nullptr : it->second.get();
}

StoredRecord Store::append(const TelemetryReading& reading, const PipeSpec& spec, double sonic_speed_mps) {
  auto& p = partition_for(reading.node_id);
  std::unique_lock lk(p.mu);

  const auto quantized = wire::quantize(reading);
  const auto a = assess(quantized, spec, sonic_speed_mps);
  StoredRecord rec{quantized, a.depths, a.evaluation, p.next_offset, spec, sonic_speed_mps};

  const auto payload = encode_record(rec);
  std::vector<std::uint8_t> buf;
  buf.reserve(payload.size() + 8);
  Writer w(buf);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.bytes(payload);
  w.u32(wire::crc32(payload));

  const bool roll = p.segments.empty() || p.segments.back().bytes >= options_.segment_bytes;
  if (p.fd < 0 || roll) {
    if (p.fd >= 0) ::close(p.fd);
    p.fd = -1;
    auto path = roll ? p.dir / segment_name(rec.ingest_offset) : p.segments.back().path;
    p.fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (p.fd < 0) throw AppendError("open " + path.string() + ": " + std::strerror(errno));
    if (roll) {
      p.segments.push_back(Partition::Segment{path, rec.ingest_offset, 0, 0, 0});
      fsync_dir(p.dir);
    }
  }
  auto& seg = p.segments.back();

  std::size_t done = 0;
  while (done < buf.size()) {
    const auto n = ::write(p.fd, buf.data() + done, buf.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      const std::string err = std::strerror(errno);
      if (::ftruncate(p.fd, static_cast<off_t>(seg.bytes)) != 0) {
        ::close(p.fd);
        p.fd = -1;
      }
      throw AppendError("append " + seg.path.string() + ": " + err);
    }
    done += static_cast<std::size_t>(n);
  }
  if (options_.fsync && ::fdatasync(p.fd) != 0)
    throw AppendError("fdatasync " + seg.path.string() + ": " + std::strerror(errno));

  seg.bytes += buf.size();
  ++seg.count;
  seg.max_ts = std::max(seg.max_ts, rec.reading.timestamp_ms);
  ++p.next_offset;
  p.index(rec);
  p.records.push_back(rec);
  return rec;
}

std::optional<StoredRecord> Store::latest(const NodeId& node) const {
  const auto* p = find(node);
  if (!p) return std::nullopt;
  std::shared_lock lk(p->mu);
  if (p->records.empty()) return std::nullopt;
  return p->records.back();
}

std::vector<StoredRecord> Store::range(const QueryRange& q) const {
  if (q.from_ms >= q.to_ms) throw std::invalid_argument("range: from_ms must be < to_ms");
  std::vector<StoredRecord> out;
  const auto* p = find(q.node_id);
  if (!p) return out;
  std::shared_lock lk(p->mu);
  auto it = std::lower_bound(p->order.begin(), p->order.end(), std::pair<std::uint64_t, std::uint64_t>{q.from_ms, 0});
  for (; it != p->order.end() && it->first < q.to_ms; ++it) out.push_back(p->at_offset(it->second));
  return out;
}

std::vector<StoredRecord> Store::scan(const NodeId& node) const {
  const auto* p = find(node);
  if (!p) return {};
  std::shared_lock lk(p->mu);
  return p->records;
}

std::vector<NodeId> Store::nodes() const {
  std::shared_lock lk(map_mu_);
  std::vector<NodeId> out;
  for (const auto& [id, p] : partitions_) out.push_back(id);
  return out;
}

std::uint64_t Store::size() const {
  std::shared_lock lk(map_mu_);
  std::uint64_t n = 0;
  for (const auto& [id, p] : partitions_) {
    std::shared_lock plk(p->mu);
    n += p->records.size();
  }
  return n;
}

std::uint64_t Store::enforce_retention(std::uint64_t now_ms) {
  const std::uint64_t horizon = now_ms > options_.retention_ms ? now_ms - options_.retention_ms : 0;
  std::shared_lock lk(map_mu_);
  std::uint64_t dropped = 0;
  for (auto& [id, p] : partitions_) {
    std::unique_lock plk(p->mu);
    std::size_t drop_segments = 0;
    std::uint64_t drop_records = 0;
    // Oldest first; the active (last) segment is never deleted.
    while (drop_segments + 1 < p->segments.size() && p->segments[drop_segments].max_ts < horizon) {
      drop_records += p->segments[drop_segments].count;
      ++drop_segments;
    }
    if (drop_segments == 0) continue;
    for (std::size_t i = 0; i < drop_segments; ++i) fs::remove(p->segments[i].path);
    p->segments.erase(p->segments.begin(), p->segments.begin() + static_cast<std::ptrdiff_t>(drop_segments));
    p->records.erase(p->records.begin(), p->records.begin() + static_cast<std::ptrdiff_t>(drop_records));
    const auto first = p->records.empty() ? p->next_offset : p->records.front().ingest_offset;
    std::erase_if(p->order, [&](const auto& e) { return e.second < first; });
    dropped += drop_records;
  }
  return dropped;
}

void Store::save_spec(const PipeSpec& spec) {
  auto& p = partition_for(spec.node_id);
  std::unique_lock lk(p.mu);
  const auto tmp = p.dir / "spec.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << spec_to_json(spec).dump(2) << '\n';
    out.flush();
    if (!out) throw AppendError("write " + tmp.string() + " failed");
  }
  fs::rename(tmp, p.dir / "spec.json");
  fsync_dir(p.dir);
}

std::vector<PipeSpec> Store::saved_specs() const {
  std::vector<PipeSpec> out;
  std::shared_lock lk(map_mu_);
  for (const auto& [id, p] : partitions_) {
    const auto path = p->dir / "spec.json";
    if (!fs::exists(path)) continue;
    std::ifstream in(path);
    try {
      out.push_back(spec_from_json(nlohmann::json::parse(in)));
    } catch (const std::exception& e) {
      std::cerr << R"({"event":"spec_load_failed","path":")" << path.string() << "\"}\n";
    }
  }
  return out;
}

std::uint64_t Store::active_segment_bytes(const NodeId& node) const {
  const auto* p = find(node);
  if (!p) return 0;
  std::shared_lock lk(p->mu);
  return p->segments.empty() ? 0 : p->segments.back().bytes;
}

fs::path Store::active_segment_path(const NodeId& node) const {
  const auto* p = find(node);
  if (!p) return {};
  std::shared_lock lk(p->mu);
  return p->segments.empty() ? fs::path{} : p->segments.back().path;
}

nlohmann::json record_to_json(const StoredRecord& r) {
  return nlohmann::json{{"reading", reading_to_json(r.reading)},
                        {"derived", depths_to_json(r.derived)},
                        {"evaluation", evaluation_to_json(r.evaluation)},
                        {"ingest_offset", r.ingest_offset},
                        {"spec", spec_to_json(r.spec)},
                        {"sonic_speed_mps", r.sonic_speed_mps}};
}

std::uint64_t dump_jsonl(const Store& store, const NodeId& node, std::ostream& out) {
  std::uint64_t n = 0;
  for (const auto& r : store.scan(node)) {
    out << record_to_json(r).dump() << '\n';
    ++n;
  }
  return n;
}

}  // namespace wlds::store
