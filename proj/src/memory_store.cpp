#include "ctxmem/memory_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ctxmem/errors.hpp"
#include "ctxmem/text_io.hpp"

namespace ctxmem {

namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'M', 'S', 'T', 'O', 'R'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t pack_cell(std::int64_t ix, std::int64_t iy) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) |
         static_cast<std::uint32_t>(iy);
}

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.append(b, n);
  }
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    raw(bytes, sizeof(T));
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    if (data_.size() - pos_ < sizeof(T)) throw CorruptFile(pos_, "unexpected end of data");
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(bytes), std::end(bytes));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string_view take(std::size_t n) {
    if (data_.size() - pos_ < n) throw CorruptFile(pos_, "unexpected end of data");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

// Snapshot contents before verification.
struct Decoded {
  OverlapConfig cfg;
  StoreOptions options;
  std::vector<FrameRecord> records;
  std::vector<std::vector<FrameId>> edges;
};

MemoryStore rebuild(Decoded&& d, std::uint64_t end_offset) {
  try {
    d.cfg.validate();
  } catch (const ValidationError& e) {
    throw CorruptFile(0, std::string("invalid config in header: ") + e.what());
  }
  MemoryStore store(d.cfg, d.options);
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    if (d.records[i].frame_id != i) throw CorruptFile(end_offset, "frame ids are not dense");
    store.append(std::move(d.records[i]));
  }
  if (store.edges() != d.edges) throw CorruptFile(end_offset, "stored co-visibility edges differ from recomputed edges");
  return store;
}

Decoded decode_binary(std::string_view data) {
  ByteReader in(data);
  const auto magic = in.take(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0) throw CorruptFile(0, "bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) throw CorruptFile(8, "unsupported version " + std::to_string(version));
  Decoded d;
  d.cfg.d_min = in.get<double>();
  d.cfg.d_max = in.get<double>();
  d.cfg.pairing = in.get<std::uint8_t>() ? RayPairing::Same : RayPairing::Cross;
  d.cfg.forward = in.get<std::uint8_t>() ? ForwardRule::Both : ForwardRule::Either;
  d.cfg.require_all_in_range = in.get<std::uint8_t>() != 0;
  d.cfg.oracle_samples = in.get<std::int32_t>();
  d.options.cell_size = in.get<double>();
  d.options.keep_panoramas = in.get<std::uint8_t>() != 0;
  const auto count = in.get<std::uint64_t>();
  if (count > data.size()) throw CorruptFile(in.offset() - 8, "record count exceeds file size");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t rec_offset = in.offset();
    FrameRecord r;
    r.frame_id = in.get<std::uint32_t>();
    r.time_index = in.get<std::int64_t>();
    const double x = in.get<double>();
    const double y = in.get<double>();
    const double yaw = in.get<double>();
    const double fov = in.get<double>();
    try {
      r.pose = CameraPose(x, y, yaw, fov);
    } catch (const ValidationError& e) {
      throw CorruptFile(rec_offset, e.what());
    }
    r.payload_digest = in.get<std::uint64_t>();
    if (in.get<std::uint8_t>()) {
      const auto cols = in.get<std::uint32_t>();
      if (cols > data.size()) throw CorruptFile(in.offset() - 4, "column count exceeds file size");
      Panorama pano;
      pano.columns.resize(cols);
      for (auto& c : pano.columns) {
        c.landmark = in.get<std::int32_t>();
        c.depth = in.get<double>();
      }
      r.panorama = std::move(pano);
    }
    const auto n_edges = in.get<std::uint32_t>();
    if (n_edges > i) throw CorruptFile(in.offset() - 4, "edge count exceeds earlier frames");
    std::vector<FrameId> e(n_edges);
    for (auto& id : e) id = in.get<std::uint32_t>();
    d.records.push_back(std::move(r));
    d.edges.push_back(std::move(e));
  }
  if (!in.done()) throw CorruptFile(in.offset(), "trailing bytes after last record");
  return d;
}

Decoded decode_jsonl(std::string_view text) {
  Decoded d;
  std::uint64_t offset = 0;
  std::optional<std::uint64_t> count;
  while (offset < text.size()) {
    const std::size_t nl = text.find('\n', offset);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    const std::string_view line = text.substr(offset, end - offset);
    const std::uint64_t line_offset = offset;
    offset = end + 1;
    if (line.empty()) continue;
    if (nl == std::string_view::npos) throw CorruptFile(line_offset, "unterminated final line");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (!count) {
        if (j.at("format").get<std::string>() != "ctxmem-store") throw CorruptFile(line_offset, "not a store snapshot");
        if (j.at("version").get<std::uint32_t>() != kFormatVersion) throw CorruptFile(line_offset, "unsupported version");
        count = j.at("count").get<std::uint64_t>();
        d.cfg.d_min = j.at("d_min").get<double>();
        d.cfg.d_max = j.at("d_max").get<double>();
        d.cfg.pairing = parse_pairing(j.at("pairing").get<std::string>());
        d.cfg.forward = parse_forward_rule(j.at("forward").get<std::string>());
        d.cfg.require_all_in_range = j.at("require_all_in_range").get<bool>();
        d.cfg.oracle_samples = j.at("oracle_samples").get<int>();
        d.options.cell_size = j.at("cell_size").get<double>();
        d.options.keep_panoramas = j.at("keep_panoramas").get<bool>();
        continue;
      }
      FrameRecord r;
      r.frame_id = j.at("id").get<FrameId>();
      r.time_index = j.at("t").get<std::int64_t>();
      r.pose = CameraPose(j.at("x").get<double>(), j.at("y").get<double>(), j.at("yaw").get<double>(),
                          j.at("fov").get<double>());
      r.payload_digest = parse_hex64(j.at("digest").get<std::string>());
      if (const auto& p = j.at("panorama"); !p.is_null()) r.panorama = panorama_from_json(p);
      d.edges.push_back(j.at("edges").get<std::vector<FrameId>>());
      d.records.push_back(std::move(r));
    } catch (const CorruptFile&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptFile(line_offset, e.what());
    }
  }
  if (!count) throw CorruptFile(0, "missing header");
  if (*count != d.records.size()) {
    throw CorruptFile(text.size(), "header declares " + std::to_string(*count) + " records, found " +
                                       std::to_string(d.records.size()));
  }
  return d;
}

}  // namespace

MemoryStore::MemoryStore(OverlapConfig cfg, StoreOptions options)
    : cfg_(cfg), options_(options), cell_size_(options.cell_size > 0.0 ? options.cell_size : cfg.d_max / 4.0) {
  cfg_.validate();
}

MemoryStore::CellKey MemoryStore::cell_of(Vec2 p) const {
  return pack_cell(static_cast<std::int64_t>(std::floor(p.x / cell_size_)),
                   static_cast<std::int64_t>(std::floor(p.y / cell_size_)));
}

double MemoryStore::search_radius() const { return max_radius_factor_; }

template <typename Fn>
void MemoryStore::for_each_candidate(Vec2 center, double radius, QueryStats* stats, Fn&& fn) const {
  const auto visit = [&](FrameId id) {
    if (distance(fans_[id].origin, center) <= radius) {
      if (stats) ++stats->candidates;
      fn(id);
    }
  };
  if (!std::isfinite(radius)) {
    for (FrameId id = 0; id < records_.size(); ++id) {
      if (stats) ++stats->candidates;
      fn(id);
    }
    return;
  }
  const auto ix0 = static_cast<std::int64_t>(std::floor((center.x - radius) / cell_size_));
  const auto ix1 = static_cast<std::int64_t>(std::floor((center.x + radius) / cell_size_));
  const auto iy0 = static_cast<std::int64_t>(std::floor((center.y - radius) / cell_size_));
  const auto iy1 = static_cast<std::int64_t>(std::floor((center.y + radius) / cell_size_));
  const auto cell_dist = [&](std::int64_t ix, std::int64_t iy) {
    const double x0 = ix * cell_size_;
    const double y0 = iy * cell_size_;
    const double dx = std::max({x0 - center.x, 0.0, center.x - (x0 + cell_size_)});
    const double dy = std::max({y0 - center.y, 0.0, center.y - (y0 + cell_size_)});
    return std::hypot(dx, dy);
  };
  const double span_cells = static_cast<double>(ix1 - ix0 + 1) * static_cast<double>(iy1 - iy0 + 1);
  if (span_cells > static_cast<double>(grid_.size())) {
    // Fewer occupied cells than cells in the window: walk the occupied ones.
    for (const auto& [key, ids] : grid_) {
      const auto ix = static_cast<std::int64_t>(static_cast<std::int32_t>(key >> 32));
      const auto iy = static_cast<std::int64_t>(static_cast<std::int32_t>(key & 0xffffffffULL));
      if (ix < ix0 || ix > ix1 || iy < iy0 || iy > iy1) continue;
      if (stats) ++stats->cells_visited;
      if (cell_dist(ix, iy) > radius) continue;
      for (FrameId id : ids) visit(id);
    }
    return;
  }
  for (std::int64_t ix = ix0; ix <= ix1; ++ix) {
    for (std::int64_t iy = iy0; iy <= iy1; ++iy) {
      if (cell_dist(ix, iy) > radius) continue;
      const auto it = grid_.find(pack_cell(ix, iy));
      if (stats) ++stats->cells_visited;
      if (it == grid_.end()) continue;
      for (FrameId id : it->second) visit(id);
    }
  }
}

FrameId MemoryStore::append(FrameRecord record) {
  if (!records_.empty() && record.time_index < records_.back().time_index) {
    throw OutOfOrder("time index " + std::to_string(record.time_index) + " precedes " +
                     std::to_string(records_.back().time_index));
  }
  const auto id = static_cast<FrameId>(records_.size());
  record.frame_id = id;
  if (!options_.keep_panoramas) record.panorama.reset();
  const Fan fan = make_fan(record.pose);

  std::vector<FrameId> out;
  QueryStats stats;
  for_each_candidate(fan.origin, search_radius(), &stats, [&](FrameId cand) {
    if (fan_overlap(fan, fans_[cand], cfg_).overlaps) out.push_back(cand);
  });
  build_pairs_ += stats.candidates;
  std::sort(out.begin(), out.end());

  grid_[cell_of(fan.origin)].push_back(id);
  max_radius_factor_ = std::max(max_radius_factor_, max_accept_distance(cfg_, record.pose.fov()));
  fans_.push_back(fan);
  edges_.push_back(std::move(out));
  records_.push_back(std::move(record));
  return id;
}

std::vector<FrameId> MemoryStore::query_covisible(const CameraPose& target, QueryStats* stats) const {
  const Fan query = make_fan(target);
  std::vector<FrameId> out;
  for_each_candidate(query.origin, search_radius(), stats, [&](FrameId cand) {
    if (fan_overlap(query, fans_[cand], cfg_).overlaps) out.push_back(cand);
  });
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<FrameId> MemoryStore::query_covisible_naive(const CameraPose& target) const {
  const Fan query = make_fan(target);
  std::vector<FrameId> out;
  for (FrameId id = 0; id < fans_.size(); ++id) {
    if (fan_overlap(query, fans_[id], cfg_).overlaps) out.push_back(id);
  }
  return out;
}

bool MemoryStore::has_edge(FrameId a, FrameId b) const {
  if (a == b) return false;
  const FrameId hi = std::max(a, b);
  const FrameId lo = std::min(a, b);
  const auto& e = edges_.at(hi);
  return std::binary_search(e.begin(), e.end(), lo);
}

std::uint64_t MemoryStore::edge_count() const {
  std::uint64_t n = 0;
  for (const auto& e : edges_) n += e.size();
  return n;
}

bool MemoryStore::grid_consistent() const {
  std::size_t total = 0;
  for (const auto& [key, ids] : grid_) {
    for (FrameId id : ids) {
      if (id >= records_.size() || cell_of(records_[id].pose.position()) != key) return false;
    }
    total += ids.size();
  }
  return total == records_.size();
}

std::string MemoryStore::to_jsonl() const {
  std::ostringstream out;
  out << "{\"format\":\"ctxmem-store\",\"version\":" << kFormatVersion << ",\"count\":" << records_.size()
      << ",\"d_min\":" << format_double(cfg_.d_min) << ",\"d_max\":" << format_double(cfg_.d_max)
      << ",\"pairing\":\"" << to_string(cfg_.pairing) << "\",\"forward\":\"" << to_string(cfg_.forward)
      << "\",\"require_all_in_range\":" << (cfg_.require_all_in_range ? "true" : "false")
      << ",\"oracle_samples\":" << cfg_.oracle_samples << ",\"cell_size\":" << format_double(options_.cell_size)
      << ",\"keep_panoramas\":" << (options_.keep_panoramas ? "true" : "false") << "}\n";
  for (const auto& r : records_) {
    out << "{\"id\":" << r.frame_id << ",\"t\":" << r.time_index << ",\"x\":" << format_double(r.pose.x())
        << ",\"y\":" << format_double(r.pose.y()) << ",\"yaw\":" << format_double(r.pose.yaw())
        << ",\"fov\":" << format_double(r.pose.fov()) << ",\"digest\":\"" << to_hex64(r.payload_digest)
        << "\",\"edges\":[";
    const auto& e = edges_[r.frame_id];
    for (std::size_t i = 0; i < e.size(); ++i) out << (i ? "," : "") << e[i];
    out << "],\"panorama\":";
    if (r.panorama) {
      out << '[';
      for (std::size_t i = 0; i < r.panorama->columns.size(); ++i) {
        const auto& c = r.panorama->columns[i];
        out << (i ? "," : "") << '[' << c.landmark << ',' << format_double(c.depth) << ']';
      }
      out << ']';
    } else {
      out << "null";
    }
    out << "}\n";
  }
  return out.str();
}

MemoryStore MemoryStore::from_jsonl(const std::string& text) { return rebuild(decode_jsonl(text), text.size()); }

void MemoryStore::snapshot(const std::filesystem::path& path, SnapshotFormat format) const {
  std::string bytes;
  if (format == SnapshotFormat::Jsonl) {
    bytes = to_jsonl();
  } else {
    ByteWriter w;
    w.raw(kMagic, sizeof kMagic);
    w.put(kFormatVersion);
    w.put(cfg_.d_min);
    w.put(cfg_.d_max);
    w.put<std::uint8_t>(cfg_.pairing == RayPairing::Same);
    w.put<std::uint8_t>(cfg_.forward == ForwardRule::Both);
    w.put<std::uint8_t>(cfg_.require_all_in_range);
    w.put<std::int32_t>(cfg_.oracle_samples);
    w.put(options_.cell_size);
    w.put<std::uint8_t>(options_.keep_panoramas);
    w.put<std::uint64_t>(records_.size());
    for (const auto& r : records_) {
      w.put(r.frame_id);
      w.put(r.time_index);
      w.put(r.pose.x());
      w.put(r.pose.y());
      w.put(r.pose.yaw());
      w.put(r.pose.fov());
      w.put(r.payload_digest);
      w.put<std::uint8_t>(r.panorama.has_value());
      if (r.panorama) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r.panorama->columns.size()));
        for (const auto& c : r.panorama->columns) {
          w.put<std::int32_t>(c.landmark);
          w.put(c.depth);
        }
      }
      const auto& e = edges_[r.frame_id];
      w.put<std::uint32_t>(static_cast<std::uint32_t>(e.size()));
      for (FrameId id : e) w.put(id);
    }
    bytes = w.data();
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

MemoryStore MemoryStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() >= sizeof kMagic && std::memcmp(data.data(), kMagic, sizeof kMagic) == 0) {
    return rebuild(decode_binary(data), data.size());
  }
  if (data.empty()) throw CorruptFile(0, "empty file");
  return rebuild(decode_jsonl(data), data.size());
}

std::vector<std::vector<FrameId>> build_edges_naive(std::span<const FrameRecord> records, const OverlapConfig& cfg,
                                                    std::uint64_t* pairs_evaluated) {
  std::vector<Fan> fans;
  fans.reserve(records.size());
  for (const auto& r : records) fans.push_back(make_fan(r.pose));
  std::vector<std::vector<FrameId>> edges(records.size());
  std::uint64_t pairs = 0;
  for (std::size_t i = 0; i < fans.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      ++pairs;
      if (fan_overlap(fans[i], fans[j], cfg).overlaps) edges[i].push_back(static_cast<FrameId>(j));
    }
  }
  if (pairs_evaluated) *pairs_evaluated = pairs;
  return edges;
}

}  // namespace ctxmem
