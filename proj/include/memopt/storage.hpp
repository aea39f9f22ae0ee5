#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "memopt/errors.hpp"

namespace memopt {

enum class SpillMode : uint8_t { Sync, Async };

enum class EventKind : uint8_t { Compute, Write, Read, Erase, Wait, Compress, Decompress };

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Compute: return "compute";
    case EventKind::Write: return "write";
    case EventKind::Read: return "read";
    case EventKind::Erase: return "erase";
    case EventKind::Wait: return "wait";
    case EventKind::Compress: return "compress";
    case EventKind::Decompress: return "decompress";
  }
  return "?";
}

struct TimelineEvent {
  EventKind kind;
  double start_us = 0;
  double end_us = 0;
  std::string tag;
};

// Core 0 runs inference; core 1 only ever erases flash blocks (async mode).
struct DeviceTimeline {
  std::vector<TimelineEvent> core0;
  std::vector<TimelineEvent> core1;

  void push0(TimelineEvent e) { push(core0, std::move(e)); }
  void push1(TimelineEvent e) { push(core1, std::move(e)); }

 private:
  static void push(std::vector<TimelineEvent>& v, TimelineEvent e) {
    if (e.end_us < e.start_us) throw Error("timeline event ends before it starts");
    if (!v.empty() && e.start_us < v.back().end_us - 1e-9)
      throw Error("timeline events must not overlap on a core");
    v.push_back(std::move(e));
  }
};

struct LatencyBreakdown {
  double compute = 0, spill = 0, fetch = 0, compress = 0, decompress = 0, wait = 0;
  double total = 0;  // core-0 makespan
};

// Core-0 accounting only; core-1 erases are hidden work. Inline erases
// (sync mode) count as spill cost.
inline LatencyBreakdown report(const DeviceTimeline& tl) {
  LatencyBreakdown b;
  for (const auto& e : tl.core0) {
    double d = e.end_us - e.start_us;
    switch (e.kind) {
      case EventKind::Compute: b.compute += d; break;
      case EventKind::Write:
      case EventKind::Erase: b.spill += d; break;
      case EventKind::Read: b.fetch += d; break;
      case EventKind::Compress: b.compress += d; break;
      case EventKind::Decompress: b.decompress += d; break;
      case EventKind::Wait: b.wait += d; break;
    }
    b.total = std::max(b.total, e.end_us);
  }
  return b;
}

struct FlashSpec {
  int64_t block_size = 16384;
  double write_us_per_byte = 0.08;
  double read_us_per_byte = 0.03;
  double erase_us_per_block = 6000.0;
  int64_t capacity = 1 << 20;
};

struct RemoteSpec {
  double bytes_per_ms = 1000.0;
  double rtt_ms = 5.0;
  bool host_buffered = true;
};

struct StorageOpResult {
  double done_us = 0;
  std::vector<TimelineEvent> core0;  // events the op occupies on core 0
  std::vector<TimelineEvent> core1;  // erase work it queued on core 1
};

class StorageBackend {
 public:
  virtual ~StorageBackend() = default;
  virtual StorageOpResult spill(int id, std::vector<uint8_t> payload, double now_us,
                                SpillMode mode) = 0;
  virtual StorageOpResult fetch(int id, double now_us, SpillMode mode,
                                std::vector<uint8_t>& payload_out) = 0;
  virtual bool holds(int id) const = 0;
};

// Block-structured flash. Blocks start dirty (leftovers from the previous
// inference) and must be erased before a write. Sync mode erases inline on
// core 0; async mode keeps a FIFO erase queue on core 1 — all capacity is
// queued for erase at t=0, and blocks freed by a fetch are re-queued the
// moment the fetch completes. A spill grabs the earliest-erased blocks and
// waits only if their erases have not finished yet.
class FlashBackend : public StorageBackend {
 public:
  explicit FlashBackend(FlashSpec spec) : spec_(spec) {
    if (spec_.block_size <= 0 || spec_.capacity < spec_.block_size)
      throw ConfigError("flash spec needs capacity of at least one block");
    total_blocks_ = spec_.capacity / spec_.block_size;
    free_dirty_ = total_blocks_;
  }

  StorageOpResult spill(int id, std::vector<uint8_t> payload, double now_us,
                        SpillMode mode) override {
    check_mode(mode);
    if (stored_.count(id))
      throw NotErasedError("tensor " + std::to_string(id) + " still occupies flash blocks");
    int64_t blocks = int64_t((payload.size() + size_t(spec_.block_size) - 1) /
                             size_t(spec_.block_size));
    if (blocks > available_blocks())
      throw CapacityError("spill of " + std::to_string(payload.size()) + " B needs " +
                          std::to_string(blocks) + " blocks, only " +
                          std::to_string(available_blocks()) + " free");
    StorageOpResult r;
    double cursor = now_us;
    if (mode == SpillMode::Sync) {
      double erase = double(blocks) * spec_.erase_us_per_block;
      r.core0.push_back({EventKind::Erase, cursor, cursor + erase,
                         "erase " + std::to_string(blocks) + " blocks"});
      cursor += erase;
      free_dirty_ -= blocks;
    } else {
      ensure_async_init(r);
      double ready = 0;
      for (int64_t i = 0; i < blocks; ++i) {
        ready = std::max(ready, *erased_ready_.begin());
        erased_ready_.erase(erased_ready_.begin());
      }
      if (ready > cursor) {
        r.core0.push_back({EventKind::Wait, cursor, ready, "wait for block erase"});
        cursor = ready;
      }
    }
    double write = double(payload.size()) * spec_.write_us_per_byte;
    r.core0.push_back({EventKind::Write, cursor, cursor + write,
                       "spill tensor " + std::to_string(id)});
    cursor += write;
    stored_[id] = Stored{std::move(payload), blocks};
    r.done_us = cursor;
    return r;
  }

  StorageOpResult fetch(int id, double now_us, SpillMode mode,
                        std::vector<uint8_t>& payload_out) override {
    check_mode(mode);
    auto it = stored_.find(id);
    if (it == stored_.end())
      throw NotFoundError("tensor " + std::to_string(id) + " is not in flash");
    StorageOpResult r;
    double read = double(it->second.payload.size()) * spec_.read_us_per_byte;
    r.core0.push_back({EventKind::Read, now_us, now_us + read,
                       "fetch tensor " + std::to_string(id)});
    r.done_us = now_us + read;
    int64_t blocks = it->second.blocks;
    if (mode == SpillMode::Sync) {
      free_dirty_ += blocks;
    } else {
      ensure_async_init(r);
      queue_erase(blocks, r.done_us, r);
    }
    payload_out = std::move(it->second.payload);
    stored_.erase(it);
    return r;
  }

  bool holds(int id) const override { return stored_.count(id) != 0; }
  int64_t total_blocks() const { return total_blocks_; }

 private:
  struct Stored {
    std::vector<uint8_t> payload;
    int64_t blocks = 0;
  };

  void check_mode(SpillMode mode) {
    if (!first_mode_) first_mode_ = mode;
    if (*first_mode_ != mode)
      throw ConfigError("flash backend cannot switch between sync and async mid-run");
  }

  int64_t available_blocks() const {
    int64_t used = 0;
    for (const auto& [id, s] : stored_) used += s.blocks;
    return total_blocks_ - used;
  }

  void ensure_async_init(StorageOpResult& r) {
    if (async_init_) return;
    async_init_ = true;
    queue_erase(total_blocks_, 0.0, r);
    free_dirty_ = 0;
  }

  void queue_erase(int64_t blocks, double free_time, StorageOpResult& r) {
    double start = std::max(core1_cursor_, free_time);
    double end = start + double(blocks) * spec_.erase_us_per_block;
    r.core1.push_back({EventKind::Erase, start, end,
                       "erase " + std::to_string(blocks) + " blocks"});
    for (int64_t i = 0; i < blocks; ++i)
      erased_ready_.insert(start + double(i + 1) * spec_.erase_us_per_block);
    core1_cursor_ = end;
  }

  FlashSpec spec_;
  int64_t total_blocks_ = 0;
  int64_t free_dirty_ = 0;  // sync-mode pool of unerased free blocks
  std::multiset<double> erased_ready_;
  double core1_cursor_ = 0;
  bool async_init_ = false;
  std::optional<SpillMode> first_mode_;
  std::map<int, Stored> stored_;
};

// Host link: latency is pure transfer time; a buffered host acks writes at
// link speed, fetches always pay one round trip. No erase, ever.
class RemoteBackend : public StorageBackend {
 public:
  explicit RemoteBackend(RemoteSpec spec) : spec_(spec) {
    if (spec_.bytes_per_ms <= 0) throw ConfigError("remote bandwidth must be positive");
  }

  StorageOpResult spill(int id, std::vector<uint8_t> payload, double now_us,
                        SpillMode) override {
    StorageOpResult r;
    double us = double(payload.size()) / spec_.bytes_per_ms * 1000.0;
    if (!spec_.host_buffered) us += spec_.rtt_ms * 1000.0;
    r.core0.push_back({EventKind::Write, now_us, now_us + us,
                       "send tensor " + std::to_string(id)});
    r.done_us = now_us + us;
    stored_[id] = std::move(payload);
    return r;
  }

  StorageOpResult fetch(int id, double now_us, SpillMode,
                        std::vector<uint8_t>& payload_out) override {
    auto it = stored_.find(id);
    if (it == stored_.end())
      throw NotFoundError("tensor " + std::to_string(id) + " is not on the host");
    StorageOpResult r;
    double us = spec_.rtt_ms * 1000.0 +
                double(it->second.size()) / spec_.bytes_per_ms * 1000.0;
    r.core0.push_back({EventKind::Read, now_us, now_us + us,
                       "receive tensor " + std::to_string(id)});
    r.done_us = now_us + us;
    payload_out = std::move(it->second);
    stored_.erase(it);
    return r;
  }

  bool holds(int id) const override { return stored_.count(id) != 0; }

 private:
  RemoteSpec spec_;
  std::map<int, std::vector<uint8_t>> stored_;
};

// ---- presets -------------------------------------------------------------

struct StoragePresets {
  FlashSpec internal;
  FlashSpec external;
  RemoteSpec remote;
};

// On-chip flash writes fast but erases are the bottleneck; off-chip flash
// writes nearly as slowly as it erases; the host link is bandwidth-bound.
inline StoragePresets default_storage_presets() {
  StoragePresets p;
  p.internal = {16384, 0.08, 0.03, 6000.0, 1 << 20};
  p.external = {16384, 0.8, 0.15, 12000.0, 16 << 20};
  p.remote = {1000.0, 5.0, true};
  return p;
}

inline FlashSpec flash_spec_from_json(const nlohmann::json& j) {
  FlashSpec s;
  s.block_size = j.at("block_size").get<int64_t>();
  s.write_us_per_byte = j.at("write_us_per_byte").get<double>();
  s.read_us_per_byte = j.at("read_us_per_byte").get<double>();
  s.erase_us_per_block = j.at("erase_us_per_block").get<double>();
  s.capacity = j.at("capacity").get<int64_t>();
  if (s.block_size <= 0 || s.capacity <= 0 || s.write_us_per_byte <= 0 ||
      s.read_us_per_byte <= 0 || s.erase_us_per_block <= 0)
    throw ConfigError("flash spec fields must be positive");
  if (s.capacity % s.block_size != 0)
    throw ConfigError("flash capacity must be a whole number of blocks");
  return s;
}

inline StoragePresets load_storage_presets(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
    StoragePresets p = default_storage_presets();
    if (j.contains("internal")) p.internal = flash_spec_from_json(j.at("internal"));
    if (j.contains("external")) p.external = flash_spec_from_json(j.at("external"));
    if (j.contains("remote")) {
      p.remote.bytes_per_ms = j.at("remote").at("bytes_per_ms").get<double>();
      p.remote.rtt_ms = j.at("remote").at("rtt_ms").get<double>();
      p.remote.host_buffered = j.at("remote").value("host_buffered", true);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad storage config '" + path + "': " + e.what());
  }
}

}  // namespace memopt
