#pragma once

// On-chip SRAM allocation: regions placed into banked slices. Each slice
// honors one read plus one write per cycle (pseudo-dual-port), so hot
// regions are spread across slices with a rotating cursor.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/arch.hpp"

namespace tsim {

enum class RegionKind { Constant, Scratchpad, Instruction };

inline const char* region_kind_name(RegionKind k) {
  switch (k) {
    case RegionKind::Constant: return "constant";
    case RegionKind::Scratchpad: return "scratchpad";
    case RegionKind::Instruction: return "instruction";
  }
  return "?";
}

struct RegionRequest {
  std::string name;
  long bytes = 0;
  RegionKind kind = RegionKind::Scratchpad;
};

struct Region {
  int id = -1;
  std::string name;
  RegionKind kind = RegionKind::Scratchpad;
  long bytes = 0;
  int slice = -1;
  long offset = 0;
};

struct MemoryMap {
  std::vector<Region> regions;
  std::vector<long> slice_used;  // bytes per slice
  long slice_bytes = 0;

  const Region& by_id(int id) const { return regions.at(std::size_t(id)); }
  long used_bytes(RegionKind k) const {
    long n = 0;
    for (auto& r : regions)
      if (r.kind == k) n += r.bytes;
    return n;
  }
  long total_used() const {
    long n = 0;
    for (auto& r : regions) n += r.bytes;
    return n;
  }
  double fraction(RegionKind k, const ArchConfig& c) const {
    return double(used_bytes(k)) / double(c.total_sram_bytes());
  }
};

// First-fit placement over a rotating slice cursor; constants are placed
// before scratchpad regions. Deterministic: same inputs, same map.
inline MemoryMap alloc_memory(const std::vector<RegionRequest>& requests,
                              const ArchConfig& cfg) {
  MemoryMap map;
  map.slice_bytes = cfg.slice_bytes;
  map.slice_used.assign(std::size_t(cfg.mem_slice_count), 0);
  map.regions.reserve(requests.size());

  // stable two-phase order: constants, then everything else
  std::vector<int> order;
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 0; i < requests.size(); ++i)
      if ((requests[i].kind == RegionKind::Constant) == (pass == 0))
        order.push_back(int(i));

  std::vector<Region> placed(requests.size());
  int cursor = 0;
  for (int idx : order) {
    const auto& rq = requests[std::size_t(idx)];
    if (rq.bytes < 0) throw std::invalid_argument("alloc_memory: negative size: " + rq.name);
    if (rq.bytes > cfg.slice_bytes)
      throw std::runtime_error("alloc_memory: region larger than a slice: " + rq.name);
    int tried = 0;
    int slice = -1;
    while (tried < cfg.mem_slice_count) {
      int s = (cursor + tried) % cfg.mem_slice_count;
      if (map.slice_used[std::size_t(s)] + rq.bytes <= cfg.slice_bytes) {
        slice = s;
        break;
      }
      ++tried;
    }
    if (slice < 0)
      throw std::runtime_error("alloc_memory: out of memory placing region: " + rq.name);
    Region r;
    r.id = idx;
    r.name = rq.name;
    r.kind = rq.kind;
    r.bytes = rq.bytes;
    r.slice = slice;
    r.offset = map.slice_used[std::size_t(slice)];
    map.slice_used[std::size_t(slice)] += rq.bytes;
    placed[std::size_t(idx)] = r;
    cursor = (slice + 1) % cfg.mem_slice_count;
  }
  map.regions = std::move(placed);
  return map;
}

// Incremental variant of alloc_memory for builders that discover regions
// as they lower: same rotating first-fit; callers place constants first.
class MemoryAllocator {
 public:
  explicit MemoryAllocator(const ArchConfig& cfg) : slice_count_(cfg.mem_slice_count) {
    map_.slice_bytes = cfg.slice_bytes;
    map_.slice_used.assign(std::size_t(cfg.mem_slice_count), 0);
  }
  int place(const RegionRequest& rq) {
    if (rq.bytes < 0) throw std::invalid_argument("alloc: negative size: " + rq.name);
    if (rq.bytes > map_.slice_bytes)
      throw std::runtime_error("alloc: region larger than a slice: " + rq.name);
    int slice = -1;
    for (int tried = 0; tried < slice_count_; ++tried) {
      int s = (cursor_ + tried) % slice_count_;
      if (map_.slice_used[std::size_t(s)] + rq.bytes <= map_.slice_bytes) {
        slice = s;
        break;
      }
    }
    if (slice < 0) throw std::runtime_error("alloc: out of memory placing region: " + rq.name);
    Region r;
    r.id = int(map_.regions.size());
    r.name = rq.name;
    r.kind = rq.kind;
    r.bytes = rq.bytes;
    r.slice = slice;
    r.offset = map_.slice_used[std::size_t(slice)];
    map_.slice_used[std::size_t(slice)] += rq.bytes;
    map_.regions.push_back(r);
    cursor_ = (slice + 1) % slice_count_;
    return r.id;
  }
  // Place on the first slice s with s % mod == group that has room. Used to
  // keep concurrently-streamed regions on distinct read ports.
  int place_mod(const RegionRequest& rq, int group, int mod) {
    if (rq.bytes > map_.slice_bytes)
      throw std::runtime_error("alloc: region larger than a slice: " + rq.name);
    for (int s = group % mod; s < slice_count_; s += mod)
      if (map_.slice_used[std::size_t(s)] + rq.bytes <= map_.slice_bytes)
        return commit(rq, s);
    throw std::runtime_error("alloc: out of memory placing region: " + rq.name);
  }
  // Place on an exact slice.
  int place_on(const RegionRequest& rq, int slice) {
    if (slice < 0 || slice >= slice_count_)
      throw std::runtime_error("alloc: no such slice for region: " + rq.name);
    if (map_.slice_used[std::size_t(slice)] + rq.bytes > map_.slice_bytes)
      throw std::runtime_error("alloc: slice full placing region: " + rq.name);
    return commit(rq, slice);
  }
  int max_used_slice() const {
    int m = -1;
    for (int s = 0; s < slice_count_; ++s)
      if (map_.slice_used[std::size_t(s)] > 0) m = s;
    return m;
  }
  int slice_count() const { return slice_count_; }
  const Region& region(int id) const { return map_.regions.at(std::size_t(id)); }
  MemoryMap take() { return std::move(map_); }

 private:
  int commit(const RegionRequest& rq, int slice) {
    Region r;
    r.id = int(map_.regions.size());
    r.name = rq.name;
    r.kind = rq.kind;
    r.bytes = rq.bytes;
    r.slice = slice;
    r.offset = map_.slice_used[std::size_t(slice)];
    map_.slice_used[std::size_t(slice)] += rq.bytes;
    map_.regions.push_back(r);
    return r.id;
  }
  int slice_count_;
  MemoryMap map_;
  int cursor_ = 0;
};

}  // namespace tsim
