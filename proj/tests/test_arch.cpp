#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tsim/arch.hpp"
#include "tsim/memory_map.hpp"

using namespace tsim;

TEST_CASE("default machine matches the published organization") {
  ArchConfig c;
  CHECK(c.lane_width == 320);
  CHECK(c.vxm_alu_count == 16);
  CHECK(c.mxm_plane_count == 4);
  CHECK(c.mem_slice_count == 88);
  CHECK(c.total_sram_bytes() == 220L * 1024 * 1024);
  CHECK(c.streams_per_direction == 32);
  CHECK(c.clock_hz == doctest::Approx(900e6));
  CHECK(validate_config(c).empty());
}

TEST_CASE("cycle-to-microsecond conversion uses the configured clock") {
  ArchConfig c;
  CHECK(c.cycles_to_us(900) == doctest::Approx(1.0));
  CHECK(c.cycles_to_us(116010) == doctest::Approx(128.9).epsilon(1e-3));
}

TEST_CASE("config validation flags each bad field") {
  ArchConfig c;
  c.lane_width = 30;
  auto errs = validate_config(c);
  REQUIRE(errs.size() == 1);
  CHECK(errs[0] == "lane width not divisible by 4");
  c.lane_width = 0;
  c.mxm_plane_count = 0;
  c.clock_hz = -1;
  errs = validate_config(c);
  CHECK(errs.size() >= 3);
}

TEST_CASE("physical vector count is ceil(k/L) per column") {
  CHECK(physical_vectors(Shape{768, 128}, 320) == 3 * 128);
  CHECK(physical_vectors(Shape{320, 1}, 320) == 1);
  CHECK(physical_vectors(Shape{321, 1}, 320) == 2);
  CHECK(physical_vectors(Shape{16, 8}, 32) == 8);
}

TEST_CASE("arch config files round trip and reject unknown keys") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "tsim_arch_test";
  fs::create_directories(dir);
  ArchConfig c = tiny_arch_config();
  c.sxm_port_count = 5;
  save_arch_config((dir / "a.cfg").string(), c);
  ArchConfig c2 = load_arch_config((dir / "a.cfg").string());
  CHECK(c2.lane_width == c.lane_width);
  CHECK(c2.slice_bytes == c.slice_bytes);
  CHECK(c2.sxm_port_count == 5);
  CHECK(c2.clock_hz == doctest::Approx(c.clock_hz));

  {
    std::ofstream os(dir / "bad.cfg");
    os << "lane_width 320\nwarp_size 32\n";
  }
  CHECK_THROWS(load_arch_config((dir / "bad.cfg").string()));
  {
    std::ofstream os(dir / "bad2.cfg");
    os << "lane_width 30\n";
  }
  CHECK_THROWS(load_arch_config((dir / "bad2.cfg").string()));
}

TEST_CASE("normalization constants follow the configured ALU latencies") {
  ArchConfig c;
  CHECK(c.ln_norm1_cycles() == 3);
  CHECK(c.ln_norm2_cycles() == 2);
  CHECK(c.ln_constant_cycles() == 5);
  c.alu_op_latency[AluOp::Rsqrt] = 4;
  c.alu_op_latency[AluOp::MulRecip] = 2;
  CHECK(c.ln_norm1_cycles() == 4);
  CHECK(c.ln_norm2_cycles() == 5);
}

TEST_CASE("memory allocation is deterministic first-fit over slices") {
  ArchConfig c = tiny_arch_config();
  std::vector<RegionRequest> reqs = {
      {"w", 1000, RegionKind::Constant},
      {"x", 2000, RegionKind::Scratchpad},
      {"y", 500, RegionKind::Constant},
  };
  MemoryMap m1 = alloc_memory(reqs, c);
  MemoryMap m2 = alloc_memory(reqs, c);
  for (std::size_t i = 0; i < m1.regions.size(); ++i) {
    CHECK(m1.regions[i].slice == m2.regions[i].slice);
    CHECK(m1.regions[i].offset == m2.regions[i].offset);
  }
  CHECK(m1.used_bytes(RegionKind::Constant) == 1500);
  CHECK(m1.used_bytes(RegionKind::Scratchpad) == 2000);
  // constants land before scratchpad even though "x" was requested between
  CHECK(m1.by_id(0).slice == 0);
  CHECK(m1.by_id(2).slice == 1);
}

TEST_CASE("memory allocation fails loudly when oversubscribed") {
  ArchConfig c = tiny_arch_config();
  CHECK_THROWS(alloc_memory({{"huge", c.slice_bytes + 1, RegionKind::Constant}}, c));
  std::vector<RegionRequest> many;
  for (int i = 0; i < c.mem_slice_count + 1; ++i)
    many.push_back({"r" + std::to_string(i), c.slice_bytes, RegionKind::Scratchpad});
  CHECK_THROWS(alloc_memory(many, c));
}

TEST_CASE("slice occupancy never exceeds capacity across many requests") {
  ArchConfig c = tiny_arch_config();
  std::vector<RegionRequest> reqs;
  for (int i = 0; i < 500; ++i)
    reqs.push_back({"r" + std::to_string(i), (i * 7919) % 9000 + 1,
                    i % 3 ? RegionKind::Scratchpad : RegionKind::Constant});
  MemoryMap m = alloc_memory(reqs, c);
  for (long used : m.slice_used) CHECK(used <= c.slice_bytes);
  long total = 0;
  for (auto& r : m.regions) {
    CHECK(r.slice >= 0);
    CHECK(r.offset + r.bytes <= c.slice_bytes);
    total += r.bytes;
  }
  CHECK(total == m.total_used());
}
