#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tsim/kernels.hpp"
#include "tsim/scheduler.hpp"
#include "tsim/simulator.hpp"

using namespace tsim;
using namespace buf_access;

namespace {

// Register a whole (rows x cols) tensor as one fresh region of a hand-built
// schedule; optionally preload it.
TensorBuf add_whole(Schedule& s, const std::string& name, char dtype, int rows,
                    int cols) {
  TensorBuf t;
  t.name = name;
  t.dtype = dtype;
  t.rows = rows;
  t.cols = cols;
  t.regions = {int(s.region_meta.size())};
  s.region_meta.push_back({dtype, long(rows) * cols});
  return t;
}

template <class Fill>
void preload_whole(Schedule& s, const TensorBuf& t, Fill fill) {
  Store::Buf b;
  b.dtype = t.dtype;
  long n = long(t.rows) * t.cols;
  if (t.dtype == 0) b.i8.assign(std::size_t(n), 0);
  else if (t.dtype == 1) b.i32.assign(std::size_t(n), 0);
  else b.f32.assign(std::size_t(n), 0.0f);
  for (int l = 0; l < t.rows; ++l)
    for (int c = 0; c < t.cols; ++c) {
      std::size_t at = std::size_t(l) * std::size_t(t.cols) + std::size_t(c);
      if (t.dtype == 0) b.i8[at] = int8_t(fill(l, c));
      else if (t.dtype == 1) b.i32[at] = int32_t(fill(l, c));
      else b.f32[at] = float(fill(l, c));
    }
  s.init.push_back({t.regions[0], std::move(b)});
}

int add_step(Schedule& s, long start, long dur, Unit unit, int unit_id,
             const std::string& node, std::function<void(Store&)> payload,
             std::vector<Dep> deps = {}) {
  Instruction ins;
  ins.id = int(s.instrs.size());
  ins.start = start;
  ins.dur = dur;
  ins.unit = unit;
  ins.unit_id = unit_id;
  ins.node = node;
  ins.claims.push_back({unit, unit_id, start, start + dur});
  ins.deps = std::move(deps);
  ins.payload = std::move(payload);
  s.instrs.push_back(std::move(ins));
  return s.instrs.back().id;
}

Schedule tiny_schedule(int layers, bool fused, uint64_t seed = 7) {
  ArchConfig cfg = tiny_arch_config();
  auto model = generate_model(tiny_hyper(layers), seed, cfg.lane_width);
  auto pp = std::make_shared<EncoderParams>(std::move(model.params));
  QuantTensor xq = quantize(model.x_fp, pp->layers[0].scales.s_in);
  EncoderScheduleBuilder builder(cfg, pp, fused);
  return builder.build(xq, model.x_fp);
}

}  // namespace

TEST_CASE("single hand-built GEMM matches gemm_ref exactly") {
  int K = 24, N = 16, S = 8;
  QuantTensor act(Shape{K, S}, 0.05f), w(Shape{K, N}, 0.02f);
  SplitMix64 rng(42);
  for (auto& v : act.data) v = int8_t(int(rng.next() % 255) - 127);
  for (auto& v : w.data) v = int8_t(int(rng.next() % 255) - 127);

  Schedule s;
  s.cfg = tiny_arch_config();
  TensorBuf at = add_whole(s, "act", 0, K, S);
  TensorBuf wt = add_whole(s, "w", 0, K, N);
  TensorBuf ot = add_whole(s, "out", 1, N, S);
  preload_whole(s, at, [&](int l, int c) { return act.at(l, c); });
  preload_whole(s, wt, [&](int l, int c) { return w.at(l, c); });
  add_step(s, 0, S, Unit::MxmExec, 0, "gemm", [=](Store& st) {
    for (int n = 0; n < N; ++n)
      for (int t = 0; t < S; ++t) {
        int32_t acc = 0;
        for (int k = 0; k < K; ++k)
          acc += int32_t(rd_i8(st, at, k, t, "gemm")) * rd_i8(st, wt, k, n, "gemm");
        wr_i32(st, ot, n, t, acc);
      }
    mark_init(st, ot);
  });
  Snapshot snap;
  snap.at_cycle = S;
  snap.tensors.push_back({"out", ot});
  s.snapshots.push_back(snap);

  SimResult r = simulate(s);
  AccTensor expect = gemm_ref(act, w);
  REQUIRE(r.outputs.count("out") == 1);
  const auto& got = r.outputs.at("out");
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < S; ++t)
      CHECK(got.i32[std::size_t(n) * std::size_t(S) + std::size_t(t)] ==
            expect.at(n, t));
  CHECK(r.total_cycles == S);
}

TEST_CASE("simulation is deterministic") {
  Schedule s = tiny_schedule(2, true);
  SimResult a = simulate(s);
  SimResult b = simulate(s);
  CHECK(a.total_cycles == b.total_cycles);
  CHECK(format_report(a.report) == format_report(b.report));
}

TEST_CASE("runtime hazard aborts with cycle and unit") {
  Schedule s;
  s.cfg = tiny_arch_config();
  add_step(s, 5, 4, Unit::VxmAlu, 2, "a", nullptr);
  add_step(s, 7, 4, Unit::VxmAlu, 2, "b", nullptr);
  try {
    simulate(s);
    FAIL("expected a hazard");
  } catch (const HazardError& e) {
    CHECK(e.cycle == 7);
    CHECK(e.unit == "vxm_alu");
    CHECK(std::string(e.what()).find("cycle 7") != std::string::npos);
  }
}

TEST_CASE("uninitialized reads abort") {
  Schedule s;
  s.cfg = tiny_arch_config();
  TensorBuf t = add_whole(s, "ghost", 2, 4, 4);  // never preloaded
  add_step(s, 0, 1, Unit::VxmAlu, 0, "reader",
           [=](Store& st) { (void)rd_f32(st, t, 0, 0, "reader"); });
  CHECK_THROWS_WITH_AS(simulate(s), doctest::Contains("uninitialized read"),
                       std::runtime_error);
}

TEST_CASE("stepping an idle cycle only advances the counter") {
  Schedule s;
  s.cfg = tiny_arch_config();
  TensorBuf t = add_whole(s, "x", 2, 2, 2);
  preload_whole(s, t, [](int, int) { return 1.0f; });
  add_step(s, 3, 1, Unit::VxmAlu, 0, "late",
           [=](Store& st) { wr_f32(st, t, 0, 0, 2.0f); });
  MachineState m = make_machine(s);
  Store before = m.store;
  step(m);
  step(m);
  CHECK(m.cycle == 2);
  CHECK(m.active.empty());
  CHECK(m.store.bufs[0].f32 == before.bufs[0].f32);
  step(m);
  step(m);  // cycle 3 executes and retires the payload
  CHECK(m.store.bufs[0].f32[0] == 2.0f);
}

TEST_CASE("payloads retire in completion order") {
  Schedule s;
  s.cfg = tiny_arch_config();
  TensorBuf t = add_whole(s, "x", 1, 1, 1);
  preload_whole(s, t, [](int, int) { return 0; });
  // same end cycle: lower id applies first, higher id wins
  add_step(s, 0, 4, Unit::VxmAlu, 0, "a",
           [=](Store& st) { wr_i32(st, t, 0, 0, 1); });
  add_step(s, 2, 2, Unit::VxmAlu, 1, "b",
           [=](Store& st) { wr_i32(st, t, 0, 0, rd_i32(st, t, 0, 0, "b") + 10); });
  SimResult r = simulate(s);
  CHECK(r.store.bufs[0].i32[0] == 11);
}

TEST_CASE("constant-column input flows through layernorm and yields beta") {
  int k = 8, j = 4;
  Schedule s;
  s.cfg = tiny_arch_config();
  int lw = s.cfg.lane_width;
  TensorBuf acc = add_whole(s, "acc", 1, k, j);
  TensorBuf y = add_whole(s, "y", 2, k, j);
  TensorBuf z = add_whole(s, "z", 2, k, j);
  TensorBuf gd = add_whole(s, "gd", 2, k, j);
  TensorBuf out = add_whole(s, "out", 2, k, j);
  preload_whole(s, acc, [](int, int c) { return 10 * (c + 1); });  // constant per column
  preload_whole(s, y, [](int, int) { return 0.25f; });
  std::vector<float> gamma(size_t{0} + std::size_t(k));
  std::vector<float> beta(size_t{0} + std::size_t(k));
  for (int l = 0; l < k; ++l) {
    gamma[std::size_t(l)] = 1.0f + 0.1f * float(l);
    beta[std::size_t(l)] = 0.5f - 0.2f * float(l);
  }
  float s_acc = 0.125f, eps = 1e-5f;
  int p1 = add_step(s, 0, j, Unit::VxmAlu, 0, "ln_pass1", [=](Store& st) {
    for (int t = 0; t < j; ++t)
      for (int l = 0; l < k; ++l)
        wr_f32(st, z, l, t,
               dequantize_acc_scalar(rd_i32(st, acc, l, t, "ln"), s_acc) +
                   rd_f32(st, y, l, t, "ln"));
    mark_init(st, z);
  });
  int p2 = add_step(s, j + 1, j, Unit::VxmAlu, 4, "ln_pass2", [=](Store& st) {
    for (int t = 0; t < j; ++t) {
      auto col = [&](int i) { return rd_f32(st, z, i, t, "ln"); };
      float mean = column_mean(col, k, lw);
      for (int l = 0; l < k; ++l)
        wr_f32(st, gd, l, t, gamma[std::size_t(l)] * (col(l) - mean));
    }
    mark_init(st, gd);
  }, {{p1, j + 1}});
  add_step(s, 2 * j + 2, j, Unit::VxmAlu, 8, "ln_pass3", [=](Store& st) {
    for (int t = 0; t < j; ++t) {
      auto col = [&](int i) { return rd_f32(st, z, i, t, "ln"); };
      float mean = column_mean(col, k, lw);
      float denom = rsqrt_scalar(column_var(col, mean, k, lw) + eps);
      for (int l = 0; l < k; ++l)
        wr_f32(st, out, l, t,
               rd_f32(st, gd, l, t, "ln") * denom + beta[std::size_t(l)]);
    }
    mark_init(st, out);
  }, {{p2, 2 * j + 2}});
  Snapshot snap;
  snap.at_cycle = 3 * j + 2;
  snap.tensors.push_back({"out", out});
  s.snapshots.push_back(snap);

  SimResult r = simulate(s);
  const auto& got = r.outputs.at("out");
  for (int l = 0; l < k; ++l)
    for (int t = 0; t < j; ++t)
      CHECK(got.f32[std::size_t(l) * std::size_t(j) + std::size_t(t)] ==
            beta[std::size_t(l)]);
}

TEST_CASE("softmax of uniform rows yields 1/S, single-element rows yield 1") {
  for (int S : {8, 1}) {
    Schedule s;
    s.cfg = tiny_arch_config();
    int lw = s.cfg.lane_width;
    TensorBuf sc = add_whole(s, "scores", 2, S, S);
    TensorBuf e = add_whole(s, "exp", 2, S, S);
    TensorBuf p = add_whole(s, "probs", 2, S, S);
    preload_whole(s, sc, [](int, int) { return 1.5f; });
    int p1 = add_step(s, 0, S, Unit::VxmAlu, 0, "softmax_pass2", [=](Store& st) {
      for (int t = 0; t < S; ++t) {
        auto col = [&](int u) { return rd_f32(st, sc, u, t, "sm"); };
        float m = column_max_canonical(col, S, lw);
        for (int u = 0; u < S; ++u)
          wr_f32(st, e, u, t, std::exp(col(u) - m));
      }
      mark_init(st, e);
    });
    add_step(s, S + 1, S, Unit::VxmAlu, 4, "softmax_pass3", [=](Store& st) {
      for (int t = 0; t < S; ++t) {
        auto col = [&](int u) { return rd_f32(st, e, u, t, "sm"); };
        float recip = 1.0f / column_sum_canonical(col, S, lw);
        for (int u = 0; u < S; ++u) wr_f32(st, p, u, t, col(u) * recip);
      }
      mark_init(st, p);
    }, {{p1, S + 1}});
    Snapshot snap;
    snap.at_cycle = 2 * S + 1;
    snap.tensors.push_back({"probs", p});
    s.snapshots.push_back(snap);

    SimResult r = simulate(s);
    const auto& got = r.outputs.at("probs");
    for (std::size_t i = 0; i < got.f32.size(); ++i)
      CHECK(got.f32[i] == 1.0f / float(S));
  }
}

TEST_CASE("total cycles never decrease with sequence length or width") {
  auto cycles = [](int seq, int dff) {
    ArchConfig cfg = tiny_arch_config();
    ModelHyper h = tiny_hyper(1);
    h.seq_len = seq;
    h.d_ff = dff;
    auto model = generate_model(h, 5, cfg.lane_width);
    auto pp = std::make_shared<EncoderParams>(std::move(model.params));
    QuantTensor xq = quantize(model.x_fp, pp->layers[0].scales.s_in);
    EncoderScheduleBuilder builder(cfg, pp, true);
    return simulate(builder.build(xq, model.x_fp)).total_cycles;
  };
  CHECK(cycles(4, 64) <= cycles(8, 64));
  CHECK(cycles(8, 64) <= cycles(8, 128));
  CHECK(cycles(8, 128) <= cycles(8, 256));
}

TEST_CASE("report invariants hold for full encoder runs") {
  for (bool fused : {true, false}) {
    Schedule s = tiny_schedule(2, fused);
    SimResult r = simulate(s);
    CHECK(r.total_cycles == s.end_cycle());
    for (auto& u : r.report.units) CHECK(u.busy + u.idle == r.total_cycles);
    long sum = 0;
    for (auto& ls : r.report.per_layer) sum += ls.total();
    CHECK(sum == r.total_cycles);
    CHECK(r.report.per_layer.size() == 2);
    double f = r.report.frac_constant + r.report.frac_scratchpad +
               r.report.frac_instruction;
    CHECK(f > 0.0);
    CHECK(f < 1.0);
    CHECK(r.report.scratch_high_water_bytes > 0);
  }
}

TEST_CASE("report text round-trips exactly") {
  SimResult r = simulate(tiny_schedule(1, true));
  std::string text = format_report(r.report);
  CycleReport back = parse_report(text);
  CHECK(format_report(back) == text);
  CHECK_THROWS_AS(parse_report("nonsense without colon\n"), std::runtime_error);
}
