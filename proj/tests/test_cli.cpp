#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string g_cli;  // path to the tsim binary, passed by ctest
fs::path g_work;

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  fs::path outfile = g_work / "cmd.out";
  std::string cmd = g_cli + " " + args + " > " + outfile.string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream is(outfile);
  std::stringstream ss;
  ss << is.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("predict prints cycles and exits 0") {
  RunResult r = run("predict --tiny --layers 2");
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("predicted cycles:") != std::string::npos);
  CHECK(r.out.find("microseconds") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run("").exit_code == 1);                  // missing subcommand
  CHECK(run("no-such-command").exit_code == 1);
  CHECK(run("gen-weights --tiny").exit_code == 1);  // --out is required
  CHECK(run("report " + (g_work / "missing.txt").string()).exit_code == 1);
}

TEST_CASE("invalid configuration exits 2") {
  fs::path bad = g_work / "bad_arch.cfg";
  {
    std::ofstream os(bad);
    os << "lane_width 10\n";  // not divisible by 4
  }
  RunResult r = run("predict --tiny --layers 1 --arch " + bad.string());
  CHECK(r.exit_code == 2);
  CHECK(r.out.find("error") != std::string::npos);
}

TEST_CASE("gen-weights is deterministic and round-trips through simulate") {
  fs::path m1 = g_work / "m1", m2 = g_work / "m2";
  CHECK(run("gen-weights --tiny --layers 2 --seed 9 --out " + m1.string()).exit_code == 0);
  CHECK(run("gen-weights --tiny --layers 2 --seed 9 --out " + m2.string()).exit_code == 0);
  CHECK(slurp(m1 / "model.txt") == slurp(m2 / "model.txt"));
  CHECK(slurp(m1 / "layer0_wq.qt") == slurp(m2 / "layer0_wq.qt"));
  CHECK(slurp(m1 / "input.qt") == slurp(m2 / "input.qt"));

  // a different seed must produce different weights
  fs::path m3 = g_work / "m3";
  CHECK(run("gen-weights --tiny --layers 2 --seed 10 --out " + m3.string()).exit_code == 0);
  CHECK(slurp(m1 / "layer0_wq.qt") != slurp(m3 / "layer0_wq.qt"));

  RunResult sim = run("simulate --tiny --layers 2 --model " + m1.string() +
                      " --out " + (g_work / "r1").string());
  CHECK(sim.exit_code == 0);
  CHECK(sim.out.find("PASS") != std::string::npos);
}

TEST_CASE("corrupted weight file fails cleanly") {
  fs::path m = g_work / "m_bad";
  REQUIRE(run("gen-weights --tiny --layers 1 --seed 3 --out " + m.string()).exit_code == 0);
  {
    std::ofstream os(m / "layer0_wq.qt", std::ios::binary);
    os << "XXXXgarbage";
  }
  RunResult r = run("simulate --tiny --layers 1 --model " + m.string());
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("error") != std::string::npos);
}

TEST_CASE("repeated simulate runs emit byte-identical reports") {
  fs::path ra = g_work / "ra", rb = g_work / "rb";
  CHECK(run("simulate --tiny --layers 1 --seed 4 --out " + ra.string()).exit_code == 0);
  CHECK(run("simulate --tiny --layers 1 --seed 4 --out " + rb.string()).exit_code == 0);
  std::string a = slurp(ra / "report.txt");
  CHECK(!a.empty());
  CHECK(a == slurp(rb / "report.txt"));
}

TEST_CASE("schedule writes a dump that re-validates") {
  fs::path out = g_work / "sched";
  RunResult r = run("schedule --tiny --layers 1 --seed 4 --dump-schedule --out " +
                    out.string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("predicted cycles:") != std::string::npos);
  std::string dump = slurp(out / "schedule.tsv");
  CHECK(dump.rfind("start_cycle", 0) == 0);
  CHECK(dump.find("matmul_stream") != std::string::npos);
}

TEST_CASE("report prints percentages that sum to 100") {
  fs::path rdir = g_work / "r_pct";
  REQUIRE(run("simulate --tiny --layers 2 --seed 4 --out " + rdir.string()).exit_code == 0);
  RunResult r = run("report " + (rdir / "report.txt").string());
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("self-attention") != std::string::npos);
  CHECK(r.out.find("unused") != std::string::npos);
  CHECK(r.out.find("sums to 100.00%") != std::string::npos);
}

TEST_CASE("malformed report is rejected") {
  fs::path p = g_work / "mangled.txt";
  {
    std::ofstream os(p);
    os << "total_cycles: 10\nno separator here\n";
  }
  CHECK(run("report " + p.string()).exit_code == 1);
}

int main(int argc, char** argv) {
  doctest::Context ctx;
  // the harness passes the CLI binary path as the last plain argument
  for (int i = argc - 1; i >= 1; --i)
    if (argv[i][0] != '-') {
      g_cli = argv[i];
      --argc;
      break;
    }
  if (g_cli.empty()) {
    std::fprintf(stderr, "usage: test_cli <path-to-tsim-binary>\n");
    return 1;
  }
  g_work = fs::temp_directory_path() / "tsim_cli_test";
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  ctx.applyCommandLine(argc, argv);
  return ctx.run();
}
