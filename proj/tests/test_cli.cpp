#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run amlp(const std::string& args, const std::string& redirect = "2>/dev/null") {
  Run r;
  FILE* p = popen((std::string(AMLP_CLI_PATH) + " " + args + " " + redirect).c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), got);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char ch : s) n += ch == '\n';
  return n;
}

std::string lines_with(const std::string& s, const std::string& prefix) {
  std::istringstream in(s);
  std::string line, keep;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) keep += line + '\n';
  return keep;
}

struct TempDir {
  fs::path path = fs::temp_directory_path() / ("amlp_cli_" + std::to_string(::getpid()));
  TempDir() { fs::create_directories(path); }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("bench flags") {
  CHECK(amlp("bench --runs 3 --lengths 256 --arch nar-amlp").code != 0);
  CHECK(amlp("bench --lengths 512,256").code == 2);
  CHECK(amlp("bench --arch nope").code == 2);

  const Run r = amlp("bench --lengths 256 --arch nar-amlp --runs 4 --warmup 0 --batch 1 --d 32 --heads 2 --c 8");
  CHECK(r.code == 0);
  CHECK(r.out.rfind("arch,n,batch,runs,kept,mean_latency_s,modeled_elems,measured_peak_bytes\n", 0) == 0);
  CHECK(count_lines(r.out) == 2);
  CHECK(r.out.find("\nnar-amlp,256,1,4,2,") != std::string::npos);
}

TEST_CASE("bench writes --out and reports to stderr") {
  TempDir dir;
  const fs::path csv = dir.path / "b.csv";
  const Run r = amlp("bench --lengths 64,128 --arch nar-softmax,nar-amlp --runs 4 --warmup 0 --batch 1 --d 16 "
                     "--heads 2 --c 4 --out " + csv.string(),
                     "2>&1");
  CHECK(r.code == 0);
  CHECK(r.out.find("seed: 1") != std::string::npos);
  CHECK(r.out.find("arch,n") == std::string::npos);
  std::ifstream in(csv);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(count_lines(ss.str()) == 5);
  CHECK(amlp("bench --lengths 64 --arch nar-amlp --runs 4 --out /nonexistent/dir/x.csv").code == 3);
}

TEST_CASE("train") {
  TempDir dir;
  const fs::path ckpt = dir.path / "m.ckpt";
  const Run init = amlp("train --steps 0 --ckpt " + ckpt.string());
  CHECK(init.code == 0);
  CHECK(init.out.find("initial accuracy") != std::string::npos);
  CHECK(init.out.find("step ") == std::string::npos);
  CHECK(fs::exists(ckpt));

  const std::string args = "train --steps 200 --log-every 50 --seed 4 --ckpt " + ckpt.string();
  const Run a = amlp(args), b = amlp(args);
  CHECK(a.code == 0);
  CHECK(count_lines(lines_with(a.out, "step ")) == 4);
  CHECK(lines_with(a.out, "step ") == lines_with(b.out, "step "));
  CHECK(a.out.find("final accuracy") != std::string::npos);

  CHECK(amlp("train --steps 0 --ckpt /nonexistent/dir/m.ckpt").code == 3);
  CHECK(amlp("train --steps 0 --heads 3 --ckpt " + ckpt.string()).code == 2);
  CHECK(amlp("train --variant nope --steps 0 --ckpt " + ckpt.string()).code == 2);
}

TEST_CASE("config files compose with flags") {
  TempDir dir;
  const fs::path cfg = dir.path / "t.cfg";
  const fs::path ckpt = dir.path / "m.ckpt";
  {
    std::ofstream f(cfg);
    f << "# toy run\nsteps=20\nlog-every=10\nseed=9\n";
  }
  const Run from_file = amlp("train --config " + cfg.string() + " --ckpt " + ckpt.string(), "2>&1");
  CHECK(from_file.code == 0);
  CHECK(from_file.out.find("seed: 9") != std::string::npos);
  CHECK(count_lines(lines_with(from_file.out, "step ")) == 2);

  const Run override = amlp("train --config " + cfg.string() + " --seed 11 --ckpt " + ckpt.string(), "2>&1");
  CHECK(override.code == 0);
  CHECK(override.out.find("seed: 11") != std::string::npos);

  {
    std::ofstream f(cfg, std::ios::app);
    f << "bogus=1\n";
  }
  CHECK(amlp("train --config " + cfg.string() + " --ckpt " + ckpt.string()).code != 0);
}

TEST_CASE("verify") {
  const Run ok = amlp("verify --json");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("\"passed\":false") == std::string::npos);
  CHECK(count_lines(ok.out) >= 10);

  const Run broken = amlp("verify --break-gradients");
  CHECK(broken.code == 1);
  CHECK(broken.out.find("FAIL gradient_softmax_attention") != std::string::npos);
  CHECK(amlp("verify --no-such-flag").code != 0);
}
