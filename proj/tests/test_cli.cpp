#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "raincap/harness/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path root = fs::temp_directory_path() / "raincap_test_cli";

struct Run {
  int code;
  std::string err;
};

Run cli(const std::string& args) {
  const auto err_file = root / "stderr.txt";
  const std::string cmd = std::string("\"") + RAINCAP_CLI + "\" " + args + " >/dev/null 2>\"" + err_file.string() + "\"";
  const int status = std::system(cmd.c_str());
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = raincap::harness::read_file(e.path());
  return out;
}

void write(const fs::path& p, const std::string& s) { raincap::harness::write_file_atomic(p, s); }

const char* kTiny = "count = 4\nirs.epochs = 1\nirs.patch = 32\ncap.steps = 3\ncap.batch = 4\n";

}  // namespace

TEST_CASE("usage errors exit 1") {
  fs::remove_all(root);
  fs::create_directories(root);
  CHECK(cli("").code == 1);
  const auto r = cli("frobnicate");
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(cli("gen-data --nope").code == 1);
  CHECK(cli("--help").code == 0);
  write(root / "bad.cfg", "seeed = 1\n");
  CHECK(cli("--config " + (root / "bad.cfg").string() + " gen-data").code == 1);
  CHECK(cli("--out " + (root / "x").string() + " caption --mode sideways").code == 1);
}

TEST_CASE("missing inputs exit 2") {
  fs::remove_all(root);
  fs::create_directories(root);
  CHECK(cli("--out " + (root / "empty").string() + " train-irs").code == 2);

  write(root / "tiny.cfg", kTiny);
  const std::string base = "--config " + (root / "tiny.cfg").string() + " --out " + (root / "o").string() + " ";
  REQUIRE(cli(base + "gen-data").code == 0);
  REQUIRE(cli(base + "train-captioner").code == 0);
  const auto r = cli(base + "caption --mode proposed");
  CHECK(r.code == 2);
  CHECK(r.err.find("train-svfm") != std::string::npos);
  CHECK(cli(base + "caption --mode nic_t").code == 0);

  // a truncated checkpoint is a data error, not a crash
  const auto ckpt = root / "o" / "models" / "captioner.rcap";
  const std::string bytes = raincap::harness::read_file(ckpt);
  write(ckpt, bytes.substr(0, bytes.size() / 2));
  const auto t = cli(base + "caption --mode nic_t");
  CHECK(t.code == 2);
  CHECK(t.err.find("truncated") != std::string::npos);
  // so is a checkpoint from a differently sized model
  write(root / "wide.cfg", std::string(kTiny) + "cap.hidden = 32\n");
  write(ckpt, bytes);
  CHECK(cli("--config " + (root / "wide.cfg").string() + " --out " + (root / "o").string() + " caption --mode nic_t")
            .code == 2);
}

TEST_CASE("gen-data twice gives identical trees") {
  fs::remove_all(root);
  fs::create_directories(root);
  REQUIRE(cli("--out " + (root / "a").string() + " gen-data --count 10 --seed 7").code == 0);
  REQUIRE(cli("--out " + (root / "b").string() + " --seed 7 gen-data --count 10").code == 0);
  const auto a = tree(root / "a"), b = tree(root / "b");
  CHECK(a.size() == 25);  // 20 PNGs + rcap, captions, params, vocab, manifest
  CHECK(a == b);
  REQUIRE(cli("--out " + (root / "c").string() + " gen-data --count 10 --seed 8").code == 0);
  CHECK(tree(root / "c") != a);
}

TEST_CASE("gradcheck exits 0") {
  fs::remove_all(root);
  fs::create_directories(root);
  CHECK(cli("--out " + (root / "g").string() + " gradcheck").code == 0);
  CHECK(fs::exists(root / "g" / "reports" / "gradcheck.tsv"));
  fs::remove_all(root);
}
