#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "pcdiff/pointcloud.hpp"

namespace fs = std::filesystem;
using namespace pcdiff;

namespace {

const fs::path kWork = fs::temp_directory_path() / "pcdiff_cli_test";

int run(const std::string& args) {
  const std::string cmd = "cd '" + kWork.string() + "' && '" PCDIFF_CLI "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(kWork / p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(kWork / p) << text; }

const char* kSmallConfig =
    "# desk-sized guided model\n"
    "latent_dim = 8\n"
    "time_dim = 8\n"
    "encoder_widths = 16,32\n"
    "decoder_widths = 32,32\n"
    "batch_size = 2\n"
    "max_steps = 6\n"
    "checkpoint_every = 3\n";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_F(Cli, synth_writes_requested_shape_count) {
  ASSERT_EQ(run("synth --family barbell --count 64 --points 512 --seed 1 --out d.lpcd"), 0);
  const Dataset d = load_dataset(kWork / "d.lpcd");
  EXPECT_EQ(d.shapes.size(), 64u);
  EXPECT_EQ(d.shapes[0].size(), 512u);
  EXPECT_TRUE(fs::exists(kWork / "d.lpcd.manifest"));
}

TEST_F(Cli, train_then_sample_gives_exact_label_split) {
  ASSERT_EQ(run("synth --family barbell --count 8 --points 128 --seed 1 --out small.lpcd"), 0);
  write("c.cfg", kSmallConfig);
  ASSERT_EQ(run("train --mode guided --config c.cfg --data small.lpcd --out ck"), 0);
  for (const char* f : {"last", "step_3", "step_6", "metrics.log", "config.resolved", "manifest.txt"}) {
    EXPECT_TRUE(fs::exists(kWork / "ck" / f)) << f;
  }
  EXPECT_NE(slurp("ck/manifest.txt").find("checkpoint_sha256"), std::string::npos);
  EXPECT_NE(slurp("ck/config.resolved").find("mode = guided"), std::string::npos);

  ASSERT_EQ(run("sample --ckpt ck/last --n 512 --labels 0.5,0.5 --seed 2 --out s.lpcd"), 0);
  const Dataset s = load_dataset(kWork / "s.lpcd");
  ASSERT_EQ(s.shapes.size(), 1u);
  const auto& labels = s.shapes[0].labels;
  EXPECT_EQ(std::count(labels.begin(), labels.end(), Label{0}), 256);
  EXPECT_EQ(std::count(labels.begin(), labels.end(), Label{1}), 256);

  ASSERT_EQ(run("sample --ckpt ck/last --n 32 --labels 0.5,0.5 --seed 2 --trace --out tr.lpcd"), 0);
  EXPECT_TRUE(fs::exists(kWork / "tr_t0.lpcd"));
  EXPECT_TRUE(fs::exists(kWork / "tr_t200.lpcd"));
}

TEST_F(Cli, eval_of_identical_sets) {
  ASSERT_EQ(run("synth --family chair --count 6 --points 256 --seed 3 --out G.lpcd"), 0);
  ASSERT_EQ(run("eval --gen G.lpcd --ref G.lpcd --format kv --out report.txt"), 0);
  const std::string r = slurp("report.txt");
  EXPECT_NE(r.find("jsd_reported = 0.00"), std::string::npos) << r;
  EXPECT_NE(r.find("cov_reported = 100.00"), std::string::npos) << r;
}

TEST_F(Cli, reruns_overwrite_with_identical_bytes) {
  ASSERT_EQ(run("synth --family ring --ring-parts 3 --count 4 --points 64 --seed 9 --out r.lpcd"), 0);
  const std::string first = slurp("r.lpcd");
  ASSERT_EQ(run("synth --family ring --ring-parts 3 --count 4 --points 64 --seed 9 --out r.lpcd"), 0);
  EXPECT_EQ(slurp("r.lpcd"), first);

  write("u.cfg", std::string(kSmallConfig) + "mode = unguided\n");
  ASSERT_EQ(run("train --config u.cfg --data r.lpcd --out u1"), 0);
  ASSERT_EQ(run("train --config u.cfg --data r.lpcd --out u2"), 0);
  EXPECT_EQ(slurp("u1/last"), slurp("u2/last"));
  EXPECT_EQ(slurp("u1/metrics.log"), slurp("u2/metrics.log"));

  ASSERT_EQ(run("sample --ckpt u1/last --n 64 --seed 4 --count 2 --out us.lpcd --ply us_ply"), 0);
  const std::string s1 = slurp("us.lpcd");
  ASSERT_EQ(run("sample --ckpt u1/last --n 64 --seed 4 --count 2 --out us.lpcd --ply us_ply"), 0);
  EXPECT_EQ(slurp("us.lpcd"), s1);
  EXPECT_TRUE(fs::exists(kWork / "us_ply" / "sample_1.ply"));
}

TEST_F(Cli, exit_codes) {
  ASSERT_EQ(run("synth --family barbell --count 2 --points 32 --seed 1 --out e.lpcd"), 0);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("synth --family teapot --out x.lpcd"), 1);

  write("bad.cfg", "latent_dim = 8\nmystery_knob = 3\n");
  EXPECT_EQ(run("train --config bad.cfg --data e.lpcd --out bad"), 1);

  write("c2.cfg", kSmallConfig);
  ASSERT_EQ(run("train --mode guided --config c2.cfg --data e.lpcd --out g2"), 0);
  EXPECT_EQ(run("sample --ckpt g2/last --n 16"), 1);
  EXPECT_EQ(run("sample --ckpt g2/last --n 16 --labels 0.7,0.7"), 2);

  write("junk.lpcd", "not a dataset");
  EXPECT_EQ(run("eval --gen junk.lpcd --ref e.lpcd"), 2);
  EXPECT_EQ(run("export-ply --in missing.lpcd --out m.ply"), 2);

  write("nan.cfg", std::string(kSmallConfig) + "learning_rate = 1e300\n");
  EXPECT_EQ(run("train --mode guided --config nan.cfg --data e.lpcd --out nan"), 3);
}

TEST_F(Cli, label_file_and_export) {
  ASSERT_EQ(run("synth --family barbell --count 2 --points 32 --seed 1 --out l.lpcd"), 0);
  write("c3.cfg", kSmallConfig);
  ASSERT_EQ(run("train --mode guided --config c3.cfg --data l.lpcd --out g3"), 0);
  write("labels.txt", "0 0 1 1 1\n");
  ASSERT_EQ(run("sample --ckpt g3/last --n 5 --labels labels.txt --out lf.lpcd"), 0);
  EXPECT_EQ(load_dataset(kWork / "lf.lpcd").shapes[0].labels, (std::vector<Label>{0, 0, 1, 1, 1}));
  ASSERT_EQ(run("export-ply --in l.lpcd --out plys"), 0);
  EXPECT_TRUE(fs::exists(kWork / "plys" / "shape_1.ply"));
}
