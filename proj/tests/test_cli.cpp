#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const fs::path work = fs::temp_directory_path() / "prd_cli_test";
  fs::create_directories(work);
  const std::string cmd = "cd '" + work.string() + "' && " + env + " '" + PRD_CLI_PATH + "' --runs-dir runs " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path work(const std::string& name) { return fs::temp_directory_path() / "prd_cli_test" / name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++n;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
  }
  std::size_t m = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file();
  return n == m;
}

const std::string kTrainArgs = " --steps 6 --batch-size 4 --resolution 32 --checkpoint-every 3 --log-every 0";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(fs::temp_directory_path() / "prd_cli_test");
    ASSERT_EQ(run("gen --out data --config center --count 8 --seed 7 --resolution 32").code, 0);
    ASSERT_EQ(run("train --data data --out model --seed 7" + kTrainArgs).code, 0);
  }
  static std::string checkpoint() { return work("model/checkpoints/step_0000006.safetensors").string(); }
};

}  // namespace

TEST_F(Cli, GenIsByteIdenticalAndReportsUniqueness) {
  const Result r = run("gen --out again --config center --count 8 --seed 7 --resolution 32");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("unique answer (oracle verified): 8/8"), std::string::npos) << r.out;
  EXPECT_TRUE(same_tree(work("data"), work("again")));
}

TEST_F(Cli, GenWithZeroCountIsValid) {
  const Result r = run("gen --out empty --count 0");
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(work("empty/manifest.jsonl")));
}

TEST_F(Cli, TrainTwiceGivesIdenticalLogs) {
  ASSERT_EQ(run("train --data data --out model_b --seed 7" + kTrainArgs).code, 0);
  EXPECT_EQ(slurp(work("model/loss_log.csv")), slurp(work("model_b/loss_log.csv")));
  ASSERT_EQ(run("train --data data --out model_c --seed 8" + kTrainArgs).code, 0);
  EXPECT_NE(slurp(work("model/loss_log.csv")), slurp(work("model_c/loss_log.csv")));
}

TEST_F(Cli, SolveJsonMatchesStdout) {
  const Result r = run("solve --model " + checkpoint() + " --data data --json solved.json");
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(slurp(work("solved.json")));
  std::istringstream lines(r.out);
  std::string id;
  int prediction;
  std::string score;
  std::size_t i = 0;
  while (lines >> id >> prediction >> score) {
    const auto& p = j.at("problems").at(i++);
    EXPECT_EQ(p.at("id"), id);
    EXPECT_EQ(p.at("prediction"), prediction);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", p.at("scores").at(prediction).get<double>());
    EXPECT_EQ(score, buf);
  }
  EXPECT_EQ(i, 8u);
}

TEST_F(Cli, EvalNeedsLabels) {
  const Result ok = run("eval --model " + checkpoint() + " --data data --json report.json");
  ASSERT_EQ(ok.code, 0);
  const json j = json::parse(slurp(work("report.json")));
  const std::string tally = "problems " + std::to_string(j.at("correct").get<int>()) + "/8 correct";
  EXPECT_NE(ok.out.find(tally), std::string::npos) << ok.out;

  // Strip answers from a copy of the dataset.
  fs::copy(work("data"), work("bare"), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  std::ifstream in(work("data/manifest.jsonl"));
  std::ofstream out(work("bare/manifest.jsonl"), std::ios::trunc);
  std::string line;
  while (std::getline(in, line)) {
    json rec = json::parse(line);
    rec["answer"] = nullptr;
    out << rec.dump() << '\n';
  }
  out.close();
  EXPECT_EQ(run("eval --model " + checkpoint() + " --data bare").code, 2);
}

TEST_F(Cli, ValidationErrorsExitWithTwo) {
  EXPECT_EQ(run("train --data data --out x --bogus").code, 2);
  EXPECT_EQ(run("train --data missing --out x").code, 2);
  EXPECT_EQ(run("train --data data --out x --measure cosine").code, 2);
  EXPECT_EQ(run("eval --model missing.safetensors --data data").code, 2);
  EXPECT_EQ(run("study-distance --train data --test data --out s --measures l1,cosine" + kTrainArgs).code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, ConfigFileAndEnvironmentPrecedence) {
  std::ofstream(work("cfg.json")) << R"({"steps": 2, "batch_size": 4, "resolution": 32, "log_every": 0})";
  ASSERT_EQ(run("--config-file cfg.json train --data data --out cfg_run").code, 0);
  auto count_lines = [](const fs::path& p) {
    const std::string s = slurp(p);
    return std::count(s.begin(), s.end(), '\n');
  };
  EXPECT_EQ(count_lines(work("cfg_run/loss_log.csv")), 3);
  ASSERT_EQ(run("--config-file cfg.json train --data data --out env_run", "PRD_STEPS=3").code, 0);
  EXPECT_EQ(count_lines(work("env_run/loss_log.csv")), 4);
  ASSERT_EQ(run("--config-file cfg.json train --data data --out flag_run --steps 1", "PRD_STEPS=3").code, 0);
  EXPECT_EQ(count_lines(work("flag_run/loss_log.csv")), 2);
  std::ofstream(work("bad.json")) << R"({"stepz": 2})";
  EXPECT_EQ(run("--config-file bad.json train --data data --out bad_run").code, 2);
}

TEST_F(Cli, HelpShowsDefaults) {
  const Result r = run("train --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("[32]"), std::string::npos);
  EXPECT_NE(r.out.find("[0.0002]"), std::string::npos);
  EXPECT_NE(r.out.find("[0.5]"), std::string::npos);
}

TEST_F(Cli, ManifestRecordsTheRun) {
  std::size_t seen = 0;
  for (const auto& e : fs::directory_iterator(work("runs"))) {
    const json m = json::parse(slurp(e.path()));
    if (m.at("subcommand") != "train" || m.at("status") != "ok") continue;
    EXPECT_TRUE(m.contains("options"));
    EXPECT_TRUE(m.at("options").contains("lr"));
    EXPECT_TRUE(m.contains("source_revision"));
    EXPECT_TRUE(m.contains("started_at"));
    ++seen;
  }
  EXPECT_GT(seen, 0u);
}
