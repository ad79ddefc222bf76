#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <string>

#include <sys/wait.h>

#include "support.hpp"

using nlohmann::json;
using testsupport::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI, capturing stdout; stderr goes to err_file when given.
Run cli(const std::string& args, const std::string& err_file = "/dev/null") {
  const std::string cmd = std::string("\"") + SCREENKIT_CLI + "\" " + args + " 2>\"" + err_file + "\"";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

// Ten records; the keyword mock includes exactly those mentioning sleep.
void write_project(const TempDir& dir) {
  std::string csv = "Title,Abstract,Year\n";
  std::string includes = "Title\n";
  for (int i = 0; i < 10; ++i) {
    const bool hit = i % 3 == 0;
    const std::string title = "Record " + std::to_string(i) + (hit ? " on sleep" : " on diet");
    csv += title + ",Abstract " + std::to_string(i) + "," + std::to_string(1995 + i) + "\n";
    if (hit) includes += title + "\n";
  }
  testsupport::write(dir / "corpus.csv", csv);
  testsupport::write(dir / "includes.csv", includes);
  testsupport::write(dir / "criteria.json",
                     R"({"form": "raw", "inclusion": [{"label": "1", "body": "Sleep studies."}],
                         "exclusion": [{"label": "1", "body": "Editorials."}]})");
  testsupport::write(dir / "config.json", json({{"corpus_path", "corpus.csv"},
                                                {"criteria_path", "criteria.json"},
                                                {"actor_model_id", "mock:include_keyword=sleep"}})
                                              .dump());
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  TempDir dir;
  CHECK(cli("frobnicate", (dir / "err").string()).code == 1);
  CHECK(testsupport::slurp(dir / "err").find("UnknownSubcommand") != std::string::npos);
  CHECK(cli("").code == 1);
  CHECK(cli("screen --config x.json").code == 1);
  CHECK(cli("evaluate --run-dir r --includes i --level abstract").code == 1);
  CHECK(cli("--version").code == 0);
}

TEST_CASE("config validation exits 1 and names the field") {
  TempDir dir;
  write_project(dir);
  testsupport::write(dir / "bad.json", json({{"corpus_path", "corpus.csv"},
                                             {"criteria_path", "criteria.json"},
                                             {"actor_model_id", "mock:"},
                                             {"mode", "actor_critic"},
                                             {"rule", "critic_veto"}})
                                           .dump());
  const auto r = cli("screen --config " + q(dir / "bad.json") + " --run-dir " + q(dir / "run"),
                     (dir / "err").string());
  CHECK(r.code == 1);
  CHECK(testsupport::slurp(dir / "err").find("critic_model_id") != std::string::npos);
}

TEST_CASE("runtime failures exit 2") {
  TempDir dir;
  CHECK(cli("screen --config " + q(dir / "missing.json") + " --run-dir " + q(dir / "run")).code == 2);
}

TEST_CASE("screen, evaluate, build, run and resume") {
  TempDir dir;
  write_project(dir);
  auto r = cli("screen --config " + q(dir / "config.json") + " --run-dir " + q(dir / "run"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["final_decisions"] == 10);
  CHECK(testsupport::count_lines(testsupport::slurp(dir / "run" / "final_decisions.csv")) == 11);

  r = cli("evaluate --run-dir " + q(dir / "run") + " --includes " + q(dir / "includes.csv") + " --level final");
  REQUIRE(r.code == 0);
  const auto report = json::parse(r.out);
  CHECK(report["accuracy"] == 1.0);
  CHECK(report["sensitivity"] == 1.0);
  CHECK(std::filesystem::exists(dir / "run" / "reports" / "final" / "reliability_bins.csv"));

  r = cli("ingest --corpus " + q(dir / "corpus.csv") + " --out " + q(dir / "ingested"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["n_records"] == 10);

  r = cli("build --config " + q(dir / "config.json") + " --out " + q(dir / "requests.jsonl"));
  REQUIRE(r.code == 0);
  r = cli("run --requests " + q(dir / "requests.jsonl") + " --run-dir " + q(dir / "batch"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["completed"] == 10);
  r = cli("run --resume --run-dir " + q(dir / "batch"));
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["dispatched"] == 0);
  CHECK(json::parse(r.out)["provider_calls"] == 0);
}

TEST_CASE("diagnose prints the comparison table") {
  TempDir dir;
  write_project(dir);
  testsupport::write(dir / "other.csv", "Title,Abstract,Year\nA,much longer abstract text here,2015\nB,x,2016\n");
  const auto r = cli("diagnose --corpus-a " + q(dir / "corpus.csv") + " --corpus-b " + q(dir / "other.csv") +
                     " --label-a mine --label-b theirs --out " + q(dir / "cmp.json"));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("mine") != std::string::npos);
  CHECK(json::parse(testsupport::slurp(dir / "cmp.json")).contains("mann_whitney"));
}
