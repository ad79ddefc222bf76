// Command-line front end. Talks to the library only through the C API.
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "screenkit/screenkit.h"

namespace {

struct Context {
  sk_context* ctx = sk_context_new();
  ~Context() { sk_context_free(ctx); }
};

int exit_code(sk_status s) {
  if (s == SK_OK) return 0;
  return sk_status_is_validation(s) ? 1 : 2;
}

int report(const Context& c, sk_status s, bool pretty = true) {
  if (s != SK_OK) {
    std::cerr << "error: " << sk_last_error(c.ctx) << "\n";
    return exit_code(s);
  }
  if (pretty) {
    std::cout << nlohmann::json::parse(sk_result_json(c.ctx)).dump(2) << "\n";
  }
  return 0;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

bool slurp(const std::string& path, std::string& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  out = ss.str();
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"screenkit: language-model abstract screening"};
  app.set_version_flag("--version", std::string(sk_version()));
  app.require_subcommand(1);

  std::string corpus, column_map, out, config, requests, run_dir, model, budget_file;
  std::string includes, excludes, level = "final", corpus_a, corpus_b, label_a = "A",
                                    label_b = "B", oa_email, oa_cache, root = "runs",
                                    host = "127.0.0.1";
  bool resume = false;
  int port = 8080;

  auto* ingest = app.add_subcommand("ingest", "Normalize a corpus CSV and compute its statistics");
  ingest->add_option("--corpus", corpus, "Corpus CSV")->required();
  ingest->add_option("--out", out, "Output directory")->required();
  ingest->add_option("--column-map", column_map, "JSON object mapping fields to CSV headers");

  auto* build = app.add_subcommand("build", "Write the request file for a run config");
  build->add_option("--config", config, "Run config JSON")->required();
  build->add_option("--out", out, "Request file to write")->required();

  auto* run = app.add_subcommand("run", "Execute a request file under the rate budget");
  run->add_option("--requests", requests, "Request file (not needed with --resume)");
  run->add_option("--run-dir", run_dir, "Run directory")->required();
  run->add_option("--model", model, "Model id; defaults to the one in the request file");
  run->add_option("--budget", budget_file, "Rate budget JSON file");
  run->add_flag("--resume", resume, "Continue an interrupted run");

  auto* scr = app.add_subcommand("screen", "Run the full screening pipeline");
  scr->add_option("--config", config, "Run config JSON")->required();
  scr->add_option("--run-dir", run_dir, "Run directory")->required();

  auto* eval = app.add_subcommand("evaluate", "Evaluate a screened run against human labels");
  eval->add_option("--run-dir", run_dir, "Run directory")->required();
  eval->add_option("--includes", includes, "Human includes file")->required();
  eval->add_option("--excludes", excludes, "Human excludes file (default: all other records)");
  eval->add_option("--level", level, "Label level")->check(CLI::IsMember({"fulltext", "final"}));

  auto* diag = app.add_subcommand("diagnose", "Compare two corpora");
  diag->add_option("--corpus-a", corpus_a, "First corpus CSV")->required();
  diag->add_option("--corpus-b", corpus_b, "Second corpus CSV")->required();
  diag->add_option("--label-a", label_a, "Name of the first corpus");
  diag->add_option("--label-b", label_b, "Name of the second corpus");
  diag->add_option("--oa-email", oa_email, "Contact email; enables open-access lookup");
  diag->add_option("--oa-cache", oa_cache, "Open-access cache file");
  diag->add_option("--out", out, "Write the JSON report here");

  auto* serve = app.add_subcommand("serve", "Start the HTTP service");
  serve->add_option("--root", root, "Directory for run directories");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    std::cerr << "error: " << sk_status_name(SK_ERR_UNKNOWN_SUBCOMMAND) << ": '" << argv[1]
              << "' (run with --help for the list)\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  Context c;
  if (c.ctx == nullptr) return 2;

  if (*ingest) return report(c, sk_ingest(c.ctx, corpus.c_str(), opt(column_map), out.c_str()));
  if (*build) return report(c, sk_build_requests(c.ctx, config.c_str(), out.c_str()));
  if (*run) {
    std::string budget;
    if (!budget_file.empty() && !slurp(budget_file, budget)) {
      std::cerr << "error: cannot read " << budget_file << "\n";
      return 1;
    }
    if (!resume && requests.empty()) {
      std::cerr << "error: --requests is required unless --resume is given\n";
      return 1;
    }
    return report(c, sk_run_batch(c.ctx, opt(requests), opt(model), opt(budget), run_dir.c_str(),
                                  resume ? 1 : 0));
  }
  if (*scr) return report(c, sk_screen(c.ctx, config.c_str(), run_dir.c_str()));
  if (*eval) {
    return report(c, sk_evaluate(c.ctx, run_dir.c_str(), includes.c_str(), opt(excludes),
                                 level.c_str()));
  }
  if (*diag) {
    nlohmann::json opts = {{"label_a", label_a}, {"label_b", label_b}};
    if (!oa_email.empty()) opts["oa_email"] = oa_email;
    if (!oa_cache.empty()) opts["oa_cache"] = oa_cache;
    const sk_status s = sk_diagnose(c.ctx, corpus_a.c_str(), corpus_b.c_str(), opts.dump().c_str());
    if (s != SK_OK) return report(c, s);
    auto result = nlohmann::json::parse(sk_result_json(c.ctx));
    std::cout << result["table"].get<std::string>();
    for (const auto& w : result["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
    if (!out.empty()) {
      std::ofstream f(out, std::ios::binary);
      f << result.dump(2) << "\n";
      if (!f) {
        std::cerr << "error: cannot write " << out << "\n";
        return 2;
      }
    }
    return 0;
  }
  if (*serve) return report(c, sk_server_run(c.ctx, root.c_str(), host.c_str(), port), false);
  return 1;
}
