#include "screenkit/screenkit.h"

#include <memory>
#include <string>

#include "screenkit/diagnostics.hpp"
#include "screenkit/error.hpp"
#include "screenkit/pipeline.hpp"
#include "screenkit/service.hpp"
#include "screenkit/text.hpp"

using namespace screenkit;
namespace fs = std::filesystem;
using nlohmann::json;

struct sk_context {
  std::string last_error;
  std::string result = "{}";
};

struct sk_server {
  std::unique_ptr<Service> service;
};

static_assert(static_cast<int>(ErrorCode::ClientUnreachable) + 1 == SK_ERR_CLIENT_UNREACHABLE);
static_assert(static_cast<int>(ErrorCode::InvalidArgument) + 1 == SK_ERR_INVALID_ARGUMENT);

namespace {

sk_status to_status(ErrorCode code) { return static_cast<sk_status>(static_cast<int>(code) + 1); }

template <typename F>
sk_status guarded(sk_context* ctx, F&& body) {
  if (ctx == nullptr) return SK_ERR_INVALID_ARGUMENT;
  ctx->last_error.clear();
  try {
    body();
    return SK_OK;
  } catch (const Error& e) {
    ctx->last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    ctx->last_error = std::string("InvalidArgument: ") + e.what();
    return SK_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    ctx->last_error = std::string("Internal: ") + e.what();
    return SK_ERR_INTERNAL;
  }
}

std::string required(const char* s, const char* name) {
  if (s == nullptr || *s == '\0') fail(ErrorCode::InvalidArgument, std::string(name) + " is required");
  return s;
}

json parse_optional_json(const char* s, const char* name) {
  if (s == nullptr || *s == '\0') return json::object();
  try {
    return json::parse(s);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigValidation, std::string(name) + ": " + e.what());
  }
}

json ledger_summary(const RunLedger& l) {
  json usage = json::object();
  for (const auto& [model, u] : l.usage_by_model) {
    usage[model] = {{"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}};
  }
  return {{"run_id", l.run_id},
          {"completed", l.completed_ids.size()},
          {"pending", l.pending_ids.size()},
          {"failed", l.failed_ids.size()},
          {"cost_accrued", l.cost_accrued},
          {"usage", usage}};
}

}  // namespace

extern "C" {

const char* sk_version(void) { return "0.1.0"; }

const char* sk_status_name(sk_status status) {
  static thread_local std::string name;
  if (status == SK_OK) return "Ok";
  if (status == SK_ERR_INTERNAL) return "Internal";
  if (status < SK_ERR_INVALID_ARGUMENT || status > SK_ERR_CLIENT_UNREACHABLE) return "Unknown";
  name = std::string(to_string(static_cast<ErrorCode>(static_cast<int>(status) - 1)));
  return name.c_str();
}

int sk_status_is_validation(sk_status status) {
  if (status == SK_OK || status == SK_ERR_INTERNAL) return 0;
  if (status < SK_ERR_INVALID_ARGUMENT || status > SK_ERR_CLIENT_UNREACHABLE) return 0;
  return is_validation_error(static_cast<ErrorCode>(static_cast<int>(status) - 1)) ? 1 : 0;
}

sk_context* sk_context_new(void) { return new (std::nothrow) sk_context(); }

void sk_context_free(sk_context* ctx) { delete ctx; }

const char* sk_last_error(const sk_context* ctx) { return ctx ? ctx->last_error.c_str() : ""; }

const char* sk_result_json(const sk_context* ctx) { return ctx ? ctx->result.c_str() : "{}"; }

sk_status sk_ingest(sk_context* ctx, const char* corpus_path, const char* column_map_json,
                    const char* out_dir) {
  return guarded(ctx, [&] {
    const auto path = required(corpus_path, "corpus_path");
    const fs::path dir = required(out_dir, "out_dir");
    const json map = parse_optional_json(column_map_json, "column_map");
    ColumnMap columns;
    for (const auto& [k, v] : map.items()) columns[k] = v.get<std::string>();
    const Corpus corpus = load_corpus(path, columns);
    fs::create_directories(dir);
    text::write_file_atomic(dir / "corpus.csv", serialize_corpus(corpus));
    json stats = to_json(corpus.stats());
    text::write_file_atomic(dir / "corpus_stats.json", stats.dump(2) + "\n");
    stats["rejected_rows"] = corpus.rejected_rows();
    ctx->result = stats.dump();
  });
}

sk_status sk_build_requests(sk_context* ctx, const char* config_path, const char* out_path) {
  return guarded(ctx, [&] {
    const RunConfig config = load_run_config(required(config_path, "config_path"));
    const fs::path out = required(out_path, "out_path");
    const Corpus corpus = config.corpus_csv ? parse_corpus(*config.corpus_csv, config.column_map)
                                            : load_corpus(config.corpus_path, config.column_map);
    Criteria criteria = config.criteria ? *config.criteria : load_criteria(config.criteria_path);
    if (config.inclusion_bias && !criteria.inclusion_bias) criteria = apply_inclusion_bias(criteria);
    BuildConfig build;
    build.model_id = config.actor_model_id;
    build.replicates = config.replicates;
    build.options = config.prompt;
    build.max_output_tokens = config.max_output_tokens;
    build.temperature = config.temperature;
    validate(criteria, build.options);
    const auto requests = build_requests(corpus, criteria, build);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_requests(out, requests);
    ctx->result = json({{"requests", requests.size()}, {"path", out.string()}}).dump();
  });
}

sk_status sk_run_batch(sk_context* ctx, const char* request_path, const char* model_id,
                       const char* budget_json, const char* run_dir, int resume_run) {
  return guarded(ctx, [&] {
    const fs::path dir = required(run_dir, "run_dir");
    const json budget_doc = parse_optional_json(budget_json, "budget");
    const RateBudget budget = rate_budget_from_json(budget_doc);
    fs::path requests_file;
    if (resume_run) {
      requests_file = RunFiles{dir}.requests();
    } else {
      requests_file = required(request_path, "request_path");
    }
    std::string model = model_id ? model_id : "";
    if (model.empty()) {
      const auto requests = read_requests(requests_file);
      if (requests.empty()) fail(ErrorCode::InvalidArgument, "request file is empty");
      model = requests.front().model_id;
    }
    auto provider = make_provider(model);
    const RunResult result = resume_run ? resume(dir, *provider, budget)
                                        : run_batch(requests_file, *provider, budget, dir);
    json out = ledger_summary(result.ledger);
    out["dispatched"] = result.dispatched;
    if (auto* mock = dynamic_cast<MockProvider*>(provider.get())) out["provider_calls"] = mock->calls();
    ctx->result = out.dump();
  });
}

sk_status sk_screen(sk_context* ctx, const char* config_path, const char* run_dir) {
  return guarded(ctx, [&] {
    const RunConfig config = load_run_config(required(config_path, "config_path"));
    const fs::path dir = required(run_dir, "run_dir");
    const ScreenResult result = screen(config, dir);
    std::size_t includes = 0;
    for (const auto& f : result.finals) includes += f.includes() ? 1 : 0;
    json reports = json::object();
    for (const auto& [level, report] : result.reports) {
      reports[std::string(to_string(level))] = to_json(report);
    }
    ctx->result = json({{"run_dir", dir.string()},
                        {"phase", std::string(to_string(result.progress.phase))},
                        {"final_decisions", result.finals.size()},
                        {"includes", includes},
                        {"errors", result.errors.size()},
                        {"reports", reports}})
                      .dump();
  });
}

sk_status sk_evaluate(sk_context* ctx, const char* run_dir, const char* includes_path,
                      const char* excludes_path, const char* level) {
  return guarded(ctx, [&] {
    LabelFiles files;
    files.includes = required(includes_path, "includes_path");
    if (excludes_path != nullptr && *excludes_path != '\0') files.excludes = excludes_path;
    const LabelLevel lvl = parse_label_level(required(level, "level"));
    const auto report = evaluate_run(required(run_dir, "run_dir"), files, lvl);
    ctx->result = to_json(report).dump();
  });
}

sk_status sk_diagnose(sk_context* ctx, const char* corpus_a, const char* corpus_b,
                      const char* options_json) {
  return guarded(ctx, [&] {
    const json opts = parse_optional_json(options_json, "options");
    Corpus a = load_corpus(required(corpus_a, "corpus_a"));
    Corpus b = load_corpus(required(corpus_b, "corpus_b"));
    json warnings = json::array();
    json queries = 0;
    if (opts.contains("oa_email")) {
      HttpOaConfig cfg;
      cfg.contact_email = opts["oa_email"].get<std::string>();
      cfg.unpaywall_base = opts.value("unpaywall_base", cfg.unpaywall_base);
      cfg.doaj_base = opts.value("doaj_base", cfg.doaj_base);
      cfg.requests_per_minute = opts.value("oa_rpm", cfg.requests_per_minute);
      HttpOaClient client(cfg);
      const fs::path cache = opts.value("oa_cache", std::string("oa_cache.jsonl"));
      std::size_t n = 0;
      for (Corpus* c : {&a, &b}) {
        auto enriched = oa_enrich(c->records(), client, cache);
        n += enriched.queries;
        for (auto& w : enriched.warnings) warnings.push_back(w);
        std::vector<Record> records = c->records();
        apply_open_access(records, enriched.statuses);
        *c = Corpus(std::move(records), c->rejected_rows());
      }
      queries = n;
    }
    const auto comparison = compare_corpora(a.stats(), b.stats());
    json out = to_json(comparison);
    out["table"] = format_comparison(comparison, opts.value("label_a", std::string("A")),
                                     opts.value("label_b", std::string("B")));
    out["oa_queries"] = queries;
    out["warnings"] = warnings;
    ctx->result = out.dump();
  });
}

sk_status sk_fisher_exact(sk_context* ctx, uint64_t a, uint64_t b, uint64_t c, uint64_t d,
                          double* odds_ratio, double* p_value) {
  return guarded(ctx, [&] {
    const auto r = fisher_exact_2x2(a, b, c, d);
    if (odds_ratio) *odds_ratio = r.odds_ratio;
    if (p_value) *p_value = r.p_value;
    ctx->result = to_json(r).dump();
  });
}

sk_status sk_mann_whitney(sk_context* ctx, const double* x, size_t nx, const double* y, size_t ny,
                          double* u_statistic, double* p_value, int* exact) {
  return guarded(ctx, [&] {
    if ((x == nullptr && nx > 0) || (y == nullptr && ny > 0)) {
      fail(ErrorCode::InvalidArgument, "null sample pointer");
    }
    const auto r = mann_whitney_u(std::span<const double>(x, nx), std::span<const double>(y, ny));
    if (u_statistic) *u_statistic = r.u_statistic;
    if (p_value) *p_value = r.p_value;
    if (exact) *exact = r.method == MannWhitneyMethod::Exact ? 1 : 0;
    ctx->result = to_json(r).dump();
  });
}

sk_status sk_parse_decision(sk_context* ctx, const char* raw_text, const char* include_token,
                            const char* exclude_token, int* include, double* confidence) {
  return guarded(ctx, [&] {
    if (raw_text == nullptr) fail(ErrorCode::InvalidArgument, "raw_text is required");
    PromptOptions options;
    if (include_token) options.include_token = include_token;
    if (exclude_token) options.exclude_token = exclude_token;
    const auto d = parse_decision(raw_text, options);
    if (include) *include = d.includes() ? 1 : 0;
    if (confidence) *confidence = d.confidence;
    json out = {{"decision", std::string(to_string(d.decision))}, {"confidence", d.confidence}};
    if (d.rationale) out["rationale"] = *d.rationale;
    ctx->result = out.dump();
  });
}

sk_status sk_server_start(sk_context* ctx, const char* runs_root, const char* host, int port,
                          sk_server** server, int* bound_port) {
  return guarded(ctx, [&] {
    if (server == nullptr) fail(ErrorCode::InvalidArgument, "server out-parameter is required");
    ServiceOptions opts;
    opts.runs_root = required(runs_root, "runs_root");
    if (host && *host) opts.host = host;
    opts.port = port;
    auto handle = std::make_unique<sk_server>();
    handle->service = std::make_unique<Service>(opts);
    const int p = handle->service->start();
    if (bound_port) *bound_port = p;
    *server = handle.release();
    ctx->result = json({{"port", p}}).dump();
  });
}

void sk_server_stop(sk_server* server) {
  if (server == nullptr) return;
  server->service->stop();
  delete server;
}

sk_status sk_server_run(sk_context* ctx, const char* runs_root, const char* host, int port) {
  return guarded(ctx, [&] {
    ServiceOptions opts;
    opts.runs_root = required(runs_root, "runs_root");
    if (host && *host) opts.host = host;
    opts.port = port;
    Service service(opts);
    service.run();
  });
}

}  // extern "C"
