#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <thread>

#include <httplib.h>

#include "oracles.hpp"
#include "screenkit/clock.hpp"
#include "screenkit/diagnostics.hpp"
#include "screenkit/error.hpp"
#include "support.hpp"

using namespace screenkit;
using testsupport::Rng;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

std::vector<double> random_sample(Rng& rng, int n, int levels) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(testsupport::uniform_int(rng, 0, levels));
  return v;
}

class ScriptedOa final : public OaClient {
 public:
  std::map<std::string, OaLookup> table;
  std::set<std::string> unreachable;
  std::size_t calls = 0;
  std::size_t rpm = 600;

  OaLookup lookup(const std::string& doi) override {
    ++calls;
    if (unreachable.contains(doi)) fail(ErrorCode::ClientUnreachable, "scripted outage");
    auto it = table.find(doi);
    return it == table.end() ? OaLookup{} : it->second;
  }
  std::size_t requests_per_minute() const override { return rpm; }
};

Record rec(std::string id, std::optional<std::string> doi, OpenAccess oa = OpenAccess::Unknown) {
  Record r;
  r.record_id = id;
  r.title = "T " + id;
  r.doi = std::move(doi);
  r.open_access = oa;
  return r;
}

}  // namespace

TEST_CASE("Mann-Whitney examples") {
  auto r = mann_whitney_u(std::vector<double>{1, 2}, std::vector<double>{3, 4});
  CHECK(r.u_statistic == 0.0);
  CHECK(r.method == MannWhitneyMethod::Exact);
  CHECK(r.p_value == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const std::vector<double> same = {3, 1, 4, 1, 5};
  r = mann_whitney_u(same, same);
  CHECK(r.u_statistic == 12.5);
  CHECK(r.p_value == doctest::Approx(1.0));

  std::vector<double> lo, hi;
  for (int i = 1; i <= 30; ++i) lo.push_back(i);
  for (int i = 100; i <= 129; ++i) hi.push_back(i);
  r = mann_whitney_u(lo, hi);
  CHECK(r.method == MannWhitneyMethod::NormalApprox);
  CHECK(r.p_value < 0.001);
  CHECK(oracle::mann_whitney_permutation_p(lo, hi, 20000, 1) < 0.001);

  CHECK(code_of([] { mann_whitney_u(std::vector<double>{}, std::vector<double>{1}); }) == ErrorCode::EmptySample);
  CHECK(code_of([] { mann_whitney_u(std::vector<double>{NAN}, std::vector<double>{1}); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("Mann-Whitney method switches at the threshold") {
  std::vector<double> x(10, 1.0), y(10, 2.0);
  CHECK(mann_whitney_u(x, y).method == MannWhitneyMethod::Exact);
  y.push_back(3.0);
  CHECK(mann_whitney_u(x, y).method == MannWhitneyMethod::NormalApprox);
  CHECK(mann_whitney_u(x, y, 30).method == MannWhitneyMethod::Exact);
  // All values tied: no variance, no evidence.
  std::vector<double> flat(15, 2.0);
  CHECK(mann_whitney_u(flat, flat).p_value == 1.0);
}

TEST_CASE("property: exact Mann-Whitney equals full enumeration") {
  Rng rng(51);
  for (int iter = 0; iter < 250; ++iter) {
    const int n1 = testsupport::uniform_int(rng, 1, 9);
    const int n2 = testsupport::uniform_int(rng, 1, 10 - n1);
    const int levels = testsupport::uniform_int(rng, 1, 12);
    const auto x = random_sample(rng, n1, levels), y = random_sample(rng, n2, levels);
    const auto r = mann_whitney_u(x, y);
    CHECK(r.method == MannWhitneyMethod::Exact);
    CHECK(r.p_value == oracle::mann_whitney_exact_p(x, y));
    CHECK(2.0 * r.u_statistic == static_cast<double>(oracle::doubled_u(x, y)));
  }
}

TEST_CASE("property: U_x + U_y = n1 n2 and 0 <= U <= n1 n2") {
  Rng rng(52);
  for (int iter = 0; iter < 300; ++iter) {
    const auto x = random_sample(rng, testsupport::uniform_int(rng, 1, 40), 20);
    const auto y = random_sample(rng, testsupport::uniform_int(rng, 1, 40), 20);
    const auto a = mann_whitney_u(x, y), b = mann_whitney_u(y, x);
    const double prod = static_cast<double>(x.size() * y.size());
    CHECK(a.u_statistic + b.u_statistic == prod);
    CHECK(a.u_statistic >= 0.0);
    CHECK(a.u_statistic <= prod);
    CHECK(a.p_value == doctest::Approx(b.p_value).epsilon(1e-12));
    CHECK(a.p_value >= 0.0);
    CHECK(a.p_value <= 1.0);
  }
}

TEST_CASE("Fisher examples") {
  auto f = fisher_exact_2x2(578, 235, 2772, 4932);
  CHECK(std::fabs(f.odds_ratio - 4.38) <= 0.01);
  CHECK(f.p_value < 0.001);

  f = fisher_exact_2x2(3, 1, 1, 3);
  CHECK(f.p_value == doctest::Approx(34.0 / 70.0).epsilon(1e-12));
  CHECK(f.odds_ratio == 9.0);

  f = fisher_exact_2x2(5, 0, 0, 7);
  CHECK(std::isinf(f.odds_ratio));
  CHECK(to_json(f)["odds_ratio"] == "inf");

  f = fisher_exact_2x2(51, 12, 16, 55);
  CHECK(f.odds_ratio == doctest::Approx(14.61).epsilon(0.0005));

  CHECK(code_of([] { fisher_exact_2x2(0, 0, 3, 4); }) == ErrorCode::DegenerateMargins);
  CHECK(code_of([] { fisher_exact_2x2(1, 0, 3, 0); }) == ErrorCode::DegenerateMargins);
}

TEST_CASE("property: Fisher agrees with enumeration and is symmetric") {
  Rng rng(53);
  for (int iter = 0; iter < 2000; ++iter) {
    std::uint64_t t[4];
    for (auto& v : t) v = static_cast<std::uint64_t>(testsupport::uniform_int(rng, 0, 8));
    if (t[0] + t[1] == 0 || t[2] + t[3] == 0 || t[0] + t[2] == 0 || t[1] + t[3] == 0) continue;
    const auto f = fisher_exact_2x2(t[0], t[1], t[2], t[3]);
    CHECK(std::fabs(f.p_value - oracle::fisher_two_sided_p(t[0], t[1], t[2], t[3])) <= 1e-10);
    CHECK(f.p_value <= 1.0);
    CHECK(f.p_value > 0.0);
    CHECK(fisher_exact_2x2(t[0], t[2], t[1], t[3]).p_value == doctest::Approx(f.p_value).epsilon(1e-12));
    CHECK(fisher_exact_2x2(t[3], t[2], t[1], t[0]).p_value == doctest::Approx(f.p_value).epsilon(1e-12));
    if (t[1] * t[2] > 0) {
      const auto k = static_cast<std::uint64_t>(testsupport::uniform_int(rng, 2, 5));
      CHECK(fisher_exact_2x2(k * t[0], k * t[1], k * t[2], k * t[3]).odds_ratio ==
            doctest::Approx(f.odds_ratio).epsilon(1e-12));
    }
  }
}

TEST_CASE("open-access enrichment") {
  testsupport::TempDir dir;
  ScriptedOa client;
  client.table["10.1/open"] = {OpenAccess::Open, OaSource::Unpaywall};
  client.table["10.1/doaj"] = {OpenAccess::Open, OaSource::Doaj};
  client.table["10.1/closed"] = {OpenAccess::Closed, OaSource::Unpaywall};
  client.unreachable = {"10.1/down"};

  const std::vector<Record> records = {
      rec("a", std::nullopt),          rec("b", "https://doi.org/10.1/OPEN"), rec("c", "10.1/doaj"),
      rec("d", "10.1/closed"),         rec("e", "10.1/nowhere"),           rec("f", "10.1/down"),
      rec("g", "10.1/open", OpenAccess::Closed)};
  SimulatedClock clock;
  const auto first = oa_enrich(records, client, dir / "oa.jsonl", &clock);
  REQUIRE(first.statuses.size() == 7);
  CHECK(first.statuses[0].status == OpenAccess::Unknown);
  CHECK(first.statuses[0].source == OaSource::None);
  CHECK(first.statuses[1].status == OpenAccess::Open);
  CHECK(first.statuses[1].source == OaSource::Unpaywall);
  CHECK(first.statuses[2].source == OaSource::Doaj);
  CHECK(first.statuses[3].status == OpenAccess::Closed);
  CHECK(first.statuses[4].status == OpenAccess::Unknown);
  CHECK(first.statuses[5].status == OpenAccess::Unknown);
  CHECK(first.statuses[6].source == OaSource::Manual);
  CHECK(first.statuses[6].status == OpenAccess::Closed);
  CHECK(first.queries == 5);
  CHECK(first.warnings.size() == 1);
  for (const auto& s : first.statuses) CHECK((s.status == OpenAccess::Unknown) == (s.source == OaSource::None));

  client.calls = 0;
  client.unreachable.clear();
  const auto second = oa_enrich(records, client, dir / "oa.jsonl", &clock);
  CHECK(second.queries == 1);  // only the lookup that failed last time
  CHECK(client.calls == 1);
  const auto third = oa_enrich(records, client, dir / "oa.jsonl", &clock);
  CHECK(third.queries == 0);

  auto copy = records;
  apply_open_access(copy, third.statuses);
  CHECK(copy[1].open_access == OpenAccess::Open);
}

TEST_CASE("open-access lookups respect the client's rate") {
  testsupport::TempDir dir;
  ScriptedOa client;
  client.rpm = 2;
  std::vector<Record> records;
  for (int i = 0; i < 5; ++i) records.push_back(rec("r" + std::to_string(i), "10.9/" + std::to_string(i)));
  SimulatedClock clock;
  oa_enrich(records, client, dir / "oa.jsonl", &clock);
  CHECK(client.calls == 5);
  CHECK(clock.now() >= 120.0);
}

TEST_CASE("HTTP open-access client against local registries") {
  httplib::Server server;
  std::string seen_email;
  server.Get(R"(/v2/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
    seen_email = req.get_param_value("email");
    const std::string doi = req.matches[1];
    if (doi == "10.1/open") res.set_content(R"({"is_oa": true})", "application/json");
    else if (doi == "10.1/closed") res.set_content(R"({"is_oa": false})", "application/json");
    else if (doi == "10.1/broken") res.status = 500;
    else res.status = 404;
  });
  server.Get(R"(/api/search/articles/(.+))", [&](const httplib::Request& req, httplib::Response& res) {
    const std::string q = req.matches[1];
    res.set_content(q == "doi:10.1/journal" ? R"({"total": 1})" : R"({"total": 0})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpOaConfig cfg;
  cfg.contact_email = "team@example.org";
  cfg.unpaywall_base = "http://127.0.0.1:" + std::to_string(port);
  cfg.doaj_base = cfg.unpaywall_base;
  cfg.timeout_s = 5;
  HttpOaClient client(cfg);
  auto l = client.lookup("10.1/open");
  CHECK(l.status == OpenAccess::Open);
  CHECK(l.source == OaSource::Unpaywall);
  CHECK(seen_email == "team@example.org");
  CHECK(client.lookup("10.1/closed").status == OpenAccess::Closed);
  l = client.lookup("10.1/journal");
  CHECK(l.status == OpenAccess::Open);
  CHECK(l.source == OaSource::Doaj);
  CHECK(client.lookup("10.1/unknown").source == OaSource::None);
  CHECK(code_of([&] { client.lookup("10.1/broken"); }) == ErrorCode::ClientUnreachable);

  server.stop();
  t.join();
  CHECK(code_of([&] { client.lookup("10.1/open"); }) == ErrorCode::ClientUnreachable);
  CHECK(code_of([] { HttpOaClient(HttpOaConfig{}); }) == ErrorCode::ConfigValidation);
}

TEST_CASE("corpus comparison") {
  CorpusStats a;
  a.n_records = 6;
  a.abstract_length_chars = {100, 200, 0, 300, 400, 500};
  a.publication_years = {2000, 2001, 2002, 2003, 2004, 2005};
  a.open_access_counts = {51, 12, 3};
  CorpusStats b = a;

  auto c = compare_corpora(a, a);
  CHECK(c.abstract_length->p_value == doctest::Approx(1.0));
  CHECK(c.year->p_value == doctest::Approx(1.0));
  CHECK(c.open_access->odds_ratio == 1.0);
  CHECK(c.abstract_length_a.n == 5);
  CHECK(*c.abstract_length_a.median == 300.0);

  std::vector<int> years_b;
  a.publication_years.clear();
  for (int i = 0; i < 30; ++i) {
    a.publication_years.push_back(1980 + i % 10);
    years_b.push_back(2010 + i % 10);
  }
  b.publication_years = years_b;
  b.open_access_counts = {16, 55, 9};
  c = compare_corpora(a, b);
  CHECK(c.year->p_value < 0.001);
  CHECK(c.open_access->odds_ratio == doctest::Approx(51.0 * 55.0 / (12.0 * 16.0)));
  CHECK(std::round(c.open_access->odds_ratio * 100.0) / 100.0 == 14.61);

  const auto table = format_comparison(c, "Review 1", "Review 2");
  CHECK(table.find("Review 1") != std::string::npos);
  CHECK(table.find("<0.001") != std::string::npos);
  CHECK(table.find("14.61") != std::string::npos);
  const auto j = to_json(c);
  CHECK(j["fisher_open_access"]["test"]["table"]["a"] == 51);
  CHECK(j["fisher_open_access"]["unknown_excluded"] == 12);

  b.open_access_counts = {0, 0, 9};
  CHECK_FALSE(compare_corpora(a, b).open_access.has_value());
}
