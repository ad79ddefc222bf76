#include "screenkit/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <map>
#include <numeric>

#include <httplib.h>

#include "screenkit/error.hpp"
#include "screenkit/rate_limiter.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

using nlohmann::json;

std::string_view to_string(MannWhitneyMethod m) noexcept {
  return m == MannWhitneyMethod::Exact ? "exact" : "normal_approx";
}

namespace {

// Doubled average ranks (integers) of the pooled sample; x occupies the first n1 slots.
std::vector<long long> doubled_ranks(std::span<const double> pooled, long long& tie_term) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
  std::vector<long long> ranks(n);
  tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    // Positions i+1 .. j+1 share the average rank (i+j+2)/2.
    const long long doubled = static_cast<long long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = doubled;
    const long long t = static_cast<long long>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> x, std::span<const double> y,
                                 std::size_t exact_threshold) {
  if (x.empty() || y.empty()) fail(ErrorCode::EmptySample, "both samples must be non-empty");
  for (double v : x) {
    if (std::isnan(v)) fail(ErrorCode::InvalidArgument, "sample contains NaN");
  }
  for (double v : y) {
    if (std::isnan(v)) fail(ErrorCode::InvalidArgument, "sample contains NaN");
  }
  const std::size_t n1 = x.size();
  const std::size_t n2 = y.size();
  const std::size_t n = n1 + n2;
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  long long tie_term = 0;
  const auto ranks = doubled_ranks(pooled, tie_term);

  long long r1_doubled = 0;
  for (std::size_t i = 0; i < n1; ++i) r1_doubled += ranks[i];
  const long long n1l = static_cast<long long>(n1);
  const long long n2l = static_cast<long long>(n2);
  const long long u2 = r1_doubled - n1l * (n1l + 1);  // 2 * U_x
  const long long dev_obs = std::llabs(2 * u2 - 2 * n1l * n2l);  // 4 * |U - n1 n2 / 2|

  MannWhitneyResult out;
  out.n1 = n1;
  out.n2 = n2;
  out.u_statistic = static_cast<double>(u2) / 2.0;

  if (n <= exact_threshold) {
    out.method = MannWhitneyMethod::Exact;
    // count[k][s]: subsets of size k whose doubled rank sum is s.
    const long long max_sum = std::accumulate(ranks.begin(), ranks.end(), 0LL);
    std::vector<std::vector<double>> count(n1 + 1, std::vector<double>(max_sum + 1, 0.0));
    count[0][0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const long long r = ranks[i];
      for (std::size_t k = std::min(i + 1, n1); k >= 1; --k) {
        auto& dst = count[k];
        const auto& src = count[k - 1];
        for (long long s = max_sum; s >= r; --s) dst[s] += src[s - r];
      }
    }
    double extreme = 0.0;
    double total = 0.0;
    for (long long s = 0; s <= max_sum; ++s) {
      const double c = count[n1][s];
      if (c == 0.0) continue;
      total += c;
      const long long dev = std::llabs(2 * (s - n1l * (n1l + 1)) - 2 * n1l * n2l);
      if (dev >= dev_obs) extreme += c;
    }
    out.p_value = std::min(1.0, extreme / total);
    return out;
  }

  out.method = MannWhitneyMethod::NormalApprox;
  const double nd = static_cast<double>(n);
  const double mean = static_cast<double>(n1 * n2) / 2.0;
  const double var = static_cast<double>(n1 * n2) / 12.0 *
                     ((nd + 1.0) - static_cast<double>(tie_term) / (nd * (nd - 1.0)));
  if (!(var > 0.0)) {
    out.p_value = 1.0;
    return out;
  }
  const double z = std::max(0.0, std::fabs(out.u_statistic - mean) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

FisherResult fisher_exact_2x2(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                              std::uint64_t d) {
  const std::uint64_t row1 = a + b;
  const std::uint64_t row2 = c + d;
  const std::uint64_t col1 = a + c;
  const std::uint64_t col2 = b + d;
  if (row1 == 0 || row2 == 0 || col1 == 0 || col2 == 0) {
    fail(ErrorCode::DegenerateMargins, "every row and column of the 2x2 table needs a positive sum");
  }
  FisherResult out;
  out.table = {a, b, c, d};
  const double bc = static_cast<double>(b) * static_cast<double>(c);
  out.odds_ratio = bc == 0.0 ? std::numeric_limits<double>::infinity()
                             : static_cast<double>(a) * static_cast<double>(d) / bc;

  const double n = static_cast<double>(row1 + row2);
  auto log_choose = [](double m, double k) {
    return std::lgamma(m + 1.0) - std::lgamma(k + 1.0) - std::lgamma(m - k + 1.0);
  };
  const double log_denominator = log_choose(n, static_cast<double>(col1));
  auto log_p = [&](std::uint64_t x) {
    return log_choose(static_cast<double>(row1), static_cast<double>(x)) +
           log_choose(static_cast<double>(row2), static_cast<double>(col1 - x)) - log_denominator;
  };
  const std::uint64_t lo = col1 > row2 ? col1 - row2 : 0;
  const std::uint64_t hi = std::min(row1, col1);
  const double log_obs = log_p(a);
  const double threshold = log_obs + std::log1p(1e-7);
  double p = 0.0;
  for (std::uint64_t x = lo; x <= hi; ++x) {
    const double lp = log_p(x);
    if (lp <= threshold) p += std::exp(lp);
  }
  out.p_value = std::min(1.0, p);
  return out;
}

std::string_view to_string(OaSource s) noexcept {
  switch (s) {
    case OaSource::Unpaywall: return "unpaywall";
    case OaSource::Doaj: return "doaj";
    case OaSource::Manual: return "manual";
    case OaSource::None: return "none";
  }
  return "none";
}

OaSource parse_oa_source(std::string_view s) {
  if (s == "unpaywall") return OaSource::Unpaywall;
  if (s == "doaj") return OaSource::Doaj;
  if (s == "manual") return OaSource::Manual;
  if (s == "none") return OaSource::None;
  fail(ErrorCode::InvalidArgument, "unknown open-access source '" + std::string(s) + "'");
}

namespace {

std::string percent_encode(std::string_view s, bool keep_slash) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : s) {
    if (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.' || ch == '~' ||
        (keep_slash && ch == '/')) {
      out += static_cast<char>(ch);
    } else {
      out += '%';
      out += hex[ch >> 4];
      out += hex[ch & 15];
    }
  }
  return out;
}

std::string normalize_doi(std::string_view raw) {
  std::string doi = text::to_lower(text::trim(raw));
  for (std::string_view prefix : {"https://doi.org/", "http://doi.org/", "https://dx.doi.org/",
                                  "http://dx.doi.org/", "doi:"}) {
    if (doi.rfind(prefix, 0) == 0) {
      doi = doi.substr(prefix.size());
      break;
    }
  }
  return doi;
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

HttpOaClient::HttpOaClient(HttpOaConfig config) : config_(std::move(config)) {
  if (text::trim(config_.contact_email).empty() ||
      config_.contact_email.find('@') == std::string::npos) {
    fail(ErrorCode::ConfigValidation, "contact_email is required for open-access lookups");
  }
  if (config_.requests_per_minute == 0) {
    fail(ErrorCode::ConfigValidation, "requests_per_minute must be positive");
  }
}

OaLookup HttpOaClient::lookup(const std::string& doi) {
  auto get = [&](const std::string& base, const std::string& path) {
    httplib::Client client(base);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    auto res = client.Get(path);
    if (!res) {
      fail(ErrorCode::ClientUnreachable, base + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200 && res->status != 404) {
      fail(ErrorCode::ClientUnreachable, base + ": HTTP " + std::to_string(res->status));
    }
    return std::make_pair(res->status, res->body);
  };

  const auto [status, body] =
      get(config_.unpaywall_base,
          "/v2/" + percent_encode(doi, true) + "?email=" + percent_encode(config_.contact_email, false));
  if (status == 200) {
    try {
      const auto j = json::parse(body);
      return {j.at("is_oa").get<bool>() ? OpenAccess::Open : OpenAccess::Closed,
              OaSource::Unpaywall};
    } catch (const json::exception& e) {
      fail(ErrorCode::ClientUnreachable, std::string("unpaywall: malformed body: ") + e.what());
    }
  }
  const auto [doaj_status, doaj_body] =
      get(config_.doaj_base, "/api/search/articles/" + percent_encode("doi:" + doi, false));
  if (doaj_status == 200) {
    try {
      if (json::parse(doaj_body).value("total", 0) > 0) return {OpenAccess::Open, OaSource::Doaj};
    } catch (const json::exception& e) {
      fail(ErrorCode::ClientUnreachable, std::string("doaj: malformed body: ") + e.what());
    }
  }
  return {};
}

OaEnrichResult oa_enrich(std::span<const Record> records, OaClient& client,
                         const std::filesystem::path& cache_path, Clock* clock) {
  std::map<std::string, OaLookup> cache;
  if (std::filesystem::exists(cache_path)) {
    for (const auto& line : text::split_lines(text::read_file(cache_path))) {
      if (text::trim(line).empty()) continue;
      try {
        const auto j = json::parse(line);
        OaLookup l{parse_open_access(j.at("status").get<std::string>()),
                   parse_oa_source(j.at("source").get<std::string>())};
        if ((l.status == OpenAccess::Unknown) != (l.source == OaSource::None)) continue;
        cache[normalize_doi(j.at("doi").get<std::string>())] = l;
      } catch (const std::exception&) {
        // A torn or foreign line only costs a re-query.
      }
    }
  }

  SteadyClock steady;
  Clock& clk = clock ? *clock : steady;
  RateLimiter limiter(std::max<std::size_t>(1, client.requests_per_minute()),
                      std::numeric_limits<std::size_t>::max());

  OaEnrichResult out;
  out.statuses.reserve(records.size());
  for (const auto& r : records) {
    OaStatus s;
    s.record_id = r.record_id;
    if (r.open_access != OpenAccess::Unknown) {
      s.status = r.open_access;
      s.source = OaSource::Manual;
    } else if (r.doi && !text::trim(*r.doi).empty()) {
      const std::string doi = normalize_doi(*r.doi);
      if (auto it = cache.find(doi); it != cache.end()) {
        s.status = it->second.status;
        s.source = it->second.source;
      } else {
        clk.sleep_until(limiter.next_allowed(clk.now(), 0));
        limiter.try_acquire(clk.now(), 0);
        ++out.queries;
        try {
          OaLookup l = client.lookup(doi);
          if ((l.status == OpenAccess::Unknown) != (l.source == OaSource::None)) l = {};
          cache[doi] = l;
          s.status = l.status;
          s.source = l.source;
          text::append_file(cache_path, json({{"doi", doi},
                                              {"status", std::string(to_string(l.status))},
                                              {"source", std::string(to_string(l.source))},
                                              {"fetched_at", utc_timestamp()}})
                                                .dump() +
                                            "\n");
        } catch (const Error& e) {
          if (e.code() != ErrorCode::ClientUnreachable) throw;
          out.warnings.push_back(r.record_id + ": " + e.what());
        }
      }
    }
    out.statuses.push_back(std::move(s));
  }
  return out;
}

void apply_open_access(std::vector<Record>& records, std::span<const OaStatus> statuses) {
  std::map<std::string, OpenAccess> by_id;
  for (const auto& s : statuses) by_id[s.record_id] = s.status;
  for (auto& r : records) {
    if (auto it = by_id.find(r.record_id); it != by_id.end()) r.open_access = it->second;
  }
}

namespace {

template <typename T>
SampleSummary summarize(const std::vector<T>& values) {
  std::vector<double> d(values.begin(), values.end());
  return {d.size(), median(d)};
}

std::optional<MannWhitneyResult> maybe_mann_whitney(const std::vector<double>& x,
                                                    const std::vector<double>& y) {
  if (x.empty() || y.empty()) return std::nullopt;
  return mann_whitney_u(x, y);
}

std::vector<double> non_empty_lengths(const CorpusStats& s) {
  std::vector<double> out;
  for (auto len : s.abstract_length_chars) {
    if (len > 0) out.push_back(static_cast<double>(len));
  }
  return out;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string format_p(double p) {
  if (p < 0.001) return "<0.001";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", p);
  return buf;
}

std::string format_num(const std::optional<double>& v, int decimals) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

CorpusComparison compare_corpora(const CorpusStats& a, const CorpusStats& b) {
  CorpusComparison c;
  const auto len_a = non_empty_lengths(a);
  const auto len_b = non_empty_lengths(b);
  c.abstract_length_a = summarize(len_a);
  c.abstract_length_b = summarize(len_b);
  c.abstract_length = maybe_mann_whitney(len_a, len_b);

  const std::vector<double> year_a(a.publication_years.begin(), a.publication_years.end());
  const std::vector<double> year_b(b.publication_years.begin(), b.publication_years.end());
  c.year_a = summarize(year_a);
  c.year_b = summarize(year_b);
  c.year = maybe_mann_whitney(year_a, year_b);

  c.open_access_a = a.open_access_counts;
  c.open_access_b = b.open_access_counts;
  try {
    c.open_access = fisher_exact_2x2(a.open_access_counts.open, a.open_access_counts.closed,
                                     b.open_access_counts.open, b.open_access_counts.closed);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateMargins) throw;
  }
  return c;
}

json to_json(const MannWhitneyResult& r) {
  return {{"u_statistic", r.u_statistic},
          {"p_value", r.p_value},
          {"method", std::string(to_string(r.method))},
          {"n1", r.n1},
          {"n2", r.n2}};
}

json to_json(const FisherResult& r) {
  return {{"odds_ratio", std::isinf(r.odds_ratio) ? json("inf") : json(r.odds_ratio)},
          {"p_value", r.p_value},
          {"table", {{"a", r.table[0]}, {"b", r.table[1]}, {"c", r.table[2]}, {"d", r.table[3]}}}};
}

json to_json(const CorpusComparison& c) {
  auto sample = [](const SampleSummary& s) {
    return json{{"n", s.n}, {"median", optional_number(s.median)}};
  };
  auto test = [](const std::optional<MannWhitneyResult>& r) {
    return r ? to_json(*r) : json(nullptr);
  };
  auto counts = [](const OpenAccessCounts& oa) {
    return json{{"open", oa.open}, {"closed", oa.closed}, {"unknown", oa.unknown}};
  };
  return {
      {"mann_whitney",
       {{"abstract_length_chars",
         {{"a", sample(c.abstract_length_a)},
          {"b", sample(c.abstract_length_b)},
          {"test", test(c.abstract_length)}}},
        {"publication_year",
         {{"a", sample(c.year_a)}, {"b", sample(c.year_b)}, {"test", test(c.year)}}}}},
      {"fisher_open_access",
       {{"a", counts(c.open_access_a)},
        {"b", counts(c.open_access_b)},
        {"unknown_excluded", c.open_access_a.unknown + c.open_access_b.unknown},
        {"test", c.open_access ? to_json(*c.open_access) : json(nullptr)}}},
  };
}

std::string format_comparison(const CorpusComparison& c, std::string_view label_a,
                              std::string_view label_b) {
  const std::string a(label_a);
  const std::string b(label_b);
  std::string out = "Mann-Whitney U\n";
  out += pad("Variable", 26) + pad(a + " median", 14) + pad(b + " median", 14) + pad("U", 14) +
         "p\n";
  auto mw_row = [&](const char* name, const SampleSummary& sa, const SampleSummary& sb,
                    const std::optional<MannWhitneyResult>& r) {
    out += pad(name, 26) + pad(format_num(sa.median, 1), 14) + pad(format_num(sb.median, 1), 14);
    if (r) {
      out += pad(format_num(r->u_statistic, 1), 14) + format_p(r->p_value) + "\n";
    } else {
      out += pad("-", 14) + "-\n";
    }
  };
  mw_row("Abstract length (chars)", c.abstract_length_a, c.abstract_length_b, c.abstract_length);
  mw_row("Publication year", c.year_a, c.year_b, c.year);

  auto cell = [](std::size_t k, std::size_t total) {
    if (total == 0) return std::to_string(k);
    return std::to_string(k) + " (" +
           std::to_string(static_cast<long>(std::lround(100.0 * static_cast<double>(k) /
                                                        static_cast<double>(total)))) +
           "%)";
  };
  const std::size_t ta = c.open_access_a.open + c.open_access_a.closed;
  const std::size_t tb = c.open_access_b.open + c.open_access_b.closed;
  out += "\nFisher exact test, open access\n";
  out += pad("Corpus", 14) + pad("Open", 14) + pad("Closed", 14) + "Unknown (excluded)\n";
  out += pad(a, 14) + pad(cell(c.open_access_a.open, ta), 14) +
         pad(cell(c.open_access_a.closed, ta), 14) + std::to_string(c.open_access_a.unknown) + "\n";
  out += pad(b, 14) + pad(cell(c.open_access_b.open, tb), 14) +
         pad(cell(c.open_access_b.closed, tb), 14) + std::to_string(c.open_access_b.unknown) + "\n";
  if (c.open_access) {
    const double orr = c.open_access->odds_ratio;
    out += "Odds ratio " + (std::isinf(orr) ? std::string("inf") : format_num(orr, 2)) +
           ", p " + format_p(c.open_access->p_value) + "\n";
  } else {
    out += "Odds ratio -, p - (degenerate margins)\n";
  }
  return out;
}

}  // namespace screenkit
