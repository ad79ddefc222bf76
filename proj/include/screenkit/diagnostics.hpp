#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "screenkit/clock.hpp"
#include "screenkit/corpus.hpp"

namespace screenkit {

enum class MannWhitneyMethod { Exact, NormalApprox };

std::string_view to_string(MannWhitneyMethod m) noexcept;

struct MannWhitneyResult {
  double u_statistic = 0.0;  // U for the first sample
  double p_value = 1.0;      // two-sided
  MannWhitneyMethod method = MannWhitneyMethod::Exact;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

inline constexpr std::size_t kExactThreshold = 20;

// Exact enumeration when n1 + n2 <= exact_threshold, otherwise the normal
// approximation with tie and continuity corrections. Throws EmptySample.
MannWhitneyResult mann_whitney_u(std::span<const double> x, std::span<const double> y,
                                 std::size_t exact_threshold = kExactThreshold);

struct FisherResult {
  double odds_ratio = 1.0;  // +inf when b*c == 0
  double p_value = 1.0;
  std::array<std::uint64_t, 4> table{};  // a, b, c, d
};

// Rows (a, b) and (c, d). Throws DegenerateMargins when a row or column sums to 0.
FisherResult fisher_exact_2x2(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

enum class OaSource { Unpaywall, Doaj, Manual, None };

std::string_view to_string(OaSource s) noexcept;
OaSource parse_oa_source(std::string_view s);

struct OaStatus {
  std::string record_id;
  OpenAccess status = OpenAccess::Unknown;
  OaSource source = OaSource::None;  // None iff status is Unknown
};

struct OaLookup {
  OpenAccess status = OpenAccess::Unknown;
  OaSource source = OaSource::None;
};

// Open-access registry lookup by DOI. Throws ClientUnreachable on transport failure.
class OaClient {
 public:
  virtual ~OaClient() = default;
  virtual OaLookup lookup(const std::string& doi) = 0;
  virtual std::size_t requests_per_minute() const = 0;
};

struct HttpOaConfig {
  std::string contact_email;  // required by Unpaywall
  std::string unpaywall_base = "https://api.unpaywall.org";
  std::string doaj_base = "https://doaj.org";
  std::size_t requests_per_minute = 60;
  int timeout_s = 20;
};

// Unpaywall first; DOAJ when Unpaywall does not know the DOI.
class HttpOaClient final : public OaClient {
 public:
  explicit HttpOaClient(HttpOaConfig config);  // throws ConfigValidation without an email
  OaLookup lookup(const std::string& doi) override;
  std::size_t requests_per_minute() const override { return config_.requests_per_minute; }

 private:
  HttpOaConfig config_;
};

struct OaEnrichResult {
  std::vector<OaStatus> statuses;  // corpus order
  std::size_t queries = 0;         // outbound lookups made
  std::vector<std::string> warnings;
};

// Cache-first enrichment. A record's own open-access field wins (source manual);
// records without a DOI stay unknown. Unreachable lookups degrade to unknown
// with a warning and are not cached.
OaEnrichResult oa_enrich(std::span<const Record> records, OaClient& client,
                         const std::filesystem::path& cache_path, Clock* clock = nullptr);

// Copies enriched statuses back onto the records.
void apply_open_access(std::vector<Record>& records, std::span<const OaStatus> statuses);

struct SampleSummary {
  std::size_t n = 0;
  std::optional<double> median;
};

struct CorpusComparison {
  SampleSummary abstract_length_a, abstract_length_b;
  std::optional<MannWhitneyResult> abstract_length;  // absent when a side has no abstracts
  SampleSummary year_a, year_b;
  std::optional<MannWhitneyResult> year;
  OpenAccessCounts open_access_a, open_access_b;
  std::optional<FisherResult> open_access;  // absent on degenerate margins
};

// Abstract lengths use non-empty abstracts only; unknown access status is
// left out of the Fisher table and reported in the counts.
CorpusComparison compare_corpora(const CorpusStats& a, const CorpusStats& b);

nlohmann::json to_json(const MannWhitneyResult& r);
nlohmann::json to_json(const FisherResult& r);
nlohmann::json to_json(const CorpusComparison& c);
std::string format_comparison(const CorpusComparison& c, std::string_view label_a = "A",
                              std::string_view label_b = "B");

}  // namespace screenkit
