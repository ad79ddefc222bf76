#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace screenkit {

enum class OpenAccess { Unknown, Open, Closed };

std::string_view to_string(OpenAccess oa) noexcept;
OpenAccess parse_open_access(std::string_view s) noexcept;

struct Record {
  std::string record_id;
  std::string title;
  std::string abstract;  // empty when the export had none
  std::optional<int> year;
  std::optional<std::string> doi;
  OpenAccess open_access = OpenAccess::Unknown;

  bool missing_abstract() const noexcept { return abstract.empty(); }
  bool operator==(const Record&) const = default;
};

struct OpenAccessCounts {
  std::size_t open = 0;
  std::size_t closed = 0;
  std::size_t unknown = 0;
  bool operator==(const OpenAccessCounts&) const = default;
};

struct CorpusStats {
  std::size_t n_records = 0;
  std::size_t n_missing_abstract = 0;
  std::vector<std::size_t> abstract_length_chars;  // one per record, 0 for missing
  std::vector<int> publication_years;              // records with a year only
  std::optional<double> median_abstract_length;    // over non-empty abstracts
  OpenAccessCounts open_access_counts;
  bool operator==(const CorpusStats&) const = default;
};

// Canonical field name ("id", "title", "abstract", "year", "doi", "open_access")
// to the CSV header that holds it.
using ColumnMap = std::map<std::string, std::string>;

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Record> records, std::size_t rejected_rows = 0);

  const std::vector<Record>& records() const noexcept { return records_; }
  const CorpusStats& stats() const noexcept { return stats_; }
  std::size_t size() const noexcept { return records_.size(); }
  // Data rows dropped because their title was empty after normalization.
  std::size_t rejected_rows() const noexcept { return rejected_rows_; }

  const Record* find(std::string_view record_id) const;
  bool contains(std::string_view record_id) const { return find(record_id) != nullptr; }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::string, std::size_t> index_;
  CorpusStats stats_;
  std::size_t rejected_rows_ = 0;
};

Corpus load_corpus(const std::filesystem::path& path, const ColumnMap& column_map = {});
Corpus parse_corpus(std::string_view csv_text, const ColumnMap& column_map = {});

// Normalized store: header id,title,abstract,year,doi,open_access.
std::string serialize_corpus(const Corpus& corpus);

CorpusStats corpus_stats(std::span<const Record> records);
nlohmann::json to_json(const CorpusStats& stats);

// Order-statistic median; even counts average the central pair.
std::optional<double> median(std::vector<double> values);

std::string record_id_for_title(std::string_view title);

enum class LabelLevel { Fulltext, Final };

std::string_view to_string(LabelLevel level) noexcept;
LabelLevel parse_label_level(std::string_view s);

struct LabelSet {
  LabelLevel level = LabelLevel::Final;
  std::set<std::string> includes;
  std::set<std::string> excludes;

  std::optional<bool> truth(const std::string& record_id) const;
};

struct LabelLoadResult {
  LabelSet labels;
  std::size_t unlabeled = 0;
  std::vector<std::string> unmatched_rows;
};

// Excludes are optional: without a file, every matched corpus record that is
// not an include is an exclude.
LabelLoadResult load_labels(const std::filesystem::path& includes_path,
                            const std::optional<std::filesystem::path>& excludes_path,
                            LabelLevel level, const Corpus& corpus);
LabelLoadResult labels_from_text(std::string_view includes_csv,
                                 std::optional<std::string_view> excludes_csv, LabelLevel level,
                                 const Corpus& corpus);

// Final includes that are not full-text includes (empty when nesting holds).
std::vector<std::string> nesting_violations(const LabelSet& fulltext, const LabelSet& final_level);

}  // namespace screenkit
