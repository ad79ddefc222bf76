#include "screenkit/corpus.hpp"

#include <algorithm>
#include <cctype>

#include "screenkit/csv.hpp"
#include "screenkit/error.hpp"
#include "screenkit/text.hpp"

namespace screenkit {

namespace {

const std::map<std::string, std::vector<std::string>>& default_aliases() {
  static const std::map<std::string, std::vector<std::string>> aliases = {
      {"id", {"id", "record_id", "recordid"}},
      {"title", {"title"}},
      {"abstract", {"abstract"}},
      {"year", {"year", "publication_year", "py"}},
      {"doi", {"doi"}},
      {"open_access", {"open_access", "oa", "is_oa"}},
  };
  return aliases;
}

std::optional<std::size_t> find_column(const csv::Row& header, const std::string& field,
                                       const ColumnMap& column_map) {
  if (auto it = column_map.find(field); it != column_map.end()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (text::trim(header[i]) == it->second) return i;
    }
    return std::nullopt;
  }
  for (const auto& alias : default_aliases().at(field)) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (text::iequals(text::trim(header[i]), alias)) return i;
    }
  }
  return std::nullopt;
}

std::optional<int> parse_year(std::string_view s) {
  for (std::size_t i = 0; i + 4 <= s.size(); ++i) {
    bool digits = true;
    for (std::size_t k = 0; k < 4; ++k) {
      if (!std::isdigit(static_cast<unsigned char>(s[i + k]))) {
        digits = false;
        break;
      }
    }
    const bool bounded_left = i == 0 || !std::isdigit(static_cast<unsigned char>(s[i - 1]));
    const bool bounded_right =
        i + 4 == s.size() || !std::isdigit(static_cast<unsigned char>(s[i + 4]));
    if (digits && bounded_left && bounded_right) return std::stoi(std::string(s.substr(i, 4)));
  }
  return std::nullopt;
}

std::string cell(const csv::Row& row, std::optional<std::size_t> col) {
  if (!col || *col >= row.size()) return {};
  return text::collapse_whitespace(text::sanitize_utf8(row[*col]));
}

}  // namespace

std::string_view to_string(OpenAccess oa) noexcept {
  switch (oa) {
    case OpenAccess::Open: return "open";
    case OpenAccess::Closed: return "closed";
    case OpenAccess::Unknown: break;
  }
  return "unknown";
}

OpenAccess parse_open_access(std::string_view s) noexcept {
  const std::string v = text::to_lower(text::trim(s));
  if (v == "open" || v == "true" || v == "yes" || v == "1" || v == "oa") return OpenAccess::Open;
  if (v == "closed" || v == "false" || v == "no" || v == "0") return OpenAccess::Closed;
  return OpenAccess::Unknown;
}

std::string record_id_for_title(std::string_view title) {
  return "t" + text::hex64(text::fnv1a64(text::title_key(title)));
}

Corpus::Corpus(std::vector<Record> records, std::size_t rejected_rows)
    : records_(std::move(records)), rejected_rows_(rejected_rows) {
  if (records_.empty()) fail(ErrorCode::EmptyCorpus, "corpus has no records");
  std::vector<std::string> duplicates;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(records_[i].record_id, i).second) {
      duplicates.push_back(records_[i].record_id);
    }
  }
  if (!duplicates.empty()) {
    std::string list;
    for (const auto& id : duplicates) list += (list.empty() ? "" : ", ") + id;
    fail(ErrorCode::DuplicateRecordId, "duplicate record ids: " + list);
  }
  stats_ = corpus_stats(records_);
}

const Record* Corpus::find(std::string_view record_id) const {
  auto it = index_.find(std::string(record_id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

Corpus load_corpus(const std::filesystem::path& path, const ColumnMap& column_map) {
  return parse_corpus(text::read_file(path), column_map);
}

Corpus parse_corpus(std::string_view csv_text, const ColumnMap& column_map) {
  const auto rows = csv::parse(csv_text);
  if (rows.empty()) fail(ErrorCode::EmptyCorpus, "input has no header row");
  const auto& header = rows.front();

  const auto title_col = find_column(header, "title", column_map);
  if (!title_col) {
    const auto it = column_map.find("title");
    fail(ErrorCode::MissingTitleColumn,
         "no title column (looked for " + (it != column_map.end() ? it->second : "title") + ")");
  }
  const auto id_col = find_column(header, "id", column_map);
  const auto abstract_col = find_column(header, "abstract", column_map);
  const auto year_col = find_column(header, "year", column_map);
  const auto doi_col = find_column(header, "doi", column_map);
  const auto oa_col = find_column(header, "open_access", column_map);

  std::vector<Record> records;
  std::size_t rejected = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    Record rec;
    rec.title = cell(row, title_col);
    if (rec.title.empty()) {
      ++rejected;
      continue;
    }
    rec.abstract = cell(row, abstract_col);
    const std::string id = cell(row, id_col);
    rec.record_id = id.empty() ? record_id_for_title(rec.title) : id;
    rec.year = parse_year(cell(row, year_col));
    if (auto doi = cell(row, doi_col); !doi.empty()) rec.doi = std::move(doi);
    rec.open_access = parse_open_access(cell(row, oa_col));
    records.push_back(std::move(rec));
  }
  return Corpus(std::move(records), rejected);
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out = csv::format_row({"id", "title", "abstract", "year", "doi", "open_access"});
  for (const auto& r : corpus.records()) {
    out += csv::format_row({r.record_id, r.title, r.abstract,
                            r.year ? std::to_string(*r.year) : std::string{}, r.doi.value_or(""),
                            r.open_access == OpenAccess::Unknown
                                ? std::string{}
                                : std::string(to_string(r.open_access))});
  }
  return out;
}

std::optional<double> median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

CorpusStats corpus_stats(std::span<const Record> records) {
  if (records.empty()) fail(ErrorCode::EmptyCorpus, "cannot compute stats of an empty corpus");
  CorpusStats s;
  s.n_records = records.size();
  std::vector<double> present;
  for (const auto& r : records) {
    const std::size_t len = text::utf8_length(r.abstract);
    s.abstract_length_chars.push_back(len);
    if (r.missing_abstract()) {
      ++s.n_missing_abstract;
    } else {
      present.push_back(static_cast<double>(len));
    }
    if (r.year) s.publication_years.push_back(*r.year);
    switch (r.open_access) {
      case OpenAccess::Open: ++s.open_access_counts.open; break;
      case OpenAccess::Closed: ++s.open_access_counts.closed; break;
      case OpenAccess::Unknown: ++s.open_access_counts.unknown; break;
    }
  }
  s.median_abstract_length = median(std::move(present));
  return s;
}

nlohmann::json to_json(const CorpusStats& s) {
  nlohmann::json j;
  j["n_records"] = s.n_records;
  j["n_missing_abstract"] = s.n_missing_abstract;
  j["abstract_length_chars"] = s.abstract_length_chars;
  j["publication_years"] = s.publication_years;
  j["median_abstract_length"] =
      s.median_abstract_length ? nlohmann::json(*s.median_abstract_length) : nlohmann::json();
  j["open_access_counts"] = {{"open", s.open_access_counts.open},
                             {"closed", s.open_access_counts.closed},
                             {"unknown", s.open_access_counts.unknown}};
  return j;
}

std::string_view to_string(LabelLevel level) noexcept {
  return level == LabelLevel::Fulltext ? "fulltext" : "final";
}

LabelLevel parse_label_level(std::string_view s) {
  const std::string v = text::to_lower(text::trim(s));
  if (v == "fulltext" || v == "full-text" || v == "full_text") return LabelLevel::Fulltext;
  if (v == "final") return LabelLevel::Final;
  fail(ErrorCode::InvalidArgument, "unknown label level '" + std::string(s) + "'");
}

std::optional<bool> LabelSet::truth(const std::string& record_id) const {
  if (includes.contains(record_id)) return true;
  if (excludes.contains(record_id)) return false;
  return std::nullopt;
}

namespace {

struct LabelIndex {
  std::unordered_map<std::string, std::vector<std::string>> by_title;
  const Corpus& corpus;

  explicit LabelIndex(const Corpus& c) : corpus(c) {
    for (const auto& r : c.records()) by_title[text::title_key(r.title)].push_back(r.record_id);
  }

  std::vector<std::string> resolve(const std::string& value) const {
    if (corpus.contains(value)) return {value};
    if (auto it = by_title.find(text::title_key(value)); it != by_title.end()) return it->second;
    return {};
  }
};

// Returns the key column values of a label file. A header is recognized when a
// cell names id/record_id/title; otherwise the first column is used.
std::vector<std::string> label_values(std::string_view csv_text) {
  auto rows = csv::parse(csv_text);
  std::vector<std::string> values;
  if (rows.empty()) return values;
  std::size_t col = 0;
  std::size_t first = 0;
  const auto& head = rows.front();
  std::optional<std::size_t> id_col;
  std::optional<std::size_t> title_col;
  for (std::size_t i = 0; i < head.size(); ++i) {
    const auto name = text::to_lower(text::trim(head[i]));
    if (name == "id" || name == "record_id") id_col = i;
    if (name == "title") title_col = i;
  }
  if (id_col || title_col) {
    col = id_col ? *id_col : *title_col;
    first = 1;
  }
  for (std::size_t r = first; r < rows.size(); ++r) {
    if (col >= rows[r].size()) continue;
    auto v = text::collapse_whitespace(text::sanitize_utf8(rows[r][col]));
    if (!v.empty()) values.push_back(std::move(v));
  }
  return values;
}

}  // namespace

LabelLoadResult labels_from_text(std::string_view includes_csv,
                                 std::optional<std::string_view> excludes_csv, LabelLevel level,
                                 const Corpus& corpus) {
  LabelIndex index(corpus);
  LabelLoadResult result;
  result.labels.level = level;

  auto assign = [&](std::string_view csv_text, std::set<std::string>& target) {
    for (const auto& value : label_values(csv_text)) {
      auto ids = index.resolve(value);
      if (ids.empty()) {
        result.unmatched_rows.push_back(value);
        continue;
      }
      target.insert(ids.begin(), ids.end());
    }
  };

  assign(includes_csv, result.labels.includes);
  if (excludes_csv) {
    assign(*excludes_csv, result.labels.excludes);
    std::vector<std::string> conflicts;
    std::set_intersection(result.labels.includes.begin(), result.labels.includes.end(),
                          result.labels.excludes.begin(), result.labels.excludes.end(),
                          std::back_inserter(conflicts));
    if (!conflicts.empty()) {
      std::string list;
      for (const auto& id : conflicts) list += (list.empty() ? "" : ", ") + id;
      fail(ErrorCode::LabelConflict, "records labeled both include and exclude: " + list);
    }
  } else {
    for (const auto& r : corpus.records()) {
      if (!result.labels.includes.contains(r.record_id)) result.labels.excludes.insert(r.record_id);
    }
  }
  result.unlabeled =
      corpus.size() - result.labels.includes.size() - result.labels.excludes.size();
  return result;
}

LabelLoadResult load_labels(const std::filesystem::path& includes_path,
                            const std::optional<std::filesystem::path>& excludes_path,
                            LabelLevel level, const Corpus& corpus) {
  const std::string inc = text::read_file(includes_path);
  if (excludes_path) {
    const std::string exc = text::read_file(*excludes_path);
    return labels_from_text(inc, std::string_view(exc), level, corpus);
  }
  return labels_from_text(inc, std::nullopt, level, corpus);
}

std::vector<std::string> nesting_violations(const LabelSet& fulltext, const LabelSet& final_level) {
  std::vector<std::string> out;
  std::set_difference(final_level.includes.begin(), final_level.includes.end(),
                      fulltext.includes.begin(), fulltext.includes.end(),
                      std::back_inserter(out));
  return out;
}

}  // namespace screenkit
