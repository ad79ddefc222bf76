#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "screenkit/csv.hpp"
#include "screenkit/prompt.hpp"
#include "support.hpp"

namespace fixtures {

using testsupport::Rng;

// A corpus shaped like the first review: 821 records, 25 without an abstract,
// 191 full-text includes of which 63 are final includes. The final includes'
// abstracts have a median length of 1779 characters.
struct ReviewCorpus {
  std::string csv;
  std::vector<std::string> titles;
  std::vector<std::string> fulltext_titles;
  std::vector<std::string> final_titles;
  std::vector<std::size_t> final_abstract_lengths;
};

inline ReviewCorpus review_one_corpus(std::uint64_t seed = 7) {
  constexpr std::size_t kRecords = 821, kMissing = 25, kFulltext = 191, kFinal = 63;
  constexpr std::size_t kFinalMedian = 1779;
  Rng rng(seed);
  ReviewCorpus out;
  out.csv = "Title,Abstract,Year,DOI\n";

  std::vector<std::size_t> final_lengths;
  for (std::size_t i = 0; i < kFinal / 2; ++i) {
    final_lengths.push_back(static_cast<std::size_t>(testsupport::uniform_int(rng, 900, 1770)));
  }
  final_lengths.push_back(kFinalMedian);
  for (std::size_t i = 0; i < kFinal / 2; ++i) {
    final_lengths.push_back(static_cast<std::size_t>(testsupport::uniform_int(rng, 1790, 2900)));
  }
  std::shuffle(final_lengths.begin(), final_lengths.end(), rng);
  out.final_abstract_lengths = final_lengths;

  for (std::size_t i = 0; i < kRecords; ++i) {
    const std::string title = "Prodrome cohort study number " + std::to_string(i + 1);
    std::string abstract;
    if (i < kFinal) {
      abstract = testsupport::filler(final_lengths[i], rng);
    } else if (i >= kRecords - kMissing) {
      abstract.clear();
    } else {
      abstract = testsupport::filler(static_cast<std::size_t>(testsupport::uniform_int(rng, 600, 2600)), rng);
    }
    const int year = testsupport::uniform_int(rng, 1995, 2024);
    const std::string doi = "10.5555/r1." + std::to_string(i + 1);
    out.csv += screenkit::csv::format_row({title, abstract, std::to_string(year), doi}) + "\n";
    out.titles.push_back(title);
    if (i < kFulltext) out.fulltext_titles.push_back(title);
    if (i < kFinal) out.final_titles.push_back(title);
  }
  return out;
}

inline std::string title_list(const std::vector<std::string>& titles, bool header = true) {
  std::string s = header ? "title\n" : "";
  for (const auto& t : titles) s += screenkit::csv::escape(t) + "\n";
  return s;
}

// Stratified criteria for a made-up review on adolescent sleep, lettered the
// way hand-stratified criteria usually are.
inline screenkit::Criteria sleep_criteria(bool with_heuristic) {
  screenkit::Criteria c;
  c.form = screenkit::CriteriaForm::Stratified;
  c.inclusion = {
      {"A) Population", "Adolescents aged 10 to 19 years."},
      {"B) Outcome / Exposure", "Sleep duration or sleep quality measured by actigraphy or diary."},
      {"C) Study Type / Design", "Observational cohorts or cross-sectional surveys."},
      {"D) Setting / Context", "Community or school samples."},
  };
  c.exclusion = {
      {"A) Population", "Samples restricted to diagnosed sleep disorders."},
      {"B) Study Type / Design", "Case reports, editorials and conference abstracts."},
  };
  if (with_heuristic) {
    c.inclusion.push_back(
        {"E) Heuristic",
         "If B, C and D hold and the study tracks sleep across puberty, lean towards inclusion. "
         "When unsure, include as long as the study reports a sleep measure for adolescents."});
    c.inclusion_bias = true;
  }
  return c;
}

// Fifty records with a planted truth and a scripted actor (and critic).
//   truth include, actor include  -> 12 records (critic agrees on 10)
//   truth include, actor exclude  ->  3 records (critic includes 2)
//   truth exclude, actor include  ->  5 records (critic excludes 4)
//   truth exclude, actor exclude  -> 30 records (critic includes 1)
struct PlantedCorpus {
  std::string csv;
  nlohmann::json script;
  std::vector<std::string> include_titles;
  std::vector<std::string> ids;
  std::vector<bool> truth;
  std::vector<bool> actor_include;
  std::vector<bool> critic_include;
};

inline PlantedCorpus planted_corpus() {
  PlantedCorpus p;
  p.csv = "id,title,abstract,year\n";
  Rng rng(50);
  auto add = [&](bool truth, bool actor, bool critic) {
    const std::size_t i = p.ids.size();
    char id[16];
    std::snprintf(id, sizeof id, "P%03zu", i + 1);
    const std::string title = std::string(truth ? "Screen time and sleep in teenagers, cohort "
                                                : "Adult shift work outcomes, report ") +
                              std::to_string(i + 1);
    const std::string abstract =
        i % 17 == 16 ? std::string() : testsupport::filler(200 + 13 * i, rng);
    p.csv += screenkit::csv::format_row({id, title, abstract, std::to_string(2000 + i % 20)}) + "\n";
    const double actor_conf = 0.55 + static_cast<double>(i % 9) * 0.05;
    const double critic_conf = 0.6 + static_cast<double>(i % 7) * 0.05;
    p.script[id] = {
        {"actor", {{"decision", actor ? "include" : "exclude"}, {"confidence", actor_conf}}},
        {"critic", {{"decision", critic ? "include" : "exclude"}, {"confidence", critic_conf}}}};
    p.ids.push_back(id);
    p.truth.push_back(truth);
    p.actor_include.push_back(actor);
    p.critic_include.push_back(critic);
    if (truth) p.include_titles.push_back(title);
  };
  for (int i = 0; i < 12; ++i) add(true, true, i < 10);
  for (int i = 0; i < 3; ++i) add(true, false, i < 2);
  for (int i = 0; i < 5; ++i) add(false, true, i < 1);
  for (int i = 0; i < 30; ++i) add(false, false, i < 1);
  return p;
}

}  // namespace fixtures
