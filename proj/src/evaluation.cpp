#include "vdanlg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vdanlg::evaluation {

namespace {

constexpr int kMaxOrder = 4;
constexpr double kFloor = 1e-9;

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const Tokens& tokens, int n) {
  NgramCounts out;
  const auto N = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + N <= tokens.size(); ++i) {
    ++out[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                 tokens.begin() + static_cast<std::ptrdiff_t>(i + N))];
  }
  return out;
}

std::string binary_marker(const std::string& slot, const std::string& value) {
  return slot + "=" + value;
}

}  // namespace

double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("bleu: " + std::to_string(candidates.size()) +
                                " candidates but " +
                                std::to_string(references.size()) + " references");
  }
  double matched[kMaxOrder] = {};
  double total[kMaxOrder] = {};
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
    for (int n = 1; n <= kMaxOrder; ++n) {
      const NgramCounts cand = ngrams(candidates[i], n);
      const NgramCounts ref = ngrams(references[i], n);
      for (const auto& [gram, count] : cand) {
        total[n - 1] += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0;
  for (int n = 0; n < kMaxOrder; ++n) {
    log_sum += std::log(std::max(matched[n], kFloor) / std::max(total[n], kFloor));
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / cand_len));
  return bp * std::exp(log_sum / kMaxOrder);
}

PhraseLexicon default_lexicon() {
  return {{"isforbusinesscomputing",
           {{"true", {"for", "business", "computing"}},
            {"false", {"not", "for", "business", "computing"}}}}};
}

int SlotCoverage::required_count() const {
  int n = 0;
  for (const auto& [_, count] : required) n += count;
  return n;
}

SlotCoverage slot_coverage(std::span<const std::string> candidate,
                           const corpus::DialogueAct& da,
                           const PhraseLexicon& lexicon) {
  SlotCoverage cov;
  for (const auto& [name, value] : da.slots) {
    if (!corpus::is_binary_value(value)) {
      ++cov.required[corpus::slot_token(name)];
      continue;
    }
    const auto slot = lexicon.find(name);
    if (slot != lexicon.end() && slot->second.contains(corpus::to_lower(value))) {
      ++cov.required[binary_marker(name, corpus::to_lower(value))];
    }
  }

  struct Phrase {
    const Tokens* tokens;
    std::string marker;
  };
  std::vector<Phrase> phrases;
  for (const auto& [slot, values] : lexicon) {
    for (const auto& [value, tokens] : values) {
      if (!tokens.empty()) phrases.push_back({&tokens, binary_marker(slot, value)});
    }
  }
  std::stable_sort(phrases.begin(), phrases.end(), [](const Phrase& a, const Phrase& b) {
    return a.tokens->size() > b.tokens->size();
  });

  for (std::size_t i = 0; i < candidate.size();) {
    if (corpus::is_slot_token(candidate[i])) {
      ++cov.realized[candidate[i]];
      ++i;
      continue;
    }
    const Phrase* hit = nullptr;
    for (const auto& p : phrases) {
      const auto& t = *p.tokens;
      if (i + t.size() <= candidate.size() &&
          std::equal(t.begin(), t.end(),
                     candidate.begin() + static_cast<std::ptrdiff_t>(i))) {
        hit = &p;
        break;
      }
    }
    if (hit != nullptr) {
      ++cov.realized[hit->marker];
      i += hit->tokens->size();
    } else {
      ++i;
    }
  }

  for (const auto& [key, need] : cov.required) {
    const auto it = cov.realized.find(key);
    const int have = it == cov.realized.end() ? 0 : it->second;
    cov.missing += std::max(0, need - have);
  }
  for (const auto& [key, have] : cov.realized) {
    const auto it = cov.required.find(key);
    const int need = it == cov.required.end() ? 0 : it->second;
    cov.redundant += std::max(0, have - need);
  }
  return cov;
}

double slot_error_rate(std::span<const SlotCoverage> coverage) {
  if (coverage.empty()) throw std::invalid_argument("slot_error_rate: no examples");
  double errors = 0, required = 0;
  for (const auto& c : coverage) {
    errors += c.missing + c.redundant;
    required += c.required_count();
  }
  return required == 0 ? 0.0 : 100.0 * errors / required;
}

double rerank_score(const generator::Candidate& c, double penalty_weight) {
  return generator::normalized_log_prob(c) -
         penalty_weight * static_cast<double>(c.missing + c.redundant);
}

std::vector<generator::Candidate> rerank(std::vector<generator::Candidate> candidates,
                                         const corpus::DialogueAct& da,
                                         double penalty_weight,
                                         const PhraseLexicon& lexicon) {
  for (auto& c : candidates) {
    const SlotCoverage cov = slot_coverage(c.tokens.tokens, da, lexicon);
    c.missing = cov.missing;
    c.redundant = cov.redundant;
    c.score = rerank_score(c, penalty_weight);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const generator::Candidate& a, const generator::Candidate& b) {
                     return a.score > b.score;
                   });
  return candidates;
}

EvalReport evaluate(std::span<const Tokens> candidates,
                    std::span<const Tokens> references,
                    std::span<const corpus::DialogueAct> das,
                    const PhraseLexicon& lexicon) {
  if (das.size() != candidates.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(candidates.size()) +
                                " candidates but " + std::to_string(das.size()) +
                                " dialogue acts");
  }
  EvalReport report;
  report.bleu = bleu(candidates, references);
  std::vector<SlotCoverage> coverage;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    coverage.push_back(slot_coverage(candidates[i], das[i], lexicon));
    report.examples.push_back({corpus::format_dialogue_act(das[i]), candidates[i],
                               references[i], coverage.back()});
  }
  report.err = slot_error_rate(coverage);
  return report;
}

namespace {

std::string join(const Tokens& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["bleu"] = report.bleu;
  j["err"] = report.err;
  auto& rows = j["examples"] = nlohmann::ordered_json::array();
  for (const auto& ex : report.examples) {
    rows.push_back({{"da", ex.da},
                    {"candidate", join(ex.candidate)},
                    {"reference", join(ex.reference)},
                    {"required", ex.coverage.required_count()},
                    {"missing", ex.coverage.missing},
                    {"redundant", ex.coverage.redundant}});
  }
  return j.dump(2);
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  int required = 0, missing = 0, redundant = 0;
  for (const auto& ex : report.examples) {
    required += ex.coverage.required_count();
    missing += ex.coverage.missing;
    redundant += ex.coverage.redundant;
  }
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %10s\n", "metric", "value");
  out << line;
  std::snprintf(line, sizeof line, "%-10s %10zu\n", "examples", report.examples.size());
  out << line;
  std::snprintf(line, sizeof line, "%-10s %10.4f\n", "BLEU", report.bleu);
  out << line;
  std::snprintf(line, sizeof line, "%-10s %9.2f%%\n", "ERR", report.err);
  out << line;
  std::snprintf(line, sizeof line, "%-10s %10d\n", "required", required);
  out << line;
  std::snprintf(line, sizeof line, "%-10s %10d\n", "missing", missing);
  out << line;
  std::snprintf(line, sizeof line, "%-10s %10d\n", "redundant", redundant);
  out << line;
  return out.str();
}

}  // namespace vdanlg::evaluation
