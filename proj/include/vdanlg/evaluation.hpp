#pragma once

// Corpus BLEU-4, slot coverage and slot error rate, and candidate
// re-ranking by likelihood minus coverage penalties.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "vdanlg/corpus.hpp"
#include "vdanlg/generator.hpp"

namespace vdanlg::evaluation {

using Tokens = std::vector<std::string>;

// Geometric mean of clipped n-gram precisions (n = 1..4) on corpus totals,
// times exp(min(0, 1 - ref_len / cand_len)). Zero counts are floored at
// 1e-9, so a precision with no n-grams on either side is 1.
double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references);

// Verbalizations of binary slot values: slot -> value -> phrase tokens.
using PhraseLexicon = std::map<std::string, std::map<std::string, Tokens>>;

PhraseLexicon default_lexicon();

struct SlotCoverage {
  std::map<std::string, int> required;
  std::map<std::string, int> realized;
  int missing = 0;
  int redundant = 0;

  int required_count() const;
};

// Required: SLOT_<NAME> per non-binary slot and one "<slot>=<value>" marker
// per binary slot with a lexicon entry. Realized: SLOT_ tokens in the
// candidate plus lexicon phrases found by a longest-first, non-overlapping
// scan.
SlotCoverage slot_coverage(std::span<const std::string> candidate,
                           const corpus::DialogueAct& da,
                           const PhraseLexicon& lexicon);

// Percentage; 0 when nothing is required.
double slot_error_rate(std::span<const SlotCoverage> coverage);

// score = normalized_log_prob - penalty_weight * (missing + redundant).
double rerank_score(const generator::Candidate& c, double penalty_weight);

// Fills coverage and score, then sorts by descending score, stable on ties.
std::vector<generator::Candidate> rerank(std::vector<generator::Candidate> candidates,
                                         const corpus::DialogueAct& da,
                                         double penalty_weight,
                                         const PhraseLexicon& lexicon);

struct ExampleReport {
  std::string da;
  Tokens candidate;
  Tokens reference;
  SlotCoverage coverage;
};

struct EvalReport {
  double bleu = 0.0;
  double err = 0.0;
  std::vector<ExampleReport> examples;
};

EvalReport evaluate(std::span<const Tokens> candidates,
                    std::span<const Tokens> references,
                    std::span<const corpus::DialogueAct> das,
                    const PhraseLexicon& lexicon);

std::string report_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace vdanlg::evaluation
