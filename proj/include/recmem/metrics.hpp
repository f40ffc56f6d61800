#pragma once

#include <string>
#include <vector>

#include "recmem/dialogue.hpp"

namespace recmem {

// Lowercased tokens produced by normalize(). Never contains empty tokens.
using TokenList = std::vector<std::string>;

// One normalization pipeline for every metric and for token budgeting:
// ASCII lowercase, punctuation split into single-character tokens, words
// split on whitespace. Bytes >= 0x80 are treated as word characters so
// UTF-8 sequences stay intact.
TokenList normalize(const std::string& text);

// normalize(text).size(), the approximate token count used for budgets.
std::size_t token_count(const std::string& text);

// Sentence-level BLEU-n: brevity penalty times the geometric mean of
// modified n-gram precisions for orders 1..n, uniform weights. Zero when
// any order has no matches (no smoothing). n must be 1 or 2.
double bleu_n(const TokenList& hyp, const TokenList& ref, int n);

// Multiset unigram overlap F1. Zero when either side is empty or nothing
// overlaps.
double unigram_f1(const TokenList& hyp, const TokenList& ref);

// Unique n-grams over total n-grams across the whole corpus. n-grams do
// not cross response boundaries. Zero when the corpus holds no n-grams.
double distinct_n(const std::vector<TokenList>& corpus, int n);

struct MemoryScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Token-level precision/recall/F1 of a predicted memory against the gold
// summary, on normalized text. Gold must be non-empty; an empty
// prediction scores (0, 0, 0).
MemoryScores memory_scores(const std::string& predicted, const std::string& gold);

struct ScoreReport {
    double bleu1 = 0.0;
    double bleu2 = 0.0;
    double f1 = 0.0;
    double dist1 = 0.0;
    double dist2 = 0.0;
    int n_evaluated = 0;

    bool operator==(const ScoreReport&) const = default;
};

// Per-turn BLEU/F1 averaged uniformly over records; DISTINCT computed
// corpus-level over all response texts. Records must share one strategy
// and one session; the list must be non-empty.
ScoreReport aggregate(const std::vector<RunRecord>& records);

}  // namespace recmem
