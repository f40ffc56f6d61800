#include "recmem/metrics.hpp"

#include <cmath>
#include <map>
#include <set>

#include "recmem/errors.hpp"

namespace recmem {

namespace {

bool is_word_byte(unsigned char c) {
    if (c >= 0x80) return true;  // inside a UTF-8 sequence
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char lower_ascii(unsigned char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

using Counts = std::map<std::string, int>;

// n-grams joined with '\x1f' so tokens cannot collide across boundaries.
Counts ngram_counts(const TokenList& tokens, int n) {
    Counts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int k = 1; k < n; ++k) {
            key += '\x1f';
            key += tokens[i + k];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

TokenList normalize(const std::string& text) {
    TokenList tokens;
    std::string word;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            word.push_back(lower_ascii(c));
        } else {
            if (!word.empty()) {
                tokens.push_back(std::move(word));
                word.clear();
            }
            if (!is_space_byte(c)) {
                tokens.push_back(std::string(1, static_cast<char>(c)));
            }
        }
    }
    if (!word.empty()) tokens.push_back(std::move(word));
    return tokens;
}

std::size_t token_count(const std::string& text) {
    return normalize(text).size();
}

double bleu_n(const TokenList& hyp, const TokenList& ref, int n) {
    if (n < 1 || n > 2) {
        throw PreconditionError("bleu_n order must be 1 or 2, got " + std::to_string(n));
    }
    if (hyp.empty() || ref.empty()) return 0.0;

    double log_sum = 0.0;
    for (int order = 1; order <= n; ++order) {
        Counts hyp_counts = ngram_counts(hyp, order);
        Counts ref_counts = ngram_counts(ref, order);
        long total = 0;
        long clipped = 0;
        for (const auto& [gram, count] : hyp_counts) {
            total += count;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) clipped += std::min(count, it->second);
        }
        if (total == 0 || clipped == 0) return 0.0;
        log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }

    double c = static_cast<double>(hyp.size());
    double r = static_cast<double>(ref.size());
    double bp = (c > r) ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_sum / n);
}

double unigram_f1(const TokenList& hyp, const TokenList& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    Counts hyp_counts = ngram_counts(hyp, 1);
    Counts ref_counts = ngram_counts(ref, 1);
    long overlap = 0;
    for (const auto& [tok, count] : hyp_counts) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end()) overlap += std::min(count, it->second);
    }
    if (overlap == 0) return 0.0;
    double p = static_cast<double>(overlap) / static_cast<double>(hyp.size());
    double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

double distinct_n(const std::vector<TokenList>& corpus, int n) {
    if (n < 1 || n > 2) {
        throw PreconditionError("distinct_n order must be 1 or 2, got " + std::to_string(n));
    }
    std::set<std::string> unique;
    long total = 0;
    for (const TokenList& tokens : corpus) {
        for (const auto& [gram, count] : ngram_counts(tokens, n)) {
            unique.insert(gram);
            total += count;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

MemoryScores memory_scores(const std::string& predicted, const std::string& gold) {
    TokenList gold_tokens = normalize(gold);
    if (gold_tokens.empty()) {
        throw PreconditionError("memory_scores requires a non-empty gold summary");
    }
    TokenList pred_tokens = normalize(predicted);
    if (pred_tokens.empty()) return {};

    Counts pred_counts = ngram_counts(pred_tokens, 1);
    Counts gold_counts = ngram_counts(gold_tokens, 1);
    long overlap = 0;
    for (const auto& [tok, count] : pred_counts) {
        auto it = gold_counts.find(tok);
        if (it != gold_counts.end()) overlap += std::min(count, it->second);
    }
    MemoryScores scores;
    scores.precision = static_cast<double>(overlap) / static_cast<double>(pred_tokens.size());
    scores.recall = static_cast<double>(overlap) / static_cast<double>(gold_tokens.size());
    if (overlap > 0) {
        scores.f1 = 2.0 * scores.precision * scores.recall / (scores.precision + scores.recall);
    }
    return scores;
}

ScoreReport aggregate(const std::vector<RunRecord>& records) {
    if (records.empty()) {
        throw PreconditionError("aggregate requires at least one record");
    }
    for (const RunRecord& r : records) {
        if (r.strategy != records.front().strategy ||
            r.session_index != records.front().session_index) {
            throw PreconditionError("aggregate requires records of one strategy and one session");
        }
    }

    ScoreReport report;
    std::vector<TokenList> responses;
    responses.reserve(records.size());
    for (const RunRecord& r : records) {
        TokenList hyp = normalize(r.response);
        TokenList ref = normalize(r.reference);
        report.bleu1 += bleu_n(hyp, ref, 1);
        report.bleu2 += bleu_n(hyp, ref, 2);
        report.f1 += unigram_f1(hyp, ref);
        responses.push_back(std::move(hyp));
    }
    double n = static_cast<double>(records.size());
    report.bleu1 /= n;
    report.bleu2 /= n;
    report.f1 /= n;
    report.dist1 = distinct_n(responses, 1);
    report.dist2 = distinct_n(responses, 2);
    report.n_evaluated = static_cast<int>(records.size());
    return report;
}

}  // namespace recmem
