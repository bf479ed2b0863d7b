#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace carpas::textmetrics {

using TokenSequence = std::vector<std::string>;

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

inline PRF make_prf(double p, double r) {
    PRF out;
    out.precision = p;
    out.recall = r;
    out.f1 = (p + r > 0.0) ? 2.0 * p * r / (p + r) : 0.0;
    return out;
}

// Canonical tokenizer shared by every metric: case-fold, split on
// non-alphanumeric boundaries, keep digit runs as tokens.
inline TokenSequence tokenize(const std::string& text) {
    TokenSequence tokens;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngram_counts(const TokenSequence& tokens, std::size_t n) {
    NgramCounts counts;
    if (n == 0 || tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                        tokens.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
    }
    return counts;
}

// Clipped overlap between candidate and reference n-gram multisets.
inline std::size_t clipped_overlap(const NgramCounts& cand, const NgramCounts& ref) {
    std::size_t overlap = 0;
    for (const auto& [gram, count] : cand) {
        auto it = ref.find(gram);
        if (it != ref.end()) overlap += std::min(count, it->second);
    }
    return overlap;
}

inline std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
    const std::size_t m = a.size(), n = b.size();
    std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
    for (std::size_t i = 1; i <= m; ++i) {
        for (std::size_t j = 1; j <= n; ++j) {
            cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1
                                            : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

} // namespace detail

inline PRF rouge_n(const TokenSequence& candidate, const TokenSequence& reference, std::size_t n) {
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    std::size_t cand_total = 0, ref_total = 0;
    for (const auto& [g, c] : cand) cand_total += c;
    for (const auto& [g, c] : ref) ref_total += c;
    const std::size_t overlap = detail::clipped_overlap(cand, ref);
    const double p = cand_total ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
    const double r = ref_total ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
    return make_prf(p, r);
}

inline PRF rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
    if (candidate.empty() || reference.empty()) return PRF{};
    const double lcs = static_cast<double>(detail::lcs_length(candidate, reference));
    return make_prf(lcs / static_cast<double>(candidate.size()),
                    lcs / static_cast<double>(reference.size()));
}

// Single-reference BLEU with brevity penalty. Orders above the candidate
// length are skipped; zero counts at orders > 1 get add-one smoothing so
// short summaries do not collapse to zero.
inline double bleu(const TokenSequence& candidate, const TokenSequence& reference,
                   std::size_t max_order = 4) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t top = std::min(max_order, candidate.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= top; ++n) {
        const auto cand = detail::ngram_counts(candidate, n);
        const auto ref = detail::ngram_counts(reference, n);
        std::size_t total = 0;
        for (const auto& [g, c] : cand) total += c;
        std::size_t overlap = detail::clipped_overlap(cand, ref);
        double precision;
        if (overlap == 0) {
            if (n == 1) return 0.0; // no unigram overlap at all
            precision = 1.0 / static_cast<double>(total + 1);
        } else {
            precision = static_cast<double>(overlap) / static_cast<double>(total);
        }
        log_sum += std::log(precision);
    }
    double score = std::exp(log_sum / static_cast<double>(top));
    if (candidate.size() < reference.size()) {
        score *= std::exp(1.0 - static_cast<double>(reference.size()) /
                                    static_cast<double>(candidate.size()));
    }
    return std::min(score, 1.0);
}

// Token-set Jaccard similarity; both empty -> 1 by convention.
inline double jaccard(const TokenSequence& a, const TokenSequence& b) {
    const std::set<std::string> sa(a.begin(), a.end());
    const std::set<std::string> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

} // namespace carpas::textmetrics
