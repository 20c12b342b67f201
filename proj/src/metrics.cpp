#include "m4/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "m4/util.hpp"

namespace m4 {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& references) {
    if (predictions.size() != references.size() || references.empty())
        fail(errc::invalid_argument, "accuracy: size mismatch or empty");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < references.size(); ++i)
        if (predictions[i] == references[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(references.size());
}

double recall_at_k(const std::vector<std::vector<std::string>>& ranked,
                   const std::vector<std::string>& references, std::size_t k) {
    if (ranked.size() != references.size() || references.empty())
        fail(errc::invalid_argument, "recall_at_k: size mismatch or empty");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        const auto& list = ranked[i];
        const std::size_t limit = std::min(k, list.size());
        for (std::size_t j = 0; j < limit; ++j) {
            if (list[j] == references[i]) {
                ++hit;
                break;
            }
        }
    }
    return static_cast<double>(hit) / static_cast<double>(references.size());
}

double f1_binary(const std::vector<int>& predictions, const std::vector<int>& references) {
    if (predictions.size() != references.size() || references.empty())
        fail(errc::invalid_argument, "f1_binary: size mismatch or empty");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (predictions[i] == 1 && references[i] == 1) ++tp;
        if (predictions[i] == 1 && references[i] == 0) ++fp;
        if (predictions[i] == 0 && references[i] == 1) ++fn;
    }
    if (tp == 0) return 0.0;
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngrams(const std::vector<std::string>& words, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    if (words.size() < n) return out;
    for (std::size_t i = 0; i + n <= words.size(); ++i)
        ++out[std::vector<std::string>(words.begin() + i, words.begin() + i + n)];
    return out;
}

}  // namespace

double bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    if (candidates.size() != references.size() || references.empty())
        fail(errc::invalid_argument, "bleu4: size mismatch or empty");
    double cand_len = 0, ref_len = 0;
    double log_p = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        double matched = 0, total = 0;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            const auto cw = split_words(candidates[i]);
            const auto rw = split_words(references[i]);
            if (n == 1) {
                cand_len += static_cast<double>(cw.size());
                ref_len += static_cast<double>(rw.size());
            }
            const auto cn = ngrams(cw, n);
            const auto rn = ngrams(rw, n);
            for (const auto& [gram, count] : cn) {
                total += static_cast<double>(count);
                auto it = rn.find(gram);
                if (it != rn.end()) matched += static_cast<double>(std::min(count, it->second));
            }
        }
        log_p += 0.25 * std::log((matched + 1.0) / (total + 1.0));  // add-one smoothing
    }
    const double bp = cand_len >= ref_len || cand_len == 0.0
                          ? 1.0
                          : std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_p);
}

double word_error_rate(const std::string& hypothesis, const std::string& reference) {
    const auto h = split_words(hypothesis);
    const auto r = split_words(reference);
    if (r.empty()) fail(errc::invalid_argument, "word_error_rate: empty reference");
    std::vector<std::size_t> prev(h.size() + 1), cur(h.size() + 1);
    for (std::size_t j = 0; j <= h.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= r.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= h.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (r[i - 1] == h[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[h.size()]) / static_cast<double>(r.size());
}

double word_error_rate(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
    if (hypotheses.size() != references.size() || references.empty())
        fail(errc::invalid_argument, "word_error_rate: size mismatch or empty");
    double errors = 0, words = 0;
    for (std::size_t i = 0; i < references.size(); ++i) {
        const auto r = split_words(references[i]);
        errors += word_error_rate(hypotheses[i], references[i]) * static_cast<double>(r.size());
        words += static_cast<double>(r.size());
    }
    return errors / words;
}

}  // namespace m4
