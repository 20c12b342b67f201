#pragma once

#include <string>
#include <vector>

namespace m4 {

// Exact-match fraction.
double accuracy(const std::vector<std::string>& predictions, const std::vector<std::string>& references);

// Fraction of references found within the first k ranked predictions.
double recall_at_k(const std::vector<std::vector<std::string>>& ranked,
                   const std::vector<std::string>& references, std::size_t k);

// Binary F1 with "1" as the positive label.
double f1_binary(const std::vector<int>& predictions, const std::vector<int>& references);

// Corpus BLEU-4, add-one smoothed n-gram precisions, brevity penalty.
double bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// Word error rate: word-level edit distance over reference length.
double word_error_rate(const std::string& hypothesis, const std::string& reference);
double word_error_rate(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

std::vector<std::string> split_words(const std::string& text);

}  // namespace m4
