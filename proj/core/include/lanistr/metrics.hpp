#pragma once

#include <optional>
#include <span>
#include <vector>

namespace lanistr {

/// Probability that a random positive is scored above a random negative, ties
/// counted as one half. Labels are 0/1; both classes must be present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Fraction of rows whose argmax over `n_classes` logits equals the label.
double accuracy(std::span<const double> logits, std::size_t n_classes, std::span<const int> labels);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

double spearman(std::span<const double> x, std::span<const double> y);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

}  // namespace lanistr
