#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "histlayer/gradcheck.hpp"

namespace histlayer {

struct PropertyReport {
  std::string name;
  std::size_t trials = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t skipped = 0;
  std::vector<Coordinate> skipped_examples;  ///< first few only
  bool passed = true;
  /// The property is supposed to fail (e.g. structure checks on free_all);
  /// `passed` then means "failed as expected".
  bool expected_fail = false;
  std::uint64_t seed = 0;
  std::string detail;

  /// One JSON object on a single line.
  std::string json_line() const;
};

struct SuiteOptions {
  std::uint64_t seed = 20160903;
  /// Random instances for the histogram equivalence and oracle properties.
  std::size_t structural_trials = 1000;
  /// Random instances per finite-difference property.
  std::size_t gradient_trials = 100;
  GradCheckOptions gradcheck;
};

/// Finite-difference checks for every primitive, both histogram forms and a
/// full HistNet graph.
std::vector<PropertyReport> run_gradient_checks(const SuiteOptions& options);

/// Direct vs composed histogram values and gradients, maps and vectors.
PropertyReport check_histogram_equivalence(std::uint64_t seed, std::size_t trials);
/// Direct histogram vs the brute-force reference.
PropertyReport check_oracle_agreement(std::uint64_t seed, std::size_t trials);
PropertyReport check_partition_of_unity();
PropertyReport check_initialization();
/// 100 momentum-SGD steps on random losses; locked entries must not move.
PropertyReport check_lock_immutability(std::uint64_t seed, bool fix_hist);
/// free_all unlocks everything, so the structure check must fail there.
PropertyReport check_free_all_breaks_structure(std::uint64_t seed);
PropertyReport check_feature_range(std::uint64_t seed, std::size_t trials);
PropertyReport check_dataset_determinism(std::uint64_t seed);
PropertyReport check_metric_fixtures();

/// Everything above.
std::vector<PropertyReport> run_all(const SuiteOptions& options);

}  // namespace histlayer
