#pragma once

#include <cstddef>
#include <vector>

namespace histlayer::reference {

/// Brute-force soft histogram on plain arrays, written independently of the
/// layer code so it can serve as a cross-check.
///
/// likelihood: [samples][classes][positions] flattened.
/// centers, slopes: [classes][bins] flattened.
/// Returns [samples][classes * bins].
std::vector<double> histogram(const std::vector<double>& likelihood, std::size_t samples, std::size_t classes,
                              std::size_t positions, const std::vector<double>& centers,
                              const std::vector<double>& slopes, std::size_t bins);

}  // namespace histlayer::reference
