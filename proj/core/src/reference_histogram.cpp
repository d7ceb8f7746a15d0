#include "histlayer/reference_histogram.hpp"

#include <cmath>

namespace histlayer::reference {

std::vector<double> histogram(const std::vector<double>& likelihood, std::size_t samples, std::size_t classes,
                              std::size_t positions, const std::vector<double>& centers,
                              const std::vector<double>& slopes, std::size_t bins) {
  std::vector<double> out(samples * classes * bins, 0.0);
  for (std::size_t n = 0; n < samples; ++n) {
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t b = 0; b < bins; ++b) {
        double votes = 0.0;
        for (std::size_t p = 0; p < positions; ++p) {
          const double x = likelihood[(n * classes + k) * positions + p];
          const double vote = 1.0 - std::fabs(x - centers[k * bins + b]) * slopes[k * bins + b];
          if (vote > 0.0) votes += vote;
        }
        out[n * classes * bins + k * bins + b] = votes / static_cast<double>(positions);
      }
    }
  }
  return out;
}

}  // namespace histlayer::reference
