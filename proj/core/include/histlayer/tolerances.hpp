#pragma once

namespace histlayer::tol {

/// Two computations of the same quantity along different code paths.
inline constexpr double kStructural = 1e-12;
/// Analytic gradient vs central finite difference, relative.
inline constexpr double kFiniteDiff = 1e-5;
inline constexpr double kFiniteDiffEps = 1e-4;
inline constexpr double kKinkMargin = 1e-3;

}  // namespace histlayer::tol
