#pragma once

#include <cmath>
#include <numbers>

namespace sqz {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kZeroCelsius = 273.15;  // K

inline double celsius_to_kelvin(double c) { return c + kZeroCelsius; }

/// 10*log10 of a linear power ratio.
inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

/// Optical frequency in Hz for a vacuum wavelength in nm.
inline double frequency_hz(double wavelength_nm) { return kSpeedOfLight / (wavelength_nm * 1e-9); }

}  // namespace sqz
