#pragma once

#include <numbers>

// All frequencies are linear (Hz) and all times are seconds. Factors of 2*pi
// appear only inside propagators and closed-form evolution formulas.
namespace nvspin {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Electron gyromagnetic ratio gamma_e / 2pi, Hz per tesla.
inline constexpr double kElectronGyromagneticHzPerTesla = 28.024e9;

// g * mu_B * B expressed as a linear frequency.
constexpr double zeeman_frequency(double field_tesla) {
  return kElectronGyromagneticHzPerTesla * field_tesla;
}

inline namespace literals {

constexpr double operator""_Hz(long double v) { return static_cast<double>(v * 1.0L); }
constexpr double operator""_Hz(unsigned long long v) { return static_cast<double>(v * 1.0L); }
constexpr double operator""_kHz(long double v) { return static_cast<double>(v * 1e3L); }
constexpr double operator""_kHz(unsigned long long v) { return static_cast<double>(v * 1e3L); }
constexpr double operator""_MHz(long double v) { return static_cast<double>(v * 1e6L); }
constexpr double operator""_MHz(unsigned long long v) { return static_cast<double>(v * 1e6L); }
constexpr double operator""_GHz(long double v) { return static_cast<double>(v * 1e9L); }
constexpr double operator""_GHz(unsigned long long v) { return static_cast<double>(v * 1e9L); }
constexpr double operator""_s(long double v) { return static_cast<double>(v * 1.0L); }
constexpr double operator""_s(unsigned long long v) { return static_cast<double>(v * 1.0L); }
constexpr double operator""_ms(long double v) { return static_cast<double>(v * 1e-3L); }
constexpr double operator""_ms(unsigned long long v) { return static_cast<double>(v * 1e-3L); }
constexpr double operator""_us(long double v) { return static_cast<double>(v * 1e-6L); }
constexpr double operator""_us(unsigned long long v) { return static_cast<double>(v * 1e-6L); }
constexpr double operator""_ns(long double v) { return static_cast<double>(v * 1e-9L); }
constexpr double operator""_ns(unsigned long long v) { return static_cast<double>(v * 1e-9L); }

}  // namespace literals
}  // namespace nvspin
