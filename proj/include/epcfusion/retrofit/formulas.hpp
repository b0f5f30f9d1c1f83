#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "epcfusion/error.hpp"

namespace epcfusion::retrofit {

// SAP rating from the energy cost factor ECF = d * cost / (TFA + 45).
inline constexpr double kFloorAreaOffset = 45.0;
inline constexpr double kEcfBreak = 3.5;
inline constexpr double kSapLinearSlope = 16.21;
inline constexpr double kSapLogIntercept = 108.8;
inline constexpr double kSapLogSlope = 120.5;
inline constexpr double kSapBreak = 100.0 - kSapLinearSlope * kEcfBreak;  // 43.265

// Environmental impact rating from the carbon factor CF = eCO2 / (TFA + 45).
inline constexpr double kCfBreak = 28.3;
inline constexpr double kEiLinearSlope = 1.34;
inline constexpr double kEiLogIntercept = 200.0;
inline constexpr double kEiLogSlope = 95.0;
inline constexpr double kEiBreak = 100.0 - kEiLinearSlope * kCfBreak;  // 62.078

inline double clamp_score(double s) { return std::clamp(s, 1.0, 100.0); }

namespace detail {
inline void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::OutOfRange, std::string(what) + " must be positive and finite");
}

inline void require_score(double s, const char* what) {
  if (!(s >= 1.0 && s <= 100.0)) fail(ErrorKind::OutOfRange, std::string(what) + " must lie in [1, 100]");
}
}  // namespace detail

inline double sap_from_ecf(double ecf) {
  const double s = ecf >= kEcfBreak ? kSapLogIntercept - kSapLogSlope * std::log10(ecf) : 100.0 - kSapLinearSlope * ecf;
  return clamp_score(s);
}

inline double sap_from_cost(double cost, double tfa, double deflator = 1.0) {
  detail::require_positive(cost, "annual cost");
  detail::require_positive(tfa, "total floor area");
  detail::require_positive(deflator, "tariff deflator");
  return sap_from_ecf(deflator * cost / (tfa + kFloorAreaOffset));
}

/// Inverse branch is chosen at the linear value of the breakpoint. The ECF is
/// kept on the side of 3.5 that the forward relation maps back to the same
/// branch, so round trips never flip branches through rounding.
inline double ecf_from_sap(double sap) {
  detail::require_score(sap, "SAP");
  if (sap >= kSapBreak) return std::min((100.0 - sap) / kSapLinearSlope, std::nextafter(kEcfBreak, 0.0));
  return std::max(std::pow(10.0, (kSapLogIntercept - sap) / kSapLogSlope), kEcfBreak);
}

inline double cost_from_sap(double sap, double tfa, double deflator = 1.0) {
  detail::require_positive(tfa, "total floor area");
  detail::require_positive(deflator, "tariff deflator");
  return ecf_from_sap(sap) * (tfa + kFloorAreaOffset) / deflator;
}

inline double ei_from_cf(double cf) {
  const double s = cf >= kCfBreak ? kEiLogIntercept - kEiLogSlope * std::log10(cf) : 100.0 - kEiLinearSlope * cf;
  return clamp_score(s);
}

inline double ei_from_eco2(double eco2, double tfa) {
  detail::require_positive(eco2, "annual emissions");
  detail::require_positive(tfa, "total floor area");
  return ei_from_cf(eco2 / (tfa + kFloorAreaOffset));
}

inline double cf_from_ei(double ei) {
  detail::require_score(ei, "EI");
  if (ei >= kEiBreak) return std::min((100.0 - ei) / kEiLinearSlope, std::nextafter(kCfBreak, 0.0));
  return std::max(std::pow(10.0, (kEiLogIntercept - ei) / kEiLogSlope), kCfBreak);
}

inline double eco2_from_ei(double ei, double tfa) {
  detail::require_positive(tfa, "total floor area");
  return cf_from_ei(ei) * (tfa + kFloorAreaOffset);
}

}  // namespace epcfusion::retrofit
