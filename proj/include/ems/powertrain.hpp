#pragma once

// Quasi-static models of the series hybrid tracked vehicle: road-load and
// skid-steering demand, engine-generator set, internal-resistance battery,
// and gridded efficiency/fuel maps.
//
// Units: m/s, rad/s, W, N*m, g, s. Speeds in km/h only appear inside the
// air-drag term.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "ems/error.hpp"

namespace ems::powertrain {

inline constexpr double kRpmToRadPerSec = 3.14159265358979323846 / 30.0;

struct VehicleParams {
  double mass = 2500.0;            // kg
  double drag_coeff = 0.9;         // C_d
  double frontal_area = 3.4;       // m^2
  double tread = 1.42;             // B, m
  double track_width = 1.53;       // l, contacting-track width, m
  double rolling_coeff = 0.0494;   // mu
  double lateral_drag_max = 0.8;   // lambda_max
  double gravity = 9.81;           // m/s^2

  void validate() const;
};

struct EgsParams {
  double emf_coeff = 0.8092;           // K_e, V*s/rad
  double emf_load_coeff = 0.0005295;   // K_x, N*m/A^2
  double engine_inertia = 0.2;         // J_eg, kg*m^2
  double generator_inertia = 0.1;      // J_g, kg*m^2
  double gear_ratio = 1.2;             // i_eg
  double generator_efficiency = 0.92;  // eta_g
  double engine_torque_min = 0.0;
  double engine_torque_max = 220.0;
  double engine_speed_min = 1000.0 * kRpmToRadPerSec;  // idle
  double engine_speed_max = 4000.0 * kRpmToRadPerSec;
  double generator_speed_min = 0.0;
  double generator_speed_max = 4800.0 * kRpmToRadPerSec;
  // Kept for completeness of the circuit model; K_x is given directly.
  double pole_count = 4.0;
  double sync_inductance = 0.0;

  double max_engine_power() const { return engine_torque_max * engine_speed_max; }
  // J_eg / i^2 + J_g
  double total_inertia() const {
    return engine_inertia / (gear_ratio * gear_ratio) + generator_inertia;
  }
  void validate() const;
};

struct BatteryParams {
  double capacity_ah = 37.5;
  double open_circuit_voltage = 320.0;
  double internal_resistance = 0.1;
  double soc_min = 0.5;
  double soc_max = 0.9;

  double capacity_coulomb() const { return capacity_ah * 3600.0; }
  void validate() const;
};

// Bilinear table over strictly increasing axes; out-of-range queries clamp
// to the boundary. values are stored x-major: value(i, j) = values[i * ny + j].
class GriddedMap {
 public:
  GriddedMap() = default;
  GriddedMap(std::vector<double> x_axis, std::vector<double> y_axis, std::vector<double> values);

  double lookup(double x, double y) const;

  const std::vector<double>& x_axis() const { return x_; }
  const std::vector<double>& y_axis() const { return y_; }
  double value(std::size_t i, std::size_t j) const { return values_[i * y_.size() + j]; }
  double min_value() const;
  double max_value() const;
  bool empty() const { return values_.empty(); }

  // CSV: first row holds x breakpoints after an unused corner cell; each
  // following row is a y breakpoint then one value per x breakpoint.
  static GriddedMap load_csv(const std::filesystem::path& path);
  void save_csv(const std::filesystem::path& path) const;

 private:
  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> values_;
};

// Synthetic BSFC paraboloid b0 + b_n (n - n*)^2 + b_T (T - T*)^2 in g/kWh.
struct BsfcSurface {
  double best_bsfc = 210.0;
  double torque_at_best = 110.0;                       // N*m
  double speed_at_best = 2500.0 * kRpmToRadPerSec;     // rad/s
  double speed_coeff = 0.0015;                         // g/kWh per (rad/s)^2
  double torque_coeff = 0.004;                         // g/kWh per (N*m)^2
  std::size_t torque_points = 23;
  std::size_t speed_points = 31;
};

// Aggregate traction drive: two motors at the mean sprocket speed.
struct MotorParams {
  bool use_map = true;
  double constant_efficiency = 0.9;
  double sprocket_radius = 0.3;   // m
  double reduction_ratio = 6.0;
  double torque_max = 300.0;      // per motor, N*m
  double speed_max = 700.0;       // rad/s
  // Concave efficiency surface peaking at peak_efficiency.
  double peak_efficiency = 0.92;
  double torque_at_peak = 120.0;
  double speed_at_peak = 350.0;
  double torque_drop = 0.08;  // efficiency lost at one torque_max away from the peak
  double speed_drop = 0.06;   // efficiency lost at one speed_max away from the peak
  double floor_efficiency = 0.85;
  std::size_t torque_points = 16;
  std::size_t speed_points = 15;
};

struct PowertrainState {
  double omega_g = 0.0;  // generator speed, rad/s
  double soc = 0.0;
  double t = 0.0;
};

struct OperatingPoint {
  double torque = 0.0;  // N*m
  double speed = 0.0;   // rad/s
};

struct GeneratorStep {
  double omega_g = 0.0;
  double torque = 0.0;   // T_g
  double voltage = 0.0;  // U_g
  double power = 0.0;    // P_g = U_g I_g
  bool speed_violation = false;
};

struct BatteryStep {
  double soc = 0.0;
  bool saturated = false;
};

// Discharge power above the discriminant limit V_oc^2 / (4 r_b).
class InfeasiblePower : public Error {
 public:
  using Error::Error;
};

// (F_i + F_j + F_mu) v + M |omega|, with v = (v1 + v2) / 2, omega = (v1 - v2) / B.
double demand_power(double v1, double v2, double accel, const VehicleParams& p);

// 0.25 lambda_t m g l, lambda_t = lambda_max / (0.925 + 0.15 R / B), R = v / |omega|.
double steering_moment(double v, double omega, const VehicleParams& p);

double map_lookup(const GriddedMap& map, double x, double y);

// Minimum-BSFC point on the iso-power curve T * n = P_e, scanned over
// `samples` engine speeds between idle and max speed. Map axes are
// (torque, speed).
OperatingPoint optimal_operating_point(double engine_power, const GriddedMap& bsfc_map,
                                       const EgsParams& limits, std::size_t samples = 801);

// Fuel mass flow in g/s for a BSFC in g/kWh at power in W.
inline double fuel_rate(double bsfc, double power) { return bsfc * power / 3.6e6; }

GeneratorStep generator_step(const PowertrainState& s, double engine_torque, double current,
                             double dt, const EgsParams& p);

// Current that puts the generator in torque equilibrium with the engine,
// the smaller root of K_x I^2 - K_e I + T_eg / i = 0.
double equilibrium_current(double engine_torque, const EgsParams& p);

// Discharge (P_b > 0) lowers SOC. Throws InfeasiblePower when
// V_oc^2 - 4 r_b P_b < 0.
BatteryStep battery_step(double soc, double battery_power, double dt, const BatteryParams& p);

struct PowerRange {
  double min = 0.0;
  double max = 0.0;
};

// Battery powers that keep the next SOC inside [soc_min, soc_max].
PowerRange battery_power_limits(double soc, double dt, const BatteryParams& p);

// Battery power that, together with generator power P_g, delivers P_r.
double split_power(double demand, double generator_power, double eta_g, double eta_m);
// Forward form: P_r = (P_g eta_g + P_b) eta_m^i.
double combine_power(double generator_power, double battery_power, double eta_g, double eta_m);

GriddedMap make_bsfc_map(const BsfcSurface& s, const EgsParams& egs);
GriddedMap make_motor_map(const MotorParams& m);

// Efficiency for traction demand P_r at mean track speed v.
double motor_efficiency(const MotorParams& m, const GriddedMap& map, double demand, double speed);
double motor_speed(const MotorParams& m, double speed);

struct Powertrain {
  VehicleParams vehicle;
  EgsParams egs;
  BatteryParams battery;
  MotorParams motor;
  GriddedMap bsfc_map;
  GriddedMap motor_map;

  // Default parameters with the synthetic maps.
  static Powertrain defaults();
  void validate() const;
};

}  // namespace ems::powertrain
