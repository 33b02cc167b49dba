#include "ems/powertrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

#include "csv.hpp"

namespace ems::powertrain {
namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(std::string("invalid parameter: ") + what);
}

bool strictly_increasing(const std::vector<double>& a) {
  for (std::size_t k = 1; k < a.size(); ++k)
    if (!(a[k] > a[k - 1])) return false;
  return true;
}

// Index of the cell containing q (clamped) and the fractional offset in it.
std::pair<std::size_t, double> locate(const std::vector<double>& axis, double q) {
  if (axis.size() == 1) return {0, 0.0};
  if (q <= axis.front()) return {0, 0.0};
  if (q >= axis.back()) return {axis.size() - 2, 1.0};
  const auto it = std::upper_bound(axis.begin(), axis.end(), q);
  const std::size_t i = static_cast<std::size_t>(it - axis.begin()) - 1;
  return {i, (q - axis[i]) / (axis[i + 1] - axis[i])};
}

}  // namespace

void VehicleParams::validate() const {
  require(mass > 0 && drag_coeff > 0 && frontal_area > 0 && tread > 0 && track_width > 0 &&
              rolling_coeff > 0 && lateral_drag_max > 0 && gravity > 0,
          "vehicle parameters must be strictly positive");
  require(rolling_coeff < 1.0, "rolling coefficient must be < 1");
  require(lateral_drag_max <= 2.0, "lambda_max must lie in (0, 2]");
}

void EgsParams::validate() const {
  require(emf_coeff > 0 && emf_load_coeff > 0 && engine_inertia > 0 && generator_inertia > 0 &&
              gear_ratio > 0,
          "EGS constants must be strictly positive");
  require(generator_efficiency > 0 && generator_efficiency <= 1, "eta_g must lie in (0, 1]");
  require(engine_torque_min < engine_torque_max, "engine torque bounds");
  require(engine_speed_min > 0 && engine_speed_min < engine_speed_max, "engine speed bounds");
  require(generator_speed_min < generator_speed_max, "generator speed bounds");
}

void BatteryParams::validate() const {
  require(capacity_ah > 0 && open_circuit_voltage > 0 && internal_resistance > 0,
          "battery constants must be strictly positive");
  require(soc_min >= 0 && soc_min < soc_max && soc_max <= 1, "SOC bounds");
}

GriddedMap::GriddedMap(std::vector<double> x_axis, std::vector<double> y_axis,
                       std::vector<double> values)
    : x_(std::move(x_axis)), y_(std::move(y_axis)), values_(std::move(values)) {
  if (x_.empty() || y_.empty()) throw Error("gridded map axes must be non-empty");
  if (!strictly_increasing(x_) || !strictly_increasing(y_))
    throw Error("gridded map axes must be strictly increasing");
  if (values_.size() != x_.size() * y_.size())
    throw Error("gridded map value count does not match axes");
  for (double v : values_)
    if (!std::isfinite(v)) throw Error("gridded map values must be finite");
}

double GriddedMap::lookup(double x, double y) const {
  if (!std::isfinite(x) || !std::isfinite(y)) throw Error("non-finite map query");
  const auto [i, tx] = locate(x_, x);
  const auto [j, ty] = locate(y_, y);
  const std::size_t ny = y_.size();
  const std::size_t i1 = std::min(i + 1, x_.size() - 1);
  const std::size_t j1 = std::min(j + 1, ny - 1);
  const double v00 = values_[i * ny + j];
  const double v01 = values_[i * ny + j1];
  const double v10 = values_[i1 * ny + j];
  const double v11 = values_[i1 * ny + j1];
  return v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty) + v01 * (1 - tx) * ty + v11 * tx * ty;
}

double GriddedMap::min_value() const { return *std::min_element(values_.begin(), values_.end()); }
double GriddedMap::max_value() const { return *std::max_element(values_.begin(), values_.end()); }

GriddedMap GriddedMap::load_csv(const std::filesystem::path& path) {
  std::vector<std::string> storage;
  const auto rows = detail::read_csv(path, storage);
  auto fail = [&](std::size_t line, const std::string& msg) -> ParseError {
    return ParseError(path.string() + ":" + std::to_string(line) + ": " + msg);
  };
  if (rows.size() < 2) throw ParseError(path.string() + ": map needs a header and data rows");
  std::vector<double> x;
  for (std::size_t c = 1; c < rows[0].fields.size(); ++c) {
    double v;
    if (!detail::parse_double(rows[0].fields[c], v)) throw fail(rows[0].line, "bad x breakpoint");
    x.push_back(v);
  }
  std::vector<double> y;
  std::vector<double> by_row;  // y-major as read
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    if (f.size() != x.size() + 1) throw fail(rows[r].line, "expected " + std::to_string(x.size() + 1) + " fields");
    double v;
    if (!detail::parse_double(f[0], v)) throw fail(rows[r].line, "bad y breakpoint");
    y.push_back(v);
    for (std::size_t c = 1; c < f.size(); ++c) {
      if (!detail::parse_double(f[c], v)) throw fail(rows[r].line, "bad value in column " + std::to_string(c + 1));
      by_row.push_back(v);
    }
  }
  std::vector<double> values(x.size() * y.size());
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) values[i * y.size() + j] = by_row[j * x.size() + i];
  return GriddedMap(std::move(x), std::move(y), std::move(values));
}

void GriddedMap::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17) << "y\\x";
  for (double v : x_) out << ',' << v;
  out << '\n';
  for (std::size_t j = 0; j < y_.size(); ++j) {
    out << y_[j];
    for (std::size_t i = 0; i < x_.size(); ++i) out << ',' << value(i, j);
    out << '\n';
  }
}

double steering_moment(double v, double omega, const VehicleParams& p) {
  if (omega == 0.0) return 0.0;
  const double radius = std::abs(v) / std::abs(omega);
  const double lambda_t = p.lateral_drag_max / (0.925 + 0.15 * radius / p.tread);
  return 0.25 * lambda_t * p.mass * p.gravity * p.track_width;
}

double demand_power(double v1, double v2, double accel, const VehicleParams& p) {
  const double v = 0.5 * (v1 + v2);
  const double omega = (v1 - v2) / p.tread;
  const double v_kmh = v * 3.6;
  const double air = p.drag_coeff * p.frontal_area * v_kmh * v_kmh / 21.15;
  const double inertial = p.mass * accel;
  const double rolling = v == 0.0 ? 0.0 : p.rolling_coeff * p.mass * p.gravity;
  return (air + inertial + rolling) * v + steering_moment(v, omega, p) * std::abs(omega);
}

double map_lookup(const GriddedMap& map, double x, double y) { return map.lookup(x, y); }

OperatingPoint optimal_operating_point(double engine_power, const GriddedMap& bsfc_map,
                                       const EgsParams& limits, std::size_t samples) {
  if (!std::isfinite(engine_power) || engine_power < 0.0)
    throw Error("engine power must be finite and non-negative");
  const double p_max = limits.max_engine_power();
  if (engine_power > p_max * (1.0 + 1e-12))
    throw Error("engine power " + std::to_string(engine_power) + " W exceeds maximum " +
                std::to_string(p_max) + " W");
  if (engine_power == 0.0) return {0.0, limits.engine_speed_min};
  if (samples < 2) samples = 2;

  const double n_lo = limits.engine_speed_min;
  const double n_hi = limits.engine_speed_max;
  OperatingPoint best{};
  double best_bsfc = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples; ++k) {
    const double n = k + 1 == samples
                         ? n_hi
                         : n_lo + (n_hi - n_lo) * static_cast<double>(k) / static_cast<double>(samples - 1);
    double torque = engine_power / n;
    if (torque > limits.engine_torque_max * (1.0 + 1e-12)) continue;
    if (torque < limits.engine_torque_min) continue;
    torque = std::min(torque, limits.engine_torque_max);
    const double b = bsfc_map.lookup(torque, n);
    if (b < best_bsfc) {
      best_bsfc = b;
      best = {torque, n};
    }
  }
  if (!std::isfinite(best_bsfc)) throw Error("no feasible engine operating point");
  return best;
}

GeneratorStep generator_step(const PowertrainState& s, double engine_torque, double current,
                             double dt, const EgsParams& p) {
  if (!(dt > 0.0)) throw Error("generator step requires dt > 0");
  GeneratorStep out;
  out.voltage = p.emf_coeff * s.omega_g - p.emf_load_coeff * s.omega_g * current;
  out.torque = p.emf_coeff * current - p.emf_load_coeff * current * current;
  out.power = out.voltage * current;
  const double accel = (engine_torque / p.gear_ratio - out.torque) / p.total_inertia();
  out.omega_g = s.omega_g + dt * accel;
  out.speed_violation = out.omega_g < p.generator_speed_min || out.omega_g > p.generator_speed_max;
  return out;
}

double equilibrium_current(double engine_torque, const EgsParams& p) {
  const double load = engine_torque / p.gear_ratio;
  const double disc = p.emf_coeff * p.emf_coeff - 4.0 * p.emf_load_coeff * load;
  if (disc < 0.0) throw Error("engine torque exceeds generator capability");
  // Stable form of (K_e - sqrt(disc)) / (2 K_x).
  return 2.0 * load / (p.emf_coeff + std::sqrt(disc));
}

BatteryStep battery_step(double soc, double battery_power, double dt, const BatteryParams& p) {
  if (!(dt > 0.0)) throw Error("battery step requires dt > 0");
  const double v = p.open_circuit_voltage;
  const double disc = v * v - 4.0 * p.internal_resistance * battery_power;
  if (disc < 0.0)
    throw InfeasiblePower("battery power " + std::to_string(battery_power) +
                          " W exceeds the internal-resistance limit");
  // (V - sqrt(disc)) / (2 r) without cancellation.
  const double current = 2.0 * battery_power / (v + std::sqrt(disc));
  BatteryStep out;
  out.soc = soc - dt * current / p.capacity_coulomb();
  if (out.soc < 0.0 || out.soc > 1.0) {
    out.saturated = true;
    out.soc = std::clamp(out.soc, 0.0, 1.0);
  }
  return out;
}

PowerRange battery_power_limits(double soc, double dt, const BatteryParams& p) {
  const double q = p.capacity_coulomb();
  const double v = p.open_circuit_voltage;
  const double r = p.internal_resistance;
  const double i_hi = std::max(0.0, soc - p.soc_min) * q / dt;
  const double i_lo = -std::max(0.0, p.soc_max - soc) * q / dt;
  const double i_peak = v / (2.0 * r);
  PowerRange range;
  range.max = i_hi < i_peak ? v * i_hi - r * i_hi * i_hi : v * v / (4.0 * r);
  range.min = v * i_lo - r * i_lo * i_lo;
  return range;
}

double split_power(double demand, double generator_power, double eta_g, double eta_m) {
  const double at_bus = demand >= 0.0 ? demand / eta_m : demand * eta_m;
  return at_bus - generator_power * eta_g;
}

double combine_power(double generator_power, double battery_power, double eta_g, double eta_m) {
  const double bus = generator_power * eta_g + battery_power;
  return bus >= 0.0 ? bus * eta_m : bus / eta_m;
}

GriddedMap make_bsfc_map(const BsfcSurface& s, const EgsParams& egs) {
  std::vector<double> torque(s.torque_points), speed(s.speed_points);
  for (std::size_t i = 0; i < s.torque_points; ++i)
    torque[i] = egs.engine_torque_min + (egs.engine_torque_max - egs.engine_torque_min) *
                                            static_cast<double>(i) / static_cast<double>(s.torque_points - 1);
  for (std::size_t j = 0; j < s.speed_points; ++j)
    speed[j] = egs.engine_speed_min + (egs.engine_speed_max - egs.engine_speed_min) *
                                          static_cast<double>(j) / static_cast<double>(s.speed_points - 1);
  std::vector<double> values(torque.size() * speed.size());
  for (std::size_t i = 0; i < torque.size(); ++i)
    for (std::size_t j = 0; j < speed.size(); ++j) {
      const double dn = speed[j] - s.speed_at_best;
      const double dt = torque[i] - s.torque_at_best;
      values[i * speed.size() + j] = s.best_bsfc + s.speed_coeff * dn * dn + s.torque_coeff * dt * dt;
    }
  return GriddedMap(std::move(torque), std::move(speed), std::move(values));
}

GriddedMap make_motor_map(const MotorParams& m) {
  std::vector<double> torque(m.torque_points), speed(m.speed_points);
  for (std::size_t i = 0; i < m.torque_points; ++i)
    torque[i] = m.torque_max * static_cast<double>(i) / static_cast<double>(m.torque_points - 1);
  for (std::size_t j = 0; j < m.speed_points; ++j)
    speed[j] = m.speed_max * static_cast<double>(j) / static_cast<double>(m.speed_points - 1);
  std::vector<double> values(torque.size() * speed.size());
  for (std::size_t i = 0; i < torque.size(); ++i)
    for (std::size_t j = 0; j < speed.size(); ++j) {
      const double t = (torque[i] - m.torque_at_peak) / m.torque_max;
      const double n = (speed[j] - m.speed_at_peak) / m.speed_max;
      const double eta = m.peak_efficiency - m.torque_drop * t * t - m.speed_drop * n * n;
      values[i * speed.size() + j] = std::max(eta, m.floor_efficiency);
    }
  return GriddedMap(std::move(torque), std::move(speed), std::move(values));
}

double motor_speed(const MotorParams& m, double speed) {
  return std::abs(speed) / m.sprocket_radius * m.reduction_ratio;
}

double motor_efficiency(const MotorParams& m, const GriddedMap& map, double demand, double speed) {
  if (!m.use_map || map.empty()) return m.constant_efficiency;
  const double n = motor_speed(m, speed);
  const double per_motor = 0.5 * std::abs(demand);
  const double torque = n > 1e-9 ? std::min(per_motor / n, m.torque_max) : 0.0;
  return map.lookup(torque, n);
}

Powertrain Powertrain::defaults() {
  Powertrain pt;
  pt.bsfc_map = make_bsfc_map(BsfcSurface{}, pt.egs);
  pt.motor_map = make_motor_map(pt.motor);
  return pt;
}

void Powertrain::validate() const {
  vehicle.validate();
  egs.validate();
  battery.validate();
  if (bsfc_map.empty()) throw Error("powertrain has no BSFC map");
}

}  // namespace ems::powertrain
