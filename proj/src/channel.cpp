#include "posfuse/channel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace posfuse {

namespace {

constexpr double kSpeedOfLight = 299792458.0;
// Reference distance for the inverse-distance amplitude; closer paths do
// not keep growing.
constexpr double kMinPathLength = 1.0;

using Json = nlohmann::ordered_json;

Json vec2_to_json(const Vec2& v) { return Json::array({v.x, v.y}); }

Vec2 vec2_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("expected [x, y] pair");
  return Vec2{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

bool polygon_contains(const std::vector<Vec2>& poly, const Vec2& p) {
  if (poly.size() < 3) return false;
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      double x_int = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_int) inside = !inside;
    }
  }
  return inside;
}

void Environment::validate() const {
  if (anchors.size() < 2) throw ConfigError("environment needs at least 2 anchors");
  if (n_subcarriers < 8) throw ConfigError("n_subcarriers must be >= 8");
  if (!(bandwidth_hz > 0.0) || !std::isfinite(bandwidth_hz))
    throw ConfigError("bandwidth must be positive");
  if (!(subcarrier_spacing_hz() > 0.0)) throw ConfigError("subcarrier spacing must be positive");
  if (!(carrier_frequency_hz > 0.0) || !std::isfinite(carrier_frequency_hz))
    throw ConfigError("carrier frequency must be positive");
  if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin))
    throw ConfigError("area bounds must span a rectangle");
  for (const auto& a : anchors) {
    if (!std::isfinite(a.position.x) || !std::isfinite(a.position.y))
      throw ConfigError("anchor position must be finite");
    if (a.n_antennas < 1) throw ConfigError("anchor needs at least one antenna");
    if (!(a.element_spacing_wl > 0.0)) throw ConfigError("element spacing must be positive");
  }
  for (const auto& s : scatterers) {
    if (!std::isfinite(s.position.x) || !std::isfinite(s.position.y))
      throw ConfigError("scatterer position must be finite");
    if (!std::isfinite(s.reflectivity.real()) || !std::isfinite(s.reflectivity.imag()))
      throw ConfigError("scatterer reflectivity must be finite");
  }
}

std::string Environment::to_json() const {
  Json j;
  j["seed"] = seed;
  j["bounds"] = {{"xmin", bounds.xmin}, {"xmax", bounds.xmax},
                 {"ymin", bounds.ymin}, {"ymax", bounds.ymax}};
  j["carrier_frequency_hz"] = carrier_frequency_hz;
  j["bandwidth_hz"] = bandwidth_hz;
  j["n_subcarriers"] = n_subcarriers;
  j["anchors"] = Json::array();
  for (const auto& a : anchors) {
    Json ja;
    ja["id"] = a.id;
    ja["label"] = a.label;
    ja["position"] = vec2_to_json(a.position);
    ja["n_antennas"] = a.n_antennas;
    ja["element_spacing_wavelengths"] = a.element_spacing_wl;
    ja["boresight_rad"] = a.boresight_rad;
    if (!a.los_blocked_region.empty()) {
      Json poly = Json::array();
      for (const auto& v : a.los_blocked_region) poly.push_back(vec2_to_json(v));
      ja["los_blocked_region"] = poly;
    }
    j["anchors"].push_back(ja);
  }
  j["scatterers"] = Json::array();
  for (const auto& s : scatterers) {
    Json js;
    js["position"] = vec2_to_json(s.position);
    js["reflectivity"] = Json::array({s.reflectivity.real(), s.reflectivity.imag()});
    j["scatterers"].push_back(js);
  }
  return j.dump(2);
}

std::uint64_t Environment::descriptor_hash() const { return fnv1a(to_json()); }

Environment Environment::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid environment JSON: ") + e.what());
  }
  try {
    Environment env;
    env.seed = j.at("seed").get<std::uint64_t>();
    const auto& b = j.at("bounds");
    env.bounds = Bounds{b.at("xmin").get<double>(), b.at("xmax").get<double>(),
                        b.at("ymin").get<double>(), b.at("ymax").get<double>()};
    env.carrier_frequency_hz = j.at("carrier_frequency_hz").get<double>();
    env.bandwidth_hz = j.at("bandwidth_hz").get<double>();
    env.n_subcarriers = j.at("n_subcarriers").get<std::uint32_t>();
    std::uint32_t next_id = 0;
    for (const auto& ja : j.at("anchors")) {
      AnchorGeometry a;
      a.id = ja.contains("id") ? ja.at("id").get<std::uint32_t>() : next_id;
      a.label = ja.contains("label") ? ja.at("label").get<std::string>()
                                     : std::string(1, static_cast<char>('A' + a.id));
      a.position = vec2_from_json(ja.at("position"));
      a.n_antennas = ja.at("n_antennas").get<std::uint32_t>();
      a.element_spacing_wl = ja.contains("element_spacing_wavelengths")
                                 ? ja.at("element_spacing_wavelengths").get<double>()
                                 : 0.5;
      a.boresight_rad = ja.contains("boresight_rad") ? ja.at("boresight_rad").get<double>() : 0.0;
      if (ja.contains("los_blocked_region"))
        for (const auto& v : ja.at("los_blocked_region"))
          a.los_blocked_region.push_back(vec2_from_json(v));
      env.anchors.push_back(std::move(a));
      ++next_id;
    }
    if (j.contains("scatterers"))
      for (const auto& js : j.at("scatterers")) {
        Scatterer s;
        s.position = vec2_from_json(js.at("position"));
        const auto& r = js.at("reflectivity");
        s.reflectivity = {r.at(0).get<double>(), r.at(1).get<double>()};
        env.scatterers.push_back(s);
      }
    env.validate();
    return env;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid environment JSON: ") + e.what());
  }
}

Environment Environment::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open environment file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void Environment::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write environment file: " + path);
  out << to_json() << "\n";
}

Environment make_desk_environment(std::uint64_t seed) {
  Environment env;
  env.seed = seed;
  env.bounds = Bounds{0.0, 10.0, 0.0, 10.0};
  env.carrier_frequency_hz = 1.272e9;
  env.bandwidth_hz = 50e6;
  env.n_subcarriers = 64;

  const Vec2 corners[4] = {{0.0, 0.0}, {10.0, 0.0}, {10.0, 10.0}, {0.0, 10.0}};
  for (std::uint32_t i = 0; i < 4; ++i) {
    AnchorGeometry a;
    a.id = i;
    a.label = std::string(1, static_cast<char>('A' + i));
    a.position = corners[i];
    a.n_antennas = 8;
    a.element_spacing_wl = 0.5;
    a.boresight_rad = std::atan2(5.0 - a.position.y, 5.0 - a.position.x);
    env.anchors.push_back(a);
  }
  // A central obstacle shadows the far corner of two anchors, so parts of
  // the area are NLOS for them.
  env.anchors[0].los_blocked_region = {{6.0, 6.0}, {10.0, 6.0}, {10.0, 10.0}, {6.0, 10.0}};
  env.anchors[2].los_blocked_region = {{0.0, 0.0}, {4.0, 0.0}, {4.0, 4.0}, {0.0, 4.0}};

  auto rng = RngStream::keyed({seed, static_cast<std::uint64_t>(StreamKind::Scatterer)});
  for (int i = 0; i < 20; ++i) {
    Scatterer s;
    s.position = {rng.next_uniform(env.bounds.xmin, env.bounds.xmax),
                  rng.next_uniform(env.bounds.ymin, env.bounds.ymax)};
    double amp = rng.next_uniform(0.4, 1.0);
    double phase = rng.next_angle();
    s.reflectivity = std::polar(amp, phase);
    env.scatterers.push_back(s);
  }
  return env;
}

double CsiTensor::energy() const {
  double e = 0.0;
  for (const auto& v : data) e += std::norm(v);
  return e;
}

CsiTensor synth_channel(const Environment& env, const AnchorGeometry& anchor,
                        const Vec2& ue_pos) {
  if (!env.bounds.contains(ue_pos))
    throw DomainError("UE position outside area bounds");

  const std::uint32_t n_r = anchor.n_antennas;
  const std::uint32_t n_c = env.n_subcarriers;
  const double df = env.subcarrier_spacing_hz();
  CsiTensor csi = CsiTensor::zero(anchor.id, n_r, n_c);

  struct Path {
    double length;
    double aoa;      // at the anchor, world frame
    double amplitude;
    double phase;    // reflectivity argument; global random phase added later
  };
  std::vector<Path> paths;

  if (!anchor.direct_path_blocked(ue_pos)) {
    double d = distance(ue_pos, anchor.position);
    paths.push_back(Path{d, std::atan2(ue_pos.y - anchor.position.y, ue_pos.x - anchor.position.x),
                         1.0 / std::max(d, kMinPathLength), 0.0});
  }
  for (const auto& s : env.scatterers) {
    double len = distance(ue_pos, s.position) + distance(s.position, anchor.position);
    paths.push_back(Path{len,
                         std::atan2(s.position.y - anchor.position.y,
                                    s.position.x - anchor.position.x),
                         std::abs(s.reflectivity) / std::max(len, kMinPathLength),
                         std::arg(s.reflectivity)});
  }

  std::size_t path_index = anchor.direct_path_blocked(ue_pos) ? 1 : 0;
  for (const auto& path : paths) {
    auto phase_rng = RngStream::keyed({env.seed,
                                       static_cast<std::uint64_t>(StreamKind::PathPhase),
                                       anchor.id, path_index});
    double psi = path.phase + phase_rng.next_angle();
    double tau = path.length / kSpeedOfLight;
    double sin_aoa = std::sin(path.aoa - anchor.boresight_rad);
    double antenna_step = 2.0 * std::numbers::pi * anchor.element_spacing_wl * sin_aoa;
    double subcarrier_step = -2.0 * std::numbers::pi * df * tau;
    for (std::uint32_t m = 0; m < n_r; ++m) {
      std::complex<double> gain = std::polar(path.amplitude, psi + antenna_step * m);
      for (std::uint32_t l = 0; l < n_c; ++l)
        csi.at(m, l) += gain * std::polar(1.0, subcarrier_step * l);
    }
    ++path_index;
  }
  return csi;
}

namespace {

// Unitary DFT along one axis. `sign` is the exponent sign; antennas use the
// forward (-) direction, subcarriers the inverse (+) direction.
CsiTensor axis_dft(const CsiTensor& in, bool antenna_axis, double sign) {
  const std::uint32_t n_r = in.n_antennas;
  const std::uint32_t n_c = in.n_subcarriers;
  CsiTensor out = CsiTensor::zero(in.anchor_id, n_r, n_c);
  const std::uint32_t n = antenna_axis ? n_r : n_c;
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<std::complex<double>> twiddle(static_cast<std::size_t>(n) * n);
  for (std::uint32_t k = 0; k < n; ++k)
    for (std::uint32_t m = 0; m < n; ++m)
      twiddle[static_cast<std::size_t>(k) * n + m] =
          std::polar(scale, sign * 2.0 * std::numbers::pi * k * m / n);

  if (antenna_axis) {
    for (std::uint32_t k = 0; k < n_r; ++k)
      for (std::uint32_t l = 0; l < n_c; ++l) {
        std::complex<double> acc = 0.0;
        for (std::uint32_t m = 0; m < n_r; ++m)
          acc += twiddle[static_cast<std::size_t>(k) * n_r + m] * in.at(m, l);
        out.at(k, l) = acc;
      }
  } else {
    for (std::uint32_t m = 0; m < n_r; ++m)
      for (std::uint32_t k = 0; k < n_c; ++k) {
        std::complex<double> acc = 0.0;
        for (std::uint32_t l = 0; l < n_c; ++l)
          acc += twiddle[static_cast<std::size_t>(k) * n_c + l] * in.at(m, l);
        out.at(m, k) = acc;
      }
  }
  return out;
}

}  // namespace

CsiTensor to_angle_delay(const CsiTensor& csi) {
  return axis_dft(axis_dft(csi, /*antenna_axis=*/true, -1.0), /*antenna_axis=*/false, +1.0);
}

CsiTensor from_angle_delay(const CsiTensor& csi) {
  return axis_dft(axis_dft(csi, /*antenna_axis=*/false, -1.0), /*antenna_axis=*/true, +1.0);
}

CsiTensor attenuate_strongest(const CsiTensor& csi, double atten_db, std::uint32_t window) {
  if (window < 1 || window % 2 == 0) throw DomainError("window must be odd and >= 1");

  CsiTensor ad = to_angle_delay(csi);
  std::uint32_t best_m = 0, best_l = 0;
  double best_mag = -1.0;
  for (std::uint32_t m = 0; m < ad.n_antennas; ++m)
    for (std::uint32_t l = 0; l < ad.n_subcarriers; ++l) {
      double mag = std::norm(ad.at(m, l));
      if (mag > best_mag) {
        best_mag = mag;
        best_m = m;
        best_l = l;
      }
    }

  const double factor = std::pow(10.0, -atten_db / 20.0);
  const std::int64_t half = window / 2;
  for (std::int64_t dm = -half; dm <= half; ++dm)
    for (std::int64_t dl = -half; dl <= half; ++dl) {
      std::int64_t m = static_cast<std::int64_t>(best_m) + dm;
      std::int64_t l = static_cast<std::int64_t>(best_l) + dl;
      if (m < 0 || m >= static_cast<std::int64_t>(ad.n_antennas)) continue;
      if (l < 0 || l >= static_cast<std::int64_t>(ad.n_subcarriers)) continue;
      ad.at(static_cast<std::uint32_t>(m), static_cast<std::uint32_t>(l)) *= factor;
    }
  return from_angle_delay(ad);
}

}  // namespace posfuse
