#include "omnistereo/synthdata.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "omnistereo/dataio.hpp"
#include "omnistereo/errors.hpp"
#include "omnistereo/kvconfig.hpp"

namespace omnistereo {

namespace {

using Eigen::Vector3d;
constexpr double kPi = std::numbers::pi;
constexpr double kRayEps = 1e-9;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------- textures

struct Wave {
  Vector3d direction;
  double wavenumber;
  double phase;
  double weight;
};

class CompiledTexture {
 public:
  explicit CompiledTexture(const Texture& t) : tex_(t) {
    std::mt19937_64 rng(t.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 2.0 * kPi);
    constexpr std::array<double, 3> kScale{1.0, 1.7, 2.9};
    constexpr std::array<double, 3> kWeight{0.5, 0.3, 0.2};
    for (int ch = 0; ch < 3; ++ch) {
      for (int k = 0; k < 3; ++k) {
        Vector3d dir(normal(rng), normal(rng), normal(rng));
        dir.normalize();
        waves_[ch][k] = {dir, 2.0 * kPi / (t.wavelength_m * kScale[k]), uniform(rng), kWeight[k]};
      }
    }
  }

  /// `local` is the point in the primitive frame, `world` in the scene frame.
  Vector3d color(const Vector3d& local, const Vector3d& world) const {
    double amp = tex_.amplitude;
    if (tex_.fade_radius_m > 0.0) {
      const double rho = std::hypot(world.x(), world.y()) / tex_.fade_radius_m;
      amp *= std::exp(-rho * rho);
    }
    Vector3d out;
    for (int ch = 0; ch < 3; ++ch) {
      double v = 0.0;
      for (const auto& w : waves_[ch]) v += w.weight * std::sin(w.wavenumber * w.direction.dot(local) + w.phase);
      out[ch] = std::clamp(tex_.base_color[ch] + amp * v, 0.0, 1.0);
    }
    return out;
  }

 private:
  Texture tex_;
  std::array<std::array<Wave, 3>, 3> waves_;
};

// ----------------------------------------------------------- intersections

double intersect_sphere(const Vector3d& o, const Vector3d& d, const Vector3d& c, double r) {
  const Vector3d oc = o - c;
  const double b = oc.dot(d);
  const double cc = oc.squaredNorm() - r * r;
  const double disc = b * b - cc;
  if (disc < 0.0) return kNoHit;
  const double s = std::sqrt(disc);
  const double t0 = -b - s;
  if (t0 > kRayEps) return t0;
  const double t1 = -b + s;
  return t1 > kRayEps ? t1 : kNoHit;
}

Vector3d to_box_frame(const Vector3d& v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x() + s * v.y(), -s * v.x() + c * v.y(), v.z()};
}

double intersect_box(const Vector3d& o, const Vector3d& d, const Box& box) {
  const Vector3d lo = to_box_frame(o - box.center, box.yaw);
  const Vector3d ld = to_box_frame(d, box.yaw);
  double tmin = -kNoHit, tmax = kNoHit;
  for (int i = 0; i < 3; ++i) {
    const double h = box.half_extent[i];
    if (std::abs(ld[i]) < 1e-15) {
      if (lo[i] < -h || lo[i] > h) return kNoHit;
      continue;
    }
    double t1 = (-h - lo[i]) / ld[i];
    double t2 = (h - lo[i]) / ld[i];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return kNoHit;
  }
  if (tmin > kRayEps) return tmin;
  return tmax > kRayEps ? tmax : kNoHit;
}

double intersect_plane(const Vector3d& o, const Vector3d& d, double height) {
  if (std::abs(d.z()) < 1e-15) return kNoHit;
  const double t = (height - o.z()) / d.z();
  return t > kRayEps ? t : kNoHit;
}

double intersect_background(const Vector3d& o, const Vector3d& d, double radius) {
  const double b = o.dot(d);
  const double c = o.squaredNorm() - radius * radius;
  return -b + std::sqrt(b * b - c);
}

enum class Kind { background, sphere, box, plane };

struct Hit {
  double t = kNoHit;
  Kind kind = Kind::background;
  std::size_t index = 0;
};

class SceneTracer {
 public:
  explicit SceneTracer(const Scene& s) : scene_(s), background_tex_(s.background.texture) {
    for (const auto& sp : s.spheres) sphere_tex_.emplace_back(sp.texture);
    for (const auto& bx : s.boxes) box_tex_.emplace_back(bx.texture);
    for (const auto& pl : s.planes) plane_tex_.emplace_back(pl.texture);
  }

  Hit trace(const Vector3d& o, const Vector3d& d) const {
    Hit hit{intersect_background(o, d, scene_.background.radius), Kind::background, 0};
    for (std::size_t i = 0; i < scene_.spheres.size(); ++i) {
      const double t = intersect_sphere(o, d, scene_.spheres[i].center, scene_.spheres[i].radius);
      if (t < hit.t) hit = {t, Kind::sphere, i};
    }
    for (std::size_t i = 0; i < scene_.boxes.size(); ++i) {
      const double t = intersect_box(o, d, scene_.boxes[i]);
      if (t < hit.t) hit = {t, Kind::box, i};
    }
    for (std::size_t i = 0; i < scene_.planes.size(); ++i) {
      const double t = intersect_plane(o, d, scene_.planes[i].height);
      if (t < hit.t) hit = {t, Kind::plane, i};
    }
    return hit;
  }

  Vector3d shade(const Hit& hit, const Vector3d& p) const {
    switch (hit.kind) {
      case Kind::sphere:
        return sphere_tex_[hit.index].color(p - scene_.spheres[hit.index].center, p);
      case Kind::box: {
        const Box& b = scene_.boxes[hit.index];
        return box_tex_[hit.index].color(to_box_frame(p - b.center, b.yaw), p);
      }
      case Kind::plane:
        return plane_tex_[hit.index].color(p, p);
      case Kind::background:
        break;
    }
    return background_tex_.color(p, p);
  }

 private:
  const Scene& scene_;
  CompiledTexture background_tex_;
  std::vector<CompiledTexture> sphere_tex_, box_tex_, plane_tex_;
};

double polar_angle(const Vector3d& v) { return std::atan2(std::hypot(v.x(), v.y()), v.z()); }

bool box_contains(const Box& b, const Vector3d& p) {
  const Vector3d l = to_box_frame(p - b.center, b.yaw);
  return std::abs(l.x()) <= b.half_extent.x() && std::abs(l.y()) <= b.half_extent.y() &&
         std::abs(l.z()) <= b.half_extent.z();
}

}  // namespace

Difficulty parse_difficulty(const std::string& name) {
  if (name == "easy") return Difficulty::easy;
  if (name == "indoor") return Difficulty::indoor;
  if (name == "outdoor") return Difficulty::outdoor;
  throw ConfigError("unknown difficulty '" + name + "' (expected easy, indoor or outdoor)");
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::indoor: return "indoor";
    case Difficulty::outdoor: return "outdoor";
  }
  return "?";
}

void validate_scene(const Scene& scene, const CameraRig& rig) {
  rig.validate();
  const double radius = scene.background.radius;
  const std::array<Vector3d, 2> cams{Vector3d(0, 0, 0), Vector3d(0, 0, rig.baseline_m)};
  if (!(radius > rig.baseline_m)) throw ConfigError("scene: background must enclose both cameras");
  for (const auto& s : scene.spheres) {
    if (!(s.radius > 0.0)) throw ConfigError("scene: sphere radius must be positive");
    for (const auto& c : cams)
      if ((s.center - c).norm() <= s.radius) throw ConfigError("scene: sphere contains a camera");
    if (s.center.norm() + s.radius >= radius) throw ConfigError("scene: sphere leaves background");
  }
  for (const auto& b : scene.boxes) {
    if ((b.half_extent.array() <= 0.0).any()) throw ConfigError("scene: box extents must be positive");
    for (const auto& c : cams)
      if (box_contains(b, c)) throw ConfigError("scene: box contains a camera");
    if (b.center.norm() + b.half_extent.norm() >= radius)
      throw ConfigError("scene: box leaves background");
  }
  for (const auto& p : scene.planes) {
    for (const auto& c : cams)
      if (std::abs(p.height - c.z()) < 1e-6) throw ConfigError("scene: plane passes through a camera");
    if (std::abs(p.height) >= radius) throw ConfigError("scene: plane outside background");
  }
}

RenderedPair render(const Scene& scene, const CameraRig& rig) {
  validate_scene(scene, rig);
  const int rows = rig.height_px, cols = rig.width_px;
  const AngleMap theta = polar_angle_map(rig);
  const SceneTracer tracer(scene);
  const Vector3d top_center(0.0, 0.0, rig.baseline_m);

  RenderedPair out;
  out.image_top = Image(rows, cols, 3);
  out.image_bottom = Image(rows, cols, 3);
  out.depth_bottom = DepthMap(rows, cols);
  out.disparity = DisparityMap(rows, cols);
  out.occlusion = Mask(rows, cols, 0);

  std::vector<double> cos_phi(cols), sin_phi(cols);
  for (int c = 0; c < cols; ++c) {
    const double phi = 2.0 * kPi * (c + 0.5) / cols - scene.azimuth_offset;
    cos_phi[c] = std::cos(phi);
    sin_phi[c] = std::sin(phi);
  }

  for (int r = 0; r < rows; ++r) {
    const double st = std::sin(theta.theta[r]), ct = std::cos(theta.theta[r]);
    for (int c = 0; c < cols; ++c) {
      const Vector3d dir(st * cos_phi[c], st * sin_phi[c], ct);

      const Hit hb = tracer.trace(Vector3d::Zero(), dir);
      const Vector3d p = hb.t * dir;
      const Vector3d cb = tracer.shade(hb, p);

      const Hit ht = tracer.trace(top_center, dir);
      const Vector3d ctop = tracer.shade(ht, top_center + ht.t * dir);

      for (int ch = 0; ch < 3; ++ch) {
        out.image_bottom.at(r, c, ch) = static_cast<float>(cb[ch]);
        out.image_top.at(r, c, ch) = static_cast<float>(ctop[ch]);
      }

      out.depth_bottom.values(r, c) = hb.t;
      out.depth_bottom.valid(r, c) = 1;
      const Vector3d from_top = p - top_center;
      out.disparity.values(r, c) = (polar_angle(from_top) - polar_angle(p)) * 180.0 / kPi;
      out.disparity.valid(r, c) = 1;

      const double dist = from_top.norm();
      const Hit hv = tracer.trace(top_center, from_top / dist);
      if (hv.t < dist - 1e-6 * hb.t) out.occlusion(r, c) = 1;
    }
  }
  return out;
}

// ------------------------------------------------------------ scene sampler

namespace {

struct Sampler {
  std::mt19937_64 rng;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  std::uint64_t next() { return rng(); }
};

Texture random_texture(Sampler& s, double distance, double fade = 0.0) {
  Texture t;
  t.base_color = {s.uniform(0.3, 0.7), s.uniform(0.3, 0.7), s.uniform(0.3, 0.7)};
  t.amplitude = s.uniform(0.15, 0.25);
  t.wavelength_m = s.uniform(0.30, 0.45) * distance;
  t.fade_radius_m = fade;
  t.seed = s.next();
  return t;
}

double clearance(const Vector3d& center, double extent, double baseline) {
  return std::min(center.norm(), (center - Vector3d(0, 0, baseline)).norm()) - extent;
}

}  // namespace

Scene make_random_scene(std::uint64_t seed, Difficulty difficulty, double baseline_m) {
  Sampler s{std::mt19937_64(seed ^ 0x5eedf00dULL)};
  Scene scene;

  int count = 0;
  double rho_lo = 1.5, rho_hi = 5.0;
  double floor_z = -s.uniform(1.1, 1.4);
  switch (difficulty) {
    case Difficulty::easy:
      count = 3;
      scene.background.radius = s.uniform(7.0, 9.0);
      break;
    case Difficulty::indoor:
      count = s.integer(4, 7);
      rho_lo = 1.0;
      rho_hi = 7.0;
      scene.background.radius = s.uniform(7.5, 10.0);
      scene.planes.push_back({s.uniform(2.3, 2.8), {}});
      break;
    case Difficulty::outdoor:
      count = s.integer(5, 9);
      rho_lo = 2.0;
      rho_hi = 40.0;
      scene.background.radius = s.uniform(60.0, 100.0);
      break;
  }
  const double radius = scene.background.radius;
  scene.background.texture = random_texture(s, radius);
  scene.planes.insert(scene.planes.begin(), Plane{floor_z, {}});
  for (auto& p : scene.planes)
    p.texture = random_texture(s, std::abs(p.height) * 1.4, 3.0 * std::abs(p.height));

  for (int i = 0; i < count;) {
    const double rho = difficulty == Difficulty::outdoor ? std::exp(s.uniform(std::log(rho_lo), std::log(rho_hi)))
                                                          : s.uniform(rho_lo, rho_hi);
    const double azimuth = s.uniform(0.0, 2.0 * kPi);
    const double size_scale = difficulty == Difficulty::outdoor ? 1.0 + rho / 10.0 : 1.0;
    const bool sphere = s.integer(0, 1) == 0;
    const double z = s.uniform(floor_z + 0.3, 1.0) * size_scale;
    const Vector3d center(rho * std::cos(azimuth), rho * std::sin(azimuth), z);
    if (sphere) {
      Sphere sp{center, s.uniform(0.3, 0.8) * size_scale, random_texture(s, rho)};
      if (clearance(center, sp.radius, baseline_m) < 0.6 || center.norm() + sp.radius > 0.9 * radius) continue;
      scene.spheres.push_back(sp);
    } else {
      Box bx{center,
             Vector3d(s.uniform(0.2, 0.7), s.uniform(0.2, 0.7), s.uniform(0.3, 0.9)) * size_scale,
             s.uniform(0.0, kPi), random_texture(s, rho)};
      if (clearance(center, bx.half_extent.norm(), baseline_m) < 0.6 ||
          center.norm() + bx.half_extent.norm() > 0.9 * radius)
        continue;
      scene.boxes.push_back(bx);
    }
    ++i;
  }
  return scene;
}

// ---------------------------------------------------------------- scene io

namespace {

std::string texture_attrs(const Texture& t) {
  std::ostringstream o;
  o << "color=" << format_double(t.base_color.x()) << "," << format_double(t.base_color.y()) << ","
    << format_double(t.base_color.z()) << " amplitude=" << format_double(t.amplitude)
    << " wavelength=" << format_double(t.wavelength_m) << " fade=" << format_double(t.fade_radius_m)
    << " seed=" << t.seed;
  return o.str();
}

std::string vec(const Vector3d& v) {
  return format_double(v.x()) + "," + format_double(v.y()) + "," + format_double(v.z());
}

const std::string& required(const std::map<std::string, std::string>& a, const std::string& key,
                            const std::string& where) {
  const auto it = a.find(key);
  if (it == a.end()) throw ConfigError(where + ": missing attribute '" + key + "'");
  return it->second;
}

Vector3d parse_vec(const std::string& text, const std::string& where) {
  const auto v = parse_double_list(text, where);
  if (v.size() != 3) throw ConfigError(where + ": expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

Texture parse_texture(const std::map<std::string, std::string>& a, const std::string& where) {
  Texture t;
  if (a.count("color")) t.base_color = parse_vec(a.at("color"), where + " color");
  if (a.count("amplitude")) t.amplitude = parse_double(a.at("amplitude"), where + " amplitude");
  if (a.count("wavelength")) t.wavelength_m = parse_double(a.at("wavelength"), where + " wavelength");
  if (a.count("fade")) t.fade_radius_m = parse_double(a.at("fade"), where + " fade");
  if (a.count("seed")) t.seed = static_cast<std::uint64_t>(std::stoull(a.at("seed")));
  if (!(t.wavelength_m > 0.0)) throw ConfigError(where + ": wavelength must be positive");
  return t;
}

}  // namespace

std::string serialize_scene(const Scene& scene) {
  KeyValueDoc doc;
  doc.add("azimuth_offset", format_double(scene.azimuth_offset));
  doc.add("background", "radius=" + format_double(scene.background.radius) + " " +
                            texture_attrs(scene.background.texture));
  for (const auto& p : scene.planes)
    doc.add("plane", "z=" + format_double(p.height) + " " + texture_attrs(p.texture));
  for (const auto& sp : scene.spheres)
    doc.add("sphere", "center=" + vec(sp.center) + " radius=" + format_double(sp.radius) + " " +
                          texture_attrs(sp.texture));
  for (const auto& b : scene.boxes)
    doc.add("box", "center=" + vec(b.center) + " half=" + vec(b.half_extent) +
                       " yaw=" + format_double(b.yaw) + " " + texture_attrs(b.texture));
  return "# omnistereo scene v1\n" + doc.serialize();
}

Scene parse_scene(const std::string& text, const std::string& origin) {
  const KeyValueDoc doc = KeyValueDoc::parse(text, origin);
  Scene scene;
  bool have_background = false;
  for (const auto& [key, value] : doc.entries()) {
    const std::string where = origin + ": " + key;
    if (key == "azimuth_offset") {
      scene.azimuth_offset = parse_double(value, where);
      continue;
    }
    const auto a = parse_attributes(value);
    if (key == "background") {
      scene.background = {parse_double(required(a, "radius", where), where), parse_texture(a, where)};
      have_background = true;
    } else if (key == "plane") {
      scene.planes.push_back({parse_double(required(a, "z", where), where), parse_texture(a, where)});
    } else if (key == "sphere") {
      scene.spheres.push_back({parse_vec(required(a, "center", where), where),
                               parse_double(required(a, "radius", where), where), parse_texture(a, where)});
    } else if (key == "box") {
      scene.boxes.push_back({parse_vec(required(a, "center", where), where),
                             parse_vec(required(a, "half", where), where),
                             a.count("yaw") ? parse_double(a.at("yaw"), where) : 0.0,
                             parse_texture(a, where)});
    } else {
      throw ConfigError(where + ": unknown scene entry");
    }
  }
  if (!have_background) throw ConfigError(origin + ": scene needs a background entry");
  return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << serialize_scene(scene);
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scene(buf.str(), path);
}

// --------------------------------------------------------------- datasets

Mask lidar_sparse_mask(const CameraRig& rig) {
  const AngleMap theta = polar_angle_map(rig);
  Mask m(rig.height_px, rig.width_px, 0);
  const double lo = 50.0 * kPi / 180.0, hi = 130.0 * kPi / 180.0;
  for (int r = 0; r < rig.height_px; r += 4) {
    if (theta.theta[r] < lo || theta.theta[r] > hi) continue;
    for (int c = 0; c < rig.width_px; c += 2) m(r, c) = 1;
  }
  return m;
}

DatasetManifest write_dataset(const std::vector<RenderedPair>& pairs, const CameraRig& rig,
                              const std::string& root, const std::string& split,
                              double disparity_scale) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / split;
  std::error_code ec;
  for (const char* sub : {"images_top", "images_bottom", "disparity_sparse", "disparity_completed"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw DataError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.base_dir = dir.string();
  manifest.split = parse_split(split);
  manifest.rig = rig;
  manifest.encoding.scale = disparity_scale;
  const Mask sparse_pattern = lidar_sparse_mask(rig);

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    if (pair.image_top.rows != rig.height_px || pair.image_top.cols != rig.width_px)
      throw ConfigError("write_dataset: pair " + std::to_string(i) + " does not match the rig");
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu.png", i);
    ManifestEntry e{std::string("images_top/") + name, std::string("images_bottom/") + name,
                    std::string("disparity_sparse/") + name, std::string("disparity_completed/") + name,
                    SceneTag::synthetic};
    DisparityMap sparse = pair.disparity;
    for (std::size_t k = 0; k < sparse.valid.size(); ++k)
      sparse.valid[k] = sparse.valid[k] && sparse_pattern[k];
    write_image(pair.image_top, (dir / e.top).string());
    write_image(pair.image_bottom, (dir / e.bottom).string());
    write_disparity(sparse, (dir / e.disparity_sparse).string(), manifest.encoding);
    write_disparity(pair.disparity, (dir / e.disparity_completed).string(), manifest.encoding);
    manifest.entries.push_back(std::move(e));
  }
  if (!pairs.empty()) manifest.stats = compute_stats(manifest);
  save_manifest(manifest, (dir / "manifest.json").string());
  return manifest;
}

}  // namespace omnistereo
