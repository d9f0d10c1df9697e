#include "cscon/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cscon {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clipped_normal(Rng& rng, double sigma, double clip) {
  return std::clamp(rng.normal() * sigma, -clip, clip);
}

void add_noise(std::vector<Point3>& pts, Rng& rng, double sigma) {
  for (auto& p : pts)
    for (auto& c : p) c = static_cast<float>(c + clipped_normal(rng, sigma, 3.0 * sigma));
}

// Azimuthal spin applied to every generated sample; keeps z coordinates and
// class structure intact while decorrelating raw coordinates from the label.
void spin_z(std::vector<Point3>& pts, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (auto& p : pts) {
    const double x = p[0], y = p[1];
    p[0] = static_cast<float>(c * x - s * y);
    p[1] = static_cast<float>(s * x + c * y);
  }
}

Point3 dpoint(double x, double y, double z) {
  return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
}

// Uniform point in the triangle (a, b, c).
Point3 triangle_point(Rng& rng, const std::array<double, 3>& a, const std::array<double, 3>& b,
                      const std::array<double, 3>& c) {
  double u = rng.uniform(), v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  return dpoint(a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
                a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
                a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]));
}

std::vector<Point3> gen_sphere(Rng& rng, std::int64_t n, double noise) {
  // Antithetic direction pairs keep the sample centroid near the origin, so
  // normalization does not shift the surface off norm 1.
  std::vector<Point3> pts;
  pts.reserve(n);
  while (static_cast<std::int64_t>(pts.size()) < n) {
    double x, y, z, n2;
    do {
      x = rng.normal();
      y = rng.normal();
      z = rng.normal();
      n2 = x * x + y * y + z * z;
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    const double r1 = 1.0 + clipped_normal(rng, noise * 0.2, noise * 0.45);
    const double r2 = 1.0 + clipped_normal(rng, noise * 0.2, noise * 0.45);
    pts.push_back(dpoint(x * inv * r1, y * inv * r1, z * inv * r1));
    if (static_cast<std::int64_t>(pts.size()) < n)
      pts.push_back(dpoint(-x * inv * r2, -y * inv * r2, -z * inv * r2));
  }
  return pts;
}

std::vector<Point3> gen_cube(Rng& rng, std::int64_t n, double noise) {
  const double a = 1.0, b = rng.uniform(0.6, 1.0), c = rng.uniform(0.6, 1.0);
  const double area_xy = 4.0 * a * b, area_xz = 4.0 * a * c, area_yz = 4.0 * b * c;
  const double total = 2.0 * (area_xy + area_xz + area_yz);
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double pickv = rng.uniform(0.0, total);
    const double u = rng.uniform(-1.0, 1.0), v = rng.uniform(-1.0, 1.0);
    if (pickv < 2.0 * area_xy) {
      pts.push_back(dpoint(u * a, v * b, pickv < area_xy ? c : -c));
    } else if (pickv < 2.0 * (area_xy + area_xz)) {
      pts.push_back(dpoint(u * a, pickv < 2.0 * area_xy + area_xz ? b : -b, v * c));
    } else {
      pts.push_back(dpoint(pickv < total - area_yz ? a : -a, u * b, v * c));
    }
  }
  add_noise(pts, rng, noise);
  return pts;
}

std::vector<Point3> gen_cylinder(Rng& rng, std::int64_t n, double noise) {
  const double r = rng.uniform(0.4, 0.8), h = 1.0;  // half height
  const double lateral = 2.0 * kPi * r * 2.0 * h, caps = 2.0 * kPi * r * r;
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    if (rng.uniform(0.0, lateral + caps) < lateral) {
      pts.push_back(dpoint(r * std::cos(theta), r * std::sin(theta), rng.uniform(-h, h)));
    } else {
      const double rr = r * std::sqrt(rng.uniform());
      pts.push_back(dpoint(rr * std::cos(theta), rr * std::sin(theta),
                           rng.uniform() < 0.5 ? h : -h));
    }
  }
  add_noise(pts, rng, noise);
  return pts;
}

std::vector<Point3> gen_cone(Rng& rng, std::int64_t n, double noise) {
  const double r = rng.uniform(0.5, 0.9), h = 2.0;  // apex at z = h/2, base at -h/2
  const double slant = std::sqrt(r * r + h * h);
  const double lateral = kPi * r * slant, base = kPi * r * r;
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    if (rng.uniform(0.0, lateral + base) < lateral) {
      const double t = std::sqrt(rng.uniform());  // area-uniform along the slant
      pts.push_back(dpoint(t * r * std::cos(theta), t * r * std::sin(theta), h / 2.0 - t * h));
    } else {
      const double rr = r * std::sqrt(rng.uniform());
      pts.push_back(dpoint(rr * std::cos(theta), rr * std::sin(theta), -h / 2.0));
    }
  }
  add_noise(pts, rng, noise);
  return pts;
}

std::vector<Point3> gen_torus(Rng& rng, std::int64_t n, double noise) {
  const double ring = 1.0, tube = rng.uniform(0.15, 0.35);
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, 2.0 * kPi);
    double v;
    do {  // density on v proportional to ring + tube*cos(v)
      v = rng.uniform(0.0, 2.0 * kPi);
    } while (rng.uniform(0.0, ring + tube) > ring + tube * std::cos(v));
    const double w = ring + tube * std::cos(v);
    pts.push_back(dpoint(w * std::cos(u), w * std::sin(u), tube * std::sin(v)));
  }
  add_noise(pts, rng, noise);
  return pts;
}

std::vector<Point3> gen_pyramid(Rng& rng, std::int64_t n, double noise) {
  const double s = rng.uniform(0.5, 0.9), h = 2.0;
  const std::array<double, 3> apex{0.0, 0.0, h / 2.0};
  const std::array<std::array<double, 3>, 4> base{{{s, s, -h / 2.0},
                                                   {-s, s, -h / 2.0},
                                                   {-s, -s, -h / 2.0},
                                                   {s, -s, -h / 2.0}}};
  const double slant = std::sqrt(h * h + s * s);
  const double side_area = s * slant;  // per triangular face, up to a common factor
  const double base_area = 2.0 * s * s;
  const double total = 4.0 * side_area + 2.0 * base_area;
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double pickv = rng.uniform(0.0, total);
    if (pickv < 4.0 * side_area) {
      const int f = std::min<int>(3, static_cast<int>(pickv / side_area));
      pts.push_back(triangle_point(rng, apex, base[f], base[(f + 1) % 4]));
    } else if (pickv < 4.0 * side_area + base_area) {
      pts.push_back(triangle_point(rng, base[0], base[1], base[2]));
    } else {
      pts.push_back(triangle_point(rng, base[0], base[2], base[3]));
    }
  }
  add_noise(pts, rng, noise);
  return pts;
}

std::vector<Point3> gen_plane(Rng& rng, std::int64_t n, double noise) {
  const double a = 1.0, b = rng.uniform(0.4, 1.0);
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    // The rectangle diagonal reaches past norm 1, so normalization can only
    // shrink the z extent; keep it within half the noise level.
    pts.push_back(dpoint(rng.uniform(-a, a), rng.uniform(-b, b),
                         rng.uniform(-noise / 2.0, noise / 2.0)));
  }
  return pts;
}

std::vector<Point3> gen_helix(Rng& rng, std::int64_t n, double noise) {
  const double r = 0.8, turns = rng.uniform(2.0, 3.0), h = 1.0;
  std::vector<Point3> pts;
  pts.reserve(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const double t = rng.uniform();
    const double theta = t * turns * 2.0 * kPi;
    pts.push_back(dpoint(r * std::cos(theta), r * std::sin(theta), -h + 2.0 * h * t));
  }
  add_noise(pts, rng, noise * 2.0);
  return pts;
}

}  // namespace

const char* shape_class_name(ShapeClass c) {
  switch (c) {
    case ShapeClass::sphere: return "sphere";
    case ShapeClass::cube: return "cube";
    case ShapeClass::cylinder: return "cylinder";
    case ShapeClass::cone: return "cone";
    case ShapeClass::torus: return "torus";
    case ShapeClass::pyramid: return "pyramid";
    case ShapeClass::plane: return "plane";
    case ShapeClass::helix: return "helix";
  }
  throw InvalidArgument("unknown shape class id " + std::to_string(static_cast<int>(c)));
}

ShapeClass shape_class_from_id(int id) {
  if (id < 0 || id >= kNumShapeClasses)
    throw InvalidArgument("unknown shape class id " + std::to_string(id));
  return static_cast<ShapeClass>(id);
}

PointCloud generate_shape(ShapeClass cls, std::int64_t n_points, std::uint64_t seed,
                          const ShapeGenConfig& cfg) {
  if (n_points < 16)
    throw InvalidArgument("generate_shape: n_points must be >= 16, got " +
                          std::to_string(n_points));
  Rng rng(mix64(seed, static_cast<std::uint64_t>(cls)));
  std::vector<Point3> pts;
  switch (cls) {
    case ShapeClass::sphere: pts = gen_sphere(rng, n_points, cfg.noise); break;
    case ShapeClass::cube: pts = gen_cube(rng, n_points, cfg.noise); break;
    case ShapeClass::cylinder: pts = gen_cylinder(rng, n_points, cfg.noise); break;
    case ShapeClass::cone: pts = gen_cone(rng, n_points, cfg.noise); break;
    case ShapeClass::torus: pts = gen_torus(rng, n_points, cfg.noise); break;
    case ShapeClass::pyramid: pts = gen_pyramid(rng, n_points, cfg.noise); break;
    case ShapeClass::plane: pts = gen_plane(rng, n_points, cfg.noise); break;
    case ShapeClass::helix: pts = gen_helix(rng, n_points, cfg.noise); break;
    default: throw InvalidArgument("unknown shape class");
  }
  spin_z(pts, rng.uniform(0.0, 2.0 * kPi));
  PointCloud cloud;
  cloud.points = std::move(pts);
  cloud = normalize_cloud(cloud);
  cloud.label = static_cast<int>(cls);
  return cloud;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

const char* augment_policy_name(AugmentPolicy p) {
  switch (p) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::jitter: return "jitter";
    case AugmentPolicy::scale: return "scale";
    case AugmentPolicy::rotation: return "rotation";
    case AugmentPolicy::scale_translate: return "scale_translate";
    case AugmentPolicy::scale_translate_rotation: return "scale_translate_rotation";
    case AugmentPolicy::rotation_scale_translate: return "rotation_scale_translate";
  }
  throw InvalidArgument("unknown augment policy");
}

AugmentPolicy augment_policy_from_name(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(AugmentPolicy::rotation_scale_translate); ++i) {
    const auto p = static_cast<AugmentPolicy>(i);
    if (name == augment_policy_name(p)) return p;
  }
  throw InvalidArgument("unknown augment policy '" + name + "'");
}

PointCloud apply_rotation(const PointCloud& cloud,
                          const std::array<std::array<double, 3>, 3>& r) {
  PointCloud out = cloud;
  for (auto& p : out.points) {
    const double x = p[0], y = p[1], z = p[2];
    p[0] = static_cast<float>(r[0][0] * x + r[0][1] * y + r[0][2] * z);
    p[1] = static_cast<float>(r[1][0] * x + r[1][1] * y + r[1][2] * z);
    p[2] = static_cast<float>(r[2][0] * x + r[2][1] * y + r[2][2] * z);
  }
  return out;
}

namespace {

void apply_scale(PointCloud& cloud, double s) {
  for (auto& p : cloud.points)
    for (auto& c : p) c = static_cast<float>(c * s);
}

void apply_translate(PointCloud& cloud, double tx, double ty, double tz) {
  for (auto& p : cloud.points) {
    p[0] = static_cast<float>(p[0] + tx);
    p[1] = static_cast<float>(p[1] + ty);
    p[2] = static_cast<float>(p[2] + tz);
  }
}

void apply_jitter(PointCloud& cloud, Rng& rng, const AugmentParams& ap) {
  for (auto& p : cloud.points)
    for (auto& c : p)
      c = static_cast<float>(c + clipped_normal(rng, ap.jitter_sigma, ap.jitter_clip));
}

}  // namespace

PointCloud augment(const PointCloud& cloud, AugmentPolicy policy, Rng& rng,
                   const AugmentParams& ap) {
  PointCloud out = cloud;
  switch (policy) {
    case AugmentPolicy::none:
      break;
    case AugmentPolicy::jitter:
      apply_jitter(out, rng, ap);
      break;
    case AugmentPolicy::scale:
      apply_scale(out, rng.uniform(ap.scale_lo, ap.scale_hi));
      break;
    case AugmentPolicy::rotation:
      out = apply_rotation(out, rng.rotation_matrix());
      break;
    case AugmentPolicy::scale_translate:
      apply_scale(out, rng.uniform(ap.scale_lo, ap.scale_hi));
      apply_translate(out, rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max));
      break;
    case AugmentPolicy::scale_translate_rotation:
      apply_scale(out, rng.uniform(ap.scale_lo, ap.scale_hi));
      apply_translate(out, rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max));
      out = apply_rotation(out, rng.rotation_matrix());
      break;
    case AugmentPolicy::rotation_scale_translate:
      out = apply_rotation(out, rng.rotation_matrix());
      apply_scale(out, rng.uniform(ap.scale_lo, ap.scale_hi));
      apply_translate(out, rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max),
                      rng.uniform(-ap.translate_max, ap.translate_max));
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Record / manifest I/O
// ---------------------------------------------------------------------------

namespace {
constexpr char kRecordMagic[4] = {'C', 'S', 'P', 'C'};

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool read_u32_le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}
}  // namespace

void save_record(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open record for writing");
  os.write(kRecordMagic, 4);
  write_u32_le(os, static_cast<std::uint32_t>(cloud.size()));
  write_u32_le(os, static_cast<std::uint32_t>(cloud.label));
  os.write(reinterpret_cast<const char*>(cloud.points.data()),
           static_cast<std::streamsize>(cloud.points.size() * sizeof(Point3)));
  if (!os) throw IoError(path.string(), "record write failed");
}

PointCloud load_record(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path.string(), 0, "cannot open record file");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kRecordMagic, 4) != 0)
    throw FormatError(path.string(), 0, "bad record magic");
  std::uint32_t count, label;
  if (!read_u32_le(is, count)) throw FormatError(path.string(), 4, "truncated point count");
  if (!read_u32_le(is, label)) throw FormatError(path.string(), 8, "truncated label");
  if (count == 0 || count > (1u << 26))
    throw FormatError(path.string(), 4, "implausible point count " + std::to_string(count));
  PointCloud cloud;
  cloud.label = static_cast<int>(label);
  cloud.points.resize(count);
  if (!is.read(reinterpret_cast<char*>(cloud.points.data()),
               static_cast<std::streamsize>(count * sizeof(Point3))))
    throw FormatError(path.string(), static_cast<std::uint64_t>(12 + is.gcount()),
                      "truncated coordinate payload");
  return cloud;
}

std::int64_t DatasetManifest::count(const std::string& split) const {
  std::int64_t n = 0;
  for (const auto& e : entries) n += (e.split == split) ? 1 : 0;
  return n;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "records");
  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.seed = cfg.seed;
  ShapeGenConfig gen_cfg;
  gen_cfg.noise = cfg.noise;

  const std::array<std::pair<const char*, std::int64_t>, 2> splits{
      {{"train", cfg.train_per_class}, {"test", cfg.test_per_class}}};
  std::ofstream mf(out_dir / kManifestFilename);
  if (!mf) throw IoError((out_dir / kManifestFilename).string(), "cannot write manifest");
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& [split, per_class] = splits[s];
    for (int c = 0; c < kNumShapeClasses; ++c) {
      for (std::int64_t i = 0; i < per_class; ++i) {
        const std::uint64_t sample_seed =
            mix64(cfg.seed, s + 1, static_cast<std::uint64_t>(c) * 1000003ull +
                                       static_cast<std::uint64_t>(i));
        PointCloud cloud =
            generate_shape(shape_class_from_id(c), cfg.n_points, sample_seed, gen_cfg);
        std::ostringstream name;
        name << "records/" << split << "_c" << c << "_" << i << ".cspc";
        save_record(cloud, out_dir / name.str());
        manifest.entries.push_back({split, c, name.str()});
        mf << split << '\t' << c << '\t' << name.str() << '\n';
      }
    }
  }
  mf.flush();
  if (!mf) throw IoError((out_dir / kManifestFilename).string(), "manifest write failed");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError(manifest_path.string(), "cannot open manifest");
  DatasetManifest manifest;
  manifest.root = manifest_path.parent_path();
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(is, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string class_field;
    if (!std::getline(ls, e.split, '\t') || !std::getline(ls, class_field, '\t') ||
        !std::getline(ls, e.relpath, '\t'))
      throw FormatError(manifest_path.string(), line_offset, "malformed manifest line");
    try {
      e.class_id = std::stoi(class_field);
    } catch (const std::exception&) {
      throw FormatError(manifest_path.string(), line_offset, "bad class id '" + class_field + "'");
    }
    if (!std::filesystem::exists(manifest.root / e.relpath))
      throw FormatError((manifest.root / e.relpath).string(), 0, "missing record file");
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

std::vector<PointCloud> load_dataset(const DatasetManifest& manifest, const std::string& split) {
  std::vector<PointCloud> clouds;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    PointCloud c = load_record(manifest.root / e.relpath);
    if (c.label != e.class_id)
      throw FormatError((manifest.root / e.relpath).string(), 8,
                        "record label does not match manifest class id");
    clouds.push_back(std::move(c));
  }
  return clouds;
}

}  // namespace cscon
