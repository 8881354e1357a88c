#include "axial/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <sstream>

namespace axial {

Tensor Sample::as_input() const {
  return volume.reshaped({1, volume.dim(0), volume.dim(1), volume.dim(2)});
}

namespace {

using Vec3 = std::array<double, 3>;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 random_direction(Rng& rng) {
  for (;;) {
    Vec3 v{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const double n2 = dot(v, v);
    if (n2 > 1e-6 && n2 <= 1.0) {
      const double inv = 1.0 / std::sqrt(n2);
      return {v[0] * inv, v[1] * inv, v[2] * inv};
    }
  }
}

struct Spike {
  Vec3 dir;
  double length;
  double half_width;  // radians
};

struct Bump {
  Vec3 dir;
  double amplitude;  // relative to the ellipsoid radius
};

// Boundary radius of the nodule along unit direction u.
struct NoduleShape {
  Vec3 center;
  Vec3 radii;
  std::vector<Spike> spikes;
  std::vector<Bump> bumps;

  double ellipsoid_radius(const Vec3& u) const {
    double q = 0.0;
    for (int i = 0; i < 3; ++i) q += (u[i] / radii[i]) * (u[i] / radii[i]);
    return 1.0 / std::sqrt(q);
  }

  double boundary(const Vec3& u) const {
    double r = ellipsoid_radius(u);
    double rough = 0.0;
    for (const auto& b : bumps) {
      const double c = dot(u, b.dir);
      rough += b.amplitude * std::exp(-4.0 * (1.0 - c));
    }
    r *= 1.0 + rough;
    double spike = 0.0;
    for (const auto& s : spikes) {
      const double angle = std::acos(std::clamp(dot(u, s.dir), -1.0, 1.0));
      if (angle < s.half_width) spike = std::max(spike, s.length * (1.0 - angle / s.half_width));
    }
    return r + spike;
  }
};

constexpr double kNoiseSigma = 0.05;
// Spike tips stop this many voxels short of the nearest crop face, which puts
// them beyond the largest ellipsoid radius.
constexpr double kSpikeTipMarginMin = 0.5;
constexpr double kSpikeTipMarginMax = 2.5;

Sample generate_one(std::uint32_t id, Label label, std::uint64_t seed, std::size_t extent) {
  Rng rng(derive_seed(seed, "synth", id));
  NoduleShape shape;
  const double mid = (static_cast<double>(extent) - 1.0) / 2.0;
  shape.center = {mid, mid, mid};
  const double base = rng.uniform(3.0, 12.0);
  for (auto& r : shape.radii) r = std::clamp(base * rng.uniform(0.8, 1.2), 3.0, 12.0);

  if (label == Label::kMalignant) {
    const auto n_spikes = 4 + static_cast<std::size_t>(rng.below(7));
    for (std::size_t k = 0; k < n_spikes; ++k) {
      Spike s;
      s.dir = random_direction(rng);
      const double reach = mid - rng.uniform(kSpikeTipMarginMin, kSpikeTipMarginMax);
      const double chebyshev = std::max({std::abs(s.dir[0]), std::abs(s.dir[1]), std::abs(s.dir[2])});
      s.length = std::max(3.0, reach / chebyshev - shape.ellipsoid_radius(s.dir));
      s.half_width = rng.uniform(0.3, 0.45);
      shape.spikes.push_back(s);
    }
    const auto n_bumps = 6 + static_cast<std::size_t>(rng.below(5));
    for (std::size_t k = 0; k < n_bumps; ++k) {
      shape.bumps.push_back({random_direction(rng), rng.uniform(-0.25, 0.25)});
    }
  }

  const Vec3 grad_dir = random_direction(rng);
  const double grad_slope = rng.uniform(0.0, 0.02);
  const double intensity = rng.uniform(0.9, 1.1);

  Tensor vol({extent, extent, extent});
  std::size_t i = 0;
  for (std::size_t z = 0; z < extent; ++z) {
    for (std::size_t w = 0; w < extent; ++w) {
      for (std::size_t h = 0; h < extent; ++h) {
        const Vec3 p{static_cast<double>(z) - shape.center[0], static_cast<double>(w) - shape.center[1],
                     static_cast<double>(h) - shape.center[2]};
        const double dist = std::sqrt(dot(p, p));
        double inside = 1.0;
        if (dist > 1e-9) {
          const Vec3 u{p[0] / dist, p[1] / dist, p[2] / dist};
          inside = std::clamp(shape.boundary(u) - dist + 0.5, 0.0, 1.0);
        }
        const double v = inside * (intensity + grad_slope * dot(p, grad_dir)) + rng.normal(0.0, kNoiseSigma);
        vol[i++] = static_cast<double>(static_cast<float>(v));
      }
    }
  }
  return {std::move(vol), label, id};
}

void require_cubic(const Tensor& v) {
  if (v.rank() != 3 || v.dim(0) != v.dim(1) || v.dim(1) != v.dim(2)) {
    throw ShapeError("rotation needs a cubic volume, got " + shape_to_string(v.shape()));
  }
}

}  // namespace

std::vector<Sample> synth_generate(std::size_t n_benign, std::size_t n_malignant, std::uint64_t seed,
                                   std::size_t extent) {
  std::vector<Sample> out;
  out.reserve(n_benign + n_malignant);
  for (std::size_t i = 0; i < n_benign + n_malignant; ++i) {
    out.push_back(generate_one(static_cast<std::uint32_t>(i), i < n_benign ? Label::kBenign : Label::kMalignant,
                               seed, extent));
  }
  return out;
}

Tensor rotate_quarter(const Tensor& volume, RotationAxis axis, int quarter_turns) {
  require_cubic(volume);
  const std::size_t n = volume.dim(0);
  const int q = ((quarter_turns % 4) + 4) % 4;
  // Plane of rotation as indices into (z, w, h).
  std::size_t a = 1, b = 2;
  if (axis == RotationAxis::kY) {
    a = 0;
    b = 2;
  } else if (axis == RotationAxis::kX) {
    a = 0;
    b = 1;
  }
  Tensor out(volume.shape());
  std::array<std::size_t, 3> idx{};
  std::size_t flat = 0;
  for (idx[0] = 0; idx[0] < n; ++idx[0]) {
    for (idx[1] = 0; idx[1] < n; ++idx[1]) {
      for (idx[2] = 0; idx[2] < n; ++idx[2]) {
        // One quarter turn maps output (i, j) in the plane to source (n-1-j, i).
        std::array<std::size_t, 3> src = idx;
        for (int t = 0; t < q; ++t) {
          const std::size_t i = src[a], j = src[b];
          src[a] = n - 1 - j;
          src[b] = i;
        }
        out[flat++] = volume[(src[0] * n + src[1]) * n + src[2]];
      }
    }
  }
  return out;
}

std::vector<Sample> augment_rotations(const Sample& s) {
  require_cubic(s.volume);
  std::vector<Sample> out;
  out.push_back(s);
  for (RotationAxis axis : {RotationAxis::kX, RotationAxis::kY, RotationAxis::kZ}) {
    for (int q = 1; q <= 3; ++q) out.push_back({rotate_quarter(s.volume, axis, q), s.label, s.nodule_id});
  }
  return out;
}

ScaleStats fit_standard_scale(std::span<const Sample> train) {
  if (train.empty()) throw DegenerateDataError("standard scaling needs a non-empty training set");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : train) {
    for (double v : s.volume.data()) sum += v;
    count += s.volume.size();
  }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto& s : train) {
    for (double v : s.volume.data()) sq += (v - mean) * (v - mean);
  }
  const double std = std::sqrt(sq / static_cast<double>(count));
  if (!(std > 0.0) || !std::isfinite(std)) throw DegenerateDataError("training voxels have zero variance");
  return {mean, std};
}

void apply_standard_scale(std::span<Sample> samples, const ScaleStats& stats) {
  const double inv = 1.0 / stats.std;
  for (auto& s : samples) {
    for (auto& v : s.volume.data()) v = (v - stats.mean) * inv;
  }
}

ScaleStats standard_scale(std::span<Sample> train, std::span<Sample> apply_to) {
  const ScaleStats stats = fit_standard_scale(train);
  apply_standard_scale(train, stats);
  apply_standard_scale(apply_to, stats);
  return stats;
}

FoldAssignment kfold_split(std::span<const Sample> samples, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("k must be positive");
  std::map<std::uint32_t, Label> labels;
  for (const auto& s : samples) {
    auto [it, inserted] = labels.emplace(s.nodule_id, s.label);
    if (!inserted && it->second != s.label) {
      throw ConfigError("nodule " + std::to_string(s.nodule_id) + " has conflicting labels");
    }
  }
  if (labels.size() < k) {
    throw ConfigError("cannot split " + std::to_string(labels.size()) + " nodules into " + std::to_string(k) +
                      " folds");
  }
  std::vector<std::uint32_t> benign, malignant;
  for (const auto& [id, label] : labels) (label == Label::kBenign ? benign : malignant).push_back(id);
  Rng rng(derive_seed(seed, "folds"));
  for (auto* ids : {&benign, &malignant}) {
    for (std::size_t i = ids->size(); i > 1; --i) std::swap((*ids)[i - 1], (*ids)[rng.below(i)]);
  }
  FoldAssignment fa;
  fa.k = k;
  for (std::size_t i = 0; i < benign.size(); ++i) fa.fold_of_nodule[benign[i]] = i % k;
  for (std::size_t i = 0; i < malignant.size(); ++i) fa.fold_of_nodule[malignant[i]] = (benign.size() + i) % k;
  return fa;
}

// AXV1 -----------------------------------------------------------------------

namespace {

constexpr std::size_t kVolumeHeaderBytes = 4 + 4 * 3 + 4 + 1;
constexpr std::uint64_t kMaxVolumeElements = std::uint64_t{1} << 31;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little, "AXV1 IO assumes a little-endian host");
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Sample& s) {
  if (s.volume.rank() != 3) throw ShapeError("AXV1 volumes are Z x W x H");
  std::vector<std::uint8_t> out = {'A', 'X', 'V', '1'};
  for (auto d : s.volume.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<std::uint32_t>(out, s.nodule_id);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(s.label));
  out.reserve(out.size() + 4 * s.volume.size());
  for (double v : s.volume.data()) put<float>(out, static_cast<float>(v));
  return out;
}

Sample decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "AXV1", 4) != 0) {
    throw FormatError("bad magic at byte 0: expected \"AXV1\"");
  }
  if (bytes.size() < kVolumeHeaderBytes) {
    throw FormatError("truncated header: expected " + std::to_string(kVolumeHeaderBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  Shape shape(3);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t off = 4 + 4 * i;
    shape[i] = get<std::uint32_t>(bytes, off);
    if (shape[i] == 0) throw FormatError("zero dimension at byte " + std::to_string(off));
    count *= shape[i];
    if (count > kMaxVolumeElements) throw FormatError("dimension overflow at byte " + std::to_string(off));
  }
  const auto id = get<std::uint32_t>(bytes, 16);
  const auto label = get<std::uint8_t>(bytes, 20);
  if (label > 1) throw FormatError("invalid label " + std::to_string(label) + " at byte 20");
  const std::uint64_t payload = count * 4;
  const std::uint64_t actual = bytes.size() - kVolumeHeaderBytes;
  if (actual != payload) {
    throw FormatError(std::string(actual < payload ? "truncated" : "oversized") + " payload at byte " +
                      std::to_string(kVolumeHeaderBytes) + ": expected " + std::to_string(payload) +
                      " bytes, got " + std::to_string(actual));
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = get<float>(bytes, kVolumeHeaderBytes + 4 * i);
  return {Tensor(std::move(shape), std::move(data)), static_cast<Label>(label), id};
}

void write_volume(const Sample& s, const std::filesystem::path& path) {
  const auto bytes = encode_volume(s);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path.string());
}

Sample read_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_volume(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) os << e.path << '\t' << e.fold << '\n';
  if (!os) throw Error("failed writing " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected \"<path>\\t<fold>\"");
    }
    ManifestEntry e;
    e.path = line.substr(0, tab);
    try {
      std::size_t used = 0;
      e.fold = std::stoul(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad fold index");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace axial
