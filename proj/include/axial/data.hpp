#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "axial/random.hpp"
#include "axial/tensor.hpp"

namespace axial {

enum class Label : std::uint8_t { kBenign = 0, kMalignant = 1 };

/// One cropped nodule volume (Z x W x H) with its label. Augmented copies of a
/// nodule keep the source nodule's id.
struct Sample {
  Tensor volume;
  Label label = Label::kBenign;
  std::uint32_t nodule_id = 0;

  double target() const { return label == Label::kMalignant ? 1.0 : 0.0; }
  /// The volume as a 1 x Z x W x H model input.
  Tensor as_input() const;
};

/// Benign nodules are noisy smooth ellipsoids; malignant ones add 4-10 radial
/// spikes and boundary roughness. Nodule ids run 0..n-1 (benign first) and
/// every nodule depends only on (seed, id). Voxel values are exactly
/// representable as 32-bit floats.
std::vector<Sample> synth_generate(std::size_t n_benign, std::size_t n_malignant, std::uint64_t seed,
                                   std::size_t extent = 32);

enum class RotationAxis { kX, kY, kZ };

/// Exact quarter-turn rotation of a cubic volume about one axis. The x axis
/// is H, y is W and z is Z: a z rotation permutes (w, h), a y rotation
/// permutes (z, h) and an x rotation permutes (z, w).
Tensor rotate_quarter(const Tensor& volume, RotationAxis axis, int quarter_turns);

/// The identity plus 90/180/270 degree turns about x, y and z: ten copies,
/// all sharing the source nodule id.
std::vector<Sample> augment_rotations(const Sample& s);

struct ScaleStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Mean and (population) standard deviation over every voxel of `train`.
ScaleStats fit_standard_scale(std::span<const Sample> train);
void apply_standard_scale(std::span<Sample> samples, const ScaleStats& stats);

/// Fits on `train` and transforms both `train` and `apply_to` in place.
ScaleStats standard_scale(std::span<Sample> train, std::span<Sample> apply_to);

/// nodule_id -> fold index in [0, k).
struct FoldAssignment {
  std::size_t k = 0;
  std::map<std::uint32_t, std::size_t> fold_of_nodule;

  std::size_t fold_of(const Sample& s) const { return fold_of_nodule.at(s.nodule_id); }
};

/// Stratified split over nodules (not samples): every augmented copy of a
/// nodule lands in the same fold.
FoldAssignment kfold_split(std::span<const Sample> samples, std::size_t k, std::uint64_t seed);

// AXV1 volume files ---------------------------------------------------------

std::vector<std::uint8_t> encode_volume(const Sample& s);
Sample decode_volume(std::span<const std::uint8_t> bytes);
void write_volume(const Sample& s, const std::filesystem::path& path);
Sample read_volume(const std::filesystem::path& path);

// Dataset manifest: one "<path>\t<fold>" line per file, paths relative to the
// manifest's directory.

struct ManifestEntry {
  std::string path;
  std::size_t fold = 0;
};

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace axial
