#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "axial/attention.hpp"
#include "axial/random.hpp"
#include "axial/tensor.hpp"

namespace axial {

enum class LayerKind { kAxial, kMaxPool, kFc };

struct LayerSpec {
  LayerKind kind = LayerKind::kAxial;
  std::size_t d = 0;                       // axial
  std::array<std::size_t, 3> kernel{};     // maxpool (kz, kw, kh)
  std::size_t stride = 0;                  // maxpool
  std::size_t in_features = 0;             // fc
  std::size_t out_features = 1;            // fc
  double dropout_p = 0.0;                  // fc input

  static LayerSpec axial(std::size_t d);
  static LayerSpec max_pool(std::size_t kernel, std::size_t stride);
  static LayerSpec fc(std::size_t in_features, double dropout_p);
};

inline constexpr std::array<std::size_t, 6> kDefaultWidths = {8, 16, 16, 16, 16, 32};
inline constexpr std::size_t kVolumeExtent = 32;

/// The published architecture: six axial layers with the given widths,
/// pooling (2,2,2)/2 after the second and (4,4,4)/4 after the sixth, then
/// dropout (0.5 by default) and a single-output FC layer on the flattened
/// 32*4*4*4 map.
std::vector<LayerSpec> default_specs(std::span<const std::size_t> widths = kDefaultWidths, double dropout_p = 0.5);
Shape default_input_shape();

enum class Mode { kTrain, kEval };

/// Identifies the dropout stream of one sample: masks are a pure function
/// of (seed, epoch, sample_id).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t sample_id = 0;
};

/// Ordered layer stack with all learnable parameters.
class Model {
 public:
  Model(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t seed);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::uint64_t seed() const { return seed_; }

  /// Activation shape after each layer (size == specs().size()).
  const std::vector<Shape>& layer_shapes() const { return shapes_; }

  /// Axial parameters for the k-th axial layer (0-based among axial layers).
  const AxialLayerParams& axial(std::size_t k) const { return axial_[k]; }
  AxialLayerParams& axial(std::size_t k) { return axial_[k]; }
  std::size_t axial_count() const { return axial_.size(); }

  const Tensor& fc_weight() const { return fc_weight_; }
  const Tensor& fc_bias() const { return fc_bias_; }

  /// Named parameters in a fixed order. Pointers are valid until the model is
  /// moved or destroyed.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  std::size_t parameter_count() const;

  /// Replaces every parameter; names and shapes must match exactly.
  void load_parameters(std::span<const std::pair<std::string, Tensor>> entries);

  bool has_dropout() const;

 private:
  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;
  std::uint64_t seed_;
  std::vector<AxialLayerParams> axial_;
  Tensor fc_weight_;
  Tensor fc_bias_;
};

// Layer operations ----------------------------------------------------------

/// Window maximum with kernel (kz, kw, kh) and equal stride on all axes.
/// Requires every spatial axis divisible by the stride and kernel <= stride.
Tensor max_pool_3d(const Tensor& x, const std::array<std::size_t, 3>& kernel, std::size_t stride);

/// Inverted dropout: in train mode each element is zeroed with probability p
/// and survivors are scaled by 1/(1-p). Identity in eval mode.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

double sigmoid(double z);
double fc_sigmoid(std::span<const double> x, const Tensor& w, double b);

// Whole-model evaluation ----------------------------------------------------

struct ForwardCache {
  std::vector<AxialLayerCache> axial;
  std::vector<std::vector<std::size_t>> pool_argmax;
  std::vector<double> dropout_scale;  // per FC input element: 0 or 1/(1-p)
  Tensor fc_input;
  double logit = 0.0;
  double prob = 0.0;
};

/// Forward pass of one C x Z x W x H sample. Throws NumericError naming the
/// layer whose output first becomes non-finite.
double forward_sample(const Model& model, const Tensor& x, Mode mode, const DropoutKey& key,
                      ForwardCache* cache = nullptr, std::vector<Shape>* shapes = nullptr);

/// Forward pass of a B x C x Z x W x H batch; sample b uses dropout key
/// (seed, epoch, first_sample_id + b).
std::vector<double> forward(const Model& model, const Tensor& batch, Mode mode, DropoutKey key = {});

// Checkpoints ---------------------------------------------------------------

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors read_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

NamedTensors model_entries(const Model& model);

/// Rebuilds a default model (widths inferred from the axial embeddings) and
/// loads its parameters. Entries not belonging to the model are ignored.
Model default_model_from_entries(const NamedTensors& entries, std::uint64_t seed = 0);

}  // namespace axial
