#include "axial/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

#include "axial/init.hpp"

namespace axial {

LayerSpec LayerSpec::axial(std::size_t d) {
  LayerSpec s;
  s.kind = LayerKind::kAxial;
  s.d = d;
  return s;
}

LayerSpec LayerSpec::max_pool(std::size_t kernel, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel = {kernel, kernel, kernel};
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t in_features, double dropout_p) {
  LayerSpec s;
  s.kind = LayerKind::kFc;
  s.in_features = in_features;
  s.out_features = 1;
  s.dropout_p = dropout_p;
  return s;
}

std::vector<LayerSpec> default_specs(std::span<const std::size_t> widths, double dropout_p) {
  if (widths.size() != 6) throw ConfigError("the default network needs exactly six axial widths");
  const std::size_t pooled = kVolumeExtent / 2 / 4;
  return {LayerSpec::axial(widths[0]),
          LayerSpec::axial(widths[1]),
          LayerSpec::max_pool(2, 2),
          LayerSpec::axial(widths[2]),
          LayerSpec::axial(widths[3]),
          LayerSpec::axial(widths[4]),
          LayerSpec::axial(widths[5]),
          LayerSpec::max_pool(4, 4),
          LayerSpec::fc(widths[5] * pooled * pooled * pooled, dropout_p)};
}

Shape default_input_shape() { return {1, kVolumeExtent, kVolumeExtent, kVolumeExtent}; }

Model::Model(Shape input_shape, std::vector<LayerSpec> specs, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), specs_(std::move(specs)), seed_(seed) {
  if (input_shape_.size() != 4) throw ShapeError("model input must be C x Z x W x H");
  if (specs_.empty() || specs_.back().kind != LayerKind::kFc) throw ConfigError("model must end with an FC layer");

  Rng rng(derive_seed(seed, "init"));
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const LayerSpec& s = specs_[i];
    switch (s.kind) {
      case LayerKind::kAxial: {
        if (s.d == 0) throw ConfigError("axial layer needs D >= 1");
        const std::size_t c = cur[0], nz = cur[1], nw = cur[2], nh = cur[3];
        AxialLayerParams p;
        p.embed.w_q = xavier_init({s.d, c}, c, s.d, rng);
        p.pos.r_z = xavier_init({s.d, nz}, nz, s.d, rng);
        p.pos.r_h = xavier_init({s.d, nh}, nh, s.d, rng);
        p.pos.r_w = xavier_init({s.d, nw}, nw, s.d, rng);
        p.norm_gain = Tensor::full({c}, 1.0);
        p.norm_bias = Tensor::zeros({c});
        p.norm_axes = NormAxes::kSample;
        axial_.push_back(std::move(p));
        cur = {s.d, nz, nw, nh};
        break;
      }
      case LayerKind::kMaxPool: {
        if (s.stride == 0) throw ConfigError("max-pool stride must be positive");
        for (std::size_t a = 0; a < 3; ++a) {
          if (cur[a + 1] % s.stride != 0 || s.kernel[a] == 0 || s.kernel[a] > s.stride) {
            throw ShapeError("max-pool layer " + std::to_string(i) + " cannot pool " + shape_to_string(cur));
          }
        }
        cur = {cur[0], cur[1] / s.stride, cur[2] / s.stride, cur[3] / s.stride};
        break;
      }
      case LayerKind::kFc: {
        if (i + 1 != specs_.size()) throw ConfigError("FC layer must be last");
        if (s.dropout_p < 0.0 || s.dropout_p >= 1.0) throw ParameterError("dropout probability must be in [0, 1)");
        if (s.out_features != 1) throw ConfigError("only a single-output FC head is supported");
        const std::size_t flat = shape_size(cur);
        if (s.in_features != flat) {
          throw ShapeError("FC layer expects " + std::to_string(s.in_features) + " inputs but receives " +
                           shape_to_string(cur) + " = " + std::to_string(flat));
        }
        fc_weight_ = xavier_init({1, flat}, flat, 1, rng);
        fc_bias_ = Tensor::zeros({1});
        cur = {1};
        break;
      }
    }
    shapes_.push_back(cur);
  }
}

std::vector<std::pair<std::string, Tensor*>> Model::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t k = 0; k < axial_.size(); ++k) {
    const std::string prefix = "axial" + std::to_string(k + 1) + ".";
    auto& p = axial_[k];
    out.emplace_back(prefix + "w_q", &p.embed.w_q);
    out.emplace_back(prefix + "r_z", &p.pos.r_z);
    out.emplace_back(prefix + "r_h", &p.pos.r_h);
    out.emplace_back(prefix + "r_w", &p.pos.r_w);
    out.emplace_back(prefix + "norm_gain", &p.norm_gain);
    out.emplace_back(prefix + "norm_bias", &p.norm_bias);
  }
  out.emplace_back("fc.weight", &fc_weight_);
  out.emplace_back("fc.bias", &fc_bias_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::parameters() const {
  auto mut = const_cast<Model*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->size();
  return n;
}

void Model::load_parameters(std::span<const std::pair<std::string, Tensor>> entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : entries) by_name[name] = &t;
  for (auto& [name, t] : parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter " + name);
    if (it->second->shape() != t->shape()) {
      throw ShapeError("parameter " + name + " has shape " + shape_to_string(it->second->shape()) + ", model expects " +
                       shape_to_string(t->shape()));
    }
    *t = *it->second;
  }
}

bool Model::has_dropout() const { return specs_.back().dropout_p > 0.0; }

Tensor max_pool_3d(const Tensor& x, const std::array<std::size_t, 3>& kernel, std::size_t stride) {
  if (x.rank() != 4) throw ShapeError("max_pool_3d expects C x Z x W x H");
  if (stride == 0) throw ShapeError("max_pool_3d stride must be positive");
  for (std::size_t a = 0; a < 3; ++a) {
    if (x.dim(a + 1) % stride != 0) {
      throw ShapeError("max_pool_3d: axis of length " + std::to_string(x.dim(a + 1)) + " not divisible by stride " +
                       std::to_string(stride));
    }
    if (kernel[a] == 0 || kernel[a] > stride) throw ShapeError("max_pool_3d: kernel must be in [1, stride]");
  }
  const std::size_t c = x.dim(0), nz = x.dim(1), nw = x.dim(2), nh = x.dim(3);
  const std::size_t oz = nz / stride, ow = nw / stride, oh = nh / stride;
  Tensor out = Tensor::uninitialized({c, oz, ow, oh});
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < oz; ++z) {
      for (std::size_t w = 0; w < ow; ++w) {
        for (std::size_t h = 0; h < oh; ++h) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < kernel[0]; ++i) {
            for (std::size_t j = 0; j < kernel[1]; ++j) {
              const std::size_t row = ((ch * nz + z * stride + i) * nw + w * stride + j) * nh + h * stride;
              for (std::size_t k = 0; k < kernel[2]; ++k) m = std::max(m, x[row + k]);
            }
          }
          out[o++] = m;
        }
      }
    }
  }
  return out;
}

namespace {

// Max pool recording, per output element, the flat input index of its
// (first) maximum.
Tensor max_pool_forward(const Tensor& x, const LayerSpec& s, std::vector<std::size_t>& argmax) {
  const std::size_t c = x.dim(0), nz = x.dim(1), nw = x.dim(2), nh = x.dim(3);
  const std::size_t st = s.stride;
  const std::size_t oz = nz / st, ow = nw / st, oh = nh / st;
  Tensor out = Tensor::uninitialized({c, oz, ow, oh});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t z = 0; z < oz; ++z) {
      for (std::size_t w = 0; w < ow; ++w) {
        for (std::size_t h = 0; h < oh; ++h) {
          double m = -std::numeric_limits<double>::infinity();
          std::size_t best = 0;
          for (std::size_t i = 0; i < s.kernel[0]; ++i) {
            for (std::size_t j = 0; j < s.kernel[1]; ++j) {
              const std::size_t row = ((ch * nz + z * st + i) * nw + w * st + j) * nh + h * st;
              for (std::size_t k = 0; k < s.kernel[2]; ++k) {
                if (x[row + k] > m) {
                  m = x[row + k];
                  best = row + k;
                }
              }
            }
          }
          out[o] = m;
          argmax[o] = best;
          ++o;
        }
      }
    }
  }
  return out;
}

std::string layer_name(const Model& model, std::size_t index) {
  const auto& specs = model.specs();
  switch (specs[index].kind) {
    case LayerKind::kAxial: {
      std::size_t k = 0;
      for (std::size_t i = 0; i <= index; ++i) k += specs[i].kind == LayerKind::kAxial;
      return "axial" + std::to_string(k);
    }
    case LayerKind::kMaxPool:
      return "maxpool@" + std::to_string(index);
    case LayerKind::kFc:
      return "fc";
  }
  return "?";
}

void require_finite(const Tensor& t, const Model& model, std::size_t index) {
  if (!t.all_finite()) throw NumericError("non-finite activation after layer " + layer_name(model, index));
}

}  // namespace

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ParameterError("dropout probability must be in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  const double scale = 1.0 / (1.0 - p);
  Tensor out = Tensor::uninitialized(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = rng.uniform() < p ? 0.0 : x[i] * scale;
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double fc_sigmoid(std::span<const double> x, const Tensor& w, double b) {
  if (w.size() != x.size()) {
    throw ShapeError("FC weight has " + std::to_string(w.size()) + " entries for " + std::to_string(x.size()) +
                     " inputs");
  }
  double z = b;
  for (std::size_t i = 0; i < x.size(); ++i) z += w[i] * x[i];
  return sigmoid(z);
}

double forward_sample(const Model& model, const Tensor& x, Mode mode, const DropoutKey& key, ForwardCache* cache,
                      std::vector<Shape>* shapes) {
  if (x.shape() != model.input_shape()) {
    throw ShapeError("model input must be " + shape_to_string(model.input_shape()) + ", got " +
                     shape_to_string(x.shape()));
  }
  if (cache != nullptr) {
    cache->axial.resize(model.axial_count());
    cache->pool_argmax.clear();
  }
  if (shapes != nullptr) shapes->clear();

  Tensor cur = x;
  std::size_t axial_index = 0;
  const auto& specs = model.specs();
  double prob = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    switch (s.kind) {
      case LayerKind::kAxial: {
        if (cache != nullptr) {
          cur = axial_attention_3d_forward(cur, model.axial(axial_index), cache->axial[axial_index]);
        } else {
          cur = axial_attention_3d(cur, model.axial(axial_index));
        }
        ++axial_index;
        break;
      }
      case LayerKind::kMaxPool: {
        if (cache != nullptr) {
          cache->pool_argmax.emplace_back();
          cur = max_pool_forward(cur, s, cache->pool_argmax.back());
        } else {
          cur = max_pool_3d(cur, s.kernel, s.stride);
        }
        break;
      }
      case LayerKind::kFc: {
        Tensor flat = cur.reshaped({cur.size()});
        std::vector<double> scale(flat.size(), 1.0);
        if (mode == Mode::kTrain && s.dropout_p > 0.0) {
          Rng rng(derive_seed(key.seed, "dropout", key.epoch, key.sample_id));
          const double keep = 1.0 / (1.0 - s.dropout_p);
          for (std::size_t k = 0; k < flat.size(); ++k) {
            scale[k] = rng.uniform() < s.dropout_p ? 0.0 : keep;
            flat[k] *= scale[k];
          }
        }
        double z = model.fc_bias()[0];
        for (std::size_t k = 0; k < flat.size(); ++k) z += model.fc_weight()[k] * flat[k];
        if (!std::isfinite(z)) throw NumericError("non-finite activation after layer fc");
        prob = sigmoid(z);
        if (cache != nullptr) {
          cache->dropout_scale = std::move(scale);
          cache->fc_input = std::move(flat);
          cache->logit = z;
          cache->prob = prob;
        }
        cur = Tensor({1}, {prob});
        break;
      }
    }
    require_finite(cur, model, i);
    if (shapes != nullptr) shapes->push_back(cur.shape());
  }
  return prob;
}

std::vector<double> forward(const Model& model, const Tensor& batch, Mode mode, DropoutKey key) {
  const Shape& in = model.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1)) {
    throw ShapeError("batch must be B x " + shape_to_string(in) + ", got " + shape_to_string(batch.shape()));
  }
  const std::size_t per = shape_size(in);
  std::vector<double> out(batch.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b) {
    auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(b * per);
    Tensor sample(in, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
    DropoutKey k = key;
    k.sample_id = key.sample_id + b;
    out[b] = forward_sample(model, sample, mode, k);
  }
  return out;
}

// Checkpoint encoding --------------------------------------------------------

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " reading " + what + ": need " +
                        std::to_string(n) + " bytes, have " + std::to_string(bytes_.size() - pos_));
    }
  }

  const std::uint8_t* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& entries) {
  std::vector<std::uint8_t> out = {'A', 'X', 'C', 'K'};
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : entries) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("parameter name too long");
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) throw FormatError("tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor dimension too large");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.data()) put<double>(out, v);
  }
  return out;
}

NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(r.here(), "AXCK", 4) != 0) throw FormatError("bad checkpoint magic at byte 0: expected \"AXCK\"");
  r.skip(4);
  const auto version = r.get<std::uint32_t>("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at byte 4");
  }
  NamedTensors out;
  while (!r.done()) {
    const auto len = r.get<std::uint16_t>("name length");
    r.need(len, "name");
    std::string name(reinterpret_cast<const char*>(r.here()), len);
    r.skip(len);
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("dimension");
      if (d == 0) throw FormatError("zero dimension in " + name + " before byte " + std::to_string(r.pos()));
      if (count > std::numeric_limits<std::size_t>::max() / 8 / d) {
        throw FormatError("dimension overflow in " + name + " before byte " + std::to_string(r.pos()));
      }
      count *= d;
    }
    r.need(count * sizeof(double), "payload");
    std::vector<double> data(count);
    std::memcpy(data.data(), r.here(), count * sizeof(double));
    r.skip(count * sizeof(double));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  const auto bytes = encode_checkpoint(entries);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing " + path.string());
}

NamedTensors read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

NamedTensors model_entries(const Model& model) {
  NamedTensors out;
  for (const auto& [name, t] : model.parameters()) out.emplace_back(name, *t);
  return out;
}

Model default_model_from_entries(const NamedTensors& entries, std::uint64_t seed) {
  std::array<std::size_t, 6> widths{};
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const std::string want = "axial" + std::to_string(k + 1) + ".w_q";
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == want; });
    if (it == entries.end() || it->second.rank() != 2) throw FormatError("checkpoint lacks " + want);
    widths[k] = it->second.dim(0);
  }
  Model model(default_input_shape(), default_specs(widths), seed);
  model.load_parameters(entries);
  return model;
}

}  // namespace axial
