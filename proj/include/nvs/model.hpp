#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nvs/autodiff/ops.hpp"
#include "nvs/autodiff/tensor.hpp"
#include "nvs/error.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"
#include "nvs/voxelgrid.hpp"

namespace nvs {

enum class FusionMode { kContextAware, kSimpleAverage };

inline std::string_view fusion_name(FusionMode m) {
  return m == FusionMode::kContextAware ? "context_aware" : "simple_average";
}

inline FusionMode parse_fusion(std::string_view s) {
  if (s == "context_aware") return FusionMode::kContextAware;
  if (s == "simple_average") return FusionMode::kSimpleAverage;
  throw InvalidArgument("unknown fusion mode '" + std::string(s) + "'");
}

struct ModelConfig {
  int image_size = kDefaultImageSize;
  int resolution = 16;
  int views = 11;
  // Stride-2 conv stages of the shared trunk; the last stage is the encoder map.
  std::vector<int> trunk_channels{8, 16, 32};
  int head_hidden = 64;
  // Seed channels followed by the output channels of every transposed conv but
  // the last (which emits one occupancy channel). Seed is 2x2x2.
  std::vector<int> decoder_channels{64, 32, 16};
  int score_channels = 4;
  int refiner_channels = 4;
  FusionMode fusion = FusionMode::kContextAware;
  bool include_base_in_candidates = true;
  std::uint64_t init_seed = 1;

  int encoder_size() const { return image_size >> trunk_channels.size(); }
  std::size_t encoder_features() const {
    const auto s = static_cast<std::size_t>(encoder_size());
    return static_cast<std::size_t>(trunk_channels.back()) * s * s;
  }
  ad::Shape encoder_shape() const {
    const auto s = static_cast<std::size_t>(encoder_size());
    return {static_cast<std::size_t>(trunk_channels.back()), s, s};
  }

  void validate() const {
    if (image_size < kMinImageSize) throw InvalidArgument("image size must be >= 8");
    if (trunk_channels.empty()) throw InvalidArgument("trunk needs at least one stage");
    if (image_size % (1 << trunk_channels.size()) != 0 || encoder_size() < 1) {
      throw InvalidArgument("image size " + std::to_string(image_size) +
                            " is not divisible by 2^" + std::to_string(trunk_channels.size()));
    }
    if (decoder_channels.empty()) throw InvalidArgument("decoder needs a seed stage");
    const int decoded = 2 << decoder_channels.size();
    if (decoded != resolution) {
      throw InvalidArgument("decoder with " + std::to_string(decoder_channels.size()) +
                            " transposed convolutions emits " + std::to_string(decoded) +
                            "^3, but resolution is " + std::to_string(resolution));
    }
    check_resolution(resolution);
    if (resolution % 2 != 0) throw InvalidArgument("resolution must be even for the refiner");
    if (views < 1) throw InvalidArgument("view count must be positive");
    for (int c : trunk_channels)
      if (c < 1) throw InvalidArgument("channel counts must be positive");
    for (int c : decoder_channels)
      if (c < 1) throw InvalidArgument("channel counts must be positive");
    if (head_hidden < 1 || score_channels < 1 || refiner_channels < 1) {
      throw InvalidArgument("channel counts must be positive");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"resolution", c.resolution},
          {"views", c.views},
          {"trunk_channels", c.trunk_channels},
          {"head_hidden", c.head_hidden},
          {"decoder_channels", c.decoder_channels},
          {"score_channels", c.score_channels},
          {"refiner_channels", c.refiner_channels},
          {"fusion", std::string(fusion_name(c.fusion))},
          {"include_base_in_candidates", c.include_base_in_candidates},
          {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.image_size = j.value("image_size", c.image_size);
  c.resolution = j.value("resolution", c.resolution);
  c.views = j.value("views", c.views);
  c.trunk_channels = j.value("trunk_channels", c.trunk_channels);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
  c.score_channels = j.value("score_channels", c.score_channels);
  c.refiner_channels = j.value("refiner_channels", c.refiner_channels);
  if (j.contains("fusion")) c.fusion = parse_fusion(j.at("fusion").get<std::string>());
  c.include_base_in_candidates = j.value("include_base_in_candidates", c.include_base_in_candidates);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

// Default decoder plan for a resolution: 64 seed channels halving per stage.
inline std::vector<int> default_decoder_channels(int resolution) {
  std::vector<int> out;
  int c = 64;
  for (int r = 2; r < resolution; r *= 2) {
    out.push_back(c);
    c = std::max(1, c / 2);
  }
  return out;
}

// Images as a [B, 3, S, S] tensor (channel-major).
// Which views may be selected next; the base view itself is optional.
inline std::vector<bool> candidate_mask(std::size_t k, std::size_t base, bool include_base) {
  std::vector<bool> m(k, true);
  if (!include_base) m[base] = false;
  return m;
}

template <class T>
ad::Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidArgument("no images");
  const int s = images.front()->size;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  std::vector<T> data(images.size() * 3 * plane);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.size != s) throw DimensionError("images in one batch differ in size");
    for (int ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        data[(b * 3 + ch) * plane + p] = static_cast<T>(img.pixels[p * 3 + ch]);
  }
  return ad::Tensor<T>::from({images.size(), 3, static_cast<std::size_t>(s),
                              static_cast<std::size_t>(s)},
                             std::move(data));
}

template <class T>
ad::Tensor<T> images_to_tensor(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  for (const auto& i : images) ptrs.push_back(&i);
  return images_to_tensor<T>(ptrs);
}

template <class T>
struct NvsOutput {
  ad::Tensor<T> features;  // encoder map [B, C, s, s]
  ad::Tensor<T> probs;     // [B, K]
};

// NVS-Net, decoder, context-aware fusion and refiner. The encoder has no
// parameters of its own: it is the trunk of NVS-Net.
template <class T>
class Model {
 public:
  using Tensor = ad::Tensor<T>;

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
    initialize(cfg_.init_seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : params_) out.push_back(t);
    return out;
  }

  Tensor& param(std::string_view name) {
    for (auto& [n, t] : params_)
      if (n == name) return t;
    throw NotFound("no parameter named '" + std::string(name) + "'");
  }
  const Tensor& param(std::string_view name) const {
    return const_cast<Model*>(this)->param(name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  // He-style uniform init scaled by fan-in; biases start at zero. The
  // classifier output and the refiner's residual head start 10x smaller so
  // the initial selection is near uniform and the refiner near identity.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0x1a17ULL}));
    for (auto& [name, t] : params_) {
      auto v = t.data();
      if (name.ends_with(".bias")) {
        std::fill(v.begin(), v.end(), T(0));
        continue;
      }
      double fan_in = fan_in_of(name, t.shape());
      double bound = std::sqrt(6.0 / fan_in);
      if (name == last_head_layer() || name == "refiner.out.weight") bound *= 0.1;
      for (auto& x : v) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  }

  template <class U>
  Model<U> cast() const {
    Model<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i].second.data();
      auto dst = out.named_parameters()[i].second;
      auto d = dst.data();
      for (std::size_t j = 0; j < src.size(); ++j) d[j] = static_cast<U>(src[j]);
    }
    return out;
  }

  // --- NVS-Net --------------------------------------------------------------

  // Shared trunk: stride-2 conv + ELU stages. Its output is the encoder map.
  Tensor encode(const Tensor& images) const {
    check_images(images);
    Tensor h = images;
    for (std::size_t i = 0; i < cfg_.trunk_channels.size(); ++i) {
      const auto idx = std::to_string(i);
      h = ad::elu(ad::conv2d(h, param("trunk.conv" + idx + ".weight"),
                             param("trunk.conv" + idx + ".bias"), 2));
    }
    return h;
  }

  Tensor head_logits(const Tensor& features) const {
    const std::size_t b = features.dim(0);
    Tensor x = ad::reshape(features, {b, cfg_.encoder_features()});
    x = ad::elu(ad::dense(x, param("head.fc0.weight"), param("head.fc0.bias")));
    return ad::dense(x, param("head.fc1.weight"), param("head.fc1.bias"));
  }

  NvsOutput<T> nvs_forward_with_features(const Tensor& images) const {
    Tensor f = encode(images);
    return {f, ad::softmax(head_logits(f))};
  }

  // Selection distribution [B, K] over candidate next views.
  Tensor nvs_forward(const Tensor& images) const { return nvs_forward_with_features(images).probs; }

  // --- Reconstruction ---------------------------------------------------------

  // Coarse occupancy [B, 1, D, D, D] from encoder maps.
  Tensor decode(const Tensor& features) const {
    const std::size_t b = features.dim(0);
    if (features.size() != b * cfg_.encoder_features()) {
      throw DimensionError("decode: feature map " + ad::to_string(features.shape()) +
                           " does not match encoder shape");
    }
    Tensor x = ad::reshape(features, {b, cfg_.encoder_features()});
    x = ad::dense(x, param("decoder.seed.weight"), param("decoder.seed.bias"));
    const auto c0 = static_cast<std::size_t>(cfg_.decoder_channels.front());
    x = ad::elu(ad::reshape(x, {b, c0, 2, 2, 2}));
    const std::size_t stages = cfg_.decoder_channels.size();
    for (std::size_t i = 0; i < stages; ++i) {
      const auto idx = std::to_string(i);
      x = ad::tconv3d(x, param("decoder.tconv" + idx + ".weight"),
                      param("decoder.tconv" + idx + ".bias"));
      x = (i + 1 < stages) ? ad::elu(x) : ad::sigmoid(x);
    }
    return x;
  }

  // Per-voxel fusion scores [B, 1, D, D, D] for coarse volumes [B, 1, D, D, D].
  Tensor fusion_scores(const Tensor& coarse) const {
    Tensor h = ad::elu(ad::conv3d(coarse, param("fusion.conv0.weight"),
                                  param("fusion.conv0.bias"), 1));
    return ad::conv3d(h, param("fusion.conv1.weight"), param("fusion.conv1.bias"), 1);
  }

  // Fuses groups of views: coarse/scores [G, V, 1, D, D, D] -> [G, 1, D, D, D].
  Tensor fuse(const Tensor& coarse, const Tensor& scores) const {
    if (coarse.rank() != 6) throw DimensionError("fuse: expects [G, V, 1, D, D, D]");
    if (cfg_.fusion == FusionMode::kSimpleAverage) return ad::mean_views(coarse);
    return ad::softmax_fuse(coarse, scores);
  }

  // Fuses an arbitrary list of coarse volumes of one object.
  Tensor fuse(const std::vector<Tensor>& coarse) const {
    if (coarse.empty()) throw InvalidArgument("fuse: no coarse volumes");
    for (const auto& c : coarse) check_volume(c, "fuse");
    Tensor stacked = stack(coarse);
    const auto d = static_cast<std::size_t>(cfg_.resolution);
    const std::size_t v = coarse.size();
    Tensor scores = cfg_.fusion == FusionMode::kContextAware ? fusion_scores(stacked) : Tensor{};
    Tensor grouped = ad::reshape(stacked, {1, v, 1, d, d, d});
    Tensor grouped_scores =
        scores.defined() ? ad::reshape(scores, {1, v, 1, d, d, d}) : Tensor{};
    if (cfg_.fusion == FusionMode::kSimpleAverage) return ad::mean_views(grouped);
    return ad::softmax_fuse(grouped, grouped_scores);
  }

  // Residual UNet-style refiner on [B, 1, D, D, D]; output sigmoid(logit(x) + residual).
  Tensor refine(const Tensor& fused) const {
    check_volume(fused, "refine");
    Tensor h0 = ad::elu(ad::conv3d(fused, param("refiner.in.weight"), param("refiner.in.bias"), 1));
    Tensor h1 = ad::elu(ad::conv3d(h0, param("refiner.down.weight"), param("refiner.down.bias"), 2));
    Tensor u = ad::tconv3d(h1, param("refiner.up.weight"), param("refiner.up.bias"));
    u = ad::elu(ad::add(u, h0));
    Tensor residual = ad::conv3d(u, param("refiner.out.weight"), param("refiner.out.bias"), 1);
    return ad::sigmoid(ad::add(ad::logit(fused), residual));
  }

  // Refined volumes [P, 1, D, D, D] for pairs (base, candidates[p]) where all
  // images are rows of `images`. Features, coarse volumes and scores are
  // computed once per image.
  Tensor reconstruct_pairs(const Tensor& features, std::size_t base,
                           const std::vector<std::size_t>& candidates) const {
    Tensor coarse = decode(features);
    Tensor scores = cfg_.fusion == FusionMode::kContextAware ? fusion_scores(coarse) : Tensor{};
    return fuse_and_refine_pairs(coarse, scores, base, candidates);
  }

  Tensor fuse_and_refine_pairs(const Tensor& coarse, const Tensor& scores, std::size_t base,
                               const std::vector<std::size_t>& candidates) const {
    std::vector<std::size_t> rows;
    for (auto c : candidates) {
      rows.push_back(base);
      rows.push_back(c);
    }
    const auto d = static_cast<std::size_t>(cfg_.resolution);
    const std::size_t p = candidates.size();
    Tensor pair_coarse = ad::reshape(ad::gather_rows(coarse, rows), {p, 2, 1, d, d, d});
    Tensor pair_scores;
    if (scores.defined()) {
      pair_scores = ad::reshape(ad::gather_rows(scores, rows), {p, 2, 1, d, d, d});
    }
    return refine(fuse(pair_coarse, pair_scores));
  }

  // v = refine(fuse([decode(encode(base)), decode(encode(candidate))])).
  Tensor reconstruct_pair(const Image& base, const Image& candidate) const {
    Tensor images = images_to_tensor<T>(std::vector<const Image*>{&base, &candidate});
    return reconstruct_pairs(encode(images), 0, {1});
  }

  // Concatenation along the leading axis.
  static Tensor stack(const std::vector<Tensor>& parts) {
    Tensor acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_rows(acc, parts[i]);
    return acc;
  }

 private:
  static Tensor concat_rows(const Tensor& a, const Tensor& b) {
    ad::Shape shape = a.shape();
    ad::Shape rest_a(a.shape().begin() + 1, a.shape().end());
    ad::Shape rest_b(b.shape().begin() + 1, b.shape().end());
    if (rest_a != rest_b) throw DimensionError("stack: trailing shapes differ");
    shape[0] = a.dim(0) + b.dim(0);
    auto out = ad::make_result<T>(shape, {&a, &b});
    auto o = out.data();
    std::copy(a.data().begin(), a.data().end(), o.begin());
    std::copy(b.data().begin(), b.data().end(), o.begin() + static_cast<long>(a.size()));
    if (out.requires_grad()) {
      out.raw()->backward = [na = a.size()](ad::Node<T>& n) {
        if (n.parents.size() > 0 && n.parents[0]->requires_grad) {
          for (std::size_t i = 0; i < na; ++i) n.parents[0]->grad[i] += n.grad[i];
        }
        if (n.parents.size() > 1 && n.parents[1]->requires_grad) {
          auto& g = n.parents[1]->grad;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
        }
      };
    }
    return out;
  }

  void check_images(const Tensor& images) const {
    const auto s = static_cast<std::size_t>(cfg_.image_size);
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
      throw DimensionError("expected images [B, 3, " + std::to_string(s) + ", " +
                           std::to_string(s) + "], got " + ad::to_string(images.shape()));
    }
  }

  void check_volume(const Tensor& v, const char* op) const {
    const auto d = static_cast<std::size_t>(cfg_.resolution);
    if (v.rank() != 5 || v.dim(1) != 1 || v.dim(2) != d || v.dim(3) != d || v.dim(4) != d) {
      throw DimensionError(std::string(op) + ": expected [B, 1, " + std::to_string(d) + "^3], got " +
                           ad::to_string(v.shape()));
    }
  }

  std::string last_head_layer() const { return "head.fc1.weight"; }

  double fan_in_of(const std::string& name, const ad::Shape& s) const {
    if (name.starts_with("head.") || name.starts_with("decoder.seed")) return static_cast<double>(s[0]);
    if (name.find("tconv") != std::string::npos || name == "refiner.up.weight") {
      return static_cast<double>(s[0]) * 8.0;  // each output sees 2x2x2 taps per channel
    }
    double f = static_cast<double>(s[1]);
    for (std::size_t i = 2; i < s.size(); ++i) f *= static_cast<double>(s[i]);
    return f;
  }

  void add_param(std::string name, ad::Shape shape) {
    params_.emplace_back(std::move(name), Tensor::zeros(std::move(shape), true));
  }

  void build() {
    using S = std::size_t;
    S in = 3;
    for (std::size_t i = 0; i < cfg_.trunk_channels.size(); ++i) {
      const S out = static_cast<S>(cfg_.trunk_channels[i]);
      add_param("trunk.conv" + std::to_string(i) + ".weight", {out, in, 3, 3});
      add_param("trunk.conv" + std::to_string(i) + ".bias", {out});
      in = out;
    }
    const S feat = cfg_.encoder_features();
    const S hidden = static_cast<S>(cfg_.head_hidden);
    const S k = static_cast<S>(cfg_.views);
    add_param("head.fc0.weight", {feat, hidden});
    add_param("head.fc0.bias", {hidden});
    add_param("head.fc1.weight", {hidden, k});
    add_param("head.fc1.bias", {k});

    const auto& dc = cfg_.decoder_channels;
    add_param("decoder.seed.weight", {feat, static_cast<S>(dc[0]) * 8});
    add_param("decoder.seed.bias", {static_cast<S>(dc[0]) * 8});
    for (std::size_t i = 0; i < dc.size(); ++i) {
      const S cin = static_cast<S>(dc[i]);
      const S cout = i + 1 < dc.size() ? static_cast<S>(dc[i + 1]) : 1;
      add_param("decoder.tconv" + std::to_string(i) + ".weight", {cin, cout, 4, 4, 4});
      add_param("decoder.tconv" + std::to_string(i) + ".bias", {cout});
    }

    const S sc = static_cast<S>(cfg_.score_channels);
    add_param("fusion.conv0.weight", {sc, 1, 3, 3, 3});
    add_param("fusion.conv0.bias", {sc});
    add_param("fusion.conv1.weight", {1, sc, 3, 3, 3});
    add_param("fusion.conv1.bias", {1});

    const S rc = static_cast<S>(cfg_.refiner_channels);
    add_param("refiner.in.weight", {rc, 1, 3, 3, 3});
    add_param("refiner.in.bias", {rc});
    add_param("refiner.down.weight", {2 * rc, rc, 3, 3, 3});
    add_param("refiner.down.bias", {2 * rc});
    add_param("refiner.up.weight", {2 * rc, rc, 4, 4, 4});
    add_param("refiner.up.bias", {rc});
    add_param("refiner.out.weight", {1, rc, 3, 3, 3});
    add_param("refiner.out.bias", {1});
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace nvs
