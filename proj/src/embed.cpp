#include "raimkit/embed.hpp"

#include "raimkit/errors.hpp"

namespace raimkit::embed {

std::vector<CnnLayer> paper_cnn_layers(std::size_t width) {
  return {{10, width, 1, 2}, {7, width, 1, 2}, {5, width, 1, 2}, {3, width, 1, 2}, {3, width, 1, 1}};
}

std::vector<CnnLayer> desk_cnn_layers(std::size_t width) {
  return {{10, width, 2, 4}, {5, width, 1, 4}};
}

ChannelEmbedder::ChannelEmbedder(const ChannelEmbedSpec& spec, std::size_t d_emb,
                                 nn::ParamStore& store, const std::string& prefix)
    : spec_(spec), d_emb_(d_emb), prefix_(prefix) {
  if (d_emb == 0) throw ConfigError("d_emb must be positive");
  if (spec.input_length == 0) throw ConfigError("channel " + spec.name + " has zero input length");
  switch (spec.kind) {
    case EmbedKind::kIdentity:
      if (spec.input_length != d_emb) {
        throw ConfigError("identity embedding for " + spec.name + " needs d_emb == " +
                          std::to_string(spec.input_length));
      }
      return;
    case EmbedKind::kLinear:
      out_weight_ = store.uniform(prefix + ".out.W", {d_emb, spec.input_length}, spec.input_length);
      out_bias_ = store.constant(prefix + ".out.b", {d_emb}, 0.0);
      return;
    case EmbedKind::kCnn:
      break;
  }
  if (spec.layers.empty()) throw ConfigError("cnn embedding for " + spec.name + " has no layers");
  if (spec.input_length < spec.layers.front().kernel) {
    throw ShapeError(prefix + ".conv0: segment length " + std::to_string(spec.input_length) +
                     " shorter than kernel " + std::to_string(spec.layers.front().kernel));
  }
  std::size_t c_in = 1;
  std::size_t length = spec.input_length;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string name = prefix + ".conv" + std::to_string(i);
    if (l.kernel == 0 || l.stride == 0 || l.channels == 0 || l.pool == 0) {
      throw ConfigError(name + ": kernel, stride, channels and pool must be positive");
    }
    length = ad::conv1d_output_length(length, l.kernel, l.stride, ad::Padding::kSame);
    if (l.pool > 1) {
      if (length < l.pool) {
        throw ShapeError(name + ": length " + std::to_string(length) + " shorter than pool window " +
                         std::to_string(l.pool));
      }
      length = (length - l.pool) / l.pool + 1;
    }
    Layer layer;
    layer.kernel = store.uniform(name + ".kernel", {l.channels, c_in, l.kernel}, c_in * l.kernel);
    layer.bias = store.constant(name + ".bias", {l.channels}, 0.0);
    if (spec.batchnorm) {
      layer.gamma = store.constant(name + ".bn.gamma", {l.channels}, 1.0);
      layer.beta = store.constant(name + ".bn.beta", {l.channels}, 0.0);
      layer.norm = &store.batchnorm(name + ".bn", l.channels);
    }
    layers_.push_back(layer);
    c_in = l.channels;
  }
  out_weight_ = store.uniform(prefix + ".out.W", {d_emb, c_in}, c_in);
  out_bias_ = store.constant(prefix + ".out.b", {d_emb}, 0.0);
}

ad::Tensor ChannelEmbedder::forward(const ad::Tensor& segments, ad::Mode mode) {
  if (segments.rank() != 2 || segments.dim(1) != spec_.input_length) {
    throw ShapeError(prefix_ + ": expected [n x " + std::to_string(spec_.input_length) +
                     "] segments, got " + ad::shape_str(segments.shape()));
  }
  if (spec_.kind == EmbedKind::kIdentity) return segments;
  if (spec_.kind == EmbedKind::kLinear) return ad::linear(segments, out_weight_, out_bias_);

  const std::size_t n = segments.dim(0);
  ad::Tensor x = ad::reshape(segments, {n, 1, spec_.input_length});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& spec = spec_.layers[i];
    auto& layer = layers_[i];
    x = ad::conv1d(x, layer.kernel, layer.bias, spec.stride, ad::Padding::kSame);
    if (layer.norm) x = ad::batchnorm(x, layer.gamma, layer.beta, *layer.norm, mode);
    x = ad::relu(x);
    if (spec.pool > 1) x = ad::maxpool1d(x, spec.pool, spec.pool);
  }
  x = ad::mean_axis(x, 2);  // global average over time -> [n x c]
  return ad::linear(x, out_weight_, out_bias_);
}

Embedder::Embedder(const EmbedderConfig& config, nn::ParamStore& store, const std::string& prefix)
    : config_(config) {
  if (config.channels.empty()) throw ConfigError("embedder needs at least one channel");
  channels_.reserve(config.channels.size());
  for (const auto& spec : config.channels) {
    channels_.emplace_back(spec, config.d_emb, store, prefix + "." + spec.name);
  }
}

ad::Tensor Embedder::forward(std::span<const ad::Tensor> segments, ad::Mode mode) {
  if (segments.size() != channels_.size()) {
    throw ConfigError("embedder configured for " + std::to_string(channels_.size()) +
                      " channels, got " + std::to_string(segments.size()));
  }
  std::vector<ad::Tensor> blocks;
  blocks.reserve(channels_.size());
  for (std::size_t k = 0; k < channels_.size(); ++k) {
    blocks.push_back(channels_[k].forward(segments[k], mode));
  }
  if (blocks.size() == 1) return blocks.front();
  return ad::concat(blocks, 1);
}

}  // namespace raimkit::embed
