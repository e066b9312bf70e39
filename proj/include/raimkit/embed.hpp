#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "raimkit/nn.hpp"
#include "raimkit/ops.hpp"

namespace raimkit::embed {

enum class EmbedKind { kCnn, kLinear, kIdentity };

struct CnnLayer {
  std::size_t kernel = 3;
  std::size_t channels = 4;
  std::size_t stride = 1;
  std::size_t pool = 1;  // 1 disables pooling
};

struct ChannelEmbedSpec {
  std::string name;
  EmbedKind kind = EmbedKind::kLinear;
  std::size_t input_length = 0;  // samples per step
  std::vector<CnnLayer> layers;  // cnn only
  bool batchnorm = true;
};

struct EmbedderConfig {
  std::size_t d_emb = 32;
  std::vector<ChannelEmbedSpec> channels;
};

/// Five conv layers with kernels 10, 7, 5, 3, 3.
std::vector<CnnLayer> paper_cnn_layers(std::size_t width = 32);
/// Two small conv layers for desk-scale runs.
std::vector<CnnLayer> desk_cnn_layers(std::size_t width = 4);

/// Maps one channel's per-step segments [n x L] to embeddings [n x d_emb].
class ChannelEmbedder {
 public:
  ChannelEmbedder(const ChannelEmbedSpec& spec, std::size_t d_emb, nn::ParamStore& store,
                  const std::string& prefix);

  ad::Tensor forward(const ad::Tensor& segments, ad::Mode mode);
  const ChannelEmbedSpec& spec() const { return spec_; }

 private:
  struct Layer {
    ad::Tensor kernel;
    ad::Tensor bias;
    ad::Tensor gamma;
    ad::Tensor beta;
    ad::BatchNormState* norm = nullptr;
  };

  ChannelEmbedSpec spec_;
  std::size_t d_emb_;
  std::string prefix_;
  std::vector<Layer> layers_;
  ad::Tensor out_weight_;
  ad::Tensor out_bias_;
};

/// Applies each channel's embedder and concatenates blocks in channel order.
class Embedder {
 public:
  Embedder(const EmbedderConfig& config, nn::ParamStore& store, const std::string& prefix = "embed");

  /// segments[k] is [n x L_k]; returns [n x K*d_emb].
  ad::Tensor forward(std::span<const ad::Tensor> segments, ad::Mode mode);
  std::size_t channels() const { return channels_.size(); }
  std::size_t d_emb() const { return config_.d_emb; }
  std::size_t width() const { return channels_.size() * config_.d_emb; }
  const EmbedderConfig& config() const { return config_; }

 private:
  EmbedderConfig config_;
  std::vector<ChannelEmbedder> channels_;
};

}  // namespace raimkit::embed
