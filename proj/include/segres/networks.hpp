#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segres/layers.hpp"

namespace segres {

enum class HeadKind { Softmax, Sigmoid };

struct EncoderDecoderConfig {
  int in_channels = 0;
  int out_channels = 0;
  int base_width = 16;
  int levels = 4;  // resolutions 1, 1/2, ..., 1/2^(levels-1)
  HeadKind head = HeadKind::Softmax;
  std::uint64_t seed = 0;
};

// Symmetric encoder-decoder with additive skip connections and instance
// normalization. Fully convolutional: output spatial dims equal the input's
// (odd sizes round up through the encoder and are cropped on the way back).
// Serves as G1 (softmax head), G2 (sigmoid head) and the toy segmenter.
template <typename S>
struct EncoderDecoder {
  EncoderDecoderConfig cfg;
  std::vector<Conv2d<S>> enc;          // enc[0] stride 1, rest stride 2
  std::vector<InstanceNorm<S>> enc_in;
  std::vector<Conv2d<S>> dec;          // after 2x upsample, one per skip level
  std::vector<InstanceNorm<S>> dec_in;
  Conv2d<S> head;

  EncoderDecoder() = default;
  explicit EncoderDecoder(const EncoderDecoderConfig& c) : cfg(c) {
    std::mt19937_64 rng(cfg.seed);
    const int L = cfg.levels;
    enc.resize(L);
    enc_in.resize(L);
    dec.resize(L - 1);
    dec_in.resize(L - 1);
    auto width = [&](int level) { return cfg.base_width << level; };
    enc[0].init(cfg.in_channels, width(0), 3, 1, rng, /*with_bias=*/false);
    enc_in[0].init(width(0));
    for (int l = 1; l < L; ++l) {
      enc[l].init(width(l - 1), width(l), 3, 2, rng, false);
      enc_in[l].init(width(l));
    }
    for (int l = L - 2; l >= 0; --l) {
      dec[l].init(width(l + 1), width(l), 3, 1, rng, false);
      dec_in[l].init(width(l));
    }
    head.init(width(0), cfg.out_channels, 3, 1, rng, /*with_bias=*/true);
  }

  // Returns the id of the head output (after softmax/sigmoid).
  int forward(Graph<S>& g, int x) {
    const int L = cfg.levels;
    std::vector<int> skips(L);
    int cur = x;
    for (int l = 0; l < L; ++l) {
      cur = conv2d(g, cur, enc[l]);
      cur = instance_norm(g, cur, enc_in[l]);
      cur = leaky_relu(g, cur, 0.2);
      skips[l] = cur;
    }
    for (int l = L - 2; l >= 0; --l) {
      cur = upsample2x(g, cur);
      cur = crop_to(g, cur, g.value(skips[l]).h, g.value(skips[l]).w);
      cur = conv2d(g, cur, dec[l]);
      cur = instance_norm(g, cur, dec_in[l]);
      cur = leaky_relu(g, cur, 0.2);
      cur = add(g, cur, skips[l]);
    }
    cur = conv2d(g, cur, head);
    return cfg.head == HeadKind::Softmax ? softmax_channels(g, cur) : sigmoid(g, cur);
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    auto absorb = [&](auto& layers) {
      for (auto& l : layers)
        for (auto* p : l.params()) out.push_back(p);
    };
    absorb(enc);
    absorb(enc_in);
    absorb(dec);
    absorb(dec_in);
    for (auto* p : head.params()) out.push_back(p);
    return out;
  }

  void set_trainable(bool trainable) {
    for (auto* p : params()) p->trainable = trainable;
  }
};

struct DiscriminatorConfig {
  int in_channels = 0;
  int base_width = 16;
  int blocks = 4;  // stride-2 blocks; 64x64 input -> 4x4 patch map
  bool spectral_norm = true;
  std::uint64_t seed = 0;
};

// Strided convolutional patch classifier. With spectral_norm on, every
// convolution (head included) is normalized -- the SN-PatchGAN arrangement.
template <typename S>
struct PatchDiscriminator {
  DiscriminatorConfig cfg;
  std::vector<Conv2d<S>> convs;
  Conv2d<S> head;

  PatchDiscriminator() = default;
  explicit PatchDiscriminator(const DiscriminatorConfig& c) : cfg(c) {
    std::mt19937_64 rng(cfg.seed);
    convs.resize(cfg.blocks);
    int ch = cfg.in_channels;
    for (int b = 0; b < cfg.blocks; ++b) {
      int out_ch = cfg.base_width << std::min(b + 1, 3);
      convs[b].init(ch, out_ch, 4, 2, rng, true, cfg.spectral_norm);
      ch = out_ch;
    }
    head.init(ch, 1, 3, 1, rng, true, cfg.spectral_norm);
  }

  // Patch score map (n, 1, h/2^blocks, w/2^blocks), raw scores.
  int forward(Graph<S>& g, int x, bool update_sn = false) {
    int cur = x;
    for (auto& conv : convs) {
      cur = conv2d(g, cur, conv, update_sn);
      cur = leaky_relu(g, cur, 0.2);
    }
    return conv2d(g, cur, head, update_sn);
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    for (auto& l : convs)
      for (auto* p : l.params()) out.push_back(p);
    for (auto* p : head.params()) out.push_back(p);
    return out;
  }

  std::vector<Conv2d<S>*> sn_layers() {
    std::vector<Conv2d<S>*> out;
    for (auto& l : convs)
      if (l.spectral_norm) out.push_back(&l);
    if (head.spectral_norm) out.push_back(&head);
    return out;
  }
};

struct FeatureExtractorConfig {
  int in_channels = 3;
  std::vector<int> widths = {8, 16, 32};
  std::vector<int> strides = {1, 2, 2};
  std::uint64_t seed = 7;
};

// Frozen convolutional pyramid for perceptual and style losses. Taps are the
// raw convolution outputs, i.e. the values BEFORE each ReLU; the ReLU only
// feeds the next layer. Weights are never trained; they come from the fixed
// seed or from a pyramid weights file.
template <typename S>
struct FeatureExtractor {
  FeatureExtractorConfig cfg;
  std::vector<Conv2d<S>> convs;

  FeatureExtractor() = default;
  explicit FeatureExtractor(const FeatureExtractorConfig& c) : cfg(c) {
    if (cfg.widths.size() != cfg.strides.size())
      throw ConfigError("feature extractor: widths/strides size mismatch");
    std::mt19937_64 rng(cfg.seed);
    convs.resize(cfg.widths.size());
    int ch = cfg.in_channels;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      convs[i].init(ch, cfg.widths[i], 3, cfg.strides[i], rng, true);
      for (auto* p : convs[i].params()) p->trainable = false;
      ch = cfg.widths[i];
    }
  }

  int min_input_size() const {
    int s = 1;
    for (int st : cfg.strides) s *= st;
    return s;
  }

  // Pre-activation feature taps, one per layer.
  std::vector<int> taps(Graph<S>& g, int x) {
    const auto& tx = g.value(x);
    if (tx.h < min_input_size() || tx.w < min_input_size())
      throw ShapeError("feature extractor: input " + tx.shape_str() + " below minimum size " +
                       std::to_string(min_input_size()));
    std::vector<int> out;
    int cur = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      int z = conv2d(g, cur, convs[i]);
      out.push_back(z);
      if (i + 1 < convs.size()) cur = relu(g, z);
    }
    return out;
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    for (auto& l : convs)
      for (auto* p : l.params()) out.push_back(p);
    return out;
  }

  // FNV-1a over the raw parameter bytes; the frozen contract is checked by
  // comparing checksums before and after training.
  std::uint64_t checksum() {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto* p : params()) {
      const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p->value.data.data());
      for (std::int64_t i = 0; i < p->value.size() * std::int64_t(sizeof(S)); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }
};

}  // namespace segres
