#ifndef SETMARGIN_ENCODER_HPP
#define SETMARGIN_ENCODER_HPP

// Masked recurrent sequence encoder f(x | w) with exact backpropagation
// through time. Two cell types share one code path: a gated (LSTM) cell and a
// plain tanh cell. The final hidden state of the top layer is projected
// linearly to the embedding.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "setmargin/common.hpp"
#include "setmargin/keystroke.hpp"

namespace setmargin {

enum class CellType { lstm, simple };

inline std::string to_string(CellType c) { return c == CellType::lstm ? "lstm" : "simple"; }

inline CellType cell_from_string(const std::string& s) {
  if (s == "lstm" || s == "gated") return CellType::lstm;
  if (s == "simple" || s == "rnn") return CellType::simple;
  throw ConfigError("unknown cell type '" + s + "' (expected lstm or simple)");
}

struct EncoderArch {
  CellType cell = CellType::lstm;
  int input_channels = kFeatureChannels;
  int hidden_dim = 32;
  int num_layers = 2;
  int embedding_dim = 16;
  double dropout_rate = 0.0;  // training only

  int gates() const { return cell == CellType::lstm ? 4 : 1; }
  int layer_input(int layer) const { return layer == 0 ? input_channels : hidden_dim; }

  void validate() const {
    if (input_channels < 1) throw ConfigError("encoder: input_channels must be >= 1");
    if (hidden_dim < 1) throw ConfigError("encoder: hidden_dim must be >= 1");
    if (num_layers < 1) throw ConfigError("encoder: num_recurrent_layers must be >= 1");
    if (embedding_dim < 1) throw ConfigError("encoder: embedding_dim must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("encoder: dropout_rate must be in [0, 1)");
  }

  bool operator==(const EncoderArch&) const = default;
};

struct ParamSegment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Segments of the flat parameter vector, in storage order:
/// layer{l}.W (gates*H x in), layer{l}.U (gates*H x H), layer{l}.b, then proj.W (d x H), proj.b.
inline std::vector<ParamSegment> param_layout(const EncoderArch& arch) {
  arch.validate();
  std::vector<ParamSegment> segs;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    segs.push_back(ParamSegment{std::move(name), off, rows, cols});
    off += rows * cols;
  };
  const auto gh = static_cast<std::size_t>(arch.gates() * arch.hidden_dim);
  const auto h = static_cast<std::size_t>(arch.hidden_dim);
  for (int l = 0; l < arch.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "W", gh, static_cast<std::size_t>(arch.layer_input(l)));
    add(p + "U", gh, h);
    add(p + "b", gh, 1);
  }
  add("proj.W", static_cast<std::size_t>(arch.embedding_dim), h);
  add("proj.b", static_cast<std::size_t>(arch.embedding_dim), 1);
  return segs;
}

inline std::size_t param_count(const EncoderArch& arch) {
  const auto segs = param_layout(arch);
  return segs.back().offset + segs.back().size();
}

/// Fixed per-channel affine map applied to valid rows before the first layer.
struct InputNormalizer {
  bool enabled = false;
  std::array<double, kFeatureChannels> mean{};
  std::array<double, kFeatureChannels> scale{1.0, 1.0, 1.0, 1.0, 1.0};

  /// Mean / standard deviation over the valid rows of the given sequences.
  static InputNormalizer fit(std::span<const FeatureSequence> seqs) {
    InputNormalizer n;
    n.enabled = true;
    std::array<double, kFeatureChannels> sum{};
    std::array<double, kFeatureChannels> sq{};
    double count = 0.0;
    for (const auto& s : seqs) {
      for (int t = 0; t < s.valid_len; ++t) {
        for (int c = 0; c < kFeatureChannels; ++c) {
          const double v = s.rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
          sum[static_cast<std::size_t>(c)] += v;
          sq[static_cast<std::size_t>(c)] += v * v;
        }
      }
      count += s.valid_len;
    }
    if (count == 0.0) return InputNormalizer{};
    for (std::size_t c = 0; c < kFeatureChannels; ++c) {
      n.mean[c] = sum[c] / count;
      const double var = std::max(0.0, sq[c] / count - n.mean[c] * n.mean[c]);
      n.scale[c] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    return n;
  }

  double apply(int channel, double v) const {
    if (!enabled) return v;
    const auto c = static_cast<std::size_t>(channel);
    return (v - mean[c]) * scale[c];
  }

  bool operator==(const InputNormalizer&) const = default;
};

struct ModelParams {
  EncoderArch arch;
  Vec values;
  InputNormalizer input_norm;

  std::size_t size() const { return values.size(); }
  std::vector<ParamSegment> segments() const { return param_layout(arch); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline ModelParams init_params(const EncoderArch& arch, std::uint64_t seed) {
  ModelParams p;
  p.arch = arch;
  const auto segs = param_layout(arch);
  p.values.assign(segs.back().offset + segs.back().size(), 0.0);
  Rng rng(Rng::mix(seed, 0x1417));
  for (const auto& s : segs) {
    if (s.cols == 1) continue;  // bias
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.cols));
    for (std::size_t k = 0; k < s.size(); ++k) p.values[s.offset + k] = rng.uniform(-bound, bound);
  }
  return p;
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct LayerView {
  std::size_t W = 0;
  std::size_t U = 0;
  std::size_t b = 0;
};

struct Offsets {
  std::vector<LayerView> layers;
  std::size_t projW = 0;
  std::size_t projb = 0;

  explicit Offsets(const EncoderArch& arch) {
    const auto segs = param_layout(arch);
    for (int l = 0; l < arch.num_layers; ++l) {
      const auto base = static_cast<std::size_t>(3 * l);
      layers.push_back(LayerView{segs[base].offset, segs[base + 1].offset, segs[base + 2].offset});
    }
    projW = segs[segs.size() - 2].offset;
    projb = segs.back().offset;
  }
};

}  // namespace detail

/// Per-sequence activations kept for the backward pass.
struct ForwardTrace {
  struct Layer {
    Vec act;   // T x (gates*H), post-nonlinearity gate values (i, f, g, o for lstm)
    Vec cell;  // T x H (lstm only)
    Vec h;     // T x H
    Vec mask;  // H, inverted-dropout mask applied to this layer's output (empty = none)
  };
  int steps = 0;
  Vec input;  // T x in, normalized
  std::vector<Layer> layers;
};

/// Seeded dropout masks for one training sample; empty when rate is zero.
inline std::vector<Vec> make_dropout_masks(const EncoderArch& arch, Rng& rng) {
  std::vector<Vec> masks(static_cast<std::size_t>(arch.num_layers));
  if (arch.dropout_rate <= 0.0) return masks;
  const double keep = 1.0 - arch.dropout_rate;
  for (auto& m : masks) {
    m.resize(static_cast<std::size_t>(arch.hidden_dim));
    for (auto& v : m) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
  return masks;
}

/// Embeds one sequence. Only the first valid_len rows are read, so padded
/// rows cannot influence the result. When trace is non-null the activations
/// are recorded for backward(); masks (one per layer) enable dropout.
inline Vec encode(const ModelParams& params, const FeatureSequence& x, ForwardTrace* trace = nullptr,
                  const std::vector<Vec>* masks = nullptr) {
  const EncoderArch& arch = params.arch;
  if (arch.input_channels != kFeatureChannels) {
    throw ConfigError("encoder: arch expects " + std::to_string(arch.input_channels) + " channels, sequences have " +
                      std::to_string(kFeatureChannels));
  }
  if (params.values.size() != param_count(arch)) throw ConfigError("encoder: parameter vector does not match arch");
  if (x.valid_len < 0 || x.valid_len > x.max_len()) throw DataError("encoder: sequence valid_len out of range");

  const detail::Offsets off(arch);
  const double* w = params.values.data();
  const int T = x.valid_len;
  const auto H = static_cast<std::size_t>(arch.hidden_dim);
  const auto G = static_cast<std::size_t>(arch.gates());
  const auto GH = G * H;
  const bool lstm = arch.cell == CellType::lstm;

  ForwardTrace local;
  ForwardTrace& tr = trace ? *trace : local;
  tr.steps = T;
  tr.input.assign(static_cast<std::size_t>(T) * kFeatureChannels, 0.0);
  for (int t = 0; t < T; ++t) {
    for (int c = 0; c < kFeatureChannels; ++c) {
      tr.input[static_cast<std::size_t>(t * kFeatureChannels + c)] =
          params.input_norm.apply(c, x.rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)]);
    }
  }
  tr.layers.assign(static_cast<std::size_t>(arch.num_layers), {});

  const Vec* below = &tr.input;
  auto in_dim = static_cast<std::size_t>(kFeatureChannels);
  Vec z(GH);
  std::vector<Vec> dropped_outputs(static_cast<std::size_t>(arch.num_layers));
  for (int l = 0; l < arch.num_layers; ++l) {
    auto& L = tr.layers[static_cast<std::size_t>(l)];
    const auto& lv = off.layers[static_cast<std::size_t>(l)];
    L.act.assign(static_cast<std::size_t>(T) * GH, 0.0);
    L.h.assign(static_cast<std::size_t>(T) * H, 0.0);
    if (lstm) L.cell.assign(static_cast<std::size_t>(T) * H, 0.0);
    if (masks && !(*masks)[static_cast<std::size_t>(l)].empty()) L.mask = (*masks)[static_cast<std::size_t>(l)];
    const double* W = w + lv.W;
    const double* U = w + lv.U;
    const double* b = w + lv.b;
    for (int t = 0; t < T; ++t) {
      const double* xin = below->data() + static_cast<std::size_t>(t) * in_dim;
      const double* hprev = t > 0 ? L.h.data() + static_cast<std::size_t>(t - 1) * H : nullptr;
      for (std::size_t r = 0; r < GH; ++r) {
        double s = b[r];
        const double* wr = W + r * in_dim;
        for (std::size_t c = 0; c < in_dim; ++c) s += wr[c] * xin[c];
        if (hprev) {
          const double* ur = U + r * H;
          for (std::size_t c = 0; c < H; ++c) s += ur[c] * hprev[c];
        }
        z[r] = s;
      }
      double* act = L.act.data() + static_cast<std::size_t>(t) * GH;
      double* h = L.h.data() + static_cast<std::size_t>(t) * H;
      if (lstm) {
        const double* cprev = t > 0 ? L.cell.data() + static_cast<std::size_t>(t - 1) * H : nullptr;
        double* cell = L.cell.data() + static_cast<std::size_t>(t) * H;
        for (std::size_t k = 0; k < H; ++k) {
          const double ig = detail::sigmoid(z[k]);
          const double fg = detail::sigmoid(z[H + k]);
          const double gg = std::tanh(z[2 * H + k]);
          const double og = detail::sigmoid(z[3 * H + k]);
          act[k] = ig;
          act[H + k] = fg;
          act[2 * H + k] = gg;
          act[3 * H + k] = og;
          cell[k] = (cprev ? fg * cprev[k] : 0.0) + ig * gg;
          h[k] = og * std::tanh(cell[k]);
        }
      } else {
        for (std::size_t k = 0; k < H; ++k) {
          act[k] = std::tanh(z[k]);
          h[k] = act[k];
        }
      }
    }
    // Dropout acts on what the next stage sees, not on the recurrence.
    if (!L.mask.empty()) {
      Vec& dropped = dropped_outputs[static_cast<std::size_t>(l)];
      dropped = L.h;
      for (int t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < H; ++k) dropped[static_cast<std::size_t>(t) * H + k] *= L.mask[k];
      }
      below = &dropped;
    } else {
      below = &L.h;
    }
    in_dim = H;
  }

  const auto D = static_cast<std::size_t>(arch.embedding_dim);
  Vec e(D);
  const double* P = w + off.projW;
  const double* pb = w + off.projb;
  const double* top = T > 0 ? below->data() + static_cast<std::size_t>(T - 1) * H : nullptr;
  for (std::size_t r = 0; r < D; ++r) {
    double s = pb[r];
    if (top) {
      for (std::size_t c = 0; c < H; ++c) s += P[r * H + c] * top[c];
    }
    e[r] = s;
  }
  return e;
}

inline std::vector<Vec> encode_batch(const ModelParams& params, std::span<const FeatureSequence> xs) {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(encode(params, x));
  return out;
}

/// Accumulates dLoss/dparams into grads given dLoss/dembedding for a traced
/// forward pass. Padded rows were never visited, so they receive nothing.
inline void backward(const ModelParams& params, const ForwardTrace& tr, const Vec& d_embed, Vec& grads) {
  const EncoderArch& arch = params.arch;
  const detail::Offsets off(arch);
  const double* w = params.values.data();
  double* g = grads.data();
  const int T = tr.steps;
  const auto H = static_cast<std::size_t>(arch.hidden_dim);
  const auto G = static_cast<std::size_t>(arch.gates());
  const auto GH = G * H;
  const auto D = static_cast<std::size_t>(arch.embedding_dim);
  const bool lstm = arch.cell == CellType::lstm;

  for (std::size_t r = 0; r < D; ++r) g[off.projb + r] += d_embed[r];
  if (T == 0) return;

  const int top_l = arch.num_layers - 1;
  // Output of layer l as seen by its consumer (masked when dropout is on).
  auto output_at = [&](int l, int t, std::size_t k) {
    const auto& L = tr.layers[static_cast<std::size_t>(l)];
    const double v = L.h[static_cast<std::size_t>(t) * H + k];
    return L.mask.empty() ? v : v * L.mask[k];
  };

  // dLoss/d(consumer-visible output of the current layer), T x H.
  Vec d_out(static_cast<std::size_t>(T) * H, 0.0);
  for (std::size_t c = 0; c < H; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < D; ++r) {
      s += w[off.projW + r * H + c] * d_embed[r];
      g[off.projW + r * H + c] += d_embed[r] * output_at(top_l, T - 1, c);
    }
    d_out[static_cast<std::size_t>(T - 1) * H + c] = s;
  }

  Vec dz(GH);
  Vec dh(H);
  Vec dh_next(H);
  Vec dc_next(H);
  for (int l = top_l; l >= 0; --l) {
    const auto& L = tr.layers[static_cast<std::size_t>(l)];
    const auto& lv = off.layers[static_cast<std::size_t>(l)];
    const std::size_t in_dim = static_cast<std::size_t>(arch.layer_input(l));
    const double* W = w + lv.W;
    const double* U = w + lv.U;
    double* gW = g + lv.W;
    double* gU = g + lv.U;
    double* gb = g + lv.b;
    Vec d_in(static_cast<std::size_t>(T) * in_dim, 0.0);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (int t = T - 1; t >= 0; --t) {
      const auto ts = static_cast<std::size_t>(t);
      const double* act = L.act.data() + ts * GH;
      for (std::size_t k = 0; k < H; ++k) {
        double v = d_out[ts * H + k];
        if (!L.mask.empty()) v *= L.mask[k];
        dh[k] = v + dh_next[k];
      }
      if (lstm) {
        const double* cell = L.cell.data() + ts * H;
        const double* cprev = t > 0 ? L.cell.data() + (ts - 1) * H : nullptr;
        for (std::size_t k = 0; k < H; ++k) {
          const double ig = act[k], fg = act[H + k], gg = act[2 * H + k], og = act[3 * H + k];
          const double tc = std::tanh(cell[k]);
          const double dc = dc_next[k] + dh[k] * og * (1.0 - tc * tc);
          dz[k] = dc * gg * ig * (1.0 - ig);
          dz[H + k] = cprev ? dc * cprev[k] * fg * (1.0 - fg) : 0.0;
          dz[2 * H + k] = dc * ig * (1.0 - gg * gg);
          dz[3 * H + k] = dh[k] * tc * og * (1.0 - og);
          dc_next[k] = dc * fg;
        }
      } else {
        for (std::size_t k = 0; k < H; ++k) dz[k] = dh[k] * (1.0 - act[k] * act[k]);
      }
      const double* xin;
      Vec masked_in;
      if (l == 0) {
        xin = tr.input.data() + ts * in_dim;
      } else {
        masked_in.resize(in_dim);
        for (std::size_t c = 0; c < in_dim; ++c) masked_in[c] = output_at(l - 1, t, c);
        xin = masked_in.data();
      }
      const double* hprev = t > 0 ? L.h.data() + (ts - 1) * H : nullptr;
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      double* dx = d_in.data() + ts * in_dim;
      for (std::size_t r = 0; r < GH; ++r) {
        const double d = dz[r];
        if (d == 0.0) continue;
        gb[r] += d;
        const double* wr = W + r * in_dim;
        double* gwr = gW + r * in_dim;
        for (std::size_t c = 0; c < in_dim; ++c) {
          gwr[c] += d * xin[c];
          dx[c] += d * wr[c];
        }
        if (hprev) {
          const double* ur = U + r * H;
          double* gur = gU + r * H;
          for (std::size_t c = 0; c < H; ++c) {
            gur[c] += d * hprev[c];
            dh_next[c] += d * ur[c];
          }
        }
      }
    }
    d_out.swap(d_in);
  }
}

}  // namespace setmargin

#endif  // SETMARGIN_ENCODER_HPP
