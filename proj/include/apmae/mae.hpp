#pragma once

// Masked autoencoder over lower-triangular attention-pattern patches.
//
// Encoder: [CLS] + embedded visible patches with fixed 2-D sin/cos positions.
// Decoder: one token per kept patch (projected latent for visible patches, a
// shared mask token otherwise) plus its own fixed positions; [CLS] is not
// passed to the decoder. Loss is the mean squared error over valid cells of
// masked patches only.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "apmae/checkpoint.hpp"
#include "apmae/errors.hpp"
#include "apmae/nn.hpp"
#include "apmae/pattern.hpp"
#include "apmae/rng.hpp"

namespace apmae {

struct TransformerShape {
  std::uint32_t layers = 0;
  std::uint32_t width = 0;
  std::uint32_t heads = 0;
  std::uint32_t mlp = 0;

  bool operator==(const TransformerShape&) const = default;
};

struct MAEConfig {
  std::uint32_t pattern_size = 256;
  std::uint32_t patch_size = 32;
  double mask_ratio = 0.5;
  TransformerShape encoder{24, 512, 16, 2048};
  TransformerShape decoder{8, 512, 8, 2048};
  std::uint32_t batch_size = 480;
  double base_lr = 1.5e-4;       // per batch of 50
  double global_lr = 0.0;        // 0: derive from base_lr and batch_size
  double weight_decay = 0.05;
  double warmup_fraction = 0.05;
  double min_lr = 0.0;
  double grad_clip = 0.0;        // 0 disables clipping
  std::uint64_t total_batches = 150000;
  std::uint64_t seed = 0;
  double scale_eps = kDefaultScaleEps;
  bool log_scaling = true;       // false only for the scaling ablation
  bool correct_only = true;
  std::uint64_t eval_seed = 0x5EEDu;

  /// Full-size architecture and optimiser settings.
  static MAEConfig full() { return MAEConfig{}; }

  /// Desk-scale preset.
  static MAEConfig desk() {
    MAEConfig c;
    c.pattern_size = 64;
    c.patch_size = 16;
    c.encoder = {4, 64, 4, 256};
    c.decoder = {2, 64, 4, 256};
    c.batch_size = 64;
    c.base_lr = 1.5e-3;
    c.total_batches = 3000;
    return c;
  }

  std::uint32_t grid() const { return patch_size ? pattern_size / patch_size : 0; }
  std::size_t patch_count() const { return kept_patch_count(grid()); }
  std::size_t patch_cells() const { return static_cast<std::size_t>(patch_size) * patch_size; }
  std::size_t masked_patches() const { return masked_count(patch_count(), mask_ratio); }

  /// Learning rate scaled linearly from the per-50 base rate.
  double learning_rate() const {
    return global_lr > 0.0 ? global_lr : base_lr * static_cast<double>(batch_size) / 50.0;
  }

  void validate() const {
    if (patch_size == 0 || pattern_size % patch_size != 0) throw ConfigError("patch_size must divide pattern_size");
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in [0,1)");
    for (const auto* s : {&encoder, &decoder}) {
      if (s->layers == 0 || s->width == 0 || s->heads == 0 || s->mlp == 0) throw ConfigError("empty transformer shape");
      if (s->width % s->heads != 0) {
        throw ConfigError("width " + std::to_string(s->width) + " not divisible by " + std::to_string(s->heads) +
                          " heads");
      }
      if (s->width % 4 != 0) throw ConfigError("width must be divisible by 4 for 2-D sin/cos positions");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(scale_eps > 0.0)) throw ConfigError("scale_eps must be positive");
  }

  bool operator==(const MAEConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TransformerShape& s) {
  j = {{"layers", s.layers}, {"width", s.width}, {"heads", s.heads}, {"mlp", s.mlp}};
}
inline void from_json(const nlohmann::json& j, TransformerShape& s) {
  j.at("layers").get_to(s.layers);
  j.at("width").get_to(s.width);
  j.at("heads").get_to(s.heads);
  j.at("mlp").get_to(s.mlp);
}

inline void to_json(nlohmann::json& j, const MAEConfig& c) {
  j = {{"pattern_size", c.pattern_size}, {"patch_size", c.patch_size},   {"mask_ratio", c.mask_ratio},
       {"encoder", c.encoder},           {"decoder", c.decoder},         {"batch_size", c.batch_size},
       {"base_lr", c.base_lr},           {"global_lr", c.global_lr},     {"weight_decay", c.weight_decay},
       {"warmup_fraction", c.warmup_fraction}, {"min_lr", c.min_lr},     {"grad_clip", c.grad_clip},
       {"total_batches", c.total_batches}, {"seed", c.seed},             {"scale_eps", c.scale_eps},
       {"log_scaling", c.log_scaling},   {"correct_only", c.correct_only}, {"eval_seed", c.eval_seed}};
}
inline void from_json(const nlohmann::json& j, MAEConfig& c) {
  j.at("pattern_size").get_to(c.pattern_size);
  j.at("patch_size").get_to(c.patch_size);
  j.at("mask_ratio").get_to(c.mask_ratio);
  j.at("encoder").get_to(c.encoder);
  j.at("decoder").get_to(c.decoder);
  j.at("batch_size").get_to(c.batch_size);
  j.at("base_lr").get_to(c.base_lr);
  j.at("global_lr").get_to(c.global_lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("warmup_fraction").get_to(c.warmup_fraction);
  j.at("min_lr").get_to(c.min_lr);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("total_batches").get_to(c.total_batches);
  j.at("seed").get_to(c.seed);
  j.at("scale_eps").get_to(c.scale_eps);
  j.at("log_scaling").get_to(c.log_scaling);
  j.at("correct_only").get_to(c.correct_only);
  j.at("eval_seed").get_to(c.eval_seed);
}

/// Standard 2-D sin/cos table: the first half of each row encodes the patch
/// row, the second half the patch column, each as [sin(p*w_k), cos(p*w_k)]
/// with w_k = 10000^(-k / (width/4)).
template <typename T>
nn::Matrix<T> sincos_2d(std::span<const PatchIndex> positions, std::uint32_t width) {
  const std::uint32_t quarter = width / 4;
  nn::Matrix<T> out(static_cast<nn::Index>(positions.size()), width);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    const double coords[2] = {static_cast<double>(positions[p].row), static_cast<double>(positions[p].col)};
    for (int axis = 0; axis < 2; ++axis) {
      for (std::uint32_t k = 0; k < quarter; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
        const auto base = static_cast<nn::Index>(axis * 2 * quarter);
        out(static_cast<nn::Index>(p), base + k) = static_cast<T>(std::sin(coords[axis] * omega));
        out(static_cast<nn::Index>(p), base + quarter + k) = static_cast<T>(std::cos(coords[axis] * omega));
      }
    }
  }
  return out;
}

/// Model output for one sample of a batch.
struct Reconstruction {
  std::vector<float> predicted;  // every patch, patch_count * patch_cells
  std::vector<float> composite;  // original visible patches, predicted masked patches
  double loss = 0.0;             // masked valid-cell MSE of this sample
};

template <typename T>
class MaskedAutoencoder {
 public:
  using Matrix = nn::Matrix<T>;

  MaskedAutoencoder(const MAEConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const auto& enc = config_.encoder;
    const auto& dec = config_.decoder;
    const auto cells = static_cast<nn::Index>(config_.patch_cells());
    const auto positions = lower_patch_grid(config_.grid());

    patch_embed_.init(params_, "patch_embed", cells, enc.width, true, rng);
    cls_ = params_.add("cls_token", 1, enc.width, false);
    params_.fill_truncated_normal(cls_, rng, nn::kInitStd);
    enc_pos_ = params_.add("encoder_pos", static_cast<nn::Index>(positions.size()), enc.width, false, false);
    params_.value(enc_pos_) = sincos_2d<T>(positions, enc.width);
    encoder_.init(params_, "encoder", enc.layers, enc.width, enc.heads, enc.mlp, false, rng);

    decoder_embed_.init(params_, "decoder_embed", enc.width, dec.width, true, rng);
    mask_token_ = params_.add("mask_token", 1, dec.width, false);
    params_.fill_truncated_normal(mask_token_, rng, nn::kInitStd);
    dec_pos_ = params_.add("decoder_pos", static_cast<nn::Index>(positions.size()), dec.width, false, false);
    params_.value(dec_pos_) = sincos_2d<T>(positions, dec.width);
    decoder_.init(params_, "decoder", dec.layers, dec.width, dec.heads, dec.mlp, false, rng);
    decoder_pred_.init(params_, "decoder_pred", dec.width, cells, true, rng);
  }

  const MAEConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  /// Turns a raw or pre-scaled pattern into the PatchSet the model consumes.
  PatchSet tensorize(const AttentionPattern& p) const {
    if (p.size != config_.pattern_size) {
      throw ContractError("pattern size " + std::to_string(p.size) + " does not match model pattern size " +
                          std::to_string(config_.pattern_size));
    }
    if (config_.log_scaling && !p.meta.scaled) return patchify(scaled_copy(p, config_.scale_eps), config_.patch_size);
    return patchify(p, config_.patch_size);
  }

  /// Masked reconstruction loss for a batch. Accumulates parameter gradients
  /// (after zeroing them) when `compute_grad` is set. Per-sample outputs are
  /// written to `recon` when non-null.
  T forward_train(std::span<const PatchSet> batch, std::span<const MaskSelection> masks, bool compute_grad,
                  std::vector<Reconstruction>* recon = nullptr) {
    check_batch(batch, masks);
    const auto B = static_cast<nn::Index>(batch.size());
    const auto K = static_cast<nn::Index>(config_.patch_count());
    const auto V = static_cast<nn::Index>(masks[0].visible.size());
    const auto P = static_cast<nn::Index>(config_.patch_cells());
    const auto De = static_cast<nn::Index>(config_.encoder.width);
    const auto Dd = static_cast<nn::Index>(config_.decoder.width);
    const nn::Index Se = 1 + V;

    // Patch embedding of visible patches.
    Matrix x_vis(B * V, P);
    for (nn::Index b = 0; b < B; ++b)
      for (nn::Index v = 0; v < V; ++v) {
        const auto src = batch[static_cast<std::size_t>(b)].patch(masks[static_cast<std::size_t>(b)].visible[static_cast<std::size_t>(v)]);
        for (nn::Index c = 0; c < P; ++c) x_vis(b * V + v, c) = static_cast<T>(src[static_cast<std::size_t>(c)]);
      }
    Matrix emb;
    patch_embed_.forward(params_, x_vis, emb);

    Matrix e0(B * Se, De);
    const auto enc_pos = params_.value(enc_pos_);
    for (nn::Index b = 0; b < B; ++b) {
      e0.row(b * Se) = params_.value(cls_).row(0);
      for (nn::Index v = 0; v < V; ++v) {
        const auto k = static_cast<nn::Index>(masks[static_cast<std::size_t>(b)].visible[static_cast<std::size_t>(v)]);
        e0.row(b * Se + 1 + v) = emb.row(b * V + v) + enc_pos.row(k);
      }
    }
    typename nn::Stack<T>::Cache enc_cache;
    Matrix latent;
    encoder_.forward(params_, e0, B, Se, latent, enc_cache);

    Matrix dlat;
    decoder_embed_.forward(params_, latent, dlat);

    // Decoder input: one token per kept patch.
    Matrix d0(B * K, Dd);
    const auto dec_pos = params_.value(dec_pos_);
    std::vector<nn::Index> source(static_cast<std::size_t>(B * K), -1);  // row in dlat, -1 for mask token
    for (nn::Index b = 0; b < B; ++b) {
      for (nn::Index k = 0; k < K; ++k) d0.row(b * K + k) = params_.value(mask_token_).row(0);
      for (nn::Index v = 0; v < V; ++v) {
        const auto k = static_cast<nn::Index>(masks[static_cast<std::size_t>(b)].visible[static_cast<std::size_t>(v)]);
        d0.row(b * K + k) = dlat.row(b * Se + 1 + v);
        source[static_cast<std::size_t>(b * K + k)] = b * Se + 1 + v;
      }
      for (nn::Index k = 0; k < K; ++k) d0.row(b * K + k) += dec_pos.row(k);
    }
    typename nn::Stack<T>::Cache dec_cache;
    Matrix dout;
    decoder_.forward(params_, d0, B, K, dout, dec_cache);
    Matrix pred;
    decoder_pred_.forward(params_, dout, pred);

    // Loss over masked patches' valid cells.
    double total_sq = 0.0;
    std::size_t total_cells = 0;
    std::vector<double> sample_sq(static_cast<std::size_t>(B), 0.0);
    std::vector<std::size_t> sample_cells(static_cast<std::size_t>(B), 0);
    Matrix dpred = Matrix::Zero(B * K, P);
    for (nn::Index b = 0; b < B; ++b) {
      const auto& ps = batch[static_cast<std::size_t>(b)];
      for (const auto k : masks[static_cast<std::size_t>(b)].masked) {
        const auto target = ps.patch(k);
        const auto valid = ps.validity(k);
        const nn::Index row = b * K + static_cast<nn::Index>(k);
        for (nn::Index c = 0; c < P; ++c) {
          if (!valid[static_cast<std::size_t>(c)]) continue;
          const double diff = static_cast<double>(pred(row, c)) - target[static_cast<std::size_t>(c)];
          sample_sq[static_cast<std::size_t>(b)] += diff * diff;
          ++sample_cells[static_cast<std::size_t>(b)];
          dpred(row, c) = static_cast<T>(diff);
        }
      }
      total_sq += sample_sq[static_cast<std::size_t>(b)];
      total_cells += sample_cells[static_cast<std::size_t>(b)];
    }
    const T loss = total_cells ? static_cast<T>(total_sq / static_cast<double>(total_cells)) : T(0);

    if (recon) {
      recon->assign(static_cast<std::size_t>(B), {});
      for (nn::Index b = 0; b < B; ++b) {
        auto& r = (*recon)[static_cast<std::size_t>(b)];
        const auto& ps = batch[static_cast<std::size_t>(b)];
        r.predicted.resize(static_cast<std::size_t>(K * P));
        for (nn::Index k = 0; k < K; ++k)
          for (nn::Index c = 0; c < P; ++c) r.predicted[static_cast<std::size_t>(k * P + c)] = static_cast<float>(pred(b * K + k, c));
        r.composite = ps.values;
        for (const auto k : masks[static_cast<std::size_t>(b)].masked)
          for (nn::Index c = 0; c < P; ++c) {
            const auto idx = static_cast<std::size_t>(k) * static_cast<std::size_t>(P) + static_cast<std::size_t>(c);
            r.composite[idx] = ps.valid[idx] ? r.predicted[idx] : 0.0f;
          }
        const auto cells = sample_cells[static_cast<std::size_t>(b)];
        r.loss = cells ? sample_sq[static_cast<std::size_t>(b)] / static_cast<double>(cells) : 0.0;
      }
    }

    if (!compute_grad) return loss;

    params_.zero_grad();
    if (total_cells == 0) return loss;
    dpred *= static_cast<T>(2.0 / static_cast<double>(total_cells));
    Matrix g_dout;
    decoder_pred_.backward(params_, dout, dpred, &g_dout);
    Matrix g_d0;
    decoder_.backward(params_, g_dout, dec_cache, g_d0);
    Matrix g_dlat = Matrix::Zero(dlat.rows(), dlat.cols());
    auto mask_grad = params_.grad(mask_token_);
    for (nn::Index r = 0; r < B * K; ++r) {
      const auto src = source[static_cast<std::size_t>(r)];
      if (src < 0) {
        mask_grad.row(0) += g_d0.row(r);
      } else {
        g_dlat.row(src) += g_d0.row(r);
      }
    }
    Matrix g_latent;
    decoder_embed_.backward(params_, latent, g_dlat, &g_latent);
    Matrix g_e0;
    encoder_.backward(params_, g_latent, enc_cache, g_e0);
    Matrix g_emb(B * V, De);
    auto cls_grad = params_.grad(cls_);
    for (nn::Index b = 0; b < B; ++b) {
      cls_grad.row(0) += g_e0.row(b * Se);
      for (nn::Index v = 0; v < V; ++v) g_emb.row(b * V + v) = g_e0.row(b * Se + 1 + v);
    }
    patch_embed_.backward(params_, x_vis, g_emb, nullptr);
    return loss;
  }

  /// Encoder output at the [CLS] position with every patch visible.
  std::vector<T> embed(const PatchSet& ps) const {
    const std::vector<PatchSet> one{ps};
    return embed_batch(one).front();
  }

  std::vector<std::vector<T>> embed_batch(std::span<const PatchSet> batch) const {
    for (const auto& ps : batch) check_patchset(ps);
    const auto B = static_cast<nn::Index>(batch.size());
    const auto K = static_cast<nn::Index>(config_.patch_count());
    const auto P = static_cast<nn::Index>(config_.patch_cells());
    const auto De = static_cast<nn::Index>(config_.encoder.width);
    const nn::Index Se = 1 + K;
    Matrix x(B * K, P);
    for (nn::Index b = 0; b < B; ++b)
      for (nn::Index k = 0; k < K; ++k) {
        const auto src = batch[static_cast<std::size_t>(b)].patch(static_cast<std::size_t>(k));
        for (nn::Index c = 0; c < P; ++c) x(b * K + k, c) = static_cast<T>(src[static_cast<std::size_t>(c)]);
      }
    Matrix emb;
    patch_embed_.forward(params_, x, emb);
    Matrix e0(B * Se, De);
    const auto enc_pos = params_.value(enc_pos_);
    for (nn::Index b = 0; b < B; ++b) {
      e0.row(b * Se) = params_.value(cls_).row(0);
      for (nn::Index k = 0; k < K; ++k) e0.row(b * Se + 1 + k) = emb.row(b * K + k) + enc_pos.row(k);
    }
    typename nn::Stack<T>::Cache cache;
    Matrix latent;
    encoder_.forward(params_, e0, B, Se, latent, cache);
    std::vector<std::vector<T>> out(static_cast<std::size_t>(B));
    for (nn::Index b = 0; b < B; ++b) {
      out[static_cast<std::size_t>(b)].assign(latent.row(b * Se).data(), latent.row(b * Se).data() + De);
    }
    return out;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.kind = "mae";
    ck.config = config_;
    ck.steps = steps_;
    ck.tensors = export_tensors(params_);
    return ck;
  }

  static MaskedAutoencoder from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "mae") throw FormatError("checkpoint kind '" + ck.kind + "' is not an autoencoder");
    MaskedAutoencoder model(ck.config.get<MAEConfig>(), 0);
    import_tensors(model.params_, ck.tensors);
    model.steps_ = ck.steps;
    return model;
  }

 private:
  void check_patchset(const PatchSet& ps) const {
    if (ps.pattern_size != config_.pattern_size || ps.patch_size != config_.patch_size) {
      throw ContractError("patch set geometry does not match the model configuration");
    }
    if (config_.log_scaling && !ps.scaled) throw ContractError("model expects log-scaled input but received raw values");
  }

  void check_batch(std::span<const PatchSet> batch, std::span<const MaskSelection> masks) const {
    if (batch.empty() || batch.size() != masks.size()) throw ContractError("batch and mask counts differ or are empty");
    for (const auto& ps : batch) check_patchset(ps);
    const auto visible = masks[0].visible.size();
    for (const auto& m : masks) {
      if (m.visible.size() != visible) throw ContractError("every sample in a batch must keep the same number of patches");
      if (m.masked.size() + m.visible.size() != config_.patch_count()) throw ContractError("mask does not cover the patch grid");
    }
  }

  MAEConfig config_;
  nn::ParamStore<T> params_;
  nn::Linear<T> patch_embed_;
  std::size_t cls_ = 0;
  std::size_t enc_pos_ = 0;
  nn::Stack<T> encoder_;
  nn::Linear<T> decoder_embed_;
  std::size_t mask_token_ = 0;
  std::size_t dec_pos_ = 0;
  nn::Stack<T> decoder_;
  nn::Linear<T> decoder_pred_;
  std::uint64_t steps_ = 0;
};

using Mae = MaskedAutoencoder<float>;

inline void save_mae(const Mae& model, const std::filesystem::path& path) { save_checkpoint(model.to_checkpoint(), path); }
inline Mae load_mae(const std::filesystem::path& path) { return Mae::from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Training

struct LossPoint {
  std::uint64_t batch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

inline std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::ostringstream out;
  out << "batch,loss,lr\n";
  out.precision(9);
  for (const auto& p : curve) out << p.batch << ',' << p.loss << ',' << p.lr << '\n';
  return out.str();
}

/// Indices of records admitted to training.
inline std::vector<std::size_t> admitted_records(std::span<const AttentionPattern> data, bool correct_only) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!correct_only || data[i].meta.correct.value_or(false)) keep.push_back(i);
  return keep;
}

/// AdamW with warmup + cosine annealing. Batch order and masks derive from
/// config.seed only, so a rerun reproduces the same parameters bit for bit.
inline std::vector<LossPoint> train_mae(Mae& model, std::span<const AttentionPattern> data,
                                        const std::function<void(const LossPoint&)>& on_batch = {}) {
  const MAEConfig& cfg = model.config();
  const auto admitted = admitted_records(data, cfg.correct_only);
  if (admitted.empty()) throw ContractError("no admissible training records");
  nn::AdamW<float> opt(cfg.weight_decay);
  Rng order_rng(Rng::mix(cfg.seed, 1));
  std::vector<std::size_t> order = admitted;
  std::size_t cursor = order.size();
  std::vector<LossPoint> curve;
  curve.reserve(cfg.total_batches);
  std::vector<PatchSet> batch;
  std::vector<MaskSelection> masks;
  std::uint64_t sample_counter = 0;
  for (std::uint64_t t = 0; t < cfg.total_batches; ++t) {
    batch.clear();
    masks.clear();
    for (std::uint32_t i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        order_rng.shuffle(order.begin(), order.end());
        cursor = 0;
      }
      batch.push_back(model.tensorize(data[order[cursor++]]));
      masks.push_back(select_mask(batch.back(), cfg.mask_ratio, Rng::mix(cfg.seed, 1000 + sample_counter++)));
    }
    const float loss = model.forward_train(batch, masks, true);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at batch " + std::to_string(t));
    if (cfg.grad_clip > 0.0) nn::clip_grad_norm(model.params(), cfg.grad_clip);
    const double lr = nn::cosine_lr(t, cfg.total_batches, cfg.learning_rate(), cfg.warmup_fraction, cfg.min_lr);
    opt.step(model.params(), lr);
    model.set_steps(model.steps() + 1);
    LossPoint point{t, loss, lr};
    curve.push_back(point);
    if (on_batch) on_batch(point);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
  std::vector<double> per_sample;
};

/// Masked loss of every pattern with masks seeded by (eval_seed, index).
inline EvalReport evaluate_mae(Mae& model, std::span<const AttentionPattern> data, std::size_t batch_size = 64) {
  const MAEConfig& cfg = model.config();
  EvalReport report;
  std::vector<PatchSet> batch;
  std::vector<MaskSelection> masks;
  std::vector<Reconstruction> recon;
  auto flush = [&] {
    if (batch.empty()) return;
    model.forward_train(batch, masks, false, &recon);
    for (const auto& r : recon) report.per_sample.push_back(r.loss);
    batch.clear();
    masks.clear();
  };
  for (std::size_t i = 0; i < data.size(); ++i) {
    batch.push_back(model.tensorize(data[i]));
    masks.push_back(select_mask(batch.back(), cfg.mask_ratio, Rng::mix(cfg.eval_seed, i)));
    if (batch.size() == batch_size) flush();
  }
  flush();
  report.count = report.per_sample.size();
  if (report.count == 0) return report;
  report.mean = std::accumulate(report.per_sample.begin(), report.per_sample.end(), 0.0) / static_cast<double>(report.count);
  if (report.count > 1) {
    double ss = 0.0;
    for (double v : report.per_sample) ss += (v - report.mean) * (v - report.mean);
    report.stddev = std::sqrt(ss / static_cast<double>(report.count - 1));
  }
  return report;
}

struct CrossEvalReport {
  std::vector<std::string> trained;    // row ids
  std::vector<std::string> evaluated;  // column ids
  std::vector<std::vector<EvalReport>> cells;

  const EvalReport& at(const std::string& trained_on, const std::string& evaluated_on) const {
    const auto r = std::find(trained.begin(), trained.end(), trained_on) - trained.begin();
    const auto c = std::find(evaluated.begin(), evaluated.end(), evaluated_on) - evaluated.begin();
    if (r == static_cast<std::ptrdiff_t>(trained.size()) || c == static_cast<std::ptrdiff_t>(evaluated.size()))
      throw ContractError("no cross-evaluation cell for " + trained_on + "/" + evaluated_on);
    return cells[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
};

/// Every model evaluated on every dataset. Each model id must have a dataset.
inline CrossEvalReport cross_evaluate(std::map<std::string, Mae*> models,
                                      const std::map<std::string, std::vector<AttentionPattern>>& datasets) {
  CrossEvalReport report;
  for (const auto& [id, model] : models) {
    if (!datasets.count(id)) throw ContractError("missing dataset for model id " + id);
  }
  for (const auto& [id, data] : datasets) report.evaluated.push_back(id);
  for (const auto& [id, model] : models) {
    report.trained.push_back(id);
    auto& row = report.cells.emplace_back();
    for (const auto& [eid, data] : datasets) {
      if (!data.empty() && data.front().size != model->config().pattern_size)
        throw ContractError("dataset " + eid + " has a different pattern size");
      row.push_back(evaluate_mae(*model, data));
    }
  }
  return report;
}

/// Loss table in units of 1e-3 with the standard deviation in parentheses.
inline std::string render_cross_eval(const CrossEvalReport& report) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 1e3);
    return std::string(buf);
  };
  std::ostringstream out;
  out << "Trained \\ Evaluated";
  for (const auto& e : report.evaluated) out << " | " << e << " Loss (x10^-3)";
  out << '\n';
  for (std::size_t r = 0; r < report.trained.size(); ++r) {
    out << report.trained[r];
    for (const auto& cell : report.cells[r]) out << " | " << fmt(cell.mean) << " (" << fmt(cell.stddev) << ")";
    out << '\n';
  }
  return out.str();
}

inline std::string cross_eval_csv(const CrossEvalReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "trained,evaluated,mean,stddev,count\n";
  for (std::size_t r = 0; r < report.trained.size(); ++r)
    for (std::size_t c = 0; c < report.evaluated.size(); ++c) {
      const auto& cell = report.cells[r][c];
      out << report.trained[r] << ',' << report.evaluated[c] << ',' << cell.mean << ',' << cell.stddev << ','
          << cell.count << '\n';
    }
  return out.str();
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::string worst_tensor;
  std::size_t checked = 0;
  double gradient_norm = 0.0;

  bool operator==(const GradCheckReport&) const = default;
};

/// Random softmax-normalised patterns, usable as raw attention.
inline AttentionPattern random_attention(std::uint32_t n, Rng& rng, double temperature = 2.0) {
  AttentionPattern p;
  p.model_id = "random";
  p.size = n;
  p.values.resize(AttentionPattern::cell_count(n));
  std::vector<double> row;
  for (std::uint32_t i = 0; i < n; ++i) {
    row.resize(i + 1);
    double sum = 0.0;
    for (auto& v : row) sum += (v = std::exp(temperature * rng.normal()));
    for (std::uint32_t j = 0; j <= i; ++j) p.at(i, j) = static_cast<float>(row[j] / sum);
  }
  p.meta.correct = true;
  return p;
}

/// Compares reverse-mode gradients of the masked loss with central finite
/// differences in double precision on `coordinates` random trainable
/// parameters. Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport grad_check(const MAEConfig& tiny, std::uint64_t seed, std::size_t coordinates = 256,
                                  double step = 1e-3) {
  if (tiny.encoder.layers > 2 || tiny.decoder.layers > 2 || tiny.encoder.width > 16 || tiny.decoder.width > 16)
    throw ConfigError("grad_check expects a tiny configuration (<= 2 layers, width <= 16)");
  MaskedAutoencoder<double> model(tiny, seed);
  Rng rng(Rng::mix(seed, 77));
  std::vector<PatchSet> batch;
  std::vector<MaskSelection> masks;
  for (int b = 0; b < 3; ++b) {
    batch.push_back(model.tensorize(random_attention(tiny.pattern_size, rng)));
    masks.push_back(select_mask(batch.back(), tiny.mask_ratio, rng.next_u64()));
  }
  model.forward_train(batch, masks, true);
  auto& ps = model.params();
  const std::vector<double> analytic(ps.grads().begin(), ps.grads().end());
  GradCheckReport report;
  for (double g : analytic) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
    report.gradient_norm += g * g;
  }
  report.gradient_norm = std::sqrt(report.gradient_norm);

  std::vector<std::size_t> candidates;
  for (const auto& info : ps.tensors()) {
    if (!info.trainable) continue;
    for (std::size_t i = 0; i < static_cast<std::size_t>(info.rows * info.cols); ++i) candidates.push_back(info.offset + i);
  }
  rng.shuffle(candidates.begin(), candidates.end());
  candidates.resize(std::min(coordinates, candidates.size()));
  std::sort(candidates.begin(), candidates.end());

  auto values = ps.values();
  for (const auto coord : candidates) {
    const double original = values[coord];
    values[coord] = original + step;
    const double up = model.forward_train(batch, masks, false);
    values[coord] = original - step;
    const double down = model.forward_train(batch, masks, false);
    values[coord] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[coord];
    if (!std::isfinite(numeric)) {
      throw NumericalError("non-finite finite difference at " + ps.owner(coord).name + "[" +
                           std::to_string(coord - ps.owner(coord).offset) + "]");
    }
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    if (report.checked == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_coordinate = coord;
      report.worst_tensor = ps.owner(coord).name;
    }
    ++report.checked;
  }
  return report;
}

/// Tiny configuration used by the gradient check.
inline MAEConfig tiny_mae_config() {
  MAEConfig c;
  c.pattern_size = 8;
  c.patch_size = 4;
  c.mask_ratio = 0.34;
  c.encoder = {2, 8, 2, 16};
  c.decoder = {1, 8, 2, 16};
  c.batch_size = 3;
  return c;
}

}  // namespace apmae
