#pragma once

// Small decoder-only language model over byte-level ids. It trains on FIM
// sequences (stream, then the ground truth, then EOS), predicts the first
// middle token greedily, exposes every head's attention matrix, and can zero
// chosen heads at inference time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "apmae/checkpoint.hpp"
#include "apmae/errors.hpp"
#include "apmae/mae.hpp"
#include "apmae/nn.hpp"
#include "apmae/pattern.hpp"
#include "apmae/rng.hpp"
#include "apmae/tasks.hpp"

namespace apmae {

struct LMConfig {
  std::uint32_t vocab_size = static_cast<std::uint32_t>(Vocab::kSize);
  std::uint32_t layers = 4;
  std::uint32_t heads = 4;
  std::uint32_t width = 128;
  std::uint32_t mlp = 512;
  std::uint32_t context_len = 256;
  std::uint32_t max_middle = 15;  // ground-truth ids kept in training sequences
  std::uint32_t batch_size = 32;
  std::uint64_t steps = 2000;
  double lr = 2e-3;
  double min_lr = 1e-4;
  double weight_decay = 0.1;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;

  static LMConfig desk() {
    LMConfig c;
    c.context_len = 64;
    c.batch_size = 16;
    c.steps = 1500;
    return c;
  }

  std::uint32_t sequence_len() const { return context_len + max_middle + 1; }

  void validate() const {
    if (layers == 0 || heads == 0 || width == 0 || mlp == 0) throw ConfigError("empty language model shape");
    if (width % heads != 0) {
      throw ConfigError("width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
    }
    if (vocab_size != Vocab::kSize) throw ConfigError("vocab_size must equal the byte vocabulary size");
    if (context_len < 4) throw ConfigError("context_len must be at least 4");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0,1)");
  }

  bool operator==(const LMConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const LMConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"layers", c.layers},     {"heads", c.heads},
       {"width", c.width},           {"mlp", c.mlp},           {"context_len", c.context_len},
       {"max_middle", c.max_middle}, {"batch_size", c.batch_size}, {"steps", c.steps},
       {"lr", c.lr},                 {"min_lr", c.min_lr},     {"weight_decay", c.weight_decay},
       {"warmup_fraction", c.warmup_fraction}, {"grad_clip", c.grad_clip},
       {"holdout_fraction", c.holdout_fraction}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, LMConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("width").get_to(c.width);
  j.at("mlp").get_to(c.mlp);
  j.at("context_len").get_to(c.context_len);
  j.at("max_middle").get_to(c.max_middle);
  j.at("batch_size").get_to(c.batch_size);
  j.at("steps").get_to(c.steps);
  j.at("lr").get_to(c.lr);
  j.at("min_lr").get_to(c.min_lr);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("warmup_fraction").get_to(c.warmup_fraction);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("holdout_fraction").get_to(c.holdout_fraction);
  j.at("seed").get_to(c.seed);
}

// ---------------------------------------------------------------------------
// Heads and head masks

struct HeadKey {
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  auto operator<=>(const HeadKey&) const = default;
};

inline std::string to_string(HeadKey k) { return std::to_string(k.layer) + ":" + std::to_string(k.head); }

/// Per-layer flags of zeroed heads, shaped layers x heads.
using HeadMask = std::vector<std::vector<std::uint8_t>>;

inline HeadMask make_head_mask(std::uint32_t layers, std::uint32_t heads, std::span<const HeadKey> keys) {
  HeadMask m(layers, std::vector<std::uint8_t>(heads, 0));
  for (const auto& k : keys) {
    if (k.layer >= layers || k.head >= heads) throw ContractError("head " + to_string(k) + " outside the model");
    m[k.layer][k.head] = 1;
  }
  return m;
}

/// Parses "layer:head" pairs separated by whitespace, commas or newlines.
/// Lines starting with '#' are comments.
inline std::vector<HeadKey> parse_head_list(std::string_view text) {
  std::vector<HeadKey> out;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ','; };
  while (i < text.size()) {
    if (is_sep(text[i])) {
      ++i;
      continue;
    }
    if (text[i] == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_sep(text[j])) ++j;
    const auto item = text.substr(i, j - i);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw FormatError("head entry '" + std::string(item) + "' is not layer:head", i);
    HeadKey k;
    k.layer = detail::parse_unsigned<std::uint32_t>(item.substr(0, colon), i, "layer");
    k.head = detail::parse_unsigned<std::uint32_t>(item.substr(colon + 1), i, "head");
    out.push_back(k);
    i = j;
  }
  return out;
}

inline std::string format_head_list(std::span<const HeadKey> keys) {
  std::string s;
  for (const auto& k : keys) s += to_string(k) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
class MiniLM {
 public:
  struct Cache {
    nn::Index batch = 0;
    nn::Index seq = 0;
    std::vector<TokenId> ids;
    typename nn::Stack<T>::Cache stack;
    nn::Matrix<T> hidden;  // final normalised states
  };

  MiniLM(const LMConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto V = static_cast<nn::Index>(cfg.vocab_size);
    const auto W = static_cast<nn::Index>(cfg.width);
    tok_ = params_.add("token_embed", V, W, false);
    params_.fill_truncated_normal(tok_, rng, nn::kInitStd);
    pos_ = params_.add("position_embed", cfg.sequence_len(), W, false);
    params_.fill_truncated_normal(pos_, rng, nn::kInitStd);
    stack_.init(params_, "blocks", cfg.layers, W, cfg.heads, cfg.mlp, true, rng);
    head_.init(params_, "lm_head", W, V, true, rng);
  }

  const LMConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  /// Logits for `batch` sequences of length `seq`, stacked row-wise in `ids`.
  nn::Matrix<T> forward(std::span<const TokenId> ids, nn::Index batch, nn::Index seq, Cache& c,
                        const HeadMask* mask = nullptr, bool skip_attention = false) const {
    if (static_cast<nn::Index>(ids.size()) != batch * seq) throw ContractError("id count does not match batch shape");
    if (seq > static_cast<nn::Index>(config_.sequence_len())) throw ContractError("sequence longer than the model");
    c.batch = batch;
    c.seq = seq;
    c.ids.assign(ids.begin(), ids.end());
    const auto W = static_cast<nn::Index>(config_.width);
    nn::Matrix<T> x(batch * seq, W);
    const auto tok = params_.value(tok_);
    const auto pos = params_.value(pos_);
    for (nn::Index b = 0; b < batch; ++b)
      for (nn::Index t = 0; t < seq; ++t) {
        const auto id = ids[static_cast<std::size_t>(b * seq + t)];
        if (id >= config_.vocab_size) throw ContractError("token id outside the vocabulary");
        x.row(b * seq + t) = tok.row(id) + pos.row(t);
      }
    stack_.forward(params_, x, batch, seq, c.hidden, c.stack, mask, skip_attention);
    nn::Matrix<T> logits;
    head_.forward(params_, c.hidden, logits);
    return logits;
  }

  /// Mean cross-entropy over positions whose target is not PAD; accumulates
  /// gradients when `compute_grad`.
  T loss(std::span<const TokenId> ids, nn::Index batch, nn::Index seq, bool compute_grad) {
    Cache c;
    nn::Matrix<T> logits = forward(ids, batch, seq, c);
    const auto V = logits.cols();
    nn::Matrix<T> dlogits = nn::Matrix<T>::Zero(logits.rows(), V);
    double total = 0.0;
    std::size_t count = 0;
    for (nn::Index b = 0; b < batch; ++b)
      for (nn::Index t = 0; t + 1 < seq; ++t) {
        const auto target = ids[static_cast<std::size_t>(b * seq + t + 1)];
        if (target == Vocab::kPad) continue;
        const nn::Index r = b * seq + t;
        const T mx = logits.row(r).maxCoeff();
        T sum = 0;
        for (nn::Index v = 0; v < V; ++v) sum += (dlogits(r, v) = std::exp(logits(r, v) - mx));
        total += static_cast<double>(std::log(sum) + mx - logits(r, target));
        dlogits.row(r) /= sum;
        dlogits(r, target) -= T(1);
        ++count;
      }
    if (count == 0) throw ContractError("batch has no supervised positions");
    const T mean = static_cast<T>(total / static_cast<double>(count));
    if (compute_grad) {
      params_.zero_grad();
      dlogits /= static_cast<T>(count);
      nn::Matrix<T> dh, dx;
      head_.backward(params_, c.hidden, dlogits, &dh);
      stack_.backward(params_, dh, c.stack, dx);
      auto gtok = params_.grad(tok_);
      auto gpos = params_.grad(pos_);
      for (nn::Index b = 0; b < batch; ++b)
        for (nn::Index t = 0; t < seq; ++t) {
          gtok.row(ids[static_cast<std::size_t>(b * seq + t)]) += dx.row(b * seq + t);
          gpos.row(t) += dx.row(b * seq + t);
        }
    }
    return mean;
  }

  /// Attention probabilities of (layer, head) for sequence b of a cached forward.
  auto attention(const Cache& c, std::uint32_t layer, std::uint32_t head, nn::Index b) const {
    return stack_.blocks.at(layer).attn.head_probs(c.stack.blocks.at(layer).attn_cache, b, head);
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.kind = "lm";
    ck.config = config_;
    ck.steps = steps_;
    ck.tensors = export_tensors(params_);
    return ck;
  }

  static MiniLM from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "lm") throw FormatError("checkpoint kind '" + ck.kind + "' is not a language model");
    MiniLM model(ck.config.get<LMConfig>(), 0);
    import_tensors(model.params_, ck.tensors);
    model.steps_ = ck.steps;
    return model;
  }

 private:
  LMConfig config_;
  nn::ParamStore<T> params_;
  std::size_t tok_ = 0;
  std::size_t pos_ = 0;
  nn::Stack<T> stack_;
  nn::Linear<T> head_;
  std::uint64_t steps_ = 0;
};

using Lm = MiniLM<float>;

inline void save_lm(const Lm& model, const std::filesystem::path& path) { save_checkpoint(model.to_checkpoint(), path); }
inline Lm load_lm(const std::filesystem::path& path) { return Lm::from_checkpoint(load_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Training

/// Stream, then up to max_middle ground-truth ids, then EOS when the whole
/// truth fit; padded to sequence_len.
inline std::vector<TokenId> training_sequence(const TaskInstance& inst, const LMConfig& cfg) {
  if (inst.stream.size() != cfg.context_len) throw ContractError("instance stream length differs from context_len");
  std::vector<TokenId> seq(inst.stream);
  const std::size_t keep = std::min<std::size_t>(inst.truth.size(), cfg.max_middle);
  seq.insert(seq.end(), inst.truth.begin(), inst.truth.begin() + static_cast<std::ptrdiff_t>(keep));
  if (keep == inst.truth.size()) seq.push_back(Vocab::kEos);
  seq.resize(cfg.sequence_len(), Vocab::kPad);
  return seq;
}

/// Held-out membership is decided per file so overlapping windows of one file
/// never straddle the split.
inline bool is_heldout(const TaskInstance& inst, const LMConfig& cfg) {
  if (!inst.file_id) return false;
  const auto h = Rng::mix(cfg.seed ^ 0x484F4C44ULL, *inst.file_id) % 1000000ULL;
  return static_cast<double>(h) < cfg.holdout_fraction * 1e6;
}

struct TaskAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct LMTrainReport {
  std::vector<LossPoint> curve;
  std::map<TaskKind, TaskAccuracy> heldout;
  std::size_t train_instances = 0;
  std::size_t heldout_instances = 0;
};

/// Greedy next-token prediction after FIM_MIDDLE for each stream.
inline std::vector<TokenId> predict_first(const Lm& model, std::span<const TaskInstance> instances,
                                          const HeadMask* mask = nullptr, std::size_t batch_size = 64) {
  const auto ctx = model.config().context_len;
  std::vector<TokenId> out(instances.size());
  std::vector<TokenId> ids;
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, instances.size() - start);
    ids.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = instances[start + i].stream;
      if (s.size() != ctx) throw ContractError("instance stream length differs from context_len");
      ids.insert(ids.end(), s.begin(), s.end());
    }
    Lm::Cache c;
    const auto logits = model.forward(ids, static_cast<nn::Index>(n), ctx, c, mask);
    for (std::size_t i = 0; i < n; ++i) {
      nn::Index best = 0;
      logits.row(static_cast<nn::Index>(i * ctx + ctx - 1)).maxCoeff(&best);
      out[start + i] = static_cast<TokenId>(best);
    }
  }
  return out;
}

inline std::map<TaskKind, TaskAccuracy> first_token_accuracy(const Lm& model, std::span<const TaskInstance> instances,
                                                             const HeadMask* mask = nullptr) {
  std::map<TaskKind, TaskAccuracy> acc;
  const auto pred = predict_first(model, instances, mask);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].task == TaskKind::Noise) continue;
    auto& a = acc[instances[i].task];
    ++a.total;
    a.correct += pred[i] == instances[i].first_truth();
  }
  return acc;
}

/// Next-token training on the non-held-out, non-noise instances; reports
/// first-token accuracy per task on the held-out files.
inline LMTrainReport train_lm(Lm& model, std::span<const TaskInstance> instances,
                              const std::function<void(const LossPoint&)>& on_step = {}) {
  const LMConfig& cfg = model.config();
  std::vector<std::size_t> train;
  std::vector<TaskInstance> held;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].task == TaskKind::Noise) continue;
    if (is_heldout(instances[i], cfg))
      held.push_back(instances[i]);
    else
      train.push_back(i);
  }
  if (train.empty()) throw ContractError("no training instances");

  LMTrainReport report;
  report.train_instances = train.size();
  report.heldout_instances = held.size();
  nn::AdamW<float> opt(cfg.weight_decay);
  Rng order_rng(Rng::mix(cfg.seed, 2));
  std::size_t cursor = train.size();
  const auto L = cfg.sequence_len();
  std::vector<TokenId> ids;
  for (std::uint64_t t = 0; t < cfg.steps; ++t) {
    ids.clear();
    for (std::uint32_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == train.size()) {
        order_rng.shuffle(train.begin(), train.end());
        cursor = 0;
      }
      const auto seq = training_sequence(instances[train[cursor++]], cfg);
      ids.insert(ids.end(), seq.begin(), seq.end());
    }
    const float loss = model.loss(ids, cfg.batch_size, L, true);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(t));
    if (cfg.grad_clip > 0.0) nn::clip_grad_norm(model.params(), cfg.grad_clip);
    const double lr = nn::cosine_lr(t, cfg.steps, cfg.lr, cfg.warmup_fraction, cfg.min_lr);
    opt.step(model.params(), lr);
    model.set_steps(model.steps() + 1);
    LossPoint p{t, loss, lr};
    report.curve.push_back(p);
    if (on_step) on_step(p);
  }
  report.heldout = first_token_accuracy(model, held);
  return report;
}

// ---------------------------------------------------------------------------
// Inference with attention export

struct FimInference {
  TokenId predicted = 0;
  std::vector<float> logits;              // next-token logits after FIM_MIDDLE
  std::vector<nn::Matrix<float>> attention;  // layer-major, layers * heads matrices
};

inline FimInference infer_fim(const Lm& model, const TaskInstance& inst, const HeadMask* mask = nullptr,
                              bool skip_attention = false) {
  const auto& cfg = model.config();
  if (inst.stream.size() != cfg.context_len) {
    throw ContractError("stream has " + std::to_string(inst.stream.size()) + " ids, model expects " +
                        std::to_string(cfg.context_len));
  }
  Lm::Cache c;
  const nn::Index ctx = cfg.context_len;
  const auto logits = model.forward(inst.stream, 1, ctx, c, mask, skip_attention);
  FimInference out;
  const auto last = logits.row(ctx - 1);
  out.logits.assign(last.data(), last.data() + last.size());
  nn::Index best = 0;
  last.maxCoeff(&best);
  out.predicted = static_cast<TokenId>(best);
  for (std::uint32_t l = 0; l < cfg.layers; ++l)
    for (std::uint32_t h = 0; h < cfg.heads; ++h) out.attention.emplace_back(model.attention(c, l, h, 0));
  return out;
}

/// Lower triangle of one attention matrix as a raw pattern.
inline AttentionPattern pattern_from_attention(const nn::Matrix<float>& probs, const std::string& model_id,
                                               HeadKey key, const TaskInstance& inst, std::optional<bool> correct) {
  AttentionPattern p;
  p.model_id = model_id;
  p.layer = key.layer;
  p.head = key.head;
  p.size = static_cast<std::uint32_t>(probs.rows());
  p.values.resize(AttentionPattern::cell_count(p.size));
  for (std::uint32_t i = 0; i < p.size; ++i)
    for (std::uint32_t j = 0; j <= i; ++j) p.at(i, j) = probs(i, j);
  p.meta.task = inst.task;
  p.meta.sample_id = inst.id;
  p.meta.correct = correct;
  return p;
}

struct HarvestOptions {
  std::string model_id = "mini-lm";
  double subsample_ratio = 0.25;
  bool correct_only = false;
  bool balance = false;  // per task, equal numbers of correct and incorrect instances
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
};

struct HarvestRecord {
  std::uint64_t instance_id = 0;
  TaskKind task = TaskKind::Noise;
  TokenId predicted = 0;
  std::optional<bool> correct;
  std::vector<HeadKey> heads;
};

struct HarvestSummary {
  std::vector<HarvestRecord> records;
  std::size_t patterns = 0;
};

/// round(ratio * H) distinct heads per layer, drawn uniformly.
inline std::vector<HeadKey> sample_heads(std::uint32_t layers, std::uint32_t heads, double ratio, std::uint64_t seed) {
  const auto per_layer = static_cast<std::uint32_t>(std::lround(ratio * heads));
  if (per_layer == 0 || per_layer > heads) throw ConfigError("subsample ratio selects no heads or too many");
  Rng rng(seed);
  std::vector<HeadKey> out;
  std::vector<std::uint32_t> idx(heads);
  for (std::uint32_t l = 0; l < layers; ++l) {
    for (std::uint32_t h = 0; h < heads; ++h) idx[h] = h;
    rng.shuffle(idx.begin(), idx.end());
    std::vector<std::uint32_t> chosen(idx.begin(), idx.begin() + per_layer);
    std::sort(chosen.begin(), chosen.end());
    for (auto h : chosen) out.push_back({l, h});
  }
  return out;
}

/// Runs inference over `instances`, decides which are kept (correct_only,
/// balancing), and hands every sampled head's pattern to `sink`.
inline HarvestSummary harvest(const Lm& model, std::span<const TaskInstance> instances, const HarvestOptions& opt,
                              const std::function<void(AttentionPattern&&)>& sink) {
  if (model.steps() == 0) throw ContractError("language model has not been trained");
  const auto& cfg = model.config();
  const auto pred = predict_first(model, instances);

  std::vector<std::optional<bool>> correct(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (instances[i].task != TaskKind::Noise) correct[i] = pred[i] == instances[i].first_truth();

  std::vector<std::uint8_t> keep(instances.size(), 1);
  if (opt.correct_only)
    for (std::size_t i = 0; i < instances.size(); ++i) keep[i] = correct[i].value_or(false);
  if (opt.balance) {
    std::map<TaskKind, std::array<std::vector<std::size_t>, 2>> groups;
    for (std::size_t i = 0; i < instances.size(); ++i)
      if (keep[i] && correct[i]) groups[instances[i].task][*correct[i] ? 1 : 0].push_back(i);
    Rng rng(Rng::mix(opt.seed, 0xBA1A));
    for (auto& [task, g] : groups) {
      const std::size_t n = std::min(g[0].size(), g[1].size());
      for (auto& side : g) {
        rng.shuffle(side.begin(), side.end());
        for (std::size_t k = n; k < side.size(); ++k) keep[side[k]] = 0;
      }
    }
  }

  HarvestSummary summary;
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (keep[i]) chosen.push_back(i);

  const nn::Index ctx = cfg.context_len;
  std::vector<TokenId> ids;
  for (std::size_t start = 0; start < chosen.size(); start += opt.batch_size) {
    const std::size_t n = std::min(opt.batch_size, chosen.size() - start);
    ids.clear();
    for (std::size_t k = 0; k < n; ++k) {
      const auto& s = instances[chosen[start + k]].stream;
      ids.insert(ids.end(), s.begin(), s.end());
    }
    Lm::Cache c;
    model.forward(ids, static_cast<nn::Index>(n), ctx, c);
    for (std::size_t k = 0; k < n; ++k) {
      const auto i = chosen[start + k];
      const auto& inst = instances[i];
      HarvestRecord rec{inst.id, inst.task, pred[i], correct[i],
                        sample_heads(cfg.layers, cfg.heads, opt.subsample_ratio, Rng::mix(opt.seed, inst.id))};
      for (const auto& key : rec.heads) {
        const nn::Matrix<float> probs = model.attention(c, key.layer, key.head, static_cast<nn::Index>(k));
        sink(pattern_from_attention(probs, opt.model_id, key, inst, correct[i]));
        ++summary.patterns;
      }
      summary.records.push_back(std::move(rec));
    }
  }
  return summary;
}

inline std::vector<AttentionPattern> harvest(const Lm& model, std::span<const TaskInstance> instances,
                                             const HarvestOptions& opt, HarvestSummary* summary = nullptr) {
  std::vector<AttentionPattern> out;
  auto s = harvest(model, instances, opt, [&](AttentionPattern&& p) { out.push_back(std::move(p)); });
  if (summary) *summary = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Harvest records as TSV: instance_id, task, predicted, correct (1/0/-), heads.

inline std::string records_tsv(std::span<const HarvestRecord> records) {
  std::string s = "instance_id\ttask\tpredicted\tcorrect\theads\n";
  for (const auto& r : records) {
    s += std::to_string(r.instance_id) + "\t" + std::string(to_string(r.task)) + "\t" + std::to_string(r.predicted) + "\t" +
         (r.correct ? (*r.correct ? "1" : "0") : "-") + "\t";
    for (std::size_t k = 0; k < r.heads.size(); ++k) s += (k ? "," : "") + to_string(r.heads[k]);
    s += "\n";
  }
  return s;
}

inline std::vector<HarvestRecord> parse_records(std::string_view text) {
  std::vector<HarvestRecord> out;
  std::uint64_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    if (++line_no == 1) {
      if (line != "instance_id\ttask\tpredicted\tcorrect\theads") throw FormatError("bad harvest records header", 0);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split(line, '\t');
    if (f.size() != 5) throw FormatError("expected 5 fields on line " + std::to_string(line_no), line_no);
    HarvestRecord r;
    r.instance_id = detail::parse_unsigned<std::uint64_t>(f[0], line_no, "instance id");
    const auto kind = parse_task_kind(f[1]);
    if (!kind) throw FormatError("unknown task '" + std::string(f[1]) + "' on line " + std::to_string(line_no), line_no);
    r.task = *kind;
    r.predicted = detail::parse_unsigned<TokenId>(f[2], line_no, "predicted");
    if (f[3] == "1") r.correct = true;
    else if (f[3] == "0") r.correct = false;
    else if (f[3] != "-") throw FormatError("bad correct flag on line " + std::to_string(line_no), line_no);
    r.heads = parse_head_list(f[4]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace apmae
