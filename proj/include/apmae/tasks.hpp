#pragma once

// Completion-task mining: target extraction per task family, fill-in-the-middle
// instance construction over byte-level token ids, noise instances, and the
// line-delimited instance format.
//
// Instance line (tab separated):
//   id  TASK  file_id  first:last  byte_begin:byte_end  window_begin  truth  stream
// where truth and stream are space-separated ids ("-" when empty) and
// file_id is "-" for noise instances.

#include <algorithm>
#include <array>
#include <charconv>
#include <exception>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "apmae/binary_io.hpp"
#include "apmae/errors.hpp"
#include "apmae/java_lexer.hpp"
#include "apmae/rng.hpp"
#include "apmae/task_kind.hpp"

namespace apmae {

using TokenId = std::uint16_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by sentinels.
struct Vocab {
  static constexpr TokenId kPad = 256;
  static constexpr TokenId kFimPrefix = 257;
  static constexpr TokenId kFimSuffix = 258;
  static constexpr TokenId kFimMiddle = 259;
  static constexpr TokenId kEos = 260;
  static constexpr std::size_t kSize = 261;
  static constexpr TokenId kNoToken = 0xFFFF;

  static std::vector<TokenId> encode(std::string_view text) {
    std::vector<TokenId> ids(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) ids[i] = static_cast<unsigned char>(text[i]);
    return ids;
  }
};

struct TargetSpan {
  std::size_t first = 0;  // token indices, inclusive
  std::size_t last = 0;
  friend bool operator==(const TargetSpan&, const TargetSpan&) = default;
};

struct TargetOptions {
  std::uint64_t seed = 0;
  // One random span per this many significant tokens (at least one).
  std::size_t random_span_every = 20;
  std::size_t random_span_min = 3;
  std::size_t random_span_max = 10;
};

namespace detail {

inline bool is_operand_end(const JavaToken& t) {
  switch (t.kind) {
    case TokenKind::Identifier:
    case TokenKind::NumericLiteral:
    case TokenKind::StringLiteral:
    case TokenKind::CharLiteral:
    case TokenKind::BooleanLiteral:
      return true;
    case TokenKind::CloseBracket:
      return t.text == ")" || t.text == "]";
    case TokenKind::Keyword:
      return t.text == "this" || t.text == "null";
    default:
      return false;
  }
}

}  // namespace detail

inline std::size_t significant_count(const std::vector<JavaToken>& tokens, TargetSpan s) {
  std::size_t n = 0;
  for (std::size_t i = s.first; i <= s.last; ++i) n += tokens[i].significant();
  return n;
}

/// Candidate targets of one task family, in source order. NOISE has none.
inline std::vector<TargetSpan> extract_targets(const std::vector<JavaToken>& tokens, TaskKind kind,
                                               const TargetOptions& opt = {}) {
  std::vector<TargetSpan> out;
  std::vector<std::size_t> sig;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].significant()) sig.push_back(i);

  auto single = [&](auto&& pred) {
    for (std::size_t k = 0; k < sig.size(); ++k)
      if (pred(k, tokens[sig[k]])) out.push_back({sig[k], sig[k]});
  };

  switch (kind) {
    case TaskKind::Identifier:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::Identifier; });
      break;
    case TaskKind::BoolLiteral:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::BooleanLiteral; });
      break;
    case TaskKind::StringLiteral:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::StringLiteral; });
      break;
    case TaskKind::NumericLiteral:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::NumericLiteral; });
      break;
    case TaskKind::BoolOperator:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::BooleanOp; });
      break;
    case TaskKind::ArithOperator:
      // Binary use only: an operand must precede and something must follow.
      single([&](std::size_t k, const JavaToken& t) {
        return t.kind == TokenKind::ArithmeticOp && k > 0 && k + 1 < sig.size() &&
               detail::is_operand_end(tokens[sig[k - 1]]);
      });
      break;
    case TaskKind::AssignOperator:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::CompoundAssignOp; });
      break;
    case TaskKind::ClosingBracket:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::CloseBracket; });
      break;
    case TaskKind::EndOfLine:
      single([](std::size_t, const JavaToken& t) { return t.kind == TokenKind::Semicolon; });
      break;
    case TaskKind::RandomSpan: {
      if (sig.size() < opt.random_span_min) break;
      Rng rng(Rng::mix(opt.seed, 0x5A4E));
      const std::size_t count = std::max<std::size_t>(1, sig.size() / std::max<std::size_t>(1, opt.random_span_every));
      for (std::size_t c = 0; c < count; ++c) {
        const auto hi = std::min(opt.random_span_max, sig.size());
        const auto len = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(opt.random_span_min),
                                                              static_cast<std::int64_t>(hi)));
        const auto start = static_cast<std::size_t>(rng.below(sig.size() - len + 1));
        out.push_back({sig[start], sig[start + len - 1]});
      }
      std::sort(out.begin(), out.end(), [](const TargetSpan& a, const TargetSpan& b) {
        return a.first != b.first ? a.first < b.first : a.last < b.last;
      });
      break;
    }
    case TaskKind::Noise:
      break;
  }
  return out;
}

struct TaskInstance {
  std::uint64_t id = 0;
  TaskKind task = TaskKind::Noise;
  std::optional<std::uint32_t> file_id;  // empty for noise
  TargetSpan span;
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
  std::size_t window_begin = 0;  // byte offset of the first prefix id
  std::vector<TokenId> truth;
  std::vector<TokenId> stream;

  TokenId first_truth() const { return truth.empty() ? Vocab::kNoToken : truth.front(); }

  std::size_t pad_count() const {
    std::size_t n = 0;
    while (n < stream.size() && stream[n] == Vocab::kPad) ++n;
    return n;
  }

  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

enum class SkipReason : std::uint8_t { None, EmptySpan, SpanOutOfRange, ContextTooSmall };

inline constexpr std::array<std::string_view, 4> kSkipReasonNames = {"none", "empty_span", "span_out_of_range",
                                                                     "context_too_small"};

inline std::string_view to_string(SkipReason r) { return kSkipReasonNames.at(static_cast<std::size_t>(r)); }

struct FimResult {
  std::optional<TaskInstance> instance;
  SkipReason reason = SkipReason::None;
};

/// Frames the bytes around [byte_begin, byte_end) as
/// PAD* FIM_PREFIX prefix FIM_SUFFIX suffix FIM_MIDDLE with exactly
/// `context_len` ids. The window is centred on the target: each side gets half
/// the budget, and a side that runs out of file hands its share to the other.
inline FimResult build_fim_window(std::span<const TokenId> file, std::size_t byte_begin, std::size_t byte_end,
                                  std::size_t context_len) {
  if (context_len < 4) return {std::nullopt, SkipReason::ContextTooSmall};
  if (byte_end <= byte_begin) return {std::nullopt, SkipReason::EmptySpan};
  if (byte_end > file.size()) return {std::nullopt, SkipReason::SpanOutOfRange};

  const std::size_t budget = context_len - 3;
  const std::size_t before = byte_begin;
  const std::size_t after = file.size() - byte_end;
  std::size_t p = before, s = after;
  if (before + after > budget) {
    const std::size_t half_p = budget / 2, half_s = budget - half_p;
    if (before < half_p) {
      p = before;
      s = budget - p;
    } else if (after < half_s) {
      s = after;
      p = budget - s;
    } else {
      p = half_p;
      s = half_s;
    }
  }

  TaskInstance inst;
  inst.byte_begin = byte_begin;
  inst.byte_end = byte_end;
  inst.window_begin = byte_begin - p;
  inst.truth.assign(file.begin() + static_cast<std::ptrdiff_t>(byte_begin),
                    file.begin() + static_cast<std::ptrdiff_t>(byte_end));
  inst.stream.reserve(context_len);
  inst.stream.assign(budget - p - s, Vocab::kPad);
  inst.stream.push_back(Vocab::kFimPrefix);
  inst.stream.insert(inst.stream.end(), file.begin() + static_cast<std::ptrdiff_t>(byte_begin - p),
                     file.begin() + static_cast<std::ptrdiff_t>(byte_begin));
  inst.stream.push_back(Vocab::kFimSuffix);
  inst.stream.insert(inst.stream.end(), file.begin() + static_cast<std::ptrdiff_t>(byte_end),
                     file.begin() + static_cast<std::ptrdiff_t>(byte_end + s));
  inst.stream.push_back(Vocab::kFimMiddle);
  return {std::move(inst), SkipReason::None};
}

/// FIM instance for a token span of a lexed file.
inline FimResult build_fim_instance(const std::vector<JavaToken>& tokens, std::span<const TokenId> file,
                                    TargetSpan span, std::size_t context_len) {
  if (span.last < span.first) return {std::nullopt, SkipReason::EmptySpan};
  if (span.last >= tokens.size()) return {std::nullopt, SkipReason::SpanOutOfRange};
  auto r = build_fim_window(file, tokens[span.first].begin, tokens[span.last].end, context_len);
  if (r.instance) r.instance->span = span;
  return r;
}

/// The prefix, ground truth and suffix glued back together.
inline std::vector<TokenId> reinsert_truth(const TaskInstance& inst) {
  const auto& st = inst.stream;
  const auto pre = std::find(st.begin(), st.end(), Vocab::kFimPrefix);
  const auto suf = std::find(pre, st.end(), Vocab::kFimSuffix);
  const auto mid = std::find(suf, st.end(), Vocab::kFimMiddle);
  if (pre == st.end() || suf == st.end() || mid == st.end()) throw ContractError("stream lacks FIM sentinels");
  std::vector<TokenId> out(pre + 1, suf);
  out.insert(out.end(), inst.truth.begin(), inst.truth.end());
  out.insert(out.end(), suf + 1, mid);
  return out;
}

/// `context_len` ids drawn uniformly over the whole vocabulary.
inline TaskInstance gen_noise_instance(std::size_t context_len, std::uint64_t seed) {
  if (context_len == 0) throw ConfigError("context length must be positive");
  Rng rng(seed);
  TaskInstance inst;
  inst.task = TaskKind::Noise;
  inst.stream.resize(context_len);
  for (auto& id : inst.stream) id = static_cast<TokenId>(rng.below(Vocab::kSize));
  return inst;
}

// ---------------------------------------------------------------------------
// Mining a corpus

struct MineOptions {
  std::size_t context_len = 256;
  std::size_t per_kind_per_file = 4;  // 0 keeps every target
  std::size_t noise_count = 0;
  std::uint64_t seed = 0;
  std::vector<TaskKind> kinds;  // empty = every kind except NOISE
  TargetOptions targets;
};

struct MineResult {
  std::vector<TaskInstance> instances;
  std::map<SkipReason, std::size_t> skipped;
  std::map<TaskKind, std::size_t> per_kind;
};

/// Mines instances from every file. Ids are assigned in (file, kind, target)
/// order followed by the noise instances, so output is independent of threading.
inline MineResult mine_instances(const std::vector<std::string>& files, const MineOptions& opt) {
  std::vector<TaskKind> kinds = opt.kinds;
  if (kinds.empty())
    for (auto k : kAllTaskKinds)
      if (k != TaskKind::Noise) kinds.push_back(k);

  std::vector<std::vector<TaskInstance>> per_file(files.size());
  std::vector<std::map<SkipReason, std::size_t>> skips(files.size());
  std::vector<std::exception_ptr> errors(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t fi = 0; fi < static_cast<std::ptrdiff_t>(files.size()); ++fi) {
    const auto f = static_cast<std::size_t>(fi);
    try {
      const auto tokens = tokenize_java(files[f]);
      const auto ids = Vocab::encode(files[f]);
      for (auto kind : kinds) {
        if (kind == TaskKind::Noise) continue;
        TargetOptions to = opt.targets;
        to.seed = Rng::mix(opt.seed, f * 16 + static_cast<std::size_t>(kind));
        auto spans = extract_targets(tokens, kind, to);
        if (opt.per_kind_per_file && spans.size() > opt.per_kind_per_file) {
          Rng rng(Rng::mix(to.seed, 1));
          rng.shuffle(spans.begin(), spans.end());
          spans.resize(opt.per_kind_per_file);
          std::sort(spans.begin(), spans.end(), [](auto& a, auto& b) { return a.first < b.first; });
        }
        for (const auto& s : spans) {
          auto r = build_fim_instance(tokens, ids, s, opt.context_len);
          if (!r.instance) {
            ++skips[f][r.reason];
            continue;
          }
          r.instance->task = kind;
          r.instance->file_id = static_cast<std::uint32_t>(f);
          per_file[f].push_back(std::move(*r.instance));
        }
      }
    } catch (...) {
      errors[f] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  MineResult result;
  for (std::size_t f = 0; f < files.size(); ++f) {
    for (auto& inst : per_file[f]) {
      inst.id = result.instances.size();
      ++result.per_kind[inst.task];
      result.instances.push_back(std::move(inst));
    }
    for (auto [r, c] : skips[f]) result.skipped[r] += c;
  }
  for (std::size_t k = 0; k < opt.noise_count; ++k) {
    auto inst = gen_noise_instance(opt.context_len, Rng::mix(opt.seed ^ 0x4E4F495345ULL, k));
    inst.id = result.instances.size();
    ++result.per_kind[TaskKind::Noise];
    result.instances.push_back(std::move(inst));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Instance files

namespace detail {

inline std::string join_ids(const std::vector<TokenId>& ids) {
  if (ids.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) return out;
    start = p + 1;
  }
}

template <typename U>
U parse_unsigned(std::string_view s, std::uint64_t line, const char* what) {
  U v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw FormatError(std::string("bad ") + what + " '" + std::string(s) + "' on line " + std::to_string(line), line);
  return v;
}

inline std::vector<TokenId> parse_ids(std::string_view s, std::uint64_t line) {
  std::vector<TokenId> ids;
  if (s == "-") return ids;
  for (auto part : split(s, ' ')) {
    const auto v = parse_unsigned<std::uint32_t>(part, line, "token id");
    if (v >= Vocab::kSize) throw FormatError("token id out of range on line " + std::to_string(line), line);
    ids.push_back(static_cast<TokenId>(v));
  }
  return ids;
}

}  // namespace detail

inline constexpr std::string_view kInstanceHeader =
    "# id\ttask\tfile\tspan\tbytes\twindow_begin\ttruth\tstream";

inline std::string format_instance(const TaskInstance& inst) {
  std::string s = std::to_string(inst.id);
  s += '\t';
  s += to_string(inst.task);
  s += '\t';
  s += inst.file_id ? std::to_string(*inst.file_id) : "-";
  s += '\t' + std::to_string(inst.span.first) + ':' + std::to_string(inst.span.last);
  s += '\t' + std::to_string(inst.byte_begin) + ':' + std::to_string(inst.byte_end);
  s += '\t' + std::to_string(inst.window_begin);
  s += '\t' + detail::join_ids(inst.truth);
  s += '\t' + detail::join_ids(inst.stream);
  return s;
}

inline TaskInstance parse_instance(std::string_view line, std::uint64_t line_no) {
  using namespace detail;
  const auto f = split(line, '\t');
  if (f.size() != 8) throw FormatError("expected 8 fields on line " + std::to_string(line_no), line_no);
  TaskInstance inst;
  inst.id = parse_unsigned<std::uint64_t>(f[0], line_no, "id");
  const auto kind = parse_task_kind(f[1]);
  if (!kind) throw FormatError("unknown task '" + std::string(f[1]) + "' on line " + std::to_string(line_no), line_no);
  inst.task = *kind;
  if (f[2] != "-") inst.file_id = parse_unsigned<std::uint32_t>(f[2], line_no, "file id");
  const auto span = split(f[3], ':'), bytes = split(f[4], ':');
  if (span.size() != 2 || bytes.size() != 2) throw FormatError("bad span on line " + std::to_string(line_no), line_no);
  inst.span = {parse_unsigned<std::size_t>(span[0], line_no, "span"), parse_unsigned<std::size_t>(span[1], line_no, "span")};
  inst.byte_begin = parse_unsigned<std::size_t>(bytes[0], line_no, "byte offset");
  inst.byte_end = parse_unsigned<std::size_t>(bytes[1], line_no, "byte offset");
  inst.window_begin = parse_unsigned<std::size_t>(f[5], line_no, "window offset");
  inst.truth = parse_ids(f[6], line_no);
  inst.stream = parse_ids(f[7], line_no);
  return inst;
}

inline void write_instances(const std::vector<TaskInstance>& instances, const std::filesystem::path& path) {
  std::string body(kInstanceHeader);
  body += '\n';
  for (const auto& inst : instances) body += format_instance(inst) + '\n';
  io::atomic_write_text(path, body);
}

inline std::vector<TaskInstance> read_instances(const std::filesystem::path& path) {
  const auto text = io::read_text(path);
  std::vector<TaskInstance> out;
  std::uint64_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    ++line_no;
    if (!line.empty() && line.front() != '#') out.push_back(parse_instance(line, line_no));
    start = end + 1;
  }
  return out;
}

}  // namespace apmae
