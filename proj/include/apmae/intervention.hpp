#pragma once

// Head-zeroing interventions: fixed pools of originally correct and incorrect
// instances are re-run with growing prefixes of a ranked head list, and every
// flip is counted.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apmae/errors.hpp"
#include "apmae/gbdt.hpp"
#include "apmae/lm.hpp"
#include "apmae/rng.hpp"

namespace apmae {

inline constexpr std::uint32_t kCountGrid[] = {1, 2, 5, 10, 20, 50, 100, 200, 400, 800};

struct Pools {
  std::vector<TaskInstance> correct;
  std::vector<TaskInstance> incorrect;
  std::vector<TokenId> baseline_correct;
  std::vector<TokenId> baseline_incorrect;
  std::size_t requested = 0;
};

/// Classifies candidates by the unmasked first-token prediction, then draws up
/// to `pool_size` of each class per seed. Pools are sorted by instance id.
inline Pools build_pools(const Lm& lm, std::span<const TaskInstance> instances, std::size_t pool_size, std::uint64_t seed,
                         std::optional<TaskKind> task = std::nullopt) {
  std::vector<TaskInstance> cand;
  for (const auto& inst : instances)
    if (inst.task != TaskKind::Noise && (!task || inst.task == *task)) cand.push_back(inst);
  const auto pred = predict_first(lm, cand);
  std::vector<std::size_t> good, bad;
  for (std::size_t i = 0; i < cand.size(); ++i) (pred[i] == cand[i].first_truth() ? good : bad).push_back(i);
  Rng rng(Rng::mix(seed, 0x9001));
  rng.shuffle(good.begin(), good.end());
  rng.shuffle(bad.begin(), bad.end());
  good.resize(std::min(good.size(), pool_size));
  bad.resize(std::min(bad.size(), pool_size));
  auto by_id = [&](std::size_t a, std::size_t b) { return cand[a].id < cand[b].id; };
  std::sort(good.begin(), good.end(), by_id);
  std::sort(bad.begin(), bad.end(), by_id);
  Pools p;
  p.requested = pool_size;
  for (auto i : good) {
    p.correct.push_back(cand[i]);
    p.baseline_correct.push_back(pred[i]);
  }
  for (auto i : bad) {
    p.incorrect.push_back(cand[i]);
    p.baseline_incorrect.push_back(pred[i]);
  }
  return p;
}

/// Grid counts not above `available`, plus `available` itself when the grid skips it.
inline std::vector<std::uint32_t> schedule_counts(std::size_t available, std::uint32_t max_count = 800) {
  std::vector<std::uint32_t> out;
  for (auto c : kCountGrid)
    if (c <= max_count && c <= available) out.push_back(c);
  const auto cap = static_cast<std::uint32_t>(std::min<std::size_t>(available, max_count));
  if (cap > 0 && (out.empty() || out.back() != cap)) out.push_back(cap);
  return out;
}

struct InterventionRow {
  std::string task;
  std::string mode;
  std::uint64_t seed = 0;
  std::uint32_t count = 0;
  bool shortfall = false;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
  std::size_t lost = 0;
  std::size_t gained = 0;
  std::size_t changed_correct = 0;
  std::size_t changed_incorrect = 0;
  long net = 0;
  bool collapse = false;
  bool operator==(const InterventionRow&) const = default;
};

struct InterventionReport {
  std::vector<InterventionRow> rows;
  std::optional<std::uint32_t> collapse_count;
  bool recovered_after_collapse = false;  // net rose above its value at the collapse point
};

/// Flags the smallest count where every correct prediction is lost and none of
/// the incorrect ones is gained, and whether net later rises above that point.
inline void mark_collapse(InterventionReport& rep) {
  rep.collapse_count.reset();
  rep.recovered_after_collapse = false;
  long at_net = 0;
  for (auto& row : rep.rows) {
    row.collapse = false;
    if (!rep.collapse_count && row.n_correct > 0 && row.lost == row.n_correct && row.gained == 0) {
      row.collapse = true;
      rep.collapse_count = row.count;
      at_net = row.net;
    } else if (rep.collapse_count && row.net > at_net) {
      rep.recovered_after_collapse = true;
    }
  }
}

/// Zeroes the top-c heads of `ranked` for each count and re-runs both pools.
inline InterventionReport run_schedule(const Lm& lm, const Pools& pools, std::span<const HeadKey> ranked,
                                       std::span<const std::uint32_t> counts, const std::string& task,
                                       const std::string& mode, std::uint64_t seed = 0, bool shortfall = false) {
  for (std::size_t i = 1; i < counts.size(); ++i)
    if (counts[i] <= counts[i - 1]) throw ContractError("intervention counts must be strictly increasing");
  const auto& cfg = lm.config();
  InterventionReport rep;
  rep.rows.resize(counts.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t kk = 0; kk < static_cast<std::ptrdiff_t>(counts.size()); ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    auto& row = rep.rows[k];
    row.task = task;
    row.mode = mode;
    row.seed = seed;
    row.count = counts[k];
    row.shortfall = shortfall || counts[k] > ranked.size();
    const auto used = std::min<std::size_t>(counts[k], ranked.size());
    const auto mask = make_head_mask(cfg.layers, cfg.heads, ranked.first(used));
    const auto pc = predict_first(lm, pools.correct, &mask);
    const auto pi = predict_first(lm, pools.incorrect, &mask);
    row.n_correct = pools.correct.size();
    row.n_incorrect = pools.incorrect.size();
    for (std::size_t i = 0; i < pc.size(); ++i) {
      row.changed_correct += pc[i] != pools.baseline_correct[i];
      row.lost += pc[i] != pools.correct[i].first_truth();
    }
    for (std::size_t i = 0; i < pi.size(); ++i) {
      row.changed_incorrect += pi[i] != pools.baseline_incorrect[i];
      row.gained += pi[i] == pools.incorrect[i].first_truth();
    }
    row.net = static_cast<long>(row.gained) - static_cast<long>(row.lost);
  }
  mark_collapse(rep);
  return rep;
}

inline std::string intervention_csv(std::span<const InterventionRow> rows) {
  std::string s =
      "task,mode,seed,count,shortfall,n_correct,n_incorrect,lost,gained,changed_correct,changed_incorrect,net,collapse\n";
  for (const auto& r : rows)
    s += r.task + "," + r.mode + "," + std::to_string(r.seed) + "," + std::to_string(r.count) + "," +
         (r.shortfall ? "1" : "0") + "," + std::to_string(r.n_correct) + "," + std::to_string(r.n_incorrect) + "," +
         std::to_string(r.lost) + "," + std::to_string(r.gained) + "," + std::to_string(r.changed_correct) + "," +
         std::to_string(r.changed_incorrect) + "," + std::to_string(r.net) + "," + (r.collapse ? "1" : "0") + "\n";
  return s;
}

inline std::vector<InterventionRow> parse_intervention_csv(std::string_view text) {
  static constexpr std::string_view kHeader =
      "task,mode,seed,count,shortfall,n_correct,n_incorrect,lost,gained,changed_correct,changed_incorrect,net,collapse";
  std::vector<InterventionRow> out;
  std::uint64_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != kHeader) throw FormatError("intervention report header must be " + std::string(kHeader), 0);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 13) throw FormatError("expected 13 fields on line " + std::to_string(line_no), line_no);
    InterventionRow r;
    r.task = std::string(f[0]);
    r.mode = std::string(f[1]);
    r.seed = detail::parse_unsigned<std::uint64_t>(f[2], line_no, "seed");
    r.count = detail::parse_unsigned<std::uint32_t>(f[3], line_no, "count");
    r.shortfall = detail::parse_unsigned<std::uint32_t>(f[4], line_no, "shortfall") != 0;
    r.n_correct = detail::parse_unsigned<std::size_t>(f[5], line_no, "n_correct");
    r.n_incorrect = detail::parse_unsigned<std::size_t>(f[6], line_no, "n_incorrect");
    r.lost = detail::parse_unsigned<std::size_t>(f[7], line_no, "lost");
    r.gained = detail::parse_unsigned<std::size_t>(f[8], line_no, "gained");
    r.changed_correct = detail::parse_unsigned<std::size_t>(f[9], line_no, "changed_correct");
    r.changed_incorrect = detail::parse_unsigned<std::size_t>(f[10], line_no, "changed_incorrect");
    try {
      r.net = std::stol(std::string(f[11]));
    } catch (const std::exception&) {
      throw FormatError("bad net on line " + std::to_string(line_no), line_no);
    }
    r.collapse = detail::parse_unsigned<std::uint32_t>(f[12], line_no, "collapse") != 0;
    if (r.net != static_cast<long>(r.gained) - static_cast<long>(r.lost))
      throw FormatError("net is not gained - lost on line " + std::to_string(line_no), line_no);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct NetSummaryRow {
  std::string mode;
  std::uint32_t count = 0;
  std::size_t runs = 0;
  double mean_net = 0;
  double std_net = 0;
  long min_net = 0;
  long max_net = 0;
};

/// Per (mode, count): mean and spread of net change over all tasks and seeds.
/// Seeds of one task are averaged first so every task weighs the same.
inline std::vector<NetSummaryRow> summarize(std::span<const InterventionRow> rows) {
  std::map<std::pair<std::string, std::uint32_t>, std::map<std::string, std::vector<long>>> by;
  for (const auto& r : rows) by[{r.mode, r.count}][r.task].push_back(r.net);
  std::vector<NetSummaryRow> out;
  for (const auto& [key, tasks] : by) {
    NetSummaryRow s;
    s.mode = key.first;
    s.count = key.second;
    s.runs = tasks.size();
    std::vector<double> means;
    bool first = true;
    for (const auto& [t, nets] : tasks) {
      double m = 0;
      for (auto n : nets) {
        m += static_cast<double>(n);
        s.min_net = first ? n : std::min(s.min_net, n);
        s.max_net = first ? n : std::max(s.max_net, n);
        first = false;
      }
      means.push_back(m / static_cast<double>(nets.size()));
    }
    for (double m : means) s.mean_net += m;
    s.mean_net /= static_cast<double>(means.size());
    for (double m : means) s.std_net += (m - s.mean_net) * (m - s.mean_net);
    s.std_net = means.size() > 1 ? std::sqrt(s.std_net / static_cast<double>(means.size() - 1)) : 0.0;
    out.push_back(s);
  }
  return out;
}

inline std::string summary_csv(std::span<const NetSummaryRow> rows) {
  std::string s = "mode,count,log10_count,tasks,mean_net,std_net,min_net,max_net\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%u,%.6f,%zu,%.6f,%.6f,%ld,%ld\n", r.count, std::log10(static_cast<double>(r.count)),
                  r.runs, r.mean_net, r.std_net, r.min_net, r.max_net);
    s += r.mode + buf;
  }
  return s;
}

}  // namespace apmae
