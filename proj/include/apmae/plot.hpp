#pragma once

// Figure emission: every plot is a deterministic SVG (fixed font, sizes and
// number formatting) plus a CSV holding exactly the plotted data.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "apmae/cluster.hpp"
#include "apmae/errors.hpp"
#include "apmae/gbdt.hpp"
#include "apmae/intervention.hpp"
#include "apmae/mae.hpp"

namespace apmae {

struct PlotOutput {
  std::string svg;
  std::string csv;
};

// ---------------------------------------------------------------------------
// CSV input with named columns

class CsvTable {
 public:
  CsvTable(std::string_view text, std::vector<std::string> required) {
    std::size_t start = 0, line_no = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      auto line = text.substr(start, end - start);
      start = end + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      std::vector<std::string> f;
      for (auto s : detail::split(line, ',')) f.emplace_back(s);
      if (header_.empty()) {
        header_ = std::move(f);
        continue;
      }
      if (f.size() != header_.size())
        throw FormatError("line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields, header has " +
                              std::to_string(header_.size()),
                          line_no);
      rows_.push_back(std::move(f));
    }
    for (const auto& r : required)
      if (std::find(header_.begin(), header_.end(), r) == header_.end())
        throw FormatError("input CSV lacks column '" + r + "'");
  }

  std::size_t rows() const { return rows_.size(); }

  const std::string& str(std::size_t row, const std::string& col) const { return rows_[row][index(col)]; }

  double num(std::size_t row, const std::string& col) const {
    const auto& s = str(row, col);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw FormatError("column '" + col + "' row " + std::to_string(row + 1) + ": '" + s + "' is not a number");
  }

 private:
  std::size_t index(const std::string& col) const {
    const auto it = std::find(header_.begin(), header_.end(), col);
    if (it == header_.end()) throw FormatError("input CSV lacks column '" + col + "'");
    return static_cast<std::size_t>(it - header_.begin());
  }
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// SVG writer

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    body_ += "<rect x=\"" + f(x) + "\" y=\"" + f(y) + "\" width=\"" + f(w) + "\" height=\"" + f(h) + "\" fill=\"" + fill +
             "\" stroke=\"" + stroke + "\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#000", double width = 1.0) {
    body_ += "<line x1=\"" + f(x1) + "\" y1=\"" + f(y1) + "\" x2=\"" + f(x2) + "\" y2=\"" + f(y2) + "\" stroke=\"" + stroke +
             "\" stroke-width=\"" + f(width) + "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + f(x) + "\" cy=\"" + f(y) + "\" r=\"" + f(r) + "\" fill=\"" + fill + "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double width = 1.5) {
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" + f(width) + "\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) body_ += (i ? " " : "") + f(pts[i].first) + "," + f(pts[i].second);
    body_ += "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start", double size = 11,
            double rotate = 0) {
    body_ += "<text x=\"" + f(x) + "\" y=\"" + f(y) + "\" font-family=\"DejaVu Sans\" font-size=\"" + f(size) +
             "\" text-anchor=\"" + anchor + "\"";
    if (rotate != 0) body_ += " transform=\"rotate(" + f(rotate) + " " + f(x) + " " + f(y) + ")\"";
    body_ += ">" + escape(s) + "</text>\n";
  }

  std::string str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f(w_) + "\" height=\"" + f(h_) + "\" viewBox=\"0 0 " +
           f(w_) + " " + f(h_) + "\">\n<rect x=\"0\" y=\"0\" width=\"" + f(w_) + "\" height=\"" + f(h_) +
           "\" fill=\"#ffffff\"/>\n" + body_ + "</svg>\n";
  }

  static std::string f(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", std::abs(v) < 0.005 ? 0.0 : v);
    return buf;
  }

 private:
  static std::string escape(const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  }
  double w_, h_;
  std::string body_;
};

namespace detail {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
                                           "#7f7f7f", "#bcbd22", "#17becf"};

/// Viridis-like ramp sampled at five stops, linearly interpolated.
inline std::string ramp(double t) {
  static constexpr double stops[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * 4.0;
  const int k = std::min(3, static_cast<int>(t));
  const double u = t - k;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[k][0] + u * (stops[k + 1][0] - stops[k][0]))),
                static_cast<int>(std::lround(stops[k][1] + u * (stops[k + 1][1] - stops[k][1]))),
                static_cast<int>(std::lround(stops[k][2] + u * (stops[k + 1][2] - stops[k][2]))));
  return buf;
}

inline std::string diverging(double v, double scale) {
  const double t = scale > 0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  const int a = static_cast<int>(std::lround(255 * (1 - std::abs(t))));
  char buf[8];
  if (t >= 0)
    std::snprintf(buf, sizeof buf, "#ff%02x%02x", a, a);
  else
    std::snprintf(buf, sizeof buf, "#%02x%02xff", a, a);
  return buf;
}

inline std::string num(double v, const char* fmt = "%.6g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct Axes {
  double x0, y0, w, h;        // plot area in pixels
  double xmin, xmax, ymin, ymax;
  bool logx = false;
  double px(double x) const {
    const double a = logx ? std::log10(x) : x, lo = logx ? std::log10(xmin) : xmin, hi = logx ? std::log10(xmax) : xmax;
    return x0 + (hi > lo ? (a - lo) / (hi - lo) : 0.5) * w;
  }
  double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.5) * h; }
};

inline void frame(Svg& s, const Axes& a, const std::string& xlabel, const std::string& ylabel, const std::string& title) {
  s.line(a.x0, a.y0 + a.h, a.x0 + a.w, a.y0 + a.h);
  s.line(a.x0, a.y0, a.x0, a.y0 + a.h);
  s.text(a.x0 + a.w / 2, a.y0 + a.h + 34, xlabel, "middle");
  s.text(a.x0 - 42, a.y0 + a.h / 2, ylabel, "middle", 11, -90);
  s.text(a.x0 + a.w / 2, a.y0 - 10, title, "middle", 13);
  for (int k = 0; k <= 4; ++k) {
    const double y = a.ymin + (a.ymax - a.ymin) * k / 4.0;
    s.line(a.x0 - 4, a.py(y), a.x0, a.py(y));
    s.text(a.x0 - 6, a.py(y) + 4, num(y, "%.3g"), "end", 10);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reconstruction panels

struct ReconPanels {
  std::uint32_t size = 0;
  std::vector<float> original;       // lower triangle, scaled space
  std::vector<float> masked;         // NaN where a patch was masked
  std::vector<float> reconstructed;  // model output for every patch
  std::vector<float> composite;      // visible original, predicted masked
};

/// Runs one masked forward pass and splits it into the four panels.
inline ReconPanels recon_panels(Mae& model, const AttentionPattern& p, std::uint64_t mask_seed) {
  const auto& cfg = model.config();
  const auto ps = model.tensorize(p);
  const auto mask = select_mask(ps, cfg.mask_ratio, mask_seed);
  std::vector<Reconstruction> recon;
  const std::vector<PatchSet> batch{ps};
  const std::vector<MaskSelection> masks{mask};
  model.forward_train(batch, masks, false, &recon);
  ReconPanels out;
  out.size = p.size;
  out.original = depatchify(ps);
  auto with = [&](const std::vector<float>& values) {
    PatchSet q = ps;
    q.values = values;
    return depatchify(q);
  };
  out.reconstructed = with(recon[0].predicted);
  out.composite = with(recon[0].composite);
  PatchSet m = ps;
  for (auto k : mask.masked)
    for (auto& v : m.patch(k)) v = std::numeric_limits<float>::quiet_NaN();
  out.masked = depatchify(m);
  return out;
}

inline PlotOutput plot_recon_triptych(const ReconPanels& r) {
  const std::uint32_t n = r.size;
  const double cell = std::max(1.0, 200.0 / n), side = cell * n, pad = 30;
  Svg s(4 * side + 5 * pad, side + 2 * pad + 10);
  const std::vector<std::pair<std::string, const std::vector<float>*>> panels{
      {"original", &r.original}, {"masked", &r.masked}, {"reconstructed", &r.reconstructed}, {"composite", &r.composite}};
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, v] : panels)
    for (float x : *v)
      if (std::isfinite(x)) {
        lo = std::min(lo, static_cast<double>(x));
        hi = std::max(hi, static_cast<double>(x));
      }
  std::string csv = "panel,row,col,value\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const double ox = pad + static_cast<double>(p) * (side + pad), oy = pad + 10;
    s.text(ox + side / 2, pad, panels[p].first, "middle", 12);
    s.rect(ox, oy, side, side, "#f0f0f0");
    for (std::uint32_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j <= i; ++j) {
        const float v = (*panels[p].second)[AttentionPattern::index(i, j)];
        csv += panels[p].first + "," + std::to_string(i) + "," + std::to_string(j) + "," +
               (std::isfinite(v) ? detail::num(v) : std::string("nan")) + "\n";
        if (!std::isfinite(v)) {
          s.rect(ox + j * cell, oy + i * cell, cell, cell, "#c0c0c0");
          continue;
        }
        s.rect(ox + j * cell, oy + i * cell, cell, cell, detail::ramp(hi > lo ? (v - lo) / (hi - lo) : 0.0));
      }
  }
  return {s.str(), csv};
}

// ---------------------------------------------------------------------------
// Cluster-count histogram, one panel per layer

inline std::vector<HeadClusterCount> parse_cluster_counts(std::string_view text) {
  CsvTable t(text, {"layer", "head", "clusters"});
  std::vector<HeadClusterCount> out;
  for (std::size_t r = 0; r < t.rows(); ++r)
    out.push_back({{static_cast<std::uint32_t>(t.num(r, "layer")), static_cast<std::uint32_t>(t.num(r, "head"))},
                   static_cast<std::size_t>(t.num(r, "clusters"))});
  return out;
}

inline PlotOutput plot_cluster_count(std::span<const HeadClusterCount> rows) {
  ClusterStats st;
  std::size_t max_count = 0, max_heads = 1;
  for (const auto& r : rows) {
    ++st.per_layer[r.head.layer][r.count];
    max_count = std::max(max_count, r.count);
  }
  for (const auto& [l, h] : st.per_layer)
    for (const auto& [c, n] : h) max_heads = std::max(max_heads, n);
  const std::size_t layers = std::max<std::size_t>(1, st.per_layer.size());
  const double pw = 220, ph = 140, gap = 70;
  const std::size_t cols = std::min<std::size_t>(layers, 4), grid_rows = (layers + cols - 1) / cols;
  Svg s(cols * (pw + gap) + gap, grid_rows * (ph + gap) + gap);
  std::size_t k = 0;
  for (const auto& [layer, hist] : st.per_layer) {
    detail::Axes a{gap + (k % cols) * (pw + gap), gap + (k / cols) * (ph + gap), pw, ph,
                   -0.5, static_cast<double>(max_count) + 0.5, 0, static_cast<double>(max_heads)};
    detail::frame(s, a, "clusters per head", "heads", "layer " + std::to_string(layer));
    const double bw = pw / (max_count + 1.0) * 0.8;
    for (const auto& [c, n] : hist) {
      const double x = a.px(static_cast<double>(c));
      s.rect(x - bw / 2, a.py(static_cast<double>(n)), bw, a.py(0) - a.py(static_cast<double>(n)), detail::kPalette[0]);
    }
    for (std::size_t c = 0; c <= max_count; ++c)
      if (max_count < 12 || c % ((max_count + 9) / 10) == 0)
        s.text(a.px(static_cast<double>(c)), a.y0 + ph + 14, std::to_string(c), "middle", 10);
    ++k;
  }
  return {s.str(), cluster_histogram_csv(st)};
}

// ---------------------------------------------------------------------------
// Accuracy bars with 95% intervals

inline std::vector<AccuracyRow> parse_accuracy(std::string_view text) {
  CsvTable t(text, {"task", "accuracy", "ci_half_width", "folds"});
  std::vector<AccuracyRow> out;
  for (std::size_t r = 0; r < t.rows(); ++r)
    out.push_back({t.str(r, "task"), t.num(r, "accuracy"), t.num(r, "ci_half_width"), static_cast<std::size_t>(t.num(r, "folds"))});
  return out;
}

inline PlotOutput plot_accuracy(std::span<const AccuracyRow> rows) {
  const double bw = 60, pad = 80, h = 260;
  Svg s(2 * pad + bw * std::max<std::size_t>(1, rows.size()) * 1.5, h + 2 * pad + 40);
  detail::Axes a{pad, pad, bw * 1.5 * std::max<std::size_t>(1, rows.size()), h, 0, 1, 0, 1};
  detail::frame(s, a, "task", "accuracy", "classifier accuracy (mean, 95% CI)");
  s.line(a.x0, a.py(0.5), a.x0 + a.w, a.py(0.5), "#999999", 0.8);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double cx = a.x0 + bw * 1.5 * (i + 0.5);
    const auto& r = rows[i];
    s.rect(cx - bw / 2, a.py(r.accuracy), bw, a.py(0) - a.py(r.accuracy), detail::kPalette[i % 10]);
    const double lo = std::max(0.0, r.accuracy - r.ci_half_width), hi = std::min(1.0, r.accuracy + r.ci_half_width);
    s.line(cx, a.py(lo), cx, a.py(hi), "#000", 1.5);
    s.line(cx - 8, a.py(lo), cx + 8, a.py(lo), "#000", 1.5);
    s.line(cx - 8, a.py(hi), cx + 8, a.py(hi), "#000", 1.5);
    s.text(cx, a.y0 + h + 14, r.task, "end", 9, -35);
  }
  return {s.str(), accuracy_csv(rows)};
}

// ---------------------------------------------------------------------------
// SHAP map: mean Shapley value per cluster label at each head

inline PlotOutput plot_shap_map(const ShapSummary& summary) {
  const double pad = 70, w = std::max<double>(300, 12.0 * summary.heads.size()), h = 260;
  Svg s(w + 2 * pad, h + 2 * pad);
  double lo = 0, hi = 0;
  std::int32_t max_label = 0;
  for (const auto& hd : summary.heads)
    for (const auto& g : hd.groups) {
      lo = std::min(lo, g.mean);
      hi = std::max(hi, g.mean);
      max_label = std::max(max_label, g.label);
    }
  if (hi == lo) hi = lo + 1;
  detail::Axes a{pad, pad, w, h, -0.5, summary.heads.size() - 0.5, lo, hi};
  detail::frame(s, a, "head (layer-major)", "mean SHAP", "mean SHAP per cluster label");
  s.line(a.x0, a.py(0), a.x0 + a.w, a.py(0), "#999999", 0.8);
  std::uint32_t last_layer = std::numeric_limits<std::uint32_t>::max();
  for (std::size_t i = 0; i < summary.heads.size(); ++i) {
    const auto& hd = summary.heads[i];
    if (hd.head.layer != last_layer) {
      last_layer = hd.head.layer;
      s.line(a.px(i - 0.5), a.y0 + h, a.px(i - 0.5), a.y0 + h + 6);
      s.text(a.px(static_cast<double>(i)), a.y0 + h + 18, "L" + std::to_string(hd.head.layer), "start", 9);
    }
    for (const auto& g : hd.groups) {
      const std::size_t colour = g.label < 0 ? 7 : static_cast<std::size_t>(g.label) % 7;
      s.circle(a.px(static_cast<double>(i)), a.py(g.mean), 3, detail::kPalette[colour]);
    }
  }
  return {s.str(), shap_summary_csv(summary)};
}

// ---------------------------------------------------------------------------
// Intervention net-change curves on a log count axis

inline PlotOutput plot_intervention(std::span<const InterventionRow> rows) {
  const auto summary = summarize(rows);
  std::map<std::string, std::vector<const NetSummaryRow*>> by_mode;
  double lo = 0, hi = 0, cmax = 1;
  for (const auto& r : summary) {
    by_mode[r.mode].push_back(&r);
    lo = std::min(lo, r.mean_net - r.std_net);
    hi = std::max(hi, r.mean_net + r.std_net);
    cmax = std::max(cmax, static_cast<double>(r.count));
  }
  if (hi == lo) hi = lo + 1;
  const double pad = 80, w = 420, h = 260;
  Svg s(w + 2 * pad + 120, h + 2 * pad);
  detail::Axes a{pad, pad, w, h, 1, std::max(cmax, 10.0), lo, hi, true};
  detail::frame(s, a, "heads zeroed (log scale)", "net change", "net change in correct first tokens");
  for (double c = 1; c <= a.xmax * 1.0001; c *= 10) {
    s.line(a.px(c), a.y0 + h, a.px(c), a.y0 + h + 4);
    s.text(a.px(c), a.y0 + h + 16, detail::num(c, "%.0f"), "middle", 10);
  }
  s.line(a.x0, a.py(0), a.x0 + a.w, a.py(0), "#999999", 0.8);
  std::size_t k = 0;
  for (const auto& [mode, pts] : by_mode) {
    std::vector<std::pair<double, double>> line;
    for (const auto* p : pts) {
      line.emplace_back(a.px(p->count), a.py(p->mean_net));
      if (p->std_net > 0) s.line(a.px(p->count), a.py(p->mean_net - p->std_net), a.px(p->count), a.py(p->mean_net + p->std_net), detail::kPalette[k % 10], 0.8);
    }
    s.polyline(line, detail::kPalette[k % 10]);
    s.line(a.x0 + w + 20, a.y0 + 16 * k + 6, a.x0 + w + 40, a.y0 + 16 * k + 6, detail::kPalette[k % 10], 2);
    s.text(a.x0 + w + 46, a.y0 + 16 * k + 10, mode, "start", 10);
    ++k;
  }
  return {s.str(), summary_csv(summary)};
}

}  // namespace apmae
