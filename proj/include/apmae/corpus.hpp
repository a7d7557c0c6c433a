#pragma once

// Synthetic mini-Java corpus: classes with fields and methods built from
// declarations, assignments, compound assignments, arithmetic and boolean
// expressions, calls, loops, branches and literals. Files are generated
// independently from (seed, file index) so generation parallelises trivially.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "apmae/rng.hpp"

namespace apmae {

namespace detail {

inline constexpr std::array<std::string_view, 32> kNameWords = {
    "count", "total", "index", "value", "sum",   "size",   "limit", "offset", "result", "temp",  "delta",
    "score", "level", "width", "depth", "speed", "weight", "price", "amount", "start",  "end",   "step",
    "item",  "node",  "key",   "flag",  "max",   "min",    "left",  "right",  "head",   "tail"};

inline constexpr std::array<std::string_view, 16> kClassWords = {
    "Account", "Buffer", "Cache",   "Counter", "Engine", "Filter", "Graph",  "Helper",
    "Index",   "Ledger", "Matrix",  "Parser",  "Queue",  "Router", "Sensor", "Tracker"};

inline constexpr std::array<std::string_view, 12> kVerbs = {
    "compute", "update", "check", "apply", "merge", "scan", "build", "reset", "find", "store", "load", "move"};

inline constexpr std::array<std::string_view, 12> kStringWords = {
    "ok", "error", "done", "ready", "empty", "full", "start", "stop", "value", "name", "id", "path"};

enum class VarType : std::uint8_t { Int, Double, Bool, String, IntArray };

struct Var {
  std::string name;
  VarType type;
};

class JavaGenerator {
 public:
  explicit JavaGenerator(std::uint64_t seed) : rng_(seed) {}

  std::string file() {
    out_.clear();
    const std::string cls = std::string(pick(kClassWords)) + std::string(pick(kClassWords));
    if (rng_.bernoulli(0.5)) out_ += "package demo." + lower(pick(kClassWords)) + ";\n\n";
    out_ += "public class " + cls + " {\n";
    fields_.clear();
    const auto nfields = rng_.between(2, 4);
    for (std::int64_t f = 0; f < nfields; ++f) field();
    out_ += "\n";
    const auto nmethods = rng_.between(2, 4);
    for (std::int64_t m = 0; m < nmethods; ++m) {
      method();
      if (m + 1 < nmethods) out_ += "\n";
    }
    out_ += "}\n";
    return out_;
  }

 private:
  template <typename A>
  std::string_view pick(const A& a) {
    return a[rng_.below(a.size())];
  }

  static std::string lower(std::string_view s) {
    std::string r(s);
    for (auto& c : r) c = static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
    return r;
  }

  std::string fresh_name() {
    for (;;) {
      std::string name(pick(kNameWords));
      if (rng_.bernoulli(0.4)) {
        std::string second(pick(kNameWords));
        second[0] = static_cast<char>(second[0] - 'a' + 'A');
        name += second;
      }
      bool used = false;
      for (const auto& v : fields_) used |= v.name == name;
      for (const auto& v : locals_) used |= v.name == name;
      if (!used && name != "max" && name != "min") return name;
    }
  }

  void indent() { out_.append(static_cast<std::size_t>(depth_) * 4, ' '); }

  const Var* any_of(VarType t) {
    std::vector<const Var*> c;
    for (const auto& v : locals_)
      if (v.type == t) c.push_back(&v);
    for (const auto& v : fields_)
      if (v.type == t) c.push_back(&v);
    if (c.empty()) return nullptr;
    return c[rng_.below(c.size())];
  }

  std::string int_literal() {
    const double r = rng_.uniform();
    if (r < 0.1) return "0x" + hex(rng_.below(256));
    if (r < 0.15) return std::to_string(rng_.below(1000)) + "L";
    return std::to_string(rng_.below(r < 0.8 ? 10 : 100));
  }

  static std::string hex(std::uint64_t v) {
    static constexpr char kDigits[] = "0123456789ABCDEF";
    std::string s;
    s += kDigits[(v >> 4) & 15];
    s += kDigits[v & 15];
    return s;
  }

  std::string double_literal() {
    return std::to_string(rng_.below(20)) + "." + std::to_string(rng_.below(10)) + (rng_.bernoulli(0.2) ? "f" : "");
  }

  std::string string_literal() {
    std::string s = "\"" + std::string(pick(kStringWords));
    if (rng_.bernoulli(0.2)) s += "\\n";
    if (rng_.bernoulli(0.3)) s += " " + std::string(pick(kStringWords));
    return s + "\"";
  }

  std::string int_expr(int depth) {
    const double r = rng_.uniform();
    if (depth <= 0 || r < 0.45) {
      if (const Var* v = any_of(VarType::Int); v && rng_.bernoulli(0.65)) return v->name;
      if (const Var* a = any_of(VarType::IntArray); a && rng_.bernoulli(0.2)) return a->name + ".length";
      return int_literal();
    }
    if (r < 0.85) {
      static constexpr std::array<std::string_view, 5> kOps = {"+", "-", "*", "/", "%"};
      return int_expr(depth - 1) + " " + std::string(pick(kOps)) + " " + int_expr(depth - 1);
    }
    if (r < 0.93) return "(" + int_expr(depth - 1) + ")";
    return std::string(rng_.bernoulli(0.5) ? "Math.max(" : "Math.min(") + int_expr(depth - 1) + ", " +
           int_expr(depth - 1) + ")";
  }

  std::string comparison() {
    static constexpr std::array<std::string_view, 6> kCmp = {"<", ">", "<=", ">=", "==", "!="};
    return int_expr(1) + " " + std::string(pick(kCmp)) + " " + int_expr(0);
  }

  std::string bool_expr(int depth) {
    const double r = rng_.uniform();
    if (depth <= 0 || r < 0.4) {
      if (const Var* v = any_of(VarType::Bool); v && rng_.bernoulli(0.5)) return (rng_.bernoulli(0.25) ? "!" : "") + v->name;
      if (rng_.bernoulli(0.2)) return rng_.bernoulli(0.5) ? "true" : "false";
      return comparison();
    }
    if (r < 0.85) return bool_expr(depth - 1) + (rng_.bernoulli(0.5) ? " && " : " || ") + bool_expr(depth - 1);
    return "!(" + bool_expr(depth - 1) + ")";
  }

  std::string string_expr() {
    if (const Var* s = any_of(VarType::String); s && rng_.bernoulli(0.5)) return s->name + " + " + string_literal();
    if (rng_.bernoulli(0.3)) return string_literal() + " + " + int_expr(0);
    return string_literal();
  }

  void field() {
    const double r = rng_.uniform();
    Var v{fresh_name(), VarType::Int};
    out_ += "    private ";
    if (r < 0.45) {
      out_ += "int " + v.name + " = " + int_literal() + ";\n";
    } else if (r < 0.65) {
      v.type = VarType::Bool;
      out_ += "boolean " + v.name + " = " + (rng_.bernoulli(0.5) ? "true" : "false") + ";\n";
    } else if (r < 0.85) {
      v.type = VarType::String;
      out_ += "String " + v.name + " = " + string_literal() + ";\n";
    } else {
      v.type = VarType::Double;
      out_ += "double " + v.name + " = " + double_literal() + ";\n";
    }
    fields_.push_back(v);
  }

  void method() {
    locals_.clear();
    const double r = rng_.uniform();
    VarType ret = r < 0.5 ? VarType::Int : (r < 0.7 ? VarType::Bool : (r < 0.85 ? VarType::String : VarType::Int));
    const bool is_void = r >= 0.85;
    std::string name = std::string(pick(kVerbs));
    std::string suffix(pick(kNameWords));
    suffix[0] = static_cast<char>(suffix[0] - 'a' + 'A');
    name += suffix;
    out_ += "    public ";
    out_ += is_void ? "void" : (ret == VarType::Int ? "int" : ret == VarType::Bool ? "boolean" : "String");
    out_ += " " + name + "(";
    const auto nparams = rng_.between(0, 3);
    for (std::int64_t p = 0; p < nparams; ++p) {
      Var v{fresh_name(), rng_.bernoulli(0.8) ? VarType::Int : VarType::Bool};
      if (p) out_ += ", ";
      out_ += (v.type == VarType::Int ? "int " : "boolean ") + v.name;
      locals_.push_back(v);
    }
    out_ += ") {\n";
    depth_ = 2;
    const auto nstmts = rng_.between(4, 9);
    for (std::int64_t s = 0; s < nstmts; ++s) statement(2);
    if (!is_void) {
      indent();
      out_ += "return ";
      out_ += ret == VarType::Int ? int_expr(2) : ret == VarType::Bool ? bool_expr(1) : string_expr();
      out_ += ";\n";
    }
    depth_ = 1;
    out_ += "    }\n";
  }

  void block(int budget) {
    out_ += " {\n";
    ++depth_;
    const auto saved = locals_.size();
    const auto n = rng_.between(1, 3);
    for (std::int64_t s = 0; s < n; ++s) statement(budget - 1);
    locals_.resize(saved);
    --depth_;
    indent();
    out_ += "}";
  }

  void statement(int budget) {
    const double r = rng_.uniform();
    if (r < 0.05) {
      indent();
      out_ += "// " + std::string(pick(kVerbs)) + " the " + std::string(pick(kNameWords)) + "\n";
      return;
    }
    indent();
    if (r < 0.22) {
      Var v{fresh_name(), VarType::Int};
      out_ += "int " + v.name + " = " + int_expr(2) + ";\n";
      locals_.push_back(v);
    } else if (r < 0.32) {
      Var v{fresh_name(), VarType::Bool};
      out_ += "boolean " + v.name + " = " + bool_expr(2) + ";\n";
      locals_.push_back(v);
    } else if (r < 0.38) {
      Var v{fresh_name(), VarType::String};
      out_ += "String " + v.name + " = " + string_expr() + ";\n";
      locals_.push_back(v);
    } else if (r < 0.41) {
      Var v{fresh_name(), VarType::Double};
      out_ += "double " + v.name + " = " + double_literal() + " * " + int_expr(0) + ";\n";
      locals_.push_back(v);
    } else if (r < 0.44) {
      Var v{fresh_name(), VarType::IntArray};
      out_ += "int[] " + v.name + " = new int[" + std::to_string(rng_.between(2, 16)) + "];\n";
      locals_.push_back(v);
    } else if (r < 0.56) {
      const Var* v = any_of(VarType::Int);
      if (!v) {
        out_ += "int " + fresh_name() + " = " + int_literal() + ";\n";
        return;
      }
      static constexpr std::array<std::string_view, 10> kCompound = {"+=", "-=", "*=", "/=", "%=",
                                                                    "&=", "|=", "^=", "<<=", ">>="};
      const bool simple = rng_.bernoulli(0.35);
      out_ += v->name + " " + (simple ? std::string("=") : std::string(pick(kCompound))) + " " + int_expr(1) + ";\n";
    } else if (r < 0.6) {
      if (const Var* s = any_of(VarType::String)) {
        out_ += s->name + " += " + string_literal() + ";\n";
      } else {
        out_ += "System.out.println(" + string_expr() + ");\n";
      }
    } else if (r < 0.64) {
      if (const Var* a = any_of(VarType::IntArray)) {
        out_ += a->name + "[" + int_literal() + "] = " + int_expr(1) + ";\n";
      } else {
        out_ += "System.out.println(" + int_expr(1) + ");\n";
      }
    } else if (r < 0.7) {
      const Var* b = any_of(VarType::Bool);
      if (b)
        out_ += b->name + " = " + bool_expr(2) + ";\n";
      else
        out_ += "boolean " + fresh_name() + " = " + bool_expr(1) + ";\n";
    } else if (r < 0.76) {
      out_ += std::string(pick(kVerbs)) + "(" + int_expr(1) + ", " + bool_expr(0) + ");\n";
    } else if (budget <= 0 || r < 0.8) {
      out_ += "System.out.println(" + string_expr() + ");\n";
    } else if (r < 0.88) {
      out_ += "if (" + bool_expr(2) + ")";
      block(budget);
      if (rng_.bernoulli(0.4)) {
        out_ += " else";
        block(budget);
      }
      out_ += "\n";
    } else if (r < 0.95) {
      const std::string i = rng_.bernoulli(0.5) ? "i" : "j";
      const bool shadow = [&] {
        for (const auto& v : locals_)
          if (v.name == i) return true;
        return false;
      }();
      if (shadow) {
        out_ += "System.out.println(" + string_expr() + ");\n";
        return;
      }
      out_ += "for (int " + i + " = 0; " + i + " < " + int_expr(0) + "; " + i + "++)";
      locals_.push_back({i, VarType::Int});
      block(budget);
      locals_.pop_back();
      out_ += "\n";
    } else {
      out_ += "while (" + bool_expr(1) + ")";
      block(budget);
      out_ += "\n";
    }
  }

  Rng rng_;
  std::string out_;
  std::vector<Var> fields_;
  std::vector<Var> locals_;
  int depth_ = 1;
};

}  // namespace detail

/// One synthetic file; depends only on (seed, index).
inline std::string gen_java_file(std::uint64_t seed, std::size_t index) {
  detail::JavaGenerator g(Rng::mix(seed, index));
  return g.file();
}

inline std::vector<std::string> gen_corpus(std::uint64_t seed, std::size_t file_count) {
  std::vector<std::string> files(file_count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(file_count); ++i)
    files[static_cast<std::size_t>(i)] = gen_java_file(seed, static_cast<std::size_t>(i));
  return files;
}

}  // namespace apmae
