#pragma once

// Lossless lexer for the Java subset the miner needs. Every byte of the input
// lands in exactly one token, so joining token texts gives back the source.
// `>` is always emitted on its own (except inside `>=`, `>>=`, `>>>=`) so that
// nested generics like `List<List<T>>` close bracket by bracket.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "apmae/errors.hpp"

namespace apmae {

enum class TokenKind : std::uint8_t {
  Keyword,
  Identifier,
  NumericLiteral,
  StringLiteral,
  CharLiteral,
  BooleanLiteral,
  ArithmeticOp,
  BooleanOp,
  CompoundAssignOp,
  SimpleAssign,
  OpenBracket,
  CloseBracket,
  Semicolon,
  Comma,
  Dot,
  Comment,
  Whitespace,
  Other,
};

inline constexpr std::array<std::string_view, 18> kTokenKindNames = {
    "keyword",       "identifier",    "numeric_literal", "string_literal", "char_literal", "boolean_literal",
    "arithmetic_op", "boolean_op",    "compound_assign_op", "simple_assign", "open_bracket", "close_bracket",
    "semicolon",     "comma",         "dot",             "comment",        "whitespace",   "other"};

inline std::string_view to_string(TokenKind k) { return kTokenKindNames.at(static_cast<std::size_t>(k)); }

struct JavaToken {
  TokenKind kind = TokenKind::Other;
  std::string text;
  std::size_t begin = 0;  // byte offset
  std::size_t end = 0;    // one past the last byte

  bool significant() const { return kind != TokenKind::Whitespace && kind != TokenKind::Comment; }
  friend bool operator==(const JavaToken&, const JavaToken&) = default;
};

namespace detail {

inline constexpr std::array<std::string_view, 50> kJavaKeywords = {
    "abstract", "assert",     "boolean",   "break",     "byte",      "case",         "catch",   "char",
    "class",    "const",      "continue",  "default",   "do",        "double",       "else",    "enum",
    "extends",  "final",      "finally",   "float",     "for",       "goto",         "if",      "implements",
    "import",   "instanceof", "int",       "interface", "long",      "native",       "new",     "package",
    "private",  "protected",  "public",    "return",    "short",     "static",       "strictfp", "super",
    "switch",   "synchronized", "this",    "throw",     "throws",    "transient",    "try",     "void",
    "volatile", "while"};

inline bool is_keyword(std::string_view w) {
  if (w == "null") return true;
  for (auto k : kJavaKeywords)
    if (k == w) return true;
  return false;
}

inline bool ident_start(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$' || c >= 0x80;
}
inline bool ident_part(unsigned char c) { return ident_start(c) || (c >= '0' && c <= '9'); }
inline bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
inline bool is_hex(unsigned char c) {
  return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

// Longest-match operator table; `>>` and `>>>` are deliberately absent.
inline constexpr std::array<std::string_view, 35> kOperators = {
    ">>>=", "<<=", ">>=", "...", "->", "::", "++", "--", "&&", "||", "==", "!=",
    "<=",   ">=",  "+=",  "-=",  "*=", "/=", "%=", "&=", "|=", "^=", "<<", "+",
    "-",    "*",   "/",   "%",   "!",  "=",  "<",  ">",  "&",  "|",  "^"};

inline TokenKind operator_kind(std::string_view op) {
  if (op == "+" || op == "-" || op == "*" || op == "/" || op == "%") return TokenKind::ArithmeticOp;
  if (op == "&&" || op == "||" || op == "!") return TokenKind::BooleanOp;
  if (op == "=") return TokenKind::SimpleAssign;
  if (op.size() >= 2 && op.back() == '=' && op != "==" && op != "!=" && op != "<=" && op != ">=")
    return TokenKind::CompoundAssignOp;
  return TokenKind::Other;
}

}  // namespace detail

/// Splits `source` into tokens. Throws LexError (1-based line and column of
/// the opening quote or comment) on unterminated literals and block comments.
inline std::vector<JavaToken> tokenize_java(std::string_view source) {
  using namespace detail;
  std::vector<JavaToken> out;
  const std::size_t n = source.size();
  std::size_t i = 0;

  auto position_error = [&](std::size_t at, const std::string& what) {
    std::size_t l = 1, ls = 0;
    for (std::size_t k = 0; k < at; ++k)
      if (source[k] == '\n') ++l, ls = k + 1;
    throw LexError(what, l, at - ls + 1);
  };
  auto emit = [&](TokenKind kind, std::size_t begin, std::size_t end) {
    out.push_back({kind, std::string(source.substr(begin, end - begin)), begin, end});
  };

  while (i < n) {
    const auto c = static_cast<unsigned char>(source[i]);
    const std::size_t start = i;

    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f') {
      while (i < n && (source[i] == ' ' || source[i] == '\t' || source[i] == '\r' || source[i] == '\n' ||
                       source[i] == '\f'))
        ++i;
      emit(TokenKind::Whitespace, start, i);
      continue;
    }
    if (c == '/' && i + 1 < n && source[i + 1] == '/') {
      while (i < n && source[i] != '\n') ++i;
      emit(TokenKind::Comment, start, i);
      continue;
    }
    if (c == '/' && i + 1 < n && source[i + 1] == '*') {
      const auto close = source.find("*/", i + 2);
      if (close == std::string_view::npos) position_error(start, "unterminated block comment");
      i = close + 2;
      emit(TokenKind::Comment, start, i);
      continue;
    }
    if (c == '"' || c == '\'') {
      ++i;
      bool closed = false;
      while (i < n) {
        const char d = source[i];
        if (d == '\\') {
          if (i + 1 >= n) break;
          i += 2;
          continue;
        }
        if (d == '\n') break;
        ++i;
        if (d == static_cast<char>(c)) {
          closed = true;
          break;
        }
      }
      if (!closed) position_error(start, c == '"' ? "unterminated string literal" : "unterminated char literal");
      emit(c == '"' ? TokenKind::StringLiteral : TokenKind::CharLiteral, start, i);
      continue;
    }
    if (is_digit(c) || (c == '.' && i + 1 < n && is_digit(static_cast<unsigned char>(source[i + 1])))) {
      if (c == '0' && i + 1 < n && (source[i + 1] == 'x' || source[i + 1] == 'X')) {
        i += 2;
        while (i < n && (is_hex(static_cast<unsigned char>(source[i])) || source[i] == '_')) ++i;
      } else {
        while (i < n && (is_digit(static_cast<unsigned char>(source[i])) || source[i] == '_')) ++i;
        if (i < n && source[i] == '.' && !(i + 1 < n && source[i + 1] == '.')) {
          ++i;
          while (i < n && (is_digit(static_cast<unsigned char>(source[i])) || source[i] == '_')) ++i;
        }
        if (i < n && (source[i] == 'e' || source[i] == 'E')) {
          std::size_t k = i + 1;
          if (k < n && (source[k] == '+' || source[k] == '-')) ++k;
          if (k < n && is_digit(static_cast<unsigned char>(source[k]))) {
            i = k;
            while (i < n && is_digit(static_cast<unsigned char>(source[i]))) ++i;
          }
        }
      }
      if (i < n && std::string_view("lLfFdD").find(source[i]) != std::string_view::npos) ++i;
      emit(TokenKind::NumericLiteral, start, i);
      continue;
    }
    if (ident_start(c)) {
      while (i < n && ident_part(static_cast<unsigned char>(source[i]))) ++i;
      const auto word = source.substr(start, i - start);
      TokenKind kind = TokenKind::Identifier;
      if (word == "true" || word == "false")
        kind = TokenKind::BooleanLiteral;
      else if (is_keyword(word))
        kind = TokenKind::Keyword;
      emit(kind, start, i);
      continue;
    }
    switch (c) {
      case '(': case '{': case '[':
        emit(TokenKind::OpenBracket, start, ++i);
        continue;
      case ')': case '}': case ']':
        emit(TokenKind::CloseBracket, start, ++i);
        continue;
      case ';':
        emit(TokenKind::Semicolon, start, ++i);
        continue;
      case ',':
        emit(TokenKind::Comma, start, ++i);
        continue;
      case '.':
        if (source.substr(i, 3) != "...") {
          emit(TokenKind::Dot, start, ++i);
          continue;
        }
        break;
      default:
        break;
    }
    std::string_view matched;
    for (auto op : kOperators)
      if (source.substr(i, op.size()) == op) {
        matched = op;
        break;
      }
    if (!matched.empty()) {
      i += matched.size();
      emit(operator_kind(matched), start, i);
      continue;
    }
    // Anything else (?, :, ~, @, stray bytes) is a one-byte token.
    emit(TokenKind::Other, start, ++i);
  }
  return out;
}

inline std::string join_tokens(const std::vector<JavaToken>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += t.text;
  return s;
}

}  // namespace apmae
