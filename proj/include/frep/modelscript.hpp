#pragma once

// A small declarative language for FRep models (.frep files).
//
//   program   := (paramDecl | letDecl)* "output" expr ";"
//   paramDecl := "param" ident "=" num ("in" "[" num "," num "]")? ";"
//   letDecl   := "let" ident "=" expr ";"
//   expr      := term (("+" | "-") term)*
//   term      := unary (("*" | "/") unary)*
//   unary     := "-" unary | atom
//   atom      := number | ident | ident "(" args? ")" | "(" expr ")"
//              | "(" expr "," expr ("," expr)? ")"
//   args      := arg ("," arg)*      arg := ident "=" expr | expr
//   num       := "-"? number
//
// '#' starts a comment that runs to the end of the line. The identifiers x, y,
// z (coordinates) and pi are predefined.

#include "frep/geom.hpp"

#include <array>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace frep::modelscript {

struct SourceSpan {
  std::size_t start = 0, end = 0;  // byte offsets, end exclusive
  int line = 1, col = 1;           // of start, 1-based; col counts code points
};

/// what() is "file:line:col: message".
class ScriptError : public std::runtime_error {
 public:
  ScriptError(std::string file, SourceSpan span, std::string message);
  const std::string& file() const { return file_; }
  const SourceSpan& span() const { return span_; }
  const std::string& message() const { return message_; }

 private:
  std::string file_;
  SourceSpan span_;
  std::string message_;
};

enum class Tok {
  ident, number, kw_param, kw_let, kw_output, kw_in,
  lparen, rparen, lbracket, rbracket, comma, semicolon, assign, plus, minus, star, slash,
  end,
};
const char* token_name(Tok t);

struct Token {
  Tok kind = Tok::end;
  std::string text;
  double number = 0;
  SourceSpan span;
};

/// The result always ends with a Tok::end token.
std::vector<Token> tokenize(std::string_view source, const std::string& file = "<input>");

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Arg {
  std::string name;  // empty for positional
  ExprPtr value;
  SourceSpan span;
};

struct Expr {
  enum class Kind { number, ident, unary, binary, call, tuple } kind = Kind::number;
  double number = 0;
  std::string name;            // ident or callee
  char op = 0;                 // unary '-', binary + - * /
  std::vector<ExprPtr> items;  // unary: 1, binary: 2, tuple: 2-3
  std::vector<Arg> args;       // call
  SourceSpan span;
};

struct Decl {
  enum class Kind { param, let } kind = Kind::let;
  std::string name;
  SourceSpan name_span;
  double init = 0;  // param
  std::optional<std::array<double, 2>> bounds;
  ExprPtr expr;  // let
};

struct Program {
  std::vector<Decl> decls;
  ExprPtr output;
  SourceSpan output_span;

  std::size_t param_count() const;
  std::size_t let_count() const;
};

/// Structural equality, ignoring spans.
bool operator==(const Expr& a, const Expr& b);
bool operator==(const Program& a, const Program& b);

Program parse(const std::vector<Token>& tokens, const std::string& file = "<input>");
Program parse(std::string_view source, const std::string& file = "<input>");

/// Canonical source text; parse(print(p)) == p.
std::string print(const Program& p);
std::string print(const Expr& e);

enum class ArgType { scalar, vec3, integer, real };  // integer/real must fold to compile-time constants

struct ParamSig {
  const char* name;
  ArgType type;
  std::optional<std::array<double, 3>> fallback;  // default; scalars use element 0
};

struct Builtin {
  const char* name;
  std::vector<ParamSig> params;
  const char* doc;
};

/// Every callable builtin, sorted by name.
const std::vector<Builtin>& builtins();
const Builtin* find_builtin(std::string_view name);
/// Predefined identifiers (x, y, z, pi).
bool is_predefined(std::string_view name);

struct Model {
  Program program;
  geom::Field field;
  geom::ParamSet params;
  std::optional<std::array<double, 6>> bounds;  // from a "# bounds: x0,y0,z0,x1,y1,z1" comment
};

Model compile(const Program& program, const std::string& file = "<input>");
Model compile_source(std::string_view source, const std::string& file = "<input>");
/// Reads and compiles a file; errors use the path as the file name. Throws
/// std::runtime_error if the file cannot be read.
Model load(const std::string& path);

/// The first "# bounds:" comment, if any. Throws ScriptError on a malformed one.
std::optional<std::array<double, 6>> find_bounds(std::string_view source, const std::string& file = "<input>");

/// Names of every builtin called anywhere in the program.
std::vector<std::string> called_builtins(const Program& p);

}  // namespace frep::modelscript
