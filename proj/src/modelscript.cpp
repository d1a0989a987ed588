#include "frep/modelscript.hpp"

#include "frep/normalize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace frep::modelscript {

namespace {

std::string located(const std::string& file, const SourceSpan& s, const std::string& msg) {
  return file + ":" + std::to_string(s.line) + ":" + std::to_string(s.col) + ": " + msg;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

const std::map<std::string_view, Tok> kKeywords = {
    {"param", Tok::kw_param}, {"let", Tok::kw_let}, {"output", Tok::kw_output}, {"in", Tok::kw_in}};

}  // namespace

ScriptError::ScriptError(std::string file, SourceSpan span, std::string message)
    : std::runtime_error(located(file, span, message)),
      file_(std::move(file)),
      span_(span),
      message_(std::move(message)) {}

const char* token_name(Tok t) {
  switch (t) {
    case Tok::ident: return "identifier";
    case Tok::number: return "number";
    case Tok::kw_param: return "'param'";
    case Tok::kw_let: return "'let'";
    case Tok::kw_output: return "'output'";
    case Tok::kw_in: return "'in'";
    case Tok::lparen: return "'('";
    case Tok::rparen: return "')'";
    case Tok::lbracket: return "'['";
    case Tok::rbracket: return "']'";
    case Tok::comma: return "','";
    case Tok::semicolon: return "';'";
    case Tok::assign: return "'='";
    case Tok::plus: return "'+'";
    case Tok::minus: return "'-'";
    case Tok::star: return "'*'";
    case Tok::slash: return "'/'";
    case Tok::end: return "end of input";
  }
  return "?";
}

// ---------------------------------------------------------------- lexer

std::vector<Token> tokenize(std::string_view src, const std::string& file) {
  std::vector<Token> out;
  std::size_t i = 0;
  int line = 1, col = 1;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      const auto c = static_cast<unsigned char>(src[i]);
      if (c == '\n') {
        ++line;
        col = 1;
      } else if ((c & 0xC0) != 0x80) {
        ++col;
      }
    }
  };
  auto here = [&] { return SourceSpan{i, i, line, col}; };

  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.span = here();
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && is_ident_char(src[j])) ++j;
      t.text = std::string(src.substr(i, j - i));
      auto kw = kKeywords.find(t.text);
      t.kind = kw == kKeywords.end() ? Tok::ident : kw->second;
      advance(j - i);
    } else if (is_digit(c) || (c == '.' && i + 1 < src.size() && is_digit(src[i + 1]))) {
      std::size_t j = i;
      while (j < src.size() && is_digit(src[j])) ++j;
      if (j < src.size() && src[j] == '.') {
        ++j;
        while (j < src.size() && is_digit(src[j])) ++j;
      }
      bool bad = false;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        ++j;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j >= src.size() || !is_digit(src[j])) bad = true;
        while (j < src.size() && is_digit(src[j])) ++j;
      }
      while (j < src.size() && (is_ident_char(src[j]) || src[j] == '.')) {
        bad = true;
        ++j;
      }
      t.text = std::string(src.substr(i, j - i));
      t.span.end = j;
      if (bad) throw ScriptError(file, t.span, "malformed number '" + t.text + "'");
      std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      t.kind = Tok::number;
      advance(j - i);
    } else {
      switch (c) {
        case '(': t.kind = Tok::lparen; break;
        case ')': t.kind = Tok::rparen; break;
        case '[': t.kind = Tok::lbracket; break;
        case ']': t.kind = Tok::rbracket; break;
        case ',': t.kind = Tok::comma; break;
        case ';': t.kind = Tok::semicolon; break;
        case '=': t.kind = Tok::assign; break;
        case '+': t.kind = Tok::plus; break;
        case '-': t.kind = Tok::minus; break;
        case '*': t.kind = Tok::star; break;
        case '/': t.kind = Tok::slash; break;
        default: {
          std::size_t j = i + 1;
          while (j < src.size() && (static_cast<unsigned char>(src[j]) & 0xC0) == 0x80) ++j;
          t.span.end = j;
          throw ScriptError(file, t.span, "illegal character '" + std::string(src.substr(i, j - i)) + "'");
        }
      }
      t.text = std::string(1, c);
      advance(1);
    }
    t.span.end = i;
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = Tok::end;
  end.span = here();
  out.push_back(end);
  return out;
}

// ---------------------------------------------------------------- AST

std::size_t Program::param_count() const {
  return std::size_t(std::count_if(decls.begin(), decls.end(), [](const Decl& d) { return d.kind == Decl::Kind::param; }));
}

std::size_t Program::let_count() const { return decls.size() - param_count(); }

bool operator==(const Expr& a, const Expr& b) {
  if (a.kind != b.kind || a.number != b.number || a.name != b.name || a.op != b.op) return false;
  if (a.items.size() != b.items.size() || a.args.size() != b.args.size()) return false;
  for (std::size_t i = 0; i < a.items.size(); ++i)
    if (!(*a.items[i] == *b.items[i])) return false;
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (a.args[i].name != b.args[i].name || !(*a.args[i].value == *b.args[i].value)) return false;
  return true;
}

bool operator==(const Program& a, const Program& b) {
  if (a.decls.size() != b.decls.size() || !a.output || !b.output || !(*a.output == *b.output)) return false;
  for (std::size_t i = 0; i < a.decls.size(); ++i) {
    const Decl &x = a.decls[i], &y = b.decls[i];
    if (x.kind != y.kind || x.name != y.name) return false;
    if (x.kind == Decl::Kind::param) {
      if (x.init != y.init || x.bounds != y.bounds) return false;
    } else if (!(*x.expr == *y.expr)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- parser

namespace {

class Parser {
 public:
  Parser(const std::vector<Token>& toks, const std::string& file) : toks_(toks), file_(file) {
    if (toks_.empty() || toks_.back().kind != Tok::end) throw std::invalid_argument("token stream must end with Tok::end");
  }

  Program program() {
    Program p;
    for (;;) {
      const Token& t = peek();
      if (t.kind == Tok::kw_param) {
        p.decls.push_back(param_decl());
      } else if (t.kind == Tok::kw_let) {
        p.decls.push_back(let_decl());
      } else if (t.kind == Tok::kw_output) {
        p.output_span = take().span;
        p.output = expr();
        expect(Tok::semicolon, "';' or an operator");
        if (peek().kind != Tok::end) fail("end of input (only one output statement is allowed)");
        return p;
      } else {
        fail("'param', 'let' or 'output'");
      }
    }
  }

 private:
  const Token& peek(std::size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& take() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::ident: return "identifier '" + t.text + "'";
      case Tok::number: return "number '" + t.text + "'";
      case Tok::end: return "end of input";
      default: return token_name(t.kind);
    }
  }

  [[noreturn]] void fail(const std::string& expected) const {
    throw ScriptError(file_, peek().span, "expected " + expected + ", found " + describe(peek()));
  }

  const Token& expect(Tok kind, const std::string& expected = "") {
    if (peek().kind != kind) fail(expected.empty() ? token_name(kind) : expected);
    return take();
  }

  double signed_number() {
    const bool neg = peek().kind == Tok::minus;
    if (neg) take();
    const double v = expect(Tok::number, neg ? "number" : "number or '-'").number;
    return neg ? -v : v;
  }

  Decl param_decl() {
    take();
    Decl d;
    d.kind = Decl::Kind::param;
    const Token& name = expect(Tok::ident);
    d.name = name.text;
    d.name_span = name.span;
    expect(Tok::assign);
    d.init = signed_number();
    if (peek().kind == Tok::kw_in) {
      take();
      expect(Tok::lbracket);
      const double lo = signed_number();
      expect(Tok::comma);
      const double hi = signed_number();
      expect(Tok::rbracket);
      d.bounds = std::array<double, 2>{lo, hi};
      expect(Tok::semicolon);
    } else {
      expect(Tok::semicolon, "'in' or ';'");
    }
    return d;
  }

  Decl let_decl() {
    take();
    Decl d;
    d.kind = Decl::Kind::let;
    const Token& name = expect(Tok::ident);
    d.name = name.text;
    d.name_span = name.span;
    expect(Tok::assign);
    d.expr = expr();
    expect(Tok::semicolon, "';' or an operator");
    return d;
  }

  static SourceSpan join(const SourceSpan& a, const SourceSpan& b) {
    SourceSpan s = a;
    s.end = b.end;
    return s;
  }

  ExprPtr binary(char op, ExprPtr l, ExprPtr r) {
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::binary;
    e->op = op;
    e->span = join(l->span, r->span);
    e->items = {std::move(l), std::move(r)};
    return e;
  }

  ExprPtr expr() {
    ExprPtr lhs = term();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const char op = take().text[0];
      lhs = binary(op, lhs, term());
    }
    return lhs;
  }

  ExprPtr term() {
    ExprPtr lhs = unary();
    while (peek().kind == Tok::star || peek().kind == Tok::slash) {
      const char op = take().text[0];
      lhs = binary(op, lhs, unary());
    }
    return lhs;
  }

  ExprPtr unary() {
    if (peek().kind != Tok::minus) return atom();
    const SourceSpan s = take().span;
    auto e = std::make_shared<Expr>();
    e->kind = Expr::Kind::unary;
    e->op = '-';
    e->items = {unary()};
    e->span = join(s, e->items[0]->span);
    return e;
  }

  ExprPtr atom() {
    const Token& t = peek();
    auto e = std::make_shared<Expr>();
    e->span = t.span;
    if (t.kind == Tok::number) {
      e->kind = Expr::Kind::number;
      e->number = take().number;
      return e;
    }
    if (t.kind == Tok::ident) {
      e->name = take().text;
      if (peek().kind != Tok::lparen) {
        e->kind = Expr::Kind::ident;
        return e;
      }
      e->kind = Expr::Kind::call;
      take();
      if (peek().kind != Tok::rparen) {
        for (;;) {
          Arg a;
          a.span = peek().span;
          if (peek().kind == Tok::ident && peek(1).kind == Tok::assign) {
            a.name = take().text;
            take();
          }
          a.value = expr();
          a.span = join(a.span, a.value->span);
          e->args.push_back(std::move(a));
          if (peek().kind != Tok::comma) break;
          take();
        }
      }
      e->span = join(e->span, expect(Tok::rparen, "',' or ')'").span);
      return e;
    }
    if (t.kind == Tok::lparen) {
      take();
      ExprPtr first = expr();
      if (peek().kind == Tok::rparen) {
        take();
        return first;
      }
      e->kind = Expr::Kind::tuple;
      e->items.push_back(first);
      while (peek().kind == Tok::comma) {
        take();
        if (e->items.size() == 3) throw ScriptError(file_, peek().span, "tuples have 2 or 3 elements");
        e->items.push_back(expr());
      }
      e->span = join(e->span, expect(Tok::rparen, "',', ')' or an operator").span);
      return e;
    }
    fail("a number, identifier, '(' or '-'");
  }

  const std::vector<Token>& toks_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

Program parse(const std::vector<Token>& tokens, const std::string& file) { return Parser(tokens, file).program(); }

Program parse(std::string_view source, const std::string& file) { return parse(tokenize(source, file), file); }

// ---------------------------------------------------------------- printer

namespace {

int precedence(const Expr& e) {
  if (e.kind == Expr::Kind::binary) return e.op == '+' || e.op == '-' ? 1 : 2;
  if (e.kind == Expr::Kind::unary) return 3;
  return 4;
}

void print_expr(const Expr& e, std::string& out);

void print_child(const Expr& e, bool parens, std::string& out) {
  if (parens) out += '(';
  print_expr(e, out);
  if (parens) out += ')';
}

void print_expr(const Expr& e, std::string& out) {
  switch (e.kind) {
    case Expr::Kind::number: out += fmt::format("{}", e.number); break;
    case Expr::Kind::ident: out += e.name; break;
    case Expr::Kind::unary:
      out += '-';
      print_child(*e.items[0], precedence(*e.items[0]) < 3, out);
      break;
    case Expr::Kind::binary: {
      const int p = precedence(e);
      print_child(*e.items[0], precedence(*e.items[0]) < p, out);
      out += ' ';
      out += e.op;
      out += ' ';
      print_child(*e.items[1], precedence(*e.items[1]) <= p, out);
      break;
    }
    case Expr::Kind::call:
      out += e.name;
      out += '(';
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) out += ", ";
        if (!e.args[i].name.empty()) out += e.args[i].name + "=";
        print_expr(*e.args[i].value, out);
      }
      out += ')';
      break;
    case Expr::Kind::tuple:
      out += '(';
      for (std::size_t i = 0; i < e.items.size(); ++i) {
        if (i) out += ", ";
        print_expr(*e.items[i], out);
      }
      out += ')';
      break;
  }
}

}  // namespace

std::string print(const Expr& e) {
  std::string out;
  print_expr(e, out);
  return out;
}

std::string print(const Program& p) {
  std::string out;
  for (const Decl& d : p.decls) {
    if (d.kind == Decl::Kind::param) {
      out += fmt::format("param {} = {}", d.name, d.init);
      if (d.bounds) out += fmt::format(" in [{}, {}]", (*d.bounds)[0], (*d.bounds)[1]);
      out += ";\n";
    } else {
      out += "let " + d.name + " = " + print(*d.expr) + ";\n";
    }
  }
  out += "output " + print(*p.output) + ";\n";
  return out;
}

// ---------------------------------------------------------------- builtins

namespace {

using geom::Field;
using geom::Vec3;

struct Value {
  int dim = 1;
  std::array<Field, 3> f;
  std::array<std::optional<double>, 3> k;  // compile-time constant, if known

  static Value scalar(Field x, std::optional<double> c = std::nullopt) {
    Value v;
    v.f[0] = std::move(x);
    v.k[0] = c;
    return v;
  }
  static Value folded(double c) { return scalar(geom::constant(c), c); }
  Vec3 vec() const { return {f[0], f[1], f[2]}; }
};

class Args {
 public:
  explicit Args(std::vector<Value> v) : v_(std::move(v)) {}
  const Field& s(std::size_t i) const { return v_[i].f[0]; }
  Vec3 v(std::size_t i) const { return v_[i].vec(); }
  int i(std::size_t k) const { return int(*v_[k].k[0]); }
  double r(std::size_t k) const { return *v_[k].k[0]; }

 private:
  std::vector<Value> v_;
};

using Impl = std::function<Field(const Args&)>;

struct Entry {
  Builtin sig;
  Impl impl;
};

constexpr std::array<double, 3> kOrigin{0, 0, 0};

ParamSig S(const char* n) { return {n, ArgType::scalar, std::nullopt}; }
ParamSig S(const char* n, double d) { return {n, ArgType::scalar, std::array<double, 3>{d, 0, 0}}; }
ParamSig V(const char* n) { return {n, ArgType::vec3, std::nullopt}; }
ParamSig V(const char* n, std::array<double, 3> d) { return {n, ArgType::vec3, d}; }
ParamSig I(const char* n) { return {n, ArgType::integer, std::nullopt}; }
ParamSig I(const char* n, int d) { return {n, ArgType::integer, std::array<double, 3>{double(d), 0, 0}}; }
ParamSig R(const char* n) { return {n, ArgType::real, std::nullopt}; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto add = [&](const char* name, std::vector<ParamSig> params, const char* doc, Impl impl) {
      t.push_back({Builtin{name, std::move(params), doc}, std::move(impl)});
    };
    using A = const Args&;
    // FRep primitives
    add("sphere", {V("center", kOrigin), S("r")}, "r^2 - |x - center|^2",
        [](A a) { return geom::sphere(a.v(0), a.s(1)); });
    add("ellipsoid", {V("center", kOrigin), V("axes")}, "1 - sum((x - center) / axes)^2",
        [](A a) { return geom::ellipsoid(a.v(0), a.v(1)); });
    add("block", {V("vertex"), S("dx"), S("dy"), S("dz")}, "box from `vertex` with side lengths dx, dy, dz",
        [](A a) { return geom::block(a.v(0), a.s(1), a.s(2), a.s(3)); });
    add("block_min", {V("vertex"), S("dx"), S("dy"), S("dz")}, "block built with min instead of R-intersection",
        [](A a) { return geom::block_min(a.v(0), a.s(1), a.s(2), a.s(3)); });
    add("cylX", {V("center", kOrigin), S("r")}, "infinite cylinder along x",
        [](A a) { return geom::cyl_x(a.v(0), a.s(1)); });
    add("cylY", {V("center", kOrigin), S("r")}, "infinite cylinder along y",
        [](A a) { return geom::cyl_y(a.v(0), a.s(1)); });
    add("cylZ", {V("center", kOrigin), S("r")}, "infinite cylinder along z",
        [](A a) { return geom::cyl_z(a.v(0), a.s(1)); });
    add("cone", {V("center", kOrigin), S("r")}, "double cone about z, radius r at unit height",
        [](A a) { return geom::cone(a.v(0), a.s(1)); });
    add("torus", {V("center", kOrigin), S("major"), S("minor")}, "torus about z",
        [](A a) { return geom::torus(a.v(0), a.s(1), a.s(2)); });
    add("halfspace", {V("normal"), V("point", kOrigin)}, "normal . (point - x)",
        [](A a) { return geom::halfspace(a.v(0), a.v(1)); });
    add("gyroid", {S("scale", 1)}, "gyroid TPMS", [](A a) { return geom::gyroid(a.s(0)); });
    add("schwarz_d", {S("scale", 1)}, "Schwarz D TPMS", [](A a) { return geom::schwarz_d(a.s(0)); });
    add("schwarz_p", {S("scale", 1)}, "Schwarz P TPMS", [](A a) { return geom::schwarz_p(a.s(0)); });
    add("lidinoid", {S("scale", 1)}, "lidinoid TPMS", [](A a) { return geom::lidinoid(a.s(0)); });
    // R-function set operations
    add("union", {S("a"), S("b")}, "R-union", [](A a) { return geom::r_union(a.s(0), a.s(1)); });
    add("intersection", {S("a"), S("b")}, "R-intersection", [](A a) { return geom::r_intersection(a.s(0), a.s(1)); });
    add("difference", {S("a"), S("b")}, "a minus b", [](A a) { return geom::difference(a.s(0), a.s(1)); });
    add("complement", {S("a")}, "-a", [](A a) { return geom::complement(a.s(0)); });
    add("minmax_union", {S("a"), S("b")}, "max(a, b)", [](A a) { return geom::minmax_union(a.s(0), a.s(1)); });
    add("minmax_intersection", {S("a"), S("b")}, "min(a, b)",
        [](A a) { return geom::minmax_intersection(a.s(0), a.s(1)); });
    // transforms and repetition
    add("translate", {S("f"), V("by")}, "f(x - by)", [](A a) { return geom::translate(a.s(0), a.v(1)); });
    add("rotate", {S("f"), V("axis"), S("angle")}, "rotation by angle (radians) about axis",
        [](A a) { return geom::rotate(a.s(0), a.v(1), a.s(2)); });
    add("scale", {S("f"), S("s")}, "uniform scale", [](A a) { return geom::scale(a.s(0), a.s(1)); });
    add("scale3", {S("f"), V("s")}, "per-axis scale", [](A a) { return geom::scale3(a.s(0), a.v(1)); });
    add("repeat_saw", {S("f"), I("axis"), S("period")}, "sawtooth repetition along axis 0, 1 or 2",
        [](A a) { return geom::repeat_saw(a.s(0), a.i(1), a.s(2)); });
    add("repeat_tri", {S("f"), I("axis"), S("period")}, "triangle-wave repetition",
        [](A a) { return geom::repeat_tri(a.s(0), a.i(1), a.s(2)); });
    add("repeat_fourier", {S("f"), I("axis"), S("period"), I("terms", 8)}, "truncated Fourier sawtooth",
        [](A a) { return geom::repeat_fourier(a.s(0), a.i(1), a.s(2), a.i(3)); });
    // signed distance
    add("sdf_sphere", {V("center", kOrigin), S("r")}, "r - |x - center|",
        [](A a) { return geom::sdf_sphere(a.v(0), a.s(1)); });
    add("sdf_box", {V("center", kOrigin), V("size")}, "box with full side lengths",
        [](A a) { return geom::sdf_box(a.v(0), a.v(1)); });
    add("sdf_round_box", {V("center", kOrigin), V("size"), S("radius")}, "box with rounded edges",
        [](A a) { return geom::sdf_round_box(a.v(0), a.v(1), a.s(2)); });
    add("sdf_cylX", {V("center", kOrigin), S("r")}, "", [](A a) { return geom::sdf_cyl_x(a.v(0), a.s(1)); });
    add("sdf_cylY", {V("center", kOrigin), S("r")}, "", [](A a) { return geom::sdf_cyl_y(a.v(0), a.s(1)); });
    add("sdf_cylZ", {V("center", kOrigin), S("r")}, "", [](A a) { return geom::sdf_cyl_z(a.v(0), a.s(1)); });
    add("sdf_torus", {V("center", kOrigin), S("major"), S("minor")}, "",
        [](A a) { return geom::sdf_torus(a.v(0), a.s(1), a.s(2)); });
    add("sdf_plane", {V("normal"), V("point", kOrigin)}, "",
        [](A a) { return geom::sdf_plane(a.v(0), a.v(1)); });
    add("sdf_union", {S("a"), S("b")}, "max(a, b)", [](A a) { return geom::sdf_union(a.s(0), a.s(1)); });
    add("sdf_intersection", {S("a"), S("b")}, "min(a, b)",
        [](A a) { return geom::sdf_intersection(a.s(0), a.s(1)); });
    add("sdf_difference", {S("a"), S("b")}, "min(a, -b)",
        [](A a) { return geom::sdf_difference(a.s(0), a.s(1)); });
    add("sdf_smooth_union", {S("a"), S("b"), S("k")}, "polynomial smooth union",
        [](A a) { return geom::sdf_smooth_union(a.s(0), a.s(1), a.s(2)); });
    add("sdf_smooth_intersection", {S("a"), S("b"), S("k")}, "polynomial smooth intersection",
        [](A a) { return geom::sdf_smooth_intersection(a.s(0), a.s(1), a.s(2)); });
    // math
    for (const char* fn : {"sin", "cos", "exp", "log", "sqrt", "abs", "tanh"})
      add(fn, {S("u")}, "", [fn](A a) { return geom::apply(fn, a.s(0)); });
    add("min", {S("a"), S("b")}, "", [](A a) { return geom::fmin(a.s(0), a.s(1)); });
    add("max", {S("a"), S("b")}, "", [](A a) { return geom::fmax(a.s(0), a.s(1)); });
    add("pow", {S("u"), R("exponent")}, "u^exponent, constant exponent",
        [](A a) { return geom::fpow(a.s(0), a.r(1)); });
    // normalization
    add("omega1", {S("f")}, "f / sqrt(f^2 + |grad f|^2)", [](A a) { return normalize::omega1(a.s(0)); });
    add("omega2", {S("f")}, "second-order normalization", [](A a) { return normalize::omega_k(a.s(0), 2); });
    add("delta1", {S("f")}, "f / |grad f|", [](A a) { return normalize::delta1(a.s(0)); });
    std::sort(t.begin(), t.end(), [](const Entry& x, const Entry& y) { return std::string_view(x.sig.name) < y.sig.name; });
    return t;
  }();
  return table;
}

const Entry* find_entry(std::string_view name) {
  const auto& t = registry();
  auto it = std::lower_bound(t.begin(), t.end(), name,
                             [](const Entry& e, std::string_view n) { return std::string_view(e.sig.name) < n; });
  return it != t.end() && it->sig.name == name ? &*it : nullptr;
}

}  // namespace

const std::vector<Builtin>& builtins() {
  static const std::vector<Builtin> list = [] {
    std::vector<Builtin> out;
    for (const Entry& e : registry()) out.push_back(e.sig);
    return out;
  }();
  return list;
}

const Builtin* find_builtin(std::string_view name) {
  const Entry* e = find_entry(name);
  if (!e) return nullptr;
  const auto& list = builtins();
  return &list[std::size_t(e - registry().data())];
}

bool is_predefined(std::string_view name) { return name == "x" || name == "y" || name == "z" || name == "pi"; }

// ---------------------------------------------------------------- compiler

namespace {

const char* type_phrase(ArgType t) {
  switch (t) {
    case ArgType::scalar: return "a scalar";
    case ArgType::vec3: return "a 3-vector";
    case ArgType::integer: return "a constant integer";
    case ArgType::real: return "a constant number";
  }
  return "";
}

std::string dim_phrase(int dim) { return dim == 1 ? "a scalar" : dim == 2 ? "a 2-vector" : "a 3-vector"; }

class Compiler {
 public:
  explicit Compiler(std::string file) : file_(std::move(file)) {}

  Model run(const Program& p) {
    if (!p.output) throw std::invalid_argument("program has no output expression");
    Model m;
    m.program = p;
    for (const Decl& d : p.decls) {
      check_name(d.name, d.name_span);
      if (d.kind == Decl::Kind::param) {
        geom::ParamEntry e;
        e.name = d.name;
        e.value = d.init;
        if (d.bounds) {
          e.lo = (*d.bounds)[0];
          e.hi = (*d.bounds)[1];
        }
        std::size_t idx;
        try {
          idx = m.params.add(e);
        } catch (const geom::ParamError& err) {
          throw ScriptError(file_, d.name_span, err.what());
        }
        env_[d.name] = {Value::scalar(geom::param(idx)), d.name_span};
      } else {
        env_[d.name] = {eval(*d.expr), d.name_span};
      }
    }
    Value out = eval(*p.output);
    if (out.dim != 1) throw ScriptError(file_, p.output->span, "output must be a scalar field, got " + dim_phrase(out.dim));
    m.field = out.f[0];
    return m;
  }

 private:
  struct Binding {
    Value value;
    SourceSpan span;
  };

  [[noreturn]] void fail(const SourceSpan& s, const std::string& msg) const { throw ScriptError(file_, s, msg); }

  void check_name(const std::string& name, const SourceSpan& s) const {
    if (is_predefined(name) || find_entry(name)) fail(s, "'" + name + "' is a builtin name and cannot be redefined");
    auto it = env_.find(name);
    if (it != env_.end())
      fail(s, "'" + name + "' is already defined at " + std::to_string(it->second.span.line) + ":" +
                  std::to_string(it->second.span.col));
  }

  Value eval(const Expr& e) {
    switch (e.kind) {
      case Expr::Kind::number: return Value::folded(e.number);
      case Expr::Kind::ident: return ident(e);
      case Expr::Kind::unary: {
        Value v = eval(*e.items[0]);
        for (int i = 0; i < v.dim; ++i) {
          v.f[i] = v.k[i] ? geom::constant(-*v.k[i]) : -v.f[i];
          if (v.k[i]) v.k[i] = -*v.k[i];
        }
        return v;
      }
      case Expr::Kind::binary: return binary(e, eval(*e.items[0]), eval(*e.items[1]));
      case Expr::Kind::tuple: {
        Value v;
        v.dim = int(e.items.size());
        for (int i = 0; i < v.dim; ++i) {
          Value c = eval(*e.items[i]);
          if (c.dim != 1) fail(e.items[i]->span, "tuple elements must be scalars, got " + dim_phrase(c.dim));
          v.f[i] = c.f[0];
          v.k[i] = c.k[0];
        }
        return v;
      }
      case Expr::Kind::call: return call(e);
    }
    fail(e.span, "unsupported expression");
  }

  Value ident(const Expr& e) {
    if (e.name == "x" || e.name == "y" || e.name == "z") return Value::scalar(geom::coord(e.name[0] - 'x'));
    if (e.name == "pi") return Value::folded(std::numbers::pi);
    auto it = env_.find(e.name);
    if (it != env_.end()) return it->second.value;
    if (find_entry(e.name)) fail(e.span, "'" + e.name + "' is a function; call it with arguments");
    fail(e.span, "unknown identifier '" + e.name + "'");
  }

  static double fold(char op, double a, double b) {
    switch (op) {
      case '+': return a + b;
      case '-': return a - b;
      case '*': return a * b;
      default: return a / b;
    }
  }

  static Field apply_op(char op, const Field& a, const Field& b) {
    switch (op) {
      case '+': return a + b;
      case '-': return a - b;
      case '*': return a * b;
      default: return a / b;
    }
  }

  static Value scalar_op(char op, const Value& a, int ia, const Value& b, int ib) {
    if (a.k[ia] && b.k[ib]) return Value::folded(fold(op, *a.k[ia], *b.k[ib]));
    return Value::scalar(apply_op(op, a.f[ia], b.f[ib]));
  }

  Value binary(const Expr& e, const Value& a, const Value& b) {
    if (a.dim == 1 && b.dim == 1) return wrap(e.span, [&] { return scalar_op(e.op, a, 0, b, 0); });
    const bool additive = e.op == '+' || e.op == '-';
    const bool ok = additive ? a.dim == b.dim : (e.op == '*' ? (a.dim == 1 || b.dim == 1) : b.dim == 1);
    if (!ok)
      fail(e.span, std::string("cannot apply '") + e.op + "' to " + dim_phrase(a.dim) + " and " + dim_phrase(b.dim));
    Value out;
    out.dim = std::max(a.dim, b.dim);
    for (int i = 0; i < out.dim; ++i) {
      Value c = wrap(e.span, [&] { return scalar_op(e.op, a, a.dim == 1 ? 0 : i, b, b.dim == 1 ? 0 : i); });
      out.f[i] = c.f[0];
      out.k[i] = c.k[0];
    }
    return out;
  }

  template <class Fn>
  auto wrap(const SourceSpan& s, Fn&& fn) const -> decltype(fn()) {
    try {
      return fn();
    } catch (const adiff::Error& err) {
      fail(s, err.what());
    }
  }

  Value call(const Expr& e) {
    const Entry* entry = find_entry(e.name);
    if (!entry) {
      if (env_.count(e.name) || is_predefined(e.name)) fail(e.span, "'" + e.name + "' is not a function");
      fail(e.span, "unknown function '" + e.name + "'");
    }
    const Builtin& sig = entry->sig;
    const std::size_t n = sig.params.size();
    std::vector<const Arg*> slot(n, nullptr);
    bool named_seen = false;
    std::size_t next = 0;
    for (const Arg& a : e.args) {
      std::size_t k;
      if (a.name.empty()) {
        if (named_seen) fail(a.span, "positional argument after a named argument");
        if (next >= n)
          fail(a.span, fmt::format("too many arguments for {} (takes at most {})", sig.name, n));
        k = next++;
      } else {
        named_seen = true;
        auto it = std::find_if(sig.params.begin(), sig.params.end(), [&](const ParamSig& p) { return a.name == p.name; });
        if (it == sig.params.end()) fail(a.span, fmt::format("{} has no parameter '{}'", sig.name, a.name));
        k = std::size_t(it - sig.params.begin());
      }
      if (slot[k]) fail(a.span, fmt::format("argument '{}' of {} given twice", sig.params[k].name, sig.name));
      slot[k] = &a;
    }
    std::vector<Value> values;
    for (std::size_t k = 0; k < n; ++k) {
      const ParamSig& p = sig.params[k];
      if (!slot[k]) {
        if (!p.fallback) fail(e.span, fmt::format("missing argument '{}' for {}", p.name, sig.name));
        const auto& d = *p.fallback;
        Value v = Value::folded(d[0]);
        if (p.type == ArgType::vec3) {
          v.dim = 3;
          for (int i = 0; i < 3; ++i) {
            v.f[i] = geom::constant(d[i]);
            v.k[i] = d[i];
          }
        }
        values.push_back(v);
        continue;
      }
      Value v = eval(*slot[k]->value);
      const int want = p.type == ArgType::vec3 ? 3 : 1;
      bool ok = v.dim == want;
      if (ok && p.type == ArgType::integer) ok = v.k[0] && std::floor(*v.k[0]) == *v.k[0];
      if (ok && p.type == ArgType::real) ok = v.k[0].has_value();
      if (!ok)
        fail(slot[k]->span, fmt::format("argument '{}' of {} must be {}", p.name, sig.name, type_phrase(p.type)));
      values.push_back(std::move(v));
    }
    Args args(std::move(values));
    return Value::scalar(wrap(e.span, [&] { return entry->impl(args); }));
  }

  std::string file_;
  std::map<std::string, Binding> env_;
};

void collect_calls(const Expr& e, std::set<std::string>& out) {
  if (e.kind == Expr::Kind::call) out.insert(e.name);
  for (const auto& i : e.items) collect_calls(*i, out);
  for (const auto& a : e.args) collect_calls(*a.value, out);
}

}  // namespace

Model compile(const Program& program, const std::string& file) { return Compiler(file).run(program); }

Model compile_source(std::string_view source, const std::string& file) {
  Model m = compile(parse(source, file), file);
  m.bounds = find_bounds(source, file);
  return m;
}

Model load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  std::stringstream s;
  s << in.rdbuf();
  return compile_source(s.str(), path);
}

std::optional<std::array<double, 6>> find_bounds(std::string_view source, const std::string& file) {
  constexpr std::string_view kTag = "# bounds:";
  std::size_t pos = 0;
  int line = 1;
  while (pos <= source.size()) {
    std::size_t eol = source.find('\n', pos);
    if (eol == std::string_view::npos) eol = source.size();
    std::string_view l = source.substr(pos, eol - pos);
    std::size_t lead = 0;
    while (lead < l.size() && (l[lead] == ' ' || l[lead] == '\t')) ++lead;
    if (l.substr(lead, kTag.size()) == kTag) {
      std::array<double, 6> b{};
      std::string rest(l.substr(lead + kTag.size()));
      std::replace(rest.begin(), rest.end(), ',', ' ');
      std::istringstream s(rest);
      std::string word;
      std::size_t n = 0;
      bool clean = true;
      while (s >> word) {
        double v;
        const auto r = std::from_chars(word.data(), word.data() + word.size(), v);
        if (r.ec != std::errc() || r.ptr != word.data() + word.size() || n >= 6) {
          clean = false;
          break;
        }
        b[n++] = v;
      }
      SourceSpan span{pos + lead, eol, line, int(lead) + 1};
      if (n != 6 || !clean) throw ScriptError(file, span, "bounds comment needs six numbers x0,y0,z0,x1,y1,z1");
      for (int a = 0; a < 3; ++a)
        if (!(b[a + 3] > b[a])) throw ScriptError(file, span, "bounds comment needs max > min on every axis");
      return b;
    }
    if (eol == source.size()) break;
    pos = eol + 1;
    ++line;
  }
  return std::nullopt;
}

std::vector<std::string> called_builtins(const Program& p) {
  std::set<std::string> names;
  for (const Decl& d : p.decls)
    if (d.expr) collect_calls(*d.expr, names);
  if (p.output) collect_calls(*p.output, names);
  return {names.begin(), names.end()};
}

}  // namespace frep::modelscript
