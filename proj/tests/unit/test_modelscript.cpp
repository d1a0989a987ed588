#include "frep/modelscript.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "frep/mesher.hpp"

using namespace frep;
using namespace frep::modelscript;
namespace fs = std::filesystem;

namespace {

const fs::path kModels = fs::path(FREP_SOURCE_DIR) / "models";

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".frep") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Tok> kinds(std::string_view src) {
  std::vector<Tok> out;
  for (const Token& t : tokenize(src)) out.push_back(t.kind);
  return out;
}

ScriptError error_of(std::string_view src) {
  try {
    compile_source(src);
  } catch (const ScriptError& e) {
    return e;
  }
  FAIL("no error for: " << src);
  return ScriptError("", {}, "");
}

double at(const Model& m, double x, double y, double z) {
  adiff::Array p(1, 3);
  p << x, y, z;
  return geom::evaluate(m.field, m.params, p)(0, 0);
}

mesher::GridSpec grid_of(const Model& m, int n) {
  REQUIRE(m.bounds);
  mesher::GridSpec g;
  g.lo = {(*m.bounds)[0], (*m.bounds)[1], (*m.bounds)[2]};
  g.hi = {(*m.bounds)[3], (*m.bounds)[4], (*m.bounds)[5]};
  g.res = {n, n, n};
  return g;
}

}  // namespace

TEST_CASE("tokenizer") {
  using enum Tok;
  CHECK(kinds("let s = sphere(r=1);") ==
        std::vector<Tok>{kw_let, ident, assign, ident, lparen, ident, assign, number, rparen, semicolon, end});
  auto t = tokenize("1.5e-2");
  REQUIRE(t.size() == 2);
  CHECK(t[0].number == 0.015);
  CHECK(tokenize(".5")[0].number == 0.5);
  CHECK(kinds("param in output # comment ( [\n]") == std::vector<Tok>{kw_param, kw_in, kw_output, rbracket, end});

  auto spans = tokenize("let a\n  = 12;");
  CHECK(spans[2].span.line == 2);
  CHECK(spans[2].span.col == 3);
  CHECK(spans[3].span.start == 10);
  CHECK(spans[3].span.end == 12);

  try {
    tokenize("@");
    FAIL("no error");
  } catch (const ScriptError& e) {
    CHECK(std::string(e.what()) == "<input>:1:1: illegal character '@'");
  }
  // Columns count code points, not bytes.
  try {
    tokenize("# é\nlet é = 1;");
    FAIL("no error");
  } catch (const ScriptError& e) {
    CHECK(e.span().line == 2);
    CHECK(e.span().col == 5);
  }
  CHECK_THROWS_AS(tokenize("1e"), ScriptError);
  CHECK_THROWS_AS(tokenize("2pi"), ScriptError);
  CHECK_THROWS_AS(tokenize("1.2.3"), ScriptError);
}

TEST_CASE("precedence and associativity") {
  Program p = parse("output 1+2*3;");
  const Expr& e = *p.output;
  REQUIRE(e.kind == Expr::Kind::binary);
  CHECK(e.op == '+');
  CHECK(e.items[0]->number == 1);
  CHECK(e.items[1]->kind == Expr::Kind::binary);
  CHECK(e.items[1]->op == '*');

  CHECK(print(*parse("output 1 - 2 - 3;").output) == "1 - 2 - 3");
  CHECK(print(*parse("output 1 - (2 - 3);").output) == "1 - (2 - 3)");
  CHECK(print(*parse("output -(x + 1) * -y / (2 * z);").output) == "-(x + 1) * -y / (2 * z)");
  CHECK(print(*parse("output ((x));").output) == "x");
  CHECK(at(compile_source("output 8 / 4 / 2 - 1 - 1;"), 0, 0, 0) == -1.0);
  CHECK(at(compile_source("output -2 * 3 + 10;"), 0, 0, 0) == 4.0);
}

TEST_CASE("parse errors name the span and the expected tokens") {
  try {
    parse("let a = 1\noutput a;");
    FAIL("no error");
  } catch (const ScriptError& e) {
    CHECK(e.span().line == 2);
    CHECK(e.span().col == 1);
    CHECK(e.message() == "expected ';' or an operator, found 'output'");
  }
  try {
    parse("output sphere(r=1 x);", "m.frep");
    FAIL("no error");
  } catch (const ScriptError& e) {
    CHECK(std::string(e.what()) == "m.frep:1:19: expected ',' or ')', found identifier 'x'");
  }
  CHECK_THROWS_WITH(parse("output x; let y = 1;"), doctest::Contains("only one output"));
  CHECK_THROWS_WITH(parse(""), doctest::Contains("expected 'param', 'let' or 'output', found end of input"));
}

TEST_CASE("the drilled-cube model transcribes with seven lets") {
  Model m = load((kModels / "simple_shape.frep").string());
  CHECK(m.program.let_count() == 7);
  CHECK(m.program.param_count() == 0);
  CHECK(m.program.output);
  // Independent evaluation of the same composition at a few points.
  auto rint = [](double a, double b) { return a + b - std::sqrt(a * a + b * b); };
  auto oracle = [&](double x, double y, double z) {
    const double sp = 1 - (x * x + y * y + z * z);
    auto slab = [](double u) { return 0.75 * 0.75 - u * u; };
    const double t1 = rint(sp, rint(rint(slab(x), slab(y)), slab(z)));
    return rint(rint(rint(t1, -(0.25 - y * y - z * z)), -(0.25 - x * x - z * z)), -(0.25 - x * x - y * y));
  };
  for (auto [x, y, z] : {std::array{0.0, 0.0, 0.0}, {0.6, 0.6, 0.1}, {0.1, -0.7, 0.65}, {1.1, 0.2, -0.3}})
    CHECK(at(m, x, y, z) == doctest::Approx(oracle(x, y, z)).epsilon(1e-13));
}

TEST_CASE("parameters are differentiable leaves") {
  Model m = compile_source("param r = 0.5 in [0.1,1]; output sphere(center=(0,0,0), r=r);");
  REQUIRE(m.params.size() == 1);
  CHECK(m.params.at(0).name == "r");
  CHECK(*m.params.at(0).lo == 0.1);
  geom::FieldGraph fg = geom::instantiate(m.field, m.params);
  adiff::Array origin = adiff::Array::Zero(1, 3);
  adiff::Bindings b = fg.bind(origin, m.params.values());
  adiff::Tape t(*fg.graph);
  t.forward(fg.value, b);
  std::vector<adiff::NodeRef> wrt{fg.params[0]};
  CHECK(adiff::backward(t, fg.value, wrt)[0](0, 0) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(compile_source("param r = 2 in [0.1, 1]; output sphere(r=r);"), ScriptError);
  CHECK(compile_source("param p = -0.5; output x - p;").params.at(0).value == -0.5);
}

TEST_CASE("radius variants give distinct meshes") {
  std::vector<mesher::TriMesh> meshes;
  for (const char* name : {"simple_shape_r035.frep", "simple_shape_r050.frep", "simple_shape_r065.frep"}) {
    Model m = load((kModels / name).string());
    meshes.push_back(mesher::marching_cubes(m.field, m.params, grid_of(m, 40)));
  }
  CHECK(mesher::area(meshes[0]) != doctest::Approx(mesher::area(meshes[1])).epsilon(0.01));
  CHECK(mesher::area(meshes[1]) != doctest::Approx(mesher::area(meshes[2])).epsilon(0.01));
  // The r = 0.5 variant is the fixed model with its radius lifted to a parameter.
  Model fixed = load((kModels / "simple_shape.frep").string());
  CHECK(mesher::marching_cubes(fixed.field, fixed.params, grid_of(fixed, 40)).vertices.isApprox(meshes[1].vertices));
}

TEST_CASE("name rules") {
  CHECK(error_of("let sphere = 1; output x;").message() == "'sphere' is a builtin name and cannot be redefined");
  CHECK(error_of("param x = 1; output x;").message() == "'x' is a builtin name and cannot be redefined");
  CHECK(error_of("let a = 1;\nparam a = 2; output a;").message() == "'a' is already defined at 1:5");
  CHECK(error_of("let a = b; let b = 1; output a;").message() == "unknown identifier 'b'");
  CHECK(error_of("output sin;").message() == "'sin' is a function; call it with arguments");
  CHECK(error_of("let f = x; output f(1);").message() == "'f' is not a function");
}

TEST_CASE("argument binding") {
  const double expected = 0.25 - 0.09;  // cylinder r = 0.5 at y = 0.3
  CHECK(at(compile_source("output cylX((0, 0, 0), 0.5);"), 9, 0.3, 0) == doctest::Approx(expected));
  CHECK(at(compile_source("output cylX(r=0.5);"), 9, 0.3, 0) == doctest::Approx(expected));
  CHECK(at(compile_source("output cylX((0, 0, 0), r=0.5);"), 9, 0.3, 0) == doctest::Approx(expected));
  CHECK(error_of("output cylX(r=0.5, (0, 0, 0));").message() == "positional argument after a named argument");
  CHECK(error_of("output cylX(0.5, center=(0, 0, 0));").message() == "argument 'center' of cylX given twice");
  CHECK(error_of("output cylX(0.5, r=0.5);").message() == "argument 'center' of cylX must be a 3-vector");
  CHECK(error_of("output cylX(center=(0, 0, 0), center=(1, 0, 0), r=1);").message() ==
        "argument 'center' of cylX given twice");
  CHECK(error_of("output pow(x, y);").message() == "argument 'exponent' of pow must be a constant number");
  CHECK(error_of("output repeat_saw(x, 0.5, 1);").message() ==
        "argument 'axis' of repeat_saw must be a constant integer");
  CHECK(error_of("output sphere(center=(0, 0), r=1);").message() == "argument 'center' of sphere must be a 3-vector");
  // Constant folding lets derived literals satisfy constant slots.
  CHECK(at(compile_source("let k = 1 + 1; output pow(x, k * 1.5);"), 4, 0, 0) == doctest::Approx(64));
  CHECK(at(compile_source("output repeat_saw(x, 3 - 3, 2 * pi);"), 2 * std::numbers::pi + 0.25, 0, 0) ==
        doctest::Approx(0.25));
}

TEST_CASE("vector arithmetic") {
  Model m = compile_source("let c = (1, 2, 3) * 0.5 - (0.5, 0, 0); output sphere(center=c / 2, r=1);");
  CHECK(at(m, 0, 0.5, 0.75) == doctest::Approx(1.0));
  CHECK(error_of("output sphere(center=(1, 2, 3) * (1, 2, 3), r=1);").message() ==
        "cannot apply '*' to a 3-vector and a 3-vector");
  CHECK(error_of("output sphere(center=(1, 2, 3) + (1, 2), r=1);").message() ==
        "cannot apply '+' to a 3-vector and a 2-vector");
  CHECK(error_of("output ((1, 2, 3), 1);").message() == "tuple elements must be scalars, got a 3-vector");
}

TEST_CASE("bounds comments") {
  auto b = find_bounds("# a model\n  # bounds: -1, -2,-3, 1,2,3\noutput x;");
  REQUIRE(b);
  CHECK((*b)[1] == -2);
  CHECK((*b)[5] == 3);
  CHECK(!find_bounds("output x;"));
  CHECK_THROWS_AS(find_bounds("# bounds: 1,2,3\n"), ScriptError);
  CHECK_THROWS_AS(find_bounds("# bounds: 1,2,3,0,5,6\n"), ScriptError);
  CHECK_THROWS_AS(find_bounds("# bounds: -1,-1,-1,1,1,1,1\n"), ScriptError);
}

TEST_CASE("corpus: parse, round trip, compile, mesh") {
  const auto files = files_in(kModels);
  REQUIRE(files.size() >= 12);
  std::set<std::string> used;
  for (const auto& f : files) {
    CAPTURE(f.filename().string());
    const std::string src = slurp(f);
    Program p = parse(src, f.string());
    const std::string printed = print(p);
    CHECK(parse(printed) == p);
    CHECK(print(parse(printed)) == printed);

    Model a = compile_source(src, f.string()), b = compile_source(src, f.string());
    geom::FieldGraph ga = geom::instantiate(a.field, a.params), gb = geom::instantiate(b.field, b.params);
    CHECK(ga.graph->size() == gb.graph->size());

    mesher::GridSpec g = grid_of(a, 32);
    mesher::TriMesh m = mesher::marching_cubes(a.field, a.params, g);
    CHECK(!m.empty());
    for (const auto& n : called_builtins(p)) used.insert(n);
  }
  std::vector<std::string> missing;
  for (const Builtin& b : builtins())
    if (!used.count(b.name)) missing.push_back(b.name);
  CHECK_MESSAGE(missing.empty(), "builtins not used by the corpus: " << missing.size());
  for (const auto& n : missing) MESSAGE(n);
}

TEST_CASE("error fixtures report the expected line and column") {
  const auto files = files_in(kModels / "errors");
  REQUIRE(files.size() >= 10);
  for (const auto& f : files) {
    CAPTURE(f.filename().string());
    const std::string src = slurp(f);
    const std::string tag = "# expect: ";
    REQUIRE(src.rfind(tag, 0) == 0);
    const std::string want = src.substr(tag.size(), src.find('\n') - tag.size());
    std::string got;
    try {
      compile_source(src, f.string());
    } catch (const ScriptError& e) {
      got = std::to_string(e.span().line) + ":" + std::to_string(e.span().col);
      CHECK(std::string(e.what()).rfind(f.string() + ":" + got + ": ", 0) == 0);
    }
    CHECK(got == want);
  }
}

TEST_CASE("builtin registry") {
  const auto& list = builtins();
  CHECK(std::is_sorted(list.begin(), list.end(),
                       [](const Builtin& a, const Builtin& b) { return std::string_view(a.name) < b.name; }));
  REQUIRE(find_builtin("sdf_smooth_union"));
  CHECK(find_builtin("sdf_smooth_union")->params.size() == 3);
  CHECK(find_builtin("nope") == nullptr);
  CHECK(is_predefined("pi"));
  CHECK(!is_predefined("sphere"));
}
