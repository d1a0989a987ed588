#include "frep/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "oracles.hpp"

using namespace frep;
using namespace frep::io;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("frep_io_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string file(const std::string& name, const std::string& content = "") const {
    const std::string p = (dir / name).string();
    if (!content.empty()) std::ofstream(p, std::ios::binary) << content;
    return p;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string error_of(const std::string& path) {
  try {
    read_points(path);
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

mesher::TriMesh tetrahedron() {
  mesher::TriMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1;
  m.triangles.resize(4, 3);
  m.triangles << 0, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3;
  return m;
}

}  // namespace

TEST_CASE("XYZ reading") {
  TempDir t;
  PointCloud pc = read_points(t.file("a.xyz", "0 0 0\n1 2 3\n\n# comment\n-1.5e-2\t4 +5\r\n"));
  REQUIRE(pc.size() == 3);
  CHECK(pc.points(2, 0) == -0.015);
  CHECK(pc.points(2, 2) == 5.0);
  CHECK(read_points(t.file("empty.xyz", "\n")).size() == 0);

  CHECK(error_of(t.file("b.xyz", "0 0 0\n1 2\n")) == t.file("b.xyz") + ":2: expected 3 coordinates, found 2");
  CHECK(error_of(t.file("c.xyz", "0 0 0\n\n1 2 x3\n")) == t.file("c.xyz") + ":3: malformed number 'x3'");
  CHECK(error_of(t.file("d.xyz", "nan 0 0\n")) == t.file("d.xyz") + ":1: non-finite coordinate");
  CHECK_THROWS_AS(read_points(t.file("missing.xyz")), IoError);
}

TEST_CASE("write_points round trip is bit-exact") {
  TempDir t;
  std::mt19937_64 rng(11);
  Array pts = testing::uniform_points(rng, 500, -1e3, 1e3);
  pts(0, 0) = 1e-300;
  pts(1, 1) = -0.0;
  pts(2, 2) = 0.1;
  write_points(pts, t.file("p.xyz"));
  PointCloud back = read_points(t.file("p.xyz"));
  CHECK((back.points == pts).all());
  CHECK(std::signbit(back.points(1, 1)));
}

TEST_CASE("PLY reading") {
  TempDir t;
  const std::string ply =
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty float K\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "1 2 3 0.5\n4 5 6 -0.5\n3 0 1 1\n";
  PointCloud pc = read_points(t.file("a.ply", ply));
  REQUIRE(pc.size() == 2);
  CHECK(pc.points(1, 2) == 6.0);
  REQUIRE(pc.scalars.size() == 1);
  CHECK(pc.scalars[0].first == "K");
  CHECK(pc.scalars[0].second(1, 0) == -0.5);

  const std::string empty = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
                            "property float z\nend_header\n";
  CHECK(read_points(t.file("e.ply", empty)).size() == 0);

  const std::string face_first =
      "ply\nformat ascii 1.0\nelement face 1\nproperty list uchar int vertex_indices\nelement vertex 1\n"
      "property float z\nproperty float y\nproperty float x\nend_header\n3 0 0 0\n1 2 3\n";
  PointCloud ff = read_points(t.file("f.ply", face_first));
  CHECK(ff.points(0, 0) == 3.0);
  CHECK(ff.points(0, 2) == 1.0);

  CHECK(error_of(t.file("bin.ply", "ply\nformat binary_little_endian 1.0\nend_header\n")) ==
        t.file("bin.ply") + ":2: only ascii PLY is supported");
  const std::string short_ply = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                                "property float z\nend_header\n1 2 3\n4 5\n";
  CHECK(error_of(t.file("s.ply", short_ply)) == t.file("s.ply") + ":9: expected 3 values, found 2");
  const std::string truncated = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                                "property float z\nend_header\n1 2 3\n";
  CHECK(error_of(t.file("t.ply", truncated)) == t.file("t.ply") + ":8: expected 3 vertices, found 1");
  CHECK(error_of(t.file("nx.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float y\nend_header\n0\n")) ==
        t.file("nx.ply") + ":5: vertex element has no 'x' property");
}

TEST_CASE("OBJ output") {
  TempDir t;
  write_obj(tetrahedron(), t.file("t.obj"));
  const std::string expected =
      "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
  CHECK(slurp(t.file("t.obj")) == expected);
  mesher::TriMesh m = tetrahedron();
  m.vertices(1, 0) = 1.0 / 3.0;
  write_obj(m, t.file("third.obj"));
  CHECK(slurp(t.file("third.obj")).find("v 0.333333333 0 0\n") != std::string::npos);
  CHECK_THROWS_AS(write_obj(m, (t.dir / "no" / "such" / "dir.obj").string()), IoError);
}

TEST_CASE("PLY output keeps channels and reads back") {
  TempDir t;
  mesher::TriMesh m = tetrahedron();
  Array h(4, 1), k(4, 1);
  h << 1, 2, 3, 4;
  k << -1, -2, -3, 0.25;
  m.set_channel("H", h);
  m.set_channel("K", k);
  write_ply(m, t.file("m.ply"));
  const std::string text = slurp(t.file("m.ply"));
  CHECK(text.find("property float H\nproperty float K\nelement face 4\n") != std::string::npos);
  CHECK(text.find("\n0 0 1 4 0.25\n") != std::string::npos);
  CHECK(text.find("\n3 1 2 3\n") != std::string::npos);
  PointCloud back = read_points(t.file("m.ply"));
  REQUIRE(back.scalars.size() == 2);
  CHECK((back.scalars[1].second == k).all());
  CHECK((back.points == m.vertices).all());

  m.set_channel("bad name", h);
  CHECK_THROWS_AS(write_ply(m, t.file("bad.ply")), IoError);
}

TEST_CASE("writers are byte-deterministic") {
  TempDir t;
  mesher::GridSpec g;
  g.res = {24, 24, 24};
  const geom::Field f = geom::sphere(geom::constant3(0.1, 0, 0), geom::constant(0.7));
  mesher::TriMesh a = mesher::marching_cubes(f, {}, g), b = mesher::marching_cubes(f, {}, g);
  mesher::attach_channel(a, f, {}, mesher::Quantity::H);
  mesher::attach_channel(b, f, {}, mesher::Quantity::H);
  write_obj(a, t.file("a.obj"));
  write_obj(b, t.file("b.obj"));
  write_ply(a, t.file("a.ply"));
  write_ply(b, t.file("b.ply"));
  CHECK(slurp(t.file("a.obj")) == slurp(t.file("b.obj")));
  CHECK(slurp(t.file("a.ply")) == slurp(t.file("b.ply")));
}

TEST_CASE("slices") {
  TempDir t;
  using namespace geom;
  SliceSpec s;
  s.lo = {-6, -3};
  s.hi = {6, 3};
  s.res = {61, 31};

  SUBCASE("constant field") {
    write_slice(constant(2.5), {}, s, t.file("c.csv"));
    SliceGrid g = read_slice(t.file("c.csv"));
    CHECK((g.values == 2.5).all());
    CHECK(g.spec.res == s.res);
  }
  SUBCASE("ellipse sign pattern") {
    const Field e = constant(1) - coord(0) * coord(0) / constant(25) - coord(1) * coord(1) / constant(4);
    SliceGrid g = sample_slice(e, {}, s);
    for (int j = 0; j < s.res[1]; ++j)
      for (int i = 0; i < s.res[0]; ++i) {
        const double x = s.coordinate(0, i), y = s.coordinate(1, j);
        const double q = x * x / 25 + y * y / 4;
        if (q < 1 - 1e-9) REQUIRE(g.values(j, i) > 0);
        if (q > 1 + 1e-9) REQUIRE(g.values(j, i) < 0);
      }
    // Symmetric field on symmetric bounds gives an exactly symmetric grid.
    CHECK((g.values == g.values.rowwise().reverse()).all());
    CHECK((g.values == g.values.colwise().reverse()).all());
  }
  SUBCASE("header and axis mapping") {
    s.axis = 0;
    s.level = 0.5;
    write_slice(coord(0) + constant(10) * coord(1) + constant(100) * coord(2), {}, s, t.file("x.csv"));
    const std::string text = slurp(t.file("x.csv"));
    CHECK(text.rfind("# axis=x,level=0.5,u=y,u_min=-6,u_max=6,nu=61,v=z,v_min=-3,v_max=3,nv=31\n", 0) == 0);
    SliceGrid g = read_slice(t.file("x.csv"));
    CHECK(g.values(0, 0) == doctest::Approx(0.5 - 60 - 300));
    CHECK(g.spec.axis == 0);
    CHECK(g.spec.level == 0.5);
  }
  SUBCASE("validation") {
    s.res[0] = 1;
    CHECK_THROWS_AS(sample_slice(constant(1), {}, s), std::invalid_argument);
  }
}

TEST_CASE("columns, histograms and argument lists") {
  TempDir t;
  Array v(5, 1);
  v << 0, 1, 2, 3, std::nan("");
  write_column(v, "value", t.file("v.csv"));
  CHECK(slurp(t.file("v.csv")) == "value\n0\n1\n2\n3\nnan\n");

  Histogram h = histogram(v, 3);
  CHECK(h.counts == std::vector<Index>{1, 1, 2});
  write_histogram(h, t.file("h.csv"));
  CHECK(slurp(t.file("h.csv")) == "bin_lo,bin_hi,count\n0,1,1\n1,2,1\n2,3,2\n");
  CHECK(histogram(Array::Constant(4, 1, 7.0), 10).counts == std::vector<Index>{4});

  CHECK(parse_list("-1, 2.5,3", 3) == std::vector<double>{-1, 2.5, 3});
  CHECK_THROWS_AS(parse_list("1,2", 3), std::invalid_argument);
  CHECK_THROWS_AS(parse_list("1,a,2", 3), std::invalid_argument);
  CHECK(parse_axis("y") == 1);
  CHECK_THROWS_AS(parse_axis("w"), std::invalid_argument);
}
