#include "frep/io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace frep::io {

namespace {

using Buffer = fmt::memory_buffer;

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

class LineReader {
 public:
  explicit LineReader(const std::string& path) : path_(path), in_(path) {
    if (!in_) throw IoError(path + ": cannot open for reading");
  }
  bool next(std::string& line) {
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    line = trim(line);
    return true;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path_ + ":" + std::to_string(line_no_) + ": " + what);
  }
  int line_no() const { return line_no_; }

 private:
  std::string path_;
  std::ifstream in_;
  int line_no_ = 0;
};

Array to_array(const std::vector<double>& flat, Index cols) {
  Array a(Index(flat.size()) / cols, cols);
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < cols; ++c) a(r, c) = flat[r * cols + c];
  return a;
}

PointCloud read_xyz(LineReader& lr, const std::string* first) {
  std::vector<double> flat;
  auto take = [&](const std::string& line) {
    if (line.empty() || line.front() == '#') return;
    const auto tok = split_ws(line);
    if (tok.size() != 3) lr.fail("expected 3 coordinates, found " + std::to_string(tok.size()));
    for (auto t : tok) {
      double v;
      if (!parse_double(t, v)) lr.fail("malformed number '" + std::string(t) + "'");
      if (!std::isfinite(v)) lr.fail("non-finite coordinate");
      flat.push_back(v);
    }
  };
  if (first) {
    take(*first);
    std::string line;
    while (lr.next(line)) take(line);
  }
  return PointCloud{to_array(flat, 3), {}};
}

struct PlyElement {
  std::string name;
  Index count = 0;
  std::vector<std::string> props;
  bool has_list = false;
};

PointCloud read_ply(LineReader& lr) {
  std::string line;
  std::vector<PlyElement> elements;
  bool format_seen = false;
  for (;;) {
    if (!lr.next(line)) lr.fail("unexpected end of file in PLY header");
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") lr.fail("only ascii PLY is supported");
      format_seen = true;
    } else if (tok[0] == "element") {
      double n;
      if (tok.size() != 3 || !parse_double(tok[2], n) || n < 0 || n != std::floor(n)) lr.fail("malformed element line");
      elements.push_back({std::string(tok[1]), Index(n), {}, false});
    } else if (tok[0] == "property") {
      if (elements.empty()) lr.fail("property before any element");
      if (tok.size() == 5 && tok[1] == "list") {
        elements.back().has_list = true;
        elements.back().props.emplace_back(tok[4]);
      } else if (tok.size() == 3) {
        elements.back().props.emplace_back(tok[2]);
      } else {
        lr.fail("malformed property line");
      }
    } else {
      lr.fail("unknown header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!format_seen) lr.fail("missing format line in PLY header");

  PointCloud pc{Array(0, 3), {}};
  for (const PlyElement& el : elements) {
    if (el.name != "vertex") {
      for (Index i = 0; i < el.count;) {
        if (!lr.next(line)) lr.fail("unexpected end of file in element '" + el.name + "'");
        if (!line.empty()) ++i;
      }
      continue;
    }
    if (el.has_list) lr.fail("list properties on vertices are not supported");
    auto find = [&](const char* p) {
      auto it = std::find(el.props.begin(), el.props.end(), p);
      if (it == el.props.end()) lr.fail(std::string("vertex element has no '") + p + "' property");
      return std::size_t(it - el.props.begin());
    };
    const std::size_t ix = find("x"), iy = find("y"), iz = find("z");
    Array all(el.count, Index(el.props.size()));
    for (Index i = 0; i < el.count;) {
      if (!lr.next(line)) lr.fail("expected " + std::to_string(el.count) + " vertices, found " + std::to_string(i));
      if (line.empty()) continue;
      const auto tok = split_ws(line);
      if (tok.size() != el.props.size())
        lr.fail("expected " + std::to_string(el.props.size()) + " values, found " + std::to_string(tok.size()));
      for (std::size_t c = 0; c < tok.size(); ++c) {
        double v;
        if (!parse_double(tok[c], v)) lr.fail("malformed number '" + std::string(tok[c]) + "'");
        if ((c == ix || c == iy || c == iz) && !std::isfinite(v)) lr.fail("non-finite coordinate");
        all(i, Index(c)) = v;
      }
      ++i;
    }
    pc.points.resize(el.count, 3);
    pc.points.col(0) = all.col(Index(ix));
    pc.points.col(1) = all.col(Index(iy));
    pc.points.col(2) = all.col(Index(iz));
    for (std::size_t c = 0; c < el.props.size(); ++c)
      if (c != ix && c != iy && c != iz) pc.scalars.emplace_back(el.props[c], Array(all.col(Index(c))));
  }
  return pc;
}

void append_g9(Buffer& out, double v) { fmt::format_to(std::back_inserter(out), "{:.9g}", v); }

}  // namespace

void write_text(const std::string& content, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(content.data(), std::streamsize(content.size()));
  out.flush();
  if (!out) throw IoError(path + ": write failed");
}

PointCloud read_points(const std::string& path) {
  LineReader lr(path);
  std::string line;
  bool have = lr.next(line);
  while (have && line.empty()) have = lr.next(line);
  if (have && line == "ply") return read_ply(lr);
  return read_xyz(lr, have ? &line : nullptr);
}

void write_points(const Array& points, const std::string& path) {
  if (points.cols() != 3) throw IoError(path + ": points must have 3 columns");
  Buffer out;
  for (Index i = 0; i < points.rows(); ++i)
    fmt::format_to(std::back_inserter(out), "{:.17g} {:.17g} {:.17g}\n", points(i, 0), points(i, 1), points(i, 2));
  write_text(fmt::to_string(out), path);
}

void write_obj(const mesher::TriMesh& mesh, const std::string& path) {
  Buffer out;
  for (Index i = 0; i < mesh.vertex_count(); ++i) {
    fmt::format_to(std::back_inserter(out), "v ");
    append_g9(out, mesh.vertices(i, 0));
    out.push_back(' ');
    append_g9(out, mesh.vertices(i, 1));
    out.push_back(' ');
    append_g9(out, mesh.vertices(i, 2));
    out.push_back('\n');
  }
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    fmt::format_to(std::back_inserter(out), "f {} {} {}\n", mesh.triangles(t, 0) + 1, mesh.triangles(t, 1) + 1,
                   mesh.triangles(t, 2) + 1);
  write_text(fmt::to_string(out), path);
}

void write_ply(const mesher::TriMesh& mesh, const std::string& path) {
  for (const auto& [name, v] : mesh.channels) {
    if (name.empty() || std::any_of(name.begin(), name.end(), [](char c) { return std::isspace((unsigned char)c); }))
      throw IoError(path + ": channel name '" + name + "' is not a valid PLY property name");
    if (v.rows() != mesh.vertex_count()) throw IoError(path + ": channel '" + name + "' has the wrong length");
  }
  Buffer out;
  fmt::format_to(std::back_inserter(out), "ply\nformat ascii 1.0\nelement vertex {}\n", mesh.vertex_count());
  fmt::format_to(std::back_inserter(out), "property float x\nproperty float y\nproperty float z\n");
  for (const auto& ch : mesh.channels) fmt::format_to(std::back_inserter(out), "property float {}\n", ch.first);
  fmt::format_to(std::back_inserter(out), "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
                 mesh.triangle_count());
  for (Index i = 0; i < mesh.vertex_count(); ++i) {
    for (int a = 0; a < 3; ++a) {
      if (a) out.push_back(' ');
      append_g9(out, mesh.vertices(i, a));
    }
    for (const auto& ch : mesh.channels) {
      out.push_back(' ');
      append_g9(out, ch.second(i, 0));
    }
    out.push_back('\n');
  }
  for (Index t = 0; t < mesh.triangle_count(); ++t)
    fmt::format_to(std::back_inserter(out), "3 {} {} {}\n", mesh.triangles(t, 0), mesh.triangles(t, 1),
                   mesh.triangles(t, 2));
  write_text(fmt::to_string(out), path);
}

void SliceSpec::validate() const {
  if (axis < 0 || axis > 2) throw std::invalid_argument("slice axis must be x, y or z");
  for (int k = 0; k < 2; ++k) {
    if (!(hi[k] > lo[k])) throw std::invalid_argument("slice bounds must satisfy max > min");
    if (res[k] < 2) throw std::invalid_argument("slice resolution must be at least 2");
  }
  if (!std::isfinite(level)) throw std::invalid_argument("slice level must be finite");
}

std::array<int, 2> SliceSpec::plane_axes() const {
  return axis == 0 ? std::array<int, 2>{1, 2} : axis == 1 ? std::array<int, 2>{0, 2} : std::array<int, 2>{0, 1};
}

double SliceSpec::coordinate(int k, int i) const {
  const int n = res[k] - 1;
  return (double(n - i) * lo[k] + double(i) * hi[k]) / n;
}

SliceGrid sample_slice(const geom::Field& f, const geom::ParamSet& ps, const SliceSpec& spec, unsigned threads) {
  spec.validate();
  const auto [u, v] = spec.plane_axes();
  Array pts(Index(spec.res[0]) * spec.res[1], 3);
  for (int j = 0; j < spec.res[1]; ++j)
    for (int i = 0; i < spec.res[0]; ++i) {
      const Index r = Index(j) * spec.res[0] + i;
      pts(r, spec.axis) = spec.level;
      pts(r, u) = spec.coordinate(0, i);
      pts(r, v) = spec.coordinate(1, j);
    }
  Array flat = geom::evaluate(f, ps, pts, threads);
  SliceGrid g{spec, Array(spec.res[1], spec.res[0])};
  for (int j = 0; j < spec.res[1]; ++j)
    for (int i = 0; i < spec.res[0]; ++i) g.values(j, i) = flat(Index(j) * spec.res[0] + i, 0);
  return g;
}

void write_slice(const SliceGrid& grid, const std::string& path) {
  const SliceSpec& s = grid.spec;
  s.validate();
  if (grid.values.rows() != s.res[1] || grid.values.cols() != s.res[0])
    throw IoError(path + ": slice values do not match the resolution");
  const auto [u, v] = s.plane_axes();
  Buffer out;
  fmt::format_to(std::back_inserter(out),
                 "# axis={},level={:.17g},u={},u_min={:.17g},u_max={:.17g},nu={},v={},v_min={:.17g},v_max={:.17g},nv={}\n",
                 axis_name(s.axis), s.level, axis_name(u), s.lo[0], s.hi[0], s.res[0], axis_name(v), s.lo[1], s.hi[1],
                 s.res[1]);
  for (Index j = 0; j < grid.values.rows(); ++j) {
    for (Index i = 0; i < grid.values.cols(); ++i) {
      if (i) out.push_back(',');
      append_g9(out, grid.values(j, i));
    }
    out.push_back('\n');
  }
  write_text(fmt::to_string(out), path);
}

void write_slice(const geom::Field& f, const geom::ParamSet& ps, const SliceSpec& spec, const std::string& path,
                 unsigned threads) {
  write_slice(sample_slice(f, ps, spec, threads), path);
}

SliceGrid read_slice(const std::string& path) {
  LineReader lr(path);
  std::string line;
  if (!lr.next(line) || line.rfind("# ", 0) != 0) lr.fail("missing slice header");
  SliceGrid g;
  std::istringstream hs(line.substr(2));
  std::string kv;
  int seen = 0;
  while (std::getline(hs, kv, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) lr.fail("malformed header field '" + kv + "'");
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    double d = 0;
    const bool numeric = parse_double(val, d);
    auto need = [&] {
      if (!numeric) lr.fail("malformed value for '" + key + "'");
      ++seen;
      return d;
    };
    if (key == "axis") {
      try {
        g.spec.axis = parse_axis(val);
      } catch (const std::invalid_argument& e) {
        lr.fail(e.what());
      }
      ++seen;
    } else if (key == "level") g.spec.level = need();
    else if (key == "u_min") g.spec.lo[0] = need();
    else if (key == "u_max") g.spec.hi[0] = need();
    else if (key == "v_min") g.spec.lo[1] = need();
    else if (key == "v_max") g.spec.hi[1] = need();
    else if (key == "nu") g.spec.res[0] = int(need());
    else if (key == "nv") g.spec.res[1] = int(need());
  }
  if (seen != 8) lr.fail("incomplete slice header");
  try {
    g.spec.validate();
  } catch (const std::invalid_argument& e) {
    lr.fail(e.what());
  }
  g.values.resize(g.spec.res[1], g.spec.res[0]);
  for (int j = 0; j < g.spec.res[1]; ++j) {
    if (!lr.next(line)) lr.fail("expected " + std::to_string(g.spec.res[1]) + " rows");
    std::istringstream row(line);
    std::string cell;
    int i = 0;
    while (std::getline(row, cell, ',')) {
      if (i >= g.spec.res[0]) lr.fail("too many columns");
      if (!parse_double(trim(cell), g.values(j, i))) lr.fail("malformed number '" + cell + "'");
      ++i;
    }
    if (i != g.spec.res[0]) lr.fail("expected " + std::to_string(g.spec.res[0]) + " columns");
  }
  return g;
}

void write_column(const Array& values, const std::string& header, const std::string& path) {
  Buffer out;
  fmt::format_to(std::back_inserter(out), "{}\n", header);
  for (Index i = 0; i < values.rows(); ++i) {
    append_g9(out, values(i, 0));
    out.push_back('\n');
  }
  write_text(fmt::to_string(out), path);
}

Histogram histogram(const Array& values, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  std::vector<double> v;
  for (Index i = 0; i < values.size(); ++i)
    if (std::isfinite(values(i))) v.push_back(values(i));
  Histogram h;
  if (v.empty()) return h;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  h.lo = *mn;
  h.hi = *mx;
  if (h.hi == h.lo) bins = 1;
  h.counts.assign(std::size_t(bins), 0);
  for (double x : v) {
    const int b = h.hi == h.lo ? 0 : std::min(bins - 1, int(std::floor((x - h.lo) / (h.hi - h.lo) * bins)));
    ++h.counts[std::size_t(b)];
  }
  return h;
}

void write_histogram(const Histogram& h, const std::string& path) {
  Buffer out;
  fmt::format_to(std::back_inserter(out), "bin_lo,bin_hi,count\n");
  const int n = int(h.counts.size());
  for (int b = 0; b < n; ++b) {
    const double a = h.lo + (h.hi - h.lo) * b / n, c = b + 1 == n ? h.hi : h.lo + (h.hi - h.lo) * (b + 1) / n;
    append_g9(out, a);
    out.push_back(',');
    append_g9(out, c);
    fmt::format_to(std::back_inserter(out), ",{}\n", h.counts[std::size_t(b)]);
  }
  write_text(fmt::to_string(out), path);
}

std::vector<double> parse_list(const std::string& text, std::size_t n) {
  std::vector<double> out;
  std::istringstream s(text);
  std::string cell;
  while (std::getline(s, cell, ',')) {
    double d;
    if (!parse_double(trim(cell), d) || !std::isfinite(d))
      throw std::invalid_argument("malformed number '" + cell + "' in '" + text + "'");
    out.push_back(d);
  }
  if (out.size() != n) throw std::invalid_argument("expected " + std::to_string(n) + " comma-separated numbers, got '" + text + "'");
  return out;
}

int parse_axis(const std::string& name) {
  if (name == "x") return 0;
  if (name == "y") return 1;
  if (name == "z") return 2;
  throw std::invalid_argument("axis must be x, y or z, got '" + name + "'");
}

char axis_name(int axis) { return "xyz"[axis]; }

}  // namespace frep::io
