#pragma once

// Files: 3DGS-convention PLY, COLMAP points3D (text and binary), 8-bit PNG, flat key = value
// training configs, CSV logs, and scene directories.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "gsproto/error.hpp"
#include "gsproto/gaussian.hpp"
#include "gsproto/image.hpp"
#include "gsproto/metrics.hpp"
#include "gsproto/optimizer.hpp"
#include "gsproto/scene.hpp"

namespace gsproto {

static_assert(std::endian::native == std::endian::little, "binary readers assume a little-endian host");

namespace detail {

inline std::vector<char> read_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ParseError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out)
    throw Error("write failed for " + path.string());
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string> split_ws(const std::string &line) {
  std::istringstream s(line);
  std::vector<std::string> out;
  for (std::string t; s >> t;)
    out.push_back(t);
  return out;
}

template <typename V> bool parse_number(const std::string &s, V &out) {
  const char *b = s.data(), *e = s.data() + s.size();
  const auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

} // namespace detail

// ---------------------------------------------------------------------------------------------
// PLY

/// Property names in file order for SH degree `sh_degree`.
inline std::vector<std::string> ply_property_names(int sh_degree) {
  std::vector<std::string> names{"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
  const int rest = 3 * (sh::coeff_count(sh_degree) - 1);
  for (int k = 0; k < rest; ++k)
    names.push_back("f_rest_" + std::to_string(k));
  names.insert(names.end(), {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"});
  return names;
}

/// Binary little-endian PLY of raw parameters. Scalars are `float` for T = float and `double` for
/// T = double; normals are zero. Higher-order SH are stored channel-major as f_rest. Non-finite
/// values are written as they are, so diverged states can be dumped.
template <typename T> std::string ply_bytes(const PrimitiveSet<T> &set) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if (set.sh_degree < 0 || set.sh_degree > 3)
    throw DomainError("ply: SH degree " + std::to_string(set.sh_degree) + " outside [0, 3]");
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set.primitives[i].sh_coeffs.size() != std::size_t(sh::coeff_count(set.sh_degree)))
      throw ShapeError("ply: primitive " + std::to_string(i) + " has " +
                       std::to_string(set.primitives[i].sh_coeffs.size()) + " SH coefficients, degree " +
                       std::to_string(set.sh_degree) + " needs " + std::to_string(sh::coeff_count(set.sh_degree)));
  const char *type = std::is_same_v<T, float> ? "float" : "double";
  const auto names = ply_property_names(set.sh_degree);
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << set.size() << "\n";
  for (const auto &n : names)
    h << "property " << type << " " << n << "\n";
  h << "end_header\n";
  std::string out = h.str();
  const int rest = sh::coeff_count(set.sh_degree) - 1;
  std::vector<T> row;
  row.reserve(names.size());
  for (const auto &p : set.primitives) {
    row.clear();
    row.insert(row.end(), {p.position[0], p.position[1], p.position[2], T(0), T(0), T(0)});
    row.insert(row.end(), {p.sh_coeffs[0][0], p.sh_coeffs[0][1], p.sh_coeffs[0][2]});
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k <= rest; ++k)
        row.push_back(p.sh_coeffs[std::size_t(k)][c]);
    row.push_back(p.opacity_raw);
    row.insert(row.end(), {p.log_scale[0], p.log_scale[1], p.log_scale[2]});
    row.insert(row.end(), {p.rotation[0], p.rotation[1], p.rotation[2], p.rotation[3]});
    out.append(reinterpret_cast<const char *>(row.data()), row.size() * sizeof(T));
  }
  return out;
}

template <typename T> void write_ply(const std::filesystem::path &path, const PrimitiveSet<T> &set) {
  detail::write_bytes(path, ply_bytes(set));
}

namespace detail {

inline int ply_type_size(const std::string &t) {
  static const std::map<std::string, int> sizes{
      {"char", 1},  {"int8", 1},   {"uchar", 1},  {"uint8", 1},   {"short", 2},   {"int16", 2},
      {"ushort", 2}, {"uint16", 2}, {"int", 4},    {"int32", 4},   {"uint", 4},    {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(t);
  return it == sizes.end() ? 0 : it->second;
}

inline double ply_value(const char *p, const std::string &t) {
  auto get = [p](auto v) {
    std::memcpy(&v, p, sizeof v);
    return double(v);
  };
  if (t == "float" || t == "float32")
    return get(float{});
  if (t == "double" || t == "float64")
    return get(double{});
  if (t == "char" || t == "int8")
    return get(std::int8_t{});
  if (t == "uchar" || t == "uint8")
    return get(std::uint8_t{});
  if (t == "short" || t == "int16")
    return get(std::int16_t{});
  if (t == "ushort" || t == "uint16")
    return get(std::uint16_t{});
  if (t == "int" || t == "int32")
    return get(std::int32_t{});
  return get(std::uint32_t{});
}

} // namespace detail

/// Parse a PLY byte buffer. Extra vertex properties are skipped; `nx, ny, nz` are ignored.
template <typename T> PrimitiveSet<T> parse_ply(const std::vector<char> &bytes) {
  struct Prop {
    std::string name, type;
    std::size_t offset;
  };
  std::size_t pos = 0;
  auto next_line = [&](std::size_t &start) {
    start = pos;
    const auto nl = std::find(bytes.begin() + std::ptrdiff_t(pos), bytes.end(), '\n');
    if (nl == bytes.end())
      throw ParseError("ply: header not terminated (byte " + std::to_string(pos) + ")");
    std::string line(bytes.begin() + std::ptrdiff_t(pos), nl);
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    pos = std::size_t(nl - bytes.begin()) + 1;
    return line;
  };
  std::size_t at = 0;
  if (next_line(at) != "ply")
    throw ParseError("ply: missing 'ply' magic at byte 0");
  std::vector<Prop> props;
  std::size_t count = 0, stride = 0;
  bool in_vertex = false, seen_vertex = false, format_ok = false;
  for (;;) {
    const auto line = next_line(at);
    const auto tok = detail::split_ws(line);
    const auto where = " (byte " + std::to_string(at) + ")";
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info")
      continue;
    if (tok[0] == "end_header")
      break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "binary_little_endian")
        throw ParseError("ply: unsupported format '" + (tok.size() > 1 ? tok[1] : std::string()) +
                         "', need binary_little_endian" + where);
      format_ok = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3)
        throw ParseError("ply: malformed element line" + where);
      if (seen_vertex && in_vertex) {
        in_vertex = false; // trailing elements are ignored
        continue;
      }
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        seen_vertex = true;
        if (!detail::parse_number(tok[2], count))
          throw ParseError("ply: bad vertex count '" + tok[2] + "'" + where);
      } else {
        std::size_t n = 0;
        if (!detail::parse_number(tok[2], n) || n != 0)
          throw ParseError("ply: element '" + tok[1] + "' before vertex data is not supported" + where);
      }
    } else if (tok[0] == "property") {
      if (!in_vertex)
        continue;
      if (tok.size() != 3)
        throw ParseError("ply: unsupported property line '" + line + "'" + where);
      const int size = detail::ply_type_size(tok[1]);
      if (size == 0)
        throw ParseError("ply: unknown property type '" + tok[1] + "'" + where);
      props.push_back({tok[2], tok[1], stride});
      stride += std::size_t(size);
    } else {
      throw ParseError("ply: unexpected header line '" + line + "'" + where);
    }
  }
  if (!format_ok)
    throw ParseError("ply: missing format line");
  if (!seen_vertex)
    throw ParseError("ply: no vertex element");
  const std::size_t header = pos;

  std::map<std::string, const Prop *> by_name;
  for (const auto &p : props)
    by_name[p.name] = &p;
  auto need = [&](const std::string &n) {
    const auto it = by_name.find(n);
    if (it == by_name.end())
      throw ParseError("ply: missing property '" + n + "' (header ends at byte " + std::to_string(header) + ")");
    return it->second;
  };
  int rest = 0;
  while (by_name.count("f_rest_" + std::to_string(rest)))
    ++rest;
  int degree = -1;
  for (int l = 0; l <= 3; ++l)
    if (3 * (sh::coeff_count(l) - 1) == rest)
      degree = l;
  if (degree < 0)
    throw ParseError("ply: " + std::to_string(rest) + " f_rest properties do not match an SH degree");

  std::vector<const Prop *> fields;
  for (const auto &n : ply_property_names(degree))
    if (n != "nx" && n != "ny" && n != "nz")
      fields.push_back(need(n));

  const std::size_t body = count * stride;
  if (bytes.size() - header < body)
    throw ParseError("ply: truncated vertex data: need " + std::to_string(body) + " bytes after byte " +
                     std::to_string(header) + ", file has " + std::to_string(bytes.size() - header) +
                     " (vertex " + std::to_string((bytes.size() - header) / std::max<std::size_t>(stride, 1)) +
                     " is incomplete)");
  PrimitiveSet<T> set;
  set.sh_degree = degree;
  set.primitives.resize(count);
  const int k_rest = sh::coeff_count(degree) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    const char *rec = bytes.data() + header + i * stride;
    std::size_t f = 0;
    auto v = [&] {
      const Prop *prop = fields[f++];
      return T(detail::ply_value(rec + prop->offset, prop->type));
    };
    auto &p = set.primitives[i];
    p.sh_coeffs.assign(std::size_t(sh::coeff_count(degree)), Vec3<T>::Zero());
    for (int a = 0; a < 3; ++a)
      p.position[a] = v();
    for (int c = 0; c < 3; ++c)
      p.sh_coeffs[0][c] = v();
    for (int c = 0; c < 3; ++c)
      for (int k = 1; k <= k_rest; ++k)
        p.sh_coeffs[std::size_t(k)][c] = v();
    p.opacity_raw = v();
    for (int a = 0; a < 3; ++a)
      p.log_scale[a] = v();
    for (int a = 0; a < 4; ++a)
      p.rotation[a] = v();
  }
  return set;
}

template <typename T> PrimitiveSet<T> read_ply(const std::filesystem::path &path) {
  try {
    return parse_ply<T>(detail::read_bytes(path));
  } catch (const ParseError &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// COLMAP points3D

template <typename T> struct SfmPoints {
  std::vector<Vec3<T>> positions;
  std::vector<Vec3<T>> colors; ///< RGB in [0, 1]
};

/// points3D.txt: `ID X Y Z R G B ERROR [IMAGE_ID POINT2D_IDX]...`; '#' lines are comments.
template <typename T> SfmPoints<T> parse_colmap_points_text(std::istream &in) {
  SfmPoints<T> out;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0][0] == '#')
      continue;
    auto fail = [&](const std::string &why) {
      throw ParseError("points3D line " + std::to_string(number) + ": " + why);
    };
    if (tok.size() < 8 || (tok.size() - 8) % 2 != 0)
      fail("expected ID X Y Z R G B ERROR and (IMAGE_ID, POINT2D_IDX) pairs, got " + std::to_string(tok.size()) +
           " fields");
    std::uint64_t id = 0;
    double xyz[3], err = 0;
    int rgb[3];
    if (!detail::parse_number(tok[0], id))
      fail("bad point id '" + tok[0] + "'");
    for (int a = 0; a < 3; ++a)
      if (!detail::parse_number(tok[std::size_t(1 + a)], xyz[a]) || !std::isfinite(xyz[a]))
        fail("bad coordinate '" + tok[std::size_t(1 + a)] + "'");
    for (int c = 0; c < 3; ++c)
      if (!detail::parse_number(tok[std::size_t(4 + c)], rgb[c]) || rgb[c] < 0 || rgb[c] > 255)
        fail("bad colour '" + tok[std::size_t(4 + c)] + "'");
    if (!detail::parse_number(tok[7], err))
      fail("bad error '" + tok[7] + "'");
    out.positions.emplace_back(T(xyz[0]), T(xyz[1]), T(xyz[2]));
    out.colors.emplace_back(T(rgb[0] / 255.0), T(rgb[1] / 255.0), T(rgb[2] / 255.0));
  }
  return out;
}

/// points3D.bin: uint64 count, then per point uint64 id, 3 double, 3 uint8, double error,
/// uint64 track length and that many (uint32, uint32) pairs.
template <typename T> SfmPoints<T> parse_colmap_points_binary(const std::vector<char> &bytes) {
  std::size_t pos = 0;
  std::uint64_t record = 0;
  auto take = [&](auto &v) {
    if (bytes.size() - pos < sizeof v)
      throw ParseError("points3D.bin: truncated at byte " + std::to_string(pos) + " in record " +
                       std::to_string(record));
    std::memcpy(&v, bytes.data() + pos, sizeof v);
    pos += sizeof v;
  };
  std::uint64_t count = 0;
  take(count);
  SfmPoints<T> out;
  for (record = 0; record < count; ++record) {
    std::uint64_t id = 0, track = 0;
    double xyz[3], err = 0;
    std::uint8_t rgb[3];
    take(id);
    for (double &v : xyz)
      take(v);
    for (auto &c : rgb)
      take(c);
    take(err);
    take(track);
    if (track > (bytes.size() - pos) / 8)
      throw ParseError("points3D.bin: track length " + std::to_string(track) + " at byte " +
                       std::to_string(pos - 8) + " in record " + std::to_string(record) + " exceeds the file");
    pos += std::size_t(track) * 8;
    out.positions.emplace_back(T(xyz[0]), T(xyz[1]), T(xyz[2]));
    out.colors.emplace_back(T(rgb[0] / 255.0), T(rgb[1] / 255.0), T(rgb[2] / 255.0));
  }
  if (pos != bytes.size())
    throw ParseError("points3D.bin: " + std::to_string(bytes.size() - pos) + " trailing bytes after byte " +
                     std::to_string(pos));
  return out;
}

/// Text or binary by extension (`.bin` is binary).
template <typename T> SfmPoints<T> read_colmap_points(const std::filesystem::path &path) {
  try {
    if (path.extension() == ".bin")
      return parse_colmap_points_binary<T>(detail::read_bytes(path));
    std::ifstream in(path);
    if (!in)
      throw ParseError("cannot open " + path.string());
    return parse_colmap_points_text<T>(in);
  } catch (const ParseError &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

template <typename T> void write_colmap_points_text(const std::filesystem::path &path, const SfmPoints<T> &pts) {
  std::ostringstream s;
  s << "# 3D point list with one line of data per point:\n"
    << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
    << "# Number of points: " << pts.positions.size() << "\n";
  for (std::size_t i = 0; i < pts.positions.size(); ++i) {
    const auto &p = pts.positions[i];
    s << (i + 1) << " " << detail::format_double(double(p[0])) << " " << detail::format_double(double(p[1])) << " "
      << detail::format_double(double(p[2]));
    for (int c = 0; c < 3; ++c) {
      const double v = i < pts.colors.size() ? double(pts.colors[i][c]) : 0.5;
      s << " " << int(std::lround(std::clamp(v, 0.0, 1.0) * 255));
    }
    s << " 0\n";
  }
  detail::write_bytes(path, s.str());
}

// ---------------------------------------------------------------------------------------------
// PNG

/// 8-bit RGB, values clamped to [0, 1] and rounded.
template <typename T> void write_png(const std::filesystem::path &path, const Image<T> &img) {
  std::vector<std::uint8_t> px(img.data.size());
  for (std::size_t k = 0; k < px.size(); ++k)
    px[k] = std::uint8_t(std::lround(std::clamp(double(img.data[k]), 0.0, 1.0) * 255.0));
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = png_uint_32(img.width);
  im.height = png_uint_32(img.height);
  im.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.string().c_str(), 0, px.data(), 0, nullptr))
    throw Error("png: cannot write " + path.string() + ": " + im.message);
}

template <typename T> Image<T> read_png(const std::filesystem::path &path) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.string().c_str()))
    throw ParseError("png: " + path.string() + ": " + im.message);
  im.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&im);
    throw ParseError("png: " + path.string() + ": " + im.message);
  }
  Image<T> out(int(im.width), int(im.height));
  for (std::size_t k = 0; k < out.data.size(); ++k)
    out.data[k] = T(px[k] / 255.0);
  return out;
}

// ---------------------------------------------------------------------------------------------
// PFM: lossless float32 RGB, rows stored bottom to top.

template <typename T> void write_pfm(const std::filesystem::path &path, const Image<T> &img) {
  std::string out = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
  std::vector<float> row(std::size_t(img.width) * 3);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[std::size_t(x) * 3 + std::size_t(c)] = float(img.at(x, y, c));
    out.append(reinterpret_cast<const char *>(row.data()), row.size() * sizeof(float));
  }
  detail::write_bytes(path, out);
}

template <typename T> Image<T> read_pfm(const std::filesystem::path &path) {
  const auto bytes = detail::read_bytes(path);
  std::size_t pos = 0;
  auto token = [&] {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    return std::string(bytes.begin() + std::ptrdiff_t(start), bytes.begin() + std::ptrdiff_t(pos));
  };
  const auto fail = [&](const std::string &why) {
    throw ParseError("pfm: " + path.string() + ": " + why + " (byte " + std::to_string(pos) + ")");
  };
  if (token() != "PF")
    fail("not an RGB float map");
  int w = 0, h = 0;
  double scale = 0;
  if (!detail::parse_number(token(), w) || !detail::parse_number(token(), h) || w <= 0 || h <= 0)
    fail("bad size");
  if (!detail::parse_number(token(), scale) || scale >= 0)
    fail("only little-endian (negative scale) maps are supported");
  ++pos;
  if (bytes.size() < pos || bytes.size() - pos < std::size_t(w) * std::size_t(h) * 12)
    fail("truncated pixel data");
  Image<T> img(w, h);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v;
        std::memcpy(&v, bytes.data() + pos, sizeof v);
        pos += sizeof v;
        img.at(x, y, c) = T(v);
      }
  return img;
}

// ---------------------------------------------------------------------------------------------
// Training config: `key = value` lines, '#' comments, keys equal to TrainingConfig field names.

namespace detail {

struct ConfigField {
  std::string name;
  std::function<void(TrainingConfig &, const std::string &)> set;
  std::function<std::string(const TrainingConfig &)> get;
};

template <typename V> ConfigField number_field(std::string name, V TrainingConfig::*member) {
  return {name,
          [member, name](TrainingConfig &c, const std::string &v) {
            V x{};
            if (!parse_number(v, x))
              throw ParseError("bad value '" + v + "' for " + name);
            c.*member = x;
          },
          [member](const TrainingConfig &c) {
            if constexpr (std::is_floating_point_v<V>)
              return format_double(c.*member);
            else
              return std::to_string(c.*member);
          }};
}

inline const std::vector<ConfigField> &config_fields() {
  static const std::vector<ConfigField> fields = [] {
    using C = TrainingConfig;
    std::vector<ConfigField> f;
    f.push_back({"mode",
                 [](C &c, const std::string &v) {
                   if (v == "fit_only")
                     c.mode = TrainMode::fit_only;
                   else if (v == "rendering_guided")
                     c.mode = TrainMode::rendering_guided;
                   else if (v == "two_stage")
                     c.mode = TrainMode::two_stage;
                   else
                     throw ParseError("bad mode '" + v + "' (fit_only, rendering_guided, two_stage)");
                 },
                 [](const C &c) { return to_string(c.mode); }});
    f.push_back(number_field("seed", &C::seed));
    f.push_back(number_field("total_iterations", &C::total_iterations));
    f.push_back(number_field("warmup_iterations", &C::warmup_iterations));
    f.push_back(number_field("lambda_dssim", &C::lambda_dssim));
    f.push_back(number_field("lambda_c", &C::lambda_c));
    f.push_back(number_field("interval_t", &C::interval_t));
    f.push_back(number_field("decay_rate", &C::decay_rate));
    f.push_back({"decay_schedule",
                 [](C &c, const std::string &v) {
                   if (v == "default") {
                     c.decay_schedule.reset();
                     return;
                   }
                   std::vector<int> its;
                   std::string item;
                   std::istringstream s(v);
                   while (std::getline(s, item, ',')) {
                     const auto t = split_ws(item);
                     int x = 0;
                     if (t.size() != 1 || !parse_number(t[0], x))
                       throw ParseError("bad decay_schedule entry '" + item + "'");
                     its.push_back(x);
                   }
                   c.decay_schedule = its;
                 },
                 [](const C &c) {
                   if (!c.decay_schedule)
                     return std::string("default");
                   std::string out;
                   for (std::size_t k = 0; k < c.decay_schedule->size(); ++k)
                     out += (k ? "," : "") + std::to_string((*c.decay_schedule)[k]);
                   return out;
                 }});
    f.push_back(number_field("compression_ratio", &C::compression_ratio));
    f.push_back(number_field("anchor_fraction", &C::anchor_fraction));
    f.push_back(number_field("anchor_lr", &C::anchor_lr));
    f.push_back(number_field("position_lr_init", &C::position_lr_init));
    f.push_back(number_field("position_lr_final", &C::position_lr_final));
    f.push_back(number_field("feature_lr", &C::feature_lr));
    f.push_back(number_field("opacity_lr", &C::opacity_lr));
    f.push_back(number_field("scaling_lr", &C::scaling_lr));
    f.push_back(number_field("rotation_lr", &C::rotation_lr));
    f.push_back(number_field("densify_from", &C::densify_from));
    f.push_back(number_field("densify_until", &C::densify_until));
    f.push_back(number_field("densify_interval", &C::densify_interval));
    f.push_back(number_field("densify_grad_threshold", &C::densify_grad_threshold));
    f.push_back(number_field("percent_dense", &C::percent_dense));
    f.push_back(number_field("min_opacity", &C::min_opacity));
    f.push_back(number_field("max_primitives", &C::max_primitives));
    f.push_back(number_field("opacity_reset_interval", &C::opacity_reset_interval));
    f.push_back(number_field("sh_degree", &C::sh_degree));
    f.push_back(number_field("init_random_points", &C::init_random_points));
    f.push_back(number_field("init_opacity", &C::init_opacity));
    f.push_back({"unweighted",
                 [](C &c, const std::string &v) {
                   if (v != "true" && v != "false")
                     throw ParseError("bad value '" + v + "' for unweighted (true or false)");
                   c.unweighted = v == "true";
                 },
                 [](const C &c) { return std::string(c.unweighted ? "true" : "false"); }});
    f.push_back(number_field("position_weight", &C::position_weight));
    f.push_back({"means_mode",
                 [](C &c, const std::string &v) {
                   if (v == "centroid_locked")
                     c.means_mode = MeansMode::centroid_locked;
                   else if (v == "free")
                     c.means_mode = MeansMode::free;
                   else
                     throw ParseError("bad means_mode '" + v + "' (centroid_locked, free)");
                 },
                 [](const C &c) { return to_string(c.means_mode); }});
    f.push_back(number_field("kmeans_restarts", &C::kmeans_restarts));
    f.push_back(number_field("eval_interval", &C::eval_interval));
    f.push_back(number_field("threads", &C::threads));
    return f;
  }();
  return fields;
}

} // namespace detail

/// Apply `key = value` lines on top of `base`. Unknown keys and bad values are errors with a line
/// number; the result is validated.
inline TrainingConfig parse_config(std::istream &in, TrainingConfig base = {}) {
  std::map<std::string, const detail::ConfigField *> by_name;
  for (const auto &f : detail::config_fields())
    by_name[f.name] = &f;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    if (detail::split_ws(line).empty())
      continue;
    const auto eq = line.find('=');
    const auto where = "config line " + std::to_string(number) + ": ";
    if (eq == std::string::npos)
      throw ParseError(where + "expected key = value");
    const auto key = detail::split_ws(line.substr(0, eq));
    const auto value = detail::split_ws(line.substr(eq + 1));
    if (key.size() != 1 || value.size() > 1)
      throw ParseError(where + "expected key = value");
    const auto it = by_name.find(key[0]);
    if (it == by_name.end())
      throw ParseError(where + "unknown key '" + key[0] + "'");
    try {
      it->second->set(base, value.empty() ? std::string() : value[0]);
    } catch (const ParseError &e) {
      throw ParseError(where + e.what());
    }
  }
  base.validate();
  return base;
}

inline TrainingConfig read_config(const std::filesystem::path &path, TrainingConfig base = {}) {
  std::ifstream in(path);
  if (!in)
    throw ParseError("cannot open " + path.string());
  try {
    return parse_config(in, std::move(base));
  } catch (const ParseError &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Every field, one per line, in a form `parse_config` reads back exactly.
inline std::string format_config(const TrainingConfig &cfg) {
  std::string out;
  for (const auto &f : detail::config_fields())
    out += f.name + " = " + f.get(cfg) + "\n";
  return out;
}

// ---------------------------------------------------------------------------------------------
// CSV

inline const char *kLogCsvHeader = "iteration,l1,dssim,lc,total,primitives,prototypes,holdout_psnr";

inline std::string log_csv(const std::vector<LogRow> &rows) {
  std::string out = std::string(kLogCsvHeader) + "\n";
  for (const auto &r : rows) {
    out += std::to_string(r.iteration) + "," + detail::format_double(r.l1) + "," + detail::format_double(r.dssim) +
           "," + detail::format_double(r.lc) + "," + detail::format_double(r.total) + "," +
           std::to_string(r.primitives) + "," + std::to_string(r.prototypes) + "," +
           (std::isnan(r.holdout_psnr) ? std::string() : detail::format_double(r.holdout_psnr)) + "\n";
  }
  return out;
}

inline std::string metrics_csv(const MetricReport &report) {
  std::string out = "view,psnr,ssim\n";
  for (const auto &v : report.views)
    out += std::to_string(v.index) + "," + detail::format_double(v.psnr) + "," + detail::format_double(v.ssim) + "\n";
  return out;
}

// ---------------------------------------------------------------------------------------------
// Scene directory: cameras.txt, images/NNN.png (plus lossless NNN.pfm), points3D.txt, split.txt

template <typename T> void write_scene(const std::filesystem::path &dir, const SceneBundle<T> &scene) {
  scene.validate();
  std::filesystem::create_directories(dir / "images");
  std::ostringstream cams;
  cams << "# width height fx fy cx cy near_clip world_to_camera[3x4, row-major]\n";
  for (const auto &c : scene.cameras) {
    cams << c.width << " " << c.height;
    for (T v : {c.fx, c.fy, c.cx, c.cy, c.near_clip})
      cams << " " << detail::format_double(double(v));
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 4; ++k)
        cams << " " << detail::format_double(double(c.world_to_camera(r, k)));
    cams << "\n";
  }
  detail::write_bytes(dir / "cameras.txt", cams.str());
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    std::ostringstream name;
    name << std::setw(3) << std::setfill('0') << i;
    write_png(dir / "images" / (name.str() + ".png"), scene.images[i]);
    write_pfm(dir / "images" / (name.str() + ".pfm"), scene.images[i]);
  }
  write_colmap_points_text(dir / "points3D.txt", SfmPoints<T>{scene.sfm_points, scene.sfm_colors});
  std::ostringstream split;
  split << "background";
  for (int c = 0; c < 3; ++c)
    split << " " << detail::format_double(double(scene.background[c]));
  split << "\ntrain";
  for (auto v : scene.train)
    split << " " << v;
  split << "\nholdout";
  for (auto v : scene.holdout)
    split << " " << v;
  split << "\n";
  detail::write_bytes(dir / "split.txt", split.str());
}

template <typename T> SceneBundle<T> read_scene(const std::filesystem::path &dir) {
  SceneBundle<T> scene;
  {
    const auto path = dir / "cameras.txt";
    std::ifstream in(path);
    if (!in)
      throw ParseError("cannot open " + path.string());
    std::string line;
    for (int number = 1; std::getline(in, line); ++number) {
      const auto tok = detail::split_ws(line);
      if (tok.empty() || tok[0][0] == '#')
        continue;
      const auto where = path.string() + " line " + std::to_string(number) + ": ";
      if (tok.size() != 19)
        throw ParseError(where + "expected 19 fields, got " + std::to_string(tok.size()));
      Camera<T> c;
      double v[17];
      if (!detail::parse_number(tok[0], c.width) || !detail::parse_number(tok[1], c.height))
        throw ParseError(where + "bad image size");
      for (int k = 0; k < 17; ++k)
        if (!detail::parse_number(tok[std::size_t(2 + k)], v[k]))
          throw ParseError(where + "bad number '" + tok[std::size_t(2 + k)] + "'");
      c.fx = T(v[0]);
      c.fy = T(v[1]);
      c.cx = T(v[2]);
      c.cy = T(v[3]);
      c.near_clip = T(v[4]);
      c.world_to_camera.setIdentity();
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 4; ++k)
          c.world_to_camera(r, k) = T(v[5 + 4 * r + k]);
      scene.cameras.push_back(c);
    }
  }
  for (std::size_t i = 0; i < scene.cameras.size(); ++i) {
    std::ostringstream name;
    name << std::setw(3) << std::setfill('0') << i;
    const auto exact = dir / "images" / (name.str() + ".pfm");
    scene.images.push_back(std::filesystem::exists(exact) ? read_pfm<T>(exact)
                                                          : read_png<T>(dir / "images" / (name.str() + ".png")));
  }
  const auto pts_txt = dir / "points3D.txt", pts_bin = dir / "points3D.bin";
  const auto pts = read_colmap_points<T>(std::filesystem::exists(pts_txt) ? pts_txt : pts_bin);
  scene.sfm_points = pts.positions;
  scene.sfm_colors = pts.colors;
  {
    const auto path = dir / "split.txt";
    std::ifstream in(path);
    if (!in)
      throw ParseError("cannot open " + path.string());
    std::string line;
    for (int number = 1; std::getline(in, line); ++number) {
      const auto tok = detail::split_ws(line);
      if (tok.empty() || tok[0][0] == '#')
        continue;
      const auto where = path.string() + " line " + std::to_string(number) + ": ";
      if (tok[0] == "background") {
        if (tok.size() != 4)
          throw ParseError(where + "background needs three values");
        for (int c = 0; c < 3; ++c) {
          double x = 0;
          if (!detail::parse_number(tok[std::size_t(1 + c)], x))
            throw ParseError(where + "bad background value");
          scene.background[c] = T(x);
        }
      } else if (tok[0] == "train" || tok[0] == "holdout") {
        auto &list = tok[0] == "train" ? scene.train : scene.holdout;
        for (std::size_t k = 1; k < tok.size(); ++k) {
          std::size_t v = 0;
          if (!detail::parse_number(tok[k], v))
            throw ParseError(where + "bad view index '" + tok[k] + "'");
          list.push_back(v);
        }
      } else {
        throw ParseError(where + "unknown key '" + tok[0] + "'");
      }
    }
  }
  scene.validate();
  return scene;
}

} // namespace gsproto
