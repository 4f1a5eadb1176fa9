#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pointcloud.hpp"

// PLY read/write for point clouds: double x/y/z plus optional uchar RGB.
// ASCII by default, binary little-endian optional. Writing is deterministic
// (%.17g round-trips doubles), so write -> read -> write is byte-identical.

namespace ssr::geom {

enum class PlyFormat { kAscii, kBinaryLE };

inline void write_ply(const std::string& path, const PointCloud& pc,
                      PlyFormat format = PlyFormat::kAscii) {
  pc.validate();
  std::ofstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "write_ply: cannot open " << path);
  const int n = pc.size();
  f << "ply\n";
  f << (format == PlyFormat::kAscii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n");
  f << "element vertex " << n << "\n";
  f << "property double x\nproperty double y\nproperty double z\n";
  if (pc.colors) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "end_header\n";

  auto to_byte = [](double c) {
    int v = static_cast<int>(std::lround(c * 255.0));
    return static_cast<unsigned char>(std::min(255, std::max(0, v)));
  };

  if (format == PlyFormat::kAscii) {
    char buf[96];
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", pc.points.at2(i, c));
        f << buf << (c < 2 ? " " : "");
      }
      if (pc.colors)
        f << " " << static_cast<int>(to_byte(pc.colors->at2(i, 0))) << " "
          << static_cast<int>(to_byte(pc.colors->at2(i, 1))) << " "
          << static_cast<int>(to_byte(pc.colors->at2(i, 2)));
      f << "\n";
    }
  } else {
    static_assert(sizeof(double) == 8);
    for (int i = 0; i < n; ++i) {
      double xyz[3] = {pc.points.at2(i, 0), pc.points.at2(i, 1), pc.points.at2(i, 2)};
      f.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (pc.colors) {
        unsigned char rgb[3] = {to_byte(pc.colors->at2(i, 0)), to_byte(pc.colors->at2(i, 1)),
                                to_byte(pc.colors->at2(i, 2))};
        f.write(reinterpret_cast<const char*>(rgb), 3);
      }
    }
  }
  SSR_CHECK(f.good(), "write_ply: write failed for " << path);
}

inline PointCloud read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  SSR_CHECK(f.good(), "read_ply: cannot open " << path);

  std::string line;
  std::getline(f, line);
  SSR_CHECK(line == "ply" || line == "ply\r", "read_ply: not a PLY file: " << path);

  bool binary = false;
  int n = -1;
  struct Prop {
    std::string type, name;
  };
  std::vector<Prop> props;
  bool in_vertex = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "binary_little_endian")
        binary = true;
      else
        SSR_CHECK(fmt == "ascii", "read_ply: unsupported format " << fmt);
    } else if (tok == "element") {
      std::string name;
      int cnt = 0;
      ss >> name >> cnt;
      if (name == "vertex") {
        n = cnt;
        in_vertex = true;
      } else {
        SSR_CHECK(cnt == 0, "read_ply: unsupported element " << name);
        in_vertex = false;
      }
    } else if (tok == "property") {
      if (!in_vertex) continue;
      Prop p;
      ss >> p.type >> p.name;
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  SSR_CHECK(n >= 0, "read_ply: missing vertex element");

  int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
  for (size_t k = 0; k < props.size(); ++k) {
    if (props[k].name == "x") ix = static_cast<int>(k);
    if (props[k].name == "y") iy = static_cast<int>(k);
    if (props[k].name == "z") iz = static_cast<int>(k);
    if (props[k].name == "red") ir = static_cast<int>(k);
    if (props[k].name == "green") ig = static_cast<int>(k);
    if (props[k].name == "blue") ib = static_cast<int>(k);
  }
  SSR_CHECK(ix >= 0 && iy >= 0 && iz >= 0, "read_ply: missing x/y/z properties");
  bool has_rgb = ir >= 0 && ig >= 0 && ib >= 0;

  PointCloud pc;
  pc.points = Array({n, 3});
  if (has_rgb) pc.colors = Array({n, 3});

  auto prop_size = [](const std::string& t) -> int {
    if (t == "double" || t == "float64") return 8;
    if (t == "float" || t == "float32") return 4;
    if (t == "uchar" || t == "uint8") return 1;
    SSR_CHECK(false, "read_ply: unsupported property type " << t);
    return 0;
  };

  if (!binary) {
    for (int i = 0; i < n; ++i) {
      std::getline(f, line);
      std::istringstream ss(line);
      std::vector<double> vals(props.size(), 0.0);
      for (size_t k = 0; k < props.size(); ++k) ss >> vals[k];
      SSR_CHECK(!ss.fail(), "read_ply: malformed vertex line " << i);
      pc.points.at2(i, 0) = vals[static_cast<size_t>(ix)];
      pc.points.at2(i, 1) = vals[static_cast<size_t>(iy)];
      pc.points.at2(i, 2) = vals[static_cast<size_t>(iz)];
      if (has_rgb) {
        pc.colors->at2(i, 0) = vals[static_cast<size_t>(ir)] / 255.0;
        pc.colors->at2(i, 1) = vals[static_cast<size_t>(ig)] / 255.0;
        pc.colors->at2(i, 2) = vals[static_cast<size_t>(ib)] / 255.0;
      }
    }
  } else {
    int row = 0;
    std::vector<int> offs(props.size(), 0);
    for (size_t k = 0; k < props.size(); ++k) {
      offs[k] = row;
      row += prop_size(props[k].type);
    }
    std::vector<char> buf(static_cast<size_t>(row));
    auto read_val = [&](int k) -> double {
      const char* p = buf.data() + offs[static_cast<size_t>(k)];
      const std::string& t = props[static_cast<size_t>(k)].type;
      if (t == "double" || t == "float64") {
        double v;
        std::memcpy(&v, p, 8);
        return v;
      }
      if (t == "float" || t == "float32") {
        float v;
        std::memcpy(&v, p, 4);
        return v;
      }
      return static_cast<double>(*reinterpret_cast<const unsigned char*>(p));
    };
    for (int i = 0; i < n; ++i) {
      f.read(buf.data(), row);
      SSR_CHECK(f.good(), "read_ply: truncated binary body at vertex " << i);
      pc.points.at2(i, 0) = read_val(ix);
      pc.points.at2(i, 1) = read_val(iy);
      pc.points.at2(i, 2) = read_val(iz);
      if (has_rgb) {
        pc.colors->at2(i, 0) = read_val(ir) / 255.0;
        pc.colors->at2(i, 1) = read_val(ig) / 255.0;
        pc.colors->at2(i, 2) = read_val(ib) / 255.0;
      }
    }
  }
  return pc;
}

}  // namespace ssr::geom
