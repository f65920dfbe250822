#pragma once

// Streamline containers and the MRtrix .tck track file format.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "actrack/errors.hpp"

namespace actrack {

struct Streamline {
  std::vector<Eigen::Vector3d> points;  // world mm
  std::uint64_t seed_index = 0;         // attempt index that produced it
  std::uint64_t stream_id = 0;          // random stream used

  std::size_t size() const { return points.size(); }
};

struct Tractogram {
  std::vector<Streamline> streamlines;
  std::map<std::string, std::string> properties;  // written as header fields

  std::size_t size() const { return streamlines.size(); }
};

namespace tck_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace tck_detail

// Header: "mrtrix tracks", properties, datatype, count, file offset, END. Body: float32 LE
// (x, y, z) triplets, NaN triplet after every streamline, Inf triplet at the end.
inline void write_tck(const Tractogram& t, const std::string& path) {
  std::string head = "mrtrix tracks\n";
  for (const auto& [k, v] : t.properties) {
    if (k == "datatype" || k == "count" || k == "file" || k.find_first_of(":\n") != std::string::npos ||
        v.find('\n') != std::string::npos) {
      throw ParameterError("tck: invalid header property '" + k + "'");
    }
    head += k + ": " + v + "\n";
  }
  head += "datatype: Float32LE\n";
  head += "count: " + std::to_string(t.streamlines.size()) + "\n";
  std::size_t offset = head.size() + 16;
  std::string full;
  for (;;) {
    full = head + "file: . " + std::to_string(offset) + "\nEND\n";
    if (full.size() == offset) break;
    offset = full.size();
  }

  std::vector<float> body;
  std::size_t total = 3;
  for (const auto& s : t.streamlines) total += 3 * (s.points.size() + 1);
  body.reserve(total);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  for (const auto& s : t.streamlines) {
    for (const auto& p : s.points) {
      body.push_back(static_cast<float>(p.x()));
      body.push_back(static_cast<float>(p.y()));
      body.push_back(static_cast<float>(p.z()));
    }
    body.insert(body.end(), {nan, nan, nan});
  }
  body.insert(body.end(), {inf, inf, inf});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("tck: cannot create " + path);
  out.write(full.data(), static_cast<std::streamsize>(full.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size() * sizeof(float)));
  if (!out) throw IoError("tck: write failed for " + path);
}

inline Tractogram read_tck(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("tck: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || tck_detail::trim(line) != "mrtrix tracks") {
    throw FormatError("tck: missing 'mrtrix tracks' magic in " + path);
  }
  Tractogram t;
  std::string datatype;
  long long offset = -1;
  long long count = -1;
  bool ended = false;
  while (std::getline(in, line)) {
    line = tck_detail::trim(line);
    if (line == "END") {
      ended = true;
      break;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw FormatError("tck: malformed header line '" + line + "'");
    const std::string key = tck_detail::trim(line.substr(0, colon));
    const std::string value = tck_detail::trim(line.substr(colon + 1));
    if (key == "datatype") {
      datatype = value;
    } else if (key == "file") {
      std::istringstream ss(value);
      std::string dot;
      if (!(ss >> dot >> offset) || dot != ".") throw FormatError("tck: unsupported file field '" + value + "'");
    } else if (key == "count") {
      count = std::stoll(value);
    } else {
      t.properties[key] = value;
    }
  }
  if (!ended) throw FormatError("tck: header not terminated by END");
  if (offset < 0) throw FormatError("tck: missing file offset");
  const bool f32 = datatype == "Float32LE";
  const bool f64 = datatype == "Float64LE";
  if (!f32 && !f64) throw UnsupportedError("tck: unsupported datatype '" + datatype + "'");

  in.clear();
  in.seekg(offset);
  Streamline current;
  std::uint64_t index = 0;
  for (;;) {
    double xyz[3];
    if (f32) {
      float buf[3];
      if (!in.read(reinterpret_cast<char*>(buf), sizeof(buf))) break;
      for (int i = 0; i < 3; ++i) xyz[i] = buf[i];
    } else {
      if (!in.read(reinterpret_cast<char*>(xyz), sizeof(xyz))) break;
    }
    if (std::isinf(xyz[0])) break;
    if (std::isnan(xyz[0])) {
      current.seed_index = index++;
      t.streamlines.push_back(std::move(current));
      current = Streamline{};
      continue;
    }
    current.points.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  if (!current.points.empty()) {
    current.seed_index = index;
    t.streamlines.push_back(std::move(current));
  }
  if (count >= 0 && static_cast<std::size_t>(count) != t.streamlines.size()) {
    throw FormatError("tck: header count " + std::to_string(count) + " does not match " +
                      std::to_string(t.streamlines.size()) + " streamlines in body");
  }
  return t;
}

}  // namespace actrack
