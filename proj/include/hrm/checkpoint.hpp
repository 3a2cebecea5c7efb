// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hrm/error.hpp"
#include "hrm/nn.hpp"
#include "hrm/tensor.hpp"

// A checkpoint is two files: a key=value text manifest and, next to it, a
// blob of little-endian float32 values. The manifest lists every tensor as
//   tensor.<i>=<name> <d0>x<d1>x...
// in blob order, plus blob=<file name>, blob_bytes and an FNV-1a checksum.

namespace hrm {

using key_values = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Lines are key=value; blank lines and lines starting with '#' are skipped.
inline key_values parse_key_values(std::istream& in, const std::string& origin) {
  key_values out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw format_error(origin + ":" + std::to_string(n) + ": expected key=value, got '" + line +
                         "'");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline key_values read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  return parse_key_values(in, path.string());
}

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

inline std::string shape_token(const shape_t& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out.empty() ? "scalar" : out;
}

struct checkpoint {
  key_values meta;
  std::vector<std::pair<std::string, shape_t>> layout;
  std::vector<float> values;
};

namespace detail {

inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline shape_t parse_shape_token(const std::string& tok, const std::string& origin) {
  if (tok == "scalar") return {};
  shape_t s;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      s.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw format_error(origin + ": bad shape '" + tok + "'");
    }
  }
  return s;
}

}  // namespace detail

// Writes `<manifest>` and the blob next to it. Each file is replaced via a
// rename so an interrupted save leaves the previous checkpoint intact.
inline void save_checkpoint(const std::filesystem::path& manifest, const key_values& meta,
                            const parameter_list<float>& tensors) {
  std::string blob;
  std::ostringstream text;
  text << "# hrm-vision checkpoint\n";
  for (const auto& [k, v] : meta) text << k << '=' << v << '\n';
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    text << "tensor." << i << '=' << t.name << ' ' << shape_token(t.value.shape()) << '\n';
    for (float f : t.value.values()) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  const auto blob_name = manifest.filename().string() + ".bin";
  text << "tensor_count=" << tensors.size() << '\n';
  text << "blob=" << blob_name << '\n';
  text << "blob_bytes=" << blob.size() << '\n';
  text << "blob_fnv1a="
       << fnv1a(reinterpret_cast<const unsigned char*>(blob.data()), blob.size()) << '\n';
  detail::write_atomically(manifest.parent_path() / blob_name, blob);
  detail::write_atomically(manifest, text.str());
}

inline checkpoint load_checkpoint(const std::filesystem::path& manifest) {
  checkpoint ck;
  auto kv = read_key_values(manifest);
  const std::string origin = manifest.string();
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw format_error(origin + ": missing key '" + key + "'");
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  const std::size_t count = std::stoul(take("tensor_count"));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto entry = take("tensor." + std::to_string(i));
    const auto sp = entry.rfind(' ');
    if (sp == std::string::npos) throw format_error(origin + ": bad tensor entry '" + entry + "'");
    auto shape = detail::parse_shape_token(entry.substr(sp + 1), origin);
    expected += numel(shape);
    ck.layout.emplace_back(entry.substr(0, sp), std::move(shape));
  }
  const auto blob_path = manifest.parent_path() / take("blob");
  const std::size_t bytes = std::stoull(take("blob_bytes"));
  const std::uint64_t sum = std::stoull(take("blob_fnv1a"));
  std::ifstream in(blob_path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint blob " + blob_path.string());
  std::vector<unsigned char> raw{std::istreambuf_iterator<char>(in),
                                 std::istreambuf_iterator<char>()};
  if (raw.size() != bytes || bytes != 4 * expected)
    throw format_error(blob_path.string() + ": " + std::to_string(raw.size()) +
                       " bytes, manifest declares " + std::to_string(bytes) + " for " +
                       std::to_string(expected) + " values");
  if (fnv1a(raw.data(), raw.size()) != sum)
    throw format_error(blob_path.string() + ": checksum mismatch");
  ck.values.resize(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{raw[4 * i + b]} << (8 * b);
    ck.values[i] = std::bit_cast<float>(bits);
  }
  ck.meta = std::move(kv);
  return ck;
}

// Copies checkpoint values into `tensors`, which must match the stored
// names and shapes in order.
inline void restore_tensors(const checkpoint& ck, const parameter_list<float>& tensors) {
  if (ck.layout.size() != tensors.size())
    throw format_error("checkpoint holds " + std::to_string(ck.layout.size()) +
                       " tensors, model expects " + std::to_string(tensors.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, shape] = ck.layout[i];
    if (name != tensors[i].name || shape != tensors[i].value.shape())
      throw format_error("checkpoint tensor " + std::to_string(i) + " is " + name + " " +
                         shape_token(shape) + ", model expects " + tensors[i].name + " " +
                         shape_token(tensors[i].value.shape()));
    auto dst = basic_tensor<float>(tensors[i].value).data();
    std::copy_n(ck.values.begin() + static_cast<std::ptrdiff_t>(offset), dst.size(), dst.begin());
    offset += dst.size();
  }
}

}  // namespace hrm
