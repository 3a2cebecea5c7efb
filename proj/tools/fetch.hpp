// Copyright 2026 The hrm-vision Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <curl/curl.h>
#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hrm/error.hpp"

namespace hrm::fetch {

enum class unpack { gunzip, untar_gz };

struct archive {
  std::string file;          // name under the base URL
  std::uintmax_t bytes = 0;  // published size, checked before unpacking
  unpack how = unpack::gunzip;
  std::string target;        // gunzip: output file; untar_gz: unused
};

struct source {
  std::string base_url;
  std::string subdir;  // under data_dir
  std::vector<archive> archives;
};

inline source mnist_source() {
  return {"https://ossci-datasets.s3.amazonaws.com/mnist/",
          "mnist",
          {{"train-images-idx3-ubyte.gz", 9912422, unpack::gunzip, "train-images-idx3-ubyte"},
           {"train-labels-idx1-ubyte.gz", 28881, unpack::gunzip, "train-labels-idx1-ubyte"},
           {"t10k-images-idx3-ubyte.gz", 1648877, unpack::gunzip, "t10k-images-idx3-ubyte"},
           {"t10k-labels-idx1-ubyte.gz", 4542, unpack::gunzip, "t10k-labels-idx1-ubyte"}}};
}

// The tarballs carry their own top-level directory, so they unpack into
// data_dir directly.
inline source cifar10_source() {
  return {"https://www.cs.toronto.edu/~kriz/", "",
          {{"cifar-10-binary.tar.gz", 170052171, unpack::untar_gz, ""}}};
}

inline source cifar100_source() {
  return {"https://www.cs.toronto.edu/~kriz/", "",
          {{"cifar-100-binary.tar.gz", 168513733, unpack::untar_gz, ""}}};
}

inline void download(const std::string& url, const std::filesystem::path& dest) {
  const auto tmp = dest.string() + ".part";
  std::FILE* out = std::fopen(tmp.c_str(), "wb");
  if (!out) throw io_error("cannot write " + tmp);
  CURL* curl = curl_easy_init();
  if (!curl) {
    std::fclose(out);
    throw io_error("libcurl initialization failed");
  }
  curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl, CURLOPT_WRITEDATA, out);
  curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
  const CURLcode rc = curl_easy_perform(curl);
  curl_easy_cleanup(curl);
  std::fclose(out);
  if (rc != CURLE_OK) {
    std::filesystem::remove(tmp);
    throw io_error("download of " + url + " failed: " + curl_easy_strerror(rc));
  }
  std::filesystem::rename(tmp, dest);
}

class gz_reader {
 public:
  explicit gz_reader(const std::filesystem::path& p) : f_(gzopen(p.string().c_str(), "rb")) {
    if (!f_) throw io_error("cannot open " + p.string());
  }
  ~gz_reader() { gzclose(f_); }
  gz_reader(const gz_reader&) = delete;
  gz_reader& operator=(const gz_reader&) = delete;

  // Reads up to n bytes; returns the count, 0 at end of stream.
  std::size_t read(char* dst, std::size_t n) {
    const int got = gzread(f_, dst, static_cast<unsigned>(n));
    if (got < 0) throw format_error("corrupt gzip stream");
    return static_cast<std::size_t>(got);
  }

  void read_exact(char* dst, std::size_t n, const std::string& what) {
    std::size_t done = 0;
    while (done < n) {
      const auto got = read(dst + done, n - done);
      if (got == 0) throw format_error("archive truncated inside " + what);
      done += got;
    }
  }

 private:
  gzFile f_;
};

inline void gunzip(const std::filesystem::path& src, const std::filesystem::path& dest) {
  gz_reader in(src);
  std::ofstream out(dest, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write " + dest.string());
  std::vector<char> buf(1 << 16);
  while (const auto n = in.read(buf.data(), buf.size()))
    out.write(buf.data(), static_cast<std::streamsize>(n));
}

// Extracts regular files of a ustar archive under `root`. Returns the
// number of files written.
inline std::size_t untar_gz(const std::filesystem::path& src, const std::filesystem::path& root) {
  gz_reader in(src);
  std::array<char, 512> header{};
  std::vector<char> buf(1 << 16);
  std::size_t files = 0;
  for (;;) {
    if (in.read(header.data(), header.size()) != header.size()) break;
    if (header[0] == '\0') break;  // end-of-archive block
    auto field = [&](std::size_t off, std::size_t len) {
      std::string s(header.data() + off, len);
      return s.substr(0, s.find('\0'));
    };
    std::string name = field(0, 100);
    if (const auto prefix = field(345, 155); !prefix.empty()) name = prefix + "/" + name;
    const std::uintmax_t size = std::stoull("0" + field(124, 12), nullptr, 8);
    const char type = header[156];
    const std::filesystem::path rel(name);
    if (rel.is_absolute() || name.find("..") != std::string::npos)
      throw format_error("refusing archive member with unsafe path '" + name + "'");
    const std::uintmax_t padded = (size + 511) / 512 * 512;
    if (type == '0' || type == '\0') {
      const auto dest = root / rel;
      std::filesystem::create_directories(dest.parent_path());
      std::ofstream out(dest, std::ios::binary | std::ios::trunc);
      if (!out) throw io_error("cannot write " + dest.string());
      std::uintmax_t left = padded;
      std::uintmax_t keep = size;
      while (left > 0) {
        const auto n = static_cast<std::size_t>(std::min<std::uintmax_t>(left, buf.size()));
        in.read_exact(buf.data(), n, name);
        const auto k = static_cast<std::size_t>(std::min<std::uintmax_t>(keep, n));
        out.write(buf.data(), static_cast<std::streamsize>(k));
        keep -= k;
        left -= n;
      }
      ++files;
    } else {
      for (std::uintmax_t left = padded; left > 0;) {
        const auto n = static_cast<std::size_t>(std::min<std::uintmax_t>(left, buf.size()));
        in.read_exact(buf.data(), n, name);
        left -= n;
      }
    }
  }
  return files;
}

// Downloads every archive of `src` into data_dir/downloads, checks its size
// against the published length and unpacks it. Archives already present with
// the right size are not downloaded again.
template <class Log>
void fetch(const source& src, const std::filesystem::path& data_dir, Log&& log) {
  namespace fs = std::filesystem;
  const auto downloads = data_dir / "downloads";
  const auto target_dir = data_dir / src.subdir;
  fs::create_directories(downloads);
  fs::create_directories(target_dir);
  for (const auto& a : src.archives) {
    const auto local = downloads / a.file;
    if (!fs::exists(local) || fs::file_size(local) != a.bytes) {
      log("downloading " + src.base_url + a.file);
      download(src.base_url + a.file, local);
    }
    const auto size = fs::file_size(local);
    if (size != a.bytes)
      throw data_error(local.string() + " is " + std::to_string(size) +
                       " bytes, the published length is " + std::to_string(a.bytes));
    if (a.how == unpack::gunzip) {
      gunzip(local, target_dir / a.target);
      log("wrote " + (target_dir / a.target).string());
    } else {
      const auto n = untar_gz(local, target_dir);
      log("unpacked " + std::to_string(n) + " files from " + a.file);
    }
  }
}

}  // namespace hrm::fetch
