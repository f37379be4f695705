#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaot::io {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : path_(path), tmp_(path.string() + ".tmp"), out_(tmp_, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + tmp_.string());
  }

  void magic(const char (&m)[9]) { out_.write(m, 8); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(const std::vector<double>& v) { raw(v.data(), v.size() * sizeof(double)); }
  void u64s(const std::vector<uint64_t>& v) { raw(v.data(), v.size() * sizeof(uint64_t)); }
  void bytes(const std::string& s) { raw(s.data(), s.size()); }

  // Commits via rename so readers never observe a half-written file.
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + tmp_.string());
    out_.close();
    std::filesystem::rename(tmp_, path_);
  }

 private:
  void raw(const void* p, size_t n) { out_.write(static_cast<const char*>(p), n); }

  std::filesystem::path path_, tmp_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), name_(path.string()) {
    if (!in_) throw std::runtime_error("cannot open for reading: " + name_);
  }

  void expect_magic(const char (&m)[9]) {
    char got[8];
    raw(got, 8);
    if (std::memcmp(got, m, 8) != 0) throw std::runtime_error(name_ + ": bad magic");
  }
  uint32_t u32() { uint32_t v; raw(&v, sizeof v); return v; }
  uint64_t u64() { uint64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  std::vector<double> f64s(size_t n) {
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::vector<uint64_t> u64s(size_t n) {
    std::vector<uint64_t> v(n);
    raw(v.data(), n * sizeof(uint64_t));
    return v;
  }
  std::string bytes(size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

 private:
  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), n);
    if (static_cast<size_t>(in_.gcount()) != n)
      throw std::runtime_error(name_ + ": truncated file");
  }

  std::ifstream in_;
  std::string name_;
};

}  // namespace gaot::io
