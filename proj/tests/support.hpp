#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualfocus/backend.hpp"
#include "dualfocus/image.hpp"

namespace dftest {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(DF_FIXTURES) / name; }

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("dftest-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Image whose pixel (x, y) encodes its own coordinates.
inline dualfocus::ImageBuf coordinate_image(int w, int h) {
  dualfocus::ImageBuf img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.set(x, y, static_cast<std::uint8_t>(x % 251), static_cast<std::uint8_t>(y % 251),
              static_cast<std::uint8_t>((x * 7 + y * 13) % 251));
    }
  }
  return img;
}

inline dualfocus::ImageRef shared(dualfocus::ImageBuf img) {
  return std::make_shared<const dualfocus::ImageBuf>(std::move(img));
}

inline dualfocus::MockBackend bench_backend() {
  return dualfocus::MockBackend(dualfocus::mock_script_from_json(read_json(fixture("bench_mock.json"))));
}

}  // namespace dftest
