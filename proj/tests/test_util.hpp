#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "specnet/nn.hpp"

namespace specnet::testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("specnet_" + tag + "_" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& child = "") const { return child.empty() ? path_.string() : (path_ / child).string(); }

 private:
  std::filesystem::path path_;
};

// Plain copy of aligned storage, for comparisons against literals.
template <typename T>
std::vector<T> plain(const AlignedVector<T>& v) {
  return {v.begin(), v.end()};
}

template <typename T = double>
nn::Tensor<T> random_tensor(std::mt19937_64& rng, std::size_t b, std::size_t c, std::size_t l, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  nn::Tensor<T> t(b, c, l);
  for (auto& v : t.values) v = static_cast<T>(n(rng));
  return t;
}

}  // namespace specnet::testing
