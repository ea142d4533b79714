#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>

#include "prag/adapters.hpp"
#include "prag/common.hpp"
#include "prag/model.hpp"
#include "prag/rng.hpp"

namespace prag::testing {

inline ModelConfig tiny_config(int layers = 2, int hidden = 16, int ffn = 64, int heads = 2,
                               int max_seq = 64) {
  ModelConfig c;
  c.n_layers = layers;
  c.hidden = hidden;
  c.ffn = ffn;
  c.n_heads = heads;
  c.max_seq_len = max_seq;
  return c;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = info ? std::string(info->test_suite_name()) + "_" + info->name() : "prag";
    for (auto& ch : name) {
      if (ch == '/') ch = '_';
    }
    path_ = std::filesystem::temp_directory_path() /
            ("prag_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Adapter with every factor (including B) filled with N(0, sigma^2).
inline LowRankAdapter random_adapter(const AdapterConfig& config, const ModelParams& base,
                                     DocId id, std::uint64_t seed, double sigma = 0.1) {
  LowRankAdapter a = new_random(config, base, id, seed);
  Rng rng(derive_seed(seed, 99));
  for (auto& l : a.layers) {
    for (Matrix* m : {&l.a_up, &l.b_up, &l.a_down, &l.b_down}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(sigma * rng.normal());
    }
  }
  return a;
}

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / scale;
}

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected prag::Error";
  return ErrorCode::kNotFound;
}

}  // namespace prag::testing
