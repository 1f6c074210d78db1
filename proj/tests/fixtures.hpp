#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "forage/flns.hpp"
#include "forage/lens.hpp"
#include "forage/norms.hpp"
#include "forage/random.hpp"

namespace fixture {

namespace fs = std::filesystem;

// Removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("forage-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline forage::CategoryNorms norms_from(const std::string& csv) {
  std::istringstream in(csv);
  return forage::parse_norms(in);
}

// Animals "a0".."a{n-1}", each in 1..max_memberships of `n_cats` categories.
inline forage::CategoryNorms random_norms(forage::Rng& rng, std::size_t n_animals, std::size_t n_cats,
                                          std::size_t max_memberships = 3) {
  forage::CategoryNorms norms;
  for (std::size_t a = 0; a < n_animals; ++a) {
    const auto k = 1 + forage::uniform_index(rng, max_memberships);
    for (std::size_t j = 0; j < k; ++j) {
      norms.add("c" + std::to_string(forage::uniform_index(rng, n_cats)), "a" + std::to_string(a));
    }
  }
  return norms;
}

inline std::vector<std::string> random_items(forage::Rng& rng, const forage::CategoryNorms& norms, std::size_t len) {
  auto pool = norms.animals();
  forage::shuffle(pool, rng);
  pool.resize(std::min(len, pool.size()));
  return pool;
}

inline double normal(forage::Rng& rng) {
  // Box-Muller on top of the portable uniform draws.
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) / 9007199254740993.0;
  const double u2 = static_cast<double>(rng() >> 11) / 9007199254740992.0;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

struct PlantedDump {
  forage::lens::Manifest manifest;
  fs::path dump_path;
};

// Residual dump with `n_seq` sequences of `per_seq` events. At `signal_layer`
// switch events are shifted by `snr` noise SDs along a random unit direction;
// every other layer is pure isotropic noise.
inline PlantedDump planted_dump(const fs::path& dir, std::uint64_t seed, std::size_t n_seq = 200,
                                std::size_t per_seq = 4, std::size_t num_layers = 6, std::size_t d_model = 32,
                                std::size_t signal_layer = 3, double snr = 3.0) {
  forage::Rng rng(seed);
  Eigen::VectorXf dir_vec(static_cast<Eigen::Index>(d_model));
  for (auto& v : dir_vec) v = static_cast<float>(normal(rng));
  dir_vec.normalize();

  PlantedDump out;
  auto& m = out.manifest;
  m.model_tag = "synthetic";
  m.num_layers = num_layers;
  m.d_model = d_model;
  m.vocab_size = 8;
  m.dump_file = "planted.flns";
  forage::flns::DumpWriter w;
  std::size_t e = 0;
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t t = 0; t < per_seq; ++t, ++e) {
      const bool sw = forage::uniform_index(rng, 2) == 1;
      m.events.push_back({"seq" + std::to_string(s), t, sw, std::nullopt});
      for (std::size_t l = 0; l <= num_layers; ++l) {
        std::vector<float> h(d_model);
        for (std::size_t k = 0; k < d_model; ++k) {
          h[k] = static_cast<float>(normal(rng));
          if (l == signal_layer && sw) h[k] += static_cast<float>(snr) * dir_vec[static_cast<Eigen::Index>(k)];
        }
        w.add(forage::lens::resid_name(e, l), h);
      }
    }
  }
  out.dump_path = dir / *m.dump_file;
  w.write(out.dump_path);
  return out;
}

}  // namespace fixture
