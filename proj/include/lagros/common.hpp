#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace lagros {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Non-finite or out-of-domain numerical input.
struct DomainError : Error {
  using Error::Error;
};
// A problem (SDP, planning, eroded set) has no feasible point.
struct InfeasibleError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  DivergenceError(const std::string& what, double t) : Error(what), time(t) {}
  double time;
};
struct ConfigError : Error {
  using Error::Error;
};

inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite value");
}

// Independent stream for (seed, stream index); stable regardless of scheduling.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0,
                         std::uint64_t substream = 0);

Vec gaussian_vec(int n, std::mt19937_64& rng);

// SHA-256 hex digest.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

// Runs body(i) for i in [0, count) on up to `jobs` threads. Work items must be
// independent; results are deterministic as long as body writes to slot i only.
void parallel_for(int count, int jobs, const std::function<void(int)>& body);

// Round-trip exact formatting for artifacts.
std::string fmt_double(double v);

}  // namespace lagros
