// Counter-based, splittable random streams.
//
// A stream is a 64-bit key plus a draw counter; draw i is a hash of
// (key, i). split() derives a child key from the parent key and a label, so
// children are reproducible no matter how many draws the parent has made.

#pragma once

#include "mvbed/autodiff.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mvbed {

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream split(std::string_view label) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1].
  double uniform_positive();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  const std::string& label() const { return label_; }

 private:
  RngStream(std::uint64_t key, std::string label) : key_(key), label_(std::move(label)) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::string label_;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

struct Uniform {
  double low;
  double high;
};
struct StandardNormal {};
struct Normal {
  double mean;
  double stddev;
};
struct Gumbel01 {};

using Distribution = std::variant<Uniform, StandardNormal, Normal, Gumbel01>;

inline constexpr double kGumbelClamp = 1e-12;

// -log(-log u) with u clamped to [eps, 1 - eps].
double gumbel_from_uniform(double u);

// rows x cols independent draws.
Matrix sample(RngStream& rng, const Distribution& dist, Index rows, Index cols);

// mean + stddev * noise on the tape, so gradients reach mean and stddev.
ad::Var reparameterized_normal(const ad::Var& mean, const ad::Var& stddev, const Matrix& noise);

// Indices drawn with probability proportional to weights (multinomial).
std::vector<Index> resample(RngStream& rng, const Vector& weights, Index count);

}  // namespace mvbed
