#include "mvbed/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvbed {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RngStream::RngStream(std::uint64_t seed) : key_(mix64(seed + 0x9e3779b97f4a7c15ULL)), label_("root") {}

RngStream RngStream::split(std::string_view label) const {
  std::uint64_t child = mix64(key_ ^ mix64(fnv1a64(label) + 0x632be59bd9b4e019ULL));
  return RngStream(child, label_ + "/" + std::string(label));
}

std::uint64_t RngStream::next_u64() {
  std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL));
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform_positive() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

double RngStream::normal() {
  double u1 = uniform_positive();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: empty range");
  // Rejection keeps the draw exactly uniform.
  std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

namespace {

void fill_standard_normal(RngStream& rng, Matrix& out) {
  double* p = out.data();
  const Index n = out.size();
  Index i = 0;
  for (; i + 1 < n; i += 2) {
    double r = std::sqrt(-2.0 * std::log(rng.uniform_positive()));
    double theta = 2.0 * std::numbers::pi * rng.uniform();
    p[i] = r * std::cos(theta);
    p[i + 1] = r * std::sin(theta);
  }
  if (i < n) p[i] = rng.normal();
}

}  // namespace

Matrix sample(RngStream& rng, const Distribution& dist, Index rows, Index cols) {
  Matrix out(rows, cols);
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, Uniform>) {
          if (!(d.high > d.low)) throw std::invalid_argument("sample: uniform requires high > low");
          for (Index i = 0; i < out.size(); ++i) out.data()[i] = d.low + (d.high - d.low) * rng.uniform();
        } else if constexpr (std::is_same_v<D, StandardNormal>) {
          fill_standard_normal(rng, out);
        } else if constexpr (std::is_same_v<D, Normal>) {
          if (!(d.stddev > 0.0)) throw std::invalid_argument("sample: normal requires stddev > 0");
          fill_standard_normal(rng, out);
          out = (out.array() * d.stddev + d.mean).matrix();
        } else {
          for (Index i = 0; i < out.size(); ++i) out.data()[i] = gumbel_from_uniform(rng.uniform());
        }
      },
      dist);
  return out;
}

ad::Var reparameterized_normal(const ad::Var& mean, const ad::Var& stddev, const Matrix& noise) {
  ad::Tape& tape = *mean.tape();
  return mean + stddev * tape.constant(noise);
}

std::vector<Index> resample(RngStream& rng, const Vector& weights, Index count) {
  if (weights.size() == 0) throw std::invalid_argument("resample: no weights");
  std::vector<double> cdf(static_cast<std::size_t>(weights.size()));
  double acc = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    if (weights(i) < 0.0) throw std::invalid_argument("resample: negative weight");
    acc += weights(i);
    cdf[static_cast<std::size_t>(i)] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("resample: weights sum to zero");
  std::vector<Index> out(static_cast<std::size_t>(count));
  for (auto& o : out) {
    double u = rng.uniform() * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    o = std::min<Index>(static_cast<Index>(it - cdf.begin()), weights.size() - 1);
  }
  return out;
}

}  // namespace mvbed
