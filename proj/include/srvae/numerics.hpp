#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace srvae {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Row-major n-dimensional array of doubles.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(Shape shape, double fill = 0.0);
  DenseArray(Shape shape, std::vector<double> data);

  static DenseArray scalar(double v) { return DenseArray({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Same data, new shape with an equal element count.
  void reshape(Shape shape);
  DenseArray reshaped(Shape shape) const;

  void fill(double v);
  bool all_finite() const;

  bool operator==(const DenseArray& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// log(sum(exp(v))) with max-shifting. Throws on empty input.
double log_sum_exp(std::span<const double> values);

/// log_sum_exp(v) - log(n).
double log_mean_exp(std::span<const double> values);

/// Objective for grad_check: returns f(params) and, when `grad` is non-null,
/// writes the analytic gradient into it (same shape as params).
using ObjectiveFn = std::function<double(const DenseArray& params, DenseArray* grad)>;

/// Maximum over coordinates of |a - n| / max(1e-8, |a| + |n|), where a is the
/// analytic gradient and n the central difference at step eps.
double grad_check(const ObjectiveFn& f, const DenseArray& params, double eps);

/// Counter-based SplitMix64 stream. Draw i of a stream with seed s is
/// mix(s + (i + 1) * 0x9E3779B97F4A7C15), so the stream is a pure function of
/// (seed, position).
///
/// uniform() consumes one draw and returns ((bits >> 11) + 0.5) * 2^-53, which
/// lies strictly inside (0, 1). normal() consumes two draws (u1 then u2) and
/// returns sqrt(-2 ln u1) * cos(2 pi u2); the sine branch is discarded.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t position = 0)
      : seed_(seed), position_(position) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }

  std::uint64_t next_u64();
  double uniform();
  double normal();
  /// Integer in [0, n) from one uniform draw.
  std::size_t below(std::size_t n);
  void fill_normal(std::span<double> out);
  DenseArray normal_array(const Shape& shape);

  /// Independent stream derived from (seed, label); does not advance this one.
  RngStream child(std::string_view label) const;
  RngStream child(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::uint64_t position_;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

}  // namespace srvae
