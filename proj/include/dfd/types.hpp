#pragma once

#include <array>
#include <cstddef>

#include <Eigen/Core>

namespace dfd {

// Single-channel image, row-major so that (y, x) indexing walks memory along x.
template <typename Scalar>
using PlaneT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Plane = PlaneT<double>;

// Three planes in R, G, B order.
template <typename Scalar>
struct RgbT {
  std::array<PlaneT<Scalar>, 3> ch;

  RgbT() = default;
  RgbT(Eigen::Index rows, Eigen::Index cols) {
    for (auto& c : ch) c = PlaneT<Scalar>::Zero(rows, cols);
  }

  static RgbT Zero(Eigen::Index rows, Eigen::Index cols) { return RgbT(rows, cols); }
  static RgbT Constant(Eigen::Index rows, Eigen::Index cols, Scalar v) {
    RgbT out(rows, cols);
    for (auto& c : out.ch) c.setConstant(v);
    return out;
  }

  Eigen::Index rows() const { return ch[0].rows(); }
  Eigen::Index cols() const { return ch[0].cols(); }
  Eigen::Index pixels() const { return rows() * cols(); }

  PlaneT<Scalar>& operator[](std::size_t c) { return ch[c]; }
  const PlaneT<Scalar>& operator[](std::size_t c) const { return ch[c]; }

  RgbT& operator+=(const RgbT& o) {
    for (std::size_t c = 0; c < 3; ++c) ch[c] += o.ch[c];
    return *this;
  }
  RgbT& operator-=(const RgbT& o) {
    for (std::size_t c = 0; c < 3; ++c) ch[c] -= o.ch[c];
    return *this;
  }
  RgbT& operator*=(Scalar s) {
    for (auto& c : ch) c *= s;
    return *this;
  }
  friend RgbT operator+(RgbT a, const RgbT& b) { return a += b; }
  friend RgbT operator-(RgbT a, const RgbT& b) { return a -= b; }
  friend RgbT operator*(Scalar s, RgbT a) { return a *= s; }

  Scalar squaredNorm() const {
    Scalar s = 0;
    for (const auto& c : ch) s += c.squaredNorm();
    return s;
  }
  Scalar sum() const {
    Scalar s = 0;
    for (const auto& c : ch) s += c.sum();
    return s;
  }
  Scalar dot(const RgbT& o) const {
    Scalar s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += ch[c].cwiseProduct(o.ch[c]).sum();
    return s;
  }
  bool sameShape(const RgbT& o) const { return rows() == o.rows() && cols() == o.cols(); }
};
using Rgb = RgbT<double>;

}  // namespace dfd
