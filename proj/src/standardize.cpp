#include "cpe/standardize.hpp"

#include <cmath>

#include "cpe/error.hpp"

namespace cpe {

namespace {

constexpr double kStdFloor = 1e-8;

Parameter frozen(const std::string& name, Matrix value) { return Parameter(name, std::move(value), false); }

void fit_rows(const Matrix& data, Parameter& mean, Parameter& scale) {
  if (data.cols() < 2) throw DataError("standardizer needs at least two samples");
  if (data.rows() != mean.value.rows()) throw StructuralError("standardizer fit: dimension mismatch");
  const Vector m = data.rowwise().mean();
  const Vector var = (data.colwise() - m).rowwise().squaredNorm() / static_cast<double>(data.cols() - 1);
  mean.value.col(0) = m;
  scale.value.col(0) = var.cwiseSqrt().cwiseMax(kStdFloor);
}

}  // namespace

Standardizer::Standardizer(int theta_dim, int data_dim)
    : theta_mean_(frozen("standardizer.theta_mean", Matrix::Zero(theta_dim, 1))),
      theta_scale_(frozen("standardizer.theta_scale", Matrix::Ones(theta_dim, 1))),
      x_mean_(frozen("standardizer.x_mean", Matrix::Zero(data_dim, 1))),
      x_scale_(frozen("standardizer.x_scale", Matrix::Ones(data_dim, 1))) {}

void Standardizer::fit(const Matrix& theta, const Matrix& x) {
  fit_rows(theta, theta_mean_, theta_scale_);
  fit_rows(x, x_mean_, x_scale_);
}

Matrix Standardizer::theta_to_std(const Matrix& theta) const {
  return ((theta.colwise() - theta_mean_.value.col(0)).array().colwise() / theta_scale_.value.col(0).array()).matrix();
}

Matrix Standardizer::theta_from_std(const Matrix& u) const {
  return ((u.array().colwise() * theta_scale_.value.col(0).array()).matrix()).colwise() + theta_mean_.value.col(0);
}

Matrix Standardizer::x_to_std(const Matrix& x) const {
  return ((x.colwise() - x_mean_.value.col(0)).array().colwise() / x_scale_.value.col(0).array()).matrix();
}

Matrix Standardizer::x_from_std(const Matrix& u) const {
  return ((u.array().colwise() * x_scale_.value.col(0).array()).matrix()).colwise() + x_mean_.value.col(0);
}

double Standardizer::log_scale_sum() const { return theta_scale_.value.array().log().sum(); }

void Standardizer::collect(ParameterList& out) {
  out.push_back(&theta_mean_);
  out.push_back(&theta_scale_);
  out.push_back(&x_mean_);
  out.push_back(&x_scale_);
}

}  // namespace cpe
