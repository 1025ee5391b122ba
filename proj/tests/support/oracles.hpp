/*
 * Copyright 2026 The fimpp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Reference implementations used only by tests: central finite differences,
// adaptive Gauss-Kronrod quadrature, and the one-sample Kolmogorov-Smirnov test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fimpp/hawkes.hpp"
#include "fimpp/tensor.hpp"

namespace fimpp::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
};

/// Compares tape gradients of a scalar function with central differences.
/// The error for each input is ||analytic - numeric|| / max(||numeric||, floor).
GradCheckResult gradcheck(const std::function<Tensor(std::span<const Tensor>)>& f, std::vector<Tensor> inputs,
                          double step = 1e-5, double floor = 1e-8);

/// Adaptive Gauss-Kronrod (7, 15) on [a, b] to absolute tolerance.
double gauss_kronrod(const std::function<double(double)>& f, double a, double b, double tolerance = 1e-12,
                     int max_depth = 40);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// One-sample KS test of `samples` against a continuous CDF (asymptotic p-value
/// with the Stephens small-sample correction).
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);

std::vector<double> random_values(std::size_t n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0);
Tensor random_tensor(Shape shape, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_text(const std::filesystem::path& path);

/// Constant bases, all signs zero.
HawkesInstance poisson_instance(const std::vector<double>& rates);

}  // namespace fimpp::testing
