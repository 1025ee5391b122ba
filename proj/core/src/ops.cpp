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

#include "fimpp/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fimpp/errors.hpp"

namespace fimpp {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;
using Strided = Eigen::OuterStride<>;
using CSMap = Eigen::Map<const RowMat, 0, Strided>;
using MSMap = Eigen::Map<RowMat, 0, Strided>;
using Values = std::shared_ptr<const std::vector<double>>;

CMap as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return CMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MMap as_matrix(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape* common_tape(std::span<const Tensor> inputs) {
  Tape* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.tracked()) continue;
    if (tape && tape != t.tape()) throw ContractError("operation mixes tensors from different tapes");
    tape = t.tape();
  }
  return tape;
}

Tensor finish(const char* op, Shape shape, std::vector<double> values,
              std::span<const Tensor> inputs, Tape::Backward backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string(op) + " produced a non-finite value");
  }
  Tape* tape = common_tape(inputs);
  if (!tape) return Tensor(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), inputs, std::move(backward));
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_string(t.shape()));
  }
}

// Rank-1 and rank-2 tensors viewed as [rows, cols].
std::size_t row_count(const Tensor& t) { return t.size() / std::max<std::size_t>(t.cols(), 1); }

enum class Broadcast { None, Left, Right };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (a.size() == 1) return Broadcast::Left;
  if (b.size() == 1) return Broadcast::Right;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

template <typename Forward, typename DLeft, typename DRight>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward f, DLeft da, DRight db) {
  const auto kind = broadcast_kind(a, b, op);
  const Tensor& big = kind == Broadcast::Left ? b : a;
  const std::size_t n = big.size();
  Values av = a.shared_values();
  Values bv = b.shared_values();
  auto ai = [kind](std::size_t i) { return kind == Broadcast::Left ? 0 : i; };
  auto bi = [kind](std::size_t i) { return kind == Broadcast::Right ? 0 : i; };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f((*av)[ai(i)], (*bv)[bi(i)]);
  const Tensor inputs[] = {a, b};
  return finish(op, big.shape(), std::move(out), inputs,
                [av, bv, n, ai, bi, da, db](std::span<const double> g,
                                            std::span<std::vector<double>* const> grads) {
                  if (auto* ga = grads[0]) {
                    for (std::size_t i = 0; i < n; ++i) (*ga)[ai(i)] += g[i] * da((*av)[ai(i)], (*bv)[bi(i)]);
                  }
                  if (auto* gb = grads[1]) {
                    for (std::size_t i = 0; i < n; ++i) (*gb)[bi(i)] += g[i] * db((*av)[ai(i)], (*bv)[bi(i)]);
                  }
                });
}

// Elementwise unary op; derivative is given in terms of (input, output).
template <typename Forward, typename Derivative>
Tensor unary(const char* op, const Tensor& a, Forward f, Derivative d) {
  Values av = a.shared_values();
  auto out = std::make_shared<std::vector<double>>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) (*out)[i] = f((*av)[i]);
  std::vector<double> values = *out;
  Values ov = out;
  const Tensor inputs[] = {a};
  return finish(op, a.shape(), std::move(values), inputs,
                [av, ov, d](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  auto& ga = *grads[0];
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d((*av)[i], (*ov)[i]);
                });
}

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t rows = a.shape()[0], inner = a.shape()[1], cols = b.shape()[1];
  if (b.shape()[0] != inner) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Values av = a.shared_values();
  Values bv = b.shared_values();
  std::vector<double> out(rows * cols);
  as_matrix(out, rows, cols).noalias() = as_matrix(*av, rows, inner) * as_matrix(*bv, inner, cols);
  const Tensor inputs[] = {a, b};
  return finish("matmul", {rows, cols}, std::move(out), inputs,
                [av, bv, rows, inner, cols](std::span<const double> g,
                                            std::span<std::vector<double>* const> grads) {
                  const CMap gm(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
                  if (grads[0]) as_matrix(*grads[0], rows, inner).noalias() += gm * as_matrix(*bv, inner, cols).transpose();
                  if (grads[1]) as_matrix(*grads[1], inner, cols).noalias() += as_matrix(*av, rows, inner).transpose() * gm;
                });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<double> out(rows * cols);
  as_matrix(out, cols, rows) = as_matrix(*a.shared_values(), rows, cols).transpose();
  const Tensor inputs[] = {a};
  return finish("transpose", {cols, rows}, std::move(out), inputs,
                [rows, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  const CMap gm(g.data(), static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows));
                  as_matrix(*grads[0], rows, cols) += gm.transpose();
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t cols = x.cols();
  if (bias.size() != cols) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = row_count(x);
  Values xv = x.shared_values();
  Values bv = bias.shared_values();
  std::vector<double> out(*xv);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += (*bv)[c];
  }
  const Tensor inputs[] = {x, bias};
  return finish("add_bias", x.shape(), std::move(out), inputs,
                [rows, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  if (auto* gx = grads[0]) {
                    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                  }
                  if (auto* gb = grads[1]) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
                    }
                  }
                });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor negate(const Tensor& a) {
  return unary(
      "negate", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary("softplus", a, softplus_value, [](double x, double) { return sigmoid(x); });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  const Tensor inputs[] = {a};
  return finish("sum", {}, {total}, inputs,
                [](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  for (double& v : *grads[0]) v += g[0];
                });
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t cols = a.cols();
  const std::size_t rows = row_count(a);
  if (rows == 0) throw DimensionError("mean_rows of an empty tensor");
  std::vector<double> out(cols, 0.0);
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += v[r * cols + c];
  }
  for (double& x : out) x /= static_cast<double>(rows);
  const Tensor inputs[] = {a};
  return finish("mean_rows", {1, cols}, std::move(out), inputs,
                [rows, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  auto& ga = *grads[0];
                  const double inv = 1.0 / static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c] * inv;
                  }
                });
}

Tensor softmax_lastdim(const Tensor& x, const std::optional<Mask>& mask) {
  const std::size_t cols = x.cols();
  const std::size_t rows = row_count(x);
  if (mask && mask->keep.size() != x.size() && mask->keep.size() != cols) {
    throw DimensionError("softmax mask " + shape_string(mask->shape) + " does not match " +
                         shape_string(x.shape()));
  }
  auto keep = [&](std::size_t r, std::size_t c) {
    if (!mask) return true;
    return mask->keep.size() == cols ? mask->keep[c] != 0 : mask->keep[r * cols + c] != 0;
  };
  const auto& xv = x.values();
  auto out = std::make_shared<std::vector<double>>(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (keep(r, c)) peak = std::max(peak, xv[r * cols + c]);
    }
    if (peak == -std::numeric_limits<double>::infinity()) {
      throw MaskError("softmax row " + std::to_string(r) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!keep(r, c)) continue;
      const double e = std::exp(xv[r * cols + c] - peak);
      (*out)[r * cols + c] = e;
      total += e;
    }
    for (std::size_t c = 0; c < cols; ++c) (*out)[r * cols + c] /= total;
  }
  Values ov = out;
  std::vector<double> values = *out;
  const Tensor inputs[] = {x};
  return finish("softmax_lastdim", x.shape(), std::move(values), inputs,
                [ov, rows, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  auto& gx = *grads[0];
                  const auto& y = *ov;
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * g[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c) {
                      gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
                    }
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t cols = x.cols();
  if (gain.size() != cols || bias.size() != cols) {
    throw DimensionError("layer_norm: gain/bias do not match last dimension of " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = row_count(x);
  const auto& xv = x.values();
  Values gv = gain.shared_values();
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += row[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (row[c] - mean) * inv;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * (*gv)[c] + bias[c];
    }
  }
  Values hv = xhat;
  Values sv = rstd;
  const Tensor inputs[] = {x, gain, bias};
  return finish("layer_norm", x.shape(), std::move(out), inputs,
                [hv, sv, gv, rows, cols](std::span<const double> g,
                                         std::span<std::vector<double>* const> grads) {
                  const auto& h = *hv;
                  if (auto* gg = grads[1]) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += g[r * cols + c] * h[r * cols + c];
                    }
                  }
                  if (auto* gb = grads[2]) {
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
                    }
                  }
                  if (auto* gx = grads[0]) {
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dh = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g[r * cols + c] * (*gv)[c];
                        mean_d += d;
                        mean_dh += d * h[r * cols + c];
                      }
                      mean_d /= n;
                      mean_dh /= n;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g[r * cols + c] * (*gv)[c];
                        (*gx)[r * cols + c] += (*sv)[r] * (d - mean_d - h[r * cols + c] * mean_dh);
                      }
                    }
                  }
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of no tensors");
  const std::size_t cols = parts[0].cols();
  std::vector<std::size_t> offsets;
  std::vector<double> out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
    rows += row_count(p);
  }
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.size());
  return finish("concat_rows", {rows, cols}, std::move(out), parts,
                [offsets, sizes](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  for (std::size_t i = 0; i < grads.size(); ++i) {
                    if (!grads[i]) continue;
                    for (std::size_t j = 0; j < sizes[i]; ++j) (*grads[i])[j] += g[offsets[i] + j];
                  }
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of no tensors");
  const std::size_t rows = row_count(parts[0]);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (row_count(p) != rows) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    cols += p.cols();
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[i]), widths[i],
                  out.begin() + static_cast<std::ptrdiff_t>(r * cols + offset));
    }
    offset += widths[i];
  }
  return finish("concat_cols", {rows, cols}, std::move(out), parts,
                [widths, rows, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  std::size_t off = 0;
                  for (std::size_t i = 0; i < grads.size(); ++i) {
                    if (grads[i]) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < widths[i]; ++c) {
                          (*grads[i])[r * widths[i] + c] += g[r * cols + off + c];
                        }
                      }
                    }
                    off += widths[i];
                  }
                });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t cols = a.cols();
  if (begin > end || end > row_count(a)) throw DimensionError("slice_rows out of range");
  const auto& v = a.values();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                          v.begin() + static_cast<std::ptrdiff_t>(end * cols));
  const Tensor inputs[] = {a};
  return finish("slice_rows", {end - begin, cols}, std::move(out), inputs,
                [begin, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  auto& ga = *grads[0];
                  for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
                });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t cols = a.cols();
  const std::size_t rows = row_count(a);
  if (begin > end || end > cols) throw DimensionError("slice_cols out of range");
  const std::size_t width = end - begin;
  const auto& v = a.values();
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = v[r * cols + begin + c];
  }
  const Tensor inputs[] = {a};
  return finish("slice_cols", {rows, width}, std::move(out), inputs,
                [begin, rows, cols, width](std::span<const double> g,
                                           std::span<std::vector<double>* const> grads) {
                  auto& ga = *grads[0];
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < width; ++c) ga[r * cols + begin + c] += g[r * width + c];
                  }
                });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  const std::size_t cols = table.cols();
  const std::size_t rows = row_count(table);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * cols);
  const auto& v = table.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw DimensionError("gather_rows index " + std::to_string(idx[i]) + " out of range");
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  const Tensor inputs[] = {table};
  return finish("gather_rows", {idx.size(), cols}, std::move(out), inputs,
                [idx, cols](std::span<const double> g, std::span<std::vector<double>* const> grads) {
                  auto& gt = *grads[0];
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    for (std::size_t c = 0; c < cols; ++c) gt[idx[i] * cols + c] += g[i * cols + c];
                  }
                });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> blocks) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attention: q/k/v shapes disagree");
  }
  if (n_heads == 0 || d % n_heads != 0) throw DimensionError("attention: width not divisible by heads");
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t nq = q.rows();
  for (const auto& b : blocks) {
    if (b.q_begin + b.q_count > nq || b.k_begin + b.k_count > k.rows()) {
      throw DimensionError("attention block out of range");
    }
    if (b.q_count > 0 && b.k_count == 0) throw MaskError("attention block has no keys");
    if (b.causal && b.q_count != b.k_count) throw DimensionError("causal block must be square");
  }
  const std::vector<AttentionBlock> layout(blocks.begin(), blocks.end());

  Values qv = q.shared_values();
  Values kv = k.shared_values();
  Values vv = v.shared_values();
  auto probs = std::make_shared<std::vector<RowMat>>();
  probs->reserve(layout.size() * n_heads);
  std::vector<double> out(nq * d, 0.0);
  const Strided stride(static_cast<Eigen::Index>(d));
  auto cview = [&](const double* base, std::size_t row, std::size_t count, std::size_t h) {
    return CSMap(base + row * d + h * dh, static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dh), stride);
  };

  for (const auto& b : layout) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      RowMat s = (cview(qv->data(), b.q_begin, b.q_count, h) *
                  cview(kv->data(), b.k_begin, b.k_count, h).transpose()) *
                 inv_sqrt;
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const Eigen::Index limit = b.causal ? i + 1 : s.cols();
        const double peak = s.row(i).head(limit).maxCoeff();
        double total = 0.0;
        for (Eigen::Index j = 0; j < limit; ++j) {
          s(i, j) = std::exp(s(i, j) - peak);
          total += s(i, j);
        }
        for (Eigen::Index j = 0; j < limit; ++j) s(i, j) /= total;
        for (Eigen::Index j = limit; j < s.cols(); ++j) s(i, j) = 0.0;
      }
      MSMap(out.data() + b.q_begin * d + h * dh, static_cast<Eigen::Index>(b.q_count),
            static_cast<Eigen::Index>(dh), stride)
          .noalias() = s * cview(vv->data(), b.k_begin, b.k_count, h);
      probs->push_back(std::move(s));
    }
  }

  const Tensor inputs[] = {q, k, v};
  return finish(
      "multi_head_attention", {nq, d}, std::move(out), inputs,
      [qv, kv, vv, probs, layout, n_heads, d, dh, inv_sqrt](std::span<const double> g,
                                                            std::span<std::vector<double>* const> grads) {
        const Strided stride(static_cast<Eigen::Index>(d));
        auto cview = [&](const double* base, std::size_t row, std::size_t count, std::size_t h) {
          return CSMap(base + row * d + h * dh, static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dh),
                       stride);
        };
        auto mview = [&](std::vector<double>& buf, std::size_t row, std::size_t count, std::size_t h) {
          return MSMap(buf.data() + row * d + h * dh, static_cast<Eigen::Index>(count),
                       static_cast<Eigen::Index>(dh), stride);
        };
        std::size_t slot = 0;
        for (const auto& b : layout) {
          for (std::size_t h = 0; h < n_heads; ++h, ++slot) {
            const RowMat& p = (*probs)[slot];
            const auto go = cview(g.data(), b.q_begin, b.q_count, h);
            if (grads[2]) mview(*grads[2], b.k_begin, b.k_count, h).noalias() += p.transpose() * go;
            if (!grads[0] && !grads[1]) continue;
            RowMat ds = go * cview(vv->data(), b.k_begin, b.k_count, h).transpose();
            for (Eigen::Index i = 0; i < ds.rows(); ++i) {
              const double dot = ds.row(i).dot(p.row(i));
              ds.row(i) = (p.row(i).array() * (ds.row(i).array() - dot)).matrix();
            }
            ds *= inv_sqrt;
            if (grads[0]) mview(*grads[0], b.q_begin, b.q_count, h).noalias() += ds * cview(kv->data(), b.k_begin, b.k_count, h);
            if (grads[1]) mview(*grads[1], b.k_begin, b.k_count, h).noalias() += ds.transpose() * cview(qv->data(), b.q_begin, b.q_count, h);
          }
        }
      });
}

}  // namespace fimpp
