#include "cmt/losses.hpp"

#include <algorithm>
#include <cmath>

namespace cmt {
namespace {

void require_grid(const ScalarField& a, const ScalarField& b, const char* what) {
  require_same_grid(a.grid(), b.grid(), what);
}

void box_sum_axis(std::vector<double>& f, const Extents& d, int axis, int r) {
  const std::size_t nx = static_cast<std::size_t>(d[0]);
  const std::size_t ny = static_cast<std::size_t>(d[1]);
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? nx : nx * ny);
  const int n = d[static_cast<std::size_t>(axis)];
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1);
  std::array<int, 3> outer{};
  std::array<int, 2> others{};
  int o = 0;
  for (int a = 0; a < 3; ++a) {
    if (a != axis) others[static_cast<std::size_t>(o++)] = a;
  }
  for (int q = 0; q < d[static_cast<std::size_t>(others[1])]; ++q) {
    for (int p = 0; p < d[static_cast<std::size_t>(others[0])]; ++p) {
      outer[static_cast<std::size_t>(others[0])] = p;
      outer[static_cast<std::size_t>(others[1])] = q;
      outer[static_cast<std::size_t>(axis)] = 0;
      const std::size_t base = static_cast<std::size_t>(outer[0]) + nx * (static_cast<std::size_t>(outer[1]) +
                                                                          ny * static_cast<std::size_t>(outer[2]));
      prefix[0] = 0.0;
      for (int t = 0; t < n; ++t) {
        prefix[static_cast<std::size_t>(t) + 1] = prefix[static_cast<std::size_t>(t)] + f[base + stride * static_cast<std::size_t>(t)];
      }
      for (int t = 0; t < n; ++t) {
        const int lo = std::max(0, t - r);
        const int hi = std::min(n - 1, t + r);
        f[base + stride * static_cast<std::size_t>(t)] =
            prefix[static_cast<std::size_t>(hi) + 1] - prefix[static_cast<std::size_t>(lo)];
      }
    }
  }
}

double mse_impl(const ScalarField& a, const ScalarField& b, double weight, std::span<double> ga,
                std::span<double> gb) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double scale = 2.0 * weight / static_cast<double>(n);
  if (!ga.empty() || !gb.empty()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = scale * (a[i] - b[i]);
      if (!ga.empty()) ga[i] += d;
      if (!gb.empty()) gb[i] -= d;
    }
  }
  return acc / static_cast<double>(n);
}

double ncc_impl(const ScalarField& a, const ScalarField& b, double weight, std::span<double> ga,
                std::span<double> gb) {
  const std::size_t n = a.size();
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw Error(ErrorCode::ConstantImage, "NCC of a constant image");
  const double r2 = sab * sab / (saa * sbb);
  if (!ga.empty() || !gb.empty()) {
    // d(1 - r^2)/da_i = -[2 sab (b_i - mb) / (saa sbb) - 2 r^2 (a_i - ma) / saa]
    for (std::size_t i = 0; i < n; ++i) {
      const double da = a[i] - ma;
      const double db = b[i] - mb;
      if (!ga.empty()) ga[i] -= weight * (2.0 * sab * db / (saa * sbb) - 2.0 * r2 * da / saa);
      if (!gb.empty()) gb[i] -= weight * (2.0 * sab * da / (saa * sbb) - 2.0 * r2 * db / sbb);
    }
  }
  return 1.0 - r2;
}

double lncc_impl(const ScalarField& a, const ScalarField& b, int edge, double weight, std::span<double> ga,
                 std::span<double> gb) {
  if (edge < 3 || edge % 2 == 0) throw Error(ErrorCode::InvalidArgument, "LNCC window edge must be odd and >= 3");
  const int r = edge / 2;
  const Extents& d = a.dims();
  const std::size_t n = a.size();
  std::vector<double> ab(n);
  std::vector<double> aa(n);
  std::vector<double> bb(n);
  for (std::size_t i = 0; i < n; ++i) {
    ab[i] = a[i] * b[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
  }
  const auto sa = detail::box_sum(a.data(), d, r);
  const auto sb = detail::box_sum(b.data(), d, r);
  const auto sab = detail::box_sum(ab, d, r);
  const auto saa = detail::box_sum(aa, d, r);
  const auto sbb = detail::box_sum(bb, d, r);
  const auto cnt = detail::box_count(d, r);

  const bool want_grad = !ga.empty() || !gb.empty();
  std::vector<double> coef_a;   // 2 cross / D
  std::vector<double> coef_ba;  // 2 cross^2 vb / D^2
  std::vector<double> coef_bb;  // 2 cross^2 va / D^2
  std::vector<double> mean_a;
  std::vector<double> mean_b;
  if (want_grad) {
    coef_a.assign(n, 0.0);
    coef_ba.assign(n, 0.0);
    coef_bb.assign(n, 0.0);
    mean_a.assign(n, 0.0);
    mean_b.assign(n, 0.0);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double cn = cnt[c];
    const double ma = sa[c] / cn;
    const double mb = sb[c] / cn;
    const double cross = sab[c] - sa[c] * mb;
    const double va = saa[c] - sa[c] * ma;
    const double vb = sbb[c] - sb[c] * mb;
    if (va * vb < kLnccMinVariance) continue;
    const double den = va * vb + kLnccEpsilon;
    total += cross * cross / den;
    if (want_grad) {
      coef_a[c] = 2.0 * cross / den;
      coef_ba[c] = 2.0 * cross * cross * vb / (den * den);
      coef_bb[c] = 2.0 * cross * cross * va / (den * den);
      mean_a[c] = ma;
      mean_b[c] = mb;
    }
  }
  const double inv_m = 1.0 / static_cast<double>(n);
  if (want_grad) {
    std::vector<double> tmp(n);
    const auto box = [&](const std::vector<double>& coef, const std::vector<double>* mean) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = mean != nullptr ? coef[i] * (*mean)[i] : coef[i];
      return detail::box_sum(tmp, d, r);
    };
    const auto box_a = box(coef_a, nullptr);
    const auto box_a_mb = box(coef_a, &mean_b);
    const auto box_a_ma = box(coef_a, &mean_a);
    const double s = -weight * inv_m;
    if (!ga.empty()) {
      const auto box_ba = box(coef_ba, nullptr);
      const auto box_ba_ma = box(coef_ba, &mean_a);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += s * (b[i] * box_a[i] - box_a_mb[i] - a[i] * box_ba[i] + box_ba_ma[i]);
      }
    }
    if (!gb.empty()) {
      const auto box_bb = box(coef_bb, nullptr);
      const auto box_bb_mb = box(coef_bb, &mean_b);
      for (std::size_t i = 0; i < n; ++i) {
        gb[i] += s * (a[i] * box_a[i] - box_a_ma[i] - b[i] * box_bb[i] + box_bb_mb[i]);
      }
    }
  }
  return 1.0 - total * inv_m;
}

}  // namespace

const char* to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::MSE: return "MSE";
    case SimilarityKind::NCC: return "NCC";
    case SimilarityKind::LNCC: return "LNCC";
  }
  return "?";
}

SimilarityKind similarity_from_string(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (u == "MSE") return SimilarityKind::MSE;
  if (u == "NCC") return SimilarityKind::NCC;
  if (u == "LNCC") return SimilarityKind::LNCC;
  throw Error(ErrorCode::ParseError, "unknown similarity kind '" + s + "'");
}

namespace detail {

std::vector<double> box_sum(std::span<const double> f, const Extents& dims, int radius) {
  std::vector<double> out(f.begin(), f.end());
  for (int axis = 0; axis < 3; ++axis) box_sum_axis(out, dims, axis, radius);
  return out;
}

std::vector<double> box_count(const Extents& dims, int radius) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
                        static_cast<std::size_t>(dims[2]);
  std::vector<double> ones(n, 1.0);
  return box_sum(ones, dims, radius);
}

}  // namespace detail

double loss_mse(const ScalarField& a, const ScalarField& b) {
  require_grid(a, b, "loss_mse");
  return mse_impl(a, b, 0.0, {}, {});
}

double loss_mse(const ImageVolume& a, const ImageVolume& b) {
  return loss_mse(volume_cast<double>(a), volume_cast<double>(b));
}

double loss_lncc(const ScalarField& a, const ScalarField& b, int window_edge) {
  require_grid(a, b, "loss_lncc");
  return lncc_impl(a, b, window_edge, 0.0, {}, {});
}

double loss_lncc(const ImageVolume& a, const ImageVolume& b, int window_edge) {
  return loss_lncc(volume_cast<double>(a), volume_cast<double>(b), window_edge);
}

double loss_ncc(const ScalarField& a, const ScalarField& b) {
  require_grid(a, b, "loss_ncc");
  return ncc_impl(a, b, 0.0, {}, {});
}

double loss_ncc(const ImageVolume& a, const ImageVolume& b) {
  return loss_ncc(volume_cast<double>(a), volume_cast<double>(b));
}

double similarity_with_gradient(const SimilarityTerm& term, const ScalarField& a, const ScalarField& b,
                                double weight, std::span<double> grad_a, std::span<double> grad_b) {
  require_grid(a, b, "similarity");
  switch (term.kind) {
    case SimilarityKind::MSE: return mse_impl(a, b, weight, grad_a, grad_b);
    case SimilarityKind::NCC: return ncc_impl(a, b, weight, grad_a, grad_b);
    case SimilarityKind::LNCC: return lncc_impl(a, b, term.window_edge, weight, grad_a, grad_b);
  }
  return 0.0;
}

double similarity(const SimilarityTerm& term, const ScalarField& a, const ScalarField& b) {
  return similarity_with_gradient(term, a, b, 0.0, {}, {});
}

double reg_smoothness(const VectorField& u) {
  VectorField unused;
  return reg_smoothness_with_gradient(u, 0.0, unused);
}

double reg_smoothness_with_gradient(const VectorField& u, double weight, VectorField& grad) {
  const auto& d = u.grid.dims;
  const bool want_grad = weight != 0.0;
  double total = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    if (d[static_cast<std::size_t>(axis)] < 2) continue;
    const std::size_t pairs = u.size() / static_cast<std::size_t>(d[static_cast<std::size_t>(axis)]) *
                              static_cast<std::size_t>(d[static_cast<std::size_t>(axis)] - 1);
    const double inv = 1.0 / static_cast<double>(pairs);
    double acc = 0.0;
    for (int k = 0; k < d[2]; ++k) {
      for (int j = 0; j < d[1]; ++j) {
        for (int i = 0; i < d[0]; ++i) {
          std::array<int, 3> q{i, j, k};
          q[static_cast<std::size_t>(axis)] += 1;
          if (q[static_cast<std::size_t>(axis)] >= d[static_cast<std::size_t>(axis)]) continue;
          const std::size_t i0 = u.grid.index(i, j, k);
          const std::size_t i1 = u.grid.index(q[0], q[1], q[2]);
          const Vec3 diff = u.data[i1] - u.data[i0];
          acc += diff.squaredNorm();
          if (want_grad) {
            const Vec3 g = (2.0 * weight * inv) * diff;
            grad.data[i1] += g;
            grad.data[i0] -= g;
          }
        }
      }
    }
    total += acc * inv;
  }
  return total;
}

double reg_centering(std::span<const VelocityField> fields) {
  return reg_centering_with_gradient(fields, 0.0, {});
}

double reg_centering_with_gradient(std::span<const VelocityField> fields, double weight,
                                   std::span<VectorField> grads) {
  if (fields.empty()) throw Error(ErrorCode::InvalidArgument, "centering needs at least one field");
  for (const auto& f : fields) require_same_grid(f.grid, fields.front().grid, "reg_centering");
  const std::size_t n = fields.front().size();
  const double inv_subjects = 1.0 / static_cast<double>(fields.size());
  double acc = 0.0;
  for (std::size_t x = 0; x < n; ++x) {
    Vec3 mean = Vec3::Zero();
    for (const auto& f : fields) mean += f.data[x];
    mean *= inv_subjects;
    acc += mean.squaredNorm();
    if (weight != 0.0 && !grads.empty()) {
      const Vec3 g = (2.0 * weight * inv_subjects / static_cast<double>(n)) * mean;
      for (auto& gr : grads) gr.data[x] += g;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace cmt
