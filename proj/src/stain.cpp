#include "npseg/stain.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "npseg/error.hpp"

namespace npseg {

using Eigen::Matrix2d;
using Eigen::Matrix3Xd;
using Eigen::Vector2d;
using Eigen::Vector3d;

std::string_view to_string(StainMethod method) {
  return method == StainMethod::macenko ? "macenko" : "vahadane";
}

StainMethod stain_method_from_string(std::string_view s) {
  if (s == "macenko") return StainMethod::macenko;
  if (s == "vahadane") return StainMethod::vahadane;
  throw Error(ErrorCode::ParseError, "unknown stain method '" + std::string(s) + "'");
}

double angle_degrees(const Vector3d& a, const Vector3d& b) {
  const double denom = a.norm() * b.norm();
  if (denom == 0.0) return 0.0;
  const double c = std::clamp(a.dot(b) / denom, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

void validate(const StainProfile& p) {
  for (int k = 0; k < 2; ++k) {
    const Vector3d col = p.stain_matrix.col(k);
    if (std::abs(col.norm() - 1.0) > 1e-6 || (col.array() < 0.0).any()) {
      throw Error(ErrorCode::DegenerateStains,
                  "stain column " + std::to_string(k) + " is not a nonnegative unit vector");
    }
    if (!(p.max_concentrations[k] > 0.0)) {
      throw Error(ErrorCode::DegenerateStains,
                  "max concentration of stain " + std::to_string(k) + " is not positive");
    }
  }
  if (angle_degrees(p.stain_matrix.col(0), p.stain_matrix.col(1)) < 5.0) {
    throw Error(ErrorCode::DegenerateStains, "stain columns are nearly collinear");
  }
}

double intensity_to_od(double intensity, double io) {
  return std::max(0.0, -std::log10((intensity + 1.0) / io));
}

double od_to_intensity(double od, double io) { return io * std::pow(10.0, -od) - 1.0; }

OdBuffer rgb_to_od(const RgbImage& image, double io) {
  // 256-entry table; every pixel value maps through the same transform.
  std::array<double, 256> lut{};
  for (int v = 0; v < 256; ++v) lut[v] = intensity_to_od(v, io);
  OdBuffer out;
  out.width = image.width;
  out.height = image.height;
  out.values.resize(3, static_cast<Eigen::Index>(image.pixel_count()));
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out.values(c, static_cast<Eigen::Index>(i)) = lut[image.data[3 * i + c]];
  }
  return out;
}

RgbImage od_to_rgb(const OdBuffer& od, double io) {
  RgbImage out(od.width, od.height);
  for (Eigen::Index i = 0; i < od.values.cols(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(od_to_intensity(od.values(c, i), io));
      out.data[static_cast<std::size_t>(3 * i + c)] =
          static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

Vector2d solve_concentration(const StainMatrix& s, const Vector3d& od) {
  // Two unknowns: the optimum is either the unconstrained solution or lies on
  // one of the faces c0 = 0, c1 = 0 (or at the origin).
  const Matrix2d gram = s.transpose() * s;
  const Vector2d rhs = s.transpose() * od;
  const double det = gram.determinant();
  if (std::abs(det) > 1e-14) {
    const Vector2d c = gram.inverse() * rhs;
    if (c[0] >= 0.0 && c[1] >= 0.0) return c;
  }
  Vector2d best = Vector2d::Zero();
  double best_res = od.squaredNorm();
  for (int k = 0; k < 2; ++k) {
    const double nk = gram(k, k);
    if (nk <= 0.0) continue;
    Vector2d c = Vector2d::Zero();
    c[k] = std::max(0.0, rhs[k] / nk);
    const double res = (od - s * c).squaredNorm();
    if (res < best_res) {
      best_res = res;
      best = c;
    }
  }
  return best;
}

Eigen::Matrix2Xd concentrations(const Matrix3Xd& od, const StainProfile& profile) {
  Eigen::Matrix2Xd out(2, od.cols());
  for (Eigen::Index i = 0; i < od.cols(); ++i) {
    out.col(i) = solve_concentration(profile.stain_matrix, od.col(i));
  }
  return out;
}

Eigen::Matrix2Xd concentrations(const OdBuffer& od, const StainProfile& profile) {
  return concentrations(od.values, profile);
}

namespace {

Matrix3Xd tissue_pixels(const OdBuffer& od, double beta, std::size_t min_pixels) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < od.values.cols(); ++i) {
    if (od.values.col(i).norm() > beta) keep.push_back(i);
  }
  if (keep.size() < min_pixels) {
    throw Error(ErrorCode::InsufficientTissue,
                std::to_string(keep.size()) + " tissue pixels above OD " + std::to_string(beta) +
                    ", need " + std::to_string(min_pixels));
  }
  Matrix3Xd out(3, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = od.values.col(keep[j]);
  return out;
}

// Flips to the nonnegative orthant, clips residual negatives and normalises.
Vector3d nonnegative_unit(Vector3d v) {
  if (v.sum() < 0.0) v = -v;
  v = v.cwiseMax(0.0);
  const double n = v.norm();
  return n > 0.0 ? Vector3d(v / n) : v;
}

// Hematoxylin-like (larger red OD) first.
StainMatrix order_columns(const Vector3d& a, const Vector3d& b) {
  StainMatrix s;
  if (a[0] >= b[0]) {
    s.col(0) = a;
    s.col(1) = b;
  } else {
    s.col(0) = b;
    s.col(1) = a;
  }
  return s;
}

void check_separation(const StainMatrix& s, double min_angle) {
  const double angle = angle_degrees(s.col(0), s.col(1));
  if (!(angle >= min_angle)) {
    throw Error(ErrorCode::DegenerateStains,
                "estimated stain vectors are " + std::to_string(angle) + " degrees apart");
  }
}

Vector2d max_concentrations(const OdBuffer& od, const StainMatrix& s, double q) {
  StainProfile tmp;
  tmp.stain_matrix = s;
  const Eigen::Matrix2Xd c = concentrations(od, tmp);
  Vector2d out;
  for (int k = 0; k < 2; ++k) {
    std::vector<double> row(static_cast<std::size_t>(c.cols()));
    for (Eigen::Index i = 0; i < c.cols(); ++i) row[static_cast<std::size_t>(i)] = c(k, i);
    out[k] = percentile(std::move(row), q);
    if (!(out[k] > 0.0)) {
      throw Error(ErrorCode::DegenerateStains,
                  "stain " + std::to_string(k) + " has no positive concentration");
    }
  }
  return out;
}

// Plane of the two dominant right singular vectors of the tissue OD matrix,
// i.e. the top eigenvectors of its 3x3 Gram matrix.
Eigen::Matrix<double, 3, 2> dominant_plane(const Matrix3Xd& tissue) {
  const Eigen::Matrix3d gram = tissue * tissue.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(gram);
  Eigen::Matrix<double, 3, 2> plane;
  plane.col(0) = eig.eigenvectors().col(2);
  plane.col(1) = eig.eigenvectors().col(1);
  // The leading direction points into the positive orthant like the OD cloud.
  if (plane.col(0).sum() < 0.0) plane.col(0) = -plane.col(0);
  if (plane.col(1)[0] < 0.0) plane.col(1) = -plane.col(1);
  return plane;
}

std::vector<double> plane_angles(const Matrix3Xd& tissue, const Eigen::Matrix<double, 3, 2>& plane) {
  const Eigen::Matrix2Xd proj = plane.transpose() * tissue;
  std::vector<double> phi(static_cast<std::size_t>(proj.cols()));
  for (Eigen::Index i = 0; i < proj.cols(); ++i) {
    phi[static_cast<std::size_t>(i)] = std::atan2(proj(1, i), proj(0, i));
  }
  return phi;
}

Vector3d direction_at(const Eigen::Matrix<double, 3, 2>& plane, double phi) {
  return plane * Vector2d(std::cos(phi), std::sin(phi));
}

}  // namespace

StainProfile estimate_stains_macenko(const RgbImage& image, const MacenkoParams& params) {
  const OdBuffer od = rgb_to_od(image);
  const Matrix3Xd tissue = tissue_pixels(od, params.beta, params.min_tissue_pixels);
  const auto plane = dominant_plane(tissue);
  std::vector<double> phi = plane_angles(tissue, plane);
  const double lo = percentile(phi, params.alpha);
  const double hi = percentile(std::move(phi), 100.0 - params.alpha);

  StainProfile profile;
  profile.method = StainMethod::macenko;
  profile.beta = params.beta;
  profile.alpha = params.alpha;
  profile.max_percentile = params.max_percentile;
  profile.stain_matrix = order_columns(nonnegative_unit(direction_at(plane, lo)),
                                       nonnegative_unit(direction_at(plane, hi)));
  check_separation(profile.stain_matrix, params.min_angle_degrees);
  profile.max_concentrations = max_concentrations(od, profile.stain_matrix, params.max_percentile);
  return profile;
}

namespace {

double vahadane_objective(const Matrix3Xd& v, const StainMatrix& w, const Eigen::Matrix2Xd& h,
                          double lambda) {
  return (v - w * h).squaredNorm() + lambda * h.sum();
}

// Cyclic coordinate descent on one pixel's nonnegative lasso, warm-started.
void lasso_pixel(const StainMatrix& w, const Vector2d& col_sq, const Vector3d& v, double lambda,
                 Eigen::Ref<Vector2d> h) {
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double change = 0.0;
    for (int k = 0; k < 2; ++k) {
      if (col_sq[k] <= 0.0) continue;
      const int other = 1 - k;
      const Vector3d r = v - w.col(other) * h[other];
      const double next = std::max(0.0, (w.col(k).dot(r) - 0.5 * lambda) / col_sq[k]);
      change = std::max(change, std::abs(next - h[k]));
      h[k] = next;
    }
    if (change < 1e-12) break;
  }
}

}  // namespace

VahadaneFit estimate_stains_vahadane(const RgbImage& image, const VahadaneParams& params) {
  const OdBuffer od = rgb_to_od(image);
  const Matrix3Xd v = tissue_pixels(od, params.beta, params.min_tissue_pixels);
  const double lambda = params.sparsity_lambda;

  // Initial dictionary: the two tissue pixels at the extreme angles of the
  // dominant OD plane.
  StainMatrix w;
  {
    const auto plane = dominant_plane(v);
    const std::vector<double> phi = plane_angles(v, plane);
    const auto [lo, hi] = std::minmax_element(phi.begin(), phi.end());
    w.col(0) = nonnegative_unit(v.col(lo - phi.begin()));
    w.col(1) = nonnegative_unit(v.col(hi - phi.begin()));
  }
  Eigen::Matrix2Xd h = Eigen::Matrix2Xd::Zero(2, v.cols());

  VahadaneFit fit;
  double previous = vahadane_objective(v, w, h, lambda);
  for (int iter = 0; iter < params.n_iter; ++iter) {
    // Sparse code step, pixels independent.
    const Vector2d col_sq(w.col(0).squaredNorm(), w.col(1).squaredNorm());
    for (Eigen::Index i = 0; i < v.cols(); ++i) lasso_pixel(w, col_sq, v.col(i), lambda, h.col(i));

    // Dictionary step: each column exactly minimises the objective over the
    // nonnegative unit sphere with the other column fixed.
    const Matrix2d hht = h * h.transpose();
    const Eigen::Matrix<double, 3, 2> vht = v * h.transpose();
    for (int k = 0; k < 2; ++k) {
      if (hht(k, k) <= 0.0) continue;
      const int other = 1 - k;
      const Vector3d g = vht.col(k) - w.col(other) * hht(other, k);
      const Vector3d pos = g.cwiseMax(0.0);
      if (pos.norm() > 0.0) {
        w.col(k) = pos / pos.norm();
      } else {
        Eigen::Index best = 0;
        g.maxCoeff(&best);
        w.col(k) = Vector3d::Unit(best);
      }
    }

    const double current = vahadane_objective(v, w, h, lambda);
    fit.objective.push_back(current);
    const double rel = previous > 0.0 ? std::abs(previous - current) / previous : 0.0;
    previous = current;
    if (rel < params.tol) {
      fit.converged = true;
      break;
    }
  }

  const double denom = v.norm();
  fit.relative_residual = denom > 0.0 ? (v - w * h).norm() / denom : 0.0;

  fit.profile.method = StainMethod::vahadane;
  fit.profile.beta = params.beta;
  fit.profile.max_percentile = params.max_percentile;
  fit.profile.stain_matrix = order_columns(w.col(0), w.col(1));
  check_separation(fit.profile.stain_matrix, params.min_angle_degrees);
  fit.profile.max_concentrations =
      max_concentrations(od, fit.profile.stain_matrix, params.max_percentile);
  return fit;
}

RgbImage normalize_to_reference(const RgbImage& image, const StainProfile& source,
                                const StainProfile& reference) {
  if (source.method != reference.method) {
    throw Error(ErrorCode::MethodMismatch,
                "source profile is " + std::string(to_string(source.method)) +
                    ", reference is " + std::string(to_string(reference.method)));
  }
  OdBuffer od = rgb_to_od(image);
  Eigen::Matrix2Xd c = concentrations(od, source);
  for (int k = 0; k < 2; ++k) {
    c.row(k) *= reference.max_concentrations[k] / source.max_concentrations[k];
  }
  od.values = reference.stain_matrix * c;
  return od_to_rgb(od);
}

nlohmann::json to_json(const StainProfile& p) {
  nlohmann::json j;
  j["method"] = to_string(p.method);
  std::vector<double> rows;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) rows.push_back(p.stain_matrix(r, c));
  }
  j["stain_matrix"] = rows;
  j["max_concentrations"] = {p.max_concentrations[0], p.max_concentrations[1]};
  j["reference_id"] = p.reference_id ? nlohmann::json(*p.reference_id) : nlohmann::json(nullptr);
  j["percentiles"] = {{"alpha", p.alpha}, {"beta", p.beta}, {"max_concentration", p.max_percentile}};
  return j;
}

StainProfile profile_from_json(const nlohmann::json& j) {
  try {
    StainProfile p;
    p.method = stain_method_from_string(j.at("method").get<std::string>());
    const auto rows = j.at("stain_matrix").get<std::vector<double>>();
    if (rows.size() != 6) throw Error(ErrorCode::ParseError, "stain_matrix needs 6 entries");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 2; ++c) p.stain_matrix(r, c) = rows[static_cast<std::size_t>(2 * r + c)];
    }
    const auto mc = j.at("max_concentrations").get<std::vector<double>>();
    if (mc.size() != 2) throw Error(ErrorCode::ParseError, "max_concentrations needs 2 entries");
    p.max_concentrations = Vector2d(mc[0], mc[1]);
    if (j.contains("percentiles")) {
      const auto& pc = j["percentiles"];
      p.alpha = pc.value("alpha", p.alpha);
      p.beta = pc.value("beta", p.beta);
      p.max_percentile = pc.value("max_concentration", p.max_percentile);
    }
    if (j.contains("reference_id") && !j["reference_id"].is_null()) {
      p.reference_id = j["reference_id"].get<std::string>();
    }
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("stain profile: ") + e.what());
  }
}

void write_profile(const std::filesystem::path& path, const StainProfile& profile) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << to_json(profile).dump(2) << "\n";
}

StainProfile read_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path.string());
  try {
    return profile_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace npseg
