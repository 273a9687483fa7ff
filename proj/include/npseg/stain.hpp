#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "npseg/image.hpp"

namespace npseg {

enum class StainMethod { macenko, vahadane };

std::string_view to_string(StainMethod method);
StainMethod stain_method_from_string(std::string_view s);

using StainMatrix = Eigen::Matrix<double, 3, 2>;

// Column 0 is the hematoxylin-like stain (larger red-channel OD), column 1 the
// DAB-like stain. Columns are unit-norm and nonnegative.
struct StainProfile {
  StainMethod method = StainMethod::macenko;
  StainMatrix stain_matrix = StainMatrix::Zero();
  Eigen::Vector2d max_concentrations = Eigen::Vector2d::Zero();
  std::optional<std::string> reference_id;
  // Estimation settings, persisted alongside the matrix.
  double beta = 0.15;
  double alpha = 1.0;  // unused by vahadane
  double max_percentile = 99.0;
};

// Throws DegenerateStains when the profile breaks its invariants.
void validate(const StainProfile& profile);

double angle_degrees(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

// Optical density per pixel: od = -log10((I + 1) / io), clamped at zero.
struct OdBuffer {
  int width = 0;
  int height = 0;
  Eigen::Matrix3Xd values;  // one column per pixel, row-major pixel order
};

double intensity_to_od(double intensity, double io = 255.0);
double od_to_intensity(double od, double io = 255.0);
OdBuffer rgb_to_od(const RgbImage& image, double io = 255.0);
// Inverse transform, rounded and clamped to [0, 255].
RgbImage od_to_rgb(const OdBuffer& od, double io = 255.0);

struct MacenkoParams {
  double beta = 0.15;           // OD magnitude threshold for tissue pixels
  double alpha = 1.0;           // extreme-angle percentile
  double max_percentile = 99.0;
  double min_angle_degrees = 5.0;
  std::size_t min_tissue_pixels = 100;
};

StainProfile estimate_stains_macenko(const RgbImage& image, const MacenkoParams& params = {});

struct VahadaneParams {
  double sparsity_lambda = 0.1;
  int n_iter = 200;
  double tol = 1e-6;
  double beta = 0.15;
  double max_percentile = 99.0;
  double min_angle_degrees = 5.0;
  std::size_t min_tissue_pixels = 100;
};

struct VahadaneFit {
  StainProfile profile;
  // ||OD - D C||_F^2 + lambda ||C||_1 after each outer iteration.
  std::vector<double> objective;
  double relative_residual = 0.0;  // ||OD - D C||_F / ||OD||_F on tissue pixels
  bool converged = false;          // false: NoConvergence warning
};

VahadaneFit estimate_stains_vahadane(const RgbImage& image, const VahadaneParams& params = {});

// Exact nonnegative least squares for od ~ stain_matrix * c.
Eigen::Vector2d solve_concentration(const StainMatrix& stain_matrix, const Eigen::Vector3d& od);
Eigen::Matrix2Xd concentrations(const Eigen::Matrix3Xd& od, const StainProfile& profile);
Eigen::Matrix2Xd concentrations(const OdBuffer& od, const StainProfile& profile);

// Solves concentrations under `source`, rescales them to the reference's
// maxima and re-renders through the reference stain matrix.
RgbImage normalize_to_reference(const RgbImage& image, const StainProfile& source,
                                const StainProfile& reference);

// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

nlohmann::json to_json(const StainProfile& profile);
StainProfile profile_from_json(const nlohmann::json& j);
void write_profile(const std::filesystem::path& path, const StainProfile& profile);
StainProfile read_profile(const std::filesystem::path& path);

}  // namespace npseg
