#include <doctest.h>

#include <algorithm>
#include <limits>

#include "npseg/stain.hpp"
#include "npseg/synth.hpp"
#include "support.hpp"

using namespace npseg;
using namespace npseg::testing;

namespace {

double column_angle(const StainMatrix& a, const StainMatrix& b, int col) {
  return angle_degrees(a.col(col), b.col(col));
}

// Best residual over the four active sets of a 2-variable NNLS problem.
Eigen::Vector2d nnls_oracle(const StainMatrix& s, const Eigen::Vector3d& od) {
  std::vector<Eigen::Vector2d> candidates{Eigen::Vector2d::Zero()};
  for (int k = 0; k < 2; ++k) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    c(k) = std::max(0.0, s.col(k).dot(od) / s.col(k).squaredNorm());
    candidates.push_back(c);
  }
  const Eigen::Matrix2d gram = s.transpose() * s;
  const Eigen::Vector2d free = gram.inverse() * (s.transpose() * od);
  if (free.minCoeff() >= 0) candidates.push_back(free);
  Eigen::Vector2d best = candidates[0];
  double best_r = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    const double r = (od - s * c).squaredNorm();
    if (r < best_r) {
      best_r = r;
      best = c;
    }
  }
  return best;
}

RgbImage shuffled(const RgbImage& img, std::uint64_t seed) {
  std::vector<Rgb> px;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) px.push_back(img.at(x, y));
  Rng rng(seed);
  rng.shuffle(px);
  RgbImage out(img.width, img.height);
  for (std::size_t i = 0; i < px.size(); ++i) {
    out.set(static_cast<int>(i % static_cast<std::size_t>(img.width)),
            static_cast<int>(i / static_cast<std::size_t>(img.width)), px[i]);
  }
  return out;
}

int max_channel_diff(const RgbImage& a, const RgbImage& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

}  // namespace

TEST_SUITE("stain") {

TEST_CASE("optical density conversions") {
  const OdBuffer white = rgb_to_od(RgbImage(2, 2, {255, 255, 255}));
  CHECK(white.values.cwiseAbs().maxCoeff() < 2e-3);
  CHECK(intensity_to_od(255.0 / 10 - 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(od_to_intensity(1.0) == doctest::Approx(24.5));
  RgbImage ramp(256, 1);
  for (int v = 0; v < 256; ++v) {
    ramp.set(v, 0, {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(255 - v),
                    static_cast<std::uint8_t>(v / 2)});
  }
  const RgbImage back = od_to_rgb(rgb_to_od(ramp));
  for (int v = 10; v < 256; ++v) REQUIRE(std::abs(back.at(v, 0)[0] - v) <= 1);
  CHECK(back.width == 256);
}

TEST_CASE("macenko recovers a known stain matrix") {
  Rng rng(100);
  for (int trial = 0; trial < 10; ++trial) {
    const StainMatrix s = perturb_stain_matrix(default_stain_matrix(), 15.0, rng);
    const StainImage img = synthetic_stain_image(s, 96, 96, 1000 + trial);
    const StainProfile p = estimate_stains_macenko(img.image);
    CHECK(p.method == StainMethod::macenko);
    CHECK(column_angle(p.stain_matrix, s, 0) < 2.0);
    CHECK(column_angle(p.stain_matrix, s, 1) < 2.0);
    CHECK_NOTHROW(validate(p));
  }
}

TEST_CASE("macenko failure modes") {
  CHECK(error_code([] { estimate_stains_macenko(RgbImage(64, 64, {255, 255, 255})); }) ==
        ErrorCode::InsufficientTissue);
  Eigen::Matrix2Xd c(2, 64 * 64);
  Rng rng(1);
  for (Eigen::Index i = 0; i < c.cols(); ++i) {
    c(0, i) = rng.uniform(0.2, 1.2);
    c(1, i) = 0.0;
  }
  const RgbImage single = render_concentrations(default_stain_matrix(), c, 64, 64);
  CHECK(error_code([&] { estimate_stains_macenko(single); }) == ErrorCode::DegenerateStains);
}

TEST_CASE("estimators ignore pixel order") {
  const StainImage img = synthetic_stain_image(default_stain_matrix(), 64, 64, 9);
  const RgbImage mixed = shuffled(img.image, 4);
  const StainProfile a = estimate_stains_macenko(img.image);
  const StainProfile b = estimate_stains_macenko(mixed);
  CHECK((a.stain_matrix - b.stain_matrix).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((a.max_concentrations - b.max_concentrations).cwiseAbs().maxCoeff() < 1e-9);
  const VahadaneFit va = estimate_stains_vahadane(img.image);
  const VahadaneFit vb = estimate_stains_vahadane(mixed);
  CHECK((va.profile.stain_matrix - vb.profile.stain_matrix).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("macenko is scale-equivariant in concentration") {
  const StainMatrix s = default_stain_matrix();
  const StainImage base = synthetic_stain_image(s, 96, 96, 17);
  const double k = 1.3;
  const RgbImage scaled = render_concentrations(s, base.concentrations * k, 96, 96);
  const StainProfile p1 = estimate_stains_macenko(base.image);
  const StainProfile pk = estimate_stains_macenko(scaled);
  CHECK(column_angle(p1.stain_matrix, pk.stain_matrix, 0) < 1.0);
  CHECK(column_angle(p1.stain_matrix, pk.stain_matrix, 1) < 1.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(pk.max_concentrations(i) / p1.max_concentrations(i) == doctest::Approx(k).epsilon(0.03));
  }
}

TEST_CASE("vahadane reconstructs with a monotone objective") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const StainMatrix s = perturb_stain_matrix(default_stain_matrix(), 10.0, rng);
    const StainImage img = synthetic_stain_image(s, 64, 64, 300 + trial);
    VahadaneParams params;
    params.sparsity_lambda = 0.0;
    const VahadaneFit fit = estimate_stains_vahadane(img.image, params);
    CHECK(fit.relative_residual < 0.02);
    REQUIRE(!fit.objective.empty());
    for (std::size_t i = 1; i < fit.objective.size(); ++i) {
      REQUIRE(fit.objective[i] <= fit.objective[i - 1] * (1 + 1e-12) + 1e-12);
    }
    const StainProfile mac = estimate_stains_macenko(img.image);
    CHECK(column_angle(fit.profile.stain_matrix, mac.stain_matrix, 0) < 10.0);
    CHECK(column_angle(fit.profile.stain_matrix, mac.stain_matrix, 1) < 10.0);
    CHECK(fit.profile.method == StainMethod::vahadane);
  }
  const VahadaneFit sparse = estimate_stains_vahadane(synthetic_stain_image(default_stain_matrix(), 64, 64, 2).image);
  for (std::size_t i = 1; i < sparse.objective.size(); ++i) {
    REQUIRE(sparse.objective[i] <= sparse.objective[i - 1] * (1 + 1e-12) + 1e-12);
  }
}

TEST_CASE("concentration solver") {
  const StainMatrix s = default_stain_matrix();
  const Eigen::Vector2d c0(0.37, 0.81);
  CHECK((solve_concentration(s, s * c0) - c0).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(solve_concentration(s, Eigen::Vector3d::Zero()).isZero());
  Rng rng(55);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector3d od(rng.uniform(-0.2, 1.5), rng.uniform(-0.2, 1.5), rng.uniform(-0.2, 1.5));
    const Eigen::Vector2d c = solve_concentration(s, od);
    const Eigen::Vector2d o = nnls_oracle(s, od);
    REQUIRE(c.minCoeff() >= 0.0);
    REQUIRE((od - s * c).squaredNorm() <= (od - s * o).squaredNorm() + 1e-9);
    REQUIRE((c - o).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("normalization fixed points") {
  const StainImage img = synthetic_stain_image(default_stain_matrix(), 64, 64, 12);
  const StainProfile p = estimate_stains_macenko(img.image);
  const RgbImage out = normalize_to_reference(img.image, p, p);
  CHECK(out.width == 64);
  CHECK(out.height == 64);
  CHECK(max_channel_diff(out, img.image) <= 2);

  RgbImage with_white = img.image;
  for (int x = 0; x < 64; ++x) with_white.set(x, 0, {255, 255, 255});
  const RgbImage w = normalize_to_reference(with_white, p, p);
  for (int x = 0; x < 64; ++x) {
    for (auto ch : w.at(x, 0)) CHECK(ch >= 253);
  }
}

TEST_CASE("transfer to another profile re-estimates as that profile") {
  Rng rng(8);
  const StainMatrix sa = default_stain_matrix();
  const StainMatrix sb = perturb_stain_matrix(sa, 10.0, rng);
  const RgbImage a = synthetic_stain_image(sa, 96, 96, 1).image;
  const RgbImage b = synthetic_stain_image(sb, 96, 96, 2).image;
  const StainProfile pa = estimate_stains_macenko(a);
  const StainProfile pb = estimate_stains_macenko(b);
  const RgbImage moved = normalize_to_reference(a, pa, pb);
  const StainProfile again = estimate_stains_macenko(moved);
  CHECK(column_angle(again.stain_matrix, pb.stain_matrix, 0) < 3.0);
  CHECK(column_angle(again.stain_matrix, pb.stain_matrix, 1) < 3.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(again.max_concentrations(i) / pb.max_concentrations(i) == doctest::Approx(1.0).epsilon(0.05));
  }
  StainProfile vahadane_ref = pb;
  vahadane_ref.method = StainMethod::vahadane;
  CHECK(error_code([&] { normalize_to_reference(a, pa, vahadane_ref); }) == ErrorCode::MethodMismatch);
}

TEST_CASE("profile json round trip and validation") {
  StainProfile p = estimate_stains_macenko(synthetic_stain_image(default_stain_matrix(), 48, 48, 3).image);
  p.reference_id = "wsi_00";
  const StainProfile back = profile_from_json(to_json(p));
  CHECK(back.method == p.method);
  CHECK((back.stain_matrix - p.stain_matrix).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(back.max_concentrations == p.max_concentrations);
  CHECK(back.reference_id == p.reference_id);
  CHECK(back.beta == p.beta);

  ScratchDir dir("profile");
  write_profile(dir / "p.json", p);
  CHECK(read_profile(dir / "p.json").stain_matrix == back.stain_matrix);

  StainProfile bad = p;
  bad.stain_matrix(0, 0) = -0.5;
  CHECK(error_code([&] { validate(bad); }) == ErrorCode::DegenerateStains);
  bad = p;
  bad.stain_matrix.col(1) = bad.stain_matrix.col(0);
  CHECK(error_code([&] { validate(bad); }) == ErrorCode::DegenerateStains);
  CHECK(error_code([] { profile_from_json(nlohmann::json{{"method", "macenko"}}); }) == ErrorCode::ParseError);
  CHECK(error_code([] { stain_method_from_string("reinhard"); }) == ErrorCode::ParseError);
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({5, 1, 3, 2, 4}, 0) == 1.0);
  CHECK(percentile({1, 2, 3, 4, 5}, 100) == 5.0);
  CHECK(percentile({0, 10}, 25) == doctest::Approx(2.5));
  CHECK(error_code([] { percentile({}, 50); }) == ErrorCode::EmptyInput);
}

}  // TEST_SUITE
