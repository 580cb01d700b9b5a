#include "mdood/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "mdood/errors.hpp"
#include "mdood/metrics.hpp"
#include "mdood/parallel.hpp"
#include "mdood/patchwork.hpp"

namespace mdood {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finaliser over a golden-ratio stride
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t SynthConfig::feature_dim() const { return channels * element_count(feature_spatial); }

void SynthConfig::validate() const {
  if (channels < 1) throw ValidationError("synth: channels must be >= 1");
  if (feature_spatial.size() != 3) throw ValidationError("synth: feature_spatial needs 3 extents");
  for (auto e : feature_spatial) {
    if (e < 1) throw ValidationError("synth: feature_spatial extents must be >= 1");
  }
  if (upsample_rounds > 8) throw ValidationError("synth: at most 8 upsample rounds");
  if (n_train < 2) throw ValidationError("synth: need at least 2 train subjects");
  if (n_id_test < 1) throw ValidationError("synth: need at least 1 id_test subject");
  if (!shift_magnitudes.empty() && n_ood < 1) {
    throw ValidationError("synth: need at least 1 ood subject per magnitude");
  }
  for (std::size_t i = 0; i < shift_magnitudes.size(); ++i) {
    const double m = shift_magnitudes[i];
    if (!std::isfinite(m) || m < 0) throw ValidationError("synth: shift magnitudes must be >= 0");
    if (i > 0 && m < shift_magnitudes[i - 1]) {
      throw ValidationError("synth: shift magnitudes must be sorted");
    }
  }
  if (!(covariance_condition >= 1.0) || !std::isfinite(covariance_condition)) {
    throw ValidationError("synth: covariance_condition must be >= 1");
  }
  if (image_shape.size() != 3 || patch_size.size() != 3) {
    throw ValidationError("synth: image and patch shapes need 3 extents");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (patch_size[a] < 1 || patch_size[a] > image_shape[a]) {
      throw ValidationError("synth: patch must fit inside the image");
    }
  }
  if (num_samples == 1) throw ValidationError("synth: num_samples must be 0 or >= 2");
  if (feature_tap.empty()) throw ValidationError("synth: feature_tap must not be empty");
  if (dice_link.noise < 0) throw ValidationError("synth: dice noise must be >= 0");
}

namespace {

// Fixed ID Gaussian shared by all subjects.
struct Population {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;  // Sigma = factor * factor^T
  Eigen::VectorXd direction;
  double sigma_along = 0.0;
};

Population make_population(const SynthConfig& cfg) {
  const std::size_t d = cfg.feature_dim();
  const auto n = static_cast<Eigen::Index>(d);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  std::normal_distribution<double> normal;

  Population pop;
  pop.mean.resize(n);
  for (auto& v : pop.mean) v = normal(rng);

  Eigen::MatrixXd g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }

  // log-spaced eigenvalues from 1 to covariance_condition
  Eigen::VectorXd sd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    sd(i) = std::sqrt(std::pow(cfg.covariance_condition, t));
  }
  pop.factor = q * sd.asDiagonal();

  pop.direction.resize(n);
  for (auto& v : pop.direction) v = normal(rng);
  pop.direction.normalize();
  pop.sigma_along = (pop.factor.transpose() * pop.direction).norm();
  return pop;
}

struct SubjectPlan {
  std::string id;
  Role role;
  double magnitude;
  std::uint64_t seed;
};

std::string magnitude_label(double m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", m);
  return buf;
}

std::string indexed(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return prefix + buf;
}

std::string patch_name(const std::string& prefix, std::size_t p) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "_p%03zu.mht", p);
  return prefix + buf;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Ground truth is a centred box; the prediction keeps round(t * |G|) of its
// voxels and adds as many outside voxels as it dropped, so Dice ~= t.
std::pair<Tensor, Tensor> make_masks(const Shape& image, double target, std::mt19937_64& rng) {
  const std::size_t nvox = element_count(image);
  std::vector<std::uint8_t> gt(nvox, 0), pred(nvox, 0);
  std::vector<std::size_t> inside, outside;
  for (std::size_t v = 0; v < nvox; ++v) {
    std::size_t rem = v;
    bool in = true;
    for (std::size_t a = image.size(); a-- > 0;) {
      const std::size_t c = rem % image[a];
      rem /= image[a];
      const std::size_t margin = image[a] / 4;
      if (c < margin || c >= image[a] - margin) in = false;
    }
    (in ? inside : outside).push_back(v);
  }
  for (auto v : inside) gt[v] = 1;
  std::shuffle(inside.begin(), inside.end(), rng);
  std::shuffle(outside.begin(), outside.end(), rng);
  const auto keep = static_cast<std::size_t>(std::lround(target * static_cast<double>(inside.size())));
  const std::size_t extra = std::min(inside.size() - keep, outside.size());
  for (std::size_t i = 0; i < keep; ++i) pred[inside[i]] = 1;
  for (std::size_t i = 0; i < extra; ++i) pred[outside[i]] = 1;
  return {Tensor(image, std::move(pred)), Tensor(image, std::move(gt))};
}

SubjectManifest make_subject(const SynthConfig& cfg, const Population& pop, const PatchGrid& grid,
                             const SubjectPlan& plan, const fs::path& out_dir) {
  std::mt19937_64 rng(plan.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;

  const fs::path dir = out_dir / "subjects" / plan.id;
  fs::create_directories(dir);

  SubjectManifest s;
  s.subject_id = plan.id;
  s.role = plan.role;
  s.dataset_tag = cfg.dataset_tag;
  s.feature_tap = cfg.feature_tap;
  s.image_shape = cfg.image_shape;
  s.patch_size = cfg.patch_size;

  const auto d = static_cast<Eigen::Index>(cfg.feature_dim());
  const std::size_t scale = std::size_t{1} << cfg.upsample_rounds;
  Shape map_shape{cfg.channels};
  for (auto e : cfg.feature_spatial) map_shape.push_back(e * scale);
  const Shape& fs3 = cfg.feature_spatial;
  const Eigen::VectorXd offset =
      pop.mean + plan.magnitude * pop.sigma_along * pop.direction;

  Eigen::VectorXd g(d);
  std::vector<float> map(element_count(map_shape));
  for (std::size_t p = 0; p < grid.num_patches(); ++p) {
    for (auto& v : g) v = normal(rng);
    const Eigen::VectorXd z = offset + pop.factor * g;
    for (std::size_t c = 0; c < cfg.channels; ++c)
      for (std::size_t x = 0; x < map_shape[1]; ++x)
        for (std::size_t y = 0; y < map_shape[2]; ++y)
          for (std::size_t w = 0; w < map_shape[3]; ++w) {
            const std::size_t src = ((c * fs3[0] + x / scale) * fs3[1] + y / scale) * fs3[2] + w / scale;
            const std::size_t dst = ((c * map_shape[1] + x) * map_shape[2] + y) * map_shape[3] + w;
            map[dst] = static_cast<float>(z(static_cast<Eigen::Index>(src)));
          }
    const fs::path path = dir / patch_name("feat", p);
    write_tensor(Tensor(map_shape, map), path);
    s.feature_files.push_back({p, path});
  }

  const DiceLink& link = cfg.dice_link;
  double target = std::clamp(link.intercept - link.slope * plan.magnitude, link.lo, link.hi);
  target = std::clamp(target + link.noise * (2.0 * unit(rng) - 1.0), 0.0, 1.0);
  auto [pred, gt] = make_masks(cfg.image_shape, target, rng);
  s.prediction_path = dir / "pred.mht";
  s.ground_truth_path = dir / "gt.mht";
  write_tensor(pred, *s.prediction_path);
  write_tensor(gt, *s.ground_truth_path);

  // Foreground logit sign follows the prediction; confidence fades with the
  // shift and the sample spread grows with it.
  const double margin = 4.0 / (1.0 + plan.magnitude) * std::exp(0.1 * normal(rng));
  const double spread = 0.5 + 0.5 * plan.magnitude;
  const auto pred_v = pred.values<std::uint8_t>();
  const Shape& ps = cfg.patch_size;
  const Shape& im = cfg.image_shape;
  const std::size_t pvox = element_count(ps);
  std::vector<double> base(pvox);
  for (std::size_t p = 0; p < grid.num_patches(); ++p) {
    const auto o = grid.origin(p);
    for (std::size_t x = 0, i = 0; x < ps[0]; ++x)
      for (std::size_t y = 0; y < ps[1]; ++y)
        for (std::size_t w = 0; w < ps[2]; ++w, ++i) {
          const std::size_t v = ((o[0] + x) * im[1] + (o[1] + y)) * im[2] + (o[2] + w);
          const double sign = pred_v[v] ? 1.0 : -1.0;
          base[i] = sign * margin * (0.5 + unit(rng));
        }
    if (cfg.write_logits) {
      std::vector<float> logits(2 * pvox);
      for (std::size_t i = 0; i < pvox; ++i) {
        logits[i] = 0.0f;
        logits[pvox + i] = static_cast<float>(base[i]);
      }
      Shape shape{2};
      shape.insert(shape.end(), ps.begin(), ps.end());
      const fs::path path = dir / patch_name("logit", p);
      write_tensor(Tensor(shape, std::move(logits)), path);
      s.logit_files.push_back({p, path});
    }
    for (std::size_t k = 0; k < cfg.num_samples; ++k) {
      std::vector<float> probs(pvox);
      for (std::size_t i = 0; i < pvox; ++i) {
        probs[i] = static_cast<float>(sigmoid(base[i] + spread * normal(rng)));
      }
      char prefix[32];
      std::snprintf(prefix, sizeof prefix, "sample%02zu", k);
      const fs::path path = dir / patch_name(prefix, p);
      write_tensor(Tensor(ps, std::move(probs)), path);
      s.sample_prediction_files.push_back({k, p, path});
    }
  }
  return s;
}

}  // namespace

SynthOutput generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const PatchGrid grid = make_grid(cfg.image_shape, cfg.patch_size);
  const Population pop = make_population(cfg);

  std::vector<SubjectPlan> plans;
  auto add = [&](const std::string& id, Role role, double m) {
    plans.push_back({id, role, m, derive_seed(cfg.seed, plans.size() + 1)});
  };
  for (std::size_t i = 0; i < cfg.n_train; ++i) add(indexed("train-", i), Role::kTrain, 0.0);
  for (std::size_t i = 0; i < cfg.n_id_test; ++i) add(indexed("idtest-", i), Role::kIdTest, 0.0);
  for (double m : cfg.shift_magnitudes) {
    for (std::size_t i = 0; i < cfg.n_ood; ++i) {
      add(indexed("ood-m" + magnitude_label(m) + "-", i), Role::kOod, m);
    }
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  SynthOutput out;
  out.subjects.resize(plans.size());
  try {
    parallel_for(plans.size(), cfg.workers, [&](std::size_t i) {
      out.subjects[i] = make_subject(cfg, pop, grid, plans[i], out_dir);
    });
  } catch (const fs::filesystem_error& e) {
    throw IoError(e.what());
  }
  out.manifest_path = out_dir / "manifest.jsonl";
  write_manifest(out.subjects, out.manifest_path);
  return out;
}

PlanarInstance anisotropic_planar_instance(std::uint64_t seed, std::size_t n_train,
                                           std::size_t n_id_test, std::size_t n_ood) {
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  const double theta = 3.14159265358979323846 * unit(rng);
  Eigen::Matrix2d rot;
  rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);

  auto id_points = [&](std::size_t n) {
    Eigen::MatrixXd m(2, static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double major = 10.0 * normal(rng);
      const double minor = 0.1 * normal(rng);
      m.col(j) = rot * Eigen::Vector2d(major, minor);
    }
    return m;
  };

  PlanarInstance inst;
  inst.train = id_points(n_train);
  inst.id_test = id_points(n_id_test);
  inst.ood.resize(2, static_cast<Eigen::Index>(n_ood));
  for (Eigen::Index j = 0; j < inst.ood.cols(); ++j) {
    const double major = 10.0 * normal(rng);
    const double minor = unit(rng) < 0.5 ? -1.0 : 1.0;
    inst.ood.col(j) = rot * Eigen::Vector2d(major, minor);
  }
  return inst;
}

}  // namespace mdood
