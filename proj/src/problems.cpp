#include "bilevel/problems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bilevel {

Vec ProblemInstance::apply_op(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != shape.size()) {
    throw std::invalid_argument("forward operator: vector does not match " + to_string(shape));
  }
  if (op == OpKind::Identity) return x;
  return mask.cwiseProduct(x);
}

void ProblemInstance::validate() const {
  const auto n = static_cast<Eigen::Index>(shape.size());
  if (y.size() != n || x_star.size() != n) throw std::invalid_argument("instance: y/x_star shape mismatch");
  if ((op == OpKind::Mask) != (mask.size() > 0)) throw std::invalid_argument("instance: mask present iff op is Mask");
  if (op == OpKind::Mask && mask.size() != n) throw std::invalid_argument("instance: mask shape mismatch");
  if (!(xi >= 0.0)) throw std::invalid_argument("instance: xi must be >= 0");
}

std::vector<ProblemInstance> make_denoising(const std::vector<Image>& images, double sigma, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("make_denoising: no images");
  if (!(sigma >= 0.0)) throw std::invalid_argument("make_denoising: sigma must be >= 0");
  std::normal_distribution<double> normal;
  std::vector<ProblemInstance> out;
  for (const auto& img : images) {
    ProblemInstance inst;
    inst.shape = img.shape;
    inst.x_star = img.data;
    inst.y = img.data;
    if (sigma > 0.0) {
      for (auto& v : inst.y) v += sigma * normal(rng);
    }
    inst.validate();
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ProblemInstance> make_inpainting(const std::vector<Image>& images, double keep_prob,
                                             double sigma, double xi, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("make_inpainting: no images");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw std::invalid_argument("make_inpainting: keep_prob must lie in (0, 1]");
  }
  if (!(sigma >= 0.0) || !(xi >= 0.0)) throw std::invalid_argument("make_inpainting: sigma and xi must be >= 0");
  std::bernoulli_distribution keep(keep_prob);
  std::normal_distribution<double> normal;
  std::vector<ProblemInstance> out;
  for (const auto& img : images) {
    ProblemInstance inst;
    inst.op = OpKind::Mask;
    inst.shape = img.shape;
    inst.x_star = img.data;
    inst.xi = xi;
    inst.mask.resize(img.data.size());
    inst.y.resize(img.data.size());
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
      inst.mask[i] = keep(rng) ? 1.0 : 0.0;
      const double noise = sigma > 0.0 ? sigma * normal(rng) : 0.0;
      inst.y[i] = inst.mask[i] * (img.data[i] + noise);
    }
    inst.validate();
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<ProblemInstance> make_toy_family(int m, int dim, Rng& rng) {
  if (m < 1 || dim < 1) throw std::invalid_argument("make_toy_family: m and dim must be positive");
  std::uniform_real_distribution<double> uy(0.5, 1.5), uc(0.2, 0.6);
  std::vector<ProblemInstance> out;
  for (int i = 0; i < m; ++i) {
    ProblemInstance inst;
    inst.shape = {1, 1, dim};
    inst.y.resize(dim);
    for (auto& v : inst.y) v = uy(rng);
    inst.x_star = uc(rng) * inst.y;
    out.push_back(std::move(inst));
  }
  return out;
}

Vec sample_v(int m, SamplingMode mode, int b, Rng& rng) {
  if (m < 1) throw std::invalid_argument("sample_v: m must be positive");
  Vec v = Vec::Zero(m);
  if (mode == SamplingMode::Binomial) {
    std::binomial_distribution<int> binom(m, 1.0 / m);
    for (auto& e : v) e = binom(rng);
    return v;
  }
  if (b < 1 || b > m) throw std::invalid_argument("sample_v: batch size must satisfy 1 <= b <= m");
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < b; ++i) {
    std::uniform_int_distribution<int> pick(i, m - 1);
    std::swap(idx[i], idx[pick(rng)]);
    v[idx[i]] = static_cast<double>(m) / b;
  }
  return v;
}

double upper_loss(const Vec& x, const ProblemInstance& inst) {
  if (x.size() != inst.x_star.size()) throw std::invalid_argument("upper_loss: shape mismatch");
  return (x - inst.x_star).squaredNorm();
}

Vec upper_grad(const Vec& x, const ProblemInstance& inst) {
  if (x.size() != inst.x_star.size()) throw std::invalid_argument("upper_grad: shape mismatch");
  return 2.0 * (x - inst.x_star);
}

double psnr(const Vec& x, const Vec& ref, double peak, double cap) {
  if (x.size() != ref.size() || x.size() == 0) throw std::invalid_argument("psnr: shape mismatch");
  const double mse = (x - ref).squaredNorm() / static_cast<double>(x.size());
  if (mse == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / mse));
}

double strong_convexity_floor(const ProblemInstance& inst, const Regularizer& reg,
                              const ThetaParams& theta) {
  double mu = inst.xi + reg.strong_convexity(theta);
  if (inst.op == OpKind::Identity || inst.mask.minCoeff() > 0.0) mu += 2.0;
  if (!(mu > 0.0)) {
    throw std::domain_error("lower-level problem is not strongly convex (mu = " + std::to_string(mu) +
                            "); set xi > 0 for inpainting");
  }
  return mu;
}

std::vector<Image> synth_images(int n, int size, Rng& rng) {
  if (n < 1 || size < 4) throw std::invalid_argument("synth_images: need n >= 1 and size >= 4");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int canvas = size + size / 2;
  std::vector<Image> out;
  for (int img = 0; img < n; ++img) {
    std::vector<double> c(static_cast<std::size_t>(canvas) * canvas);
    const double g0 = 0.2 + 0.6 * unit(rng);
    const double gx = 0.4 * (unit(rng) - 0.5), gy = 0.4 * (unit(rng) - 0.5);
    for (int y = 0; y < canvas; ++y) {
      for (int x = 0; x < canvas; ++x) {
        c[y * canvas + x] = g0 + gx * (x - canvas / 2.0) / canvas + gy * (y - canvas / 2.0) / canvas;
      }
    }
    const int shapes = 3 + static_cast<int>(unit(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
      const double level = unit(rng);
      const double cx = unit(rng) * canvas, cy = unit(rng) * canvas;
      const double r = (0.1 + 0.3 * unit(rng)) * canvas;
      const bool disk = unit(rng) < 0.5;
      for (int y = 0; y < canvas; ++y) {
        for (int x = 0; x < canvas; ++x) {
          const double dx = x - cx, dy = y - cy;
          const bool inside = disk ? dx * dx + dy * dy <= r * r : std::fabs(dx) <= r && std::fabs(dy) <= 0.6 * r;
          if (inside) c[y * canvas + x] = level;
        }
      }
    }
    std::uniform_int_distribution<int> off(0, canvas - size);
    const int ox = off(rng), oy = off(rng);
    const bool flip = unit(rng) < 0.5;
    Image im{{1, size, size}, Vec(size * size)};
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const int sx = flip ? size - 1 - x : x;
        im.data[y * size + x] = std::clamp(c[(oy + y) * canvas + ox + sx], 0.0, 1.0);
      }
    }
    out.push_back(std::move(im));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string role, file, seed;
    if (!std::getline(ss, role, ',') || !std::getline(ss, file, ',') || !std::getline(ss, seed)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected <role>,<path>,<seed>");
    }
    if (role != "train" && role != "test") {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": role must be train or test");
    }
    ManifestEntry e;
    e.role = role;
    e.path = std::filesystem::path(file).is_absolute() ? std::filesystem::path(file) : path.parent_path() / file;
    try {
      std::size_t used = 0;
      e.seed = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad seed '" + seed + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace bilevel
