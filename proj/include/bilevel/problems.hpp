#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bilevel/regularizer.hpp"
#include "bilevel/types.hpp"

namespace bilevel {

enum class OpKind { Identity, Mask };

/// One lower-level task: h(x) = ||A x - y||^2 + R_theta(x) + (xi/2) ||x||^2
/// with A the identity or a binary pixel mask.
struct ProblemInstance {
  OpKind op = OpKind::Identity;
  Shape shape;
  Vec mask;  // empty unless op == Mask
  Vec y;
  Vec x_star;
  double xi = 0.0;

  Vec apply_op(const Vec& x) const;
  // A is diagonal, so this equals apply_op.
  Vec apply_adjoint(const Vec& u) const { return apply_op(u); }
  void validate() const;
};

std::vector<ProblemInstance> make_denoising(const std::vector<Image>& images, double sigma, Rng& rng);
std::vector<ProblemInstance> make_inpainting(const std::vector<Image>& images, double keep_prob,
                                             double sigma, double xi, Rng& rng);

// m tasks of dimension `dim` for the quadratic toy: y ~ U(0.5, 1.5) per
// entry and x* = c y with c ~ U(0.2, 0.6) per task.
std::vector<ProblemInstance> make_toy_family(int m, int dim, Rng& rng);

enum class SamplingMode { Binomial, MinibatchScaled };

// Binomial: v_i ~ Binomial(m, 1/m) independently. MinibatchScaled: a
// uniform b-subset carries weight m/b, the rest 0.
Vec sample_v(int m, SamplingMode mode, int b, Rng& rng);

double upper_loss(const Vec& x, const ProblemInstance& inst);
Vec upper_grad(const Vec& x, const ProblemInstance& inst);

double psnr(const Vec& x, const Vec& ref, double peak = 1.0, double cap = 100.0);

// Lower bound on the strong convexity modulus of h in x. Throws if it is not
// positive.
double strong_convexity_floor(const ProblemInstance& inst, const Regularizer& reg,
                              const ThetaParams& theta);

// Piecewise-constant shapes over smooth gradients, randomly cropped and
// flipped; values in [0, 1].
std::vector<Image> synth_images(int n, int size, Rng& rng);

// Binary PGM (P5), maxval up to 65535; samples scaled to [0, 1].
Image load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const Image& img, int maxval = 65535);

struct ManifestEntry {
  std::string role;  // "train" or "test"
  std::filesystem::path path;
  std::uint64_t seed = 0;
};

// Lines `<role>,<path>,<seed>`; blank lines and '#' comments are skipped.
// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace bilevel
