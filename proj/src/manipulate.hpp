#pragma once

#include <utility>

#include "geom.hpp"
#include "model.hpp"

namespace mollae {

// Posterior means of a molecule (centered internally before encoding).
LatentCode encode_means(const Model& model, const Molecule& mol);

// Unconditional samples: latents from the model prior, atom counts from the
// training-set prior, decoded with `steps` refinement steps.
std::vector<Molecule> generate(const Model& model, int count, int steps, Rng& rng);

// Re-decode a molecule's mean latent with an edited atom count.
Molecule analog(const Model& model, const Molecule& mol, int delta, int steps, Rng& rng);

// Exchange latent halves between two molecules. Returns
// (decode(z_h from B, z_x from A), decode(z_h from A, z_x from B)); each
// hybrid uses its z_h donor's atom count.
std::pair<Molecule, Molecule> swap_latents(const Model& model, const Molecule& a, const Molecule& b, int steps,
                                           Rng& rng);

// Convex combinations of both latent halves at num_points evenly spaced
// lambdas; atom counts round linearly between the endpoints.
std::vector<Molecule> interpolate(const Model& model, const Molecule& a, const Molecule& b, int num_points,
                                  int steps, Rng& rng);

// Single-lambda blend (0 = pure A, 1 = pure B).
Molecule blend(const Model& model, const Molecule& a, const Molecule& b, double lambda, int steps, Rng& rng);

// Rigid motion superposing A's latent coordinate frame onto B's.
RigidTransform latent_align(const Model& model, const Molecule& a, const Molecule& b);

}  // namespace mollae
