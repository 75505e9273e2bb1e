#include "manipulate.hpp"

#include <cmath>
#include <stdexcept>

namespace mollae {

LatentCode encode_means(const Model& model, const Molecule& mol) {
    LatentPosterior post = model.encoder().encode(center(mol), model.vocab());
    return LatentCode{post.mu_x, post.mu_h};
}

std::vector<Molecule> generate(const Model& model, int count, int steps, Rng& rng) {
    if (count < 0) throw std::runtime_error("generate: negative count");
    if (!model.has_prior) throw std::runtime_error("generate: checkpoint lacks an atom-count prior (untrained?)");
    const TrainConfig& cfg = model.config();
    double sx = std::sqrt(cfg.var_x), sh = std::sqrt(cfg.var_h);
    std::vector<Molecule> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int s = 0; s < count; ++s) {
        LatentCode z;
        z.z_x.resize(cfg.n_z, 3);
        for (Eigen::Index i = 0; i < cfg.n_z; ++i)
            for (Eigen::Index j = 0; j < 3; ++j) z.z_x(i, j) = sx * rng.normal();
        z.z_h.resize(cfg.n_z, cfg.d_z);
        for (Eigen::Index i = 0; i < cfg.n_z; ++i)
            for (Eigen::Index j = 0; j < cfg.d_z; ++j) z.z_h(i, j) = sh * rng.normal();
        int n = model.prior.sample(rng);
        out.push_back(decode(z, n, steps, model.schedule(), model.decoder(), rng));
    }
    return out;
}

Molecule analog(const Model& model, const Molecule& mol, int delta, int steps, Rng& rng) {
    Eigen::Index n = mol.size() + delta;
    if (n < 1) throw std::runtime_error("analog: resulting atom count must be >= 1");
    LatentCode z = encode_means(model, mol);
    return decode(z, n, steps, model.schedule(), model.decoder(), rng);
}

std::pair<Molecule, Molecule> swap_latents(const Model& model, const Molecule& a, const Molecule& b, int steps,
                                           Rng& rng) {
    LatentCode za = encode_means(model, a);
    LatentCode zb = encode_means(model, b);
    LatentCode hybrid1{za.z_x, zb.z_h};  // shape of A, substructure of B
    LatentCode hybrid2{zb.z_x, za.z_h};
    Molecule m1 = decode(hybrid1, b.size(), steps, model.schedule(), model.decoder(), rng);
    Molecule m2 = decode(hybrid2, a.size(), steps, model.schedule(), model.decoder(), rng);
    return {m1, m2};
}

namespace {
Molecule decode_lerp(const Model& model, const LatentCode& za, const LatentCode& zb, Eigen::Index na,
                     Eigen::Index nb, double lambda, int steps, Rng& rng) {
    LatentCode z;
    z.z_x = (1.0 - lambda) * za.z_x + lambda * zb.z_x;
    z.z_h = (1.0 - lambda) * za.z_h + lambda * zb.z_h;
    double nn = (1.0 - lambda) * static_cast<double>(na) + lambda * static_cast<double>(nb);
    Eigen::Index n = static_cast<Eigen::Index>(std::floor(nn + 0.5));  // ties round half-up
    return decode(z, n, steps, model.schedule(), model.decoder(), rng);
}
}  // namespace

std::vector<Molecule> interpolate(const Model& model, const Molecule& a, const Molecule& b, int num_points,
                                  int steps, Rng& rng) {
    if (num_points < 2) throw std::runtime_error("interpolate: need at least 2 points");
    LatentCode za = encode_means(model, a);
    LatentCode zb = encode_means(model, b);
    std::vector<Molecule> out;
    out.reserve(static_cast<std::size_t>(num_points));
    for (int j = 0; j < num_points; ++j) {
        double lambda = static_cast<double>(j) / static_cast<double>(num_points - 1);
        out.push_back(decode_lerp(model, za, zb, a.size(), b.size(), lambda, steps, rng));
    }
    return out;
}

Molecule blend(const Model& model, const Molecule& a, const Molecule& b, double lambda, int steps, Rng& rng) {
    if (lambda < 0.0 || lambda > 1.0) throw std::runtime_error("blend: lambda must lie in [0,1]");
    LatentCode za = encode_means(model, a);
    LatentCode zb = encode_means(model, b);
    return decode_lerp(model, za, zb, a.size(), b.size(), lambda, steps, rng);
}

RigidTransform latent_align(const Model& model, const Molecule& a, const Molecule& b) {
    LatentCode za = encode_means(model, a);
    LatentCode zb = encode_means(model, b);
    Eigen::VectorXd w = Eigen::VectorXd::Ones(za.z_x.rows());
    return weighted_kabsch(za.z_x, zb.z_x, w);
}

}  // namespace mollae
