#pragma once

#include "egnn.hpp"
#include "moldata.hpp"

namespace mollae {

struct LatentCode {
    Eigen::MatrixXd z_x;  // N_Z x 3
    Eigen::MatrixXd z_h;  // N_Z x D_Z
};

struct LatentPosterior {
    Eigen::MatrixXd mu_x;      // N_Z x 3
    Eigen::VectorXd sigma2_x;  // N_Z (isotropic per node)
    Eigen::MatrixXd mu_h;      // N_Z x D_Z
    Eigen::MatrixXd sigma2_h;  // N_Z x D_Z
};

struct EncoderConfig {
    int n_z = 10;
    int d_z = 32;
    int vocab_k = 5;
    BackboneConfig backbone;
};

// Posterior head stacked on the backbone; mu_x is the virtual-node coordinate
// output untouched, while variances and mu_h come from an affine map of the
// rotation-invariant features [|z_x| per node, z_h].
class Encoder {
public:
    Encoder(const EncoderConfig& cfg, ad::ParamRegistry& reg, Rng& init_rng);

    struct PosteriorVars {
        ad::Var mu_x, sigma2_x, mu_h, sigma2_h;
    };

    // coords: centered N x 3 constant; onehot: N x K.
    PosteriorVars encode_vars(ad::Tape& tape, const Eigen::MatrixXd& coords, const Eigen::MatrixXd& onehot) const;
    LatentPosterior encode(const Molecule& mol, const AtomVocabulary& vocab) const;

    const EncoderConfig& config() const { return cfg_; }

private:
    EncoderConfig cfg_;
    ad::Param* embed_w_;    // K x D_f atom feature embedding
    ad::Param* embed_b_;    // 1 x D_f
    ad::Param* virtual_h_;  // N_Z x D_f learnable virtual-node features
    ad::Param* head_w_;     // (1 + D_f) x (1 + 2 D_Z)
    ad::Param* head_b_;     // 1 x (1 + 2 D_Z)
    std::unique_ptr<Backbone> backbone_;
};

// Closed-form regularizer against the factorized prior N(0, var_x I) x
// N(0, var_h I): sum of (mu^2 + sigma^2)/var - log sigma^2 - 1 over all
// dimensions, halved. Exactly the Gaussian KL when var = 1; for other
// variances it omits the constant +log(var)/2 per dimension.
double kl_loss(const LatentPosterior& post, double var_x, double var_h);
ad::Var kl_loss_vars(ad::Tape& tape, const Encoder::PosteriorVars& post, double var_x, double var_h);

LatentCode sample_latent(const LatentPosterior& post, Rng& rng);
// Reparameterized draw on-tape with externally supplied standard normals.
struct LatentVars {
    ad::Var z_x, z_h;
};
LatentVars sample_latent_vars(ad::Tape& tape, const Encoder::PosteriorVars& post, const Eigen::MatrixXd& eps_x,
                              const Eigen::MatrixXd& eps_h);

}  // namespace mollae
