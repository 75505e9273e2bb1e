#include "encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace mollae {

Encoder::Encoder(const EncoderConfig& cfg, ad::ParamRegistry& reg, Rng& init_rng) : cfg_(cfg) {
    if (cfg.n_z < 4) throw std::runtime_error("encoder: n_z must be >= 4 (non-degenerate latent frame)");
    if (cfg.d_z < 1) throw std::runtime_error("encoder: d_z must be >= 1");
    int d_f = cfg.backbone.d_f;
    embed_w_ = &reg.add("enc.embed_w", cfg.vocab_k, d_f);
    embed_b_ = &reg.add("enc.embed_b", 1, d_f);
    virtual_h_ = &reg.add("enc.virtual_h", cfg.n_z, d_f);
    head_w_ = &reg.add("enc.head_w", 1 + d_f, 1 + 2 * cfg.d_z);
    head_b_ = &reg.add("enc.head_b", 1, 1 + 2 * cfg.d_z);
    ad::init_xavier_uniform(*embed_w_, init_rng);
    ad::init_normal(*virtual_h_, init_rng, 1.0);
    ad::init_xavier_uniform(*head_w_, init_rng);
    BackboneConfig bc = cfg.backbone;
    bc.time_conditioned = false;
    backbone_ = std::make_unique<Backbone>(bc, reg, "enc.backbone", init_rng);
}

Encoder::PosteriorVars Encoder::encode_vars(ad::Tape& tape, const Eigen::MatrixXd& coords,
                                            const Eigen::MatrixXd& onehot) const {
    if (coords.rows() != onehot.rows()) throw std::runtime_error("encoder: coords/onehot row mismatch");
    if (coords.rows() > 0) {
        Eigen::RowVector3d com = coords.colwise().mean();
        if (com.cwiseAbs().maxCoeff() > 1e-6) throw std::runtime_error("encoder: input must be centered");
    }
    ad::Var x_c = tape.constant(coords);
    ad::Var h_c = ad::add_rowvec(ad::matmul(tape.constant(onehot), tape.leaf(*embed_w_)), tape.leaf(*embed_b_));
    ad::Var x_u = tape.constant(Eigen::MatrixXd::Zero(cfg_.n_z, 3));
    ad::Var h_u = tape.leaf(*virtual_h_);

    BackboneOut out = backbone_->forward(tape, x_u, h_u, x_c, h_c);

    ad::Var z_x = out.x_update;                                     // N_Z x 3
    ad::Var norms = ad::sqrt_off(ad::rowwise_sum(ad::square(z_x)), 1e-12);  // rotation-invariant
    ad::Var head_in = ad::concat_cols({norms, out.h_update});
    ad::Var head = ad::add_rowvec(ad::matmul(head_in, tape.leaf(*head_w_)), tape.leaf(*head_b_));

    PosteriorVars p;
    p.mu_x = z_x;
    p.sigma2_x = ad::add_scalar(ad::softplus(ad::slice_cols(head, 0, 1)), 1e-6);
    p.mu_h = ad::slice_cols(head, 1, cfg_.d_z);
    p.sigma2_h = ad::add_scalar(ad::softplus(ad::slice_cols(head, 1 + cfg_.d_z, cfg_.d_z)), 1e-6);
    return p;
}

LatentPosterior Encoder::encode(const Molecule& mol, const AtomVocabulary& vocab) const {
    ad::Tape tape;
    PosteriorVars p = encode_vars(tape, mol.coords, one_hot(mol, vocab));
    LatentPosterior out;
    out.mu_x = p.mu_x.val();
    out.sigma2_x = p.sigma2_x.val().col(0);
    out.mu_h = p.mu_h.val();
    out.sigma2_h = p.sigma2_h.val();
    return out;
}

namespace {
double kl_term_sum(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& s2, double var) {
    // sum of 0.5((mu^2 + s2)/var - log s2 - 1)
    return 0.5 * (((mu.array().square() + s2.array()) / var) - s2.array().log() - 1.0).sum();
}
}  // namespace

double kl_loss(const LatentPosterior& post, double var_x, double var_h) {
    if (var_x <= 0.0 || var_h <= 0.0) throw std::runtime_error("kl_loss: prior variances must be positive");
    if ((post.sigma2_x.array() <= 0.0).any() || (post.sigma2_h.array() <= 0.0).any())
        throw std::runtime_error("kl_loss: nonpositive posterior variance");
    // each node's scalar coordinate variance counts once per x/y/z
    Eigen::MatrixXd s2x = post.sigma2_x.replicate(1, 3);
    return kl_term_sum(post.mu_x, s2x, var_x) + kl_term_sum(post.mu_h, post.sigma2_h, var_h);
}

ad::Var kl_loss_vars(ad::Tape& tape, const Encoder::PosteriorVars& post, double var_x, double var_h) {
    if (var_x <= 0.0 || var_h <= 0.0) throw std::runtime_error("kl_loss: prior variances must be positive");
    // x part: sigma2_x is N_Z x 1; mu_x is N_Z x 3
    ad::Var mu2_x = ad::rowwise_sum(ad::square(post.mu_x));  // N_Z x 1
    ad::Var term_x = ad::add(ad::scale(ad::add(mu2_x, ad::scale(post.sigma2_x, 3.0)), 1.0 / var_x),
                             ad::scale(ad::log(post.sigma2_x), -3.0));
    ad::Var lx = ad::scale(ad::add_scalar(ad::sum(term_x), -3.0 * static_cast<double>(post.mu_x.rows())), 0.5);
    ad::Var term_h = ad::sub(ad::scale(ad::add(ad::square(post.mu_h), post.sigma2_h), 1.0 / var_h),
                             ad::log(post.sigma2_h));
    ad::Var lh = ad::scale(
        ad::add_scalar(ad::sum(term_h), -static_cast<double>(post.mu_h.rows() * post.mu_h.cols())), 0.5);
    (void)tape;
    return ad::add(lx, lh);
}

LatentCode sample_latent(const LatentPosterior& post, Rng& rng) {
    LatentCode z;
    Eigen::Index nz = post.mu_x.rows(), dz = post.mu_h.cols();
    z.z_x.resize(nz, 3);
    for (Eigen::Index i = 0; i < nz; ++i) {
        double s = std::sqrt(post.sigma2_x(i));
        for (Eigen::Index d = 0; d < 3; ++d) z.z_x(i, d) = post.mu_x(i, d) + s * rng.normal();
    }
    z.z_h.resize(nz, dz);
    for (Eigen::Index i = 0; i < nz; ++i)
        for (Eigen::Index j = 0; j < dz; ++j) z.z_h(i, j) = post.mu_h(i, j) + std::sqrt(post.sigma2_h(i, j)) * rng.normal();
    return z;
}

LatentVars sample_latent_vars(ad::Tape& tape, const Encoder::PosteriorVars& post, const Eigen::MatrixXd& eps_x,
                              const Eigen::MatrixXd& eps_h) {
    ad::Var sx = ad::sqrt_off(post.sigma2_x, 0.0);  // N_Z x 1, strictly positive by construction
    LatentVars z;
    z.z_x = ad::add(post.mu_x, ad::mul_colbcast(tape.constant(eps_x), sx));
    z.z_h = ad::add(post.mu_h, ad::mul(tape.constant(eps_h), ad::sqrt_off(post.sigma2_h, 0.0)));
    return z;
}

}  // namespace mollae
