#pragma once

#include "egnn.hpp"
#include "encoder.hpp"
#include "moldata.hpp"

namespace mollae {

// Accuracy schedules for the two modalities. Coordinates follow
// gamma(t) = 1 - sigma1^(2t); types follow beta_v(t) = beta1 * t^2.
struct NoiseSchedule {
    double sigma1 = 0.001;
    double beta1 = 1.0;
    int n_steps = 1000;

    double gamma(double t) const;
    double beta_x(double t) const;   // gamma/(1-gamma) = sigma1^(-2t) - 1
    double alpha_x(int i) const;     // beta_x(t_i) - beta_x(t_{i-1}), t_i = i/n
    double beta_v(double t) const;
    double alpha_v(int i) const;
    static std::string gamma_formula() { return "gamma(t)=1-sigma1^(2t)"; }
};

struct BFNState {
    Eigen::MatrixXd mu;       // N x 3 coordinate belief mean
    double rho = 1.0;         // coordinate belief precision
    Eigen::MatrixXd theta_v;  // N x K row-stochastic type belief

    static BFNState prior(Eigen::Index n, int k);
};

struct NetworkOutput {
    Eigen::MatrixXd x_hat;     // N x 3
    Eigen::MatrixXd v_logits;  // N x K
};

// ---- senders, Bayes updates, flow sampling ----
Eigen::MatrixXd sender_continuous(const Eigen::MatrixXd& x, double alpha, Rng& rng);
Eigen::MatrixXd sender_discrete(const Eigen::MatrixXd& e_v, double alpha_p, Rng& rng);
void bayes_update_continuous(Eigen::MatrixXd& mu, double& rho, const Eigen::MatrixXd& y_x, double alpha);
Eigen::MatrixXd bayes_update_discrete(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y_v);
// mu ~ N(gamma(t) x, gamma(1-gamma) I); rho = 1/(1-gamma(t)); t in [0,1)
void flow_sample_continuous(const Eigen::MatrixXd& x, double t, const NoiseSchedule& sched, Rng& rng,
                            Eigen::MatrixXd& mu, double& rho);
// theta rows = softmax(y); y ~ N(beta_v(t)(K e - 1), beta_v(t) K I); t in [0,1)
Eigen::MatrixXd flow_sample_discrete(const Eigen::MatrixXd& e_v, double t, const NoiseSchedule& sched, Rng& rng);

struct DecoderConfig {
    int d_z = 32;
    int vocab_k = 5;
    BackboneConfig backbone;
};

// Belief-conditioned denoising network: molecule belief nodes are update
// nodes, latent nodes are (re-centered) condition nodes, time-conditioned.
class Decoder {
public:
    Decoder(const DecoderConfig& cfg, ad::ParamRegistry& reg, Rng& init_rng);

    struct OutputVars {
        ad::Var x_hat, v_logits;
    };
    // mu: belief mean (tape var or constant), theta_v: row-stochastic belief.
    OutputVars output_vars(ad::Tape& tape, ad::Var mu, ad::Var theta_v, ad::Var z_x, ad::Var z_h, double t) const;

    NetworkOutput output_distribution(const BFNState& state, const LatentCode& z, double t) const;

    const DecoderConfig& config() const { return cfg_; }

private:
    DecoderConfig cfg_;
    ad::Param* type_embed_;    // K x D_f
    ad::Param* latent_embed_;  // D_Z x D_f
    ad::Param* latent_bias_;   // 1 x D_f
    ad::Param* out_w_;         // D_f x K
    ad::Param* out_b_;         // 1 x K
    std::unique_ptr<Backbone> backbone_;
};

// ---- discrete-time losses ----
double loss_x_n(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat, double alpha_i);
ad::Var loss_x_n_vars(ad::Var x_hat, const Eigen::MatrixXd& x, double alpha_i);

// Single-sample Monte-Carlo estimate of the step-i type loss; y is drawn from
// sender_discrete internally with the supplied rng.
double loss_v_n(const Eigen::MatrixXd& e_v, const Eigen::MatrixXd& p_out, double alpha_i, Rng& rng);
// Tape version; p_out enters as softmax(v_logits), y supplied by the caller.
ad::Var loss_v_n_vars(ad::Var v_logits, const Eigen::MatrixXd& e_v, const Eigen::MatrixXd& y, double alpha_i);

// Parameter-space generation loop conditioned on a latent code.
Molecule decode(const LatentCode& z, Eigen::Index n_atoms, int steps, const NoiseSchedule& sched,
                const Decoder& dec, Rng& rng);

}  // namespace mollae
