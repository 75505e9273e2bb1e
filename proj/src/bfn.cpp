#include "bfn.hpp"

#include <cmath>
#include <stdexcept>

namespace mollae {

double NoiseSchedule::gamma(double t) const { return 1.0 - std::exp(2.0 * t * std::log(sigma1)); }

double NoiseSchedule::beta_x(double t) const { return std::exp(-2.0 * t * std::log(sigma1)) - 1.0; }

double NoiseSchedule::alpha_x(int i) const {
    double n = static_cast<double>(n_steps);
    return beta_x(i / n) - beta_x((i - 1) / n);
}

double NoiseSchedule::beta_v(double t) const { return beta1 * t * t; }

double NoiseSchedule::alpha_v(int i) const {
    double n = static_cast<double>(n_steps);
    double ti = i / n, tp = (i - 1) / n;
    return beta1 * (ti * ti - tp * tp);
}

BFNState BFNState::prior(Eigen::Index n, int k) {
    BFNState s;
    s.mu = Eigen::MatrixXd::Zero(n, 3);
    s.rho = 1.0;
    s.theta_v = Eigen::MatrixXd::Constant(n, k, 1.0 / static_cast<double>(k));
    return s;
}

Eigen::MatrixXd sender_continuous(const Eigen::MatrixXd& x, double alpha, Rng& rng) {
    if (alpha <= 0.0) throw std::runtime_error("sender_continuous: alpha must be positive");
    double s = 1.0 / std::sqrt(alpha);
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) y(i, j) = x(i, j) + s * rng.normal();
    return y;
}

Eigen::MatrixXd sender_discrete(const Eigen::MatrixXd& e_v, double alpha_p, Rng& rng) {
    if (alpha_p <= 0.0) throw std::runtime_error("sender_discrete: alpha must be positive");
    double k = static_cast<double>(e_v.cols());
    double s = std::sqrt(alpha_p * k);
    Eigen::MatrixXd y(e_v.rows(), e_v.cols());
    for (Eigen::Index i = 0; i < e_v.rows(); ++i)
        for (Eigen::Index j = 0; j < e_v.cols(); ++j)
            y(i, j) = alpha_p * (k * e_v(i, j) - 1.0) + s * rng.normal();
    return y;
}

void bayes_update_continuous(Eigen::MatrixXd& mu, double& rho, const Eigen::MatrixXd& y_x, double alpha) {
    if (alpha < 0.0) throw std::runtime_error("bayes_update_continuous: negative alpha");
    double rho_new = rho + alpha;
    mu = (rho * mu + alpha * y_x) / rho_new;
    rho = rho_new;
}

Eigen::MatrixXd bayes_update_discrete(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& y_v) {
    Eigen::MatrixXd out(theta.rows(), theta.cols());
    for (Eigen::Index r = 0; r < theta.rows(); ++r) {
        Eigen::ArrayXd l = y_v.row(r).transpose().array() + theta.row(r).transpose().array().log();
        double m = l.maxCoeff();
        if (!std::isfinite(m)) throw std::runtime_error("bayes_update_discrete: zero normalizer in row " + std::to_string(r));
        Eigen::ArrayXd e = (l - m).exp();
        out.row(r) = (e / e.sum()).transpose();
    }
    return out;
}

void flow_sample_continuous(const Eigen::MatrixXd& x, double t, const NoiseSchedule& sched, Rng& rng,
                            Eigen::MatrixXd& mu, double& rho) {
    if (t < 0.0 || t >= 1.0) throw std::runtime_error("flow_sample_continuous: t must lie in [0,1)");
    double g = sched.gamma(t);
    double s = std::sqrt(g * (1.0 - g));
    mu.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) mu(i, j) = g * x(i, j) + s * rng.normal();
    rho = 1.0 / (1.0 - g);
}

Eigen::MatrixXd flow_sample_discrete(const Eigen::MatrixXd& e_v, double t, const NoiseSchedule& sched, Rng& rng) {
    if (t < 0.0 || t >= 1.0) throw std::runtime_error("flow_sample_discrete: t must lie in [0,1)");
    double b = sched.beta_v(t);
    double k = static_cast<double>(e_v.cols());
    double s = std::sqrt(b * k);
    Eigen::MatrixXd theta(e_v.rows(), e_v.cols());
    for (Eigen::Index r = 0; r < e_v.rows(); ++r) {
        Eigen::ArrayXd y(e_v.cols());
        for (Eigen::Index c = 0; c < e_v.cols(); ++c) y(c) = b * (k * e_v(r, c) - 1.0) + s * rng.normal();
        double m = y.maxCoeff();
        Eigen::ArrayXd e = (y - m).exp();
        theta.row(r) = (e / e.sum()).transpose();
    }
    return theta;
}

Decoder::Decoder(const DecoderConfig& cfg, ad::ParamRegistry& reg, Rng& init_rng) : cfg_(cfg) {
    if (cfg.vocab_k < 2) throw std::runtime_error("decoder: vocabulary must have at least 2 types");
    int d_f = cfg.backbone.d_f;
    type_embed_ = &reg.add("dec.type_embed", cfg.vocab_k, d_f);
    latent_embed_ = &reg.add("dec.latent_embed", cfg.d_z, d_f);
    latent_bias_ = &reg.add("dec.latent_bias", 1, d_f);
    out_w_ = &reg.add("dec.out_w", d_f, cfg.vocab_k);
    out_b_ = &reg.add("dec.out_b", 1, cfg.vocab_k);
    ad::init_xavier_uniform(*type_embed_, init_rng);
    ad::init_xavier_uniform(*latent_embed_, init_rng);
    ad::init_xavier_uniform(*out_w_, init_rng);
    BackboneConfig bc = cfg.backbone;
    bc.time_conditioned = true;
    backbone_ = std::make_unique<Backbone>(bc, reg, "dec.backbone", init_rng);
}

Decoder::OutputVars Decoder::output_vars(ad::Tape& tape, ad::Var mu, ad::Var theta_v, ad::Var z_x, ad::Var z_h,
                                         double t) const {
    ad::Var h_u = ad::matmul(theta_v, tape.leaf(*type_embed_));
    ad::Var h_c = ad::add_rowvec(ad::matmul(z_h, tape.leaf(*latent_embed_)), tape.leaf(*latent_bias_));
    ad::Var x_c = ad::center_cols(z_x);  // condition nodes must sit at their COM
    BackboneOut bb = backbone_->forward(tape, mu, h_u, x_c, h_c, t);
    OutputVars out;
    out.x_hat = bb.x_update;
    out.v_logits = ad::add_rowvec(ad::matmul(bb.h_update, tape.leaf(*out_w_)), tape.leaf(*out_b_));
    return out;
}

NetworkOutput Decoder::output_distribution(const BFNState& state, const LatentCode& z, double t) const {
    ad::Tape tape;
    OutputVars v = output_vars(tape, tape.constant(state.mu), tape.constant(state.theta_v),
                               tape.constant(z.z_x), tape.constant(z.z_h), t);
    NetworkOutput out;
    out.x_hat = v.x_hat.val();
    out.v_logits = v.v_logits.val();
    if (!out.x_hat.allFinite() || !out.v_logits.allFinite())
        throw std::runtime_error("decoder: non-finite network output");
    return out;
}

double loss_x_n(const Eigen::MatrixXd& x, const Eigen::MatrixXd& x_hat, double alpha_i) {
    if (alpha_i <= 0.0) throw std::runtime_error("loss_x_n: alpha must be positive");
    if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw std::runtime_error("loss_x_n: shape mismatch");
    return 0.5 * alpha_i * (x - x_hat).squaredNorm();
}

ad::Var loss_x_n_vars(ad::Var x_hat, const Eigen::MatrixXd& x, double alpha_i) {
    ad::Tape& tape = *x_hat.tape;
    return ad::scale(ad::sum(ad::square(ad::sub(x_hat, tape.constant(x)))), 0.5 * alpha_i);
}

namespace {
// log N(y_row | alpha(K e_k - 1), alpha K I) for every candidate type k,
// dropping the shared normalizing constant (it cancels in the loss).
Eigen::MatrixXd mixture_logdens(const Eigen::MatrixXd& y, double alpha_i) {
    Eigen::Index n = y.rows(), k = y.cols();
    double kk = static_cast<double>(k);
    Eigen::MatrixXd g(n, k);
    for (Eigen::Index r = 0; r < n; ++r) {
        // ||y - m_k||^2 where m_k = -alpha * 1 + alpha*K*e_k
        double base = (y.row(r).array() + alpha_i).square().sum();
        for (Eigen::Index c = 0; c < k; ++c) {
            double yc = y(r, c) + alpha_i;
            double shifted = yc - alpha_i * kk;
            g(r, c) = -(base - yc * yc + shifted * shifted) / (2.0 * alpha_i * kk);
        }
    }
    return g;
}
}  // namespace

double loss_v_n(const Eigen::MatrixXd& e_v, const Eigen::MatrixXd& p_out, double alpha_i, Rng& rng) {
    if (e_v.rows() != p_out.rows() || e_v.cols() != p_out.cols()) throw std::runtime_error("loss_v_n: shape mismatch");
    Eigen::MatrixXd y = sender_discrete(e_v, alpha_i, rng);
    Eigen::MatrixXd g = mixture_logdens(y, alpha_i);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        // first term: density at the true type (one-hot row of e_v)
        Eigen::Index true_k;
        e_v.row(r).maxCoeff(&true_k);
        double first = g(r, true_k);
        Eigen::ArrayXd l = p_out.row(r).transpose().array().log() + g.row(r).transpose().array();
        double m = l.maxCoeff();
        if (!std::isfinite(m)) throw std::runtime_error("loss_v_n: mixture log-density underflow in row " + std::to_string(r));
        double lse = m + std::log((l - m).exp().sum());
        loss += first - lse;
    }
    return loss;
}

ad::Var loss_v_n_vars(ad::Var v_logits, const Eigen::MatrixXd& e_v, const Eigen::MatrixXd& y, double alpha_i) {
    ad::Tape& tape = *v_logits.tape;
    Eigen::MatrixXd g = mixture_logdens(y, alpha_i);
    double first = 0.0;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        Eigen::Index true_k;
        e_v.row(r).maxCoeff(&true_k);
        first += g(r, true_k);
    }
    ad::Var logp = ad::log_softmax_rows(v_logits);
    ad::Var inner = ad::add(logp, tape.constant(g));
    ad::Var lse = ad::logsumexp_rows(inner);
    return ad::add_scalar(ad::neg(ad::sum(lse)), first);
}

Molecule decode(const LatentCode& z, Eigen::Index n_atoms, int steps, const NoiseSchedule& sched,
                const Decoder& dec, Rng& rng) {
    if (n_atoms < 1) throw std::runtime_error("decode: need at least one atom");
    if (steps < 1) throw std::runtime_error("decode: need at least one step");
    int k = dec.config().vocab_k;
    BFNState state = BFNState::prior(n_atoms, k);
    double n = static_cast<double>(steps);
    for (int i = 1; i <= steps; ++i) {
        double t = (i - 1) / n;
        NetworkOutput out = dec.output_distribution(state, z, t);
        // row-stochastic belief refresh from the network's current guess
        Eigen::MatrixXd p_out(out.v_logits.rows(), out.v_logits.cols());
        for (Eigen::Index r = 0; r < p_out.rows(); ++r) {
            Eigen::ArrayXd l = out.v_logits.row(r).transpose().array();
            double m = l.maxCoeff();
            Eigen::ArrayXd e = (l - m).exp();
            p_out.row(r) = (e / e.sum()).transpose();
        }
        flow_sample_continuous(out.x_hat, t, sched, rng, state.mu, state.rho);
        state.theta_v = flow_sample_discrete(p_out, t, sched, rng);
        if (!state.mu.allFinite() || !state.theta_v.allFinite())
            throw std::runtime_error("decode: non-finite state at step " + std::to_string(i));
    }
    NetworkOutput fin = dec.output_distribution(state, z, 1.0);
    Molecule m;
    m.coords = fin.x_hat;
    m.types.resize(static_cast<std::size_t>(n_atoms));
    for (Eigen::Index r = 0; r < n_atoms; ++r) {
        Eigen::Index best;
        fin.v_logits.row(r).maxCoeff(&best);
        m.types[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return m;
}

}  // namespace mollae
