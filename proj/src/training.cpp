#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mollae {

LossParts forward_loss(ad::Tape& tape, Model& model, const Molecule& mol, Rng& rng, ad::Var* total_var,
                       const DecoderSeam& seam) {
    const TrainConfig& cfg = model.config();
    NoiseSchedule sched = model.schedule();
    Molecule m = center(mol);
    Eigen::MatrixXd onehot = one_hot(m, model.vocab());

    Encoder::PosteriorVars post = model.encoder().encode_vars(tape, m.coords, onehot);
    ad::Var reg = kl_loss_vars(tape, post, cfg.var_x, cfg.var_h);

    Eigen::Index nz = cfg.n_z, dz = cfg.d_z;
    Eigen::MatrixXd eps_x(nz, 3), eps_h(nz, dz);
    for (Eigen::Index i = 0; i < nz; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) eps_x(i, j) = rng.normal();
    for (Eigen::Index i = 0; i < nz; ++i)
        for (Eigen::Index j = 0; j < dz; ++j) eps_h(i, j) = rng.normal();
    LatentVars z = sample_latent_vars(tape, post, eps_x, eps_h);

    int i = static_cast<int>(rng.uniform_int(1, cfg.n_steps));
    double t = static_cast<double>(i - 1) / static_cast<double>(cfg.n_steps);

    Eigen::MatrixXd mu;
    double rho;
    flow_sample_continuous(m.coords, t, sched, rng, mu, rho);
    Eigen::MatrixXd theta = flow_sample_discrete(onehot, t, sched, rng);

    Decoder::OutputVars out;
    if (seam)
        out = seam(tape, tape.constant(mu), tape.constant(theta), z.z_x, z.z_h, t);
    else
        out = model.decoder().output_vars(tape, tape.constant(mu), tape.constant(theta), z.z_x, z.z_h, t);

    double ax = sched.alpha_x(i), av = sched.alpha_v(i);
    ad::Var lx = loss_x_n_vars(out.x_hat, m.coords, ax);
    Eigen::MatrixXd y_v = sender_discrete(onehot, av, rng);
    ad::Var lv = loss_v_n_vars(out.v_logits, onehot, y_v, av);

    ad::Var recon = ad::add(lx, lv);
    ad::Var total = ad::add(ad::scale(recon, cfg.recon_weight), ad::scale(reg, cfg.reg_weight));

    LossParts parts;
    parts.recon_x = lx.val()(0, 0);
    parts.recon_v = lv.val()(0, 0);
    parts.reg = reg.val()(0, 0);
    parts.total = total.val()(0, 0);
    if (!std::isfinite(parts.total))
        throw std::runtime_error("forward_loss: non-finite loss (i=" + std::to_string(i) +
                                 ", recon_x=" + std::to_string(parts.recon_x) +
                                 ", recon_v=" + std::to_string(parts.recon_v) + ", reg=" + std::to_string(parts.reg) + ")");
    if (total_var) *total_var = total;
    return parts;
}

void adam_step(Model& model, double lr) {
    const TrainConfig& cfg = model.config();
    model.init_opt_state();
    Model::OptState& st = model.opt;
    st.t += 1;
    double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
    double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
    const auto& params = model.registry().all();
    for (std::size_t i = 0; i < params.size(); ++i) {
        ad::Param& p = *params[i];
        Eigen::MatrixXd g = p.grad;
        if (cfg.weight_decay != 0.0) g += cfg.weight_decay * p.value;
        st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
        st.v[i] = b2 * st.v[i] + (1.0 - b2) * g.cwiseProduct(g);
        Eigen::MatrixXd mhat = st.m[i] / corr1;
        Eigen::MatrixXd vhat = st.v[i] / corr2;
        p.value -= lr * (mhat.array() / (vhat.array().sqrt() + 1e-8)).matrix();
    }
}

namespace {

double validate(Model& model, const std::vector<Molecule>& val, unsigned long long seed_base) {
    double sum = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        Rng r(derive_seed(seed_base, i));
        ad::Tape tape;
        sum += forward_loss(tape, model, val[i], r).total;
    }
    return sum / static_cast<double>(val.size());
}

}  // namespace

TrainReport train(Model& model, const std::vector<Molecule>& dataset, const TrainOptions& opts) {
    if (dataset.empty()) throw std::runtime_error("train: empty dataset");
    const TrainConfig& cfg = model.config();
    TrainReport report;

    // deterministic split
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(cfg.seed, 0x5914));
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[split_rng.uniform_int(0, static_cast<long long>(i) - 1)]);
    std::size_t n_val = cfg.val_fraction > 0.0
                            ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(dataset.size()))))
                            : 0;
    n_val = std::min(n_val, dataset.size() - 1);
    std::vector<Molecule> val_set, train_set;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(dataset[order[i]]);
    if (train_set.empty()) {
        train_set = val_set;  // degenerate tiny datasets train on everything
    }

    if (!model.has_prior) {
        model.prior = AtomCountPrior::fit(train_set);
        model.has_prior = true;
    }
    model.init_opt_state();
    if (model.opt.lr_current <= 0.0) model.opt.lr_current = cfg.lr;

    long long steps_per_epoch = std::max<long long>(1, static_cast<long long>(train_set.size()) / cfg.batch_size);
    long long val_every = cfg.val_every > 0 ? cfg.val_every : steps_per_epoch;
    unsigned long long val_seed = derive_seed(cfg.seed, 0xA117);

    bool saved_any = false;
    for (long long step = model.step; step < cfg.train_steps; ++step) {
        // deterministic batch membership: molecules drawn by index-derived rng
        Rng batch_rng(derive_seed(cfg.seed, 0xB000000ULL + static_cast<unsigned long long>(step)));
        double batch_total = 0.0;
        model.registry().zero_grads();
        bool bad = false;
        LossParts first_parts{};
        for (int b = 0; b < cfg.batch_size; ++b) {
            std::size_t idx = static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<long long>(train_set.size()) - 1));
            Rng mol_rng(derive_seed(derive_seed(cfg.seed, 0x3E000000ULL + static_cast<unsigned long long>(step)),
                                    static_cast<unsigned long long>(b)));
            ad::Tape tape;
            ad::Var total;
            LossParts parts;
            try {
                parts = forward_loss(tape, model, train_set[idx], mol_rng, &total);
            } catch (const std::exception&) {
                bad = true;
                break;
            }
            if (b == 0) first_parts = parts;
            batch_total += parts.total;
            tape.backward(ad::scale(total, 1.0 / static_cast<double>(cfg.batch_size)));
        }
        (void)first_parts;
        if (bad || !std::isfinite(batch_total)) {
            report.aborted_nonfinite = true;
            break;
        }
        double mean_loss = batch_total / static_cast<double>(cfg.batch_size);
        if (report.step_loss.empty()) report.first_loss = mean_loss;
        report.step_loss.push_back(mean_loss);
        report.last_loss = mean_loss;

        model.registry().clip_grad_norm(8.0);
        adam_step(model, model.opt.lr_current);
        model.step = step + 1;
        model.epoch = model.step / steps_per_epoch;
        report.steps_done += 1;
        if (opts.on_step) opts.on_step(model.step, mean_loss, model.opt.lr_current);

        if (!val_set.empty() && (model.step % val_every == 0 || model.step == cfg.train_steps)) {
            double vl = validate(model, val_set, val_seed);
            report.val_loss.push_back(vl);
            if (opts.on_val) opts.on_val(model.step, vl);
            if (!model.opt.has_best || vl < model.opt.best_val - 1e-12) {
                model.opt.best_val = vl;
                model.opt.has_best = true;
                model.opt.plateau_bad = 0;
            } else {
                model.opt.plateau_bad += 1;
                if (model.opt.plateau_bad >= cfg.plateau_patience) {
                    model.opt.lr_current = std::max(cfg.min_lr, model.opt.lr_current * cfg.plateau_factor);
                    model.opt.plateau_bad = 0;
                }
            }
            if (!opts.checkpoint_path.empty()) {
                model.save(opts.checkpoint_path);
                saved_any = true;
            }
        }
    }
    if (!opts.checkpoint_path.empty() && !saved_any && !report.aborted_nonfinite) model.save(opts.checkpoint_path);
    return report;
}

}  // namespace mollae
