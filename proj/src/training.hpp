#pragma once

#include <functional>

#include "model.hpp"

namespace mollae {

struct LossParts {
    double total = 0, recon_x = 0, recon_v = 0, reg = 0;
};

// Test seam: replaces the decoder network inside forward_loss.
using DecoderSeam = std::function<Decoder::OutputVars(ad::Tape&, ad::Var mu, ad::Var theta_v, ad::Var z_x,
                                                      ad::Var z_h, double t)>;

// Full training objective for one molecule on the supplied tape. The caller
// may run tape.backward(*total_var) afterwards. rng consumption order:
// latent eps_x, eps_h; step index i; coordinate flow; type flow; type sender.
LossParts forward_loss(ad::Tape& tape, Model& model, const Molecule& mol, Rng& rng, ad::Var* total_var = nullptr,
                       const DecoderSeam& seam = {});

// One Adam update from the gradients currently held in the registry.
void adam_step(Model& model, double lr);

struct TrainOptions {
    std::string checkpoint_path;  // written after every validation pass; empty = none
    std::function<void(long long step, double loss, double lr)> on_step;
    std::function<void(long long step, double val_loss)> on_val;
};

struct TrainReport {
    std::vector<double> step_loss;
    std::vector<double> val_loss;
    double first_loss = 0, last_loss = 0;
    bool aborted_nonfinite = false;
    long long steps_done = 0;
};

// Mini-batch optimization with plateau lr decay and deterministic,
// index-derived rng streams (resume-safe). Fits the atom-count prior on the
// training split at the start.
TrainReport train(Model& model, const std::vector<Molecule>& dataset, const TrainOptions& opts = {});

}  // namespace mollae
