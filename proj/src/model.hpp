#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bfn.hpp"
#include "encoder.hpp"
#include "moldata.hpp"

namespace mollae {

// Flat training/model configuration; file format is `key=value` lines with
// keys exactly matching these field names.
struct TrainConfig {
    double recon_weight = 1.0;
    double reg_weight = 0.1;
    double var_x = 100.0;
    double var_h = 1.0;
    int n_z = 10;
    int d_z = 32;
    int d_f = 128;
    int layers = 9;
    int heads = 16;
    int k = 32;
    double adam_beta1 = 0.95;
    double adam_beta2 = 0.99;
    double lr = 0.005;
    double weight_decay = 0.0;
    double plateau_factor = 0.6;
    int plateau_patience = 10;
    double min_lr = 1e-6;
    int batch_size = 400;
    int n_steps = 1000;  // discrete-time schedule steps for the losses
    double sigma1 = 0.001;
    double beta1 = 1.0;
    unsigned long long seed = 0;
    // desk-scale extensions beyond the published table
    int train_steps = 1000;
    double val_fraction = 0.1;
    int val_every = 0;  // 0 = once per epoch-equivalent
    std::string activation = "silu";
    bool attention = true;
    std::string vocab = "qm9";  // qm9 | drugs | comma-separated symbols
    int threads = 1;
    int rbf_bins = 16;
    double rbf_max = 10.0;
    std::string gamma_formula = "gamma(t)=1-sigma1^(2t)";

    void set(const std::string& key, const std::string& value);  // throws on unknown key
    std::string serialize() const;                               // deterministic key order
    static TrainConfig parse_text(const std::string& text);
    static TrainConfig parse_file(const std::string& path);
    void validate() const;
};

AtomVocabulary vocab_from_spec(const std::string& spec);

// Owns the parameter registry, both networks, the schedule, vocabulary,
// atom-count prior, optimizer state, and progress counters.
class Model {
public:
    Model(const TrainConfig& cfg, const AtomVocabulary& vocab);

    static std::unique_ptr<Model> load(const std::string& path);
    void save(const std::string& path, const std::string& dtype = "f64") const;

    ad::ParamRegistry& registry() { return reg_; }
    const ad::ParamRegistry& registry() const { return reg_; }
    Encoder& encoder() { return *encoder_; }
    const Encoder& encoder() const { return *encoder_; }
    Decoder& decoder() { return *decoder_; }
    const Decoder& decoder() const { return *decoder_; }
    NoiseSchedule schedule() const;
    const AtomVocabulary& vocab() const { return vocab_; }
    const TrainConfig& config() const { return cfg_; }
    // Step budget may be extended when resuming a finished run.
    void set_train_steps(int n) { cfg_.train_steps = n; }

    AtomCountPrior prior;  // empty until trained or loaded
    bool has_prior = false;

    struct OptState {
        std::vector<Eigen::MatrixXd> m, v;  // parallel to registry order
        long long t = 0;
        double lr_current = 0.0;
        double best_val = 0.0;
        bool has_best = false;
        int plateau_bad = 0;
    };
    OptState opt;
    long long step = 0;
    long long epoch = 0;

    void init_opt_state();  // zeros m/v to parameter shapes if empty

private:
    TrainConfig cfg_;
    AtomVocabulary vocab_;
    ad::ParamRegistry reg_;
    std::unique_ptr<Encoder> encoder_;
    std::unique_ptr<Decoder> decoder_;
};

// FNV-1a over the file bytes, as "fnv1a64:<16 hex digits>".
std::string file_hash(const std::string& path);

}  // namespace mollae
