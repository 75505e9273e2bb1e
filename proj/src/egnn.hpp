#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace mollae {

// Directed edges grouped by destination: every node has exactly `per_node`
// in-edges (min(k, N-1)), so per-destination softmax blocks are fixed-size.
struct EdgeList {
    std::vector<int> src, dst;
    Eigen::Index per_node = 0;
    Eigen::MatrixXd tag;  // E x 4 one-hot over (dst_role, src_role) pairs
};

// Roles: mask[i] = 1 for update nodes (coordinates move), 0 for condition.
EdgeList knn_graph(const Eigen::MatrixXd& coords, const std::vector<uint8_t>& update_mask, int k);

struct BackboneConfig {
    int layers = 9;
    int heads = 16;
    int k = 32;
    int d_f = 128;
    bool attention = true;           // per-head attention-weighted aggregation; plain sum otherwise
    std::string activation = "silu"; // or "relu"
    bool time_conditioned = false;   // add a time embedding to h at every layer input
    int rbf_bins = 16;
    double rbf_max = 10.0;           // Å
};

struct BackboneOut {
    ad::Var x_update;  // N_u x 3
    ad::Var h_update;  // N_u x D_f
    ad::Var h_cond;    // N_c x D_f
};

// Message-passing core shared by encoder and decoder. Feature update is a
// residual sum of edge messages; coordinate update gates the relative vector
// and applies only to update nodes, keeping condition coordinates bit-exact.
class Backbone {
public:
    Backbone(const BackboneConfig& cfg, ad::ParamRegistry& reg, const std::string& prefix, Rng& init_rng);

    // Condition coordinates must be centered (mean zero within 1e-6).
    BackboneOut forward(ad::Tape& tape, ad::Var x_update, ad::Var h_update, ad::Var x_cond, ad::Var h_cond,
                        double time = -1.0) const;

    const BackboneConfig& config() const { return cfg_; }

private:
    struct Layer {
        ad::Param *ln1_g, *ln1_b;          // pre-message feature norm
        ad::Param *msg_w1, *msg_b1, *msg_w2, *msg_b2;
        ad::Param* att_w;                  // per-head attention logits (attention variant)
        ad::Param *ln2_g, *ln2_b;          // pre-gate feature norm
        ad::Param *gate_w1, *gate_b1, *gate_w2, *gate_b2;
    };

    ad::Var act(ad::Var v) const;
    ad::Var time_embedding(ad::Tape& tape, double time) const;

    BackboneConfig cfg_;
    std::vector<Layer> layers_;
    ad::Param* time_w_ = nullptr;
    ad::Param* time_b_ = nullptr;
};

}  // namespace mollae
