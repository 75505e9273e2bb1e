#include "egnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mollae {

EdgeList knn_graph(const Eigen::MatrixXd& coords, const std::vector<uint8_t>& update_mask, int k) {
    Eigen::Index n = coords.rows();
    if (n < 2) throw std::runtime_error("knn_graph: need at least 2 nodes");
    if (k < 1) throw std::runtime_error("knn_graph: k must be >= 1");
    if (static_cast<Eigen::Index>(update_mask.size()) != n) throw std::runtime_error("knn_graph: mask size mismatch");
    Eigen::Index c = std::min<Eigen::Index>(k, n - 1);
    EdgeList e;
    e.per_node = c;
    e.src.reserve(static_cast<std::size_t>(n * c));
    e.dst.reserve(static_cast<std::size_t>(n * c));
    e.tag = Eigen::MatrixXd::Zero(n * c, 4);
    std::vector<std::pair<double, int>> cand;
    cand.reserve(static_cast<std::size_t>(n - 1));
    Eigen::Index row = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        cand.clear();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            cand.emplace_back((coords.row(i) - coords.row(j)).squaredNorm(), static_cast<int>(j));
        }
        // ties broken by source index for determinism
        std::partial_sort(cand.begin(), cand.begin() + c, cand.end());
        for (Eigen::Index m = 0; m < c; ++m) {
            int j = cand[static_cast<std::size_t>(m)].second;
            e.src.push_back(j);
            e.dst.push_back(static_cast<int>(i));
            int cls = (update_mask[static_cast<std::size_t>(i)] ? 0 : 2) + (update_mask[static_cast<std::size_t>(j)] ? 0 : 1);
            e.tag(row, cls) = 1.0;
            ++row;
        }
    }
    return e;
}

namespace {
ad::Var mlp2(ad::Tape& tape, ad::Var in, ad::Param* w1, ad::Param* b1, ad::Param* w2, ad::Param* b2,
             const std::string& activation) {
    ad::Var h = ad::add_rowvec(ad::matmul(in, tape.leaf(*w1)), tape.leaf(*b1));
    h = activation == "relu" ? ad::relu(h) : ad::silu(h);
    return ad::add_rowvec(ad::matmul(h, tape.leaf(*w2)), tape.leaf(*b2));
}
}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, ad::ParamRegistry& reg, const std::string& prefix, Rng& init_rng)
    : cfg_(cfg) {
    if (cfg.layers < 0) throw std::runtime_error("backbone: negative layer count");
    if (cfg.d_f < 1 || cfg.heads < 1 || cfg.k < 1) throw std::runtime_error("backbone: bad dimensions");
    if (cfg.d_f % cfg.heads != 0) throw std::runtime_error("backbone: head count must divide hidden width");
    if (cfg.activation != "silu" && cfg.activation != "relu")
        throw std::runtime_error("backbone: unknown activation " + cfg.activation);
    int edge_in = 2 * cfg.d_f + cfg.rbf_bins + 4;
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = prefix + ".layer" + std::to_string(l) + ".";
        Layer lay;
        lay.ln1_g = &reg.add(p + "ln1_gain", 1, cfg.d_f);
        lay.ln1_b = &reg.add(p + "ln1_bias", 1, cfg.d_f);
        lay.msg_w1 = &reg.add(p + "msg_w1", edge_in, cfg.d_f);
        lay.msg_b1 = &reg.add(p + "msg_b1", 1, cfg.d_f);
        lay.msg_w2 = &reg.add(p + "msg_w2", cfg.d_f, cfg.d_f);
        lay.msg_b2 = &reg.add(p + "msg_b2", 1, cfg.d_f);
        // no attention bias: the per-block softmax is invariant to one
        lay.att_w = &reg.add(p + "att_w", cfg.d_f, cfg.heads);
        lay.ln2_g = &reg.add(p + "ln2_gain", 1, cfg.d_f);
        lay.ln2_b = &reg.add(p + "ln2_bias", 1, cfg.d_f);
        lay.gate_w1 = &reg.add(p + "gate_w1", edge_in, cfg.d_f);
        lay.gate_b1 = &reg.add(p + "gate_b1", 1, cfg.d_f);
        lay.gate_w2 = &reg.add(p + "gate_w2", cfg.d_f, 1);
        lay.gate_b2 = &reg.add(p + "gate_b2", 1, 1);
        lay.ln1_g->value.setOnes();
        lay.ln2_g->value.setOnes();
        ad::init_xavier_uniform(*lay.msg_w1, init_rng);
        ad::init_xavier_uniform(*lay.msg_w2, init_rng);
        ad::init_xavier_uniform(*lay.att_w, init_rng);
        ad::init_xavier_uniform(*lay.gate_w1, init_rng);
        // small gate output so early coordinate steps stay tame
        ad::init_normal(*lay.gate_w2, init_rng, 0.01);
        layers_.push_back(lay);
    }
    if (cfg.time_conditioned) {
        time_w_ = &reg.add(prefix + ".time_w", cfg.d_f, cfg.d_f);
        time_b_ = &reg.add(prefix + ".time_b", 1, cfg.d_f);
        ad::init_xavier_uniform(*time_w_, init_rng);
    }
}

ad::Var Backbone::act(ad::Var v) const { return cfg_.activation == "relu" ? ad::relu(v) : ad::silu(v); }

ad::Var Backbone::time_embedding(ad::Tape& tape, double time) const {
    int half = cfg_.d_f / 2;
    Eigen::MatrixXd feat(1, cfg_.d_f);
    for (int j = 0; j < half; ++j) {
        double omega = std::pow(10000.0, static_cast<double>(j) / std::max(1, half - 1));
        feat(0, j) = std::sin(omega * time);
        feat(0, half + j) = std::cos(omega * time);
    }
    for (int j = 2 * half; j < cfg_.d_f; ++j) feat(0, j) = time;  // odd width remainder
    ad::Var f = tape.constant(feat);
    return ad::add_rowvec(ad::matmul(f, tape.leaf(*time_w_)), tape.leaf(*time_b_));
}

BackboneOut Backbone::forward(ad::Tape& tape, ad::Var x_update, ad::Var h_update, ad::Var x_cond, ad::Var h_cond,
                              double time) const {
    Eigen::Index n_u = x_update.rows(), n_c = x_cond.rows();
    if (n_u < 1) throw std::runtime_error("backbone: needs at least one update node");
    if (n_c > 0) {
        Eigen::RowVector3d com = x_cond.val().colwise().mean();
        if (com.cwiseAbs().maxCoeff() > 1e-6)
            throw std::runtime_error("backbone: condition coordinates must be centered (|mean| > 1e-6)");
    }
    if (cfg_.time_conditioned && time < 0.0) throw std::runtime_error("backbone: time required");

    ad::Var x = n_c > 0 ? ad::concat_rows({x_update, x_cond}) : x_update;
    ad::Var h = n_c > 0 ? ad::concat_rows({h_update, h_cond}) : h_update;
    Eigen::Index n = n_u + n_c;
    std::vector<uint8_t> mask(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n_u; ++i) mask[static_cast<std::size_t>(i)] = 1;

    ad::Var temb;
    if (cfg_.time_conditioned) temb = time_embedding(tape, time);

    // RBF constants
    Eigen::RowVectorXd centers(cfg_.rbf_bins);
    for (int b = 0; b < cfg_.rbf_bins; ++b)
        centers(b) = cfg_.rbf_max * static_cast<double>(b) / std::max(1, cfg_.rbf_bins - 1);
    double width = cfg_.rbf_max / std::max(1, cfg_.rbf_bins - 1);
    double inv2w2 = -0.5 / (width * width);

    for (int l = 0; l < cfg_.layers; ++l) {
        const Layer& lay = layers_[static_cast<std::size_t>(l)];
        if (cfg_.time_conditioned) h = ad::add_rowvec(h, temb);

        EdgeList edges = knn_graph(x.val(), mask, cfg_.k);
        ad::Var tag = tape.constant(edges.tag);
        Eigen::Index ne = static_cast<Eigen::Index>(edges.src.size());

        ad::Var xi = ad::gather_rows(x, edges.dst);
        ad::Var xj = ad::gather_rows(x, edges.src);
        ad::Var rel = ad::sub(xi, xj);
        ad::Var d2 = ad::rowwise_sum(ad::square(rel));
        ad::Var d = ad::sqrt_off(d2, 1e-12);
        // d -> E x bins Gaussian expansion
        ad::Var dwide = ad::matmul(d, tape.constant(Eigen::MatrixXd::Ones(1, cfg_.rbf_bins)));
        ad::Var dcent = ad::add_rowvec(dwide, tape.constant((-centers).eval()));
        ad::Var rbf = ad::exp(ad::scale(ad::square(dcent), inv2w2));

        ad::Var hn = ad::layer_norm_rows(h, tape.leaf(*lay.ln1_g), tape.leaf(*lay.ln1_b));
        ad::Var hi = ad::gather_rows(hn, edges.dst);
        ad::Var hj = ad::gather_rows(hn, edges.src);
        ad::Var msg_in = ad::concat_cols({hi, hj, rbf, tag});
        ad::Var msg = mlp2(tape, msg_in, lay.msg_w1, lay.msg_b1, lay.msg_w2, lay.msg_b2, cfg_.activation);

        ad::Var agg;
        if (cfg_.attention) {
            ad::Var logits = ad::matmul(msg, tape.leaf(*lay.att_w));
            ad::Var alpha = ad::block_softmax(logits, edges.per_node);  // E x heads
            int dh = cfg_.d_f / cfg_.heads;
            std::vector<ad::Var> parts;
            parts.reserve(static_cast<std::size_t>(cfg_.heads));
            for (int hd = 0; hd < cfg_.heads; ++hd) {
                ad::Var m_h = ad::slice_cols(msg, hd * dh, dh);
                ad::Var a_h = ad::slice_cols(alpha, hd, 1);
                parts.push_back(ad::mul_colbcast(m_h, a_h));
            }
            ad::Var weighted = cfg_.heads == 1 ? parts[0] : ad::concat_cols(parts);
            agg = ad::scatter_add_rows(weighted, edges.dst, n);
        } else {
            agg = ad::scatter_add_rows(msg, edges.dst, n);
        }
        h = ad::add(h, agg);

        ad::Var hn2 = ad::layer_norm_rows(h, tape.leaf(*lay.ln2_g), tape.leaf(*lay.ln2_b));
        ad::Var hi2 = ad::gather_rows(hn2, edges.dst);
        ad::Var hj2 = ad::gather_rows(hn2, edges.src);
        ad::Var gate_in = ad::concat_cols({hi2, hj2, rbf, tag});
        ad::Var gate = mlp2(tape, gate_in, lay.gate_w1, lay.gate_b1, lay.gate_w2, lay.gate_b2, cfg_.activation);
        // relative vector tempered by distance for stability
        ad::Var recip = ad::div(tape.constant(Eigen::MatrixXd::Ones(ne, 1)), ad::add_scalar(d, 1.0));
        ad::Var relnorm = ad::mul_colbcast(rel, recip);
        ad::Var push = ad::mul_colbcast(relnorm, gate);
        ad::Var dx = ad::scatter_add_rows(push, edges.dst, n);
        x = ad::add_rows_masked(x, dx, mask);

        if (!x.val().allFinite() || !h.val().allFinite())
            throw std::runtime_error("backbone: non-finite intermediate at layer " + std::to_string(l));
    }

    BackboneOut out;
    out.x_update = n_c > 0 ? ad::slice_rows(x, 0, n_u) : x;
    out.h_update = n_c > 0 ? ad::slice_rows(h, 0, n_u) : h;
    out.h_cond = n_c > 0 ? ad::slice_rows(h, n_u, n_c) : ad::Var{};
    return out;
}

}  // namespace mollae
