#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "rng.hpp"

namespace mollae::ad {

using Mat = Eigen::MatrixXd;

// A named learnable tensor. Gradients accumulate across backward passes
// until the optimizer clears them.
struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}
};

class ParamRegistry {
public:
    Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;

    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
    std::size_t tensor_count() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grads();
    double grad_norm() const;
    // Scales all gradients so the global norm is at most max_norm.
    void clip_grad_norm(double max_norm);

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::unordered_map<std::string, Param*> by_name_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid when default-constructed.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Mat& val() const;
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }
};

// Dynamic reverse-mode tape over dense matrices. Creation order is the
// topological order, so backward is a single reverse sweep.
class Tape {
public:
    Var constant(Mat value);
    Var zeros(Eigen::Index rows, Eigen::Index cols) { return constant(Mat::Zero(rows, cols)); }
    // Parameter leaf; repeated leases of the same Param alias one node so
    // gradients accumulate correctly.
    Var leaf(Param& p);

    // Root must be 1x1. Accumulates parameter gradients into Param::grad.
    void backward(Var root);

    const Mat& value(int id) const { return nodes_[id].value; }
    // Gradient captured on the most recent backward pass (zero matrix if the
    // node was not reached).
    Mat grad_of(Var v) const;

    std::size_t size() const { return nodes_.size(); }

    // --- internals used by the op implementations ---
    struct Node {
        Mat value;
        Mat grad;
        bool has_grad = false;
        Param* param = nullptr;
        std::function<void(Tape&)> back;
    };

    int emit(Mat value);
    void set_back(int id, std::function<void(Tape&)> fn) { nodes_[id].back = std::move(fn); }
    void add_grad(int id, const Mat& g);
    const Mat& grad(int id) const { return nodes_[id].grad; }
    bool has_grad(int id) const { return nodes_[id].has_grad; }

private:
    std::vector<Node> nodes_;
    std::unordered_map<const Param*, int> leaf_ids_;
};

// ---- elementwise / arithmetic ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var add_scalar(Var a, double s);
Var scale(Var a, double s);
Var square(Var a);
Var sqrt_off(Var a, double off);  // sqrt(a + off), off >= 0 guards the kink at 0
Var exp(Var a);
Var log(Var a);
Var relu(Var a);
Var silu(Var a);
Var softplus(Var a);

// ---- structure ----
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add_rowvec(Var a, Var v);                  // v: 1xC broadcast over rows
Var mul_colbcast(Var a, Var s);                // s: Rx1 broadcast over columns
Var gather_rows(Var a, std::vector<int> idx);
Var scatter_add_rows(Var a, std::vector<int> idx, Eigen::Index out_rows);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);

// ---- reductions ----
Var sum(Var a);           // 1x1
Var rowwise_sum(Var a);   // Rx1
Var colwise_mean(Var a);  // 1xC

// ---- fused NN ops ----
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var logsumexp_rows(Var a);                     // Rx1; ignores -inf entries
// Softmax over each consecutive block of `block` rows, per column.
Var block_softmax(Var a, Eigen::Index block);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
// Row-selective residual add: out[r] = x[r] + (mask[r] ? d[r] : 0), with
// unmasked rows copied verbatim (bit-identical).
Var add_rows_masked(Var x, Var d, std::vector<uint8_t> mask);
// Subtract the column means (centers a point set; gradient is re-centered too).
Var center_cols(Var a);

// ---- init helpers ----
void init_xavier_uniform(Param& p, Rng& rng);
void init_normal(Param& p, Rng& rng, double stddev);
void init_zero(Param& p);

}  // namespace mollae::ad
