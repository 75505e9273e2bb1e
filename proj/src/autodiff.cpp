#include "autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>

namespace mollae::ad {

// ---------------- ParamRegistry ----------------

Param& ParamRegistry::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (by_name_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    params_.push_back(std::make_unique<Param>(name, rows, cols));
    Param* p = params_.back().get();
    by_name_[name] = p;
    return *p;
}

Param* ParamRegistry::find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

const Param* ParamRegistry::find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
}

std::size_t ParamRegistry::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParamRegistry::zero_grads() {
    for (auto& p : params_) p->grad.setZero();
}

double ParamRegistry::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

void ParamRegistry::clip_grad_norm(double max_norm) {
    double n = grad_norm();
    if (n > max_norm && n > 0.0) {
        double s = max_norm / n;
        for (auto& p : params_) p->grad *= s;
    }
}

// ---------------- Tape ----------------

const Mat& Var::val() const { return tape->value(id); }

int Tape::emit(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Mat value) { return Var{this, emit(std::move(value))}; }

Var Tape::leaf(Param& p) {
    auto it = leaf_ids_.find(&p);
    if (it != leaf_ids_.end()) return Var{this, it->second};
    int id = emit(p.value);
    nodes_[id].param = &p;
    leaf_ids_[&p] = id;
    return Var{this, id};
}

void Tape::add_grad(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var root) {
    if (root.tape != this) throw std::runtime_error("backward: var from another tape");
    const Node& r = nodes_[root.id];
    if (r.value.rows() != 1 || r.value.cols() != 1)
        throw std::runtime_error("backward: root must be scalar");
    add_grad(root.id, Mat::Ones(1, 1));
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.back) n.back(*this);
        if (n.param) n.param->grad += n.grad;
    }
}

Mat Tape::grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

namespace {
Tape& same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw std::runtime_error("vars from different tapes");
    return *a.tape;
}
}  // namespace

// ---------------- elementwise / arithmetic ----------------

Var add(Var a, Var b) {
    Tape& t = same_tape(a, b);
    int id = t.emit(a.val() + b.val());
    t.set_back(id, [id, a, b](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id));
        tp.add_grad(b.id, tp.grad(id));
    });
    return Var{&t, id};
}

Var sub(Var a, Var b) {
    Tape& t = same_tape(a, b);
    int id = t.emit(a.val() - b.val());
    t.set_back(id, [id, a, b](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id));
        tp.add_grad(b.id, -tp.grad(id));
    });
    return Var{&t, id};
}

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    int id = t.emit(a.val().cwiseProduct(b.val()));
    t.set_back(id, [id, a, b](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id).cwiseProduct(b.val()));
        tp.add_grad(b.id, tp.grad(id).cwiseProduct(a.val()));
    });
    return Var{&t, id};
}

Var div(Var a, Var b) {
    Tape& t = same_tape(a, b);
    int id = t.emit(a.val().cwiseQuotient(b.val()));
    t.set_back(id, [id, a, b](Tape& tp) {
        const Mat& g = tp.grad(id);
        tp.add_grad(a.id, g.cwiseQuotient(b.val()));
        tp.add_grad(b.id, -g.cwiseProduct(tp.value(id)).cwiseQuotient(b.val()));
    });
    return Var{&t, id};
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_scalar(Var a, double s) {
    Tape& t = *a.tape;
    int id = t.emit((a.val().array() + s).matrix());
    t.set_back(id, [id, a](Tape& tp) { tp.add_grad(a.id, tp.grad(id)); });
    return Var{&t, id};
}

Var scale(Var a, double s) {
    Tape& t = *a.tape;
    int id = t.emit(a.val() * s);
    t.set_back(id, [id, a, s](Tape& tp) { tp.add_grad(a.id, tp.grad(id) * s); });
    return Var{&t, id};
}

Var square(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().array().square().matrix());
    t.set_back(id, [id, a](Tape& tp) {
        tp.add_grad(a.id, (2.0 * tp.grad(id).array() * a.val().array()).matrix());
    });
    return Var{&t, id};
}

Var sqrt_off(Var a, double off) {
    Tape& t = *a.tape;
    int id = t.emit((a.val().array() + off).sqrt().matrix());
    t.set_back(id, [id, a](Tape& tp) {
        tp.add_grad(a.id, (tp.grad(id).array() * 0.5 / tp.value(id).array()).matrix());
    });
    return Var{&t, id};
}

Var exp(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().array().exp().matrix());
    t.set_back(id, [id, a](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id).cwiseProduct(tp.value(id)));
    });
    return Var{&t, id};
}

Var log(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().array().log().matrix());
    t.set_back(id, [id, a](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id).cwiseQuotient(a.val()));
    });
    return Var{&t, id};
}

Var relu(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().cwiseMax(0.0));
    t.set_back(id, [id, a](Tape& tp) {
        Mat m = (a.val().array() > 0.0).cast<double>().matrix();
        tp.add_grad(a.id, tp.grad(id).cwiseProduct(m));
    });
    return Var{&t, id};
}

Var silu(Var a) {
    Tape& t = *a.tape;
    Mat sig = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
    int id = t.emit(a.val().cwiseProduct(sig));
    t.set_back(id, [id, a, sig](Tape& tp) {
        // d/dx x*s(x) = s(x) (1 + x (1 - s(x)))
        Mat d = (sig.array() * (1.0 + a.val().array() * (1.0 - sig.array()))).matrix();
        tp.add_grad(a.id, tp.grad(id).cwiseProduct(d));
    });
    return Var{&t, id};
}

Var softplus(Var a) {
    Tape& t = *a.tape;
    // log(1+e^x) computed stably: max(x,0) + log1p(exp(-|x|))
    Mat v = a.val().unaryExpr([](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    int id = t.emit(std::move(v));
    t.set_back(id, [id, a](Tape& tp) {
        Mat s = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
        tp.add_grad(a.id, tp.grad(id).cwiseProduct(s));
    });
    return Var{&t, id};
}

// ---------------- structure ----------------

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    int id = t.emit(a.val() * b.val());
    t.set_back(id, [id, a, b](Tape& tp) {
        const Mat& g = tp.grad(id);
        tp.add_grad(a.id, g * b.val().transpose());
        tp.add_grad(b.id, a.val().transpose() * g);
    });
    return Var{&t, id};
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().transpose());
    t.set_back(id, [id, a](Tape& tp) { tp.add_grad(a.id, tp.grad(id).transpose()); });
    return Var{&t, id};
}

Var add_rowvec(Var a, Var v) {
    Tape& t = same_tape(a, v);
    if (v.val().rows() != 1 || v.val().cols() != a.val().cols())
        throw std::runtime_error("add_rowvec: shape mismatch");
    Mat out = a.val();
    out.rowwise() += v.val().row(0);
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a, v](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id));
        tp.add_grad(v.id, tp.grad(id).colwise().sum());
    });
    return Var{&t, id};
}

Var mul_colbcast(Var a, Var s) {
    Tape& t = same_tape(a, s);
    if (s.val().cols() != 1 || s.val().rows() != a.val().rows())
        throw std::runtime_error("mul_colbcast: shape mismatch");
    Mat out = (a.val().array().colwise() * s.val().col(0).array()).matrix();
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a, s](Tape& tp) {
        const Mat& g = tp.grad(id);
        tp.add_grad(a.id, (g.array().colwise() * s.val().col(0).array()).matrix());
        tp.add_grad(s.id, g.cwiseProduct(a.val()).rowwise().sum());
    });
    return Var{&t, id};
}

Var gather_rows(Var a, std::vector<int> idx) {
    Tape& t = *a.tape;
    Mat out(static_cast<Eigen::Index>(idx.size()), a.val().cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.val().row(idx[i]);
    int id = t.emit(std::move(out));
    Eigen::Index src_rows = a.val().rows();
    t.set_back(id, [id, a, idx = std::move(idx), src_rows](Tape& tp) {
        const Mat& g = tp.grad(id);
        Mat ga = Mat::Zero(src_rows, g.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var scatter_add_rows(Var a, std::vector<int> idx, Eigen::Index out_rows) {
    Tape& t = *a.tape;
    if (static_cast<Eigen::Index>(idx.size()) != a.val().rows())
        throw std::runtime_error("scatter_add_rows: idx size mismatch");
    Mat out = Mat::Zero(out_rows, a.val().cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(idx[i]) += a.val().row(static_cast<Eigen::Index>(i));
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a, idx = std::move(idx)](Tape& tp) {
        const Mat& g = tp.grad(id);
        Mat ga(static_cast<Eigen::Index>(idx.size()), g.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_cols: empty");
    Tape& t = *parts[0].tape;
    Eigen::Index rows = parts[0].val().rows(), cols = 0;
    for (const Var& p : parts) {
        if (p.tape != &t || p.val().rows() != rows) throw std::runtime_error("concat_cols: mismatch");
        cols += p.val().cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.val().cols()) = p.val();
        c += p.val().cols();
    }
    int id = t.emit(std::move(out));
    std::vector<Var> ps = parts;
    t.set_back(id, [id, ps = std::move(ps)](Tape& tp) {
        const Mat& g = tp.grad(id);
        Eigen::Index c = 0;
        for (const Var& p : ps) {
            Eigen::Index w = p.val().cols();
            tp.add_grad(p.id, g.middleCols(c, w));
            c += w;
        }
    });
    return Var{&t, id};
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::runtime_error("concat_rows: empty");
    Tape& t = *parts[0].tape;
    Eigen::Index cols = parts[0].val().cols(), rows = 0;
    for (const Var& p : parts) {
        if (p.tape != &t || p.val().cols() != cols) throw std::runtime_error("concat_rows: mismatch");
        rows += p.val().rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.val().rows()) = p.val();
        r += p.val().rows();
    }
    int id = t.emit(std::move(out));
    std::vector<Var> ps = parts;
    t.set_back(id, [id, ps = std::move(ps)](Tape& tp) {
        const Mat& g = tp.grad(id);
        Eigen::Index r = 0;
        for (const Var& p : ps) {
            Eigen::Index h = p.val().rows();
            tp.add_grad(p.id, g.middleRows(r, h));
            r += h;
        }
    });
    return Var{&t, id};
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().middleCols(start, n));
    Eigen::Index total = a.val().cols();
    t.set_back(id, [id, a, start, n, total](Tape& tp) {
        Mat ga = Mat::Zero(a.val().rows(), total);
        ga.middleCols(start, n) = tp.grad(id);
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().middleRows(start, n));
    Eigen::Index total = a.val().rows();
    t.set_back(id, [id, a, start, n, total](Tape& tp) {
        Mat ga = Mat::Zero(total, a.val().cols());
        ga.middleRows(start, n) = tp.grad(id);
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

// ---------------- reductions ----------------

Var sum(Var a) {
    Tape& t = *a.tape;
    Mat out(1, 1);
    out(0, 0) = a.val().sum();
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a](Tape& tp) {
        double g = tp.grad(id)(0, 0);
        tp.add_grad(a.id, Mat::Constant(a.val().rows(), a.val().cols(), g));
    });
    return Var{&t, id};
}

Var rowwise_sum(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().rowwise().sum());
    Eigen::Index cols = a.val().cols();
    t.set_back(id, [id, a, cols](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id).col(0).replicate(1, cols));
    });
    return Var{&t, id};
}

Var colwise_mean(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(a.val().colwise().mean());
    Eigen::Index rows = a.val().rows();
    t.set_back(id, [id, a, rows](Tape& tp) {
        tp.add_grad(a.id, tp.grad(id).row(0).replicate(rows, 1) / static_cast<double>(rows));
    });
    return Var{&t, id};
}

// ---------------- fused NN ops ----------------

namespace {
Mat softmax_rows_value(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double m = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x.row(r).array() - m).exp().matrix();
        out.row(r) = e / e.sum();
    }
    return out;
}
}  // namespace

Var softmax_rows(Var a) {
    Tape& t = *a.tape;
    int id = t.emit(softmax_rows_value(a.val()));
    t.set_back(id, [id, a](Tape& tp) {
        const Mat& s = tp.value(id);
        const Mat& g = tp.grad(id);
        Mat ga(s.rows(), s.cols());
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            double dot = s.row(r).dot(g.row(r));
            ga.row(r) = (s.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var log_softmax_rows(Var a) {
    Tape& t = *a.tape;
    const Mat& x = a.val();
    Mat out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double m = x.row(r).maxCoeff();
        double lse = m + std::log((x.row(r).array() - m).exp().sum());
        out.row(r) = (x.row(r).array() - lse).matrix();
    }
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a](Tape& tp) {
        const Mat& ls = tp.value(id);
        const Mat& g = tp.grad(id);
        Mat ga(ls.rows(), ls.cols());
        for (Eigen::Index r = 0; r < ls.rows(); ++r) {
            double gs = g.row(r).sum();
            ga.row(r) = g.row(r) - (ls.row(r).array().exp() * gs).matrix();
        }
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var logsumexp_rows(Var a) {
    Tape& t = *a.tape;
    const Mat& x = a.val();
    Mat out(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double m = x.row(r).maxCoeff();
        out(r, 0) = m + std::log((x.row(r).array() - m).exp().sum());
    }
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a](Tape& tp) {
        const Mat& lse = tp.value(id);
        const Mat& g = tp.grad(id);
        Mat ga(a.val().rows(), a.val().cols());
        for (Eigen::Index r = 0; r < ga.rows(); ++r)
            ga.row(r) = ((a.val().row(r).array() - lse(r, 0)).exp() * g(r, 0)).matrix();
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var block_softmax(Var a, Eigen::Index block) {
    Tape& t = *a.tape;
    const Mat& x = a.val();
    if (block <= 0 || x.rows() % block != 0) throw std::runtime_error("block_softmax: rows not divisible");
    Mat out(x.rows(), x.cols());
    for (Eigen::Index b = 0; b < x.rows(); b += block) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            double m = x.block(b, c, block, 1).maxCoeff();
            Eigen::ArrayXd e = (x.block(b, c, block, 1).array() - m).exp();
            out.block(b, c, block, 1) = (e / e.sum()).matrix();
        }
    }
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a, block](Tape& tp) {
        const Mat& s = tp.value(id);
        const Mat& g = tp.grad(id);
        Mat ga(s.rows(), s.cols());
        for (Eigen::Index b = 0; b < s.rows(); b += block) {
            for (Eigen::Index c = 0; c < s.cols(); ++c) {
                auto sb = s.block(b, c, block, 1);
                auto gb = g.block(b, c, block, 1);
                double dot = (sb.array() * gb.array()).sum();
                ga.block(b, c, block, 1) = (sb.array() * (gb.array() - dot)).matrix();
            }
        }
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
    Tape& t = *a.tape;
    if (gain.tape != &t || bias.tape != &t) throw std::runtime_error("layer_norm_rows: tape mismatch");
    const Mat& x = a.val();
    Eigen::Index R = x.rows(), C = x.cols();
    if (gain.val().rows() != 1 || gain.val().cols() != C || bias.val().rows() != 1 || bias.val().cols() != C)
        throw std::runtime_error("layer_norm_rows: gain/bias must be 1xC");
    Eigen::VectorXd inv_std(R);
    Mat xhat(R, C);
    for (Eigen::Index r = 0; r < R; ++r) {
        double m = x.row(r).mean();
        double var = (x.row(r).array() - m).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = ((x.row(r).array() - m) * is).matrix();
    }
    Mat out = ((xhat.array().rowwise() * gain.val().row(0).array()).rowwise() + bias.val().row(0).array()).matrix();
    int id = t.emit(std::move(out));
    t.set_back(id, [id, a, gain, bias, xhat, inv_std](Tape& tp) {
        const Mat& g = tp.grad(id);
        Eigen::Index R = g.rows(), C = g.cols();
        tp.add_grad(bias.id, g.colwise().sum());
        tp.add_grad(gain.id, g.cwiseProduct(xhat).colwise().sum());
        Mat ga(R, C);
        Eigen::RowVectorXd w = gain.val().row(0);
        for (Eigen::Index r = 0; r < R; ++r) {
            Eigen::RowVectorXd gh = g.row(r).cwiseProduct(w);  // dL/dxhat
            double mu_g = gh.mean();
            double mu_gx = gh.cwiseProduct(xhat.row(r)).mean();
            ga.row(r) = (inv_std(r) * (gh.array() - mu_g - xhat.row(r).array() * mu_gx)).matrix();
        }
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

Var add_rows_masked(Var x, Var d, std::vector<uint8_t> mask) {
    Tape& t = same_tape(x, d);
    if (static_cast<Eigen::Index>(mask.size()) != x.val().rows() || d.val().rows() != x.val().rows() ||
        d.val().cols() != x.val().cols())
        throw std::runtime_error("add_rows_masked: shape mismatch");
    Mat out = x.val();  // rows with mask==0 stay bit-identical to x
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        if (mask[static_cast<std::size_t>(r)]) out.row(r) += d.val().row(r);
    int id = t.emit(std::move(out));
    t.set_back(id, [id, x, d, mask = std::move(mask)](Tape& tp) {
        const Mat& g = tp.grad(id);
        tp.add_grad(x.id, g);
        Mat gd = Mat::Zero(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r)
            if (mask[static_cast<std::size_t>(r)]) gd.row(r) = g.row(r);
        tp.add_grad(d.id, gd);
    });
    return Var{&t, id};
}

Var center_cols(Var a) {
    Tape& t = *a.tape;
    Mat out = a.val();
    Eigen::RowVectorXd m = out.colwise().mean();
    out.rowwise() -= m;
    int id = t.emit(std::move(out));
    Eigen::Index rows = a.val().rows();
    t.set_back(id, [id, a, rows](Tape& tp) {
        const Mat& g = tp.grad(id);
        Mat ga = g;
        Eigen::RowVectorXd cm = g.colwise().sum() / static_cast<double>(rows);
        ga.rowwise() -= cm;
        tp.add_grad(a.id, ga);
    });
    return Var{&t, id};
}

// ---------------- init ----------------

void init_xavier_uniform(Param& p, Rng& rng) {
    double lim = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
        for (Eigen::Index j = 0; j < p.value.cols(); ++j)
            p.value(i, j) = (rng.uniform() * 2.0 - 1.0) * lim;
}

void init_normal(Param& p, Rng& rng, double stddev) {
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
        for (Eigen::Index j = 0; j < p.value.cols(); ++j)
            p.value(i, j) = rng.normal() * stddev;
}

void init_zero(Param& p) { p.value.setZero(); }

}  // namespace mollae::ad
