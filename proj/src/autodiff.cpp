#include "emt/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace emt {

// ---------------------------------------------------------------------------
// ParameterStore

int ParameterStore::add(const std::string& group, const std::string& name, Mat value, bool buffer) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    if (std::find(group_order_.begin(), group_order_.end(), group) == group_order_.end()) {
        group_order_.push_back(group);
        if (!trainable_.count(group)) trainable_[group] = false;
    }
    Parameter p;
    p.name = name;
    p.group = group;
    p.grad = Mat::Zero(value.rows(), value.cols());
    p.value = std::move(value);
    p.buffer = buffer;
    params_.push_back(std::move(p));
    index_[name] = static_cast<int>(params_.size()) - 1;
    return index_[name];
}

int ParameterStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

bool ParameterStore::group_trainable(const std::string& group) const {
    auto it = trainable_.find(group);
    return it != trainable_.end() && it->second;
}

bool ParameterStore::param_trainable(int idx) const {
    const Parameter& p = params_[idx];
    return !p.buffer && group_trainable(p.group);
}

std::vector<std::string> ParameterStore::groups() const { return group_order_; }

std::uint64_t ParameterStore::group_checksum(const std::string& group) const {
    std::uint64_t h = kFnvOffset;
    for (const Parameter& p : params_) {
        if (p.group != group) continue;
        h = fnv1a(p.name, h);
        h = fnv1a(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()), h);
    }
    return h;
}

std::size_t ParameterStore::group_param_count(const std::string& group) const {
    std::size_t n = 0;
    for (const Parameter& p : params_) {
        if (p.group == group && !p.buffer) n += static_cast<std::size_t>(p.value.size());
    }
    return n;
}

void ParameterStore::zero_grads() {
    for (Parameter& p : params_) p.grad.setZero();
}

// ---------------------------------------------------------------------------
// Tape basics

Eigen::Index Var::rows() const { return tape->value(*this).rows(); }
Eigen::Index Var::cols() const { return tape->value(*this).cols(); }
const Mat& Var::value() const { return tape->value(*this); }

int Tape::push(Mat value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_ref(int i) {
    Node& n = nodes_[i];
    if (!n.grad_set) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad_set = true;
    }
    return n.grad;
}

Mat& Tape::grad(Var v) { return grad_ref(v.idx); }

Var Tape::leaf(Mat value, bool requires_grad) {
    return Var{this, push(std::move(value), requires_grad)};
}

Var Tape::param(ParameterStore& store, int param_index) {
    if (store_ != nullptr && store_ != &store)
        throw ConfigError("tape bound to a different parameter store");
    store_ = &store;
    auto it = param_nodes_.find(param_index);
    if (it != param_nodes_.end()) return Var{this, it->second};
    const Parameter& p = store.at(param_index);
    const int idx = push(p.value, store.param_trainable(param_index));
    param_nodes_[param_index] = idx;
    param_bindings_.emplace_back(param_index, idx);
    return Var{this, idx};
}

void Tape::backward(Var out) {
    if (out.value().size() != 1) throw NumericError("backward requires a scalar output");
    grad_ref(out.idx)(0, 0) = 1.0;
    for (int i = out.idx; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_set && n.requires_grad && n.backward) n.backward();
    }
    std::sort(param_bindings_.begin(), param_bindings_.end());
    for (const auto& [pidx, nidx] : param_bindings_) {
        Node& n = nodes_[nidx];
        if (n.grad_set && n.requires_grad) store_->at(pidx).grad += n.grad;
    }
}

// ---------------------------------------------------------------------------
// Ops

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw NumericError(std::string(op) + ": shape mismatch");
}
}  // namespace

Var Tape::add(Var a, Var b) {
    check_same_shape(value(a), value(b), "add");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a) + value(b), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(b)) grad_ref(b.idx) += g;
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(value(a), value(b), "sub");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a) - value(b), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(b)) grad_ref(b.idx) -= g;
        };
    }
    return out;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(value(a), value(b), "mul");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a).cwiseProduct(value(b)), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g.cwiseProduct(value(b));
            if (requires_grad(b)) grad_ref(b.idx) += g.cwiseProduct(value(a));
        };
    }
    return out;
}

Var Tape::div(Var a, Var b) {
    check_same_shape(value(a), value(b), "div");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a).cwiseQuotient(value(b)), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g.cwiseQuotient(value(b));
            if (requires_grad(b))
                grad_ref(b.idx) -= g.cwiseProduct(nodes_[out.idx].value).cwiseQuotient(value(b));
        };
    }
    return out;
}

Var Tape::min_(Var a, Var b) {
    check_same_shape(value(a), value(b), "min");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a).cwiseMin(value(b)), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            const Mat pick_a = (value(a).array() <= value(b).array()).cast<double>();
            if (requires_grad(a)) grad_ref(a.idx) += g.cwiseProduct(pick_a);
            if (requires_grad(b)) grad_ref(b.idx) += g.cwiseProduct(Mat(1.0 - pick_a.array()));
        };
    }
    return out;
}

Var Tape::max_(Var a, Var b) {
    check_same_shape(value(a), value(b), "max");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a).cwiseMax(value(b)), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            const Mat pick_a = (value(a).array() >= value(b).array()).cast<double>();
            if (requires_grad(a)) grad_ref(a.idx) += g.cwiseProduct(pick_a);
            if (requires_grad(b)) grad_ref(b.idx) += g.cwiseProduct(Mat(1.0 - pick_a.array()));
        };
    }
    return out;
}

Var Tape::scale(Var a, double k) {
    const bool rg = requires_grad(a);
    Var out{this, push(value(a) * k, rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out, k] { grad_ref(a.idx) += nodes_[out.idx].grad * k; };
    }
    return out;
}

Var Tape::add_const(Var a, double c) {
    const bool rg = requires_grad(a);
    Var out{this, push(Mat(value(a).array() + c), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] { grad_ref(a.idx) += nodes_[out.idx].grad; };
    }
    return out;
}

Var Tape::add_rowvec(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
        throw NumericError("add_rowvec: row must be (1, cols)");
    const bool rg = requires_grad(a) || requires_grad(row);
    Mat v = value(a);
    v.rowwise() += value(row).row(0);
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, row, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g;
            if (requires_grad(row)) grad_ref(row.idx) += g.colwise().sum();
        };
    }
    return out;
}

Var Tape::matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw NumericError("matmul: inner dimension mismatch");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a) * value(b), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g * value(b).transpose();
            if (requires_grad(b)) grad_ref(b.idx) += value(a).transpose() * g;
        };
    }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    if (value(a).cols() != value(b).cols()) throw NumericError("matmul_nt: inner dimension mismatch");
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out{this, push(value(a) * value(b).transpose(), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, b, out] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(a)) grad_ref(a.idx) += g * value(b);
            if (requires_grad(b)) grad_ref(b.idx) += g.transpose() * value(a);
        };
    }
    return out;
}

Var Tape::slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
    if (r0 < 0 || r0 + n > value(a).rows()) throw NumericError("slice_rows: out of range");
    const bool rg = requires_grad(a);
    Var out{this, push(value(a).middleRows(r0, n), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out, r0, n] {
            grad_ref(a.idx).middleRows(r0, n) += nodes_[out.idx].grad;
        };
    }
    return out;
}

Var Tape::slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
    if (c0 < 0 || c0 + n > value(a).cols()) throw NumericError("slice_cols: out of range");
    const bool rg = requires_grad(a);
    Var out{this, push(value(a).middleCols(c0, n), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out, c0, n] {
            grad_ref(a.idx).middleCols(c0, n) += nodes_[out.idx].grad;
        };
    }
    return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0;
    bool rg = false;
    for (Var p : parts) {
        rows += value(p).rows();
        rg = rg || requires_grad(p);
    }
    Mat v(rows, value(parts.front()).cols());
    Eigen::Index r = 0;
    for (Var p : parts) {
        v.middleRows(r, value(p).rows()) = value(p);
        r += value(p).rows();
    }
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_[out.idx].backward = [this, ps, out] {
            const Mat& g = nodes_[out.idx].grad;
            Eigen::Index r = 0;
            for (Var p : ps) {
                if (requires_grad(p)) grad_ref(p.idx) += g.middleRows(r, value(p).rows());
                r += value(p).rows();
            }
        };
    }
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var p : parts) {
        cols += value(p).cols();
        rg = rg || requires_grad(p);
    }
    Mat v(value(parts.front()).rows(), cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        v.middleCols(c, value(p).cols()) = value(p);
        c += value(p).cols();
    }
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        std::vector<Var> ps = parts;
        nodes_[out.idx].backward = [this, ps, out] {
            const Mat& g = nodes_[out.idx].grad;
            Eigen::Index c = 0;
            for (Var p : ps) {
                if (requires_grad(p)) grad_ref(p.idx) += g.middleCols(c, value(p).cols());
                c += value(p).cols();
            }
        };
    }
    return out;
}

Var Tape::mean_over_rows(Var a) {
    const bool rg = requires_grad(a);
    const double inv = 1.0 / static_cast<double>(value(a).rows());
    Var out{this, push(Mat(value(a).colwise().sum() * inv), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out, inv] {
            const Mat& g = nodes_[out.idx].grad;
            grad_ref(a.idx).rowwise() += Eigen::RowVectorXd(g.row(0) * inv);
        };
    }
    return out;
}

Var Tape::mean_all(Var a) {
    const bool rg = requires_grad(a);
    const double inv = 1.0 / static_cast<double>(value(a).size());
    Mat v(1, 1);
    v(0, 0) = value(a).sum() * inv;
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out, inv] {
            grad_ref(a.idx).array() += nodes_[out.idx].grad(0, 0) * inv;
        };
    }
    return out;
}

Var Tape::sum_all(Var a) {
    const bool rg = requires_grad(a);
    Mat v(1, 1);
    v(0, 0) = value(a).sum();
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            grad_ref(a.idx).array() += nodes_[out.idx].grad(0, 0);
        };
    }
    return out;
}

Var Tape::relu(Var a) {
    const bool rg = requires_grad(a);
    Var out{this, push(value(a).cwiseMax(0.0), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            const Mat mask = (value(a).array() > 0.0).cast<double>();
            grad_ref(a.idx) += nodes_[out.idx].grad.cwiseProduct(mask);
        };
    }
    return out;
}

Var Tape::gelu(Var a) {
    const bool rg = requires_grad(a);
    const Mat& x = value(a);
    Mat v = x.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2)); });
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            const Mat d = value(a).unaryExpr([](double t) {
                const double cdf = 0.5 * (1.0 + std::erf(t * M_SQRT1_2));
                const double pdf = std::exp(-0.5 * t * t) * 0.3989422804014327;
                return cdf + t * pdf;
            });
            grad_ref(a.idx) += nodes_[out.idx].grad.cwiseProduct(d);
        };
    }
    return out;
}

Var Tape::sigmoid(Var a) {
    const bool rg = requires_grad(a);
    Mat v = value(a).unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            const Mat& s = nodes_[out.idx].value;
            const Mat d = s.array() * (1.0 - s.array());
            grad_ref(a.idx) += nodes_[out.idx].grad.cwiseProduct(d);
        };
    }
    return out;
}

Var Tape::clamp_interior(Var a, double eps) {
    const bool rg = requires_grad(a);
    Mat v = value(a).cwiseMax(eps).cwiseMin(1.0 - eps);
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] { grad_ref(a.idx) += nodes_[out.idx].grad; };
    }
    return out;
}

Var Tape::abs_(Var a) {
    const bool rg = requires_grad(a);
    Var out{this, push(value(a).cwiseAbs(), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            const Mat s = value(a).unaryExpr([](double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); });
            grad_ref(a.idx) += nodes_[out.idx].grad.cwiseProduct(s);
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    const bool rg = requires_grad(a);
    Mat v = value(a);
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double m = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - m).exp();
        v.row(r) /= v.row(r).sum();
    }
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, a, out] {
            const Mat& y = nodes_[out.idx].value;
            const Mat& g = nodes_[out.idx].grad;
            Mat& da = grad_ref(a.idx);
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                const double dot = y.row(r).dot(g.row(r));
                da.row(r) += (y.row(r).array() * (g.row(r).array() - dot)).matrix();
            }
        };
    }
    return out;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Mat& xv = value(x);
    const Eigen::Index C = xv.cols();
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);

    Mat xhat(xv.rows(), C);
    Eigen::VectorXd inv_std(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std(r) = is;
        xhat.row(r) = ((xv.row(r).array() - mu) * is).matrix();
    }
    Mat v = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
            value(beta).row(0).array();
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        // xhat and inv_std get captured by value for the backward pass.
        nodes_[out.idx].backward = [this, x, gamma, beta, out, xhat, inv_std] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(gamma)) grad_ref(gamma.idx) += g.cwiseProduct(xhat).colwise().sum();
            if (requires_grad(beta)) grad_ref(beta.idx) += g.colwise().sum();
            if (requires_grad(x)) {
                const Eigen::RowVectorXd gam = value(gamma).row(0);
                Mat& dx = grad_ref(x.idx);
                const double C = static_cast<double>(g.cols());
                for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gam);
                    const double m1 = dxhat.sum() / C;
                    const double m2 = dxhat.dot(xhat.row(r)) / C;
                    dx.row(r) +=
                        (inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2)).matrix();
                }
            }
        };
    }
    return out;
}

Var Tape::batch_norm_cols(Var x, Var gamma, Var beta, Mat& running_mean, Mat& running_var,
                          bool training, double momentum, double eps) {
    const Mat& xv = value(x);
    const Eigen::Index N = xv.rows();
    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);

    Eigen::RowVectorXd mean, var;
    if (training) {
        mean = xv.colwise().mean();
        var = (xv.rowwise() - mean).array().square().colwise().mean();
        running_mean.row(0) = (1.0 - momentum) * running_mean.row(0) + momentum * mean;
        running_var.row(0) = (1.0 - momentum) * running_var.row(0) + momentum * var;
    } else {
        mean = running_mean.row(0);
        var = running_var.row(0);
    }
    const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Mat xhat = (xv.rowwise() - mean).array().rowwise() * inv_std.array();
    Mat v = (xhat.array().rowwise() * value(gamma).row(0).array()).rowwise() +
            value(beta).row(0).array();
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, x, gamma, beta, out, xhat, inv_std, training, N] {
            const Mat& g = nodes_[out.idx].grad;
            if (requires_grad(gamma)) grad_ref(gamma.idx) += g.cwiseProduct(xhat).colwise().sum();
            if (requires_grad(beta)) grad_ref(beta.idx) += g.colwise().sum();
            if (requires_grad(x)) {
                Mat dxhat = g.array().rowwise() * value(gamma).row(0).array();
                Mat& dx = grad_ref(x.idx);
                if (training) {
                    const double n = static_cast<double>(N);
                    const Eigen::RowVectorXd m1 = dxhat.colwise().sum() / n;
                    const Eigen::RowVectorXd m2 =
                        dxhat.cwiseProduct(xhat).colwise().sum() / n;
                    dx += (((dxhat.rowwise() - m1).array() - xhat.array().rowwise() * m2.array())
                               .rowwise() *
                           inv_std.array())
                              .matrix();
                } else {
                    dx += (dxhat.array().rowwise() * inv_std.array()).matrix();
                }
            }
        };
    }
    return out;
}

Var Tape::im2col3x3(Var x, Eigen::Index S) {
    const Mat& xv = value(x);
    const Eigen::Index D = xv.cols();
    if (xv.rows() != S * S) throw NumericError("im2col3x3: rows must equal S*S");
    const bool rg = requires_grad(x);
    Mat v = Mat::Zero(S * S, 9 * D);
    for (Eigen::Index r = 0; r < S; ++r) {
        for (Eigen::Index c = 0; c < S; ++c) {
            Eigen::Index k = 0;
            for (Eigen::Index dr = -1; dr <= 1; ++dr) {
                for (Eigen::Index dc = -1; dc <= 1; ++dc, ++k) {
                    const Eigen::Index rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= S || cc < 0 || cc >= S) continue;
                    v.block(r * S + c, k * D, 1, D) = xv.row(rr * S + cc);
                }
            }
        }
    }
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, x, out, S, D] {
            const Mat& g = nodes_[out.idx].grad;
            Mat& dx = grad_ref(x.idx);
            for (Eigen::Index r = 0; r < S; ++r) {
                for (Eigen::Index c = 0; c < S; ++c) {
                    Eigen::Index k = 0;
                    for (Eigen::Index dr = -1; dr <= 1; ++dr) {
                        for (Eigen::Index dc = -1; dc <= 1; ++dc, ++k) {
                            const Eigen::Index rr = r + dr, cc = c + dc;
                            if (rr < 0 || rr >= S || cc < 0 || cc >= S) continue;
                            dx.row(rr * S + cc) += g.block(r * S + c, k * D, 1, D);
                        }
                    }
                }
            }
        };
    }
    return out;
}

Var Tape::weighted_sum(const std::vector<Var>& features, Var scores) {
    const Eigen::Index K = value(scores).cols();
    if (value(scores).rows() != 1 || static_cast<Eigen::Index>(features.size()) != K)
        throw NumericError("weighted_sum: feature count must match score count");
    bool rg = requires_grad(scores);
    for (Var f : features) rg = rg || requires_grad(f);
    Mat v = Mat::Zero(value(features[0]).rows(), value(features[0]).cols());
    for (Eigen::Index k = 0; k < K; ++k) v += value(scores)(0, k) * value(features[k]);
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        std::vector<Var> fs = features;
        nodes_[out.idx].backward = [this, fs, scores, out] {
            const Mat& g = nodes_[out.idx].grad;
            for (std::size_t k = 0; k < fs.size(); ++k) {
                if (requires_grad(fs[k]))
                    grad_ref(fs[k].idx) += value(scores)(0, static_cast<Eigen::Index>(k)) * g;
                if (requires_grad(scores))
                    grad_ref(scores.idx)(0, static_cast<Eigen::Index>(k)) +=
                        g.cwiseProduct(value(fs[k])).sum();
            }
        };
    }
    return out;
}

Var Tape::cosine_rows(Var x, Var z, double eps) {
    const Mat& xv = value(x);
    const Mat& zv = value(z);
    if (zv.rows() != 1 || zv.cols() != xv.cols()) throw NumericError("cosine_rows: z must be (1, D)");
    const bool rg = requires_grad(x) || requires_grad(z);

    const double zn = std::max(zv.row(0).norm(), eps);
    Mat v(xv.rows(), 1);
    Eigen::VectorXd xn(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        xn(r) = std::max(xv.row(r).norm(), eps);
        v(r, 0) = xv.row(r).dot(zv.row(0)) / (xn(r) * zn);
    }
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, x, z, out, xn, zn, eps] {
            const Mat& g = nodes_[out.idx].grad;
            const Mat& s = nodes_[out.idx].value;
            const Mat& xv = value(x);
            const Eigen::RowVectorXd zrow = value(z).row(0);
            for (Eigen::Index r = 0; r < xv.rows(); ++r) {
                const double gr = g(r, 0);
                if (gr == 0.0) continue;
                if (requires_grad(x) && xv.row(r).norm() > eps) {
                    grad_ref(x.idx).row(r) +=
                        gr * (zrow / (xn(r) * zn) - s(r, 0) * xv.row(r) / (xn(r) * xn(r)));
                }
                if (requires_grad(z) && zrow.norm() > eps) {
                    grad_ref(z.idx).row(0) +=
                        gr * (xv.row(r) / (xn(r) * zn) - s(r, 0) * zrow / (zn * zn));
                }
            }
        };
    }
    return out;
}

Var Tape::info_nce(Var s, const std::vector<bool>& positive) {
    const Mat& sv = value(s);
    if (sv.cols() != 1) throw NumericError("info_nce: similarities must be (N, 1)");
    if (static_cast<Eigen::Index>(positive.size()) != sv.rows())
        throw NumericError("info_nce: mask size mismatch");
    Eigen::Index n_pos = 0;
    for (bool b : positive) n_pos += b ? 1 : 0;
    if (n_pos == 0) throw DataError("info_nce: empty positive set");

    const double m = sv.maxCoeff();
    double sum_all = 0.0, sum_pos = 0.0;
    for (Eigen::Index i = 0; i < sv.rows(); ++i) {
        const double e = std::exp(sv(i, 0) - m);
        sum_all += e;
        if (positive[static_cast<std::size_t>(i)]) sum_pos += e;
    }
    Mat v(1, 1);
    v(0, 0) = std::log(sum_all) - std::log(sum_pos);
    const bool rg = requires_grad(s);
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, s, out, positive, m, sum_all, sum_pos] {
            const double g = nodes_[out.idx].grad(0, 0);
            const Mat& sv = value(s);
            Mat& ds = grad_ref(s.idx);
            for (Eigen::Index i = 0; i < sv.rows(); ++i) {
                const double e = std::exp(sv(i, 0) - m);
                double d = e / sum_all;
                if (positive[static_cast<std::size_t>(i)]) d -= e / sum_pos;
                ds(i, 0) += g * d;
            }
        };
    }
    return out;
}

namespace {
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

Var Tape::focal_loss_logits(Var logits, const Mat& target, double alpha, double beta) {
    const Mat& lv = value(logits);
    check_same_shape(lv, target, "focal_loss_logits");
    Eigen::Index n_pos = 0;
    for (Eigen::Index i = 0; i < target.size(); ++i)
        if (target(i) >= 1.0) ++n_pos;
    if (n_pos == 0) throw DataError("focal_loss_logits: target map has no peak");
    const double inv_np = 1.0 / static_cast<double>(n_pos);

    double acc = 0.0;
    for (Eigen::Index i = 0; i < lv.size(); ++i) {
        const double l = lv(i);
        const double p = 1.0 / (1.0 + std::exp(-l));
        const double log_p = -softplus(-l);
        const double log_1mp = -softplus(l);
        const double y = target(i);
        if (y >= 1.0) {
            acc += std::pow(1.0 - p, alpha) * log_p;
        } else {
            acc += std::pow(1.0 - y, beta) * std::pow(p, alpha) * log_1mp;
        }
    }
    Mat v(1, 1);
    v(0, 0) = -acc * inv_np;
    const bool rg = requires_grad(logits);
    Var out{this, push(std::move(v), rg)};
    if (rg) {
        nodes_[out.idx].backward = [this, logits, out, target, alpha, beta, inv_np] {
            const double g = nodes_[out.idx].grad(0, 0);
            const Mat& lv = value(logits);
            Mat& dl = grad_ref(logits.idx);
            for (Eigen::Index i = 0; i < lv.size(); ++i) {
                const double l = lv(i);
                const double p = 1.0 / (1.0 + std::exp(-l));
                const double log_p = -softplus(-l);
                const double log_1mp = -softplus(l);
                const double y = target(i);
                double dacc_dl;
                if (y >= 1.0) {
                    // d/dl [(1-p)^a log p] = -a(1-p)^(a-1) p(1-p) log p + (1-p)^a (1-p)
                    dacc_dl = -alpha * std::pow(1.0 - p, alpha - 1.0) * p * (1.0 - p) * log_p +
                              std::pow(1.0 - p, alpha) * (1.0 - p);
                } else {
                    // d/dl [(1-y)^b p^a log(1-p)] = (1-y)^b [a p^(a-1) p(1-p) log(1-p) - p^a p]
                    dacc_dl = std::pow(1.0 - y, beta) *
                              (alpha * std::pow(p, alpha - 1.0) * p * (1.0 - p) * log_1mp -
                               std::pow(p, alpha) * p);
                }
                dl(i) += g * (-dacc_dl * inv_np);
            }
        };
    }
    return out;
}

double central_difference(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

}  // namespace emt
