#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "emt/common.hpp"

namespace emt {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Parameters

struct Parameter {
    std::string name;
    std::string group;
    Mat value;
    Mat grad;          // accumulated across samples, zeroed by the optimizer
    bool buffer = false;  // running statistics etc.; never optimized
};

// Flat store of named parameters, partitioned into groups whose trainable flag
// drives both the optimizer and gradient pruning in the tape.
class ParameterStore {
public:
    int add(const std::string& group, const std::string& name, Mat value, bool buffer = false);

    Parameter& at(int idx) { return params_[idx]; }
    const Parameter& at(int idx) const { return params_[idx]; }
    int find(const std::string& name) const;  // -1 when absent
    std::size_t size() const { return params_.size(); }

    void set_group_trainable(const std::string& group, bool trainable) { trainable_[group] = trainable; }
    bool group_trainable(const std::string& group) const;
    bool param_trainable(int idx) const;
    std::vector<std::string> groups() const;  // registration order

    std::uint64_t group_checksum(const std::string& group) const;
    std::size_t group_param_count(const std::string& group) const;  // scalar count, buffers excluded

    void zero_grads();

private:
    std::vector<Parameter> params_;
    std::map<std::string, int> index_;
    std::map<std::string, bool> trainable_;
    std::vector<std::string> group_order_;
};

struct ParameterGroupReport {
    std::string name;
    bool trainable = false;
    std::uint64_t checksum = 0;
    std::size_t parameter_count = 0;
};

// ---------------------------------------------------------------------------
// Tape

class Tape;

struct Var {
    Tape* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    Eigen::Index rows() const;
    Eigen::Index cols() const;
    const Mat& value() const;
};

// Record-and-replay reverse-mode tape. Creation order is a topological order,
// so backward() is a single reverse sweep. Nodes whose inputs all have
// requires_grad=false carry no closure; gradient work for frozen parameter
// groups is skipped entirely.
class Tape {
public:
    Var leaf(Mat value, bool requires_grad);
    Var constant(Mat value) { return leaf(std::move(value), false); }

    // Binds a parameter; one node per parameter per tape. After backward(),
    // accumulated node gradients are added into Parameter::grad in index order.
    Var param(ParameterStore& store, int param_index);

    void backward(Var scalar_output);

    const Mat& value(Var v) const { return nodes_[v.idx].value; }
    Mat& grad(Var v);  // allocates zeros on first touch
    bool requires_grad(Var v) const { return nodes_[v.idx].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // --- ops ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);       // elementwise
    Var div(Var a, Var b);       // elementwise
    Var min_(Var a, Var b);      // elementwise, ties route to a
    Var max_(Var a, Var b);
    Var scale(Var a, double k);
    Var add_const(Var a, double c);
    Var add_rowvec(Var a, Var row);              // broadcast (1,C) over rows
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);                 // a * b^T
    Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }
    Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
    Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
    Var concat_rows(const std::vector<Var>& parts);
    Var concat_cols(const std::vector<Var>& parts);
    Var mean_over_rows(Var a);                   // (R,C) -> (1,C)
    Var mean_all(Var a);                         // -> (1,1)
    Var sum_all(Var a);                          // -> (1,1)
    Var relu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var clamp_interior(Var a, double eps);       // clamp to [eps, 1-eps], pass-through grad
    Var abs_(Var a);
    Var softmax_rows(Var a);
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
    // Normalizes each column over rows. Training mode uses batch statistics and
    // updates the running buffers in place; eval mode reads them.
    Var batch_norm_cols(Var x, Var gamma, Var beta, Mat& running_mean, Mat& running_var,
                        bool training, double momentum = 0.1, double eps = 1e-5);
    // (S*S, D) grid tokens -> (S*S, 9D) patches of the 3x3 neighborhood, zero padded.
    Var im2col3x3(Var x, Eigen::Index S);
    // sum_k scores(0,k) * features[k]
    Var weighted_sum(const std::vector<Var>& features, Var scores);
    // Cosine of each row of x against the single row z, norms guarded by eps.
    Var cosine_rows(Var x, Var z, double eps = 1e-8);
    // -log( sum_pos e^s / sum_all e^s ), log-sum-exp stabilized. s is (N,1).
    Var info_nce(Var s, const std::vector<bool>& positive);
    // Penalty-reduced focal loss on logits against a Gaussian target map, both (N,1).
    Var focal_loss_logits(Var logits, const Mat& target, double alpha = 2.0, double beta = 4.0);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        bool grad_set = false;
        std::function<void()> backward;
    };

    int push(Mat value, bool requires_grad);
    Mat& grad_ref(int i);

    std::vector<Node> nodes_;
    std::map<int, int> param_nodes_;                  // param index -> node index
    std::vector<std::pair<int, int>> param_bindings_;  // (param index, node index)
    ParameterStore* store_ = nullptr;

    friend struct Var;
};

// Finite-difference helper shared by tests and the acceptance suite: central
// differences of f with step h.
double central_difference(const std::function<double(double)>& f, double x0, double h);

}  // namespace emt
