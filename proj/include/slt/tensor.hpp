#pragma once

// Dense row-major double tensors with a tape-based reverse-mode autodiff.
// Graphs are rebuilt per training step; node values are immutable once set.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace slt {

using Shape = std::vector<int>;

struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor randn(Shape s, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);

    std::size_t numel() const;
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
    double item() const;
    bool all_finite() const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Autodiff tape. Create leaves with tape.leaf()/tape.constant(), compose with
// the free functions below, then tape.backward(loss) and read grad(leaf).
class Tape;

class Var {
public:
    Var() : tape_(nullptr), id_(-1) {}
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }

private:
    Tape* tape_;
    int id_;
};

class Tape {
public:
    explicit Tape(bool grad_enabled = true, bool debug_checks = true)
        : grad_enabled_(grad_enabled), debug_checks_(debug_checks) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    // Internal: used by op builders.
    Var emit(Tensor value, std::vector<int> parents,
             std::function<void(Tape&, int)> backprop, const char* op_name);

    void backward(const Var& scalar_output);

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(const Var& v) const;
    bool grad_enabled() const { return grad_enabled_; }
    bool debug_checks() const { return debug_checks_; }

    Tensor& grad_buf(int id) { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backprop;
        bool requires_grad = false;
        const char* op = "leaf";
    };
    std::vector<Node> nodes_;
    bool grad_enabled_;
    bool debug_checks_;
};

// ---- op set -----------------------------------------------------------------
// add/sub/mul are same-shape elementwise. Everything richer is composed.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);          // (m,k)x(k,n)
Var transpose(Var a);              // rank-2
Var scale(Var a, double c);
Var add_rowvec(Var m, Var v);      // (m,n) + (1,n) broadcast over rows
Var mul_scalar(Var m, Var s);      // every element times a 1-element var
Var vexp(Var a);
Var vlog(Var a);
Var vtanh(Var a);
Var softmax_rows(Var m, double temperature = 1.0,
                 const std::vector<std::vector<bool>>* mask = nullptr);
Var logsumexp_rows(Var m);         // (m,n) -> (m,1)
Var sum(Var a);                    // -> scalar (1-element)
Var mean(Var a);                   // -> scalar
Var gather_rows(Var m, const std::vector<int>& idx);  // (m,n) -> (m,1), m[i, idx[i]]
Var concat_rows(Var a, Var b);
Var slice_rows(Var a, int begin, int end);
Var l2_normalize_rows(Var m, double eps = 1e-12);
Var mask_rows(Var m, const std::vector<bool>& keep);  // zeroes dropped rows
Var select_rows(Var table, const std::vector<int>& ids);  // embedding lookup, composed as one-hot matmul

// Numerically stable row softmax on plain tensors (shared with the tape op).
Tensor softmax_rows_value(const Tensor& m, double temperature,
                          const std::vector<std::vector<bool>>* mask);

// ---- gradient checking ------------------------------------------------------

struct GradCheckReport {
    std::string parameter;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_rel_error <= tolerance; }
};

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h = 1e-5);

GradCheckReport grad_check(const std::string& name, const Tensor& analytic,
                           const Tensor& numeric, double tolerance = 1e-4);

}  // namespace slt
