#include "slt/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <numeric>
#include <sstream>

namespace slt {

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_str(s));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(Shape s) { return Tensor(std::move(s)); }

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(s));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.data) v = dist(rng);
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
}

std::size_t Tensor::numel() const { return data.size(); }

double Tensor::item() const {
    if (data.size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape_str(shape));
    return data[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

// ---- tape -------------------------------------------------------------------

const Tensor& Var::value() const {
    if (!tape_) throw std::logic_error("value() on default-constructed Var");
    return tape_->value(id_);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::emit(Tensor value, std::vector<int> parents,
               std::function<void(Tape&, int)> backprop, const char* op_name) {
    if (debug_checks_ && !value.all_finite())
        throw std::runtime_error(std::string("non-finite output of op '") + op_name + "'");
    Node n;
    n.value = std::move(value);
    n.op = op_name;
    bool needs = false;
    if (grad_enabled_) {
        for (int p : parents) needs = needs || nodes_[p].requires_grad;
    }
    if (needs) {
        n.parents = std::move(parents);
        n.backprop = std::move(backprop);
        n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& out) {
    if (out.tape() != this) throw std::logic_error("backward on a Var from another tape");
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    const Node& o = nodes_[out.id()];
    if (o.value.numel() != 1)
        throw std::invalid_argument("backward seed must be scalar, got " + shape_str(o.value.shape));
    for (Node& n : nodes_) n.grad = Tensor();
    nodes_[out.id()].grad = Tensor::scalar(1.0);
    for (int id = out.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.data.empty() || !n.backprop) continue;
        for (int p : n.parents) {
            Node& pn = nodes_[p];
            if (pn.requires_grad && pn.grad.data.empty()) pn.grad = Tensor::zeros(pn.value.shape);
        }
        n.backprop(*this, id);
    }
    // unused parameters keep a well-defined zero gradient
    for (Node& n : nodes_) {
        if (n.requires_grad && n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    }
}

const Tensor& Tape::grad(const Var& v) const {
    if (v.tape() != this) throw std::logic_error("grad on a Var from another tape");
    return nodes_[v.id()].grad;
}

// ---- op helpers -------------------------------------------------------------

namespace {

Tape* common_tape(Var a, Var b) {
    if (a.tape() != b.tape()) throw std::logic_error("vars from different tapes");
    return a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.value().shape != b.value().shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.value().shape) + " vs " + shape_str(b.value().shape));
}

void require_rank2(const Var& a, const char* op) {
    if (a.value().shape.size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected rank-2, got " +
                                    shape_str(a.value().shape));
}

void axpy(Tensor& dst, const Tensor& src, double c = 1.0) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += c * src.data[i];
}

}  // namespace

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tape* t = common_tape(a, b);
    Tensor out = a.value();
    axpy(out, b.value());
    int ia = a.id(), ib = b.id();
    return t->emit(std::move(out), {ia, ib},
                   [ia, ib](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       if (!tp.grad_buf(ia).data.empty()) axpy(tp.grad_buf(ia), g);
                       if (!tp.grad_buf(ib).data.empty()) axpy(tp.grad_buf(ib), g);
                   },
                   "add");
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tape* t = common_tape(a, b);
    Tensor out = a.value();
    axpy(out, b.value(), -1.0);
    int ia = a.id(), ib = b.id();
    return t->emit(std::move(out), {ia, ib},
                   [ia, ib](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       if (!tp.grad_buf(ia).data.empty()) axpy(tp.grad_buf(ia), g);
                       if (!tp.grad_buf(ib).data.empty()) axpy(tp.grad_buf(ib), g, -1.0);
                   },
                   "sub");
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tape* t = common_tape(a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
    int ia = a.id(), ib = b.id();
    return t->emit(std::move(out), {ia, ib},
                   [ia, ib](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       const Tensor& va = tp.value(ia);
                       const Tensor& vb = tp.value(ib);
                       if (!tp.grad_buf(ia).data.empty())
                           for (std::size_t i = 0; i < g.data.size(); ++i)
                               tp.grad_buf(ia).data[i] += g.data[i] * vb.data[i];
                       if (!tp.grad_buf(ib).data.empty())
                           for (std::size_t i = 0; i < g.data.size(); ++i)
                               tp.grad_buf(ib).data[i] += g.data[i] * va.data[i];
                   },
                   "mul");
}

Var matmul(Var a, Var b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.cols() != vb.rows())
        throw std::invalid_argument("matmul: inner dims " + shape_str(va.shape) + " x " +
                                    shape_str(vb.shape));
    Tape* t = common_tape(a, b);
    int m = va.rows(), k = va.cols(), n = vb.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double av = va.at(i, p);
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) out.at(i, j) += av * vb.at(p, j);
        }
    int ia = a.id(), ib = b.id();
    return t->emit(std::move(out), {ia, ib},
                   [ia, ib, m, k, n](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       const Tensor& va2 = tp.value(ia);
                       const Tensor& vb2 = tp.value(ib);
                       if (!tp.grad_buf(ia).data.empty()) {
                           Tensor& ga = tp.grad_buf(ia);  // g * b^T
                           for (int i = 0; i < m; ++i)
                               for (int j = 0; j < n; ++j) {
                                   double gv = g.at(i, j);
                                   if (gv == 0.0) continue;
                                   for (int p = 0; p < k; ++p) ga.at(i, p) += gv * vb2.at(p, j);
                               }
                       }
                       if (!tp.grad_buf(ib).data.empty()) {
                           Tensor& gb = tp.grad_buf(ib);  // a^T * g
                           for (int i = 0; i < m; ++i)
                               for (int p = 0; p < k; ++p) {
                                   double av = va2.at(i, p);
                                   if (av == 0.0) continue;
                                   for (int j = 0; j < n; ++j) gb.at(p, j) += av * g.at(i, j);
                               }
                       }
                   },
                   "matmul");
}

Var transpose(Var a) {
    require_rank2(a, "transpose");
    const Tensor& v = a.value();
    int m = v.rows(), n = v.cols();
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = v.at(i, j);
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia, m, n](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              for (int i = 0; i < m; ++i)
                                  for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
                          },
                          "transpose");
}

Var scale(Var a, double c) {
    Tensor out = a.value();
    for (double& v : out.data) v *= c;
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia, c](Tape& tp, int self) {
                              if (!tp.grad_buf(ia).data.empty())
                                  axpy(tp.grad_buf(ia), tp.grad_buf(self), c);
                          },
                          "scale");
}

Var add_rowvec(Var m, Var v) {
    require_rank2(m, "add_rowvec");
    require_rank2(v, "add_rowvec");
    const Tensor& mv = m.value();
    const Tensor& vv = v.value();
    if (vv.rows() != 1 || vv.cols() != mv.cols())
        throw std::invalid_argument("add_rowvec: bias shape " + shape_str(vv.shape) +
                                    " does not broadcast over " + shape_str(mv.shape));
    Tensor out = mv;
    for (int i = 0; i < mv.rows(); ++i)
        for (int j = 0; j < mv.cols(); ++j) out.at(i, j) += vv.at(0, j);
    int im = m.id(), iv = v.id();
    int rows = mv.rows(), cols = mv.cols();
    return m.tape()->emit(std::move(out), {im, iv},
                          [im, iv, rows, cols](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              if (!tp.grad_buf(im).data.empty()) axpy(tp.grad_buf(im), g);
                              if (!tp.grad_buf(iv).data.empty()) {
                                  Tensor& gv = tp.grad_buf(iv);
                                  for (int i = 0; i < rows; ++i)
                                      for (int j = 0; j < cols; ++j) gv.at(0, j) += g.at(i, j);
                              }
                          },
                          "add_rowvec");
}

Var mul_scalar(Var m, Var s) {
    if (s.value().numel() != 1)
        throw std::invalid_argument("mul_scalar: scalar operand has shape " +
                                    shape_str(s.value().shape));
    Tape* t = common_tape(m, s);
    double sv = s.value().data[0];
    Tensor out = m.value();
    for (double& v : out.data) v *= sv;
    int im = m.id(), is = s.id();
    return t->emit(std::move(out), {im, is},
                   [im, is](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       const Tensor& mv = tp.value(im);
                       double sv2 = tp.value(is).data[0];
                       if (!tp.grad_buf(im).data.empty()) axpy(tp.grad_buf(im), g, sv2);
                       if (!tp.grad_buf(is).data.empty()) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < g.data.size(); ++i)
                               acc += g.data[i] * mv.data[i];
                           tp.grad_buf(is).data[0] += acc;
                       }
                   },
                   "mul_scalar");
}

Var vexp(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::exp(v);
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& y = tp.value(self);
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              for (std::size_t i = 0; i < g.data.size(); ++i)
                                  ga.data[i] += g.data[i] * y.data[i];
                          },
                          "exp");
}

Var vlog(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::log(v);
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& x = tp.value(ia);
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              for (std::size_t i = 0; i < g.data.size(); ++i)
                                  ga.data[i] += g.data[i] / x.data[i];
                          },
                          "log");
}

Var vtanh(Var a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::tanh(v);
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& y = tp.value(self);
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              for (std::size_t i = 0; i < g.data.size(); ++i)
                                  ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
                          },
                          "tanh");
}

Tensor softmax_rows_value(const Tensor& m, double temperature,
                          const std::vector<std::vector<bool>>* mask) {
    if (m.shape.size() != 2) throw std::invalid_argument("softmax_rows: rank-2 input required");
    if (temperature <= 0.0) throw std::invalid_argument("softmax_rows: temperature must be > 0");
    Tensor out(m.shape);
    for (int i = 0; i < m.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m.cols(); ++j) {
            if (mask && !(*mask)[i][j]) continue;
            mx = std::max(mx, m.at(i, j) / temperature);
        }
        if (mx == -std::numeric_limits<double>::infinity())
            throw std::invalid_argument("softmax_rows: row " + std::to_string(i) +
                                        " has all columns masked");
        double denom = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            if (mask && !(*mask)[i][j]) continue;
            denom += std::exp(m.at(i, j) / temperature - mx);
        }
        for (int j = 0; j < m.cols(); ++j) {
            if (mask && !(*mask)[i][j]) { out.at(i, j) = 0.0; continue; }
            out.at(i, j) = std::exp(m.at(i, j) / temperature - mx) / denom;
        }
    }
    return out;
}

Var softmax_rows(Var m, double temperature, const std::vector<std::vector<bool>>* mask) {
    require_rank2(m, "softmax_rows");
    Tensor out = softmax_rows_value(m.value(), temperature, mask);
    int im = m.id();
    int rows = out.rows(), cols = out.cols();
    // copy the mask; callers may hand us a temporary
    std::vector<std::vector<bool>> mk;
    if (mask) mk = *mask;
    bool masked = mask != nullptr;
    return m.tape()->emit(std::move(out), {im},
                          [im, rows, cols, temperature, mk = std::move(mk), masked](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& y = tp.value(self);
                              Tensor& gm = tp.grad_buf(im);
                              if (gm.data.empty()) return;
                              for (int i = 0; i < rows; ++i) {
                                  double dot = 0.0;
                                  for (int j = 0; j < cols; ++j) dot += g.at(i, j) * y.at(i, j);
                                  for (int j = 0; j < cols; ++j) {
                                      if (masked && !mk[i][j]) continue;
                                      gm.at(i, j) +=
                                          y.at(i, j) * (g.at(i, j) - dot) / temperature;
                                  }
                              }
                          },
                          "softmax_rows");
}

Var logsumexp_rows(Var m) {
    require_rank2(m, "logsumexp_rows");
    const Tensor& v = m.value();
    int rows = v.rows(), cols = v.cols();
    Tensor out({rows, 1});
    for (int i = 0; i < rows; ++i) {
        double mx = v.at(i, 0);
        for (int j = 1; j < cols; ++j) mx = std::max(mx, v.at(i, j));
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += std::exp(v.at(i, j) - mx);
        out.at(i, 0) = mx + std::log(acc);
    }
    int im = m.id();
    return m.tape()->emit(std::move(out), {im},
                          [im, rows, cols](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& lse = tp.value(self);
                              const Tensor& x = tp.value(im);
                              Tensor& gm = tp.grad_buf(im);
                              if (gm.data.empty()) return;
                              for (int i = 0; i < rows; ++i)
                                  for (int j = 0; j < cols; ++j)
                                      gm.at(i, j) +=
                                          g.at(i, 0) * std::exp(x.at(i, j) - lse.at(i, 0));
                          },
                          "logsumexp_rows");
}

Var sum(Var a) {
    double acc = std::accumulate(a.value().data.begin(), a.value().data.end(), 0.0);
    int ia = a.id();
    return a.tape()->emit(Tensor::scalar(acc), {ia},
                          [ia](Tape& tp, int self) {
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              double g = tp.grad_buf(self).data[0];
                              for (double& v : ga.data) v += g;
                          },
                          "sum");
}

Var mean(Var a) {
    std::size_t n = a.value().numel();
    if (n == 0) throw std::invalid_argument("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gather_rows(Var m, const std::vector<int>& idx) {
    require_rank2(m, "gather_rows");
    const Tensor& v = m.value();
    if (static_cast<int>(idx.size()) != v.rows())
        throw std::invalid_argument("gather_rows: index count != row count");
    Tensor out({v.rows(), 1});
    for (int i = 0; i < v.rows(); ++i) {
        if (idx[i] < 0 || idx[i] >= v.cols())
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) +
                                    " out of range for " + shape_str(v.shape));
        out.at(i, 0) = v.at(i, idx[i]);
    }
    int im = m.id();
    std::vector<int> ix = idx;
    return m.tape()->emit(std::move(out), {im},
                          [im, ix = std::move(ix)](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              Tensor& gm = tp.grad_buf(im);
                              if (gm.data.empty()) return;
                              for (std::size_t i = 0; i < ix.size(); ++i)
                                  gm.at(static_cast<int>(i), ix[i]) += g.at(static_cast<int>(i), 0);
                          },
                          "gather_rows");
}

Var concat_rows(Var a, Var b) {
    require_rank2(a, "concat_rows");
    require_rank2(b, "concat_rows");
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    if (va.cols() != vb.cols())
        throw std::invalid_argument("concat_rows: column mismatch " + shape_str(va.shape) +
                                    " vs " + shape_str(vb.shape));
    Tape* t = common_tape(a, b);
    Tensor out({va.rows() + vb.rows(), va.cols()});
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.data.size());
    int ia = a.id(), ib = b.id();
    std::size_t na = va.data.size();
    return t->emit(std::move(out), {ia, ib},
                   [ia, ib, na](Tape& tp, int self) {
                       const Tensor& g = tp.grad_buf(self);
                       Tensor& ga = tp.grad_buf(ia);
                       Tensor& gb = tp.grad_buf(ib);
                       if (!ga.data.empty())
                           for (std::size_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
                       if (!gb.data.empty())
                           for (std::size_t i = na; i < g.data.size(); ++i)
                               gb.data[i - na] += g.data[i];
                   },
                   "concat_rows");
}

Var slice_rows(Var a, int begin, int end) {
    require_rank2(a, "slice_rows");
    const Tensor& v = a.value();
    if (begin < 0 || end > v.rows() || begin >= end)
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") for " + shape_str(v.shape));
    int cols = v.cols();
    Tensor out({end - begin, cols});
    std::copy(v.data.begin() + static_cast<std::size_t>(begin) * cols,
              v.data.begin() + static_cast<std::size_t>(end) * cols, out.data.begin());
    int ia = a.id();
    return a.tape()->emit(std::move(out), {ia},
                          [ia, begin, cols](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              Tensor& ga = tp.grad_buf(ia);
                              if (ga.data.empty()) return;
                              std::size_t off = static_cast<std::size_t>(begin) * cols;
                              for (std::size_t i = 0; i < g.data.size(); ++i)
                                  ga.data[off + i] += g.data[i];
                          },
                          "slice_rows");
}

Var l2_normalize_rows(Var m, double eps) {
    require_rank2(m, "l2_normalize_rows");
    const Tensor& v = m.value();
    int rows = v.rows(), cols = v.cols();
    Tensor out(v.shape);
    std::vector<double> norms(rows);
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += v.at(i, j) * v.at(i, j);
        norms[i] = std::sqrt(s + eps);
        for (int j = 0; j < cols; ++j) out.at(i, j) = v.at(i, j) / norms[i];
    }
    int im = m.id();
    return m.tape()->emit(std::move(out), {im},
                          [im, rows, cols, norms = std::move(norms)](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              const Tensor& y = tp.value(self);
                              Tensor& gm = tp.grad_buf(im);
                              if (gm.data.empty()) return;
                              for (int i = 0; i < rows; ++i) {
                                  double dot = 0.0;
                                  for (int j = 0; j < cols; ++j) dot += g.at(i, j) * y.at(i, j);
                                  for (int j = 0; j < cols; ++j)
                                      gm.at(i, j) += (g.at(i, j) - dot * y.at(i, j)) / norms[i];
                              }
                          },
                          "l2_normalize_rows");
}

Var mask_rows(Var m, const std::vector<bool>& keep) {
    require_rank2(m, "mask_rows");
    const Tensor& v = m.value();
    if (static_cast<int>(keep.size()) != v.rows())
        throw std::invalid_argument("mask_rows: flag count != row count");
    Tensor out = v;
    for (int i = 0; i < v.rows(); ++i)
        if (!keep[i])
            for (int j = 0; j < v.cols(); ++j) out.at(i, j) = 0.0;
    int im = m.id();
    std::vector<bool> k = keep;
    int cols = v.cols();
    return m.tape()->emit(std::move(out), {im},
                          [im, k = std::move(k), cols](Tape& tp, int self) {
                              const Tensor& g = tp.grad_buf(self);
                              Tensor& gm = tp.grad_buf(im);
                              if (gm.data.empty()) return;
                              for (std::size_t i = 0; i < k.size(); ++i) {
                                  if (!k[i]) continue;
                                  for (int j = 0; j < cols; ++j)
                                      gm.at(static_cast<int>(i), j) += g.at(static_cast<int>(i), j);
                              }
                          },
                          "mask_rows");
}

Var select_rows(Var table, const std::vector<int>& ids) {
    require_rank2(table, "select_rows");
    int v = table.value().rows();
    int n = static_cast<int>(ids.size());
    Tensor onehot({n, v});
    for (int i = 0; i < n; ++i) {
        if (ids[i] < 0 || ids[i] >= v)
            throw std::out_of_range("select_rows: id " + std::to_string(ids[i]) +
                                    " out of range for table " + shape_str(table.value().shape));
        onehot.at(i, ids[i]) = 1.0;
    }
    return matmul(table.tape()->constant(std::move(onehot)), table);
}

// ---- gradient checking ------------------------------------------------------

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_gradient: h must be > 0");
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        probe.data[i] = x.data[i] + h;
        double fp = f(probe);
        probe.data[i] = x.data[i] - h;
        double fm = f(probe);
        probe.data[i] = x.data[i];
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_gradient: non-finite probe at index " +
                                     std::to_string(i));
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

GradCheckReport grad_check(const std::string& name, const Tensor& analytic,
                           const Tensor& numeric, double tolerance) {
    if (!analytic.same_shape(numeric))
        throw std::invalid_argument("grad_check: shape mismatch for " + name);
    GradCheckReport r;
    r.parameter = name;
    r.tolerance = tolerance;
    for (std::size_t i = 0; i < analytic.data.size(); ++i) {
        double a = analytic.data[i], n = numeric.data[i];
        double rel = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
        r.max_rel_error = std::max(r.max_rel_error, rel);
    }
    return r;
}

}  // namespace slt
