// Copyright 2026 The dpfl-lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tape.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "dpfl/common/error.h"

namespace dpfl::model::detail {
namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require(bool ok, const char* what) {
  if (!ok) throw RuntimeError("tape", what);
}

// log(sum(exp(row / t))) with max subtraction.
double log_sum_exp(const double* row, std::size_t n, double inv_t) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, row[j] * inv_t);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] * inv_t - m);
  return m + std::log(s);
}

}  // namespace

Var Tape::push(Mat value, bool needs_grad, BackFn back) {
  nodes_.push_back(Node{std::move(value), Mat{}, std::move(back), needs_grad});
  return nodes_.size() - 1;
}

Mat& Tape::g(Var v) {
  Node& n = nodes_[v];
  if (n.grad.v.empty()) n.grad = Mat(n.value.rows, n.value.cols, 0.0);
  return n.grad;
}

Var Tape::constant(Mat m) { return push(std::move(m), false, nullptr); }

Var Tape::parameter(const Tensor& t) {
  Mat m;
  if (t.shape().size() == 1) {
    m.rows = 1;
    m.cols = t.shape()[0];
  } else {
    m.rows = t.shape()[0];
    m.cols = t.size() / t.shape()[0];
  }
  m.v = t.values();
  return push(std::move(m), true, nullptr);
}

Var Tape::matmul(Var a, Var b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  require(A.cols == B.rows, "matmul shape mismatch");
  Mat C(A.rows, B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    double* c = C.row(i);
    const double* arow = A.row(i);
    for (std::size_t k = 0; k < A.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = B.row(k);
      for (std::size_t j = 0; j < B.cols; ++j) c[j] += aik * brow[j];
    }
  }
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    const Mat& A = t.value(a);
    const Mat& B = t.value(b);
    if (t.needs(a)) {
      Mat& GA = t.g(a);
      Mat bt(B.cols, B.rows);
      for (std::size_t k = 0; k < B.rows; ++k) {
        for (std::size_t j = 0; j < B.cols; ++j) bt.at(j, k) = B.at(k, j);
      }
      for (std::size_t i = 0; i < A.rows; ++i) {
        const double* grow = G.row(i);
        double* garow = GA.row(i);
        for (std::size_t j = 0; j < B.cols; ++j) {
          const double gij = grow[j];
          if (gij == 0.0) continue;
          const double* btrow = bt.row(j);
          for (std::size_t k = 0; k < A.cols; ++k) garow[k] += gij * btrow[k];
        }
      }
    }
    if (t.needs(b)) {
      Mat& GB = t.g(b);
      for (std::size_t i = 0; i < A.rows; ++i) {
        const double* grow = G.row(i);
        const double* arow = A.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
          const double aik = arow[k];
          if (aik == 0.0) continue;
          double* gbrow = GB.row(k);
          for (std::size_t j = 0; j < B.cols; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  require(A.rows == B.rows && A.cols == B.cols, "add shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.v.size(); ++i) C.v[i] += B.v[i];
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    for (Var x : {a, b}) {
      if (!t.needs(x)) continue;
      Mat& GX = t.g(x);
      for (std::size_t i = 0; i < G.v.size(); ++i) GX.v[i] += G.v[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Mat& A = value(a);
  const Mat& R = value(row);
  require(R.rows == 1 && R.cols == A.cols, "add_row shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.rows; ++i) {
    double* c = C.row(i);
    for (std::size_t j = 0; j < C.cols; ++j) c[j] += R.v[j];
  }
  return push(std::move(C), needs(a) || needs(row), [a, row](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    if (t.needs(a)) {
      Mat& GA = t.g(a);
      for (std::size_t i = 0; i < G.v.size(); ++i) GA.v[i] += G.v[i];
    }
    if (t.needs(row)) {
      Mat& GR = t.g(row);
      for (std::size_t i = 0; i < G.rows; ++i) {
        const double* grow = G.row(i);
        for (std::size_t j = 0; j < G.cols; ++j) GR.v[j] += grow[j];
      }
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Mat& A = value(a);
  const Mat& B = value(b);
  require(A.rows == B.rows && A.cols == B.cols, "mul shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.v.size(); ++i) C.v[i] *= B.v[i];
  return push(std::move(C), needs(a) || needs(b), [a, b](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    if (t.needs(a)) {
      Mat& GA = t.g(a);
      const Mat& B = t.value(b);
      for (std::size_t i = 0; i < G.v.size(); ++i) GA.v[i] += G.v[i] * B.v[i];
    }
    if (t.needs(b)) {
      Mat& GB = t.g(b);
      const Mat& A = t.value(a);
      for (std::size_t i = 0; i < G.v.size(); ++i) GB.v[i] += G.v[i] * A.v[i];
    }
  });
}

Var Tape::sigmoid(Var a) {
  Mat C = value(a);
  for (double& x : C.v) x = sigmoid_scalar(x);
  return push(std::move(C), needs(a), [a](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    const Mat& Y = t.value(self);
    Mat& GA = t.g(a);
    for (std::size_t i = 0; i < G.v.size(); ++i) GA.v[i] += G.v[i] * Y.v[i] * (1.0 - Y.v[i]);
  });
}

Var Tape::tanh(Var a) {
  Mat C = value(a);
  for (double& x : C.v) x = std::tanh(x);
  return push(std::move(C), needs(a), [a](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    const Mat& Y = t.value(self);
    Mat& GA = t.g(a);
    for (std::size_t i = 0; i < G.v.size(); ++i) GA.v[i] += G.v[i] * (1.0 - Y.v[i] * Y.v[i]);
  });
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Mat& A = value(a);
  require(begin < end && end <= A.cols, "slice_cols out of range");
  const std::size_t w = end - begin;
  Mat C(A.rows, w);
  for (std::size_t i = 0; i < A.rows; ++i) {
    std::copy_n(A.row(i) + begin, w, C.row(i));
  }
  return push(std::move(C), needs(a), [a, begin, w](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    Mat& GA = t.g(a);
    for (std::size_t i = 0; i < G.rows; ++i) {
      const double* grow = G.row(i);
      double* garow = GA.row(i) + begin;
      for (std::size_t j = 0; j < w; ++j) garow[j] += grow[j];
    }
  });
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Mat& T = value(table);
  Mat C(ids.size(), T.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < T.rows, "gather_rows id out of range");
    std::copy_n(T.row(static_cast<std::size_t>(ids[i])), T.cols, C.row(i));
  }
  return push(std::move(C), needs(table), [table, ids = std::move(ids)](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    Mat& GT = t.g(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const double* grow = G.row(i);
      double* trow = GT.row(static_cast<std::size_t>(ids[i]));
      for (std::size_t j = 0; j < G.cols; ++j) trow[j] += grow[j];
    }
  });
}

Var Tape::stack_steps(const std::vector<Var>& steps) {
  require(!steps.empty(), "stack_steps needs at least one step");
  const std::size_t len = steps.size();
  const std::size_t batch = value(steps[0]).rows;
  const std::size_t d = value(steps[0]).cols;
  Mat C(batch * len, d);
  bool any = false;
  for (std::size_t t = 0; t < len; ++t) {
    const Mat& S = value(steps[t]);
    require(S.rows == batch && S.cols == d, "stack_steps shape mismatch");
    any = any || needs(steps[t]);
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(S.row(b), d, C.row(b * len + t));
  }
  return push(std::move(C), any, [steps, batch, len, d](Tape& tp, Var self) {
    const Mat& G = tp.nodes_[self].grad;
    for (std::size_t t = 0; t < len; ++t) {
      if (!tp.needs(steps[t])) continue;
      Mat& GS = tp.g(steps[t]);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* grow = G.row(b * len + t);
        double* srow = GS.row(b);
        for (std::size_t j = 0; j < d; ++j) srow[j] += grow[j];
      }
    }
  });
}

Var Tape::causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t len) {
  const Mat& Q = value(q);
  const Mat& K = value(k);
  const Mat& V = value(v);
  require(Q.rows == batch * len && K.rows == Q.rows && V.rows == Q.rows && K.cols == Q.cols,
          "causal_attention shape mismatch");
  const std::size_t dk = Q.cols;
  const std::size_t dv = V.cols;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  // probs[b][t * len + s] for s <= t.
  auto probs = std::make_shared<std::vector<double>>(batch * len * len, 0.0);
  Mat O(batch * len, dv);
  for (std::size_t b = 0; b < batch; ++b) {
    double* P = probs->data() + b * len * len;
    for (std::size_t t = 0; t < len; ++t) {
      const double* qrow = Q.row(b * len + t);
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s <= t; ++s) {
        const double* krow = K.row(b * len + s);
        double dot = 0.0;
        for (std::size_t j = 0; j < dk; ++j) dot += qrow[j] * krow[j];
        P[t * len + s] = dot * scale;
        m = std::max(m, P[t * len + s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s <= t; ++s) {
        P[t * len + s] = std::exp(P[t * len + s] - m);
        z += P[t * len + s];
      }
      double* orow = O.row(b * len + t);
      for (std::size_t s = 0; s <= t; ++s) {
        P[t * len + s] /= z;
        const double p = P[t * len + s];
        const double* vrow = V.row(b * len + s);
        for (std::size_t j = 0; j < dv; ++j) orow[j] += p * vrow[j];
      }
    }
  }
  const bool ng = needs(q) || needs(k) || needs(v);
  return push(std::move(O), ng, [q, k, v, batch, len, dk, dv, scale, probs](Tape& tp, Var self) {
    const Mat& G = tp.nodes_[self].grad;
    const Mat& Q = tp.value(q);
    const Mat& K = tp.value(k);
    const Mat& V = tp.value(v);
    Mat& GQ = tp.g(q);
    Mat& GK = tp.g(k);
    Mat& GV = tp.g(v);
    std::vector<double> dp(len);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* P = probs->data() + b * len * len;
      for (std::size_t t = 0; t < len; ++t) {
        const double* grow = G.row(b * len + t);
        double weighted = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          const double* vrow = V.row(b * len + s);
          double* gvrow = GV.row(b * len + s);
          const double p = P[t * len + s];
          double d = 0.0;
          for (std::size_t j = 0; j < dv; ++j) {
            d += grow[j] * vrow[j];
            gvrow[j] += p * grow[j];
          }
          dp[s] = d;
          weighted += p * d;
        }
        const double* qrow = Q.row(b * len + t);
        double* gqrow = GQ.row(b * len + t);
        for (std::size_t s = 0; s <= t; ++s) {
          const double ds = P[t * len + s] * (dp[s] - weighted) * scale;
          if (ds == 0.0) continue;
          const double* krow = K.row(b * len + s);
          double* gkrow = GK.row(b * len + s);
          for (std::size_t j = 0; j < dk; ++j) {
            gqrow[j] += ds * krow[j];
            gkrow[j] += ds * qrow[j];
          }
        }
      }
    }
  });
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights) {
  const Mat& Z = value(logits);
  require(targets.size() == Z.rows && weights.size() == Z.rows, "cross_entropy row mismatch");
  double loss = 0.0;
  for (std::size_t r = 0; r < Z.rows; ++r) {
    if (weights[r] == 0.0) continue;
    const int y = targets[r];
    require(y >= 0 && static_cast<std::size_t>(y) < Z.cols, "cross_entropy target out of range");
    loss += weights[r] * (log_sum_exp(Z.row(r), Z.cols, 1.0) - Z.at(r, static_cast<std::size_t>(y)));
  }
  Mat out(1, 1, loss);
  return push(std::move(out), needs(logits),
              [logits, targets = std::move(targets), weights = std::move(weights)](Tape& t, Var self) {
                const double g = t.nodes_[self].grad.v[0];
                const Mat& Z = t.value(logits);
                Mat& GZ = t.g(logits);
                for (std::size_t r = 0; r < Z.rows; ++r) {
                  if (weights[r] == 0.0) continue;
                  const double* z = Z.row(r);
                  double* gz = GZ.row(r);
                  const double lse = log_sum_exp(z, Z.cols, 1.0);
                  const double w = g * weights[r];
                  for (std::size_t j = 0; j < Z.cols; ++j) gz[j] += w * std::exp(z[j] - lse);
                  gz[static_cast<std::size_t>(targets[r])] -= w;
                }
              });
}

Var Tape::distill_cross_entropy(Var logits, std::vector<const TopK*> teacher,
                                std::vector<double> weights, double temperature) {
  const Mat& Z = value(logits);
  require(teacher.size() == Z.rows && weights.size() == Z.rows, "distill row mismatch");
  require(temperature > 0.0, "temperature must be positive");
  const double inv_t = 1.0 / temperature;
  // Renormalized teacher probabilities per row.
  auto probs = std::make_shared<std::vector<std::vector<double>>>(Z.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < Z.rows; ++r) {
    if (weights[r] == 0.0 || teacher[r] == nullptr || teacher[r]->empty()) continue;
    const TopK& top = *teacher[r];
    auto& p = (*probs)[r];
    p.resize(top.size());
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& [id, z] : top) m = std::max(m, z * inv_t);
    double s = 0.0;
    for (std::size_t i = 0; i < top.size(); ++i) {
      p[i] = std::exp(top[i].second * inv_t - m);
      s += p[i];
    }
    for (double& x : p) x /= s;
    const double lse = log_sum_exp(Z.row(r), Z.cols, inv_t);
    double ce = 0.0;
    for (std::size_t i = 0; i < top.size(); ++i) {
      const int id = top[i].first;
      require(id >= 0 && static_cast<std::size_t>(id) < Z.cols, "teacher id out of range");
      ce += p[i] * (lse - Z.at(r, static_cast<std::size_t>(id)) * inv_t);
    }
    loss += weights[r] * ce;
  }
  Mat out(1, 1, loss);
  return push(std::move(out), needs(logits),
              [logits, teacher = std::move(teacher), weights = std::move(weights), inv_t,
               probs](Tape& t, Var self) {
                const double g = t.nodes_[self].grad.v[0];
                const Mat& Z = t.value(logits);
                Mat& GZ = t.g(logits);
                for (std::size_t r = 0; r < Z.rows; ++r) {
                  const auto& p = (*probs)[r];
                  if (p.empty()) continue;
                  const double* z = Z.row(r);
                  double* gz = GZ.row(r);
                  const double lse = log_sum_exp(z, Z.cols, inv_t);
                  const double w = g * weights[r] * inv_t;
                  for (std::size_t j = 0; j < Z.cols; ++j) gz[j] += w * std::exp(z[j] * inv_t - lse);
                  const TopK& top = *teacher[r];
                  for (std::size_t i = 0; i < top.size(); ++i) {
                    gz[static_cast<std::size_t>(top[i].first)] -= w * p[i];
                  }
                }
              });
}

Var Tape::scaled_sum(std::vector<std::pair<double, Var>> terms) {
  require(!terms.empty(), "scaled_sum needs terms");
  const Mat& first = value(terms[0].second);
  Mat out(first.rows, first.cols);
  bool ng = false;
  for (const auto& [c, x] : terms) {
    const Mat& X = value(x);
    require(X.rows == out.rows && X.cols == out.cols, "scaled_sum shape mismatch");
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += c * X.v[i];
    ng = ng || needs(x);
  }
  return push(std::move(out), ng, [terms = std::move(terms)](Tape& t, Var self) {
    const Mat& G = t.nodes_[self].grad;
    for (const auto& [c, x] : terms) {
      if (!t.needs(x)) continue;
      Mat& GX = t.g(x);
      for (std::size_t i = 0; i < G.v.size(); ++i) GX.v[i] += c * G.v[i];
    }
  });
}

void Tape::backward(Var root) {
  require(root < nodes_.size(), "backward root out of range");
  g(root);
  std::fill(nodes_[root].grad.v.begin(), nodes_[root].grad.v.end(), 1.0);
  for (Var i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.back || n.grad.v.empty()) continue;
    n.back(*this, i);
  }
}

}  // namespace dpfl::model::detail
