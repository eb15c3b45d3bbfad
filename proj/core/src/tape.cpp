#include "mmfuse/tape.hpp"

#include <cmath>
#include <utility>

namespace mmfuse {

const Tensor& Var::value() const { return tape_->value(idx_); }

const std::vector<double>& Var::grad() const { return tape_->grad(idx_); }

Var Tape::push(Tensor value, std::function<void(Tape&)> backprop) {
  Node node;
  node.grad.assign(value.size(), 0.0);
  node.value = std::move(value);
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) { return push(std::move(value), nullptr); }

Var Tape::param(const Tensor& parameter) {
  Var v = push(parameter, nullptr);
  nodes_[v.index()].external = &parameter;
  return v;
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + av.shape_str() + " x " +
                     bv.shape_str());
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out({n, m});
  {
    const double* ad = av.data();
    const double* bd = bv.data();
    double* od = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ad[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = bd + p * m;
        double* orow = od + i * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
      }
    }
  }
  const std::size_t ai = a.index(), bi = b.index(), self = nodes_.size();
  return push(std::move(out), [ai, bi, self, n, k, m](Tape& t) {
    const double* g = t.nodes_[self].grad.data();
    const double* ad = t.nodes_[ai].value.data();
    const double* bd = t.nodes_[bi].value.data();
    double* da = t.nodes_[ai].grad.data();
    double* db = t.nodes_[bi].grad.data();
    // dA += dC * B^T
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        const double* grow = g + i * m;
        const double* brow = bd + p * m;
        for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
        da[i * k + p] += acc;
      }
    }
    // dB += A^T * dC
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < n; ++i) {
        const double aip = ad[i * k + p];
        if (aip == 0.0) continue;
        const double* grow = g + i * m;
        double* dbrow = db + p * m;
        for (std::size_t j = 0; j < m; ++j) dbrow[j] += aip * grow[j];
      }
    }
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const double* bd = b.value().data();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] += bd[i];
  const std::size_t ai = a.index(), bi = b.index(), self = nodes_.size();
  return push(std::move(out), [ai, bi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    std::vector<double>& da = t.nodes_[ai].grad;
    std::vector<double>& db = t.nodes_[bi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += g[i];
      db[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const double* bd = b.value().data();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] -= bd[i];
  const std::size_t ai = a.index(), bi = b.index(), self = nodes_.size();
  return push(std::move(out), [ai, bi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    std::vector<double>& da = t.nodes_[ai].grad;
    std::vector<double>& db = t.nodes_[bi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += g[i];
      db[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const double* bd = b.value().data();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] *= bd[i];
  const std::size_t ai = a.index(), bi = b.index(), self = nodes_.size();
  return push(std::move(out), [ai, bi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& avd = t.nodes_[ai].value.values();
    const std::vector<double>& bvd = t.nodes_[bi].value.values();
    std::vector<double>& da = t.nodes_[ai].grad;
    std::vector<double>& db = t.nodes_[bi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += g[i] * bvd[i];
      db[i] += g[i] * avd[i];
    }
  });
}

Var Tape::affine(Var a, double scale, double shift) {
  Tensor out = a.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] = scale * od[i] + shift;
  const std::size_t ai = a.index(), self = nodes_.size();
  return push(std::move(out), [ai, self, scale](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    std::vector<double>& da = t.nodes_[ai].grad;
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += scale * g[i];
  });
}

Var Tape::add_rowvec(Var m, Var row) {
  const Tensor& mv = m.value();
  const Tensor& rv = row.value();
  if (mv.rank() != 2 || rv.rank() != 1 || mv.cols() != rv.size()) {
    throw ShapeError("add_rowvec: shapes disagree: " + mv.shape_str() + " vs " + rv.shape_str());
  }
  const std::size_t n = mv.rows(), c = mv.cols();
  Tensor out = mv;
  double* od = out.data();
  const double* rd = rv.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) od[i * c + j] += rd[j];
  const std::size_t mi = m.index(), ri = row.index(), self = nodes_.size();
  return push(std::move(out), [mi, ri, self, n, c](Tape& t) {
    const double* g = t.nodes_[self].grad.data();
    double* dm = t.nodes_[mi].grad.data();
    double* dr = t.nodes_[ri].grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        dm[i * c + j] += g[i * c + j];
        dr[j] += g[i * c + j];
      }
    }
  });
}

Var Tape::relu(Var x) {
  Tensor out = x.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] = od[i] > 0.0 ? od[i] : 0.0;
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(std::move(out), [xi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& xv = t.nodes_[xi].value.values();
    std::vector<double>& dx = t.nodes_[xi].grad;
    // gradient masked where the input is <= 0
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var Tape::tanh(Var x) {
  Tensor out = x.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] = std::tanh(od[i]);
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(std::move(out), [xi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& yv = t.nodes_[self].value.values();
    std::vector<double>& dx = t.nodes_[xi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

Var Tape::log(Var x) {
  Tensor out = x.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] = std::log(od[i]);
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(std::move(out), [xi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& xv = t.nodes_[xi].value.values();
    std::vector<double>& dx = t.nodes_[xi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xv[i];
  });
}

Var Tape::exp(Var x) {
  Tensor out = x.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) od[i] = std::exp(od[i]);
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(std::move(out), [xi, self](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& yv = t.nodes_[self].value.values();
    std::vector<double>& dx = t.nodes_[xi].grad;
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * yv[i];
  });
}

Var Tape::clamp(Var x, double lo, double hi) {
  if (!(lo < hi)) throw ShapeError("clamp: lo must be < hi");
  Tensor out = x.value();
  double* od = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (od[i] < lo) od[i] = lo;
    if (od[i] > hi) od[i] = hi;
  }
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(std::move(out), [xi, self, lo, hi](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    const std::vector<double>& xv = t.nodes_[xi].value.values();
    std::vector<double>& dx = t.nodes_[xi].grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) dx[i] += g[i];
  });
}

Var Tape::softmax_rows(Var logits) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.cols() < 2) {
    throw ShapeError("softmax_rows: need an [n x K] input with K >= 2, got " + lv.shape_str());
  }
  const std::size_t n = lv.rows(), kk = lv.cols();
  Tensor out({n, kk});
  const double* ld = lv.data();
  double* od = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* zrow = ld + i * kk;
    double* srow = od + i * kk;
    double zmax = zrow[0];
    for (std::size_t j = 1; j < kk; ++j) zmax = zrow[j] > zmax ? zrow[j] : zmax;
    double total = 0.0;
    for (std::size_t j = 0; j < kk; ++j) {
      srow[j] = std::exp(zrow[j] - zmax);
      total += srow[j];
    }
    for (std::size_t j = 0; j < kk; ++j) srow[j] /= total;
  }
  const std::size_t li = logits.index(), self = nodes_.size();
  return push(std::move(out), [li, self, n, kk](Tape& t) {
    const double* g = t.nodes_[self].grad.data();
    const double* s = t.nodes_[self].value.data();
    double* dz = t.nodes_[li].grad.data();
    // dz_j = s_j * (g_j - sum_p g_p s_p) per row
    for (std::size_t i = 0; i < n; ++i) {
      const double* gr = g + i * kk;
      const double* sr = s + i * kk;
      double dot = 0.0;
      for (std::size_t j = 0; j < kk; ++j) dot += gr[j] * sr[j];
      for (std::size_t j = 0; j < kk; ++j) dz[i * kk + j] += sr[j] * (gr[j] - dot);
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != n) {
      throw ShapeError("concat_cols: row counts disagree: " + parts[0].value().shape_str() +
                       " vs " + p.value().shape_str());
    }
    total += p.value().cols();
  }
  Tensor out({n, total});
  double* od = out.data();
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> indices;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    const std::size_t c = pv.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) od[i * total + off + j] = pv.at(i, j);
    offsets.push_back(off);
    widths.push_back(c);
    indices.push_back(p.index());
    off += c;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out),
              [indices = std::move(indices), offsets = std::move(offsets),
               widths = std::move(widths), self, n, total](Tape& t) {
                const double* g = t.nodes_[self].grad.data();
                for (std::size_t p = 0; p < indices.size(); ++p) {
                  double* dp = t.nodes_[indices[p]].grad.data();
                  const std::size_t c = widths[p], off = offsets[p];
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < c; ++j) dp[i * c + j] += g[i * total + off + j];
                }
              });
}

Var Tape::gather_cols(Var m, const std::vector<int>& col) {
  const Tensor& mv = m.value();
  if (mv.rank() != 2 || mv.rows() != col.size()) {
    throw ShapeError("gather_cols: need one column index per row of " + mv.shape_str());
  }
  const std::size_t n = mv.rows(), c = mv.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    const int j = col[i];
    if (j < 0 || static_cast<std::size_t>(j) >= c) {
      throw ShapeError("gather_cols: column index " + std::to_string(j) + " out of range for " +
                       mv.shape_str());
    }
    out[i] = mv.at(i, static_cast<std::size_t>(j));
  }
  const std::size_t mi = m.index(), self = nodes_.size();
  return push(std::move(out), [mi, self, col, c](Tape& t) {
    const std::vector<double>& g = t.nodes_[self].grad;
    double* dm = t.nodes_[mi].grad.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      dm[i * c + static_cast<std::size_t>(col[i])] += g[i];
  });
}

Var Tape::sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  const std::size_t xi = x.index(), self = nodes_.size();
  return push(Tensor::scalar(total), [xi, self](Tape& t) {
    const double g = t.nodes_[self].grad[0];
    std::vector<double>& dx = t.nodes_[xi].grad;
    for (double& d : dx) d += g;
  });
}

Var Tape::detach(Var x) { return leaf(x.value()); }

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ShapeError("backward: loss is not on this tape");
  const Tensor& lv = loss.value();
  if (!lv.is_scalar()) {
    throw ShapeError("backward: loss must be scalar, got shape " + lv.shape_str());
  }
  nodes_[loss.index()].grad[0] = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    if (nodes_[i].backprop) nodes_[i].backprop(*this);
  }
  for (const Node& node : nodes_) {
    if (!node.external) continue;
    std::vector<double>& pg = node.external->grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) pg[i] += node.grad[i];
  }
}

}  // namespace mmfuse
