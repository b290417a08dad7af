#include "lcreg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace lcreg {

namespace detail {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (g.numel() != value.numel()) {
    throw std::logic_error("gradient shape " + shape_to_string(g.shape()) +
                           " does not match value " + shape_to_string(value.shape()));
  }
  auto& buf = grad_buffer();
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

}  // namespace detail

Var Var::parameter(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(const Tensor&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  for (const auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward);
  else n->parents.clear();
  return Var(std::move(n));
}

void accumulate_grad(const Var& v, const Tensor& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                (loss.defined() ? shape_to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor::filled(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) {
      n->backward_fn(n->grad);
      // Interior gradients are not needed once propagated.
      n->grad = Tensor();
    }
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.value().numel() != b.value().numel() || a.rows() != b.rows()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
}

Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

// out += a * b over (r,k)x(k,c)
void gemm_nn(const double* a, const double* b, double* out, std::size_t r, std::size_t k,
             std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    double* o = out + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* bp = b + p * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += av * bp[j];
    }
  }
}

// out += a * b^T over (r,k)x(c,k)
void gemm_nt(const double* a, const double* b, double* out, std::size_t r, std::size_t k,
             std::size_t c) {
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < c; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      out[i * c + j] += s;
    }
  }
}

// out += a^T * b over a:(k,r), b:(k,c) -> (r,c)
void gemm_tn(const double* a, const double* b, double* out, std::size_t k, std::size_t r,
             std::size_t c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * r;
    const double* bp = b + p * c;
    for (std::size_t i = 0; i < r; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* o = out + i * c;
      for (std::size_t j = 0; j < c; ++j) o[j] += av * bp[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dims differ " + shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  Tensor out(matrix_shape(a.rows(), b.cols()));
  gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dims differ " + shape_to_string(a.shape()) +
                                " x " + shape_to_string(b.shape()) + "^T");
  }
  Tensor out(matrix_shape(a.rows(), b.rows()));
  gemm_nt(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.rows());
  return out;
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.requires_grad()) {
      Tensor ga(av.shape());
      gemm_nt(g.data().data(), bv.data().data(), ga.data().data(), av.rows(), bv.cols(), av.cols());
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb(bv.shape());
      gemm_tn(av.data().data(), g.data().data(), gb.data().data(), av.rows(), av.cols(), bv.cols());
      accumulate_grad(b, gb);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tensor out = matmul_nt(a.value(), b.value());
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t r = av.rows(), k = av.cols(), c = bv.rows();
    if (a.requires_grad()) {
      Tensor ga(av.shape());
      gemm_nn(g.data().data(), bv.data().data(), ga.data().data(), r, c, k);
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb(bv.shape());
      gemm_tn(g.data().data(), av.data().data(), gb.data().data(), r, c, k);
      accumulate_grad(b, gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    if (b.requires_grad()) {
      Tensor gb = g;
      for (auto& v : gb.storage()) v = -v;
      accumulate_grad(b, gb);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= b.value()[i];
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] *= a.value()[i];
      accumulate_grad(b, gb);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_op(std::move(out), {a}, [a, s](const Tensor& g) {
    Tensor ga = g;
    for (auto& v : ga.storage()) v *= s;
    accumulate_grad(a, ga);
  });
}

Var add_row(const Var& a, const Var& bias) {
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.value().numel() != c) {
    throw std::invalid_argument("add_row: bias length " + std::to_string(bias.value().numel()) +
                                " != cols " + std::to_string(c));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.value()[j];
  return make_op(std::move(out), {a, bias}, [a, bias, r, c](const Tensor& g) {
    accumulate_grad(a, g);
    if (bias.requires_grad()) {
      Tensor gb(bias.shape());
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      accumulate_grad(bias, gb);
    }
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {a}, [a](const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.numel(); ++i)
      if (!(a.value()[i] > 0.0)) ga[i] = 0.0;
    accumulate_grad(a, ga);
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (auto& v : out.storage()) {
    if (!std::isfinite(v)) throw std::invalid_argument("sigmoid: non-finite input");
    // Branch keeps exp() argument non-positive.
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return out;
}

Var sigmoid(const Var& a) {
  Tensor out = sigmoid(a.value());
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved = std::move(saved)](const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] *= saved[i] * (1.0 - saved[i]);
    accumulate_grad(a, ga);
  });
}

namespace {

void softmax_inplace(std::span<double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite logits");
    mx = std::max(mx, x);
  }
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : v) x /= s;
}

}  // namespace

Tensor softmax(const Tensor& v) {
  if (v.empty()) throw std::invalid_argument("softmax of empty vector");
  Tensor out = v;
  softmax_inplace(out.data());
  return out;
}

Var softmax_rows(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < r; ++i) softmax_inplace(out.row(i));
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, r, c, saved = std::move(saved)](const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < r; ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < c; ++j) dotp += g[i * c + j] * saved[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] = saved[i * c + j] * (g[i * c + j] - dotp);
    }
    accumulate_grad(a, ga);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  const std::size_t r = a.rows(), ca = a.cols(), cb = b.cols();
  if (b.rows() != r) {
    throw std::invalid_argument("concat_cols: row mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const std::size_t c = ca + cb;
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.value().data().begin() + i * ca, ca, out.data().begin() + i * c);
    std::copy_n(b.value().data().begin() + i * cb, cb, out.data().begin() + i * c + ca);
  }
  return make_op(std::move(out), {a, b}, [a, b, r, ca, cb, c](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(g.data().begin() + i * c, ca, ga.data().begin() + i * ca);
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(g.data().begin() + i * c + ca, cb, gb.data().begin() + i * cb);
      accumulate_grad(b, gb);
    }
  });
}

Var segment_mean(const Var& a, std::size_t group) {
  const std::size_t r = a.rows(), c = a.cols();
  if (group == 0 || r % group != 0) {
    throw std::invalid_argument("segment_mean: " + std::to_string(r) + " rows not divisible by " +
                                std::to_string(group));
  }
  const std::size_t n = r / group;
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out({n, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[(i / group) * c + j] += a.value()[i * c + j] * inv;
  return make_op(std::move(out), {a}, [a, r, c, group, inv](const Tensor& g) {
    Tensor ga(a.shape());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = g[(i / group) * c + j] * inv;
    accumulate_grad(a, ga);
  });
}

Var block_gram(const Var& a, const Var& c, std::size_t block) {
  const std::size_t r = a.rows(), d = a.cols();
  if (c.rows() != r || c.cols() != d) {
    throw std::invalid_argument("block_gram: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(c.shape()));
  }
  if (block == 0 || r % block != 0) {
    throw std::invalid_argument("block_gram: " + std::to_string(r) + " rows not divisible by " +
                                std::to_string(block));
  }
  const std::size_t nb = r / block;
  Tensor out({r, block});
  for (std::size_t b = 0; b < nb; ++b) {
    const double* ab = a.value().data().data() + b * block * d;
    const double* cb = c.value().data().data() + b * block * d;
    gemm_nt(ab, cb, out.data().data() + b * block * block, block, d, block);
  }
  return make_op(std::move(out), {a, c}, [a, c, nb, block, d](const Tensor& g) {
    // Per block: G (block x block), dA = G * C_b, dC = G^T * A_b.
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      for (std::size_t b = 0; b < nb; ++b)
        gemm_nn(g.data().data() + b * block * block, c.value().data().data() + b * block * d,
                ga.data().data() + b * block * d, block, block, d);
      accumulate_grad(a, ga);
    }
    if (c.requires_grad()) {
      Tensor gc(c.shape());
      for (std::size_t b = 0; b < nb; ++b)
        gemm_tn(g.data().data() + b * block * block, a.value().data().data() + b * block * d,
                gc.data().data() + b * block * d, block, block, d);
      accumulate_grad(c, gc);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [a](const Tensor& g) {
    accumulate_grad(a, g.reshaped(a.shape()));
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make_op(Tensor::scalar(s), {a}, [a](const Tensor& g) {
    accumulate_grad(a, Tensor::filled(a.shape(), g[0]));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().numel())); }

Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

double cross_entropy_logits(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw std::out_of_range("cross_entropy_logits: target " + std::to_string(target) +
                            " out of range for " + std::to_string(logits.size()) + " logits");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite logits");
    mx = std::max(mx, x);
  }
  double s = 0.0;
  for (double x : logits) s += std::exp(x - mx);
  return std::log(s) + mx - logits[target];
}

Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) {
    throw std::invalid_argument("cross_entropy_rows: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(r) + " rows");
  }
  Tensor probs = logits.value().reshaped({r, c});
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    total += cross_entropy_logits(logits.value().row(i), targets[i]);
    softmax_inplace(probs.row(i));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  const double inv = 1.0 / static_cast<double>(r);
  return make_op(Tensor::scalar(total * inv), {logits},
                 [logits, probs = std::move(probs), tg = std::move(tg), r, c, inv](const Tensor& g) {
                   Tensor gl(logits.shape());
                   const double s = g[0] * inv;
                   for (std::size_t i = 0; i < r; ++i) {
                     for (std::size_t j = 0; j < c; ++j) gl[i * c + j] = s * probs[i * c + j];
                     gl[i * c + tg[i]] -= s;
                   }
                   accumulate_grad(logits, gl);
                 });
}

}  // namespace lcreg
