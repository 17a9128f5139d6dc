#include "freqclick/autograd.h"

#include <algorithm>
#include <cmath>

namespace freqclick {

// ---------------------------------------------------------------- ParamSet

template <typename T>
Parameter<T>& ParamSet<T>::add(std::string name, Tensor<T> init, bool trainable, bool complex) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->grad = Tensor<T>(init.shape());
  p->value = std::move(init);
  p->trainable = trainable;
  p->complex = complex;
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParamSet<T>::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
const Parameter<T>* ParamSet<T>::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

template <typename T>
Parameter<T>& ParamSet<T>::get(const std::string& name) {
  auto* p = find(name);
  if (p == nullptr) throw ContractError("unknown parameter '" + name + "'");
  return *p;
}

template <typename T>
std::vector<Parameter<T>*> ParamSet<T>::all() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> ParamSet<T>::all() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> ParamSet<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params_) std::fill(p->grad.vec().begin(), p->grad.vec().end(), T(0));
}

template <typename T>
std::size_t ParamSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->trainable ? p->value.numel() : 0;
  return n;
}

// -------------------------------------------------------------------- Tape

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  return push(std::move(value), true, [](Tape&, const Tensor<T>&) {});
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Parameter<T>* ptr = &p;
  return push(p.value, p.trainable, [ptr](Tape&, const Tensor<T>& g) {
    auto& dst = ptr->grad.vec();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + nodes_[loss.id].value.shape().str());
  }
  for (auto& n : nodes_) {
    n.grad = Tensor<T>();
    n.has_grad = false;
  }
  grad_ref(loss.id)[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

// --------------------------------------------------------------------- ops

namespace ag {
namespace {

template <typename T>
bool needs(Var<T> v) {
  return v.tape->requires_grad(v);
}

template <typename T>
void accumulate(Tape<T>& tape, Var<T> v, const Tensor<T>& g) {
  if (!tape.requires_grad(v)) return;
  auto& dst = tape.grad_ref(v.id);
  const Tensor<T> r = reduce_to(g, dst.shape());
  for (std::size_t i = 0; i < r.numel(); ++i) dst[i] += r[i];
}

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + " expects [B,H,W,C], got " + s.str());
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto out = elementwise(BinaryOp::kAdd, a.value(), b.value());
  return a.tape->push(std::move(out), needs(a) || needs(b), [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto out = elementwise(BinaryOp::kSub, a.value(), b.value());
  return a.tape->push(std::move(out), needs(a) || needs(b), [a, b](Tape<T>& t, const Tensor<T>& g) {
    accumulate(t, a, g);
    if (t.requires_grad(b)) accumulate(t, b, elementwise(UnaryOp::kNeg, g));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto out = elementwise(BinaryOp::kMul, a.value(), b.value());
  return a.tape->push(std::move(out), needs(a) || needs(b), [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) accumulate(t, a, elementwise(BinaryOp::kMul, g, b.value()));
    if (t.requires_grad(b)) accumulate(t, b, elementwise(BinaryOp::kMul, g, a.value()));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return a.tape->push(std::move(out), needs(a), [a, s](Tape<T>& t, const Tensor<T>& g) {
    auto& dst = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i] * s;
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = elementwise(UnaryOp::kRelu, a.value());
  return a.tape->push(std::move(out), needs(a), [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = a.value();
    auto& dst = t.grad_ref(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (x[i] > T(0)) dst[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tensor<T> out(Shape{1}, freqclick::sum(a.value()));
  return a.tape->push(std::move(out), needs(a), [a](Tape<T>& t, const Tensor<T>& g) {
    auto& dst = t.grad_ref(a.id);
    for (auto& v : dst.vec()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias) {
  auto out = freqclick::dense(x.value(), weight.value(), bias.value());
  const bool rg = needs(x) || needs(weight) || needs(bias);
  return x.tape->push(std::move(out), rg, [x, weight, bias](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    const std::size_t cin = wv.dim(0), cout = wv.dim(1);
    const std::size_t rows = xv.numel() / cin;
    if (t.requires_grad(x)) {
      auto& dx = t.grad_ref(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data().data() + r * cout;
        T* dxr = dx.data().data() + r * cin;
        for (std::size_t i = 0; i < cin; ++i) {
          const T* wr = wv.data().data() + i * cout;
          T acc = 0;
          for (std::size_t o = 0; o < cout; ++o) acc += wr[o] * gr[o];
          dxr[i] += acc;
        }
      }
    }
    if (t.requires_grad(weight)) {
      auto& dw = t.grad_ref(weight.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data().data() + r * cout;
        const T* xr = xv.data().data() + r * cin;
        for (std::size_t i = 0; i < cin; ++i) {
          const T xi = xr[i];
          T* dwr = dw.data().data() + i * cout;
          for (std::size_t o = 0; o < cout; ++o) dwr[o] += xi * gr[o];
        }
      }
    }
    if (t.requires_grad(bias)) {
      auto& db = t.grad_ref(bias.id);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data().data() + r * cout;
        for (std::size_t o = 0; o < cout; ++o) db[o] += gr[o];
      }
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require_rank4(xs, "conv2d");
  if (ws.rank() != 4 || ws[2] != xs[3]) {
    throw ShapeError("conv2d weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (bias.value().numel() != ws[3]) throw ShapeError("conv2d bias length must equal C_out");
  if (stride < 1 || pad < 0) throw ContractError("conv2d stride must be >= 1 and pad >= 0");
  const long B = xs[0], H = xs[1], W = xs[2], Ci = xs[3];
  const long KH = ws[0], KW = ws[1], Co = ws[3];
  const long Ho = (H + 2 * pad - KH) / stride + 1;
  const long Wo = (W + 2 * pad - KW) / stride + 1;
  if (Ho < 1 || Wo < 1) throw ShapeError("conv2d output would be empty for input " + xs.str());

  Tensor<T> out(Shape{static_cast<std::size_t>(B), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo),
                      static_cast<std::size_t>(Co)});
  const T* xd = x.value().data().data();
  const T* wd = weight.value().data().data();
  const T* bd = bias.value().data().data();
  T* od = out.data().data();
  for (long b = 0; b < B; ++b) {
    for (long oy = 0; oy < Ho; ++oy) {
      for (long ox = 0; ox < Wo; ++ox) {
        T* o = od + ((b * Ho + oy) * Wo + ox) * Co;
        for (long co = 0; co < Co; ++co) o[co] = bd[co];
        for (long ky = 0; ky < KH; ++ky) {
          const long iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (long kx = 0; kx < KW; ++kx) {
            const long ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const T* xin = xd + ((b * H + iy) * W + ix) * Ci;
            const T* wk = wd + (ky * KW + kx) * Ci * Co;
            for (long ci = 0; ci < Ci; ++ci) {
              const T xv = xin[ci];
              const T* wr = wk + ci * Co;
              for (long co = 0; co < Co; ++co) o[co] += xv * wr[co];
            }
          }
        }
      }
    }
  }

  const bool rg = needs(x) || needs(weight) || needs(bias);
  return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    const T* gd = g.data().data();
    const T* xd2 = x.value().data().data();
    const T* wd2 = weight.value().data().data();
    T* dx = t.requires_grad(x) ? t.grad_ref(x.id).data().data() : nullptr;
    T* dw = t.requires_grad(weight) ? t.grad_ref(weight.id).data().data() : nullptr;
    T* db = t.requires_grad(bias) ? t.grad_ref(bias.id).data().data() : nullptr;
    for (long b = 0; b < B; ++b) {
      for (long oy = 0; oy < Ho; ++oy) {
        for (long ox = 0; ox < Wo; ++ox) {
          const T* go = gd + ((b * Ho + oy) * Wo + ox) * Co;
          if (db != nullptr) {
            for (long co = 0; co < Co; ++co) db[co] += go[co];
          }
          for (long ky = 0; ky < KH; ++ky) {
            const long iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (long kx = 0; kx < KW; ++kx) {
              const long ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const std::size_t xoff = ((b * H + iy) * W + ix) * Ci;
              const std::size_t woff = (ky * KW + kx) * Ci * Co;
              for (long ci = 0; ci < Ci; ++ci) {
                const T* wr = wd2 + woff + ci * Co;
                if (dx != nullptr) {
                  T acc = 0;
                  for (long co = 0; co < Co; ++co) acc += wr[co] * go[co];
                  dx[xoff + ci] += acc;
                }
                if (dw != nullptr) {
                  const T xv = xd2[xoff + ci];
                  T* dwr = dw + woff + ci * Co;
                  for (long co = 0; co < Co; ++co) dwr[co] += xv * go[co];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> x, Var<T> weight, Var<T> bias) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require_rank4(xs, "depthwise_conv2d");
  if (ws.rank() != 3 || ws[2] != xs[3] || ws[0] % 2 == 0 || ws[1] % 2 == 0) {
    throw ShapeError("depthwise weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (bias.value().numel() != xs[3]) throw ShapeError("depthwise bias length must equal C");
  const long B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const long KH = ws[0], KW = ws[1], ph = KH / 2, pw = KW / 2;
  Tensor<T> out(xs);
  const T* xd = x.value().data().data();
  const T* wd = weight.value().data().data();
  const T* bd = bias.value().data().data();
  T* od = out.data().data();
  for (long b = 0; b < B; ++b) {
    for (long y = 0; y < H; ++y) {
      for (long xx = 0; xx < W; ++xx) {
        T* o = od + ((b * H + y) * W + xx) * C;
        for (long c = 0; c < C; ++c) o[c] = bd[c];
        for (long ky = 0; ky < KH; ++ky) {
          const long iy = y - ph + ky;
          if (iy < 0 || iy >= H) continue;
          for (long kx = 0; kx < KW; ++kx) {
            const long ix = xx - pw + kx;
            if (ix < 0 || ix >= W) continue;
            const T* xin = xd + ((b * H + iy) * W + ix) * C;
            const T* wk = wd + (ky * KW + kx) * C;
            for (long c = 0; c < C; ++c) o[c] += xin[c] * wk[c];
          }
        }
      }
    }
  }
  const bool rg = needs(x) || needs(weight) || needs(bias);
  return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    const T* gd = g.data().data();
    const T* xd2 = x.value().data().data();
    const T* wd2 = weight.value().data().data();
    T* dx = t.requires_grad(x) ? t.grad_ref(x.id).data().data() : nullptr;
    T* dw = t.requires_grad(weight) ? t.grad_ref(weight.id).data().data() : nullptr;
    T* db = t.requires_grad(bias) ? t.grad_ref(bias.id).data().data() : nullptr;
    for (long b = 0; b < B; ++b) {
      for (long y = 0; y < H; ++y) {
        for (long xx = 0; xx < W; ++xx) {
          const T* go = gd + ((b * H + y) * W + xx) * C;
          if (db != nullptr) {
            for (long c = 0; c < C; ++c) db[c] += go[c];
          }
          for (long ky = 0; ky < KH; ++ky) {
            const long iy = y - ph + ky;
            if (iy < 0 || iy >= H) continue;
            for (long kx = 0; kx < KW; ++kx) {
              const long ix = xx - pw + kx;
              if (ix < 0 || ix >= W) continue;
              const std::size_t xoff = ((b * H + iy) * W + ix) * C;
              const std::size_t woff = (ky * KW + kx) * C;
              if (dx != nullptr) {
                for (long c = 0; c < C; ++c) dx[xoff + c] += wd2[woff + c] * go[c];
              }
              if (dw != nullptr) {
                for (long c = 0; c < C; ++c) dw[woff + c] += xd2[xoff + c] * go[c];
              }
            }
          }
        }
      }
    }
  });
}

namespace {

// Shared normalization kernel. `members(s)` enumerates statistic set s as
// (offset, channel) pairs in ascending memory order.
template <typename T>
struct NormPlan {
  std::size_t sets = 0;
  std::vector<std::vector<std::size_t>> offsets;  // per set, element offsets
};

template <typename T>
NormPlan<T> group_plan(const Shape& s, int groups) {
  const std::size_t B = s[0], HW = s[1] * s[2], C = s[3], cpg = C / groups;
  NormPlan<T> plan;
  plan.sets = B * groups;
  plan.offsets.resize(plan.sets);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gi = 0; gi < static_cast<std::size_t>(groups); ++gi) {
      auto& v = plan.offsets[b * groups + gi];
      v.reserve(HW * cpg);
      for (std::size_t p = 0; p < HW; ++p) {
        for (std::size_t c = gi * cpg; c < (gi + 1) * cpg; ++c) v.push_back((b * HW + p) * C + c);
      }
    }
  }
  return plan;
}

template <typename T>
NormPlan<T> channel_plan(const Shape& s) {
  const std::size_t N = s[0] * s[1] * s[2], C = s[3];
  NormPlan<T> plan;
  plan.sets = C;
  plan.offsets.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    auto& v = plan.offsets[c];
    v.reserve(N);
    for (std::size_t p = 0; p < N; ++p) v.push_back(p * C + c);
  }
  return plan;
}

// Normalize each set with its own statistics; returns xhat and per-set rstd,
// mean and (biased) variance.
template <typename T>
void normalize_sets(const Tensor<T>& x, const NormPlan<T>& plan, T eps, Tensor<T>& xhat, std::vector<T>& rstd,
                    std::vector<T>& means, std::vector<T>& vars) {
  xhat = Tensor<T>(x.shape());
  rstd.assign(plan.sets, T(0));
  means.assign(plan.sets, T(0));
  vars.assign(plan.sets, T(0));
  for (std::size_t s = 0; s < plan.sets; ++s) {
    const auto& offs = plan.offsets[s];
    const T n = static_cast<T>(offs.size());
    T m = 0;
    for (auto o : offs) m += x[o];
    m /= n;
    T v = 0;
    for (auto o : offs) v += (x[o] - m) * (x[o] - m);
    v /= n;
    const T r = T(1) / std::sqrt(v + eps);
    for (auto o : offs) xhat[o] = (x[o] - m) * r;
    rstd[s] = r;
    means[s] = m;
    vars[s] = v;
  }
}

template <typename T>
void normalize_backward(const Tensor<T>& dxhat, const Tensor<T>& xhat, const NormPlan<T>& plan,
                        const std::vector<T>& rstd, Tensor<T>& dx) {
  for (std::size_t s = 0; s < plan.sets; ++s) {
    const auto& offs = plan.offsets[s];
    const T n = static_cast<T>(offs.size());
    T mg = 0, mgx = 0;
    for (auto o : offs) {
      mg += dxhat[o];
      mgx += dxhat[o] * xhat[o];
    }
    mg /= n;
    mgx /= n;
    for (auto o : offs) dx[o] += rstd[s] * (dxhat[o] - mg - xhat[o] * mgx);
  }
}

}  // namespace

template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps) {
  const auto& xs = x.shape();
  require_rank4(xs, "group_norm");
  const std::size_t C = xs[3];
  if (groups < 1 || C % static_cast<std::size_t>(groups) != 0) {
    throw ShapeError("group count " + std::to_string(groups) + " does not divide C=" + std::to_string(C));
  }
  if (gamma.value().numel() != C || beta.value().numel() != C) throw ShapeError("group_norm affine length != C");
  auto plan = std::make_shared<NormPlan<T>>(group_plan<T>(xs, groups));
  auto xhat = std::make_shared<Tensor<T>>();
  auto rstd = std::make_shared<std::vector<T>>();
  std::vector<T> means, vars;
  normalize_sets(x.value(), *plan, eps, *xhat, *rstd, means, vars);
  Tensor<T> out(xs);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (*xhat)[i] * gv[i % C] + bv[i % C];
  const bool rg = needs(x) || needs(gamma) || needs(beta);
  return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& gam = gamma.value();
    if (t.requires_grad(gamma)) {
      auto& dg = t.grad_ref(gamma.id);
      for (std::size_t i = 0; i < g.numel(); ++i) dg[i % C] += g[i] * (*xhat)[i];
    }
    if (t.requires_grad(beta)) {
      auto& db = t.grad_ref(beta.id);
      for (std::size_t i = 0; i < g.numel(); ++i) db[i % C] += g[i];
    }
    if (t.requires_grad(x)) {
      Tensor<T> dxhat(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) dxhat[i] = g[i] * gam[i % C];
      normalize_backward(dxhat, *xhat, *plan, *rstd, t.grad_ref(x.id));
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  const BatchNormOptions& opt) {
  const auto& xs = x.shape();
  require_rank4(xs, "batch_norm");
  const std::size_t C = xs[3];
  if (gamma.value().numel() != C || beta.value().numel() != C || running_mean.value.numel() != C ||
      running_var.value.numel() != C) {
    throw ShapeError("batch_norm parameter length != C");
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  const bool rg = needs(x) || needs(gamma) || needs(beta);

  if (!opt.training) {
    std::vector<T> r(C), m(C);
    for (std::size_t c = 0; c < C; ++c) {
      r[c] = T(1) / std::sqrt(running_var.value[c] + static_cast<T>(opt.eps));
      m[c] = running_mean.value[c];
    }
    Tensor<T> out(xs);
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.numel(); ++i) {
      const std::size_t c = i % C;
      out[i] = (xv[i] - m[c]) * r[c] * gv[c] + bv[c];
    }
    return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
      const auto& xv2 = x.value();
      const auto& gam = gamma.value();
      if (t.requires_grad(gamma)) {
        auto& dg = t.grad_ref(gamma.id);
        for (std::size_t i = 0; i < g.numel(); ++i) dg[i % C] += g[i] * (xv2[i] - m[i % C]) * r[i % C];
      }
      if (t.requires_grad(beta)) {
        auto& db = t.grad_ref(beta.id);
        for (std::size_t i = 0; i < g.numel(); ++i) db[i % C] += g[i];
      }
      if (t.requires_grad(x)) {
        auto& dx = t.grad_ref(x.id);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * gam[i % C] * r[i % C];
      }
    });
  }

  auto plan = std::make_shared<NormPlan<T>>(channel_plan<T>(xs));
  auto xhat = std::make_shared<Tensor<T>>();
  auto rstd = std::make_shared<std::vector<T>>();
  std::vector<T> means, vars;
  normalize_sets(x.value(), *plan, static_cast<T>(opt.eps), *xhat, *rstd, means, vars);
  if (x.tape->grad_enabled()) {
    const T n = static_cast<T>(xs[0] * xs[1] * xs[2]);
    const T mom = static_cast<T>(opt.momentum);
    for (std::size_t c = 0; c < C; ++c) {
      const T unbiased = n > T(1) ? vars[c] * n / (n - T(1)) : vars[c];
      running_mean.value[c] = (T(1) - mom) * running_mean.value[c] + mom * means[c];
      running_var.value[c] = (T(1) - mom) * running_var.value[c] + mom * unbiased;
    }
  }
  Tensor<T> out(xs);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (*xhat)[i] * gv[i % C] + bv[i % C];
  return x.tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& gam = gamma.value();
    if (t.requires_grad(gamma)) {
      auto& dg = t.grad_ref(gamma.id);
      for (std::size_t i = 0; i < g.numel(); ++i) dg[i % C] += g[i] * (*xhat)[i];
    }
    if (t.requires_grad(beta)) {
      auto& db = t.grad_ref(beta.id);
      for (std::size_t i = 0; i < g.numel(); ++i) db[i % C] += g[i];
    }
    if (t.requires_grad(x)) {
      Tensor<T> dxhat(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) dxhat[i] = g[i] * gam[i % C];
      normalize_backward(dxhat, *xhat, *plan, *rstd, t.grad_ref(x.id));
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end) {
  const auto& xs = x.shape();
  const std::size_t C = xs[xs.rank() - 1];
  if (begin >= end || end > C) throw ShapeError("channel slice out of range");
  const std::size_t w = end - begin, rows = x.value().numel() / C;
  auto dims = xs.dims();
  dims.back() = w;
  Tensor<T> out(Shape(dims, xs.tags()));
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data().data() + r * C + begin, w, out.data().data() + r * w);
  }
  return x.tape->push(std::move(out), needs(x), [=](Tape<T>& t, const Tensor<T>& g) {
    auto& dx = t.grad_ref(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) dx[r * C + begin + c] += g[r * w + c];
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const auto& s0 = parts[0].shape();
  std::size_t C = 0;
  bool rg = false;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.rank() != s0.rank()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i + 1 < s.rank(); ++i) {
      if (s[i] != s0[i]) throw ShapeError("concat leading extents differ: " + s.str() + " vs " + s0.str());
    }
    widths.push_back(s[s.rank() - 1]);
    C += widths.back();
    rg = rg || needs(p);
  }
  const std::size_t rows = parts[0].value().numel() / widths[0];
  auto dims = s0.dims();
  dims.back() = C;
  Tensor<T> out(Shape(dims, s0.tags()));
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data().data() + r * widths[k], widths[k], out.data().data() + r * C + off);
    }
    off += widths[k];
  }
  return parts[0].tape->push(std::move(out), rg, [=](Tape<T>& t, const Tensor<T>& g) {
    std::size_t o = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.requires_grad(parts[k])) {
        auto& dp = t.grad_ref(parts[k].id);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) dp[r * widths[k] + c] += g[r * C + o + c];
        }
      }
      o += widths[k];
    }
  });
}

}  // namespace ag

namespace {

struct Lerp {
  std::size_t i0, i1;
  double w1;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t out) {
  std::vector<Lerp> tab(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    tab[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return tab;
}

}  // namespace

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto& xs = x.shape();
  ag::require_rank4(xs, "resize_bilinear");
  const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const auto ty = lerp_table(H, out_h);
  const auto tx = lerp_table(W, out_w);
  Tensor<T> out(Shape{B, out_h, out_w, C});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& ly = ty[oy];
      const T wy1 = static_cast<T>(ly.w1), wy0 = T(1) - wy1;
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& lx = tx[ox];
        const T wx1 = static_cast<T>(lx.w1), wx0 = T(1) - wx1;
        const T* p00 = x.data().data() + ((b * H + ly.i0) * W + lx.i0) * C;
        const T* p01 = x.data().data() + ((b * H + ly.i0) * W + lx.i1) * C;
        const T* p10 = x.data().data() + ((b * H + ly.i1) * W + lx.i0) * C;
        const T* p11 = x.data().data() + ((b * H + ly.i1) * W + lx.i1) * C;
        T* o = out.data().data() + ((b * out_h + oy) * out_w + ox) * C;
        for (std::size_t c = 0; c < C; ++c) {
          o[c] = wy0 * (wx0 * p00[c] + wx1 * p01[c]) + wy1 * (wx0 * p10[c] + wx1 * p11[c]);
        }
      }
    }
  }
  return out;
}

namespace ag {

template <typename T>
Var<T> resize_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w) {
  auto out = freqclick::resize_bilinear(x.value(), out_h, out_w);
  const auto xs = x.shape();
  return x.tape->push(std::move(out), needs(x), [=](Tape<T>& t, const Tensor<T>& g) {
    const std::size_t B = xs[0], H = xs[1], W = xs[2], C = xs[3];
    const auto ty = lerp_table(H, out_h);
    const auto tx = lerp_table(W, out_w);
    auto& dx = t.grad_ref(x.id);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& ly = ty[oy];
        const T wy1 = static_cast<T>(ly.w1), wy0 = T(1) - wy1;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& lx = tx[ox];
          const T wx1 = static_cast<T>(lx.w1), wx0 = T(1) - wx1;
          const T* go = g.data().data() + ((b * out_h + oy) * out_w + ox) * C;
          T* d00 = dx.data().data() + ((b * H + ly.i0) * W + lx.i0) * C;
          T* d01 = dx.data().data() + ((b * H + ly.i0) * W + lx.i1) * C;
          T* d10 = dx.data().data() + ((b * H + ly.i1) * W + lx.i0) * C;
          T* d11 = dx.data().data() + ((b * H + ly.i1) * W + lx.i1) * C;
          for (std::size_t c = 0; c < C; ++c) {
            d00[c] += wy0 * wx0 * go[c];
            d01[c] += wy0 * wx1 * go[c];
            d10[c] += wy1 * wx0 * go[c];
            d11[c] += wy1 * wx1 * go[c];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const auto& ls = logits.shape();
  const std::size_t K = ls[ls.rank() - 1];
  const std::size_t rows = logits.value().numel() / K;
  if (labels.size() != rows) throw ShapeError("label count does not match logit rows");
  auto probs = std::make_shared<Tensor<T>>(softmax(logits.value()));
  const auto logp = log_softmax(logits.value());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw ContractError("label out of range");
    loss -= logp[r * K + y];
  }
  loss /= static_cast<T>(rows);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->push(Tensor<T>(Shape{1}, loss), needs(logits),
                           [=, lab = std::move(lab)](Tape<T>& t, const Tensor<T>& g) {
                             auto& dl = t.grad_ref(logits.id);
                             const T s = g[0] / static_cast<T>(rows);
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t k = 0; k < K; ++k) {
                                 const T onehot = static_cast<int>(k) == lab[r] ? T(1) : T(0);
                                 dl[r * K + k] += s * ((*probs)[r * K + k] - onehot);
                               }
                             }
                           });
}

#define FREQCLICK_AG_INSTANTIATE(T)                                                                      \
  template Var<T> add(Var<T>, Var<T>);                                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                                   \
  template Var<T> scale(Var<T>, T);                                                                      \
  template Var<T> relu(Var<T>);                                                                          \
  template Var<T> sum(Var<T>);                                                                           \
  template Var<T> mean(Var<T>);                                                                          \
  template Var<T> dense(Var<T>, Var<T>, Var<T>);                                                         \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                              \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>, Var<T>);                                              \
  template Var<T> group_norm(Var<T>, Var<T>, Var<T>, int, T);                                            \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, const BatchNormOptions&); \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                                      \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                           \
  template Var<T> resize_bilinear(Var<T>, std::size_t, std::size_t);                                     \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);

FREQCLICK_AG_INSTANTIATE(float)
FREQCLICK_AG_INSTANTIATE(double)

}  // namespace ag

template class ParamSet<float>;
template class ParamSet<double>;
template struct Var<float>;
template struct Var<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> resize_bilinear(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> resize_bilinear(const Tensor<double>&, std::size_t, std::size_t);

}  // namespace freqclick
