#pragma once

// Reverse-mode autodiff over Tensor<S>. Backward closures build graph ops
// themselves, so gradients are differentiable again when requested
// (create_graph) -- needed for gradient penalties.

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aslsr/conv3d.hpp"
#include "aslsr/tensor.hpp"

namespace aslsr::ad {

template <class S>
struct Node;

template <class S>
using Var = std::shared_ptr<Node<S>>;

template <class S>
struct Node {
  Tensor<S> value;
  bool requires_grad = false;
  std::vector<Var<S>> parents;
  // Maps the gradient at this node to gradients at each parent slot.
  std::function<std::vector<Var<S>>(const Var<S>&)> backward;
  const char* op = "leaf";
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad && grad_enabled();
  return n;
}

template <class S>
Var<S> constant(Tensor<S> value) {
  return leaf(std::move(value), false);
}

template <class S>
Var<S> detach(const Var<S>& v) {
  return leaf(Tensor<S>(v->value), false);
}

template <class S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
               std::function<std::vector<Var<S>>(const Var<S>&)> backward, const char* op) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward = std::move(backward);
    }
  }
  return n;
}

namespace detail {

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.dims != b.dims)
    throw GeometryError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                        b.shape_str());
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape(a->value, b->value, "add");
  Tensor<S> out(a->value.dims);
  out.data = a->value.data + b->value.data;
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g, g}; }, "add");
}

template <class S>
Var<S> neg(const Var<S>& a) {
  Tensor<S> out(a->value.dims);
  out.data = -a->value.data;
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{neg(g)}; }, "neg");
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape(a->value, b->value, "sub");
  Tensor<S> out(a->value.dims);
  out.data = a->value.data - b->value.data;
  return make_op<S>(std::move(out), {a, b},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g, neg(g)}; }, "sub");
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::check_same_shape(a->value, b->value, "mul");
  Tensor<S> out(a->value.dims);
  out.data = a->value.data * b->value.data;
  return make_op<S>(std::move(out), {a, b},
                    [a, b](const Var<S>& g) {
                      return std::vector<Var<S>>{mul(g, b), mul(g, a)};
                    },
                    "mul");
}

template <class S>
Var<S> mul_scalar(const Var<S>& a, S c) {
  Tensor<S> out(a->value.dims);
  out.data = a->value.data * c;
  return make_op<S>(std::move(out), {a},
                    [c](const Var<S>& g) { return std::vector<Var<S>>{mul_scalar(g, c)}; },
                    "mul_scalar");
}

template <class S>
Var<S> add_scalar(const Var<S>& a, S c) {
  Tensor<S> out(a->value.dims);
  out.data = a->value.data + c;
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{g}; }, "add_scalar");
}

/// Elementwise power with constant exponent (values must stay positive for
/// non-integer exponents).
template <class S>
Var<S> pow_scalar(const Var<S>& a, double p) {
  Tensor<S> out(a->value.dims);
  out.data = a->value.data.pow(S(p));
  return make_op<S>(std::move(out), {a},
                    [a, p](const Var<S>& g) {
                      Var<S> d = mul_scalar(pow_scalar(a, p - 1.0), S(p));
                      return std::vector<Var<S>>{mul(g, d)};
                    },
                    "pow_scalar");
}

template <class S>
Var<S> leaky_relu(const Var<S>& a, S slope) {
  Tensor<S> out(a->value.dims);
  out.data = (a->value.data > S(0)).select(a->value.data, a->value.data * slope);
  // Gate is a constant w.r.t. the graph (piecewise-linear activation).
  Tensor<S> gate(a->value.dims);
  gate.data = (a->value.data > S(0)).select(
      Eigen::Array<S, Eigen::Dynamic, 1>::Constant(a->value.size(), S(1)),
      Eigen::Array<S, Eigen::Dynamic, 1>::Constant(a->value.size(), slope));
  auto gate_var = constant(std::move(gate));
  return make_op<S>(std::move(out), {a},
                    [gate_var](const Var<S>& g) {
                      return std::vector<Var<S>>{mul(g, gate_var)};
                    },
                    "leaky_relu");
}

// ---- reductions / broadcasts ---------------------------------------------

template <class S>
Var<S> broadcast_full(const Var<S>& a, const std::vector<Index>& dims);

template <class S>
Var<S> sum_all(const Var<S>& a) {
  Tensor<S> out({1});
  out.data[0] = a->value.data.sum();
  const std::vector<Index> dims = a->value.dims;
  return make_op<S>(std::move(out), {a},
                    [dims](const Var<S>& g) {
                      return std::vector<Var<S>>{broadcast_full(g, dims)};
                    },
                    "sum_all");
}

template <class S>
Var<S> broadcast_full(const Var<S>& a, const std::vector<Index>& dims) {
  if (!a->value.is_scalar()) throw GeometryError("broadcast_full: input must be scalar");
  Tensor<S> out = Tensor<S>::constant_full(dims, a->value.data[0]);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{sum_all(g)}; },
                    "broadcast_full");
}

template <class S>
Var<S> mean_all(const Var<S>& a) {
  return mul_scalar(sum_all(a), S(1) / S(a->value.size()));
}

template <class S>
Var<S> broadcast_spatial(const Var<S>& a, const std::vector<Index>& dims);

/// (C,X,Y,Z) -> (C,1,1,1) sum over the spatial axes.
template <class S>
Var<S> spatial_sum(const Var<S>& a) {
  const Index C = a->value.c(), V = a->value.spatial_size();
  Tensor<S> out({C, 1, 1, 1});
  for (Index c = 0; c < C; ++c)
    out.data[c] = a->value.data.segment(c * V, V).sum();
  const std::vector<Index> dims = a->value.dims;
  return make_op<S>(std::move(out), {a},
                    [dims](const Var<S>& g) {
                      return std::vector<Var<S>>{broadcast_spatial(g, dims)};
                    },
                    "spatial_sum");
}

/// (C,1,1,1) -> (C,X,Y,Z) replicate each channel value over space.
template <class S>
Var<S> broadcast_spatial(const Var<S>& a, const std::vector<Index>& dims) {
  if (a->value.dims.size() != 4 || a->value.spatial_size() != 1)
    throw GeometryError("broadcast_spatial: input must be (C,1,1,1), got " +
                        a->value.shape_str());
  if (dims.size() != 4 || dims[0] != a->value.c())
    throw GeometryError("broadcast_spatial: channel mismatch for " + a->value.shape_str());
  Tensor<S> out(dims);
  const Index V = out.spatial_size();
  for (Index c = 0; c < out.c(); ++c)
    out.data.segment(c * V, V).setConstant(a->value.data[c]);
  return make_op<S>(std::move(out), {a},
                    [](const Var<S>& g) { return std::vector<Var<S>>{spatial_sum(g)}; },
                    "broadcast_spatial");
}

// ---- channel ops ----------------------------------------------------------

template <class S>
Var<S> slice_c(const Var<S>& a, Index start, Index count);

template <class S>
Var<S> embed_c(const Var<S>& a, Index start, Index total_c);

template <class S>
Var<S> concat_c(const Var<S>& a, const Var<S>& b) {
  if (a->value.spatial_shape() != b->value.spatial_shape())
    throw GeometryError("concat_c: spatial mismatch " + a->value.shape_str() + " vs " +
                        b->value.shape_str());
  const Index ca = a->value.c(), cb = b->value.c();
  Tensor<S> out({ca + cb, a->value.x(), a->value.y(), a->value.z()});
  out.data.head(a->value.size()) = a->value.data;
  out.data.tail(b->value.size()) = b->value.data;
  return make_op<S>(std::move(out), {a, b},
                    [ca, cb](const Var<S>& g) {
                      return std::vector<Var<S>>{slice_c(g, 0, ca), slice_c(g, ca, cb)};
                    },
                    "concat_c");
}

template <class S>
Var<S> slice_c(const Var<S>& a, Index start, Index count) {
  const Index C = a->value.c(), V = a->value.spatial_size();
  if (start < 0 || count < 1 || start + count > C)
    throw GeometryError("slice_c: range out of bounds");
  Tensor<S> out({count, a->value.x(), a->value.y(), a->value.z()});
  out.data = a->value.data.segment(start * V, count * V);
  return make_op<S>(std::move(out), {a},
                    [start, C](const Var<S>& g) {
                      return std::vector<Var<S>>{embed_c(g, start, C)};
                    },
                    "slice_c");
}

template <class S>
Var<S> embed_c(const Var<S>& a, Index start, Index total_c) {
  const Index C = a->value.c(), V = a->value.spatial_size();
  if (start < 0 || start + C > total_c) throw GeometryError("embed_c: range out of bounds");
  Tensor<S> out = Tensor<S>::zeros({total_c, a->value.x(), a->value.y(), a->value.z()});
  out.data.segment(start * V, C * V) = a->value.data;
  return make_op<S>(std::move(out), {a},
                    [start, C](const Var<S>& g) {
                      return std::vector<Var<S>>{slice_c(g, start, C)};
                    },
                    "embed_c");
}

// ---- spatial ops -----------------------------------------------------------

template <class S>
Var<S> pad3_adjoint(const Var<S>& a, const Shape3& lo, const Shape3& hi, PadMode mode);

template <class S>
Var<S> pad3(const Var<S>& a, const Shape3& lo, const Shape3& hi, PadMode mode) {
  return make_op<S>(pad3_apply(a->value, lo, hi, mode), {a},
                    [lo, hi, mode](const Var<S>& g) {
                      return std::vector<Var<S>>{pad3_adjoint(g, lo, hi, mode)};
                    },
                    "pad3");
}

template <class S>
Var<S> pad3_adjoint(const Var<S>& a, const Shape3& lo, const Shape3& hi, PadMode mode) {
  return make_op<S>(pad3_adjoint_apply(a->value, lo, hi, mode), {a},
                    [lo, hi, mode](const Var<S>& g) {
                      return std::vector<Var<S>>{pad3(g, lo, hi, mode)};
                    },
                    "pad3_adjoint");
}

/// Crop lo/hi voxels per axis (adjoint of zero padding).
template <class S>
Var<S> crop3(const Var<S>& a, const Shape3& lo, const Shape3& hi) {
  return pad3_adjoint(a, lo, hi, PadMode::zero);
}

template <class S>
Var<S> resize3_adjoint(const Var<S>& a, const Shape3& source);

/// Per-channel trilinear align-corners resize.
template <class S>
Var<S> resize3(const Var<S>& a, const Shape3& target) {
  const Shape3 source = a->value.spatial_shape();
  return make_op<S>(resize3_linear(a->value, target), {a},
                    [source](const Var<S>& g) {
                      return std::vector<Var<S>>{resize3_adjoint(g, source)};
                    },
                    "resize3");
}

template <class S>
Var<S> resize3_adjoint(const Var<S>& a, const Shape3& source) {
  const Shape3 target = a->value.spatial_shape();
  return make_op<S>(resize3_linear_adjoint(a->value, source), {a},
                    [target](const Var<S>& g) {
                      return std::vector<Var<S>>{resize3(g, target)};
                    },
                    "resize3_adjoint");
}

// ---- convolution triple ----------------------------------------------------
//
// Bilinear identities (inner products over all elements):
//   <Y, C(x,W)> = <K(Y,x), W> = <x, T(Y,W)>
// so each member's backward is expressed through the other two, which keeps
// every gradient differentiable once more.

template <class S>
Var<S> conv3d_input(const Var<S>& g, const Var<S>& w, const Shape3& in_spatial,
                    const Stride3& st);

template <class S>
Var<S> conv3d_weight(const Var<S>& g, const Var<S>& x, const std::vector<Index>& wdims,
                     const Stride3& st);

template <class S>
Var<S> conv3d(const Var<S>& x, const Var<S>& w, const Stride3& st = {1, 1, 1}) {
  const Shape3 in_spatial = x->value.spatial_shape();
  const std::vector<Index> wdims = w->value.dims;
  return make_op<S>(conv3d_forward(x->value, w->value, st), {x, w},
                    [x, w, in_spatial, wdims, st](const Var<S>& g) {
                      return std::vector<Var<S>>{conv3d_input(g, w, in_spatial, st),
                                                 conv3d_weight(g, x, wdims, st)};
                    },
                    "conv3d");
}

template <class S>
Var<S> conv3d_input(const Var<S>& g, const Var<S>& w, const Shape3& in_spatial,
                    const Stride3& st) {
  return make_op<S>(conv3d_input_grad(g->value, w->value, in_spatial, st), {g, w},
                    [g, w, st](const Var<S>& u) {
                      return std::vector<Var<S>>{conv3d(u, w, st),
                                                 conv3d_weight(g, u, w->value.dims, st)};
                    },
                    "conv3d_input");
}

template <class S>
Var<S> conv3d_weight(const Var<S>& g, const Var<S>& x, const std::vector<Index>& wdims,
                     const Stride3& st) {
  const Shape3 in_spatial = x->value.spatial_shape();
  return make_op<S>(conv3d_weight_grad(g->value, x->value, wdims, st), {g, x},
                    [g, x, in_spatial, st](const Var<S>& u) {
                      return std::vector<Var<S>>{conv3d(x, u, st),
                                                 conv3d_input(g, u, in_spatial, st)};
                    },
                    "conv3d_weight");
}

/// Add a per-channel bias (C,1,1,1) to a (C,X,Y,Z) activation.
template <class S>
Var<S> add_bias(const Var<S>& x, const Var<S>& b) {
  return add(x, broadcast_spatial(b, x->value.dims));
}

// ---- operator sugar --------------------------------------------------------

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <class S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <class S>
Var<S> operator-(const Var<S>& a) { return neg(a); }
template <class S>
Var<S> operator*(S c, const Var<S>& a) { return mul_scalar(a, c); }
template <class S>
Var<S> operator*(const Var<S>& a, S c) { return mul_scalar(a, c); }

// ---- backward --------------------------------------------------------------

namespace detail {

template <class S>
std::vector<Node<S>*> topo_order(Node<S>* root) {
  // Iterative DFS postorder over parent edges; reverse-postorder is a
  // topological order (every consumer precedes its inputs).
  std::vector<Node<S>*> post;
  std::unordered_set<Node<S>*> visited;
  struct Frame {
    Node<S>* n;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  if (root->requires_grad) {
    stack.push_back({root});
    visited.insert(root);
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node<S>* p = f.n->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p});
    } else {
      post.push_back(f.n);
      stack.pop_back();
    }
  }
  std::reverse(post.begin(), post.end());
  return post;
}

}  // namespace detail

/// Gradients of a scalar root w.r.t. each var in wrt. With create_graph the
/// returned gradients carry their own graph and can be differentiated again.
/// Vars with no path to the root get a zero gradient.
template <class S>
std::vector<Var<S>> gradient(const Var<S>& root, const std::vector<Var<S>>& wrt,
                             bool create_graph = false) {
  if (!root) throw std::invalid_argument("gradient: null root");
  if (!root->value.is_scalar())
    throw GeometryError("gradient: root must be scalar, got " + root->value.shape_str());

  std::unordered_map<Node<S>*, Var<S>> grads;
  {
    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();
    if (root->requires_grad) {
      grads[root.get()] = constant(Tensor<S>::constant_full({1}, S(1)));
      for (Node<S>* n : detail::topo_order(root.get())) {
        auto it = grads.find(n);
        if (it == grads.end() || !n->backward) continue;
        std::vector<Var<S>> pg = n->backward(it->second);
        if (pg.size() != n->parents.size())
          throw std::logic_error(std::string("gradient: op '") + n->op +
                                 "' returned wrong parent-grad count");
        for (size_t i = 0; i < pg.size(); ++i) {
          Node<S>* p = n->parents[i].get();
          if (!p->requires_grad) continue;
          auto at = grads.find(p);
          if (at == grads.end())
            grads.emplace(p, pg[i]);
          else
            at->second = add(at->second, pg[i]);
        }
      }
    }
  }

  std::vector<Var<S>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.get());
    if (it != grads.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Tensor<S>::zeros(w->value.dims)));
  }
  return out;
}

}  // namespace aslsr::ad
