// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/autograd.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace resformer {

namespace {

thread_local bool g_grad_enabled = true;

template <typename Scalar>
void accumulate(Node<Scalar>& target, const Tensor<Scalar>& delta) {
  if (!target.requires_grad) return;
  target.grad_buffer().array() += delta.array();
}

template <typename Scalar>
void accumulate(Node<Scalar>& target, Tensor<Scalar>&& delta) {
  if (!target.requires_grad) return;
  if (target.grad.size() != target.value.size()) {
    target.grad = std::move(delta).reshaped(target.value.shape());
  } else {
    target.grad.array() += delta.array();
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Var<Scalar>::Var(Tensor<Scalar> value, bool requires_grad) : node_(std::make_shared<Node<Scalar>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->is_leaf = true;
}

template <typename Scalar>
Var<Scalar> Var<Scalar>::record(Tensor<Scalar> value, std::vector<Var> inputs, BackwardFn backward) {
  Var out;
  out.node_ = std::make_shared<Node<Scalar>>();
  out.node_->value = std::move(value);
  out.node_->is_leaf = false;
  const bool tracked = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) {
                         return v.requires_grad();
                       });
  if (tracked) {
    out.node_->requires_grad = true;
    for (const Var& v : inputs) out.node_->inputs.push_back(v.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <typename Scalar>
Parameter<Scalar>::Parameter(std::string name, Tensor<Scalar> value, bool decay)
    : name_(std::move(name)), var_(std::move(value), true), decay_(decay) {
  var_.node()->grad_buffer();
}

template <typename Scalar>
BackwardReport backward(const Var<Scalar>& loss) {
  if (!loss.valid() || loss.value().size() != 1) {
    throw DimensionError("backward expects a scalar loss, got shape " +
                         (loss.valid() ? to_string(loss.shape()) : std::string("<none>")));
  }
  BackwardReport report;
  if (!loss.requires_grad()) {
    spdlog::warn("backward: loss is not connected to any parameter; no gradients produced");
    return report;
  }

  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* node : order) {
    if (!node->is_leaf) node->grad = Tensor<Scalar>(node->value.shape());
  }
  loss.node()->grad_buffer()[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    ++report.nodes_visited;
    if (node->is_leaf) {
      ++report.leaves_reached;
    } else if (node->backward) {
      node->backward(*node);
    }
  }
  if (report.leaves_reached == 0) {
    spdlog::warn("backward: loss is not connected to any parameter; no gradients produced");
  }
  return report;
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return Var<Scalar>::record(std::move(out), {a, b}, [](Node<Scalar>& n) {
    accumulate(*n.inputs[0], n.grad);
    accumulate(*n.inputs[1], n.grad);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape());
  out.array() = a.value().array() * factor;
  return Var<Scalar>::record(std::move(out), {a}, [factor](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (in.requires_grad) in.grad_buffer().array() += n.grad.array() * factor;
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  return Var<Scalar>::record(a.value().reshaped(std::move(shape)), {a}, [](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (in.requires_grad) in.grad_buffer().array() += n.grad.array();
  });
}

template <typename Scalar>
Var<Scalar> bmm(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_a, bool transpose_b) {
  if (a.value().rank() != 3 || b.value().rank() != 3 || a.value().dim(0) != b.value().dim(0)) {
    throw DimensionError("bmm: expects [G,r,c] operands with equal G, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const Index groups = a.value().dim(0);
  const Index ar = a.value().dim(1), ac = a.value().dim(2), br = b.value().dim(1), bc = b.value().dim(2);
  const Index rows = transpose_a ? ac : ar, inner = transpose_a ? ar : ac;
  const Index inner_b = transpose_b ? bc : br, cols = transpose_b ? br : bc;
  if (inner != inner_b) {
    throw DimensionError("bmm: inner dimensions differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Tensor<Scalar> out({groups, rows, cols});
  for (Index g = 0; g < groups; ++g) {
    auto am = a.value().matrix(ar, ac, g * ar * ac);
    auto bm = b.value().matrix(br, bc, g * br * bc);
    auto om = out.matrix(rows, cols, g * rows * cols);
    if (!transpose_a && !transpose_b) om.noalias() = am * bm;
    if (!transpose_a && transpose_b) om.noalias() = am * bm.transpose();
    if (transpose_a && !transpose_b) om.noalias() = am.transpose() * bm;
    if (transpose_a && transpose_b) om.noalias() = am.transpose() * bm.transpose();
  }
  return Var<Scalar>::record(std::move(out), {a, b}, [=](Node<Scalar>& n) {
    Node<Scalar>& na = *n.inputs[0];
    Node<Scalar>& nb = *n.inputs[1];
    for (Index g = 0; g < groups; ++g) {
      auto dc = n.grad.matrix(rows, cols, g * rows * cols);
      auto am = na.value.matrix(ar, ac, g * ar * ac);
      auto bm = nb.value.matrix(br, bc, g * br * bc);
      if (na.requires_grad) {
        auto da = na.grad_buffer().matrix(ar, ac, g * ar * ac);
        // d op(A) = dC * op(B)^T
        if (!transpose_a && !transpose_b) da.noalias() += dc * bm.transpose();
        if (!transpose_a && transpose_b) da.noalias() += dc * bm;
        if (transpose_a && !transpose_b) da.noalias() += bm * dc.transpose();
        if (transpose_a && transpose_b) da.noalias() += bm.transpose() * dc.transpose();
      }
      if (nb.requires_grad) {
        auto db = nb.grad_buffer().matrix(br, bc, g * br * bc);
        // d op(B) = op(A)^T * dC
        if (!transpose_a && !transpose_b) db.noalias() += am.transpose() * dc;
        if (!transpose_a && transpose_b) db.noalias() += dc.transpose() * am;
        if (transpose_a && !transpose_b) db.noalias() += am * dc;
        if (transpose_a && transpose_b) db.noalias() += dc.transpose() * am.transpose();
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Conv2dGeometry& geometry) {
  Tensor<Scalar> out = resformer::conv2d(input.value(), kernel.value(), geometry);
  return Var<Scalar>::record(std::move(out), {input, kernel}, [geometry](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    Node<Scalar>& k = *n.inputs[1];
    if (k.requires_grad) conv2d_backward_kernel(n.grad, in.value, geometry, k.grad_buffer());
    if (in.requires_grad) accumulate(in, conv2d_backward_input(n.grad, k.value, in.value.shape(), geometry));
  });
}

template <typename Scalar>
Var<Scalar> maxpool2d(const Var<Scalar>& input, Index window, Index stride, Index padding) {
  auto argmax = std::make_shared<std::vector<Index>>();
  Tensor<Scalar> out = resformer::maxpool2d(input.value(), window, stride, padding, argmax.get());
  return Var<Scalar>::record(std::move(out), {input}, [argmax](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor<Scalar>& g = in.grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += n.grad[static_cast<Index>(o)];
  });
}

template <typename Scalar>
Var<Scalar> batchnorm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      BatchNormState<Scalar>& state) {
  state.gamma = gamma.value();
  state.beta = beta.value();
  auto cache = std::make_shared<BatchNormCache<Scalar>>();
  const bool training = state.mode == BatchNormMode::train;
  Tensor<Scalar> out = resformer::batchnorm(input.value(), state, grad_enabled() ? cache.get() : nullptr);
  return Var<Scalar>::record(std::move(out), {input, gamma, beta}, [cache, training](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    Node<Scalar>& ng = *n.inputs[1];
    Node<Scalar>& nb = *n.inputs[2];
    const Index outer = in.value.dim(0), channels = in.value.dim(1);
    const Index inner = in.value.size() / (outer * channels);
    const Scalar count = Scalar(outer * inner);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> sum_dy_xhat = sum_dy;
    for (Index o = 0; o < outer; ++o) {
      for (Index c = 0; c < channels; ++c) {
        const Index off = (o * channels + c) * inner;
        sum_dy[c] += n.grad.array().segment(off, inner).sum();
        sum_dy_xhat[c] +=
            (n.grad.array().segment(off, inner) * cache->normalized.array().segment(off, inner)).sum();
      }
    }
    if (ng.requires_grad) ng.grad_buffer().array() += sum_dy_xhat;
    if (nb.requires_grad) nb.grad_buffer().array() += sum_dy;
    if (!in.requires_grad) return;
    Tensor<Scalar>& dx = in.grad_buffer();
    for (Index o = 0; o < outer; ++o) {
      for (Index c = 0; c < channels; ++c) {
        const Index off = (o * channels + c) * inner;
        const Scalar g = ng.value[c] * cache->inv_std[c];
        if (training) {
          dx.array().segment(off, inner) +=
              (g / count) * (count * n.grad.array().segment(off, inner) - sum_dy[c] -
                             cache->normalized.array().segment(off, inner) * sum_dy_xhat[c]);
        } else {
          dx.array().segment(off, inner) += g * n.grad.array().segment(off, inner);
        }
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> select_part(const Var<Scalar>& input, Index outer, Index parts, Index part) {
  const Index total = input.value().size();
  if (outer <= 0 || parts <= 0 || total % (outer * parts) != 0 || part < 0 || part >= parts) {
    throw DimensionError("select_part: cannot view " + to_string(input.shape()) + " as [" + std::to_string(outer) +
                         ", " + std::to_string(parts) + ", *]");
  }
  const Index inner = total / (outer * parts);
  Tensor<Scalar> out({outer, inner});
  for (Index o = 0; o < outer; ++o) {
    out.array().segment(o * inner, inner) = input.value().array().segment((o * parts + part) * inner, inner);
  }
  return Var<Scalar>::record(std::move(out), {input}, [=](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor<Scalar>& g = in.grad_buffer();
    for (Index o = 0; o < outer; ++o) {
      g.array().segment((o * parts + part) * inner, inner) += n.grad.array().segment(o * inner, inner);
    }
  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& input) {
  if (input.value().rank() != 4) throw DimensionError("global_avg_pool expects [N,C,H,W]");
  const Index n = input.value().dim(0), c = input.value().dim(1);
  const Index hw = input.value().dim(2) * input.value().dim(3);
  Tensor<Scalar> out({n, c});
  for (Index i = 0; i < n * c; ++i) out[i] = input.value().array().segment(i * hw, hw).mean();
  return Var<Scalar>::record(std::move(out), {input}, [n, c, hw](Node<Scalar>& node) {
    Node<Scalar>& in = *node.inputs[0];
    if (!in.requires_grad) return;
    Tensor<Scalar>& g = in.grad_buffer();
    for (Index i = 0; i < n * c; ++i) g.array().segment(i * hw, hw) += node.grad[i] / Scalar(hw);
  });
}

template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const Tensor<Scalar>& x = input.value();
  const Tensor<Scalar>& w = weight.value();
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1) || bias.value().size() != w.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  }
  const Index batch = x.dim(0), in_features = x.dim(1), out_features = w.dim(0);
  Tensor<Scalar> out({batch, out_features});
  auto om = out.matrix(batch, out_features);
  om.noalias() = x.matrix(batch, in_features) * w.matrix(out_features, in_features).transpose();
  om.rowwise() += bias.value().matrix(1, out_features).row(0);
  return Var<Scalar>::record(std::move(out), {input, weight, bias}, [=](Node<Scalar>& n) {
    Node<Scalar>& nx = *n.inputs[0];
    Node<Scalar>& nw = *n.inputs[1];
    Node<Scalar>& nb = *n.inputs[2];
    auto dy = n.grad.matrix(batch, out_features);
    if (nx.requires_grad) {
      nx.grad_buffer().matrix(batch, in_features).noalias() += dy * nw.value.matrix(out_features, in_features);
    }
    if (nw.requires_grad) {
      nw.grad_buffer().matrix(out_features, in_features).noalias() +=
          dy.transpose() * nx.value.matrix(batch, in_features);
    }
    if (nb.requires_grad) nb.grad_buffer().matrix(1, out_features).row(0) += dy.colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> time_mean(const Var<Scalar>& input, Index time_steps) {
  const Tensor<Scalar>& x = input.value();
  if (time_steps < 1 || x.rank() < 1 || x.dim(0) % time_steps != 0) {
    throw DimensionError("time_mean: leading axis of " + to_string(x.shape()) + " not divisible by T=" +
                         std::to_string(time_steps));
  }
  Shape shape = x.shape();
  shape[0] /= time_steps;
  const Index chunk = numel(shape);
  Tensor<Scalar> out(shape);
  for (Index t = 0; t < time_steps; ++t) out.array() += x.array().segment(t * chunk, chunk);
  out.array() /= Scalar(time_steps);
  return Var<Scalar>::record(std::move(out), {input}, [time_steps, chunk](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (!in.requires_grad) return;
    Tensor<Scalar>& g = in.grad_buffer();
    for (Index t = 0; t < time_steps; ++t) g.array().segment(t * chunk, chunk) += n.grad.array() / Scalar(time_steps);
  });
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, const std::vector<int>& labels) {
  const Tensor<Scalar>& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != static_cast<Index>(labels.size())) {
    throw DimensionError("cross_entropy: logits " + to_string(z.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  const Index batch = z.dim(0), classes = z.dim(1);
  RowMatrix<Scalar> probs = z.matrix(batch, classes);
  Scalar loss = 0;
  for (Index i = 0; i < batch; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes) throw ContractViolation("cross_entropy: label out of range");
    const Scalar top = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - top).exp().matrix();
    const Scalar total = probs.row(i).sum();
    probs.row(i) /= total;
    loss -= std::log(std::max(probs(i, label), std::numeric_limits<Scalar>::min()));
  }
  Tensor<Scalar> out({1}, {loss / Scalar(batch)});
  return Var<Scalar>::record(std::move(out), {logits}, [probs = std::move(probs), labels, batch,
                                                        classes](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer().matrix(batch, classes);
    const Scalar upstream = n.grad[0] / Scalar(batch);
    for (Index i = 0; i < batch; ++i) {
      g.row(i) += upstream * probs.row(i);
      g(i, labels[static_cast<std::size_t>(i)]) -= upstream;
    }
  });
}

template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& input, const Tensor<Scalar>& weights) {
  if (input.value().size() != weights.size()) {
    throw DimensionError("weighted_sum: " + to_string(input.shape()) + " vs " + to_string(weights.shape()));
  }
  Tensor<Scalar> out({1}, {(input.value().array() * weights.array()).sum()});
  return Var<Scalar>::record(std::move(out), {input}, [weights](Node<Scalar>& n) {
    Node<Scalar>& in = *n.inputs[0];
    if (in.requires_grad) in.grad_buffer().array() += n.grad[0] * weights.array();
  });
}

#define RESFORMER_INSTANTIATE_AUTOGRAD(S)                                                              \
  template class Var<S>;                                                                               \
  template class Parameter<S>;                                                                         \
  template BackwardReport backward(const Var<S>&);                                                     \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                   \
  template Var<S> scale(const Var<S>&, S);                                                             \
  template Var<S> reshape(const Var<S>&, Shape);                                                       \
  template Var<S> bmm(const Var<S>&, const Var<S>&, bool, bool);                                       \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Conv2dGeometry&);                         \
  template Var<S> maxpool2d(const Var<S>&, Index, Index, Index);                                       \
  template Var<S> batchnorm(const Var<S>&, const Var<S>&, const Var<S>&, BatchNormState<S>&);          \
  template Var<S> select_part(const Var<S>&, Index, Index, Index);                                     \
  template Var<S> global_avg_pool(const Var<S>&);                                                      \
  template Var<S> linear(const Var<S>&, const Var<S>&, const Var<S>&);                                 \
  template Var<S> time_mean(const Var<S>&, Index);                                                     \
  template Var<S> cross_entropy(const Var<S>&, const std::vector<int>&);                               \
  template Var<S> weighted_sum(const Var<S>&, const Tensor<S>&);

RESFORMER_INSTANTIATE_AUTOGRAD(float)
RESFORMER_INSTANTIATE_AUTOGRAD(double)

}  // namespace resformer
