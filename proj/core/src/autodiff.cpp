#include "telto/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>

namespace telto {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
  }
  throw std::logic_error("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation: " + name);
}

namespace ad {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

template <typename T>
NodeId Tape<T>::push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_ref(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape, T(0));
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(NodeId id) {
  return grad_ref(id);
}

template <typename T>
bool Tape<T>::any_grad(std::initializer_list<NodeId> ids) const {
  for (NodeId id : ids)
    if (id != kNone && nodes_[id].requires_grad) return true;
  return false;
}

template <typename T>
NodeId Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

template <typename T>
NodeId Tape<T>::add(NodeId a, NodeId b) {
  require(nodes_[a].value.shape == nodes_[b].value.shape, "add: shape mismatch");
  Tensor<T> out = nodes_[a].value;
  const Tensor<T>& vb = nodes_[b].value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
  NodeId id = push(std::move(out), any_grad({a, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::sub(NodeId a, NodeId b) {
  require(nodes_[a].value.shape == nodes_[b].value.shape, "sub: shape mismatch");
  Tensor<T> out = nodes_[a].value;
  const Tensor<T>& vb = nodes_[b].value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= vb.data[i];
  NodeId id = push(std::move(out), any_grad({a, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::mul(NodeId a, NodeId b) {
  require(nodes_[a].value.shape == nodes_[b].value.shape, "mul: shape mismatch");
  Tensor<T> out = nodes_[a].value;
  const Tensor<T>& vb = nodes_[b].value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= vb.data[i];
  NodeId id = push(std::move(out), any_grad({a, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, b](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& va = t.nodes_[a].value;
      const Tensor<T>& vb2 = t.nodes_[b].value;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * vb2.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i] * va.data[i];
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::scale(NodeId a, T factor) {
  Tensor<T> out = nodes_[a].value;
  for (T& v : out.data) v *= factor;
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, factor](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * factor;
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::shift(NodeId a, T offset) {
  Tensor<T> out = nodes_[a].value;
  for (T& v : out.data) v += offset;
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::relu(NodeId a) {
  return leaky_relu(a, T(0));
}

template <typename T>
NodeId Tape<T>::leaky_relu(NodeId a, T slope) {
  Tensor<T> out = nodes_[a].value;
  for (T& v : out.data)
    if (v < T(0)) v *= slope;
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, slope](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& va = t.nodes_[a].value;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * (va.data[i] > T(0) ? T(1) : slope);
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::tanh(NodeId a) {
  Tensor<T> out = nodes_[a].value;
  for (T& v : out.data) v = std::tanh(v);
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& y = t.nodes_[id].value;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * (T(1) - y.data[i] * y.data[i]);
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::sigmoid(NodeId a) {
  Tensor<T> out = nodes_[a].value;
  for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& y = t.nodes_[id].value;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::activation(NodeId a, Activation act) {
  switch (act) {
    case Activation::relu: return relu(a);
    case Activation::tanh: return tanh(a);
  }
  throw std::logic_error("unknown activation");
}

template <typename T>
NodeId Tape<T>::mask(NodeId a, Tensor<T> m) {
  require(nodes_[a].value.shape == m.shape, "mask: shape mismatch");
  Tensor<T> out = nodes_[a].value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= m.data[i];
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, m = std::move(m)](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * m.data[i];
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::matmul(NodeId a, NodeId b) {
  const Tensor<T>& va = nodes_[a].value;
  const Tensor<T>& vb = nodes_[b].value;
  require(va.shape.size() == 2 && vb.shape.size() == 2 && va.shape[1] == vb.shape[0],
          "matmul: need [m,k] x [k,n]");
  const std::size_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
  Tensor<T> out({m, n}, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = va.data[i * k + p];
      if (aip == T(0)) continue;
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += aip * vb.data[p * n + j];
    }
  NodeId id = push(std::move(out), any_grad({a, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, b, m, k, n](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& va2 = t.nodes_[a].value;
      const Tensor<T>& vb2 = t.nodes_[b].value;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t j = 0; j < n; ++j) s += g.data[i * n + j] * vb2.data[p * n + j];
            ga.data[i * k + p] += s;
          }
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            T s = T(0);
            for (std::size_t i = 0; i < m; ++i) s += va2.data[i * k + p] * g.data[i * n + j];
            gb.data[p * n + j] += s;
          }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::matmul_nt(NodeId a, NodeId b) {
  const Tensor<T>& va = nodes_[a].value;
  const Tensor<T>& vb = nodes_[b].value;
  require(va.shape.size() == 2 && vb.shape.size() == 2 && va.shape[1] == vb.shape[1],
          "matmul_nt: need [m,k] x [n,k]");
  const std::size_t m = va.shape[0], k = va.shape[1], n = vb.shape[0];
  Tensor<T> out({m, n}, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = T(0);
      for (std::size_t p = 0; p < k; ++p) s += va.data[i * k + p] * vb.data[j * k + p];
      out.data[i * n + j] = s;
    }
  NodeId id = push(std::move(out), any_grad({a, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, b, m, k, n](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& va2 = t.nodes_[a].value;
      const Tensor<T>& vb2 = t.nodes_[b].value;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t j = 0; j < n; ++j) s += g.data[i * n + j] * vb2.data[j * k + p];
            ga.data[i * k + p] += s;
          }
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t p = 0; p < k; ++p) {
            T s = T(0);
            for (std::size_t i = 0; i < m; ++i) s += g.data[i * n + j] * va2.data[i * k + p];
            gb.data[j * k + p] += s;
          }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::matvec(NodeId a, NodeId v) {
  const Tensor<T>& va = nodes_[a].value;
  const Tensor<T>& vv = nodes_[v].value;
  require(va.shape.size() == 2 && vv.shape.size() == 1 && va.shape[1] == vv.shape[0],
          "matvec: need [m,n] x [n]");
  const std::size_t m = va.shape[0], n = va.shape[1];
  Tensor<T> out({m}, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += va.data[i * n + j] * vv.data[j];
    out.data[i] = s;
  }
  NodeId id = push(std::move(out), any_grad({a, v}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, v, m, n](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& va2 = t.nodes_[a].value;
      const Tensor<T>& vv2 = t.nodes_[v].value;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ga.data[i * n + j] += g.data[i] * vv2.data[j];
      }
      if (t.nodes_[v].requires_grad) {
        Tensor<T>& gv = t.grad_ref(v);
        for (std::size_t j = 0; j < n; ++j) {
          T s = T(0);
          for (std::size_t i = 0; i < m; ++i) s += va2.data[i * n + j] * g.data[i];
          gv.data[j] += s;
        }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::add_rowvec(NodeId a, NodeId v) {
  const Tensor<T>& va = nodes_[a].value;
  const Tensor<T>& vv = nodes_[v].value;
  require(va.shape.size() == 2 && vv.shape.size() == 1 && va.shape[1] == vv.shape[0],
          "add_rowvec: need [m,n] + [n]");
  const std::size_t m = va.shape[0], n = va.shape[1];
  Tensor<T> out = va;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += vv.data[j];
  NodeId id = push(std::move(out), any_grad({a, v}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, v, m, n](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      if (t.nodes_[a].requires_grad) {
        Tensor<T>& ga = t.grad_ref(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (t.nodes_[v].requires_grad) {
        Tensor<T>& gv = t.grad_ref(v);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv.data[j] += g.data[i * n + j];
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::softmax_rows(NodeId a) {
  const Tensor<T>& va = nodes_[a].value;
  require(va.shape.size() == 2, "softmax_rows: need [m,n]");
  const std::size_t m = va.shape[0], n = va.shape[1];
  Tensor<T> out = va;
  for (std::size_t i = 0; i < m; ++i) {
    T mx = out.data[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, out.data[i * n + j]);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      T e = std::exp(out.data[i * n + j] - mx);
      out.data[i * n + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] /= sum;
  }
  NodeId id = push(std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, a, m, n](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& y = t.nodes_[id].value;
      Tensor<T>& ga = t.grad_ref(a);
      for (std::size_t i = 0; i < m; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += g.data[i * n + j] * y.data[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          ga.data[i * n + j] += y.data[i * n + j] * (g.data[i * n + j] - dot);
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::channel_linear(NodeId x, NodeId w, NodeId b) {
  const Tensor<T>& vx = nodes_[x].value;
  const Tensor<T>& vw = nodes_[w].value;
  require(vx.shape.size() == 3 && vw.shape.size() == 2 && vw.shape[1] == vx.shape[1],
          "channel_linear: need x [E,Ci,D], w [Co,Ci]");
  const std::size_t E = vx.shape[0], Ci = vx.shape[1], D = vx.shape[2], Co = vw.shape[0];
  if (b != kNone)
    require(nodes_[b].value.shape == std::vector<std::size_t>{Co}, "channel_linear: b must be [Co]");
  Tensor<T> out({E, Co, D}, T(0));
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t co = 0; co < Co; ++co) {
      T* dst = &out.data[(e * Co + co) * D];
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T wv = vw.data[co * Ci + ci];
        if (wv == T(0)) continue;
        const T* src = &vx.data[(e * Ci + ci) * D];
        for (std::size_t d = 0; d < D; ++d) dst[d] += wv * src[d];
      }
      if (b != kNone) {
        const T bv = nodes_[b].value.data[co];
        for (std::size_t d = 0; d < D; ++d) dst[d] += bv;
      }
    }
  NodeId id = push(std::move(out), any_grad({x, w, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, w, b, E, Ci, D, Co](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& vx2 = t.nodes_[x].value;
      const Tensor<T>& vw2 = t.nodes_[w].value;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.grad_ref(x);
        for (std::size_t e = 0; e < E; ++e)
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            T* dst = &gx.data[(e * Ci + ci) * D];
            for (std::size_t co = 0; co < Co; ++co) {
              const T wv = vw2.data[co * Ci + ci];
              const T* src = &g.data[(e * Co + co) * D];
              for (std::size_t d = 0; d < D; ++d) dst[d] += wv * src[d];
            }
          }
      }
      if (t.nodes_[w].requires_grad) {
        Tensor<T>& gw = t.grad_ref(w);
        for (std::size_t co = 0; co < Co; ++co)
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            T s = T(0);
            for (std::size_t e = 0; e < E; ++e) {
              const T* gsrc = &g.data[(e * Co + co) * D];
              const T* xsrc = &vx2.data[(e * Ci + ci) * D];
              for (std::size_t d = 0; d < D; ++d) s += gsrc[d] * xsrc[d];
            }
            gw.data[co * Ci + ci] += s;
          }
      }
      if (b != kNone && t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t co = 0; co < Co; ++co) {
          T s = T(0);
          for (std::size_t e = 0; e < E; ++e) {
            const T* gsrc = &g.data[(e * Co + co) * D];
            for (std::size_t d = 0; d < D; ++d) s += gsrc[d];
          }
          gb.data[co] += s;
        }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::add_channel_bias(NodeId x, NodeId b) {
  const Tensor<T>& vx = nodes_[x].value;
  const Tensor<T>& vb = nodes_[b].value;
  require(vx.shape.size() == 3 && vb.shape == std::vector<std::size_t>{vx.shape[1]},
          "add_channel_bias: need x [E,C,D], b [C]");
  const std::size_t E = vx.shape[0], C = vx.shape[1], D = vx.shape[2];
  Tensor<T> out = vx;
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t c = 0; c < C; ++c) {
      const T bv = vb.data[c];
      T* dst = &out.data[(e * C + c) * D];
      for (std::size_t d = 0; d < D; ++d) dst[d] += bv;
    }
  NodeId id = push(std::move(out), any_grad({x, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, b, E, C, D](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.grad_ref(x);
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
      }
      if (t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t e = 0; e < E; ++e)
          for (std::size_t c = 0; c < C; ++c) {
            const T* src = &g.data[(e * C + c) * D];
            T s = T(0);
            for (std::size_t d = 0; d < D; ++d) s += src[d];
            gb.data[c] += s;
          }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::temporal_conv(NodeId x, NodeId w, NodeId b, std::size_t dilation) {
  const Tensor<T>& vx = nodes_[x].value;
  const Tensor<T>& vw = nodes_[w].value;
  require(vx.shape.size() == 3 && vw.shape.size() == 3 && vw.shape[1] == vx.shape[1],
          "temporal_conv: need x [E,Ci,D], w [Co,Ci,K]");
  require(dilation >= 1, "temporal_conv: dilation must be >= 1");
  const std::size_t E = vx.shape[0], Ci = vx.shape[1], D = vx.shape[2];
  const std::size_t Co = vw.shape[0], K = vw.shape[2];
  if (b != kNone)
    require(nodes_[b].value.shape == std::vector<std::size_t>{Co}, "temporal_conv: b must be [Co]");
  // Causal: tap k looks back (K-1-k)*dilation steps; implicit zero left pad.
  Tensor<T> out({E, Co, D}, T(0));
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t co = 0; co < Co; ++co) {
      T* dst = &out.data[(e * Co + co) * D];
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const T* src = &vx.data[(e * Ci + ci) * D];
        for (std::size_t k = 0; k < K; ++k) {
          const T wv = vw.data[(co * Ci + ci) * K + k];
          if (wv == T(0)) continue;
          const std::size_t back = (K - 1 - k) * dilation;
          for (std::size_t d = back; d < D; ++d) dst[d] += wv * src[d - back];
        }
      }
      if (b != kNone) {
        const T bv = nodes_[b].value.data[co];
        for (std::size_t d = 0; d < D; ++d) dst[d] += bv;
      }
    }
  NodeId id = push(std::move(out), any_grad({x, w, b}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, w, b, dilation, E, Ci, D, Co, K](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& vx2 = t.nodes_[x].value;
      const Tensor<T>& vw2 = t.nodes_[w].value;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.grad_ref(x);
        for (std::size_t e = 0; e < E; ++e)
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            T* dst = &gx.data[(e * Ci + ci) * D];
            for (std::size_t co = 0; co < Co; ++co) {
              const T* gsrc = &g.data[(e * Co + co) * D];
              for (std::size_t k = 0; k < K; ++k) {
                const T wv = vw2.data[(co * Ci + ci) * K + k];
                if (wv == T(0)) continue;
                const std::size_t back = (K - 1 - k) * dilation;
                for (std::size_t d = back; d < D; ++d) dst[d - back] += wv * gsrc[d];
              }
            }
          }
      }
      if (t.nodes_[w].requires_grad) {
        Tensor<T>& gw = t.grad_ref(w);
        for (std::size_t co = 0; co < Co; ++co)
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t k = 0; k < K; ++k) {
              const std::size_t back = (K - 1 - k) * dilation;
              T s = T(0);
              for (std::size_t e = 0; e < E; ++e) {
                const T* gsrc = &g.data[(e * Co + co) * D];
                const T* xsrc = &vx2.data[(e * Ci + ci) * D];
                for (std::size_t d = back; d < D; ++d) s += gsrc[d] * xsrc[d - back];
              }
              gw.data[(co * Ci + ci) * K + k] += s;
            }
      }
      if (b != kNone && t.nodes_[b].requires_grad) {
        Tensor<T>& gb = t.grad_ref(b);
        for (std::size_t co = 0; co < Co; ++co) {
          T s = T(0);
          for (std::size_t e = 0; e < E; ++e) {
            const T* gsrc = &g.data[(e * Co + co) * D];
            for (std::size_t d = 0; d < D; ++d) s += gsrc[d];
          }
          gb.data[co] += s;
        }
      }
    };
  }
  return id;
}

namespace {

// out[e,...] = sum_f A[e,f] * x[f,...]; returns gradient wrt x when transpose.
template <typename T>
void mix_apply(const T* adj, const T* x, T* out, std::size_t E, std::size_t inner, bool transpose) {
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t f = 0; f < E; ++f) {
      const T a = transpose ? adj[f * E + e] : adj[e * E + f];
      if (a == T(0)) continue;
      const T* src = x + f * inner;
      T* dst = out + e * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += a * src[i];
    }
}

}  // namespace

template <typename T>
NodeId Tape<T>::graph_mix(NodeId x, Tensor<T> adjacency) {
  const Tensor<T>& vx = nodes_[x].value;
  require(vx.shape.size() >= 2, "graph_mix: need at least 2-d input");
  const std::size_t E = vx.shape[0];
  require(adjacency.shape == std::vector<std::size_t>{E, E}, "graph_mix: adjacency must be [E,E]");
  const std::size_t inner = vx.data.size() / E;
  Tensor<T> out(vx.shape, T(0));
  mix_apply(adjacency.data.data(), vx.data.data(), out.data.data(), E, inner, false);
  NodeId id = push(std::move(out), nodes_[x].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, E, inner, adj = std::move(adjacency)](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& gx = t.grad_ref(x);
      mix_apply(adj.data.data(), g.data.data(), gx.data.data(), E, inner, true);
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::graph_mix_var(NodeId x, NodeId adjacency) {
  const Tensor<T>& vx = nodes_[x].value;
  const Tensor<T>& va = nodes_[adjacency].value;
  require(vx.shape.size() >= 2, "graph_mix_var: need at least 2-d input");
  const std::size_t E = vx.shape[0];
  require(va.shape == std::vector<std::size_t>{E, E}, "graph_mix_var: adjacency must be [E,E]");
  const std::size_t inner = vx.data.size() / E;
  Tensor<T> out(vx.shape, T(0));
  mix_apply(va.data.data(), vx.data.data(), out.data.data(), E, inner, false);
  NodeId id = push(std::move(out), any_grad({x, adjacency}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, adjacency, E, inner](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& vx2 = t.nodes_[x].value;
      const Tensor<T>& va2 = t.nodes_[adjacency].value;
      if (t.nodes_[x].requires_grad) {
        Tensor<T>& gx = t.grad_ref(x);
        mix_apply(va2.data.data(), g.data.data(), gx.data.data(), E, inner, true);
      }
      if (t.nodes_[adjacency].requires_grad) {
        Tensor<T>& ga = t.grad_ref(adjacency);
        for (std::size_t e = 0; e < E; ++e)
          for (std::size_t f = 0; f < E; ++f) {
            const T* gsrc = &g.data[e * inner];
            const T* xsrc = &vx2.data[f * inner];
            T s = T(0);
            for (std::size_t i = 0; i < inner; ++i) s += gsrc[i] * xsrc[i];
            ga.data[e * E + f] += s;
          }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::gather_rows(NodeId x, std::vector<std::size_t> indices) {
  const Tensor<T>& vx = nodes_[x].value;
  require(!vx.shape.empty(), "gather_rows: need at least 1-d input");
  const std::size_t E = vx.shape[0];
  const std::size_t inner = E == 0 ? 0 : vx.data.size() / E;
  for (std::size_t idx : indices) require(idx < E, "gather_rows: index out of range");
  std::vector<std::size_t> out_shape = vx.shape;
  out_shape[0] = indices.size();
  Tensor<T> out(out_shape, T(0));
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::size_t j = 0; j < inner; ++j) out.data[i * inner + j] = vx.data[indices[i] * inner + j];
  NodeId id = push(std::move(out), nodes_[x].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, inner, idxs = std::move(indices)](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& gx = t.grad_ref(x);
      for (std::size_t i = 0; i < idxs.size(); ++i)
        for (std::size_t j = 0; j < inner; ++j) gx.data[idxs[i] * inner + j] += g.data[i * inner + j];
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::slice_channel(NodeId x, std::size_t channel) {
  const Tensor<T>& vx = nodes_[x].value;
  require(vx.shape.size() == 3, "slice_channel: need [E,C,D]");
  const std::size_t E = vx.shape[0], C = vx.shape[1], D = vx.shape[2];
  require(channel < C, "slice_channel: channel out of range");
  Tensor<T> out({E, D}, T(0));
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t d = 0; d < D; ++d) out.data[e * D + d] = vx.data[(e * C + channel) * D + d];
  NodeId id = push(std::move(out), nodes_[x].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x, channel, E, C, D](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& gx = t.grad_ref(x);
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t d = 0; d < D; ++d) gx.data[(e * C + channel) * D + d] += g.data[e * D + d];
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::stack_channels(const std::vector<NodeId>& channels) {
  require(!channels.empty(), "stack_channels: need at least one channel");
  const Tensor<T>& first = nodes_[channels[0]].value;
  require(first.shape.size() == 2, "stack_channels: each channel must be [E,D]");
  const std::size_t E = first.shape[0], D = first.shape[1], C = channels.size();
  bool needs = false;
  for (NodeId c : channels) {
    require(nodes_[c].value.shape == first.shape, "stack_channels: shape mismatch");
    needs = needs || nodes_[c].requires_grad;
  }
  Tensor<T> out({E, C, D}, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor<T>& vc = nodes_[channels[c]].value;
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t d = 0; d < D; ++d) out.data[(e * C + c) * D + d] = vc.data[e * D + d];
  }
  NodeId id = push(std::move(out), needs, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, chans = channels, E, C, D](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      for (std::size_t c = 0; c < C; ++c) {
        if (!t.nodes_[chans[c]].requires_grad) continue;
        Tensor<T>& gc = t.grad_ref(chans[c]);
        for (std::size_t e = 0; e < E; ++e)
          for (std::size_t d = 0; d < D; ++d) gc.data[e * D + d] += g.data[(e * C + c) * D + d];
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::reshape(NodeId x, std::vector<std::size_t> dims) {
  Tensor<T> out = nodes_[x].value.reshaped(dims);
  NodeId id = push(std::move(out), nodes_[x].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, x](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      Tensor<T>& gx = t.grad_ref(x);
      for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::neighbor_attention(NodeId projected, NodeId center_score, NodeId neighbor_score,
                                   const std::vector<std::vector<std::size_t>>& sets, T slope,
                                   std::vector<std::vector<T>>* weights_out) {
  const Tensor<T>& vp = nodes_[projected].value;
  const Tensor<T>& vc = nodes_[center_score].value;
  const Tensor<T>& vn = nodes_[neighbor_score].value;
  require(vp.shape.size() == 2, "neighbor_attention: projected must be [M,D]");
  const std::size_t M = vp.shape[0], D = vp.shape[1];
  require(vc.shape == std::vector<std::size_t>{M} && vn.shape == std::vector<std::size_t>{M},
          "neighbor_attention: scores must be [M]");
  require(sets.size() == M, "neighbor_attention: one source set per row");
  auto alphas = std::make_shared<std::vector<std::vector<T>>>(M);
  Tensor<T> out({M, D}, T(0));
  for (std::size_t r = 0; r < M; ++r) {
    const auto& set = sets[r];
    require(!set.empty(), "neighbor_attention: empty source set");
    std::vector<T>& alpha = (*alphas)[r];
    alpha.resize(set.size());
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < set.size(); ++j) {
      require(set[j] < M, "neighbor_attention: source index out of range");
      T z = vc.data[r] + vn.data[set[j]];
      alpha[j] = z < T(0) ? z * slope : z;
      mx = std::max(mx, alpha[j]);
    }
    T sum = T(0);
    for (T& a : alpha) {
      a = std::exp(a - mx);
      sum += a;
    }
    for (T& a : alpha) a /= sum;
    T* dst = &out.data[r * D];
    for (std::size_t j = 0; j < set.size(); ++j) {
      const T* src = &vp.data[set[j] * D];
      for (std::size_t d = 0; d < D; ++d) dst[d] += alpha[j] * src[d];
    }
  }
  if (weights_out) *weights_out = *alphas;
  NodeId id = push(std::move(out), any_grad({projected, center_score, neighbor_score}), nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, projected, center_score, neighbor_score, sets, slope, alphas, M,
                       D](Tape& t) {
      const Tensor<T>& g = t.nodes_[id].grad;
      const Tensor<T>& vp2 = t.nodes_[projected].value;
      const Tensor<T>& vc2 = t.nodes_[center_score].value;
      const Tensor<T>& vn2 = t.nodes_[neighbor_score].value;
      const bool need_p = t.nodes_[projected].requires_grad;
      const bool need_c = t.nodes_[center_score].requires_grad;
      const bool need_n = t.nodes_[neighbor_score].requires_grad;
      Tensor<T>* gp = need_p ? &t.grad_ref(projected) : nullptr;
      Tensor<T>* gc = need_c ? &t.grad_ref(center_score) : nullptr;
      Tensor<T>* gn = need_n ? &t.grad_ref(neighbor_score) : nullptr;
      std::vector<T> dalpha;
      for (std::size_t r = 0; r < M; ++r) {
        const auto& set = sets[r];
        const std::vector<T>& alpha = (*alphas)[r];
        const T* gout = &g.data[r * D];
        dalpha.assign(set.size(), T(0));
        T dot = T(0);
        for (std::size_t j = 0; j < set.size(); ++j) {
          const T* src = &vp2.data[set[j] * D];
          T s = T(0);
          for (std::size_t d = 0; d < D; ++d) s += gout[d] * src[d];
          dalpha[j] = s;
          dot += alpha[j] * s;
          if (need_p) {
            T* pdst = &gp->data[set[j] * D];
            for (std::size_t d = 0; d < D; ++d) pdst[d] += alpha[j] * gout[d];
          }
        }
        if (!need_c && !need_n) continue;
        for (std::size_t j = 0; j < set.size(); ++j) {
          const T ds = alpha[j] * (dalpha[j] - dot);
          const T z = vc2.data[r] + vn2.data[set[j]];
          const T dz = ds * (z > T(0) ? T(1) : slope);
          if (need_c) gc->data[r] += dz;
          if (need_n) gn->data[set[j]] += dz;
        }
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::mean_abs_error(NodeId pred, Tensor<T> target) {
  const Tensor<T>& vp = nodes_[pred].value;
  require(vp.shape == target.shape, "mean_abs_error: shape mismatch");
  require(!vp.data.empty(), "mean_abs_error: empty input");
  const std::size_t n = vp.data.size();
  T sum = T(0);
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(vp.data[i] - target.data[i]);
  Tensor<T> out({1}, sum / static_cast<T>(n));
  NodeId id = push(std::move(out), nodes_[pred].requires_grad, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, pred, n, tgt = std::move(target)](Tape& t) {
      const T g = t.nodes_[id].grad.data[0];
      const Tensor<T>& vp2 = t.nodes_[pred].value;
      Tensor<T>& gp = t.grad_ref(pred);
      const T inv = g / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T diff = vp2.data[i] - tgt.data[i];
        if (diff > T(0))
          gp.data[i] += inv;
        else if (diff < T(0))
          gp.data[i] -= inv;
      }
    };
  }
  return id;
}

template <typename T>
NodeId Tape<T>::mean_of(const std::vector<NodeId>& scalars) {
  require(!scalars.empty(), "mean_of: need at least one term");
  bool needs = false;
  T sum = T(0);
  for (NodeId s : scalars) {
    require(nodes_[s].value.data.size() == 1, "mean_of: terms must be scalar");
    sum += nodes_[s].value.data[0];
    needs = needs || nodes_[s].requires_grad;
  }
  Tensor<T> out({1}, sum / static_cast<T>(scalars.size()));
  NodeId id = push(std::move(out), needs, nullptr);
  if (nodes_[id].requires_grad) {
    nodes_[id].back = [id, terms = scalars](Tape& t) {
      const T g = t.nodes_[id].grad.data[0] / static_cast<T>(terms.size());
      for (NodeId s : terms)
        if (t.nodes_[s].requires_grad) t.grad_ref(s).data[0] += g;
    };
  }
  return id;
}

template <typename T>
void Tape<T>::backward(NodeId root) {
  require(nodes_[root].value.data.size() == 1, "backward: root must be scalar");
  grad_ref(root).data[0] = T(1);
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.data.empty()) n.back(*this);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace ad
}  // namespace telto
