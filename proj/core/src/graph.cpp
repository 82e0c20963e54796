#include "altermoma/graph.hpp"

#include <algorithm>
#include <cmath>

namespace altermoma {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::Lidar: return "lidar";
    case Partition::Camera: return "camera";
    case Partition::Fusion: return "fusion";
  }
  return "?";
}

Partition partition_from_name(const std::string& name) {
  if (name == "lidar") return Partition::Lidar;
  if (name == "camera") return Partition::Camera;
  if (name == "fusion") return Partition::Fusion;
  throw std::invalid_argument("unknown partition name: " + name);
}

Parameter::Parameter(std::string id_, Partition part, Tensor v)
    : id(std::move(id_)), partition(part), values(std::move(v)) {
  mask.assign(values.data.size(), 1.0);
}

std::size_t Parameter::kept_count() const {
  std::size_t n = 0;
  for (double m : mask) n += (m != 0.0);
  return n;
}

void Parameter::apply_mask() {
  for (std::size_t i = 0; i < values.data.size(); ++i) values.data[i] = mask[i] * values.data[i];
}

double ModalityMasks::factor(Partition p) const {
  switch (p) {
    case Partition::Lidar: return lidar;
    case Partition::Camera: return camera;
    case Partition::Fusion: return fusion;
  }
  return 1.0;
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::Relu: return "relu";
    case OpKind::Mul: return "mul";
    case OpKind::Concat: return "concat";
    case OpKind::Mse: return "mse";
    case OpKind::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

int Graph::add(Node n) {
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  return static_cast<int>(nodes_.size()) - 1;
}

const Node& Graph::checked(int id, const char* ctx) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument(std::string(ctx) + ": node id " + std::to_string(id) +
                                " out of range");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

void Graph::fail(int id, const std::string& msg) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  std::string label = op_name(n.kind);
  if (!n.name.empty()) label += " '" + n.name + "'";
  throw std::runtime_error("node #" + std::to_string(id) + " (" + label + "): " + msg);
}

int Graph::input(std::string name) {
  Node n;
  n.kind = OpKind::Input;
  n.name = std::move(name);
  return add(std::move(n));
}

int Graph::param(Parameter* p) {
  if (p == nullptr) throw std::invalid_argument("Graph::param: null parameter");
  Node n;
  n.kind = OpKind::Param;
  n.name = p->id;
  n.param = p;
  return add(std::move(n));
}

int Graph::constant(Tensor value) {
  Node n;
  n.kind = OpKind::Constant;
  n.value = std::move(value);
  return add(std::move(n));
}

int Graph::matmul(int a, int b) {
  checked(a, "matmul");
  checked(b, "matmul");
  Node n;
  n.kind = OpKind::MatMul;
  n.inputs = {a, b};
  return add(std::move(n));
}

int Graph::bias_add(int x, int b) {
  checked(x, "bias_add");
  checked(b, "bias_add");
  Node n;
  n.kind = OpKind::BiasAdd;
  n.inputs = {x, b};
  return add(std::move(n));
}

int Graph::relu(int x) {
  checked(x, "relu");
  Node n;
  n.kind = OpKind::Relu;
  n.inputs = {x};
  return add(std::move(n));
}

int Graph::mul(int a, int b) {
  checked(a, "mul");
  checked(b, "mul");
  Node n;
  n.kind = OpKind::Mul;
  n.inputs = {a, b};
  return add(std::move(n));
}

int Graph::concat(int a, int b) {
  checked(a, "concat");
  checked(b, "concat");
  Node n;
  n.kind = OpKind::Concat;
  n.inputs = {a, b};
  return add(std::move(n));
}

int Graph::mse(int pred, int target) {
  checked(pred, "mse");
  checked(target, "mse");
  Node n;
  n.kind = OpKind::Mse;
  n.inputs = {pred, target};
  return add(std::move(n));
}

int Graph::softmax_xent(int logits, int target) {
  checked(logits, "softmax_xent");
  checked(target, "softmax_xent");
  Node n;
  n.kind = OpKind::SoftmaxXent;
  n.inputs = {logits, target};
  return add(std::move(n));
}

void Graph::set_loss(int node) {
  checked(node, "set_loss");
  loss_ = node;
}

double Graph::forward(const Inputs& inputs) {
  if (loss_ < 0) throw std::runtime_error("forward: no loss node designated");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    const int id = static_cast<int>(i);
    switch (n.kind) {
      case OpKind::Input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) fail(id, "no tensor bound for this input");
        n.value = it->second;
        break;
      }
      case OpKind::Param: {
        const Parameter& p = *n.param;
        const double mu = modality_.factor(p.partition);
        n.value.shape = p.values.shape;
        n.value.data.resize(p.values.data.size());
        for (std::size_t j = 0; j < p.values.data.size(); ++j) {
          n.value.data[j] = p.values.data[j] * p.mask[j] * mu;
        }
        break;
      }
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (!a.is_matrix() || !b.is_matrix())
          fail(id, "operands must be matrices, got " + shape_str(a.shape) + " and " +
                       shape_str(b.shape));
        if (a.cols() != b.rows())
          fail(id, "inner dimensions disagree: " + shape_str(a.shape) + " x " +
                       shape_str(b.shape));
        const std::size_t N = a.rows(), K = a.cols(), M = b.cols();
        n.value = Tensor::zeros({N, M});
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t k = 0; k < K; ++k) {
            const double av = a.data[r * K + k];
            for (std::size_t c = 0; c < M; ++c) {
              n.value.data[r * M + c] += av * b.data[k * M + c];
            }
          }
        }
        break;
      }
      case OpKind::BiasAdd: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (!x.is_matrix() || b.shape.size() != 1)
          fail(id, "expects matrix + vector, got " + shape_str(x.shape) + " and " +
                       shape_str(b.shape));
        if (b.numel() != x.cols())
          fail(id, "bias length " + std::to_string(b.numel()) + " vs " +
                       std::to_string(x.cols()) + " columns");
        n.value = x;
        const std::size_t C = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < C; ++c) n.value.data[r * C + c] += b.data[c];
        break;
      }
      case OpKind::Relu: {
        const Tensor& x = nodes_[n.inputs[0]].value;
        n.value = x;
        for (double& v : n.value.data) v = (v > 0.0) ? v : 0.0;
        break;
      }
      case OpKind::Mul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (a.shape != b.shape)
          fail(id, "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        n.value = a;
        for (std::size_t j = 0; j < n.value.data.size(); ++j) n.value.data[j] *= b.data[j];
        break;
      }
      case OpKind::Concat: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        if (!a.is_matrix() || !b.is_matrix() || a.rows() != b.rows())
          fail(id, "row counts disagree: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        const std::size_t N = a.rows(), Ca = a.cols(), Cb = b.cols();
        n.value = Tensor::zeros({N, Ca + Cb});
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t c = 0; c < Ca; ++c) n.value.data[r * (Ca + Cb) + c] = a.data[r * Ca + c];
          for (std::size_t c = 0; c < Cb; ++c)
            n.value.data[r * (Ca + Cb) + Ca + c] = b.data[r * Cb + c];
        }
        break;
      }
      case OpKind::Mse: {
        const Tensor& p = nodes_[n.inputs[0]].value;
        const Tensor& t = nodes_[n.inputs[1]].value;
        if (p.shape != t.shape)
          fail(id, "shape mismatch " + shape_str(p.shape) + " vs " + shape_str(t.shape));
        if (p.numel() == 0) fail(id, "empty operands");
        double acc = 0.0;
        for (std::size_t j = 0; j < p.numel(); ++j) {
          const double d = p.data[j] - t.data[j];
          acc += d * d;
        }
        n.value = Tensor::from({1, 1}, {acc / static_cast<double>(p.numel())});
        break;
      }
      case OpKind::SoftmaxXent: {
        const Tensor& z = nodes_[n.inputs[0]].value;
        const Tensor& y = nodes_[n.inputs[1]].value;
        if (!z.is_matrix() || z.shape != y.shape)
          fail(id, "shape mismatch " + shape_str(z.shape) + " vs " + shape_str(y.shape));
        const std::size_t N = z.rows(), C = z.cols();
        double acc = 0.0;
        for (std::size_t r = 0; r < N; ++r) {
          double zmax = z.data[r * C];
          for (std::size_t c = 1; c < C; ++c) zmax = std::max(zmax, z.data[r * C + c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < C; ++c) sum += std::exp(z.data[r * C + c] - zmax);
          const double logsum = std::log(sum) + zmax;
          for (std::size_t c = 0; c < C; ++c) {
            acc -= y.data[r * C + c] * (z.data[r * C + c] - logsum);
          }
        }
        n.value = Tensor::from({1, 1}, {acc / static_cast<double>(N)});
        break;
      }
    }
  }
  const Tensor& loss = nodes_[static_cast<std::size_t>(loss_)].value;
  if (loss.numel() != 1) {
    fail(loss_, "designated loss is not scalar, shape " + shape_str(loss.shape));
  }
  forward_done_ = true;
  return loss.data[0];
}

GradMap Graph::backward() {
  if (!forward_done_) throw std::runtime_error("backward: no forward pass has been run");
  for (Node& n : nodes_) n.grad.assign(n.value.data.size(), 0.0);
  nodes_[static_cast<std::size_t>(loss_)].grad.assign(1, 1.0);

  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    switch (n.kind) {
      case OpKind::Input:
      case OpKind::Param:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        const std::size_t N = a.value.rows(), K = a.value.cols(), M = b.value.cols();
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::size_t c = 0; c < M; ++c) acc += n.grad[r * M + c] * b.value.data[k * M + c];
            a.grad[r * K + k] += acc;
          }
        }
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t c = 0; c < M; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < N; ++r) acc += a.value.data[r * K + k] * n.grad[r * M + c];
            b.grad[k * M + c] += acc;
          }
        }
        break;
      }
      case OpKind::BiasAdd: {
        Node& x = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        const std::size_t C = x.value.cols();
        for (std::size_t j = 0; j < n.grad.size(); ++j) x.grad[j] += n.grad[j];
        for (std::size_t r = 0; r < x.value.rows(); ++r)
          for (std::size_t c = 0; c < C; ++c) b.grad[c] += n.grad[r * C + c];
        break;
      }
      case OpKind::Relu: {
        Node& x = nodes_[n.inputs[0]];
        for (std::size_t j = 0; j < n.grad.size(); ++j)
          if (x.value.data[j] > 0.0) x.grad[j] += n.grad[j];
        break;
      }
      case OpKind::Mul: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        for (std::size_t j = 0; j < n.grad.size(); ++j) {
          a.grad[j] += n.grad[j] * b.value.data[j];
          b.grad[j] += n.grad[j] * a.value.data[j];
        }
        break;
      }
      case OpKind::Concat: {
        Node& a = nodes_[n.inputs[0]];
        Node& b = nodes_[n.inputs[1]];
        const std::size_t N = a.value.rows(), Ca = a.value.cols(), Cb = b.value.cols();
        for (std::size_t r = 0; r < N; ++r) {
          for (std::size_t c = 0; c < Ca; ++c) a.grad[r * Ca + c] += n.grad[r * (Ca + Cb) + c];
          for (std::size_t c = 0; c < Cb; ++c)
            b.grad[r * Cb + c] += n.grad[r * (Ca + Cb) + Ca + c];
        }
        break;
      }
      case OpKind::Mse: {
        Node& p = nodes_[n.inputs[0]];
        Node& t = nodes_[n.inputs[1]];
        const double g = n.grad[0];
        const double scale = 2.0 / static_cast<double>(p.value.numel());
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
          const double d = scale * (p.value.data[j] - t.value.data[j]) * g;
          p.grad[j] += d;
          t.grad[j] -= d;
        }
        break;
      }
      case OpKind::SoftmaxXent: {
        Node& z = nodes_[n.inputs[0]];
        Node& y = nodes_[n.inputs[1]];
        const double g = n.grad[0];
        const std::size_t N = z.value.rows(), C = z.value.cols();
        const double inv_n = 1.0 / static_cast<double>(N);
        for (std::size_t r = 0; r < N; ++r) {
          double zmax = z.value.data[r * C];
          for (std::size_t c = 1; c < C; ++c) zmax = std::max(zmax, z.value.data[r * C + c]);
          double sum = 0.0;
          for (std::size_t c = 0; c < C; ++c) sum += std::exp(z.value.data[r * C + c] - zmax);
          double ysum = 0.0;
          for (std::size_t c = 0; c < C; ++c) ysum += y.value.data[r * C + c];
          const double logsum = std::log(sum) + zmax;
          for (std::size_t c = 0; c < C; ++c) {
            const double p = std::exp(z.value.data[r * C + c] - zmax) / sum;
            z.grad[r * C + c] += g * inv_n * (ysum * p - y.value.data[r * C + c]);
            y.grad[r * C + c] += g * inv_n * (logsum - z.value.data[r * C + c]);
          }
        }
        break;
      }
    }
  }

  GradMap out;
  for (Node& n : nodes_) {
    if (n.kind != OpKind::Param) continue;
    Parameter& p = *n.param;
    const double mu = modality_.factor(p.partition);
    auto& slot = out[p.id];
    if (slot.empty()) slot.assign(p.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) slot[j] += n.grad[j] * p.mask[j] * mu;
  }
  for (Node& n : nodes_) {
    if (n.kind == OpKind::Param) n.param->values.grad = out[n.param->id];
  }
  return out;
}

std::vector<Parameter*> Graph::parameters() const {
  std::vector<Parameter*> out;
  for (const Node& n : nodes_) {
    if (n.kind != OpKind::Param) continue;
    if (std::find(out.begin(), out.end(), n.param) == out.end()) out.push_back(n.param);
  }
  return out;
}

void sgd_step(const std::vector<Parameter*>& params, const GradMap& grads, double lr) {
  for (Parameter* p : params) {
    auto it = grads.find(p->id);
    if (it == grads.end()) throw std::invalid_argument("sgd_step: no gradient for " + p->id);
    if (it->second.size() != p->size())
      throw std::invalid_argument("sgd_step: gradient length mismatch for " + p->id);
    for (std::size_t j = 0; j < p->size(); ++j) {
      if (p->mask[j] == 1.0) p->values.data[j] -= lr * it->second[j];
    }
  }
}

}  // namespace altermoma
