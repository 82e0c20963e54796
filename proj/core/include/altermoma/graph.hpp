#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "altermoma/tensor.hpp"

namespace altermoma {

enum class Partition : std::uint8_t { Lidar = 0, Camera = 1, Fusion = 2 };

const char* partition_name(Partition p);
Partition partition_from_name(const std::string& name);

// A trainable tensor plus its pruning mask. Masks multiply the value
// functionally during the forward pass, so the stored values are never
// clobbered by masking; sgd_step additionally refuses to touch entries whose
// mask is 0, which keeps pruned entries at exactly zero once committed.
struct Parameter {
  std::string id;
  Partition partition = Partition::Fusion;
  Tensor values;
  std::vector<double> mask;  // entries are exactly 0.0 or 1.0

  Parameter() = default;
  Parameter(std::string id_, Partition part, Tensor v);

  std::size_t size() const { return values.data.size(); }
  std::size_t kept_count() const;
  // Commits the mask into the stored values (theta = mask * theta).
  void apply_mask();
};

// Multiplicative per-partition masks (mu_l, mu_c, mu_f). Setting one to zero
// silences that partition's parameters, biases included, so a masked backbone
// emits exactly zero features.
struct ModalityMasks {
  double lidar = 1.0;
  double camera = 1.0;
  double fusion = 1.0;

  double factor(Partition p) const;
  bool all_unmasked() const { return lidar == 1.0 && camera == 1.0 && fusion == 1.0; }
};

enum class OpKind : std::uint8_t {
  Input,
  Param,
  Constant,
  MatMul,
  BiasAdd,
  Relu,
  Mul,
  Concat,
  Mse,
  SoftmaxXent,
};

const char* op_name(OpKind k);

struct Node {
  OpKind kind;
  std::vector<int> inputs;   // node ids, always earlier in the list
  std::string name;          // input binding name, or parameter id
  Parameter* param = nullptr;
  Tensor value;              // forward result (effective, i.e. masked, for Param)
  std::vector<double> grad;  // d loss / d value, filled by backward
};

using GradMap = std::map<std::string, std::vector<double>>;
using Inputs = std::map<std::string, Tensor>;

// Computation graph over a fixed primitive set. Nodes are appended in
// topological order by construction; forward evaluates them in order and
// backward walks them in reverse. Exactly one node is designated the scalar
// loss output.
class Graph {
 public:
  int input(std::string name);
  int param(Parameter* p);
  int constant(Tensor value);

  int matmul(int a, int b);
  int bias_add(int x, int b);
  int relu(int x);
  int mul(int a, int b);
  // Concatenates two matrices along the feature (column) axis.
  int concat(int a, int b);
  int mse(int pred, int target);
  // Logits vs one-hot (or probability) rows, mean over the batch.
  int softmax_xent(int logits, int target);

  void set_loss(int node);
  int loss_node() const { return loss_; }

  ModalityMasks& modality() { return modality_; }
  const ModalityMasks& modality() const { return modality_; }

  // Evaluates the loss for the bound inputs. Missing or shape-mismatched
  // bindings raise descriptive errors naming the offending node.
  double forward(const Inputs& inputs);

  // Reverse pass over the last forward. Returns d loss / d theta per
  // parameter id and mirrors it into each Parameter's grad buffer.
  // Parameters not reachable from the loss get an exact zero gradient.
  GradMap backward();

  std::vector<Parameter*> parameters() const;
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  int add(Node n);
  const Node& checked(int id, const char* ctx) const;
  [[noreturn]] void fail(int id, const std::string& msg) const;

  std::vector<Node> nodes_;
  ModalityMasks modality_;
  int loss_ = -1;
  bool forward_done_ = false;
};

// theta <- theta - lr * grad, applied only where the parameter's mask is 1.
// Every parameter must have a gradient entry of matching length.
void sgd_step(const std::vector<Parameter*>& params, const GradMap& grads, double lr);

}  // namespace altermoma
