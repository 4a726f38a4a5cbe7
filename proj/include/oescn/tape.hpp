#pragma once

#include <functional>
#include <vector>

#include "oescn/common.hpp"
#include "oescn/grid.hpp"

namespace oescn {

enum class RunMode { train, eval };
enum class Padding { same, valid };

// Reverse-mode autodiff over Grids. Ops append nodes; backward() walks the
// recorded graph once, in reverse creation order, accumulating gradients
// into every node that leads to a grad-requiring leaf. A tape is built per
// step and discarded; parameters live outside and are copied in as leaves.
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var leaf(Grid value, bool requires_grad = false);

  const Grid& value(Var v) const;
  // Gradient of the last backward() target with respect to v. Zero grid if
  // no gradient reached v.
  const Grid& grad(Var v);

  // Seeds d(loss)/d(loss) = 1 and back-propagates. loss must be scalar and a
  // forward pass must have been recorded; a tape supports one backward.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // 2-D linear algebra.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var scale(Var a, double c);
  Var add(Var a, Var b);
  Var cmul(Var a, Grid w);  // elementwise product with a constant grid
  Var slice_cols(Var a, int start, int count);
  Var concat_cols(const std::vector<Var>& xs);
  Var softmax_cols(Var a);

  // Head fusion: w_max * max(a, b) + w_avg * avg(a, b) + bias, with scalar
  // parameters w_max / w_avg / bias.
  Var fuse_heads(Var a, Var b, Var w_max, Var w_avg, Var bias);

  // Batch assembly: n matrices [h, w] -> [n, 1, h, w].
  Var stack2d(const std::vector<Var>& xs);

  // Stride-1 cross-correlation with zero padding. Same padding keeps the
  // spatial extents (asymmetric on the trailing side for even kernels).
  Var conv2d(Var x, Var kernels, Var bias, Padding pad);
  Var elu(Var x);
  Var avg_pool2d(Var x, int ph, int pw, int sh, int sw);
  Var batch_norm(Var x, Var gain, Var shift, Grid& running_mean,
                 Grid& running_var, RunMode mode, double momentum = 0.1,
                 double eps = 1e-5);
  Var dropout(Var x, double p_drop, RunMode mode, Rng& rng);
  Var flatten(Var x);
  Var concat_depth(const std::vector<Var>& xs);
  Var dense(Var x, Var w, Var b);
  Var softmax_rows(Var x);
  // Mean of -log softmax(logits)[target] over the batch; scalar output.
  Var cross_entropy_logits(Var logits, const std::vector<int>& targets);
  Var sum(Var x);

 private:
  struct Node {
    Grid value;
    Grid grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;

  Var push(Grid value, bool requires_grad,
           std::function<void(Tape&, int)> backprop);
  const Node& node(Var v) const;
  bool rg(Var v) const { return node(v).requires_grad; }
  Grid& grad_buf(int id);
  bool has_grad(int id) const;
};

}  // namespace oescn
