#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scl/tensor.hpp"

namespace scl {

// Handle to a node inside a Graph.
struct Var {
    static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
    std::size_t id = kInvalid;
    bool valid() const { return id != kInvalid; }
};

// A differentiable primitive. forward() may cache whatever backward() needs.
class Op {
public:
    virtual ~Op() = default;
    virtual const char* name() const = 0;
    virtual Tensor forward(std::span<const Tensor* const> inputs) = 0;
    // Accumulates into input_grads[k] (null when input k needs no gradient).
    virtual void backward(const Tensor& output, std::span<const double> output_grad,
                          std::span<const Tensor* const> inputs,
                          std::span<const std::span<double>> input_grads) = 0;
    // Count of degenerate inputs seen by the last forward (see kNormFloor).
    virtual std::size_t degenerate_count() const { return 0; }
};

// Inputs are L2-normalized row by row unless their norm falls below this floor.
inline constexpr double kNormFloor = 1e-12;

// Define-by-run record of primitive operations. Nodes are evaluated as soon
// as all their inputs hold values; placeholders defer evaluation until
// evaluate() binds them. Nodes are stored in creation order, which is a
// topological order.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Leaves.
    Var input(const std::string& name, Tensor value, bool requires_grad = false);
    Var placeholder(const std::string& name, bool requires_grad = false);
    Var constant(Tensor value);
    // Gradient flows back into param.grad on backward(); param must outlive the graph.
    Var parameter(Tensor& param);

    // Primitives. Shapes are checked when the node is evaluated.
    Var matmul(Var a, Var b);                  // [m,k] x [k,n]
    Var add_bias(Var x, Var bias);             // [m,n] + [n]
    Var relu(Var x);
    Var batch_norm(Var x, Var gamma, Var beta, double eps);  // batch statistics over rows
    Var batch_norm_inference(Var x, Var gamma, Var beta, const Tensor& running_mean,
                             const Tensor& running_var, double eps);
    // Output row r is the mean of input rows groups[r].
    Var row_group_mean(Var x, std::vector<std::vector<std::size_t>> groups);
    Var reshape(Var x, Shape shape);
    Var concat_cols(Var a, Var b);
    Var slice_rows(Var x, std::size_t begin, std::size_t count);
    Var l2_normalize_rows(Var x);
    Var dot(Var a, Var b);                     // equal-size operands -> scalar
    Var sum(Var x);
    Var scale(Var x, double factor);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var log(Var x);
    Var exp(Var x);
    // Row-wise log(sum_k weights[k] * exp(x[r,k])) evaluated with max-subtraction.
    Var weighted_log_sum_exp(Var x, std::vector<double> weights);

    void set_output(const std::string& name, Var v) { outputs_[name] = v; }

    // Binds named inputs/placeholders, re-runs every node in order and
    // returns the values of all named outputs.
    std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs = {});

    // Reverse pass from a scalar node. Resets node gradients first; parameter
    // gradients accumulate into the bound tensors.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() w.r.t. a node; zeros if it did not participate.
    const Tensor& grad(Var v) const;
    bool evaluated(Var v) const;
    const Op& op(Var v) const;

    // Biased per-column statistics computed by a batch_norm node's last forward.
    struct BatchStats {
        std::vector<double> mean;
        std::vector<double> var;
    };
    BatchStats batch_norm_stats(Var v) const;

    std::size_t size() const { return nodes_.size(); }
    // Number of rows returned unnormalized because their norm fell below kNormFloor.
    std::size_t norm_floor_hits() const;

private:
    enum class Kind { Input, Constant, Parameter, Operation };

    struct Node {
        Kind kind = Kind::Operation;
        std::string name;
        std::unique_ptr<Op> op;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        Tensor* param = nullptr;
        bool requires_grad = false;
        bool evaluated = false;
    };

    Var add_op(std::unique_ptr<Op> op, std::vector<Var> inputs);
    void run(Node& node);
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    std::map<std::string, Var> outputs_;
};

// Central-difference estimate of df/dx, one coordinate at a time.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double step);

// ||a - b|| / max(||a||, ||b||), or the absolute difference when both are below floor.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace scl
