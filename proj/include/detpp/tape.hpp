#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "detpp/tensor.hpp"

namespace detpp {

// Overflow-safe scalar forms shared by tape primitives and off-tape views.
inline double sigmoid_value(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_value(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// A named trainable tensor with its accumulated gradient. Gradients
// accumulate across backward calls; the optimizer zeroes them.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Handle to a node on a Tape. Only valid for the tape that produced it,
// and only until that tape is reset.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape. Records primitive operations in execution
// order; backward() replays them in exact reverse order. Every primitive
// traps non-finite outputs and rejects shape mismatches, naming itself and
// the offending shapes. No implicit broadcasting anywhere.
//
// A tape and its Vars are confined to one thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Drops all nodes but keeps allocated capacity for reuse.
    void reset();

    std::size_t size() const { return nodes_.size(); }

    // Leaves.
    Var constant(Tensor value);
    Var constant_scalar(double value) { return constant(Tensor::scalar(value)); }
    Var param(Parameter& p);

    // Elementwise binary (shapes must match exactly).
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);

    // Elementwise unary.
    Var neg(Var a);
    Var abs(Var a);          // subgradient 0 at exactly 0
    Var exp(Var a);
    Var log(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var log_sigmoid(Var a);  // stable -softplus(-x)
    Var softplus(Var a);     // stable max(x,0) + log1p(exp(-|x|))
    Var scale(Var a, double factor);

    // [m,k] x [k,n] -> [m,n], or [m,k] x [k] -> [m].
    Var matmul(Var a, Var b);

    // Rank 1: over the whole vector. Rank 2: per row.
    Var log_softmax(Var a);

    Var sum(Var a);   // -> {1}
    Var mean(Var a);  // -> {1}

    // Range [begin, end) over dim 0 (elements of a vector, rows of a matrix).
    Var slice(Var a, std::size_t begin, std::size_t end);

    // Concatenation along dim 0 of rank-1 tensors.
    Var concat(const std::vector<Var>& parts);

    // dim 0 selects elements (rank 1) or rows (rank 2); dim 1 selects
    // columns (rank 2). Indices may repeat; gradients scatter-add.
    Var index_select(Var a, std::size_t dim, std::vector<std::size_t> indices);

    Var reshape(Var a, std::vector<std::size_t> new_shape);

    const Tensor& value(Var v) const;
    double scalar_value(Var v) const;

    // Reverse sweep from a scalar loss; accumulates d loss / d parameter
    // into every reachable Parameter's grad.
    void backward(Var loss);

private:
    enum class Op {
        kConstant,
        kParam,
        kAdd,
        kSub,
        kMul,
        kNeg,
        kAbs,
        kExp,
        kLog,
        kSigmoid,
        kTanh,
        kLogSigmoid,
        kSoftplus,
        kScale,
        kMatmul,
        kLogSoftmax,
        kSum,
        kMean,
        kSlice,
        kConcat,
        kIndexSelect,
        kReshape,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        Tensor value;
        Parameter* parameter = nullptr;
        double factor = 0.0;                // kScale
        std::size_t begin = 0, end = 0;     // kSlice
        std::size_t dim = 0;                // kIndexSelect
        std::vector<std::size_t> indices;   // kIndexSelect
        std::vector<int> parts;             // kConcat
    };

    static const char* op_name(Op op);
    const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Var push(Node node);
    void check_valid(Var v, const char* op) const;
    void check_finite(const Tensor& t, Op op) const;

    std::vector<Node> nodes_;
};

} // namespace detpp
