#include "detpp/tape.hpp"

#include <cmath>
#include <cstdlib>

#include "detpp/errors.hpp"

namespace detpp {

const char* Tape::op_name(Op op) {
    switch (op) {
        case Op::kConstant: return "constant";
        case Op::kParam: return "param";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kNeg: return "neg";
        case Op::kAbs: return "abs";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kSigmoid: return "sigmoid";
        case Op::kTanh: return "tanh";
        case Op::kLogSigmoid: return "log_sigmoid";
        case Op::kSoftplus: return "softplus";
        case Op::kScale: return "scale";
        case Op::kMatmul: return "matmul";
        case Op::kLogSoftmax: return "log_softmax";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kSlice: return "slice";
        case Op::kConcat: return "concat";
        case Op::kIndexSelect: return "index_select";
        case Op::kReshape: return "reshape";
    }
    return "?";
}

void Tape::reset() { nodes_.clear(); }

void Tape::check_valid(Var v, const char* op) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw NumericError(std::string(op) + ": invalid tape handle");
    }
}

void Tape::check_finite(const Tensor& t, Op op) const {
    for (double x : t.data) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by ") + op_name(op));
        }
    }
}

Var Tape::push(Node node) {
    check_finite(node.value, node.op);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const {
    check_valid(v, "value");
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

double Tape::scalar_value(Var v) const {
    const Tensor& t = value(v);
    if (t.numel() != 1) {
        throw NumericError("scalar_value: tensor has shape " + shape_str(t.shape));
    }
    return t.data[0];
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    if (!p.value.same_shape(p.grad)) {
        p.grad = Tensor::zeros(p.value.shape);
    }
    Node n;
    n.op = Op::kParam;
    n.value = p.value;
    n.parameter = &p;
    return push(std::move(n));
}

namespace {

Tensor elementwise_binary(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
}

Tensor elementwise_unary(const Tensor& a, double (*f)(double)) {
    Tensor out = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
    return out;
}

} // namespace

Var Tape::add(Var a, Var b) {
    check_valid(a, "add");
    check_valid(b, "add");
    if (!val(a.id).same_shape(val(b.id))) {
        throw NumericError("add: shape mismatch " + shape_str(val(a.id).shape) + " vs " +
                           shape_str(val(b.id).shape));
    }
    Node n;
    n.op = Op::kAdd;
    n.a = a.id;
    n.b = b.id;
    n.value = elementwise_binary(val(a.id), val(b.id), [](double x, double y) { return x + y; });
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    check_valid(a, "sub");
    check_valid(b, "sub");
    if (!val(a.id).same_shape(val(b.id))) {
        throw NumericError("sub: shape mismatch " + shape_str(val(a.id).shape) + " vs " +
                           shape_str(val(b.id).shape));
    }
    Node n;
    n.op = Op::kSub;
    n.a = a.id;
    n.b = b.id;
    n.value = elementwise_binary(val(a.id), val(b.id), [](double x, double y) { return x - y; });
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    check_valid(a, "mul");
    check_valid(b, "mul");
    if (!val(a.id).same_shape(val(b.id))) {
        throw NumericError("mul: shape mismatch " + shape_str(val(a.id).shape) + " vs " +
                           shape_str(val(b.id).shape));
    }
    Node n;
    n.op = Op::kMul;
    n.a = a.id;
    n.b = b.id;
    n.value = elementwise_binary(val(a.id), val(b.id), [](double x, double y) { return x * y; });
    return push(std::move(n));
}

Var Tape::neg(Var a) {
    check_valid(a, "neg");
    Node n;
    n.op = Op::kNeg;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return -x; });
    return push(std::move(n));
}

Var Tape::abs(Var a) {
    check_valid(a, "abs");
    Node n;
    n.op = Op::kAbs;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return std::abs(x); });
    return push(std::move(n));
}

Var Tape::exp(Var a) {
    check_valid(a, "exp");
    Node n;
    n.op = Op::kExp;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return std::exp(x); });
    return push(std::move(n));
}

Var Tape::log(Var a) {
    check_valid(a, "log");
    Node n;
    n.op = Op::kLog;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return std::log(x); });
    return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
    check_valid(a, "sigmoid");
    Node n;
    n.op = Op::kSigmoid;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), &sigmoid_value);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    check_valid(a, "tanh");
    Node n;
    n.op = Op::kTanh;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return std::tanh(x); });
    return push(std::move(n));
}

Var Tape::log_sigmoid(Var a) {
    check_valid(a, "log_sigmoid");
    Node n;
    n.op = Op::kLogSigmoid;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), [](double x) { return -softplus_value(-x); });
    return push(std::move(n));
}

Var Tape::softplus(Var a) {
    check_valid(a, "softplus");
    Node n;
    n.op = Op::kSoftplus;
    n.a = a.id;
    n.value = elementwise_unary(val(a.id), &softplus_value);
    return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
    check_valid(a, "scale");
    Node n;
    n.op = Op::kScale;
    n.a = a.id;
    n.factor = factor;
    n.value = Tensor::zeros(val(a.id).shape);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = val(a.id).data[i] * factor;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    auto bad = [&]() {
        return NumericError("matmul: shape mismatch " + shape_str(A.shape) + " vs " +
                            shape_str(B.shape));
    };
    if (A.rank() != 2) throw bad();
    std::size_t m = A.rows(), k = A.cols();
    Node n;
    n.op = Op::kMatmul;
    n.a = a.id;
    n.b = b.id;
    if (B.rank() == 1) {
        if (B.shape[0] != k) throw bad();
        n.value = Tensor::zeros({m});
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += A.data[i * k + j] * B.data[j];
            n.value.data[i] = acc;
        }
    } else if (B.rank() == 2) {
        if (B.rows() != k) throw bad();
        std::size_t c = B.cols();
        n.value = Tensor::zeros({m, c});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                double aij = A.data[i * k + j];
                if (aij == 0.0) continue;
                for (std::size_t l = 0; l < c; ++l) {
                    n.value.data[i * c + l] += aij * B.data[j * c + l];
                }
            }
        }
    } else {
        throw bad();
    }
    return push(std::move(n));
}

Var Tape::log_softmax(Var a) {
    check_valid(a, "log_softmax");
    const Tensor& x = val(a.id);
    if (x.rank() != 1 && x.rank() != 2) {
        throw NumericError("log_softmax: expected rank 1 or 2, got shape " + shape_str(x.shape));
    }
    std::size_t rows = x.rank() == 2 ? x.rows() : 1;
    std::size_t cols = x.rank() == 2 ? x.cols() : x.shape[0];
    Node n;
    n.op = Op::kLogSoftmax;
    n.a = a.id;
    n.value = Tensor::zeros(x.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data.data() + r * cols;
        double m = row[0];
        for (std::size_t j = 1; j < cols; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - m);
        double lse = m + std::log(s);
        for (std::size_t j = 0; j < cols; ++j) n.value.data[r * cols + j] = row[j] - lse;
    }
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    check_valid(a, "sum");
    Node n;
    n.op = Op::kSum;
    n.a = a.id;
    double acc = 0.0;
    for (double x : val(a.id).data) acc += x;
    n.value = Tensor::scalar(acc);
    return push(std::move(n));
}

Var Tape::mean(Var a) {
    check_valid(a, "mean");
    Node n;
    n.op = Op::kMean;
    n.a = a.id;
    double acc = 0.0;
    for (double x : val(a.id).data) acc += x;
    n.value = Tensor::scalar(acc / static_cast<double>(val(a.id).numel()));
    return push(std::move(n));
}

Var Tape::slice(Var a, std::size_t begin, std::size_t end) {
    check_valid(a, "slice");
    const Tensor& x = val(a.id);
    std::size_t dim0 = x.shape.empty() ? 0 : x.shape[0];
    if (begin >= end || end > dim0) {
        throw NumericError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                           ") invalid for shape " + shape_str(x.shape));
    }
    std::size_t rowsize = x.numel() / dim0;
    Node n;
    n.op = Op::kSlice;
    n.a = a.id;
    n.begin = begin;
    n.end = end;
    std::vector<std::size_t> shape = x.shape;
    shape[0] = end - begin;
    n.value = Tensor::zeros(shape);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) {
        n.value.data[i] = x.data[begin * rowsize + i];
    }
    return push(std::move(n));
}

Var Tape::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat: no inputs");
    std::size_t total = 0;
    for (Var p : parts) {
        check_valid(p, "concat");
        if (val(p.id).rank() != 1) {
            throw NumericError("concat: expected rank 1, got shape " + shape_str(val(p.id).shape));
        }
        total += val(p.id).numel();
    }
    Node n;
    n.op = Op::kConcat;
    n.value = Tensor::zeros({total});
    std::size_t off = 0;
    for (Var p : parts) {
        n.parts.push_back(p.id);
        const Tensor& x = val(p.id);
        for (std::size_t i = 0; i < x.data.size(); ++i) n.value.data[off + i] = x.data[i];
        off += x.data.size();
    }
    return push(std::move(n));
}

Var Tape::index_select(Var a, std::size_t dim, std::vector<std::size_t> indices) {
    check_valid(a, "index_select");
    const Tensor& x = val(a.id);
    if (dim >= x.rank()) {
        throw NumericError("index_select: dim " + std::to_string(dim) + " invalid for shape " +
                           shape_str(x.shape));
    }
    for (std::size_t idx : indices) {
        if (idx >= x.shape[dim]) {
            throw NumericError("index_select: index " + std::to_string(idx) +
                               " out of range for shape " + shape_str(x.shape));
        }
    }
    Node n;
    n.op = Op::kIndexSelect;
    n.a = a.id;
    n.dim = dim;
    if (x.rank() == 1) {
        n.value = Tensor::zeros({indices.size()});
        for (std::size_t i = 0; i < indices.size(); ++i) n.value.data[i] = x.data[indices[i]];
    } else if (x.rank() == 2 && dim == 0) {
        std::size_t c = x.cols();
        n.value = Tensor::zeros({indices.size(), c});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            for (std::size_t j = 0; j < c; ++j) n.value.data[i * c + j] = x.data[indices[i] * c + j];
        }
    } else if (x.rank() == 2 && dim == 1) {
        std::size_t r = x.rows(), c = x.cols();
        n.value = Tensor::zeros({r, indices.size()});
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < indices.size(); ++j) {
                n.value.data[i * indices.size() + j] = x.data[i * c + indices[j]];
            }
        }
    } else {
        throw NumericError("index_select: unsupported rank for shape " + shape_str(x.shape));
    }
    n.indices = std::move(indices);
    return push(std::move(n));
}

Var Tape::reshape(Var a, std::vector<std::size_t> new_shape) {
    check_valid(a, "reshape");
    const Tensor& x = val(a.id);
    std::size_t n_new = 1;
    for (std::size_t d : new_shape) n_new *= d;
    if (n_new != x.numel()) {
        throw NumericError("reshape: cannot view shape " + shape_str(x.shape) + " as " +
                           shape_str(new_shape));
    }
    Node n;
    n.op = Op::kReshape;
    n.a = a.id;
    n.value = x;
    n.value.shape = std::move(new_shape);
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    check_valid(loss, "backward");
    if (val(loss.id).numel() != 1) {
        throw NumericError("backward: loss must be scalar, got shape " +
                           shape_str(val(loss.id).shape));
    }

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> seen(nodes_.size(), 0);
    auto touch = [&](int id) -> Tensor& {
        if (!seen[static_cast<std::size_t>(id)]) {
            grads[static_cast<std::size_t>(id)] = Tensor::zeros(val(id).shape);
            seen[static_cast<std::size_t>(id)] = 1;
        }
        return grads[static_cast<std::size_t>(id)];
    };

    touch(loss.id).data[0] = 1.0;

    for (int id = loss.id; id >= 0; --id) {
        if (!seen[static_cast<std::size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& gy = grads[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::kConstant:
                break;
            case Op::kParam: {
                Tensor& pg = n.parameter->grad;
                for (std::size_t i = 0; i < gy.data.size(); ++i) pg.data[i] += gy.data[i];
                break;
            }
            case Op::kAdd: {
                Tensor& ga = touch(n.a);
                Tensor& gb = touch(n.b);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i];
                    gb.data[i] += gy.data[i];
                }
                break;
            }
            case Op::kSub: {
                Tensor& ga = touch(n.a);
                Tensor& gb = touch(n.b);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i];
                    gb.data[i] -= gy.data[i];
                }
                break;
            }
            case Op::kMul: {
                Tensor& ga = touch(n.a);
                Tensor& gb = touch(n.b);
                const Tensor& av = val(n.a);
                const Tensor& bv = val(n.b);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * bv.data[i];
                    gb.data[i] += gy.data[i] * av.data[i];
                }
                break;
            }
            case Op::kNeg: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) ga.data[i] -= gy.data[i];
                break;
            }
            case Op::kAbs: {
                Tensor& ga = touch(n.a);
                const Tensor& av = val(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    double s = av.data[i] > 0.0 ? 1.0 : (av.data[i] < 0.0 ? -1.0 : 0.0);
                    ga.data[i] += gy.data[i] * s;
                }
                break;
            }
            case Op::kExp: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * n.value.data[i];
                }
                break;
            }
            case Op::kLog: {
                Tensor& ga = touch(n.a);
                const Tensor& av = val(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] / av.data[i];
                }
                break;
            }
            case Op::kSigmoid: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    double y = n.value.data[i];
                    ga.data[i] += gy.data[i] * y * (1.0 - y);
                }
                break;
            }
            case Op::kTanh: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    double y = n.value.data[i];
                    ga.data[i] += gy.data[i] * (1.0 - y * y);
                }
                break;
            }
            case Op::kLogSigmoid: {
                // y = log sigmoid(x), dy/dx = 1 - sigmoid(x) = 1 - exp(y)
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * (1.0 - std::exp(n.value.data[i]));
                }
                break;
            }
            case Op::kSoftplus: {
                Tensor& ga = touch(n.a);
                const Tensor& av = val(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * sigmoid_value(av.data[i]);
                }
                break;
            }
            case Op::kScale: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[i] += gy.data[i] * n.factor;
                }
                break;
            }
            case Op::kMatmul: {
                Tensor& ga = touch(n.a);
                Tensor& gb = touch(n.b);
                const Tensor& A = val(n.a);
                const Tensor& B = val(n.b);
                std::size_t m = A.rows(), k = A.cols();
                if (B.rank() == 1) {
                    // y = A x: dA[i][j] += gy[i] x[j]; dx[j] += A[i][j] gy[i]
                    for (std::size_t i = 0; i < m; ++i) {
                        double g = gy.data[i];
                        if (g == 0.0) continue;
                        for (std::size_t j = 0; j < k; ++j) {
                            ga.data[i * k + j] += g * B.data[j];
                            gb.data[j] += A.data[i * k + j] * g;
                        }
                    }
                } else {
                    // Y = A B: dA += gY B^T; dB += A^T gY
                    std::size_t c = B.cols();
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t l = 0; l < c; ++l) {
                            double g = gy.data[i * c + l];
                            if (g == 0.0) continue;
                            for (std::size_t j = 0; j < k; ++j) {
                                ga.data[i * k + j] += g * B.data[j * c + l];
                                gb.data[j * c + l] += A.data[i * k + j] * g;
                            }
                        }
                    }
                }
                break;
            }
            case Op::kLogSoftmax: {
                // dx = gy - exp(y) * sum(gy), per row
                Tensor& ga = touch(n.a);
                std::size_t rows = n.value.rank() == 2 ? n.value.rows() : 1;
                std::size_t cols = n.value.rank() == 2 ? n.value.cols() : n.value.shape[0];
                for (std::size_t r = 0; r < rows; ++r) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) s += gy.data[r * cols + j];
                    for (std::size_t j = 0; j < cols; ++j) {
                        ga.data[r * cols + j] +=
                            gy.data[r * cols + j] - std::exp(n.value.data[r * cols + j]) * s;
                    }
                }
                break;
            }
            case Op::kSum: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += gy.data[0];
                break;
            }
            case Op::kMean: {
                Tensor& ga = touch(n.a);
                double g = gy.data[0] / static_cast<double>(ga.numel());
                for (std::size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g;
                break;
            }
            case Op::kSlice: {
                Tensor& ga = touch(n.a);
                std::size_t rowsize = n.value.numel() / (n.end - n.begin);
                for (std::size_t i = 0; i < gy.data.size(); ++i) {
                    ga.data[n.begin * rowsize + i] += gy.data[i];
                }
                break;
            }
            case Op::kConcat: {
                std::size_t off = 0;
                for (int pid : n.parts) {
                    Tensor& gp = touch(pid);
                    for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += gy.data[off + i];
                    off += gp.data.size();
                }
                break;
            }
            case Op::kIndexSelect: {
                Tensor& ga = touch(n.a);
                const Tensor& av = val(n.a);
                if (av.rank() == 1) {
                    for (std::size_t i = 0; i < n.indices.size(); ++i) {
                        ga.data[n.indices[i]] += gy.data[i];
                    }
                } else if (n.dim == 0) {
                    std::size_t c = av.cols();
                    for (std::size_t i = 0; i < n.indices.size(); ++i) {
                        for (std::size_t j = 0; j < c; ++j) {
                            ga.data[n.indices[i] * c + j] += gy.data[i * c + j];
                        }
                    }
                } else {
                    std::size_t r = av.rows(), c = av.cols();
                    std::size_t cout = n.indices.size();
                    for (std::size_t i = 0; i < r; ++i) {
                        for (std::size_t j = 0; j < cout; ++j) {
                            ga.data[i * c + n.indices[j]] += gy.data[i * cout + j];
                        }
                    }
                }
                break;
            }
            case Op::kReshape: {
                Tensor& ga = touch(n.a);
                for (std::size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i];
                break;
            }
        }
    }
}

} // namespace detpp
