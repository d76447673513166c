#include "detpp/predictions.hpp"

#include <cmath>

namespace detpp {

std::vector<double> presence_probs(const Tape& tape, const PredictionSet& preds) {
    const Tensor& logits = tape.value(preds.o_logits);
    std::vector<double> out(logits.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = sigmoid_value(logits.data[i]);
    }
    return out;
}

std::vector<double> predicted_shifts(const Tape& tape, const PredictionSet& preds) {
    return tape.value(preds.t_shifts).data;
}

Tensor label_probs(const Tape& tape, const PredictionSet& preds) {
    const Tensor& logits = tape.value(preds.label_logits);
    Tensor out = Tensor::zeros(logits.shape);
    const std::size_t rows = logits.rows();
    const std::size_t cols = logits.cols();
    for (std::size_t r = 0; r < rows; ++r) {
        double m = logits.data[r * cols];
        for (std::size_t j = 1; j < cols; ++j) {
            m = std::max(m, logits.data[r * cols + j]);
        }
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            out.data[r * cols + j] = std::exp(logits.data[r * cols + j] - m);
            s += out.data[r * cols + j];
        }
        for (std::size_t j = 0; j < cols; ++j) {
            out.data[r * cols + j] /= s;
        }
    }
    return out;
}

} // namespace detpp
