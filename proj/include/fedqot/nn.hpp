#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedqot/errors.hpp"

namespace fedqot {

// Dense row-major matrix of doubles.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(size_t r, size_t c) { return data[r * cols + c]; }
  double at(size_t r, size_t c) const { return data[r * cols + c]; }
  const double* row(size_t r) const { return data.data() + r * cols; }
  double* row(size_t r) { return data.data() + r * cols; }
};

// Fully-connected network architecture: input width, hidden layer widths,
// output class count. output_dim is 2 for the QoT task.
struct ModelSpec {
  uint32_t input_dim = 0;
  std::vector<uint32_t> hidden_dims;
  uint32_t output_dim = 0;

  bool operator==(const ModelSpec&) const = default;

  // Number of weight layers (hidden count + 1).
  size_t layer_count() const { return hidden_dims.size() + 1; }

  // (fan_in, fan_out) of each weight layer in order.
  std::vector<std::pair<uint32_t, uint32_t>> layer_shapes() const;

  // Total scalar parameter count: sum of fan_in*fan_out + fan_out.
  size_t param_count() const;

  // Throws ValidationError unless every dim >= 1.
  void validate() const;
};

// Flat parameter array in canonical layout: for each weight layer in order,
// the weight matrix row-major [output][input], then the bias vector. The
// layout is identical on the coordinator and on every edge node.
struct ParameterVector {
  ModelSpec spec;
  std::vector<double> values;
};

// Same length and layout as the ParameterVector it differentiates.
struct Gradient {
  std::vector<double> values;
};

// A batch of encoded samples: features rows x input_dim, labels are class
// indices.
struct Batch {
  Matrix features;
  std::vector<int32_t> labels;

  size_t size() const { return features.rows; }
};

// Glorot-uniform weights in [-L, +L] with L = sqrt(6/(fan_in+fan_out)),
// biases zero. One splitmix64 stream seeded with `seed` supplies a draw per
// weight entry in canonical layout order, so the same (spec, seed) always
// yields the same bits.
ParameterVector init_params(const ModelSpec& spec, uint64_t seed);

// Forward pass: ReLU on hidden layers, softmax on the output. Returns one
// probability row per sample.
Matrix forward(const ParameterVector& params, const Batch& batch);

struct LossGrad {
  double loss = 0.0;
  Gradient grad;
};

// Mean cross-entropy over the batch and its analytic gradient with respect
// to every parameter (same layout as the parameter vector).
LossGrad loss_and_grad(const ParameterVector& params, const Batch& batch);

// Mean cross-entropy only (no gradient).
double compute_loss(const ParameterVector& params, const Batch& batch);

// Element-wise params - eta * grad.
ParameterVector sgd_step(const ParameterVector& params, const Gradient& grad,
                         double eta);

// Fraction of samples whose argmax class equals the label. Argmax ties break
// toward the lowest class index.
double evaluate_accuracy(const ParameterVector& params, const Batch& data);

// Parameter blob codec. Layout, little-endian throughout:
//   "FAVG" | u8 version=1 | u8 layer_count | u16 reserved=0 |
//   per weight layer: u32 fan_in, u32 fan_out |
//   all values as IEEE-754 binary64 in canonical layout.
std::vector<uint8_t> serialize_params(const ParameterVector& params);
ParameterVector deserialize_params(const std::vector<uint8_t>& bytes,
                                   const ModelSpec& spec);

// Reads the architecture out of a blob header (for self-describing loads).
ModelSpec peek_blob_spec(const std::vector<uint8_t>& bytes);

}  // namespace fedqot
