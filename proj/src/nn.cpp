#include "fedqot/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedqot/rng.hpp"

namespace fedqot {

std::vector<std::pair<uint32_t, uint32_t>> ModelSpec::layer_shapes() const {
  std::vector<std::pair<uint32_t, uint32_t>> shapes;
  shapes.reserve(layer_count());
  uint32_t fan_in = input_dim;
  for (uint32_t h : hidden_dims) {
    shapes.emplace_back(fan_in, h);
    fan_in = h;
  }
  shapes.emplace_back(fan_in, output_dim);
  return shapes;
}

size_t ModelSpec::param_count() const {
  size_t total = 0;
  for (auto [fi, fo] : layer_shapes()) {
    total += static_cast<size_t>(fi) * fo + fo;
  }
  return total;
}

void ModelSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) {
    throw ValidationError("model spec: input_dim and output_dim must be >= 1");
  }
  for (uint32_t h : hidden_dims) {
    if (h < 1) throw ValidationError("model spec: hidden dims must be >= 1");
  }
}

ParameterVector init_params(const ModelSpec& spec, uint64_t seed) {
  spec.validate();
  ParameterVector pv;
  pv.spec = spec;
  pv.values.assign(spec.param_count(), 0.0);
  SplitMix64 rng(seed);
  size_t off = 0;
  for (auto [fan_in, fan_out] : spec.layer_shapes()) {
    const double limit = std::sqrt(6.0 / (double(fan_in) + double(fan_out)));
    const size_t n_weights = static_cast<size_t>(fan_in) * fan_out;
    for (size_t i = 0; i < n_weights; ++i) {
      pv.values[off + i] = -limit + 2.0 * limit * rng.next_double();
    }
    off += n_weights + fan_out;  // biases stay zero, consume no draws
  }
  return pv;
}

namespace {

void check_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.features.rows == 0) throw UsageError("batch is empty");
  if (batch.features.cols != spec.input_dim) {
    throw SchemaError("batch width " + std::to_string(batch.features.cols) +
                      " does not match model input_dim " +
                      std::to_string(spec.input_dim));
  }
  if (batch.labels.size() != batch.features.rows) {
    throw SchemaError("label count does not match feature row count");
  }
  for (int32_t y : batch.labels) {
    if (y < 0 || static_cast<uint32_t>(y) >= spec.output_dim) {
      throw SchemaError("label out of range for output_dim");
    }
  }
}

// x @ W^T + b for one layer; W is fan_out x fan_in row-major.
void affine(const Matrix& x, const double* w, const double* b, Matrix& out) {
  const size_t fan_in = x.cols, fan_out = out.cols;
  for (size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double* or_ = out.row(r);
    for (size_t o = 0; o < fan_out; ++o) {
      const double* wr = w + o * fan_in;
      double acc = b[o];
      for (size_t i = 0; i < fan_in; ++i) acc += wr[i] * xr[i];
      or_[o] = acc;
    }
  }
}

void relu_in_place(Matrix& m) {
  for (double& v : m.data) v = v > 0.0 ? v : 0.0;
}

// Row-wise softmax with max subtraction.
void softmax_in_place(Matrix& m) {
  for (size_t r = 0; r < m.rows; ++r) {
    double* row = m.row(r);
    double mx = row[0];
    for (size_t c = 1; c < m.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (size_t c = 0; c < m.cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (size_t c = 0; c < m.cols; ++c) row[c] /= sum;
  }
}

struct ForwardTrace {
  // activations[0] is the input; activations[l] the post-ReLU output of
  // hidden layer l. logits holds the last affine output.
  std::vector<Matrix> activations;
  Matrix logits;
};

ForwardTrace run_forward(const ParameterVector& params, const Batch& batch) {
  const auto shapes = params.spec.layer_shapes();
  ForwardTrace t;
  t.activations.reserve(shapes.size());
  t.activations.push_back(batch.features);
  size_t off = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    auto [fan_in, fan_out] = shapes[l];
    const double* w = params.values.data() + off;
    const double* b = w + static_cast<size_t>(fan_in) * fan_out;
    Matrix out(batch.features.rows, fan_out);
    affine(t.activations.back(), w, b, out);
    off += static_cast<size_t>(fan_in) * fan_out + fan_out;
    if (l + 1 < shapes.size()) {
      relu_in_place(out);
      t.activations.push_back(std::move(out));
    } else {
      t.logits = std::move(out);
    }
  }
  return t;
}

// Mean cross-entropy from logits via log-sum-exp; never forms a zero
// probability.
double mean_ce_loss(const Matrix& logits, const std::vector<int32_t>& labels) {
  double loss = 0.0;
  for (size_t r = 0; r < logits.rows; ++r) {
    const double* row = logits.row(r);
    double mx = row[0];
    for (size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (size_t c = 0; c < logits.cols; ++c) sum += std::exp(row[c] - mx);
    loss += mx + std::log(sum) - row[labels[r]];
  }
  return loss / double(logits.rows);
}

}  // namespace

Matrix forward(const ParameterVector& params, const Batch& batch) {
  check_batch(params.spec, batch);
  ForwardTrace t = run_forward(params, batch);
  softmax_in_place(t.logits);
  return std::move(t.logits);
}

double compute_loss(const ParameterVector& params, const Batch& batch) {
  check_batch(params.spec, batch);
  ForwardTrace t = run_forward(params, batch);
  return mean_ce_loss(t.logits, batch.labels);
}

LossGrad loss_and_grad(const ParameterVector& params, const Batch& batch) {
  check_batch(params.spec, batch);
  const auto shapes = params.spec.layer_shapes();
  const size_t n = batch.features.rows;

  ForwardTrace t = run_forward(params, batch);
  LossGrad out;
  out.loss = mean_ce_loss(t.logits, batch.labels);
  out.grad.values.assign(params.values.size(), 0.0);

  // d(loss)/d(logits) = (softmax - onehot) / n
  Matrix delta = t.logits;
  softmax_in_place(delta);
  for (size_t r = 0; r < n; ++r) {
    double* row = delta.row(r);
    row[batch.labels[r]] -= 1.0;
    for (size_t c = 0; c < delta.cols; ++c) row[c] /= double(n);
  }

  // Layer offsets into the flat vector.
  std::vector<size_t> offsets(shapes.size());
  size_t off = 0;
  for (size_t l = 0; l < shapes.size(); ++l) {
    offsets[l] = off;
    off += static_cast<size_t>(shapes[l].first) * shapes[l].second +
           shapes[l].second;
  }

  for (size_t l = shapes.size(); l-- > 0;) {
    auto [fan_in, fan_out] = shapes[l];
    const Matrix& act = t.activations[l];
    const double* w = params.values.data() + offsets[l];
    double* gw = out.grad.values.data() + offsets[l];
    double* gb = gw + static_cast<size_t>(fan_in) * fan_out;

    // gW[o][i] += delta[r][o] * act[r][i]; gb[o] += delta[r][o]
    for (size_t r = 0; r < n; ++r) {
      const double* dr = delta.row(r);
      const double* ar = act.row(r);
      for (size_t o = 0; o < fan_out; ++o) {
        const double d = dr[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwr = gw + o * fan_in;
        for (size_t i = 0; i < fan_in; ++i) gwr[i] += d * ar[i];
      }
    }

    if (l > 0) {
      // delta_prev[r][i] = sum_o delta[r][o] * W[o][i], masked by ReLU.
      Matrix prev(n, fan_in);
      for (size_t r = 0; r < n; ++r) {
        const double* dr = delta.row(r);
        double* pr = prev.row(r);
        for (size_t o = 0; o < fan_out; ++o) {
          const double d = dr[o];
          if (d == 0.0) continue;
          const double* wr = w + o * fan_in;
          for (size_t i = 0; i < fan_in; ++i) pr[i] += d * wr[i];
        }
        const double* ar = act.row(r);
        for (size_t i = 0; i < fan_in; ++i) {
          if (ar[i] <= 0.0) pr[i] = 0.0;
        }
      }
      delta = std::move(prev);
    }
  }
  return out;
}

ParameterVector sgd_step(const ParameterVector& params, const Gradient& grad,
                         double eta) {
  if (grad.values.size() != params.values.size()) {
    throw SchemaError("gradient layout does not match parameter vector");
  }
  ParameterVector next;
  next.spec = params.spec;
  next.values.resize(params.values.size());
  for (size_t i = 0; i < params.values.size(); ++i) {
    next.values[i] = params.values[i] - eta * grad.values[i];
  }
  return next;
}

double evaluate_accuracy(const ParameterVector& params, const Batch& data) {
  if (data.size() == 0) throw UsageError("cannot evaluate on an empty dataset");
  Matrix probs = forward(params, data);
  size_t correct = 0;
  for (size_t r = 0; r < probs.rows; ++r) {
    const double* row = probs.row(r);
    size_t best = 0;
    for (size_t c = 1; c < probs.cols; ++c) {
      if (row[c] > row[best]) best = c;  // ties keep the lowest index
    }
    if (static_cast<int32_t>(best) == data.labels[r]) ++correct;
  }
  return double(correct) / double(probs.rows);
}

}  // namespace fedqot
