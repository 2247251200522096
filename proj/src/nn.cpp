#include "claimcast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

#include "claimcast/rng.hpp"

namespace claimcast::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (auto d : shape_) n *= d;
  values_.assign(n, fill);
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor->size();
  return n;
}

void zero(const ParamList& params) {
  for (const auto& p : params) p.tensor->fill(0.0);
}

namespace {

void check_len(std::size_t expected, std::size_t found, const char* what) {
  if (expected != found) {
    throw ShapeError(std::string(what) + ": expected length " + std::to_string(expected) + ", found " +
                     std::to_string(found));
  }
}

}  // namespace

void matvec_acc(const Tensor& w, std::span<const double> x, std::span<double> y) {
  const std::size_t rows = w.rows(), cols = w.cols();
  check_len(cols, x.size(), "matvec input");
  check_len(rows, y.size(), "matvec output");
  const double* a = w.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = a + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
}

void matvec_t_acc(const Tensor& w, std::span<const double> dy, std::span<double> dx) {
  const std::size_t rows = w.rows(), cols = w.cols();
  check_len(rows, dy.size(), "transposed matvec input");
  check_len(cols, dx.size(), "transposed matvec output");
  const double* a = w.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    const double* row = a + r * cols;
    for (std::size_t c = 0; c < cols; ++c) dx[c] += row[c] * g;
  }
}

void outer_acc(Tensor& dw, std::span<const double> dy, std::span<const double> x) {
  const std::size_t rows = dw.rows(), cols = dw.cols();
  check_len(rows, dy.size(), "outer product rows");
  check_len(cols, x.size(), "outer product cols");
  double* a = dw.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = dy[r];
    if (g == 0.0) continue;
    double* row = a + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += g * x[c];
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void xavier_init(Tensor& w, std::mt19937_64& rng) {
  const double fan_out = static_cast<double>(w.rows());
  const double fan_in = static_cast<double>(w.shape().size() > 1 ? w.cols() : 1);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.data()) v = uniform(rng, -limit, limit);
}

// ---------------------------------------------------------------- dense

DenseParams DenseParams::create(std::size_t in, std::size_t out) {
  return {Tensor::matrix(out, in), Tensor::vector(out)};
}

void DenseParams::init(std::mt19937_64& rng) {
  xavier_init(weight, rng);
  bias.fill(0.0);
}

void DenseParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight});
  out.push_back({prefix + ".bias", &bias});
}

Vec dense_forward(const DenseParams& p, std::span<const double> x) {
  if (x.size() != p.input_dim()) {
    throw ShapeError("dense: weight " + shape_string(p.weight.shape()) + " cannot take input of length " +
                     std::to_string(x.size()));
  }
  Vec y(p.bias.data().begin(), p.bias.data().end());
  matvec_acc(p.weight, x, y);
  return y;
}

void dense_backward(const DenseParams& p, std::span<const double> x, std::span<const double> dy, DenseParams& grad,
                    std::span<double> dx) {
  outer_acc(grad.weight, dy, x);
  for (std::size_t i = 0; i < dy.size(); ++i) grad.bias[i] += dy[i];
  if (!dx.empty()) matvec_t_acc(p.weight, dy, dx);
}

// ---------------------------------------------------------------- GRU

GruCellParams GruCellParams::create(std::size_t input, std::size_t hidden) {
  GruCellParams c;
  c.w_update = c.w_reset = c.w_candidate = Tensor::matrix(hidden, input);
  c.u_update = c.u_reset = c.u_candidate = Tensor::matrix(hidden, hidden);
  c.b_update = c.b_reset = c.b_candidate = Tensor::vector(hidden);
  return c;
}

void GruCellParams::init(std::mt19937_64& rng) {
  for (Tensor* w : {&w_update, &w_reset, &w_candidate, &u_update, &u_reset, &u_candidate}) xavier_init(*w, rng);
  for (Tensor* b : {&b_update, &b_reset, &b_candidate}) b->fill(0.0);
}

void GruCellParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".w_update", &w_update});
  out.push_back({prefix + ".w_reset", &w_reset});
  out.push_back({prefix + ".w_candidate", &w_candidate});
  out.push_back({prefix + ".u_update", &u_update});
  out.push_back({prefix + ".u_reset", &u_reset});
  out.push_back({prefix + ".u_candidate", &u_candidate});
  out.push_back({prefix + ".b_update", &b_update});
  out.push_back({prefix + ".b_reset", &b_reset});
  out.push_back({prefix + ".b_candidate", &b_candidate});
}

GruLayerParams GruLayerParams::create(std::size_t input, std::size_t hidden, bool bidirectional) {
  GruLayerParams p;
  p.input_dim = input;
  p.hidden_dim = hidden;
  p.bidirectional = bidirectional;
  p.forward = GruCellParams::create(input, hidden);
  if (bidirectional) p.backward = GruCellParams::create(input, hidden);
  return p;
}

void GruLayerParams::init(std::mt19937_64& rng) {
  forward.init(rng);
  if (bidirectional) backward.init(rng);
}

void GruLayerParams::collect(const std::string& prefix, ParamList& out) {
  forward.collect(prefix + ".fwd", out);
  if (bidirectional) backward.collect(prefix + ".bwd", out);
}

namespace {

// One GRU step from h_prev; gate activations are returned in z, r, cand.
void gru_step(const GruCellParams& c, std::span<const double> x, const Vec& h_prev, Vec& h_out, Vec& z, Vec& r,
              Vec& cand) {
  const std::size_t hidden = h_prev.size();
  z.assign(c.b_update.data().begin(), c.b_update.data().end());
  r.assign(c.b_reset.data().begin(), c.b_reset.data().end());
  cand.assign(c.b_candidate.data().begin(), c.b_candidate.data().end());
  matvec_acc(c.w_update, x, z);
  matvec_acc(c.u_update, h_prev, z);
  matvec_acc(c.w_reset, x, r);
  matvec_acc(c.u_reset, h_prev, r);
  for (std::size_t i = 0; i < hidden; ++i) {
    z[i] = sigmoid(z[i]);
    r[i] = sigmoid(r[i]);
  }
  Vec rh(hidden);
  for (std::size_t i = 0; i < hidden; ++i) rh[i] = r[i] * h_prev[i];
  matvec_acc(c.w_candidate, x, cand);
  matvec_acc(c.u_candidate, rh, cand);
  h_out.resize(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    cand[i] = std::tanh(cand[i]);
    h_out[i] = (1.0 - z[i]) * h_prev[i] + z[i] * cand[i];
  }
}

// Runs one direction over `order` (positions in processing order).
void run_direction(const GruCellParams& c, std::size_t hidden, const std::vector<Vec>& inputs,
                   const std::vector<bool>& mask, const std::vector<std::size_t>& order, std::vector<Vec>& states,
                   GruDirectionTrace* trace) {
  Vec h(hidden, 0.0), h_next, z, r, cand;
  if (trace) {
    trace->h_prev.assign(inputs.size(), {});
    trace->update.assign(inputs.size(), {});
    trace->reset.assign(inputs.size(), {});
    trace->candidate.assign(inputs.size(), {});
  }
  for (std::size_t pos : order) {
    if (trace) trace->h_prev[pos] = h;
    if (mask.empty() || mask[pos]) {
      gru_step(c, inputs[pos], h, h_next, z, r, cand);
      if (trace) {
        trace->update[pos] = z;
        trace->reset[pos] = r;
        trace->candidate[pos] = cand;
      }
      h.swap(h_next);
    }
    states[pos] = h;
  }
}

// Reverse pass of one direction. d_states[pos] is the gradient arriving at the
// state emitted at pos; d_inputs accumulates.
void backprop_direction(const GruCellParams& c, std::size_t hidden, const std::vector<Vec>& inputs,
                        const std::vector<bool>& mask, const std::vector<std::size_t>& order,
                        const GruDirectionTrace& trace, const std::vector<Vec>& d_states, GruCellParams& g,
                        std::vector<Vec>& d_inputs) {
  Vec dh(hidden, 0.0);  // gradient flowing into the state after the current step
  Vec da_z(hidden), da_r(hidden), da_c(hidden), d_rh(hidden), rh(hidden);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t pos = *it;
    for (std::size_t i = 0; i < hidden; ++i) dh[i] += d_states[pos][i];
    if (!(mask.empty() || mask[pos])) continue;  // identity step: gradient passes through unchanged
    const Vec& h_prev = trace.h_prev[pos];
    const Vec& z = trace.update[pos];
    const Vec& r = trace.reset[pos];
    const Vec& cand = trace.candidate[pos];
    Vec dh_prev(hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      const double dz = dh[i] * (cand[i] - h_prev[i]);
      const double dc = dh[i] * z[i];
      dh_prev[i] = dh[i] * (1.0 - z[i]);
      da_c[i] = dc * (1.0 - cand[i] * cand[i]);
      da_z[i] = dz * z[i] * (1.0 - z[i]);
      rh[i] = r[i] * h_prev[i];
    }
    std::span<const double> x = inputs[pos];
    Vec& dx = d_inputs[pos];
    // candidate
    outer_acc(g.w_candidate, da_c, x);
    outer_acc(g.u_candidate, da_c, rh);
    for (std::size_t i = 0; i < hidden; ++i) g.b_candidate[i] += da_c[i];
    matvec_t_acc(c.w_candidate, da_c, dx);
    std::fill(d_rh.begin(), d_rh.end(), 0.0);
    matvec_t_acc(c.u_candidate, da_c, d_rh);
    for (std::size_t i = 0; i < hidden; ++i) {
      dh_prev[i] += d_rh[i] * r[i];
      const double dr = d_rh[i] * h_prev[i];
      da_r[i] = dr * r[i] * (1.0 - r[i]);
    }
    // update gate
    outer_acc(g.w_update, da_z, x);
    outer_acc(g.u_update, da_z, h_prev);
    for (std::size_t i = 0; i < hidden; ++i) g.b_update[i] += da_z[i];
    matvec_t_acc(c.w_update, da_z, dx);
    matvec_t_acc(c.u_update, da_z, dh_prev);
    // reset gate
    outer_acc(g.w_reset, da_r, x);
    outer_acc(g.u_reset, da_r, h_prev);
    for (std::size_t i = 0; i < hidden; ++i) g.b_reset[i] += da_r[i];
    matvec_t_acc(c.w_reset, da_r, dx);
    matvec_t_acc(c.u_reset, da_r, dh_prev);
    dh.swap(dh_prev);
  }
}

void check_gru_inputs(const GruLayerParams& p, const std::vector<Vec>& inputs, const std::vector<bool>& mask) {
  if (inputs.empty()) throw ShapeError("gru: empty input sequence");
  if (!mask.empty() && mask.size() != inputs.size()) {
    throw ShapeError("gru: mask length " + std::to_string(mask.size()) + " does not match sequence length " +
                     std::to_string(inputs.size()));
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].size() != p.input_dim) {
      throw ShapeError("gru: step " + std::to_string(t) + " has input length " + std::to_string(inputs[t].size()) +
                       ", layer expects " + std::to_string(p.input_dim) + " (weights " +
                       shape_string(p.forward.w_update.shape()) + ")");
    }
  }
}

std::vector<std::size_t> forward_order(std::size_t n) {
  std::vector<std::size_t> o(n);
  for (std::size_t i = 0; i < n; ++i) o[i] = i;
  return o;
}

std::vector<std::size_t> backward_order(std::size_t n) {
  std::vector<std::size_t> o(n);
  for (std::size_t i = 0; i < n; ++i) o[i] = n - 1 - i;
  return o;
}

}  // namespace

std::vector<Vec> gru_forward(const GruLayerParams& p, const std::vector<Vec>& inputs, const std::vector<bool>& mask,
                             GruTrace* trace) {
  check_gru_inputs(p, inputs, mask);
  const std::size_t n = inputs.size(), hidden = p.hidden_dim;
  if (trace) {
    trace->inputs = inputs;
    trace->mask = mask;
  }
  std::vector<Vec> fwd(n);
  run_direction(p.forward, hidden, inputs, mask, forward_order(n), fwd, trace ? &trace->forward : nullptr);
  if (!p.bidirectional) return fwd;
  std::vector<Vec> bwd(n);
  run_direction(p.backward, hidden, inputs, mask, backward_order(n), bwd, trace ? &trace->backward : nullptr);
  std::vector<Vec> out(n, Vec(2 * hidden));
  for (std::size_t t = 0; t < n; ++t) {
    std::copy(fwd[t].begin(), fwd[t].end(), out[t].begin());
    std::copy(bwd[t].begin(), bwd[t].end(), out[t].begin() + static_cast<std::ptrdiff_t>(hidden));
  }
  return out;
}

std::vector<Vec> gru_backward(const GruLayerParams& p, const GruTrace& trace, const std::vector<Vec>& d_outputs,
                              GruLayerParams& grad) {
  const std::size_t n = trace.inputs.size(), hidden = p.hidden_dim;
  if (d_outputs.size() != n) throw ShapeError("gru_backward: gradient count does not match sequence length");
  std::vector<Vec> d_inputs(n, Vec(p.input_dim, 0.0));
  std::vector<Vec> d_fwd(n), d_bwd;
  if (p.bidirectional) d_bwd.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    check_len(p.output_dim(), d_outputs[t].size(), "gru_backward output gradient");
    d_fwd[t].assign(d_outputs[t].begin(), d_outputs[t].begin() + static_cast<std::ptrdiff_t>(hidden));
    if (p.bidirectional) {
      d_bwd[t].assign(d_outputs[t].begin() + static_cast<std::ptrdiff_t>(hidden), d_outputs[t].end());
    }
  }
  backprop_direction(p.forward, hidden, trace.inputs, trace.mask, forward_order(n), trace.forward, d_fwd,
                     grad.forward, d_inputs);
  if (p.bidirectional) {
    backprop_direction(p.backward, hidden, trace.inputs, trace.mask, backward_order(n), trace.backward, d_bwd,
                       grad.backward, d_inputs);
  }
  return d_inputs;
}

// ---------------------------------------------------------------- attention

AttentionParams AttentionParams::create(std::size_t state_dim, std::size_t latent_dim, std::size_t out_dim) {
  return {Tensor::matrix(latent_dim, 2 * state_dim), Tensor::vector(latent_dim), Tensor::matrix(out_dim, 2 * state_dim)};
}

void AttentionParams::init(std::mt19937_64& rng) {
  xavier_init(score_weight, rng);
  xavier_init(score_vector, rng);
  xavier_init(combine_weight, rng);
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".score_weight", &score_weight});
  out.push_back({prefix + ".score_vector", &score_vector});
  out.push_back({prefix + ".combine_weight", &combine_weight});
}

namespace {

Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

AttentionOutput attention_forward(const AttentionParams& p, const std::vector<Vec>& states, std::size_t query,
                                  AttentionTrace* trace) {
  const std::size_t dim = p.state_dim();
  if (query >= states.size()) throw ShapeError("attention: query index beyond the sequence");
  for (std::size_t i = 0; i <= query; ++i) check_len(dim, states[i].size(), "attention state");
  const Vec& h_t = states[query];
  AttentionOutput out;
  if (trace) {
    trace->query = query;
    trace->score_hidden.clear();
  }
  if (query == 0) {
    out.fallback = true;
    out.weights = {1.0};
    out.context = h_t;
  } else {
    Vec scores(query);
    for (std::size_t i = 0; i < query; ++i) {
      Vec u(p.score_weight.rows(), 0.0);
      matvec_acc(p.score_weight, concat(h_t, states[i]), u);
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        u[k] = std::tanh(u[k]);
        s += p.score_vector[k] * u[k];
      }
      scores[i] = s;
      if (trace) trace->score_hidden.push_back(std::move(u));
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    out.weights.resize(query);
    for (std::size_t i = 0; i < query; ++i) {
      out.weights[i] = std::exp(scores[i] - mx);
      z += out.weights[i];
    }
    out.context.assign(dim, 0.0);
    for (std::size_t i = 0; i < query; ++i) {
      out.weights[i] /= z;
      for (std::size_t k = 0; k < dim; ++k) out.context[k] += out.weights[i] * states[i][k];
    }
  }
  out.attended.assign(p.output_dim(), 0.0);
  matvec_acc(p.combine_weight, concat(out.context, h_t), out.attended);
  for (auto& v : out.attended) v = std::tanh(v);
  if (trace) trace->output = out;
  return out;
}

void attention_backward(const AttentionParams& p, const std::vector<Vec>& states, const AttentionTrace& trace,
                        std::span<const double> d_attended, AttentionParams& grad, std::vector<Vec>& d_states) {
  const std::size_t dim = p.state_dim();
  const std::size_t query = trace.query;
  const auto& out = trace.output;
  const Vec& h_t = states[query];
  Vec da(out.attended.size());
  for (std::size_t k = 0; k < da.size(); ++k) da[k] = d_attended[k] * (1.0 - out.attended[k] * out.attended[k]);
  const Vec joint = concat(out.context, h_t);
  outer_acc(grad.combine_weight, da, joint);
  Vec d_joint(2 * dim, 0.0);
  matvec_t_acc(p.combine_weight, da, d_joint);
  Vec& dh_t = d_states[query];
  for (std::size_t k = 0; k < dim; ++k) dh_t[k] += d_joint[dim + k];
  if (out.fallback) {
    for (std::size_t k = 0; k < dim; ++k) dh_t[k] += d_joint[k];
    return;
  }
  const std::span<const double> dc(d_joint.data(), dim);
  Vec d_alpha(query);
  double weighted = 0.0;
  for (std::size_t i = 0; i < query; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      s += dc[k] * states[i][k];
      d_states[i][k] += out.weights[i] * dc[k];
    }
    d_alpha[i] = s;
    weighted += out.weights[i] * s;
  }
  const std::size_t latent = p.score_vector.size();
  Vec d_pre(latent), d_pair(2 * dim);
  for (std::size_t i = 0; i < query; ++i) {
    const double ds = out.weights[i] * (d_alpha[i] - weighted);
    const Vec& u = trace.score_hidden[i];
    for (std::size_t k = 0; k < latent; ++k) {
      grad.score_vector[k] += ds * u[k];
      d_pre[k] = ds * p.score_vector[k] * (1.0 - u[k] * u[k]);
    }
    outer_acc(grad.score_weight, d_pre, concat(h_t, states[i]));
    std::fill(d_pair.begin(), d_pair.end(), 0.0);
    matvec_t_acc(p.score_weight, d_pre, d_pair);
    for (std::size_t k = 0; k < dim; ++k) {
      dh_t[k] += d_pair[k];
      d_states[i][k] += d_pair[dim + k];
    }
  }
}

Vec project_last(const AttentionParams& p, std::span<const double> state) {
  check_len(p.state_dim(), state.size(), "projection state");
  Vec out(p.output_dim(), 0.0);
  matvec_acc(p.combine_weight, concat(state, state), out);
  for (auto& v : out) v = std::tanh(v);
  return out;
}

void project_last_backward(const AttentionParams& p, std::span<const double> state, std::span<const double> out,
                           std::span<const double> d_out, AttentionParams& grad, std::span<double> d_state) {
  const std::size_t dim = p.state_dim();
  Vec da(out.size());
  for (std::size_t k = 0; k < da.size(); ++k) da[k] = d_out[k] * (1.0 - out[k] * out[k]);
  outer_acc(grad.combine_weight, da, concat(state, state));
  Vec d_joint(2 * dim, 0.0);
  matvec_t_acc(p.combine_weight, da, d_joint);
  for (std::size_t k = 0; k < dim; ++k) d_state[k] += d_joint[k] + d_joint[dim + k];
}

// ---------------------------------------------------------------- optimisation

Adam::Adam(AdamConfig config, const ParamList& params) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor->size(), 0.0);
    v_.emplace_back(p.tensor->size(), 0.0);
  }
}

void Adam::step(const ParamList& params, const ParamList& grads) {
  if (params.size() != m_.size() || grads.size() != params.size()) {
    throw ShapeError("adam: parameter list does not match optimizer state");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].tensor->data();
    auto g = grads[k].tensor->data();
    check_len(w.size(), g.size(), "adam gradient");
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

double clip_global_norm(const ParamList& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.tensor->data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (auto& v : g.tensor->data()) v *= scale;
    }
  }
  return norm;
}

// ---------------------------------------------------------------- gradient check

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

GradCheckResult check_gradients(const ParamList& params, const ParamList& analytic,
                                const std::function<double()>& loss, std::span<const ParamCoordinate> coordinates,
                                double epsilon, Stencil stencil) {
  GradCheckResult result;
  for (const auto& c : coordinates) {
    double& w = (*params[c.param].tensor)[c.index];
    const double saved = w;
    const auto at = [&](double offset) {
      w = saved + offset;
      return loss();
    };
    const double near = at(epsilon) - at(-epsilon);
    double numeric = near / (2.0 * epsilon);
    if (stencil == Stencil::central4) {
      const double far = at(2.0 * epsilon) - at(-2.0 * epsilon);
      numeric = (8.0 * near - far) / (12.0 * epsilon);
    }
    w = saved;
    const double a = (*analytic[c.param].tensor)[c.index];
    const double err = relative_error(a, numeric);
    ++result.checked;
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = params[c.param].name + "[" + std::to_string(c.index) + "]";
    }
  }
  return result;
}

std::vector<ParamCoordinate> sample_coordinates(const ParamList& params, std::size_t count, std::mt19937_64& rng) {
  const std::size_t total = count_scalars(params);
  std::vector<ParamCoordinate> out;
  if (total == 0) return out;
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t flat = uniform_index(rng, total);
    for (std::size_t p = 0; p < params.size(); ++p) {
      if (flat < params[p].tensor->size()) {
        out.push_back({p, flat});
        break;
      }
      flat -= params[p].tensor->size();
    }
  }
  return out;
}

std::vector<ParamCoordinate> all_coordinates(const ParamList& params) {
  std::vector<ParamCoordinate> out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].tensor->size(); ++i) out.push_back({p, i});
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

void write_tensors(std::ostream& out, const ParamList& params) {
  out << "claimcast-tensors 1\n" << params.size() << '\n';
  char buf[64];
  for (const auto& p : params) {
    const auto& shape = p.tensor->shape();
    out << "tensor " << p.name << ' ' << shape.size();
    for (auto d : shape) out << ' ' << d;
    out << '\n';
    bool first = true;
    for (double v : p.tensor->data()) {
      std::snprintf(buf, sizeof(buf), "%a", v);
      if (!first) out << ' ';
      out << buf;
      first = false;
    }
    out << '\n';
  }
}

void read_tensors(std::istream& in, const ParamList& params) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(in >> magic >> version) || magic != "claimcast-tensors") throw ShapeError("not a claimcast tensor file");
  if (version != 1) throw ShapeError("unsupported tensor file version " + std::to_string(version));
  if (!(in >> count) || count != params.size()) {
    throw ShapeError("tensor file holds " + std::to_string(count) + " tensors, model expects " +
                     std::to_string(params.size()));
  }
  for (const auto& p : params) {
    std::string tag, name;
    std::size_t rank = 0;
    if (!(in >> tag >> name >> rank) || tag != "tensor") throw ShapeError("malformed tensor header");
    if (name != p.name) throw ShapeError("tensor file has '" + name + "' where model expects '" + p.name + "'");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) in >> d;
    if (shape != p.tensor->shape()) {
      throw ShapeError("tensor '" + name + "': file shape " + shape_string(shape) + ", model shape " +
                       shape_string(p.tensor->shape()));
    }
    for (auto& v : p.tensor->data()) {
      std::string token;
      if (!(in >> token)) throw ShapeError("tensor '" + name + "' is truncated");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) throw ShapeError("tensor '" + name + "' has a bad value '" + token + "'");
    }
  }
}

}  // namespace claimcast::nn
