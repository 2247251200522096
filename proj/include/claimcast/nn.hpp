#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Small numeric layer library: dense, GRU / bidirectional GRU, concatenation
// attention, Adam, tensor checkpoints and a finite-difference checker. Every
// layer has a hand-written reverse pass; parameters and their gradients share
// the same struct type so a gradient buffer is just a zeroed copy.
namespace claimcast::nn {

using Vec = std::vector<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor({n}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  std::span<const double> row(std::size_t r) const { return data().subspan(r * cols(), cols()); }
  std::span<double> row(std::size_t r) { return data().subspan(r * cols(), cols()); }

  void fill(double v);
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};
using ParamList = std::vector<ParamRef>;

std::size_t count_scalars(const ParamList& params);
void zero(const ParamList& params);

// y += W x
void matvec_acc(const Tensor& w, std::span<const double> x, std::span<double> y);
// dx += W^T dy
void matvec_t_acc(const Tensor& w, std::span<const double> dy, std::span<double> dx);
// dW += dy x^T
void outer_acc(Tensor& dw, std::span<const double> dy, std::span<const double> x);

double sigmoid(double x);

// Xavier-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases.
void xavier_init(Tensor& w, std::mt19937_64& rng);

// ---------------------------------------------------------------- dense

struct DenseParams {
  Tensor weight;  // out x in
  Tensor bias;    // out

  static DenseParams create(std::size_t in, std::size_t out);
  std::size_t input_dim() const { return weight.cols(); }
  std::size_t output_dim() const { return weight.rows(); }
  void init(std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

Vec dense_forward(const DenseParams& p, std::span<const double> x);
// Accumulates into grad; adds W^T dy into dx when dx is non-empty.
void dense_backward(const DenseParams& p, std::span<const double> x, std::span<const double> dy, DenseParams& grad,
                    std::span<double> dx);

// ---------------------------------------------------------------- GRU
//
//   z  = sigmoid(W_z x + U_z h + b_z)
//   r  = sigmoid(W_r x + U_r h + b_r)
//   c  = tanh(W_c x + U_c (r * h) + b_c)
//   h' = (1 - z) * h + z * c
//
// A masked step leaves the state unchanged.

struct GruCellParams {
  Tensor w_update, w_reset, w_candidate;  // hidden x input
  Tensor u_update, u_reset, u_candidate;  // hidden x hidden
  Tensor b_update, b_reset, b_candidate;  // hidden

  static GruCellParams create(std::size_t input, std::size_t hidden);
  void init(std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

struct GruLayerParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  bool bidirectional = true;
  GruCellParams forward;
  GruCellParams backward;  // unused when unidirectional

  static GruLayerParams create(std::size_t input, std::size_t hidden, bool bidirectional);
  std::size_t output_dim() const { return bidirectional ? 2 * hidden_dim : hidden_dim; }
  void init(std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

struct GruDirectionTrace {
  std::vector<Vec> h_prev, update, reset, candidate;  // indexed by sequence position
};

struct GruTrace {
  std::vector<Vec> inputs;
  std::vector<bool> mask;
  GruDirectionTrace forward, backward;
};

// Returns one output per step: h (unidirectional) or [h_fwd; h_bwd]. An empty
// mask means every step is valid. Initial states are zero.
std::vector<Vec> gru_forward(const GruLayerParams& p, const std::vector<Vec>& inputs, const std::vector<bool>& mask,
                             GruTrace* trace = nullptr);
// Back-propagation through time. Returns d inputs.
std::vector<Vec> gru_backward(const GruLayerParams& p, const GruTrace& trace, const std::vector<Vec>& d_outputs,
                              GruLayerParams& grad);

// ---------------------------------------------------------------- attention
//
//   score_i  = v^T tanh(W_a [h_t; h_i])        for prior states i < t
//   alpha    = softmax(score)
//   c_t      = sum_i alpha_i h_i
//   attended = tanh(W_c [c_t; h_t])
//
// With no prior state (t = 0) the context is h_t itself and alpha = [1].

struct AttentionParams {
  Tensor score_weight;    // latent x (2 * state)
  Tensor score_vector;    // latent
  Tensor combine_weight;  // out x (2 * state)

  static AttentionParams create(std::size_t state_dim, std::size_t latent_dim, std::size_t out_dim);
  std::size_t state_dim() const { return score_weight.cols() / 2; }
  std::size_t output_dim() const { return combine_weight.rows(); }
  void init(std::mt19937_64& rng);
  void collect(const std::string& prefix, ParamList& out);
};

struct AttentionOutput {
  Vec weights;  // over states 0..t-1, or [1] for the fallback
  Vec context;
  Vec attended;
  bool fallback = false;
};

struct AttentionTrace {
  std::size_t query = 0;
  std::vector<Vec> score_hidden;  // tanh(W_a [h_t; h_i]) per prior state
  AttentionOutput output;
};

AttentionOutput attention_forward(const AttentionParams& p, const std::vector<Vec>& states, std::size_t query,
                                  AttentionTrace* trace = nullptr);
// Adds d states into d_states (same length as states).
void attention_backward(const AttentionParams& p, const std::vector<Vec>& states, const AttentionTrace& trace,
                        std::span<const double> d_attended, AttentionParams& grad, std::vector<Vec>& d_states);

// Projection used when attention is disabled: tanh(W_c [h_t; h_t]).
Vec project_last(const AttentionParams& p, std::span<const double> state);
void project_last_backward(const AttentionParams& p, std::span<const double> state, std::span<const double> out,
                           std::span<const double> d_out, AttentionParams& grad, std::span<double> d_state);

// ---------------------------------------------------------------- optimisation

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(AdamConfig config, const ParamList& params);
  void step(const ParamList& params, const ParamList& grads);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Vec> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_global_norm(const ParamList& grads, double max_norm);

// ---------------------------------------------------------------- gradient check

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, 1e-6); the floor keeps near-zero gradients from
// turning round-off into large relative errors.
double relative_error(double analytic, double numeric);

struct ParamCoordinate {
  std::size_t param = 0;
  std::size_t index = 0;
};

// Two-point central difference (f(x+e) - f(x-e)) / 2e, or the four-point
// central stencil (8[f(x+e) - f(x-e)] - [f(x+2e) - f(x-2e)]) / 12e whose
// truncation error is O(e^4) instead of O(e^2).
enum class Stencil { central2, central4 };

// Central differences of `loss` for each coordinate, compared with `analytic`
// (a ParamList parallel to `params`).
GradCheckResult check_gradients(const ParamList& params, const ParamList& analytic,
                                const std::function<double()>& loss, std::span<const ParamCoordinate> coordinates,
                                double epsilon = 1e-5, Stencil stencil = Stencil::central2);

std::vector<ParamCoordinate> sample_coordinates(const ParamList& params, std::size_t count, std::mt19937_64& rng);
std::vector<ParamCoordinate> all_coordinates(const ParamList& params);

// ---------------------------------------------------------------- checkpoints
//
// Text format:
//   claimcast-tensors 1
//   <count>
//   tensor <name> <rank> <dim>...
//   <values as hexadecimal floating point, space separated>
// Hex floats round-trip exactly.

void write_tensors(std::ostream& out, const ParamList& params);
// Names, order and shapes must match the file.
void read_tensors(std::istream& in, const ParamList& params);

}  // namespace claimcast::nn
