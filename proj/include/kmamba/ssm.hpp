#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kmamba/array.hpp"
#include "kmamba/tensor.hpp"

// Selective state-space layer, the gated Mamba block and the residual
// backbone with input/output projections.

namespace kmamba::ssm {

// Input-matrix discretization. `standard` is the usual zero-order hold
// (dA)^-1 (exp(dA) - 1) d b; `literal` is exp(dA)^-1 (exp(dA) - 1) d b.
enum class ZohVariant { standard, literal };
enum class ScanMode { sequential, parallel };
enum class NormKind { rms, layer };

struct Discretized {
  double a_bar = 0.0;
  double b_bar = 0.0;
};

// Throws DomainError when delta <= 0. a = 0 uses the analytic limit.
Discretized zoh_discretize(double delta, double a, double b,
                           ZohVariant variant = ZohVariant::standard);

// b_bar = factor(delta * a) * delta * b, and its derivative in u = delta * a.
double zoh_input_factor(double u, ZohVariant variant);
double zoh_input_factor_derivative(double u, ZohVariant variant);

// Recurrence on already-discretized parameters.
// abar/bbar: [B][T][C][S], x: [B][T][C], c: [B][T][S]  ->  y: [B][T][C]
Array scan_discrete(const Array& abar, const Array& bbar, const Array& x, const Array& c,
                    ScanMode mode);

// In-place inclusive scan of the affine maps h -> a*h + u along `steps`
// entries spaced `stride` apart, each a vector of `width` lanes. On return
// u holds h_t (with h_{-1} = 0) and a holds the cumulative products.
void affine_inclusive_scan(std::size_t steps, std::size_t width, std::size_t stride, double* a,
                           double* u);

// Differentiable selective scan with input-dependent delta, B and C.
// x, delta: [B][T][C]; a: [C][S] (negative); b, c: [B][T][S].
ad::Tensor selective_scan(const ad::Tensor& x, const ad::Tensor& delta, const ad::Tensor& a,
                          const ad::Tensor& b, const ad::Tensor& c, ScanMode mode,
                          ZohVariant variant = ZohVariant::standard);

Array selective_scan(const Array& x, const Array& delta, const Array& a, const Array& b,
                     const Array& c, ScanMode mode, ZohVariant variant = ZohVariant::standard);

struct ModelConfig {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t state_dim = 16;
  std::size_t expand = 2;
  std::size_t conv_width = 4;
  std::size_t dt_rank = 0;  // 0 -> ceil(d_model / 16)
  NormKind norm = NormKind::rms;
  ZohVariant zoh = ZohVariant::standard;
  ScanMode scan_mode = ScanMode::sequential;
  double dt_min = 1e-3;
  double dt_max = 1e-1;

  std::size_t inner() const { return expand * d_model; }
  std::size_t resolved_dt_rank() const { return dt_rank ? dt_rank : (d_model + 15) / 16; }
  void validate() const;
};

struct NamedArray {
  std::string name;
  Array value;
};

// Tensor views of one Mamba block's parameters.
struct MambaBlockTensors {
  ad::Tensor in_w, in_b;        // [N, 2EN], [2EN]
  ad::Tensor conv_w, conv_b;    // [K, EN], [EN]
  ad::Tensor x_w;               // [EN, R + 2S]
  ad::Tensor dt_w, dt_b;        // [R, EN], [EN]
  ad::Tensor a_log;             // [EN, S]; a = -exp(a_log)
  ad::Tensor d_skip;            // [EN]
  ad::Tensor out_w, out_b;      // [EN, N], [N]
};

// in-project, split (stream, gate); stream -> causal conv -> SiLU -> selective
// scan (+ D skip); gate -> SiLU; multiply; out-project.
ad::Tensor mamba_block_forward(const ad::Tensor& xp, const MambaBlockTensors& p,
                               const ModelConfig& cfg);

class Backbone {
 public:
  // Random initialization; identical seeds give identical parameters.
  static Backbone init(const ModelConfig& cfg, std::uint64_t seed);

  // Adopt existing parameters (e.g. from a checkpoint). Names and shapes must
  // match the layout init() produces.
  Backbone(ModelConfig cfg, std::vector<NamedArray> params);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedArray>& parameters() const { return params_; }
  std::vector<NamedArray>& parameters() { return params_; }
  std::size_t parameter_count() const;

  // x: [B][T][in_dim] -> [B][T][out_dim]. params are tensors aligned with
  // parameters(); pass parameter tensors to differentiate.
  ad::Tensor forward(const ad::Tensor& x, std::span<const ad::Tensor> params) const;

  // Inference with constant parameters.
  Array predict(const Array& x) const;

  // Parameter tensors (requires_grad) for a differentiable forward.
  std::vector<ad::Tensor> parameter_tensors() const;

  static std::vector<NamedArray> layout(const ModelConfig& cfg);

 private:
  Backbone() = default;
  ModelConfig cfg_;
  std::vector<NamedArray> params_;
};

}  // namespace kmamba::ssm
