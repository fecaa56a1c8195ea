#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgtrust::models {

enum class ArchKind { TimeConv, FreqAttn, TfConv2d, DenseHead, Fused };

std::string_view arch_name(ArchKind kind);
ArchKind parse_arch(std::string_view name);

/// Shape of one modality input; 1-D inputs use rows = 1.
struct InputShape {
  std::size_t rows = 1;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  bool operator==(const InputShape&) const = default;
};

/// One vector per modality, in the order of MicroNet::input_shapes().
using ModelInput = std::vector<std::vector<double>>;

struct ParamSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool trainable = true;
  double init_bound = 0.0;  // uniform(-b, b) at initialization; 0 means a constant start
};

struct ForwardResult {
  std::vector<double> latent;
  std::vector<double> logits;
  std::vector<double> probs;
};

struct Gradients {
  ModelInput input;           // same shapes as the forward input
  std::vector<double> params; // empty unless requested
};

class Layer;

/// Feature extractor: a chain of layers reading a slice of the parameter
/// vector starting at `base`.
struct Trunk {
  ArchKind kind = ArchKind::DenseHead;
  std::size_t hidden = 0;  // requested latent width (0: linear DenseHead)
  InputShape input;
  std::vector<std::shared_ptr<const Layer>> layers;
  std::size_t base = 0;
  std::size_t n_params = 0;
  std::size_t latent_dim = 0;
};

/// Small classifier with analytic gradients. Branch kinds have one trunk;
/// Fused has two, whose latents are concatenated before a linear head.
class MicroNet {
 public:
  ArchKind kind() const { return kind_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t latent_dim() const;
  std::vector<InputShape> input_shapes() const;
  const std::vector<Trunk>& trunks() const { return trunks_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  const std::vector<ParamSlice>& slices() const { return slices_; }
  const ParamSlice& slice(std::string_view name) const;
  std::span<double> slice_values(std::string_view name);
  std::span<const double> slice_values(std::string_view name) const;

  /// Mask over params(): 1 where the owning slice is trainable.
  std::vector<std::uint8_t> trainable_mask() const;

  ForwardResult forward(const ModelInput& x) const;

  /// Backpropagates `logit_cotangent` (d objective / d logits).
  Gradients backward(const ModelInput& x, std::span<const double> logit_cotangent,
                     bool want_params) const;

  /// Seed used by build_branch / randomize_weights (0 for loaded nets).
  std::uint64_t init_seed() const { return init_seed_; }

 private:
  friend MicroNet build_branch(ArchKind, InputShape, std::size_t, std::size_t, std::uint64_t);
  friend MicroNet build_fused(const MicroNet&, const MicroNet&);
  friend MicroNet randomize_weights(const MicroNet&, std::uint64_t);

  void check_input(const ModelInput& x) const;

  ArchKind kind_ = ArchKind::DenseHead;
  std::size_t n_classes_ = 0;
  std::vector<Trunk> trunks_;
  std::size_t head_offset_ = 0;
  std::vector<double> params_;
  std::vector<ParamSlice> slices_;
  std::shared_ptr<const Layer> head_;
  std::uint64_t init_seed_ = 0;
};

/// Desk-scale branch.
///  TimeConv:  conv1d 8x9 "same" -> ReLU -> maxpool 4 -> standardize -> dense latent + ReLU
///  FreqAttn:  standardize -> 16 tokens -> projection + sinusoidal positions ->
///             single-head attention with residual -> mean-pool -> dense latent + ReLU
///  TfConv2d:  conv2d 4x3x3 "same" -> ReLU -> maxpool 2 -> standardize -> dense latent + ReLU
///  DenseHead: standardize -> dense latent + ReLU; latent_dim = 0 gives a
///             purely linear model whose latent is the standardized input.
/// Every kind ends in a linear head to n_classes logits. Weights are uniform
/// with a fan-in scaled bound; biases start at zero; standardization starts
/// as the identity.
MicroNet build_branch(ArchKind kind, InputShape input, std::size_t latent_dim, std::size_t n_classes,
                      std::uint64_t seed);

/// Intermediate fusion of two trained branches. The head reads
/// concat(latent_a, latent_b) and starts as the average of the two branch
/// heads, so initial fused logits = (logits_a + logits_b) / 2.
MicroNet build_fused(const MicroNet& a, const MicroNet& b);

/// Same architecture, fresh initialization for every trainable slice;
/// standardization statistics are kept.
MicroNet randomize_weights(const MicroNet& net, std::uint64_t seed);

/// Fixes every standardization layer to the per-feature mean and 1/std of its
/// input over `inputs`, layer by layer.
void calibrate_standardization(MicroNet& net, const std::vector<ModelInput>& inputs);

enum class GradOf { Logit, LogProb };

/// d(logit_c or log p_c)/dx for every modality input.
ModelInput grad_input(const MicroNet& net, const ModelInput& x, std::size_t target, GradOf of);

/// Cross-entropy -log p_label and its gradients for one sample.
struct LossGrad {
  double loss = 0.0;
  Gradients grads;
};
LossGrad cross_entropy_grad(const MicroNet& net, const ModelInput& x, std::size_t label,
                            bool want_input, bool want_params);

double cross_entropy(const MicroNet& net, const ModelInput& x, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);

/// Versioned JSON with the architecture description and named slices; values
/// are decimal strings with 17 significant digits.
std::string params_to_json(const MicroNet& net);
MicroNet params_from_json(std::string_view text);
void save_params(const MicroNet& net, const std::filesystem::path& path);
MicroNet load_params(const std::filesystem::path& path);

}  // namespace ecgtrust::models
