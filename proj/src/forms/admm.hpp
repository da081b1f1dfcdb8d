#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "forms/errors.hpp"
#include "forms/layout.hpp"
#include "forms/model.hpp"
#include "forms/projection.hpp"

namespace forms {

struct LayerKnobs {
  double alpha = 1.0;  // max fraction of nonzero filters
  double beta = 1.0;   // max fraction of nonzero filter shapes
  double rho = 0.01;   // augmented-Lagrangian penalty
  friend bool operator==(const LayerKnobs&, const LayerKnobs&) = default;
};

struct CompressionConfig {
  std::map<std::string, LayerKnobs> layers;  // by layer name; others use `defaults`
  LayerKnobs defaults;
  std::size_t fragment_size = 4;
  PolarizationOrder polarization_order = PolarizationOrder::c_major;
  unsigned quant_bits = 8;
  unsigned cell_bits = 2;
  std::size_t epochs = 6;                // SGD epochs per ADMM phase
  std::size_t sign_update_interval = 2;  // recompute fragment signs every M epochs
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  bool crossbar_aware = true;
  bool polarize = true;
  bool quantize = true;

  LayerKnobs knobs(const std::string& layer) const;
  StructureOptions structure_options() const { return {crossbar_aware, fragment_size}; }
  // Throws ConfigError listing the offending knob.
  void validate() const;
  friend bool operator==(const CompressionConfig&, const CompressionConfig&) = default;
};

struct LayerCompression {
  std::string name;
  StructureMask mask;
  FragmentLayout layout;
  double quant_scale = 0.0;  // 0 when the layer is not quantized (or all zero)
};

struct CompressedModel {
  ModelGraph graph;
  std::vector<LayerCompression> layers;  // one per weighted layer, in order
  std::size_t fragment_size = 4;
  PolarizationOrder order = PolarizationOrder::c_major;
  unsigned quant_bits = 8;
  unsigned cell_bits = 2;
  bool polarized = false;
  bool quantized = false;

  // Unconstrained wrapper: full masks, layouts over all rows, positive signs.
  static CompressedModel identity(const ModelGraph& graph, const CompressionConfig& config);
  Weight2D weight2d(std::size_t weighted_index) const;
  void set_weight2d(std::size_t weighted_index, const Weight2D& h);
};

// U <- U + W - Z, element-wise.
void dual_update(std::span<double> u, std::span<const double> w, std::span<const double> z);
// Applies the update to every layer using state.z as Z.
AdmmState dual_update(const AdmmState& state, const ModelGraph& model);

struct PhaseLog {
  std::string phase;  // "prune", "polarize", "quantize"
  std::size_t epoch = 0;
  double loss = 0.0;
  double penalty = 0.0;
  double primal_residual = 0.0;  // sum_i ||W_i - Z_i||_F
};

struct AdmmResult {
  CompressedModel model;
  AdmmState state;
  std::size_t sign_updates = 0;
  std::vector<PhaseLog> history;
};

// Raised when the training loss stops being finite; carries the state at the
// time of the failure.
struct DivergenceError : Error {
  DivergenceError(const std::string& what, ModelGraph m, AdmmState s)
      : Error(Status::divergence, what), model(std::move(m)), state(std::move(s)) {}
  ModelGraph model;
  AdmmState state;
};

using EpochObserver = std::function<void(const PhaseLog&)>;

// Prune -> polarize -> quantize, each phase alternating SGD on the penalised
// loss, Z <- proj(W + U) and the dual update, then finishing with a hard
// projection whose result is enforced during later phases.
AdmmResult admm_train(const ModelGraph& pretrained, const Dataset& train,
                      const CompressionConfig& config, const EpochObserver& observer = {});

// Plain minibatch SGD on the task loss.
void train_sgd(ModelGraph& model, const Dataset& train, std::size_t epochs, double lr,
               std::size_t batch_size, std::uint64_t seed, const EpochObserver& observer = {});

enum class ViolationKind { structure, polarization, quantization };
const char* to_string(ViolationKind kind);

struct Violation {
  std::string layer;
  ViolationKind kind;
  std::size_t row = 0;  // filter-shape row (or count for aggregate violations)
  std::size_t col = 0;  // filter
  std::string detail;
};

struct LayerConstraintReport {
  std::string name;
  std::size_t filters = 0, shapes = 0;
  std::size_t nonzero_filters = 0, nonzero_shapes = 0;
  std::size_t target_filters = 0, target_shapes = 0;
  double filter_sparsity = 0.0;
  double shape_sparsity = 0.0;
  std::vector<bool> polarized;  // per fragment
  bool quantized = true;
};

struct ConstraintReport {
  std::vector<LayerConstraintReport> layers;
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

ConstraintReport verify_constraints(const CompressedModel& model, const CompressionConfig& config);

// Rounds weights and biases to float32 and re-snaps quantized weights onto the
// float32 scale so the in-memory model equals what the weight container holds.
void snap_to_float32(CompressedModel& model);

}  // namespace forms
