#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nff/config.hpp"
#include "nff/dataset_io.hpp"
#include "nff/field_flow.hpp"
#include "nff/gp_oracle.hpp"
#include "nff/pde_loss.hpp"

namespace nff {

enum class ExperimentKind { FieldLearning, ForwardSde, InverseSde, MixedSde, Forward2d };
ExperimentKind parse_kind(const std::string& s);
const char* kind_name(ExperimentKind k);

/// A validated experiment configuration with typed accessors. Every default
/// used here is listed in the README.
class Experiment {
 public:
  explicit Experiment(Config cfg);

  const Config& config() const { return cfg_; }
  ExperimentKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  bool is_sde() const { return kind_ != ExperimentKind::FieldLearning; }
  std::size_t snapshots() const { return cfg_.count("snapshots", 1000); }

  Domain domain() const;
  /// Target field (k for SDE kinds).
  FieldSpec field_spec() const;
  bool forcing_learned() const;
  double forcing_value() const { return cfg_.real("forcing.value", 1.0); }
  std::size_t sensors(Field f) const;
  std::size_t active(Field f) const;
  ad::Tensor sensor_grid(Field f) const;
  /// Fine grid of the reference solver: nodes per side.
  std::size_t solver_nodes() const;

  FieldFlowConfig flow_config() const;
  TrainConfig train_config() const;
  PhysicsConfig physics_config() const;

  ad::Tensor eval_grid() const;
  /// Evaluation points per side: 33 in 1-D, 17 in 2-D.
  std::size_t eval_grid_size() const { return cfg_.count("eval.grid", domain().dim == 1 ? 33 : 17); }
  std::size_t eval_draws() const { return cfg_.count("eval.draws", 2000); }
  std::size_t reference_draws() const { return cfg_.count("eval.reference_draws", 10000); }
  std::size_t mc_budget() const { return cfg_.count("eval.mc_budget", snapshots()); }
  std::size_t spectra_count() const { return cfg_.count("eval.spectra", 5); }

  /// Hash of the keys that determine the generated data.
  std::string data_hash() const;
  /// Hash of everything except the epoch budget and evaluation settings;
  /// checkpoints carry it.
  std::string model_hash() const;

 private:
  Config cfg_;
  ExperimentKind kind_;
  std::uint64_t seed_;
};

/// A trained object: a single field flow or a physics-informed model.
struct Model {
  std::optional<FieldFlow> field;
  std::optional<SdeModel> sde;
  std::vector<NamedParam> parameters();
};
Model build_model(const Experiment& e);

/// Ground-truth draws on arbitrary points; k, f, u as n x P (f and u empty
/// for field learning). SDE kinds solve one PDE per draw on the fine grid.
struct TruthDraws {
  std::array<ad::Tensor, 3> fields;
};
TruthDraws sample_truth(const Experiment& e, const ad::Tensor& points, std::size_t n, Rng& rng);

DatasetFile generate_dataset(const Experiment& e);

TrainState initial_train_state(const Experiment& e);
void train_model(Model& m, const Experiment& e, const DatasetFile& data, TrainState& state,
                 const EpochCallback& on_epoch = {});

/// Model draws on points, keyed like TruthDraws.
TruthDraws sample_model(const Model& m, const ad::Tensor& points, std::size_t n, Rng& rng);

struct Evaluation {
  nlohmann::json metrics;
  std::map<std::string, std::string> csv;  // file name -> contents
};
/// With `oracle_self` the reference draws stand in for the model samples and
/// the model is not used, so every model-vs-reference error is 0.
Evaluation evaluate(const Model& m, const Experiment& e, bool oracle_self = false);

struct Inference {
  ad::Tensor query;
  ad::Tensor draws;  // n_draws x q
  Moments moments;
  std::optional<FieldMoments> truth;
};
Inference infer(const Model& m, const Experiment& e, Field field, const Observations& obs, std::size_t n_draws,
                Rng& rng);

// File-level entry points shared by the CLI and the Python module.
void run_generate(const Experiment& e, const std::string& out);
/// Returns the loss history. `resume` names a checkpoint to continue from.
std::vector<double> run_train(const Experiment& e, const std::string& data_path, const std::string& out,
                              const std::string& resume = "", const EpochCallback& on_epoch = {});
Model load_model(const Experiment& e, const std::string& checkpoint);
nlohmann::json run_evaluate(const Experiment& e, const std::string& checkpoint, const std::string& out_dir,
                            bool oracle_self = false);
void run_infer(const Experiment& e, const std::string& checkpoint, const std::string& observations,
               std::size_t n_draws, const std::string& out, Field field = Field::K);

}  // namespace nff
