#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nff/errors.hpp"
#include "nff/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Options {
  std::string config;
  std::string seed;
  std::string out;
  std::size_t threads = 1;
  std::string data;
  std::string checkpoint;
  std::string resume;
  std::string observations;
  std::string field = "k";
  std::size_t epochs = 0;
  std::size_t draws = 0;
  bool oracle_self = false;
};

nff::Experiment load_experiment(const Options& o, bool epochs_override) {
  nff::Config cfg = nff::Config::load(o.config);
  if (!o.seed.empty()) cfg.set("seed", o.seed);
  if (epochs_override && o.epochs > 0) cfg.set("train.epochs", std::to_string(o.epochs));
  return nff::Experiment(std::move(cfg));
}

nff::Field parse_field(const std::string& s) {
  for (nff::Field f : nff::kAllFields)
    if (s == nff::field_name(f)) return f;
  throw nff::ConfigError("unknown field '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalizing field flows: learn random fields and stochastic elliptic PDEs from snapshots"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (computation is single-threaded)")->check(CLI::PositiveNumber);

  const auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--threads", o.threads, "Worker threads (computation is single-threaded)");
  };

  CLI::App* gen = app.add_subcommand("generate", "Generate a snapshot dataset");
  common(gen);
  gen->add_option("--out", o.out, "Dataset CSV")->required();

  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset");
  common(train);
  train->add_option("--data", o.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", o.out, "Checkpoint manifest path")->required();
  train->add_option("--resume", o.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--epochs", o.epochs, "Override train.epochs");

  CLI::App* eval = app.add_subcommand("evaluate", "Compute metrics and plot tables for a checkpoint");
  common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint manifest");
  eval->add_option("--out", o.out, "Output directory")->required();
  eval->add_option("--draws", o.draws, "Override eval.draws");
  eval->add_flag("--oracle-self", o.oracle_self, "Score the reference sampler against itself");

  CLI::App* inf = app.add_subcommand("infer", "Conditional prediction from observations");
  common(inf);
  inf->add_option("--checkpoint", o.checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  inf->add_option("--observations", o.observations, "Observation CSV (x0[,x1],value0); omit for unconditional")
      ->check(CLI::ExistingFile);
  inf->add_option("--draws", o.draws, "Number of draws")->default_val(1000);
  inf->add_option("--field", o.field, "Field to predict (k, f or u)")->default_val("k");
  inf->add_option("--out", o.out, "Summary CSV; draws go to <out>.draws.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) {
      nff::run_generate(load_experiment(o, false), o.out);
    } else if (train->parsed()) {
      const nff::Experiment e = load_experiment(o, true);
      const auto history = nff::run_train(e, o.data, o.out, o.resume, [](std::size_t epoch, double loss) {
        std::fprintf(stderr, "epoch %zu loss %.6f\n", epoch, loss);
      });
      std::fprintf(stderr, "trained %zu epochs -> %s\n", history.size(), o.out.c_str());
    } else if (eval->parsed()) {
      nff::Config cfg = nff::Config::load(o.config);
      if (!o.seed.empty()) cfg.set("seed", o.seed);
      if (o.draws > 0) cfg.set("eval.draws", std::to_string(o.draws));
      const nff::Experiment e(std::move(cfg));
      if (!o.oracle_self && o.checkpoint.empty()) throw nff::ConfigError("evaluate needs --checkpoint or --oracle-self");
      const auto metrics = nff::run_evaluate(e, o.checkpoint, o.out, o.oracle_self);
      std::cout << metrics.dump(2) << "\n";
    } else if (inf->parsed()) {
      nff::run_infer(load_experiment(o, false), o.checkpoint, o.observations, o.draws, o.out, parse_field(o.field));
    }
  } catch (const nff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nff::DataMismatchError& e) {
    std::cerr << "data mismatch: " << e.what() << "\n";
    return kExitData;
  } catch (const nff::ShapeError& e) {
    std::cerr << "data mismatch: " << e.what() << "\n";
    return kExitData;
  } catch (const nff::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
