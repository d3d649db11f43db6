#pragma once

#include <cstdint>
#include <string>

#include "nff/pde_loss.hpp"

namespace nff {

/// A generated training set together with its provenance.
struct DatasetFile {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t dim_x = 1;
  SdeDataset data;  // field-learning sets use only k
};

/// CSV with '#' provenance lines and header snapshot_id,field,x0[,x1],value0.
/// Numbers are written in shortest round-trip form.
std::string dataset_to_csv(const DatasetFile& d);
DatasetFile dataset_from_csv(const std::string& text);
void write_dataset(const std::string& path, const DatasetFile& d);
DatasetFile read_dataset(const std::string& path);
/// Hash of the serialized dataset.
std::string dataset_hash(const DatasetFile& d);

/// Observations for conditional prediction: header x0[,x1],value0.
struct Observations {
  ad::Tensor x;
  ad::Tensor values;
};
Observations read_observations(const std::string& path, std::size_t dim_x);
void write_observations(const std::string& path, const Observations& obs);

std::string format_double(double v);
double parse_double(std::string_view s);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace nff
