#include "nff/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "nff/config.hpp"

namespace nff {

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataMismatchError("not a number: '" + std::string(s) + "'");
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataMismatchError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto p = line.find(sep, start);
    parts.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return parts;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

std::string x_header(std::size_t dim_x) {
  std::string h;
  for (std::size_t j = 0; j < dim_x; ++j) h += ",x" + std::to_string(j);
  return h;
}

Field parse_field(std::string_view s) {
  if (s == "k") return Field::K;
  if (s == "f") return Field::F;
  if (s == "u") return Field::U;
  throw DataMismatchError("unknown field '" + std::string(s) + "'");
}

}  // namespace

std::string dataset_to_csv(const DatasetFile& d) {
  const std::size_t N = d.data.size();
  std::string fields;
  for (Field f : kAllFields) {
    if (d.data.field(f).size() == 0) continue;
    if (d.data.field(f).size() != N) throw ShapeError("dataset: fields hold different snapshot counts");
    if (!fields.empty()) fields += ",";
    fields += field_name(f);
  }
  std::string out = "# nff-dataset 1\n";
  out += "# config_hash=" + d.config_hash + "\n";
  out += "# seed=" + std::to_string(d.seed) + "\n";
  out += "# dim_x=" + std::to_string(d.dim_x) + "\n";
  out += "# snapshots=" + std::to_string(N) + "\n";
  out += "# fields=" + fields + "\n";
  out += "snapshot_id,field" + x_header(d.dim_x) + ",value0\n";
  for (std::size_t s = 0; s < N; ++s) {
    for (Field f : kAllFields) {
      const SnapshotSet& set = d.data.field(f);
      if (set.size() == 0) continue;
      const Snapshot& snap = set.snapshots[s];
      for (std::size_t i = 0; i < snap.size(); ++i) {
        out += std::to_string(s) + "," + field_name(f);
        for (std::size_t j = 0; j < d.dim_x; ++j) out += "," + format_double(snap.x(i, j));
        out += "," + format_double(snap.values[i]) + "\n";
      }
    }
  }
  return out;
}

DatasetFile dataset_from_csv(const std::string& text) {
  DatasetFile d;
  std::size_t N = 0;
  std::vector<Field> present;
  bool header_seen = false;
  std::array<std::vector<std::vector<double>>, 3> xs, vs;
  for (std::string_view line : lines_of(text)) {
    if (line.front() == '#') {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string key(line.substr(2, eq - 2));
      const std::string_view value = line.substr(eq + 1);
      if (key == "config_hash") d.config_hash = value;
      else if (key == "seed") d.seed = std::stoull(std::string(value));
      else if (key == "dim_x") d.dim_x = std::stoul(std::string(value));
      else if (key == "snapshots") N = std::stoul(std::string(value));
      else if (key == "fields" && !value.empty())
        for (auto f : split(value, ',')) present.push_back(parse_field(f));
      continue;
    }
    if (!header_seen) {
      if (line != "snapshot_id,field" + x_header(d.dim_x) + ",value0") {
        throw DataMismatchError("dataset: unexpected header '" + std::string(line) + "'");
      }
      header_seen = true;
      for (Field f : present) {
        xs[static_cast<int>(f)].resize(N);
        vs[static_cast<int>(f)].resize(N);
      }
      continue;
    }
    const auto parts = split(line, ',');
    if (parts.size() != 3 + d.dim_x) throw DataMismatchError("dataset: malformed row '" + std::string(line) + "'");
    const std::size_t s = std::stoul(std::string(parts[0]));
    const int fi = static_cast<int>(parse_field(parts[1]));
    if (s >= N || xs[fi].size() != N) throw DataMismatchError("dataset: row does not match the declared layout");
    for (std::size_t j = 0; j < d.dim_x; ++j) xs[fi][s].push_back(parse_double(parts[2 + j]));
    vs[fi][s].push_back(parse_double(parts[2 + d.dim_x]));
  }
  if (!header_seen) throw DataMismatchError("dataset: missing header");
  for (Field f : present) {
    const int fi = static_cast<int>(f);
    SnapshotSet& set = d.data.field(f);
    set.dim_x = d.dim_x;
    set.dim_value = 1;
    for (std::size_t s = 0; s < N; ++s) {
      const std::size_t n = vs[fi][s].size();
      set.snapshots.push_back({ad::Tensor(n, d.dim_x, std::move(xs[fi][s])), ad::Tensor(n, 1, std::move(vs[fi][s]))});
    }
  }
  return d;
}

void write_dataset(const std::string& path, const DatasetFile& d) { write_text(path, dataset_to_csv(d)); }

DatasetFile read_dataset(const std::string& path) { return dataset_from_csv(read_text(path)); }

std::string dataset_hash(const DatasetFile& d) { return hex64(fnv1a(dataset_to_csv(d))); }

Observations read_observations(const std::string& path, std::size_t dim_x) {
  const std::string text = read_text(path);
  std::vector<double> x, v;
  bool header = false;
  for (std::string_view line : lines_of(text)) {
    if (line.front() == '#') continue;
    if (!header) {
      const std::string want = x_header(dim_x).substr(1) + ",value0";
      if (line != want) throw DataMismatchError("observations: expected header '" + want + "'");
      header = true;
      continue;
    }
    const auto parts = split(line, ',');
    if (parts.size() != dim_x + 1) throw DataMismatchError("observations: malformed row");
    for (std::size_t j = 0; j < dim_x; ++j) x.push_back(parse_double(parts[j]));
    v.push_back(parse_double(parts[dim_x]));
  }
  const std::size_t n = v.size();
  return {ad::Tensor(n, dim_x, std::move(x)), ad::Tensor(n, 1, std::move(v))};
}

void write_observations(const std::string& path, const Observations& obs) {
  const std::size_t dim_x = obs.x.cols();
  std::string out = x_header(dim_x).substr(1) + ",value0\n";
  for (std::size_t i = 0; i < obs.values.rows(); ++i) {
    for (std::size_t j = 0; j < dim_x; ++j) out += format_double(obs.x(i, j)) + ",";
    out += format_double(obs.values[i]) + "\n";
  }
  write_text(path, out);
}

}  // namespace nff
