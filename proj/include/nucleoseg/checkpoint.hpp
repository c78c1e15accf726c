#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "nucleoseg/enet.hpp"
#include "nucleoseg/errors.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Checkpoint layout: a short text header describing the architecture
// and the parameter names in order, followed by one tensor blob per
// parameter. Reconstructing the model from the header and matching
// names positionally makes silent weight misassignment impossible.
inline void save_checkpoint(const std::filesystem::path& path,
                            EnetModel<float>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  auto params = model.params();
  char num[64];
  os << "NSCKPT1\n";
  os << "role " << role_name(model.role) << '\n';
  std::snprintf(num, sizeof(num), "%.17g", model.width_multiplier);
  os << "width_multiplier " << num << '\n';
  os << "input_c " << model.input_c << '\n';
  std::snprintf(num, sizeof(num), "%.17g", model.dropout_rate);
  os << "dropout " << num << '\n';
  os << "params " << params.size() << '\n';
  for (const auto& p : params) os << p.name << '\n';
  os << "blobs\n";
  for (const auto& p : params) write_tensor(os, *p.tensor);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline EnetModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(is, line))
      throw FormatError(path.string() + ": truncated checkpoint header");
    return line;
  };
  if (next_line() != "NSCKPT1")
    throw FormatError(path.string() + ": not a checkpoint file");

  auto field = [&](const std::string& key) -> std::string {
    std::string l = next_line();
    if (l.rfind(key + ' ', 0) != 0)
      throw FormatError(path.string() + ": expected '" + key + "' line");
    return l.substr(key.size() + 1);
  };
  std::string role_str = field("role");
  double wm = 0, drop = 0;
  std::uint32_t in_c = 0;
  std::size_t count = 0;
  try {
    wm = std::stod(field("width_multiplier"));
    in_c = std::uint32_t(std::stoul(field("input_c")));
    drop = std::stod(field("dropout"));
    count = std::stoul(field("params"));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed checkpoint header");
  }

  EnetModel<float> model(role_from_name(role_str), wm, in_c, drop);
  auto params = model.params();
  if (params.size() != count)
    throw FormatError(path.string() + ": parameter count " +
                      std::to_string(count) + " does not match architecture (" +
                      std::to_string(params.size()) + ")");
  for (const auto& p : params) {
    std::string name = next_line();
    if (name != p.name)
      throw FormatError(path.string() + ": parameter '" + name +
                        "' does not match expected '" + p.name + "'");
  }
  if (next_line() != "blobs")
    throw FormatError(path.string() + ": missing blob section");
  for (const auto& p : params) {
    Tensor<float> t = read_tensor(is);
    if (!(t.dims() == p.tensor->dims()))
      throw FormatError(path.string() + ": blob shape " + t.dims().str() +
                        " does not match parameter " + p.name);
    *p.tensor = std::move(t);
  }
  return model;
}

}  // namespace nseg
