#pragma once

// Named parameter registry and its binary checkpoint format. The format
// stores raw little-endian float64 payloads so a save/load cycle is bitwise
// exact.

#include <map>
#include <string>
#include <vector>

#include "laddernat/tensor.hpp"

namespace laddernat {

class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Tensor>& all() const { return params_; }

  // Total scalar count across parameters whose name starts with prefix
  // ("" counts everything).
  long count_prefix(const std::string& prefix) const;

  std::vector<Tensor> tensors() const;
  void zero_grads();

  // Flat value snapshot in name order; used to retain the best checkpoint
  // in memory during training.
  std::vector<double> snapshot() const;
  void restore(const std::vector<double>& snap);

 private:
  std::map<std::string, Tensor> params_;
};

void save_checkpoint(const ParamStore& params, const std::string& path);
// Loads into an already constructed store; shapes and names must match.
void load_checkpoint(ParamStore& params, const std::string& path);

}  // namespace laddernat
