#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "fgb/tensor.hpp"

namespace fgb {

// Named parameter tensors with stable (insertion) iteration order plus the
// per-parameter ADAM moment buffers and step counter.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name_at(std::size_t i) const { return entries_[i].name; }
  Tensor& at(std::size_t i) { return entries_[i].param; }
  const Tensor& at(std::size_t i) const { return entries_[i].param; }

  void zero_grad();

  // Deep copy of values; fresh optimizer state, requires_grad preserved.
  ParamStore clone() const;
  // Copies values from an identically-shaped source entry into an existing
  // parameter (used for warm starts).
  void copy_values_from(const ParamStore& src, const std::string& name);

  struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
  };
  AdamState& state_at(std::size_t i) { return entries_[i].state; }

 private:
  struct Entry {
    std::string name;
    Tensor param;
    AdamState state;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled = false;  // true: AdamW (decay applied to parameters directly)
};

// One ADAM/AdamW step over every parameter with a populated gradient.
// Rejects the whole step (no state touched) if any gradient is non-finite,
// naming the offending parameter.
void adam_step(ParamStore& params, const AdamConfig& cfg);

// Parameter checkpoint ("BKPT"): magic, u16 version, then per parameter
// name length u16 + UTF-8 name, rank u8, extents u32 each, IEEE-754 double
// values, all little-endian.
void save_checkpoint(const ParamStore& params, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

}  // namespace fgb
