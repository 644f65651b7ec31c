#pragma once

#include <map>
#include <string>
#include <vector>

#include "placekd/model.h"

namespace placekd {

// Preprocessed network inputs keyed by record id. Preloading is serial; reads
// are safe from any number of threads afterwards.
class InputCache {
 public:
  explicit InputCache(InputSpec spec) : spec_(std::move(spec)) {}

  const InputSpec& spec() const { return spec_; }

  // Loads whichever modalities `kind` needs and are not cached yet.
  void preload(const std::vector<PlaceRecord>& records, ModelKind kind);
  const ModelInput& get(const std::string& id) const;
  bool contains(const std::string& id) const { return entries_.count(id) > 0; }

  std::size_t seg_loads() const { return seg_loads_; }

 private:
  InputSpec spec_;
  std::map<std::string, ModelInput> entries_;
  std::size_t seg_loads_ = 0;
};

}  // namespace placekd
