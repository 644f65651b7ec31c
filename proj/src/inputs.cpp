#include "placekd/inputs.h"

#include "placekd/errors.h"
#include "placekd/image_io.h"

namespace placekd {

void InputCache::preload(const std::vector<PlaceRecord>& records, ModelKind kind) {
  for (const auto& r : records) {
    ModelInput& e = entries_[r.id];
    if (needs_rgb(kind) && e.rgb.size() == 0) {
      e.rgb = rgb_to_tensor(resize_bilinear(read_rgb(r.rgb_path), spec_.height, spec_.width));
    }
    if (needs_seg(kind) && e.seg.size() == 0) {
      if (r.seg_path.empty()) {
        throw EvaluationError("record '" + r.id + "' has no segmentation map but model kind " + to_string(kind) +
                              " requires one");
      }
      e.seg = encode_label_map(read_label_map(r.seg_path), spec_.scheme, spec_.height, spec_.width);
      ++seg_loads_;
    }
  }
}

const ModelInput& InputCache::get(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw DataError("input cache has no entry for '" + id + "'");
  return it->second;
}

}  // namespace placekd
