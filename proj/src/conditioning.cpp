#include "ctxmem/conditioning.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "ctxmem/errors.hpp"

namespace ctxmem {

int frames_to_latent_len(int frame_count, int r) {
  if (r < 1) throw InvalidFrameCount("compression ratio must be >= 1, got " + std::to_string(r));
  if (frame_count < 1 || (frame_count - 1) % r != 0) {
    throw InvalidFrameCount(std::to_string(frame_count) + " frames is not 1 + n*" + std::to_string(r));
  }
  return 1 + (frame_count - 1) / r;
}

std::vector<bool> ConditioningBatch::update_mask() const {
  std::vector<bool> mask;
  mask.reserve(slots.size());
  for (const auto& s : slots) mask.push_back(!s.is_clean);
  return mask;
}

ConditioningBatch assemble_batch(int pred_frames, std::span<const FrameId> context_ids, int r, int context_offset) {
  if (context_offset < 0) throw std::invalid_argument("context_offset must be >= 0");
  std::vector<FrameId> ids(context_ids.begin(), context_ids.end());
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("duplicate context frame id");
  }
  ConditioningBatch batch;
  batch.pred_len = frames_to_latent_len(pred_frames, r);
  batch.context_len = static_cast<int>(ids.size());
  batch.slots.reserve(static_cast<std::size_t>(batch.pred_len + batch.context_len));
  for (int i = 0; i < batch.pred_len; ++i) {
    batch.slots.push_back({SlotSource::Predicted, std::nullopt, i, false});
  }
  int pos = batch.pred_len + context_offset;
  for (FrameId id : ids) batch.slots.push_back({SlotSource::Context, id, pos++, true});
  return batch;
}

nlohmann::json batch_to_json(const ConditioningBatch& batch) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : batch.slots) {
    slots.push_back({{"source", s.source == SlotSource::Predicted ? "predicted" : "context"},
                     {"frame_id", s.frame_id ? nlohmann::json(*s.frame_id) : nlohmann::json(nullptr)},
                     {"position_index", s.position_index},
                     {"is_clean", s.is_clean}});
  }
  return {{"version", 1}, {"pred_len", batch.pred_len}, {"context_len", batch.context_len}, {"slots", std::move(slots)}};
}

}  // namespace ctxmem
