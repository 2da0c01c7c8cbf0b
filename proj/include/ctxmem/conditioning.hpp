#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "ctxmem/memory_store.hpp"

namespace ctxmem {

inline constexpr int kTemporalCompression = 4;

/// 1 + (frame_count - 1) / r. Throws InvalidFrameCount unless
/// frame_count >= 1, r >= 1 and frame_count = 1 (mod r).
int frames_to_latent_len(int frame_count, int r);

enum class SlotSource { Predicted, Context };

struct LatentSlot {
  SlotSource source = SlotSource::Predicted;
  std::optional<FrameId> frame_id;  // set for context slots
  int position_index = 0;
  bool is_clean = false;
  friend bool operator==(const LatentSlot&, const LatentSlot&) = default;
};

struct ConditioningBatch {
  std::vector<LatentSlot> slots;  // predicted block, then context block
  int pred_len = 0;
  int context_len = 0;

  /// True where the denoiser updates the slot (the noisy, predicted block).
  std::vector<bool> update_mask() const;
  friend bool operator==(const ConditioningBatch&, const ConditioningBatch&) = default;
};

/// Context ids are placed in ascending order, one slot each, at positions
/// pred_len + context_offset onward. Throws std::invalid_argument on duplicate
/// ids or a negative offset.
ConditioningBatch assemble_batch(int pred_frames, std::span<const FrameId> context_ids, int r = kTemporalCompression,
                                 int context_offset = 0);

nlohmann::json batch_to_json(const ConditioningBatch& batch);

}  // namespace ctxmem
