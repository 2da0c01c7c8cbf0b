#include <doctest.h>

#include <stdexcept>

#include "ctxmem/conditioning.hpp"
#include "ctxmem/errors.hpp"

using namespace ctxmem;

TEST_SUITE("conditioning") {
  TEST_CASE("latent length") {
    CHECK(frames_to_latent_len(77, 4) == 20);
    CHECK(frames_to_latent_len(1, 4) == 1);
    CHECK(frames_to_latent_len(1, 1) == 1);
    CHECK(frames_to_latent_len(9, 2) == 5);
    CHECK_THROWS_AS(frames_to_latent_len(78, 4), InvalidFrameCount);
    CHECK_THROWS_AS(frames_to_latent_len(0, 4), InvalidFrameCount);
    CHECK_THROWS_AS(frames_to_latent_len(5, 0), InvalidFrameCount);
  }

  TEST_CASE("batch layout") {
    std::vector<FrameId> ids(20);
    for (FrameId i = 0; i < 20; ++i) ids[i] = 100 + 3 * i;
    const auto batch = assemble_batch(77, ids);
    REQUIRE(batch.slots.size() == 40);
    CHECK(batch.pred_len == 20);
    CHECK(batch.context_len == 20);
    const auto mask = batch.update_mask();
    for (int i = 0; i < 40; ++i) {
      const auto& s = batch.slots[static_cast<std::size_t>(i)];
      CHECK(s.position_index == i);
      CHECK(mask[static_cast<std::size_t>(i)] == (i < 20));
      CHECK(s.is_clean == (i >= 20));
      if (i < 20) {
        CHECK(s.source == SlotSource::Predicted);
        CHECK_FALSE(s.frame_id);
      } else {
        CHECK(s.source == SlotSource::Context);
        CHECK(s.frame_id == ids[static_cast<std::size_t>(i - 20)]);
      }
    }

    const auto none = assemble_batch(77, std::vector<FrameId>{});
    CHECK(none.slots.size() == 20);
    for (const auto& s : none.slots) CHECK(s.source == SlotSource::Predicted);

    const auto one = assemble_batch(77, std::vector<FrameId>{5});
    REQUIRE(one.slots.size() == 21);
    CHECK(one.slots[20].position_index == 20);
    CHECK(one.slots[20].frame_id == FrameId{5});
  }

  TEST_CASE("predicted positions ignore the context size") {
    const auto base = assemble_batch(77, std::vector<FrameId>{});
    for (int n : {0, 1, 5, 20, 33}) {
      std::vector<FrameId> ids;
      for (int i = 0; i < n; ++i) ids.push_back(static_cast<FrameId>(7 * i));
      const auto b = assemble_batch(77, ids);
      for (int i = 0; i < 20; ++i) CHECK(b.slots[static_cast<std::size_t>(i)] == base.slots[static_cast<std::size_t>(i)]);
      int clean = 0;
      for (const auto& s : b.slots) clean += s.is_clean;
      CHECK(clean == n);
    }
  }

  TEST_CASE("context order, offsets and errors") {
    const std::vector<FrameId> ids{9, 2, 5};
    const auto b = assemble_batch(5, ids, 4, 3);
    REQUIRE(b.slots.size() == 5);
    CHECK(b.pred_len == 2);
    CHECK(b.slots[2].frame_id == FrameId{2});
    CHECK(b.slots[3].frame_id == FrameId{5});
    CHECK(b.slots[4].frame_id == FrameId{9});
    CHECK(b.slots[2].position_index == 5);
    CHECK(b.slots[4].position_index == 7);
    CHECK(assemble_batch(5, ids, 4, 3) == b);

    CHECK_THROWS_AS(assemble_batch(77, std::vector<FrameId>{1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(assemble_batch(77, ids, 4, -1), std::invalid_argument);
    CHECK_THROWS_AS(assemble_batch(78, ids), InvalidFrameCount);
  }

  TEST_CASE("json form") {
    const auto j = batch_to_json(assemble_batch(77, std::vector<FrameId>{4, 8}));
    CHECK(j["pred_len"] == 20);
    CHECK(j["context_len"] == 2);
    CHECK(j["slots"].size() == 22);
    CHECK(j["slots"][21]["frame_id"] == 8);
  }
}
