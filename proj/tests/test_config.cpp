#include <doctest.h>

#include "travgrid/config.hpp"

using namespace travgrid;
using namespace travgrid::config;

namespace {

RunConfig parse(const std::string& text) {
  RunConfig c;
  c.apply(KeyValueFile::parse(text));
  return c;
}

}  // namespace

TEST_CASE("defaults validate and round-trip through text") {
  const RunConfig c;
  CHECK_NOTHROW(c.validate());
  const auto text = c.to_text();
  CHECK(parse(text).to_text() == text);
}

TEST_CASE("edited values survive the round trip") {
  auto kv = KeyValueFile::parse("[train]\nepochs = 7\nloss = cont\n# comment\n[scene]\nseed = 9\n");
  kv.set("model.classes=2");
  kv.set("scene.region", "ditch 1 2 3 4");
  kv.set("eval.mapping", "gravel traversable");
  RunConfig c;
  c.apply(kv);
  CHECK(c.trainer.schedules.epochs == 7);
  CHECK(c.trainer.loss == disamb::LossMode::kContrastive);
  CHECK(c.scene.seed == 9);
  CHECK(c.trainer.classes == 2);
  REQUIRE(c.scene.regions.size() == 1);
  CHECK(c.scene.regions[0].terrain == synth::TerrainClass::kDitch);
  CHECK(c.scene.regions[0].y1 == 4.0);
  CHECK(c.mapping.level("gravel") == synth::Level::kTraversable);
  const auto back = parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.scene.regions.size() == 1);
}

TEST_CASE("last assignment wins") {
  auto kv = KeyValueFile::parse("[train]\nepochs = 7\n");
  kv.set("train.epochs=3");
  RunConfig c;
  c.apply(kv);
  CHECK(c.trainer.schedules.epochs == 3);
}

TEST_CASE("unknown keys and bad values name the key") {
  try {
    (void)parse("[train]\nepoch = 5\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epoch") != std::string::npos);
  }
  try {
    (void)parse("[map]\nresolution = fast\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("map.resolution") != std::string::npos);
  }
}

TEST_CASE("cross-field validation") {
  auto c = parse("[labeling]\npatch_size = 10\n");
  CHECK_THROWS(c.validate());
  c = parse("[map]\nextent = 40.1\n");
  CHECK_THROWS(c.validate());
}
