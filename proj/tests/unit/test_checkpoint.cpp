#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bifocal/checkpoint.hpp"
#include "bifocal/config.hpp"

using namespace bifocal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "bifocal_checkpoint_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("save then load is bit-exact for every tensor") {
  for (bool bifocal : {true, false}) {
    const auto cfg = toy_config(bifocal);
    Rng rng(3);
    const auto model = TransducerModel<float>::create(cfg.resolved_model(), rng);
    const auto path = scratch(bifocal ? "bifocal.ckpt" : "mono.ckpt");
    save_checkpoint(path, model, to_json(cfg));
    const auto ck = load_checkpoint(path);
    CHECK(ck.model.config == model.config);
    const auto a = model.tensors(), b = ck.model.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      CHECK(std::equal(a[i].data.begin(), a[i].data.end(), b[i].data.begin(), b[i].data.end()));
    }
    CHECK(ck.metadata.at("experiment") == to_json(cfg));
    // Saving the loaded model reproduces the same bytes.
    const auto again = scratch("again.ckpt");
    save_checkpoint(again, ck.model, ck.metadata.at("experiment"));
    CHECK(slurp(path) == slurp(again));
  }
}

TEST_CASE("corrupt files are rejected") {
  Rng rng(4);
  const auto model = TransducerModel<float>::create(toy_config().resolved_model(), rng);
  const auto path = scratch("good.ckpt");
  save_checkpoint(path, model);
  const std::string bytes = slurp(path);

  const auto bad = scratch("bad.ckpt");
  dump(bad, "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);

  auto wrong_version = bytes;
  wrong_version[8] = 7;  // version follows the 8-byte magic
  dump(bad, wrong_version);
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("version"), CheckpointError);

  dump(bad, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("truncated"), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint(scratch("does_not_exist.ckpt")), CheckpointError);
}

TEST_CASE("compatibility check names the first mismatch") {
  const auto expected = toy_config().resolved_model();
  CHECK_NOTHROW(check_compatible(expected, expected));
  auto other = expected;
  other.encoder.branch_hidden = {16, 48};
  CHECK_THROWS_WITH_AS(check_compatible(expected, other), doctest::Contains("branch_hidden"), CheckpointError);
  other = expected;
  other.joint.activation = Activation::kRelu;
  CHECK_THROWS_WITH_AS(check_compatible(expected, other), doctest::Contains("activation"), CheckpointError);
}
