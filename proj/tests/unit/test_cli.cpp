#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "cli.hpp"
#include "irstyle/checkpoint.hpp"
#include "irstyle/dataset.hpp"
#include "irstyle/image_io.hpp"
#include "irstyle/policy.hpp"

using namespace irstyle;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path tmp_root() {
  const char* env = std::getenv("IRSTYLE_TEST_TMP");
  return env != nullptr ? fs::path(env) : fs::temp_directory_path() / "irstyle_test_cli";
}

fs::path fresh(const std::string& name) {
  const fs::path p = tmp_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json error_line(const Result& r) {
  REQUIRE(r.err.find('\n') == r.err.size() - 1);
  return json::parse(r.err);
}

Tensor solid(std::size_t size, float v) {
  Tensor t(Shape{3, size, size});
  std::ranges::fill(t.data(), v);
  return t;
}

// Small synthetic dataset shared by the train/stylize/distance cases.
const fs::path& synth_dir() {
  static const fs::path dir = [] {
    const fs::path d = fresh("synth");
    fs::remove_all(d);
    const Result r = run({"synth-gen", "--output", d.string(), "--seed", "3", "--images", "24", "--size", "16"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("synth-gen writes a manifest and refuses to overwrite") {
  const fs::path d = synth_dir();
  const json manifest = json::parse(read_file(d / "manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["source"].size() == 24);
  const Result again = run({"synth-gen", "--output", d.string(), "--seed", "3"});
  CHECK(again.code == cli::data);
  const Result bad = run({"synth-gen", "--output", (tmp_root() / "x").string(), "--hidden", "posterize"});
  CHECK(bad.code == cli::data);
  CHECK(error_line(bad)["error"] == "registry");
  const Result empty_entry = run({"synth-gen", "--output", (tmp_root() / "x").string(), "--hidden", "invert,,gamma"});
  CHECK(empty_entry.code == cli::usage);
}

TEST_CASE("train twice gives byte-identical outputs") {
  const fs::path root = fresh("train");
  const fs::path cfg = root / "cfg.json";
  write_file(cfg, json{{"steps", 6},
                       {"batch_size", 4},
                       {"projections", 8},
                       {"epsilon", 0.0},
                       {"source", (synth_dir() / "source").string()},
                       {"target", (synth_dir() / "target").string()}}
                      .dump());
  for (const char* out : {"a", "b"}) {
    const Result r = run({"train", "--config", cfg.string(), "--seed", "7", "--output", (root / out).string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const json summary = json::parse(r.out);
    CHECK(summary["config"]["seed"] == 7);
    CHECK(summary["config"]["steps"] == 6);
  }
  for (const char* f : {"policy.json", "checkpoint.bin", "config.json"}) {
    CHECK(read_file(root / "a" / f) == read_file(root / "b" / f));
  }
  // Loss lines agree; only the wall time may differ in the final line.
  auto losses = [&](const char* out) {
    std::istringstream in(read_file(root / out / "report.jsonl"));
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    lines.pop_back();
    return lines;
  };
  CHECK(losses("a") == losses("b"));
  CHECK(losses("a").size() == 6);

  // The echoed config reproduces the run.
  const Result echoed = run({"train", "--config", (root / "a" / "config.json").string(), "--output", (root / "c").string()});
  REQUIRE(echoed.code == 0);
  CHECK(read_file(root / "a" / "policy.json") == read_file(root / "c" / "policy.json"));

  // A different seed changes the policy.
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "8", "--output", (root / "d").string()}).code == 0);
  CHECK(read_file(root / "a" / "policy.json") != read_file(root / "d" / "policy.json"));

  // Periodic checkpoints do not change the result.
  REQUIRE(run({"train", "--config", cfg.string(), "--seed", "7", "--steps", "6", "--checkpoint-every", "3", "--output",
               (root / "e").string()})
              .code == 0);
  CHECK(read_file(root / "e" / "policy.json") == read_file(root / "a" / "policy.json"));
}

TEST_CASE("train resume continues a checkpoint") {
  const fs::path root = fresh("resume");
  const std::vector<std::string> common = {"--source", (synth_dir() / "source").string(), "--target",
                                           (synth_dir() / "target").string(), "--batch-size", "4", "--projections",
                                           "8", "--epsilon", "0", "--seed", "2"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> a = {"train"};
    a.insert(a.end(), common.begin(), common.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return run(a);
  };
  REQUIRE(with({"--steps", "8", "--output", (root / "full").string()}).code == 0);
  // Mid-run checkpoint built from the echoed config.
  json effective = json::parse(read_file(root / "full" / "config.json"));
  effective.erase("source");
  effective.erase("target");
  const TrainConfig c = config_from_json(effective);
  const DomainDataset src = load_folder(synth_dir() / "source", Domain::source, c.resolution);
  const DomainDataset tgt = load_folder(synth_dir() / "target", Domain::target, c.resolution);
  TrainState s = init_train_state(c, src, tgt);
  run_training(s, src, tgt, {}, 4);
  checkpoint_save(s, root / "mid.ckpt");
  const Result r = with({"--resume", (root / "mid.ckpt").string(), "--output", (root / "resumed").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(json::parse(r.out)["steps"] == 8);
  CHECK(read_file(root / "resumed" / "policy.json") == read_file(root / "full" / "policy.json"));
  CHECK(read_file(root / "resumed" / "checkpoint.bin") == read_file(root / "full" / "checkpoint.bin"));
}

TEST_CASE("baseline grayscale-invert turns white into black") {
  const fs::path in = fresh("white_in");
  const fs::path out = tmp_root() / "white_out";
  fs::remove_all(out);
  write_ppm(solid(4, 1.0f), in / "w.ppm");
  const Result r = run({"baseline", "--kind", "grayscale-invert", "--input", in.string(), "--output", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::string bytes = read_file(out / "w.ppm");
  CHECK(bytes == "P6\n4 4\n255\n" + std::string(48, '\0'));
  // Input untouched; second run refuses to overwrite.
  CHECK(read_ppm(in / "w.ppm") == solid(4, 1.0f));
  const Result again = run({"baseline", "--kind", "grayscale-invert", "--input", in.string(), "--output", out.string()});
  CHECK(again.code == cli::data);
  CHECK(error_line(again)["exit_code"] == 2);
  CHECK(run({"baseline", "--kind", "grayscale-invert", "--input", in.string(), "--output", in.string()}).code ==
        cli::usage);
  CHECK(run({"baseline", "--kind", "sepia", "--input", in.string(), "--output", out.string()}).code == cli::usage);
}

TEST_CASE("distance between a folder and itself") {
  const std::string src = (synth_dir() / "source").string();
  const Result r = run({"distance", src, src, "--projections", "16"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json doc = json::parse(r.out);
  CHECK(doc["distance"].get<double>() <= 1e-6);
  CHECK(doc["config"]["projections"] == 16);

  const std::string tgt = (synth_dir() / "target").string();
  const Result cmp = run({"distance", src, tgt, "--compare-baselines", "--resolution", "16"});
  REQUIRE(cmp.code == 0);
  const json d = json::parse(cmp.out)["distances"];
  CHECK(d["grayscale-invert"].get<double>() < d["identity"].get<double>());
}

TEST_CASE("stylize and inspect") {
  const fs::path root = fresh("stylize");
  const std::vector<FixedStage> gi = {{"grayscale"}, {"invert"}};
  write_file(root / "policy.json", serialize(fixed_policy(OpRegistry::defaults(), gi)));
  const std::string src = (synth_dir() / "source").string();
  const Result r = run({"stylize", "--policy", (root / "policy.json").string(), "--input", src, "--output",
                        (root / "out").string(), "--seed", "1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(json::parse(r.out)["images"] == 24);
  // Matches the baseline.
  const Result b = run({"baseline", "--kind", "grayscale-invert", "--input", src, "--output", (root / "base").string()});
  REQUIRE(b.code == 0);
  for (const auto& e : fs::recursive_directory_iterator(root / "base")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "base");
    CHECK(read_file(e.path()) == read_file(root / "out" / rel));
  }
  CHECK(run({"stylize", "--policy", (root / "policy.json").string(), "--input", src, "--output",
             (root / "relaxed").string(), "--mode", "relaxed"})
            .code == 0);
  CHECK(run({"stylize", "--policy", (root / "policy.json").string(), "--input", src, "--output",
             (root / "x").string(), "--mode", "soft"})
            .code == cli::usage);

  const Result insp = run({"inspect", "--policy", (root / "policy.json").string()});
  REQUIRE(insp.code == 0);
  const json rep = json::parse(insp.out);
  CHECK(rep["stages"][0]["op"] == "grayscale");
  CHECK(rep["stages"][1]["op"] == "invert");
  const Result csv = run({"inspect", "--policy", (root / "policy.json").string(), "--format", "csv"});
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("op_name,expected_count,expected_param\n", 0) == 0);
  CHECK(std::count(csv.out.begin(), csv.out.end(), '\n') == 9);
}

TEST_CASE("exit codes and error lines") {
  const Result none = run({});
  CHECK(none.code == cli::usage);
  CHECK(error_line(none)["error"] == "usage");
  CHECK(run({"frobnicate"}).code == cli::usage);
  CHECK(run({"train", "--steps", "abc"}).code == cli::usage);
  CHECK(run({"train"}).code == cli::usage);

  const fs::path root = fresh("errors");
  write_file(root / "bad.json", "{not json");
  CHECK(run({"train", "--config", (root / "bad.json").string()}).code == cli::usage);
  write_file(root / "unknown.json", R"({"stpes": 3})");
  CHECK(run({"train", "--config", (root / "unknown.json").string()}).code == cli::usage);
  write_file(root / "source.json", R"({"source": 3})");
  CHECK(run({"train", "--config", (root / "source.json").string()}).code == cli::usage);

  const Result missing = run({"inspect", "--policy", (root / "nope.json").string()});
  CHECK(missing.code == cli::data);
  const json e = error_line(missing);
  CHECK(e["exit_code"] == 2);
  CHECK(e["message"].get<std::string>().find("nope.json") != std::string::npos);

  write_file(root / "policy.json", "{}");
  CHECK(run({"inspect", "--policy", (root / "policy.json").string()}).code == cli::data);
  CHECK(run({"distance", (root / "missing").string(), (root / "missing").string()}).code == cli::data);
  CHECK(run({"--help"}).code == 0);
}
