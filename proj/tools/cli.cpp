#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <ostream>

#include "irstyle/checkpoint.hpp"
#include "irstyle/dataset.hpp"
#include "irstyle/image_io.hpp"
#include "irstyle/report.hpp"
#include "irstyle/synth.hpp"
#include "irstyle/trainer.hpp"

namespace irstyle::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return usage;
    case ErrorKind::numeric: return numeric;
    default: return data;
  }
}

void report_error(std::ostream& err, std::string_view kind, int code, std::string_view message) {
  err << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << "\n";
}

json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::usage, path.string() + ": invalid JSON: " + e.what());
  }
}

Policy load_policy(const fs::path& path) { return deserialize(read_file(path)); }

std::string relative_key(const ImageRecord& r, const fs::path& root) {
  return fs::path(r.source_path).lexically_relative(root).generic_string();
}

void require_distinct(const fs::path& input, const fs::path& output) {
  std::error_code ec;
  if (fs::exists(output, ec) && fs::equivalent(input, output, ec)) {
    fail(ErrorKind::usage, "output directory must differ from input directory");
  }
}

void write_new(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (fs::exists(path, ec)) fail(ErrorKind::data, "refusing to overwrite existing file " + path.string());
  fs::create_directories(path.parent_path(), ec);
  if (ec) fail(ErrorKind::data, "cannot create " + path.parent_path().string() + ": " + ec.message());
  write_file(path, bytes);
}

// Parses "grayscale,invert" or "gamma=2,invert".
std::vector<HiddenOp> parse_hidden(const std::string& text) {
  std::vector<HiddenOp> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    if (item.empty()) fail(ErrorKind::usage, "empty entry in hidden policy '" + text + "'");
    const std::size_t eq = item.find('=');
    HiddenOp h{item.substr(0, eq), 0.0};
    if (eq != std::string::npos) {
      try {
        h.param = std::stod(item.substr(eq + 1));
      } catch (const std::exception&) {
        fail(ErrorKind::usage, "bad parameter in hidden policy entry '" + item + "'");
      }
    }
    out.push_back(std::move(h));
    start = end + 1;
  }
  return out;
}

struct TrainArgs {
  std::string config, source, target, output = "train-out", resume, backend;
  std::uint64_t seed = 0;
  std::size_t steps = 0, projections = 0, k = 0, batch_size = 0, checkpoint_every = 0;
  double epsilon = 0.0, lr_policy = 0.0;
  bool supervised = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  json doc = a.config.empty() ? json::object() : read_json_file(a.config);
  if (!doc.is_object()) fail(ErrorKind::usage, "config must be a JSON object");
  std::string source = a.source;
  std::string target = a.target;
  for (auto [key, dst] : {std::pair{"source", &source}, std::pair{"target", &target}}) {
    if (doc.contains(key)) {
      if (!doc[key].is_string()) fail(ErrorKind::usage, std::string("config field '") + key + "' must be a string");
      if (dst->empty()) *dst = doc[key].get<std::string>();
      doc.erase(key);
    }
  }
  TrainConfig c = config_from_json(doc);
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  if (given("--seed")) c.seed = a.seed;
  if (given("--steps")) c.steps = a.steps;
  if (given("--epsilon")) c.epsilon = a.epsilon;
  if (given("--backend")) c.backend = parse_backend(a.backend);
  if (given("--projections")) c.projections = a.projections;
  if (given("--k")) c.K = a.k;
  if (given("--batch-size")) c.batch_size = a.batch_size;
  if (given("--lr-policy")) c.lr_policy = a.lr_policy;
  if (given("--supervised")) c.supervised = a.supervised;

  TrainState state;
  if (!a.resume.empty()) {
    state = checkpoint_load(a.resume);
    c = state.config;
  }
  c.validate();
  if (source.empty() || target.empty()) fail(ErrorKind::usage, "train needs --source and --target folders");
  const DomainDataset src = load_folder(source, Domain::source, c.resolution);
  const DomainDataset tgt = load_folder(target, Domain::target, c.resolution);
  TrainState fresh = init_train_state(c, src, tgt);
  if (a.resume.empty()) state = std::move(fresh);

  const fs::path dir = a.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::data, "cannot create " + dir.string() + ": " + ec.message());
  json effective = to_json(c);
  effective["source"] = source;
  effective["target"] = target;
  write_file(dir / "config.json", effective.dump(2) + "\n");

  const fs::path ckpt = dir / "checkpoint.bin";
  StepCallback cb;
  if (a.checkpoint_every > 0) {
    cb = [&](const TrainState& s) {
      if (s.step % a.checkpoint_every == 0) checkpoint_save(s, ckpt);
    };
  }
  const TrainReport report = run_training(state, src, tgt, cb);
  write_file(dir / "policy.json", serialize(state.policy));
  checkpoint_save(state, ckpt);
  write_file(dir / "report.jsonl", train_report_jsonl(report, state.policy.registry));

  json summary{{"command", "train"},
               {"config", effective},
               {"steps", state.step},
               {"policy", (dir / "policy.json").string()},
               {"checkpoint", ckpt.string()},
               {"report", (dir / "report.jsonl").string()}};
  if (!report.records.empty()) summary["final"] = to_json(report.records.back());
  out << summary.dump() << "\n";
  return ok;
}

int cmd_stylize(const std::string& policy_path, const std::string& input, const std::string& output,
                std::uint64_t seed, const std::string& mode, std::ostream& out) {
  if (mode != "hard" && mode != "relaxed") fail(ErrorKind::usage, "unknown mode '" + mode + "' (hard, relaxed)");
  const Policy policy = load_policy(policy_path);
  require_distinct(input, output);
  const DomainDataset data = load_folder(input);
  // Check every destination before writing anything.
  std::vector<fs::path> dests;
  for (const ImageRecord& r : data.records) {
    dests.push_back(fs::path(output) / relative_key(r, input));
    std::error_code ec;
    if (fs::exists(dests.back(), ec)) fail(ErrorKind::data, "refusing to overwrite existing file " + dests.back().string());
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ImageRecord& r = data.records[i];
    Rng rng(derive_seed(seed, relative_key(r, input)));
    const Tensor y = mode == "hard" ? stylize(policy, r.image, rng) : relaxed_forward(policy, r.image, rng);
    if (!y.all_finite()) fail(ErrorKind::numeric, "non-finite output for " + r.source_path);
    write_new(dests[i], encode_ppm(y));
  }
  out << json{{"command", "stylize"},
              {"config", {{"policy", policy_path}, {"input", input}, {"output", output}, {"seed", seed}, {"mode", mode}}},
              {"images", data.size()}}
             .dump()
      << "\n";
  return ok;
}

int cmd_inspect(const std::string& policy_path, const std::string& output, const std::string& format, std::ostream& out) {
  const ReportFormat fmt = parse_report_format(format);
  const InspectReport report = inspect(load_policy(policy_path));
  json config{{"policy", policy_path}, {"format", format}};
  if (!output.empty()) config["output"] = output;
  if (fmt == ReportFormat::csv) {
    if (output.empty()) {
      out << to_csv(report);
    } else {
      emit_report(report, output, fmt);
    }
    return ok;
  }
  json doc = to_json(report);
  doc["config"] = config;
  if (output.empty()) {
    out << doc.dump(2) << "\n";
  } else {
    write_file(output, doc.dump(2) + "\n");
  }
  return ok;
}

int cmd_baseline(const std::string& kind_name, const std::string& input, const std::string& output, std::ostream& out) {
  const BaselineKind kind = parse_baseline(kind_name);
  require_distinct(input, output);
  const DomainDataset data = load_folder(input);
  for (const ImageRecord& r : data.records) {
    const fs::path dest = fs::path(output) / relative_key(r, input);
    std::error_code ec;
    if (fs::exists(dest, ec)) fail(ErrorKind::data, "refusing to overwrite existing file " + dest.string());
  }
  for (const ImageRecord& r : data.records) {
    write_new(fs::path(output) / relative_key(r, input), encode_ppm(baseline_stylize(kind, r).image));
  }
  out << json{{"command", "baseline"},
              {"config", {{"kind", kind_name}, {"input", input}, {"output", output}}},
              {"images", data.size()}}
             .dump()
      << "\n";
  return ok;
}

struct DistanceArgs {
  std::vector<std::string> folders;
  std::string policy;
  std::uint64_t seed = 0;
  std::size_t projections = 64;
  std::size_t resolution = kDistanceResolution;
  std::size_t count = 0;
  bool compare = false;
};

int cmd_distance(const DistanceArgs& a, std::ostream& out) {
  if (a.folders.size() != 2) fail(ErrorKind::usage, "distance needs two folders");
  if (a.projections == 0) fail(ErrorKind::usage, "projections must be at least 1");
  const DomainDataset da = load_folder(a.folders[0], Domain::source, a.resolution);
  const DomainDataset db = load_folder(a.folders[1], Domain::target, a.resolution);
  const std::size_t n = a.count > 0 ? a.count : std::min(da.size(), db.size());
  if (n > da.size() || n > db.size()) fail(ErrorKind::data, "count exceeds the smaller folder");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const DomainBatch bb = make_batch(db, idx);
  std::optional<Policy> policy;
  if (!a.policy.empty()) policy = load_policy(a.policy);

  auto measure = [&](const DomainBatch& x) {
    Rng rng(derive_seed(a.seed, "distance"));
    const double d = sliced_wasserstein(x, bb, a.projections, rng);
    if (!std::isfinite(d)) fail(ErrorKind::numeric, "distance is not finite");
    return d;
  };
  auto stylized = [&](auto&& fn) {
    DomainDataset copy = da;
    for (std::size_t i = 0; i < n; ++i) copy.records[i] = fn(copy.records[i]);
    return make_batch(copy, idx);
  };
  auto with_policy = [&]() {
    return stylized([&](const ImageRecord& r) {
      Rng rng(derive_seed(a.seed, relative_key(r, a.folders[0])));
      return ImageRecord{stylize(*policy, r.image, rng), r.label, r.source_path};
    });
  };

  json config{{"folders", a.folders}, {"seed", a.seed}, {"projections", a.projections}, {"resolution", a.resolution},
              {"count", n}, {"compare_baselines", a.compare}};
  if (policy) config["policy"] = a.policy;
  json doc{{"command", "distance"}, {"config", config}};
  if (a.compare) {
    json d = json::object();
    for (BaselineKind k : {BaselineKind::identity, BaselineKind::grayscale, BaselineKind::grayscale_invert}) {
      d[std::string(to_string(k))] = measure(stylized([k](const ImageRecord& r) { return baseline_stylize(k, r); }));
    }
    if (policy) d["policy"] = measure(with_policy());
    doc["distances"] = d;
  } else {
    doc["distance"] = policy ? measure(with_policy()) : measure(make_batch(da, idx));
  }
  out << doc.dump() << "\n";
  return ok;
}

struct SynthArgs {
  std::string output, config, hidden;
  std::uint64_t seed = 0;
  std::size_t images = 0, size = 0, classes = 0;
  double noise = 0.0;
};

int cmd_synth(SynthArgs a, const CLI::App& sub, std::ostream& out) {
  SynthSpec spec;
  if (!a.config.empty()) {
    const json doc = read_json_file(a.config);
    try {
      for (const auto& [key, v] : doc.items()) {
        if (key == "image_size") spec.image_size = v.get<std::size_t>();
        else if (key == "num_images") spec.num_images = v.get<std::size_t>();
        else if (key == "num_classes") spec.num_classes = v.get<std::size_t>();
        else if (key == "noise_sigma") spec.noise_sigma = v.get<double>();
        else if (key == "hidden_policy") {
          spec.hidden_policy.clear();
          for (const json& h : v) spec.hidden_policy.push_back({h.at("op").get<std::string>(), h.value("param", 0.0)});
        } else if (key == "seed") {
          if (sub.count("--seed") == 0) a.seed = v.get<std::uint64_t>();
        } else {
          fail(ErrorKind::usage, "synth config: unknown field '" + key + "'");
        }
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::usage, std::string("synth config: ") + e.what());
    }
  }
  if (sub.count("--images")) spec.num_images = a.images;
  if (sub.count("--size")) spec.image_size = a.size;
  if (sub.count("--classes")) spec.num_classes = a.classes;
  if (sub.count("--noise")) spec.noise_sigma = a.noise;
  if (sub.count("--hidden")) spec.hidden_policy = parse_hidden(a.hidden);
  spec.validate();
  const SynthDomains d = synth_generate(spec, a.seed);
  std::error_code ec;
  if (fs::exists(fs::path(a.output) / "manifest.json", ec)) {
    fail(ErrorKind::data, "refusing to overwrite existing dataset at " + a.output);
  }
  synth_export(d, spec, a.seed, a.output);
  json hidden = json::array();
  for (const HiddenOp& h : spec.hidden_policy) hidden.push_back({{"op", h.op}, {"param", h.param}});
  out << json{{"command", "synth-gen"},
              {"config",
               {{"output", a.output},
                {"seed", a.seed},
                {"image_size", spec.image_size},
                {"num_images", spec.num_images},
                {"num_classes", spec.num_classes},
                {"noise_sigma", spec.noise_sigma},
                {"hidden_policy", hidden}}},
              {"manifest", (fs::path(a.output) / "manifest.json").string()}}
             .dump()
      << "\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned image stylization policies"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a policy from a source and a target folder");
  train->add_option("--config", ta.config, "JSON config (TrainConfig fields, plus source/target)");
  train->add_option("--source", ta.source, "Source-domain folder");
  train->add_option("--target", ta.target, "Target-domain folder");
  train->add_option("--output", ta.output, "Output directory")->capture_default_str();
  train->add_option("--seed", ta.seed);
  train->add_option("--steps", ta.steps);
  train->add_option("--epsilon", ta.epsilon);
  train->add_option("--backend", ta.backend, "sliced | critic");
  train->add_option("--projections", ta.projections);
  train->add_option("--k", ta.k, "Number of stages");
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--lr-policy", ta.lr_policy);
  train->add_flag("--supervised,!--unsupervised", ta.supervised);
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Save a checkpoint every N steps");

  std::string policy, input, output, mode = "hard", kind, format = "json";
  std::uint64_t seed = 0;
  auto* styl = app.add_subcommand("stylize", "Apply a policy to every image of a folder");
  styl->add_option("--policy", policy)->required();
  styl->add_option("--input", input)->required();
  styl->add_option("--output", output)->required();
  styl->add_option("--seed", seed);
  styl->add_option("--mode", mode, "hard | relaxed")->capture_default_str();

  auto* insp = app.add_subcommand("inspect", "Summarize a policy");
  insp->add_option("--policy", policy)->required();
  insp->add_option("--output", output, "Report path (stdout if omitted)");
  insp->add_option("--format", format, "json | csv")->capture_default_str();

  auto* base = app.add_subcommand("baseline", "Apply a hand-crafted stylization to a folder");
  base->add_option("--kind", kind, "identity | grayscale | grayscale-invert")->required();
  base->add_option("--input", input)->required();
  base->add_option("--output", output)->required();

  DistanceArgs da;
  auto* dist = app.add_subcommand("distance", "Sliced Wasserstein distance between two folders");
  dist->add_option("folders", da.folders, "Two image folders")->expected(2)->required();
  dist->add_option("--policy", da.policy, "Stylize the first folder with this policy");
  dist->add_option("--seed", da.seed);
  dist->add_option("--projections", da.projections)->capture_default_str();
  dist->add_option("--resolution", da.resolution)->capture_default_str();
  dist->add_option("--count", da.count, "Images per folder (default: smaller folder size)");
  dist->add_flag("--compare-baselines", da.compare);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic source/target dataset pair");
  synth->add_option("--output", sa.output)->required();
  synth->add_option("--config", sa.config, "JSON SynthSpec");
  synth->add_option("--seed", sa.seed);
  synth->add_option("--images", sa.images);
  synth->add_option("--size", sa.size);
  synth->add_option("--classes", sa.classes);
  synth->add_option("--noise", sa.noise);
  synth->add_option("--hidden", sa.hidden, "Comma-separated ops, e.g. grayscale,invert or gamma=2");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", usage, e.what());
    return usage;
  }

  try {
    if (*train) return cmd_train(ta, *train, out);
    if (*styl) return cmd_stylize(policy, input, output, seed, mode, out);
    if (*insp) return cmd_inspect(policy, output, format, out);
    if (*base) return cmd_baseline(kind, input, output, out);
    if (*dist) return cmd_distance(da, out);
    if (*synth) return cmd_synth(sa, *synth, out);
  } catch (const Error& e) {
    const int code = exit_for(e.kind());
    report_error(err, to_string(e.kind()), code, e.what());
    return code;
  } catch (const std::exception& e) {
    report_error(err, "data", data, e.what());
    return data;
  }
  report_error(err, "usage", usage, "no command given");
  return usage;
}

}  // namespace irstyle::cli
