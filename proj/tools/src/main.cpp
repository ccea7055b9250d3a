#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"
#include "steerkit/pipeline.hpp"
#include "steerkit/sha256.hpp"

namespace {

using namespace steerkit;

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

// Flag overrides applied on top of the config file.
struct Overrides {
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string model_dir;
  std::optional<std::uint32_t> layer;
  std::string site;              // last | mean
  std::string inject_positions;  // all | generated
};

PipelineConfig resolve_config(const std::string& config_path, const Overrides& ov) {
  PipelineConfig config;
  if (!config_path.empty()) {
    config = load_config(config_path);
  }
  if (!ov.out_dir.empty()) {
    config.out_dir = ov.out_dir;
  }
  if (ov.seed) {
    config.seed = *ov.seed;
  }
  if (!ov.model_dir.empty()) {
    config.model_dir = ov.model_dir;
  }
  if (ov.layer) {
    config.layer = *ov.layer;
  }
  if (!ov.site.empty()) {
    config.site = ov.site == "last" ? ExtractionSite::kLastToken
                                    : ExtractionSite::kMeanOverPositions;
  }
  if (!ov.inject_positions.empty()) {
    config.inject_positions = ov.inject_positions == "all" ? InjectPositions::kAllPositions
                                                           : InjectPositions::kGeneratedOnly;
  }
  return config;
}

std::string default_vector_dir(const PipelineConfig& config) {
  const std::string base = config.build_dir.empty() ? config.out_dir : config.build_dir;
  return base + "/refined";
}

void print_digests(const ArtifactDigests& artifacts) {
  for (const auto& [rel, digest] : artifacts) {
    std::cout << digest << "  " << rel << "\n";
  }
}

// Interactive y/n labeling of the seed features. Resumable: features already
// present in the verdict log are not asked again. EOF ends the session with
// the partial log intact.
int run_review(const PipelineConfig& config, std::istream& in, std::ostream& out) {
  std::vector<FeatureRecord> records;
  ArtifactDigests inputs;
  if (!config.corpus_dir.empty()) {
    records = load_corpus(config.corpus_dir).records;
    inputs["features.jsonl"] = sha256_file_hex(config.corpus_dir + "/features.jsonl");
  } else if (!config.features_file.empty()) {
    records = load_features(config.features_file);
    inputs[config.features_file] = sha256_file_hex(config.features_file);
  } else {
    throw ConfigError("review: corpus_dir or features_file is required");
  }

  const std::string build_dir = config.build_dir.empty() ? config.out_dir : config.build_dir;
  const std::string seed_path = build_dir + "/seed_set.json";
  if (!file_exists(seed_path)) {
    throw InputError("review: missing " + seed_path + " (run build first)");
  }
  FeatureSet seeds;
  const nlohmann::json seed_json = read_json_file(seed_path);
  for (const auto& idx : seed_json.at("indices")) {
    seeds.insert(idx.get<FeatureIndex>());
  }
  inputs[seed_path] = sha256_file_hex(seed_path);

  std::map<FeatureIndex, const FeatureRecord*> by_index;
  for (const FeatureRecord& r : records) {
    by_index[r.index] = &r;
  }

  ensure_dir(config.out_dir);
  const std::string log_path = config.out_dir + "/verdicts.jsonl";
  std::map<FeatureIndex, JudgeVerdict> logged;
  if (file_exists(log_path)) {
    for (const JudgeVerdict& v : load_verdict_log(log_path)) {
      logged.emplace(v.index, v);  // keep the first verdict per feature
    }
  }

  std::size_t asked = 0;
  for (FeatureIndex c : seeds) {
    if (logged.find(c) != logged.end()) {
      continue;
    }
    const auto it = by_index.find(c);
    if (it == by_index.end()) {
      throw InputError("review: seed feature " + std::to_string(c) +
                       " has no explanation record");
    }
    const FeatureRecord& r = *it->second;
    out << "feature " << r.index << ": " << r.explanation << "\n";
    out << "  top tokens:";
    if (r.top_tokens.empty()) {
      out << " (none recorded)";
    }
    for (const std::string& t : r.top_tokens) {
      out << " \"" << t << "\"";
    }
    out << "\n";

    std::string line;
    bool answered = false;
    bool relevant = false;
    while (!answered) {
      out << "relevant to the task? [y/n] " << std::flush;
      if (!std::getline(in, line)) {
        out << "\nsession interrupted; " << asked << " new verdicts saved to " << log_path
            << "\n";
        return 0;
      }
      const std::string a = lowercase(line);
      if (a == "y" || a == "yes") {
        answered = true;
        relevant = true;
      } else if (a == "n" || a == "no") {
        answered = true;
      } else {
        out << "please answer y or n\n";
      }
    }
    JudgeVerdict v;
    v.index = c;
    v.relevant = relevant;
    v.rationale = "human review";
    v.source = JudgeSource::kHuman;
    append_verdict_log(log_path, v);
    logged.emplace(c, v);
    ++asked;
  }

  std::vector<JudgeVerdict> seed_verdicts;
  for (FeatureIndex c : seeds) {
    seed_verdicts.push_back(logged.at(c));
  }
  const FeaturePartition partition = partition_seed(seeds, seed_verdicts);
  write_json_file(config.out_dir + "/partition.json", {{"seed", partition.seed},
                                                       {"noise", partition.noise},
                                                       {"relevant", partition.relevant},
                                                       {"useful", partition.useful}});
  ArtifactDigests artifacts;
  artifacts["verdicts.jsonl"] = sha256_file_hex(log_path);
  artifacts["partition.json"] = sha256_file_hex(config.out_dir + "/partition.json");
  nlohmann::json manifest = {{"command", "review"},
                             {"config", config_echo_json(config)},
                             {"inputs", inputs},
                             {"artifacts", artifacts}};
  write_json_file(config.out_dir + "/run_manifest.json", manifest);
  out << "labeled " << seeds.size() << " seed features (" << asked << " this session): "
      << partition.relevant.size() << " relevant, " << partition.noise.size() << " noise\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAE-feature steering vector pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  app.add_option("--config", config_path, "Pipeline config JSON");
  app.add_option("--out", ov.out_dir, "Output directory (overrides config)");
  std::uint64_t seed_value = 0;
  CLI::Option* seed_opt = app.add_option("--seed", seed_value, "Seed (overrides config)");
  app.add_option("--model-dir", ov.model_dir, "Model directory (overrides config)");
  std::uint32_t layer_value = 0;
  CLI::Option* layer_opt = app.add_option("--layer", layer_value, "Capture/injection layer");
  app.add_option("--site", ov.site, "Extraction site")->check(CLI::IsMember({"last", "mean"}));
  app.add_option("--inject-positions", ov.inject_positions, "Injection positions")
      ->check(CLI::IsMember({"all", "generated"}));
  app.fallthrough();

  CLI::App* cmd_build_app = app.add_subcommand("build", "Capture activations, build the "
                                                        "mean-difference vector and the seed set");
  CLI::App* cmd_refine_app = app.add_subcommand("refine", "Judge, denoise, retrieve, verify, "
                                                          "and compose the refined vector");

  CLI::App* cmd_steer_app = app.add_subcommand("steer", "Generate a steered continuation");
  std::string question;
  std::string vector_dir;
  bool no_steer = false;
  cmd_steer_app->add_option("--question", question, "Question text")->required();
  cmd_steer_app->add_option("--vector", vector_dir, "Vector artifact directory");
  cmd_steer_app->add_flag("--no-steer", no_steer, "Generate without injection");

  CLI::App* cmd_eval_app = app.add_subcommand("eval", "Steered generation per question plus "
                                                      "judged report");
  std::string questions_file;
  std::string eval_vector_dir;
  cmd_eval_app->add_option("--questions", questions_file, "Questions file, one per line")
      ->required();
  cmd_eval_app->add_option("--vector", eval_vector_dir, "Vector artifact directory");

  CLI::App* cmd_review_app = app.add_subcommand("review", "Interactively label seed features");

  CLI::App* cmd_gen_app = app.add_subcommand("gen-synthetic", "Generate a planted corpus");
  std::string spec_file;
  PlantedCorpusSpec gen_spec;
  cmd_gen_app->add_option("--spec-file", spec_file, "Corpus spec JSON");
  const std::map<std::string, std::uint32_t PlantedCorpusSpec::*> count_members = {
      {"--n-relevant", &PlantedCorpusSpec::n_relevant},
      {"--n-missing", &PlantedCorpusSpec::n_missing},
      {"--n-noise", &PlantedCorpusSpec::n_noise},
      {"--n-pairs", &PlantedCorpusSpec::n_pairs},
      {"--hidden-dim", &PlantedCorpusSpec::hidden_dim},
      {"--n-features", &PlantedCorpusSpec::n_features},
  };
  std::map<std::string, CLI::Option*> count_opts;
  for (const auto& [flag, member] : count_members) {
    count_opts[flag] = cmd_gen_app->add_option(flag, gen_spec.*member, "Corpus spec override");
  }
  float gap_value = 0;
  float noise_floor_value = 0;
  float noise_rate_value = 0;
  CLI::Option* gap_opt = cmd_gen_app->add_option("--gap", gap_value, "Relevant activation gap");
  CLI::Option* floor_opt =
      cmd_gen_app->add_option("--noise-floor", noise_floor_value, "Noise activation floor");
  CLI::Option* rate_opt =
      cmd_gen_app->add_option("--noise-rate", noise_rate_value, "Noise participation rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) {
    ov.seed = seed_value;
  }
  if (layer_opt->count() > 0) {
    ov.layer = layer_value;
  }

  try {
    if (cmd_gen_app->parsed()) {
      PlantedCorpusSpec spec;
      if (!spec_file.empty()) {
        spec = spec_from_json(read_json_file(spec_file));
      }
      for (const auto& [flag, member] : count_members) {
        if (count_opts[flag]->count() > 0) {
          spec.*member = gen_spec.*member;
        }
      }
      if (gap_opt->count() > 0) {
        spec.gap = gap_value;
      }
      if (floor_opt->count() > 0) {
        spec.noise_floor = noise_floor_value;
      }
      if (rate_opt->count() > 0) {
        spec.noise_rate = noise_rate_value;
      }
      if (ov.seed) {
        spec.seed = *ov.seed;
      }
      const std::string out_dir = ov.out_dir.empty() ? "corpus" : ov.out_dir;
      print_digests(cmd_gen_synthetic(spec, out_dir));
      return 0;
    }

    const PipelineConfig config = resolve_config(config_path, ov);
    if (cmd_build_app->parsed()) {
      print_digests(cmd_build(config));
    } else if (cmd_refine_app->parsed()) {
      print_digests(cmd_refine(config));
    } else if (cmd_steer_app->parsed()) {
      const std::string dir = vector_dir.empty() ? default_vector_dir(config) : vector_dir;
      std::cout << cmd_steer(config, question, dir, !no_steer) << "\n";
    } else if (cmd_eval_app->parsed()) {
      const std::string dir =
          eval_vector_dir.empty() ? default_vector_dir(config) : eval_vector_dir;
      const EvalReport report = cmd_eval(config, questions_file, dir);
      std::cout << "n_test=" << report.n_test << " n_judged=" << report.n_judged
                << " n_unjudged=" << report.n_unjudged << " success_rate=" << report.success_rate
                << " entropy=" << report.entropy << "\n";
    } else if (cmd_review_app->parsed()) {
      return run_review(config, std::cin, std::cout);
    }
    return 0;
  } catch (const RemoteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InternalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
