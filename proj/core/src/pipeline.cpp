#include "steerkit/pipeline.hpp"

#include <cstdlib>
#include <memory>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"
#include "steerkit/sae.hpp"
#include "steerkit/sha256.hpp"

namespace steerkit {

namespace {

std::string site_to_string(ExtractionSite s) {
  return s == ExtractionSite::kLastToken ? "last_token" : "mean";
}

ExtractionSite site_from_string(const std::string& s) {
  if (s == "last_token") {
    return ExtractionSite::kLastToken;
  }
  if (s == "mean") {
    return ExtractionSite::kMeanOverPositions;
  }
  throw ConfigError("config: unknown extraction site \"" + s + "\" (last_token | mean)");
}

std::string format_to_string(FormatMode m) {
  return m == FormatMode::kAnswerInsideTags ? "inside_tags" : "outside_tags";
}

FormatMode format_from_string(const std::string& s) {
  if (s == "inside_tags") {
    return FormatMode::kAnswerInsideTags;
  }
  if (s == "outside_tags") {
    return FormatMode::kAnswerOutsideTags;
  }
  throw ConfigError("config: unknown format \"" + s + "\" (inside_tags | outside_tags)");
}

std::string positions_to_string(InjectPositions p) {
  return p == InjectPositions::kAllPositions ? "all" : "generated_only";
}

InjectPositions positions_from_string(const std::string& s) {
  if (s == "all") {
    return InjectPositions::kAllPositions;
  }
  if (s == "generated_only") {
    return InjectPositions::kGeneratedOnly;
  }
  throw ConfigError("config: unknown inject_positions \"" + s + "\" (all | generated_only)");
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) {
    throw ConfigError(where + ": expected a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (allowed.find(key) == allowed.end()) {
      throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

std::string env_or(const std::string& explicit_value, const char* var) {
  if (!explicit_value.empty()) {
    return explicit_value;
  }
  const char* v = std::getenv(var);
  return v != nullptr ? std::string(v) : std::string();
}

// Rethrows the in-flight pipeline error with the stage name prepended so
// command failures say where they happened.
[[noreturn]] void rethrow_with_stage(const char* stage_name) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(stage_name) + ": " + e.what());
  } catch (const RemoteError& e) {
    throw RemoteError(std::string(stage_name) + ": " + e.what());
  } catch (const InternalError& e) {
    throw InternalError(std::string(stage_name) + ": " + e.what());
  } catch (const Error& e) {
    throw InputError(std::string(stage_name) + ": " + e.what());
  }
}

template <typename F>
decltype(auto) run_stage(const char* stage_name, F&& f) {
  try {
    return std::forward<F>(f)();
  } catch (const Error&) {
    rethrow_with_stage(stage_name);
  }
}

struct StageInputs {
  SaeParams sae;
  std::vector<FeatureRecord> records;
  std::vector<std::pair<HiddenState, HiddenState>> pairs;
  ArtifactDigests digests;
};

void digest_input(ArtifactDigests& digests, const std::string& path) {
  digests[path] = sha256_file_hex(path);
}

StageInputs load_stage_inputs(const PipelineConfig& config) {
  StageInputs in;
  if (!config.corpus_dir.empty()) {
    PlantedCorpus corpus = load_corpus(config.corpus_dir);
    in.sae = std::move(corpus.sae);
    in.records = std::move(corpus.records);
    in.pairs = std::move(corpus.pairs_activations);
    for (const char* rel : {"sae/manifest.json", "sae/weights.bin", "features.jsonl",
                            "activations.bin"}) {
      digest_input(in.digests, config.corpus_dir + "/" + std::string(rel));
    }
    return in;
  }
  for (const auto& [value, name] :
       {std::pair<const std::string&, const char*>{config.model_dir, "model_dir"},
        {config.sae_dir, "sae_dir"},
        {config.features_file, "features_file"},
        {config.pairs_file, "pairs_file"}}) {
    if (value.empty()) {
      throw ConfigError(std::string("config: ") + name + " is required when corpus_dir is unset");
    }
  }
  const ModelParams model = load_model(config.model_dir);
  in.sae = load_sae(config.sae_dir);
  in.records = load_features(config.features_file);
  const std::vector<ContrastivePair> raw_pairs = load_pairs(config.pairs_file);
  if (raw_pairs.empty()) {
    throw InputError("pairs file is empty: " + config.pairs_file);
  }
  const PromptFormat fmt = default_format(config.format);
  for (const ContrastivePair& p : raw_pairs) {
    in.pairs.push_back(capture_pair_activations(model, p, fmt, config.layer, config.site));
  }
  for (const std::string& path :
       {config.model_dir + "/manifest.json", config.model_dir + "/weights.bin",
        config.sae_dir + "/manifest.json", config.sae_dir + "/weights.bin", config.features_file,
        config.pairs_file}) {
    digest_input(in.digests, path);
  }
  return in;
}

// Adds run_manifest.json (and its digest) to artifacts.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const nlohmann::json& config_echo, const ArtifactDigests& inputs,
                        ArtifactDigests& artifacts,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest = {{"command", command},
                             {"config", config_echo},
                             {"inputs", inputs},
                             {"artifacts", artifacts}};
  for (const auto& [key, value] : extra.items()) {
    manifest[key] = value;
  }
  write_json_file(out_dir + "/run_manifest.json", manifest);
  artifacts["run_manifest.json"] = sha256_file_hex(out_dir + "/run_manifest.json");
}

void add_artifact(ArtifactDigests& artifacts, const std::string& root, const std::string& rel) {
  artifacts[rel] = sha256_file_hex(root + "/" + rel);
}

std::string replace_slot(std::string text, const std::string& slot, const std::string& value) {
  const std::size_t pos = text.find(slot);
  if (pos != std::string::npos) {
    text.replace(pos, slot.size(), value);
  }
  return text;
}

// Models with vocab_size > 256 can emit ids past the byte range; the first
// such id ends the text.
std::string render_generated(const std::vector<std::uint32_t>& ids) {
  std::vector<std::uint32_t> bytes;
  for (std::uint32_t id : ids) {
    if (id > 0xff) {
      break;
    }
    bytes.push_back(id);
  }
  return detokenize_bytes(bytes);
}

std::vector<std::string> read_question_lines(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::string> questions;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (!line.empty()) {
      questions.push_back(line);
    }
  }
  if (questions.empty()) {
    throw InputError("no questions in " + path);
  }
  return questions;
}

}  // namespace

PipelineConfig config_from_json(const nlohmann::json& j) {
  check_keys(j, {"corpus_dir",  "model_dir",       "sae_dir",    "features_file",
                 "pairs_file",  "build_dir",       "layer",      "site",
                 "format",      "inject_positions", "scaling",   "judge",
                 "embedder",    "task_description", "out_dir",   "seed",
                 "max_new_tokens", "entropy_w2",    "entropy_w3"},
             "config");
  PipelineConfig c;
  try {
    read_key(j, "corpus_dir", c.corpus_dir);
    read_key(j, "model_dir", c.model_dir);
    read_key(j, "sae_dir", c.sae_dir);
    read_key(j, "features_file", c.features_file);
    read_key(j, "pairs_file", c.pairs_file);
    read_key(j, "build_dir", c.build_dir);
    read_key(j, "layer", c.layer);
    if (j.contains("site")) {
      c.site = site_from_string(j.at("site").get<std::string>());
    }
    if (j.contains("format")) {
      c.format = format_from_string(j.at("format").get<std::string>());
    }
    if (j.contains("inject_positions")) {
      c.inject_positions = positions_from_string(j.at("inject_positions").get<std::string>());
    }
    if (j.contains("scaling")) {
      const nlohmann::json& s = j.at("scaling");
      check_keys(s, {"alpha1", "alpha2", "alpha3", "k_retrieve"}, "config.scaling");
      read_key(s, "alpha1", c.scaling.alpha1);
      read_key(s, "alpha2", c.scaling.alpha2);
      read_key(s, "alpha3", c.scaling.alpha3);
      read_key(s, "k_retrieve", c.scaling.k_retrieve);
    }
    if (j.contains("judge")) {
      const nlohmann::json& s = j.at("judge");
      check_keys(s, {"kind", "lexicon_path", "endpoint", "api_key", "model", "fixture_path",
                     "max_retries"},
                 "config.judge");
      read_key(s, "kind", c.judge.kind);
      read_key(s, "lexicon_path", c.judge.lexicon_path);
      read_key(s, "endpoint", c.judge.endpoint);
      read_key(s, "api_key", c.judge.api_key);
      read_key(s, "model", c.judge.model);
      read_key(s, "fixture_path", c.judge.fixture_path);
      read_key(s, "max_retries", c.judge.max_retries);
    }
    if (j.contains("embedder")) {
      const nlohmann::json& s = j.at("embedder");
      check_keys(s, {"kind", "dim", "endpoint", "api_key", "model", "max_retries"},
                 "config.embedder");
      read_key(s, "kind", c.embedder.kind);
      read_key(s, "dim", c.embedder.dim);
      read_key(s, "endpoint", c.embedder.endpoint);
      read_key(s, "api_key", c.embedder.api_key);
      read_key(s, "model", c.embedder.model);
      read_key(s, "max_retries", c.embedder.max_retries);
    }
    read_key(j, "task_description", c.task_description);
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "seed", c.seed);
    read_key(j, "max_new_tokens", c.max_new_tokens);
    read_key(j, "entropy_w2", c.entropy_w2);
    read_key(j, "entropy_w3", c.entropy_w3);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.scaling.alpha1 < 0 || c.scaling.alpha2 < 0 || c.scaling.alpha3 < 0) {
    throw ConfigError("config.scaling: alpha values must be nonnegative");
  }
  return c;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  return {{"corpus_dir", c.corpus_dir},
          {"model_dir", c.model_dir},
          {"sae_dir", c.sae_dir},
          {"features_file", c.features_file},
          {"pairs_file", c.pairs_file},
          {"build_dir", c.build_dir},
          {"layer", c.layer},
          {"site", site_to_string(c.site)},
          {"format", format_to_string(c.format)},
          {"inject_positions", positions_to_string(c.inject_positions)},
          {"scaling",
           {{"alpha1", c.scaling.alpha1},
            {"alpha2", c.scaling.alpha2},
            {"alpha3", c.scaling.alpha3},
            {"k_retrieve", c.scaling.k_retrieve}}},
          {"judge",
           {{"kind", c.judge.kind},
            {"lexicon_path", c.judge.lexicon_path},
            {"endpoint", c.judge.endpoint},
            {"api_key", c.judge.api_key},
            {"model", c.judge.model},
            {"fixture_path", c.judge.fixture_path},
            {"max_retries", c.judge.max_retries}}},
          {"embedder",
           {{"kind", c.embedder.kind},
            {"dim", c.embedder.dim},
            {"endpoint", c.embedder.endpoint},
            {"api_key", c.embedder.api_key},
            {"model", c.embedder.model},
            {"max_retries", c.embedder.max_retries}}},
          {"task_description", c.task_description},
          {"out_dir", c.out_dir},
          {"seed", c.seed},
          {"max_new_tokens", c.max_new_tokens},
          {"entropy_w2", c.entropy_w2},
          {"entropy_w3", c.entropy_w3}};
}

nlohmann::json config_echo_json(const PipelineConfig& config) {
  nlohmann::json j = config_to_json(config);
  for (const char* section : {"judge", "embedder"}) {
    if (!j.at(section).at("api_key").get<std::string>().empty()) {
      j[section]["api_key"] = "<redacted>";
    }
  }
  return j;
}

PipelineConfig load_config(const std::string& path) {
  return config_from_json(read_json_file(path));
}

std::unique_ptr<Judge> make_judge(const JudgeSpec& spec) {
  if (spec.kind == "keyword") {
    if (spec.lexicon_path.empty()) {
      throw ConfigError("judge: keyword kind requires lexicon_path");
    }
    return std::make_unique<KeywordOracleJudge>(load_lexicon(spec.lexicon_path));
  }
  if (spec.kind == "http") {
    const std::string endpoint = env_or(spec.endpoint, "STEERKIT_JUDGE_URL");
    if (endpoint.empty()) {
      throw ConfigError("judge: endpoint not set (config judge.endpoint or STEERKIT_JUDGE_URL)");
    }
    return std::make_unique<HttpJudge>(endpoint, env_or(spec.api_key, "STEERKIT_JUDGE_KEY"),
                                       spec.model, spec.max_retries);
  }
  if (spec.kind == "replay") {
    if (spec.fixture_path.empty()) {
      throw ConfigError("judge: replay kind requires fixture_path");
    }
    return std::make_unique<ReplayJudge>(spec.fixture_path, spec.model);
  }
  throw ConfigError("judge: unknown kind \"" + spec.kind + "\" (keyword | http | replay)");
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec) {
  if (spec.kind == "hash") {
    return std::make_unique<HashEmbedder>(spec.dim);
  }
  if (spec.kind == "http") {
    const std::string endpoint = env_or(spec.endpoint, "STEERKIT_EMBED_URL");
    if (endpoint.empty()) {
      throw ConfigError(
          "embedder: endpoint not set (config embedder.endpoint or STEERKIT_EMBED_URL)");
    }
    return std::make_unique<HttpEmbedder>(endpoint, env_or(spec.api_key, "STEERKIT_EMBED_KEY"),
                                          spec.model, spec.dim, spec.max_retries);
  }
  throw ConfigError("embedder: unknown kind \"" + spec.kind + "\" (hash | http)");
}

std::string format_question(const std::string& question, const PromptFormat& fmt) {
  if (question.empty()) {
    throw InputError("empty question");
  }
  validate_format(fmt);
  const std::size_t cut = fmt.tmpl.find("{answer}");
  std::string prefix = fmt.tmpl.substr(0, cut);
  prefix = replace_slot(std::move(prefix), "{system}", fmt.system_text);
  prefix = replace_slot(std::move(prefix), "{question}", question);
  return prefix;
}

ArtifactDigests cmd_build(const PipelineConfig& config) {
  ensure_dir(config.out_dir);
  const StageInputs in = run_stage("build/inputs", [&] { return load_stage_inputs(config); });
  const SteeringVector caa = run_stage("build/caa", [&] { return build_caa_vector(in.pairs); });
  const ActivationDiff diff =
      run_stage("build/activation-diff", [&] { return compute_activation_diff(in.sae, in.pairs); });
  const FeatureSet seeds = seed_set(diff);

  ArtifactDigests artifacts;
  run_stage("build/artifacts", [&] {
    save_vector(caa, config.out_dir + "/caa");
    write_f32le(config.out_dir + "/activation_diff.bin", diff.values);
    write_json_file(config.out_dir + "/activation_diff.json",
                    {{"count", diff.values.size()},
                     {"dtype", "f32le"},
                     {"file", "activation_diff.bin"}});
    write_json_file(config.out_dir + "/seed_set.json",
                    {{"count", seeds.size()}, {"indices", seeds}});
    for (const char* rel : {"caa/vector.json", "caa/vector.bin", "activation_diff.json",
                            "activation_diff.bin", "seed_set.json"}) {
      add_artifact(artifacts, config.out_dir, rel);
    }
  });
  write_run_manifest(config.out_dir, "build", config_echo_json(config), in.digests, artifacts);
  return artifacts;
}

ArtifactDigests cmd_refine(const PipelineConfig& config) {
  ensure_dir(config.out_dir);
  const std::string build_dir = config.build_dir.empty() ? config.out_dir : config.build_dir;
  const StageInputs in = run_stage("refine/inputs", [&] { return load_stage_inputs(config); });

  ArtifactDigests inputs = in.digests;
  const std::string seed_path = build_dir + "/seed_set.json";
  FeatureSet seeds;
  const SteeringVector caa = run_stage("refine/inputs", [&] {
    if (!file_exists(seed_path)) {
      throw InputError("missing " + seed_path + " (run build first)");
    }
    const nlohmann::json seed_json = read_json_file(seed_path);
    try {
      for (const auto& idx : seed_json.at("indices")) {
        seeds.insert(idx.get<FeatureIndex>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(seed_path + ": " + e.what());
    }
    digest_input(inputs, seed_path);
    digest_input(inputs, build_dir + "/caa/vector.json");
    digest_input(inputs, build_dir + "/caa/vector.bin");
    return load_vector(build_dir + "/caa");
  });

  const std::unique_ptr<Judge> judge = make_judge(config.judge);
  const std::unique_ptr<Embedder> embedder = make_embedder(config.embedder);

  std::map<FeatureIndex, const FeatureRecord*> by_index;
  for (const FeatureRecord& r : in.records) {
    by_index[r.index] = &r;
  }

  std::vector<FeatureRecord> seed_records;
  for (FeatureIndex c : seeds) {
    const auto it = by_index.find(c);
    if (it == by_index.end()) {
      throw InputError("refine/judge: seed feature " + std::to_string(c) +
                       " has no explanation record");
    }
    seed_records.push_back(*it->second);
  }

  // The verdict log is rewritten from scratch; on a judge failure the
  // already-settled prefix remains on disk.
  const std::string verdict_log = config.out_dir + "/verdicts.jsonl";
  write_text_file(verdict_log, "");
  JudgeOptions jopt;
  jopt.max_in_flight = config.judge.kind == "http" ? 4 : 1;
  jopt.on_verdict = [&verdict_log](const JudgeVerdict& v) { append_verdict_log(verdict_log, v); };

  const std::vector<JudgeVerdict> verdicts = run_stage("refine/judge", [&] {
    return judge_features(seed_records, config.task_description, *judge, jopt);
  });
  FeaturePartition partition =
      run_stage("refine/partition", [&] { return partition_seed(seeds, verdicts); });

  std::vector<FeatureActivations> positives;
  positives.reserve(in.pairs.size());
  for (const auto& pr : in.pairs) {
    positives.push_back(encode(in.sae, pr.first.values));
  }
  const SteeringVector v_noise = run_stage("refine/noise-vector", [&] {
    return build_noise_vector(in.sae, partition.noise, positives);
  });

  const EmbeddingStore store = run_stage("refine/embeddings", [&] {
    return embed_explanations(in.records, *embedder);
  });

  // Candidate universe: every explained feature outside the seed set.
  FeatureSet candidates;
  for (const FeatureRecord& r : in.records) {
    if (seeds.find(r.index) == seeds.end()) {
      candidates.insert(r.index);
    }
  }
  // Reference features without a stored embedding are skipped, not fatal;
  // the count lands in scores.json.
  FeatureSet relevant_ref;
  FeatureSet noise_ref;
  std::uint32_t skipped_references = 0;
  for (const auto& [set, ref] : {std::pair<const FeatureSet&, FeatureSet*>{partition.relevant,
                                                                           &relevant_ref},
                                 {partition.noise, &noise_ref}}) {
    for (FeatureIndex c : set) {
      if (store.vectors.find(c) != store.vectors.end()) {
        ref->insert(c);
      } else {
        ++skipped_references;
      }
    }
  }

  std::vector<UsefulnessScore> scores;
  std::vector<FeatureIndex> selected;
  if (config.scaling.k_retrieve > 0) {
    scores = run_stage("refine/retrieval", [&] {
      return usefulness_scores(store, relevant_ref, noise_ref, candidates);
    });
    selected = select_top_k(scores, config.scaling.k_retrieve);
  }

  std::vector<FeatureRecord> candidate_records;
  candidate_records.reserve(selected.size());
  for (FeatureIndex c : selected) {
    candidate_records.push_back(*by_index.at(c));
  }
  partition.useful = run_stage("refine/verify", [&] {
    return verify_candidates(candidate_records, config.task_description, *judge, jopt);
  });
  validate_partition(partition);

  const SteeringVector v_useful = run_stage("refine/useful-vector", [&] {
    return build_useful_vector(in.sae, partition.useful);
  });
  const SteeringVector refined = run_stage("refine/compose", [&] {
    return compose_refined(caa, v_noise, v_useful, config.scaling);
  });

  ArtifactDigests artifacts;
  run_stage("refine/artifacts", [&] {
    save_vector(v_noise, config.out_dir + "/noise");
    save_vector(v_useful, config.out_dir + "/useful");
    save_vector(refined, config.out_dir + "/refined");
    save_embeddings(store, in.sae.n_features, config.out_dir + "/embeddings");
    write_json_file(config.out_dir + "/partition.json", {{"seed", partition.seed},
                                                         {"noise", partition.noise},
                                                         {"relevant", partition.relevant},
                                                         {"useful", partition.useful}});
    nlohmann::json score_rows = nlohmann::json::array();
    for (const UsefulnessScore& s : scores) {
      score_rows.push_back({{"index", s.index}, {"score", s.score}});
    }
    write_json_file(config.out_dir + "/scores.json",
                    {{"k_retrieve", config.scaling.k_retrieve},
                     {"selected", selected},
                     {"skipped_references", skipped_references},
                     {"scores", score_rows}});
    for (const char* rel :
         {"verdicts.jsonl", "partition.json", "scores.json", "noise/vector.json",
          "noise/vector.bin", "useful/vector.json", "useful/vector.bin", "refined/vector.json",
          "refined/vector.bin", "embeddings/embeddings.json", "embeddings/embeddings.bin",
          "embeddings/presence.bin"}) {
      add_artifact(artifacts, config.out_dir, rel);
    }
  });
  write_run_manifest(config.out_dir, "refine", config_echo_json(config), inputs, artifacts);
  return artifacts;
}

std::string cmd_steer(const PipelineConfig& config, const std::string& question,
                      const std::string& vector_dir, bool steer) {
  if (config.model_dir.empty()) {
    throw ConfigError("steer: model_dir is required");
  }
  ArtifactDigests inputs;
  const ModelParams model = run_stage("steer/inputs", [&] {
    digest_input(inputs, config.model_dir + "/manifest.json");
    digest_input(inputs, config.model_dir + "/weights.bin");
    return load_model(config.model_dir);
  });
  std::optional<InjectionConfig> injection;
  if (steer) {
    const SteeringVector v = run_stage("steer/inputs", [&] {
      digest_input(inputs, vector_dir + "/vector.json");
      digest_input(inputs, vector_dir + "/vector.bin");
      return load_vector(vector_dir);
    });
    if (v.dim() != model.hidden_dim) {
      throw ConfigError("steer: vector dim " + std::to_string(v.dim()) + " != model hidden_dim " +
                        std::to_string(model.hidden_dim));
    }
    injection = InjectionConfig{v, config.layer, config.inject_positions};
  }
  const PromptFormat fmt = default_format(config.format);
  const std::vector<std::uint32_t> prompt_ids = tokenize_bytes(format_question(question, fmt));
  const std::vector<std::uint32_t> out_ids = run_stage("steer/generate", [&] {
    return generate_steered(model, prompt_ids, injection, config.max_new_tokens);
  });
  const std::string text = render_generated(out_ids);

  ensure_dir(config.out_dir);
  write_text_file(config.out_dir + "/generation.txt", text);
  ArtifactDigests artifacts;
  add_artifact(artifacts, config.out_dir, "generation.txt");
  write_run_manifest(config.out_dir, "steer", config_echo_json(config), inputs, artifacts,
                     {{"question", question},
                      {"steer", steer},
                      {"vector_dir", steer ? vector_dir : std::string()}});
  return text;
}

EvalReport cmd_eval(const PipelineConfig& config, const std::string& questions_file,
                    const std::string& vector_dir) {
  if (config.model_dir.empty()) {
    throw ConfigError("eval: model_dir is required");
  }
  ArtifactDigests inputs;
  ModelParams model;
  SteeringVector v;
  std::vector<std::string> questions;
  run_stage("eval/inputs", [&] {
    model = load_model(config.model_dir);
    v = load_vector(vector_dir);
    if (v.dim() != model.hidden_dim) {
      throw ConfigError("vector dim " + std::to_string(v.dim()) + " != model hidden_dim " +
                        std::to_string(model.hidden_dim));
    }
    questions = read_question_lines(questions_file);
    digest_input(inputs, config.model_dir + "/manifest.json");
    digest_input(inputs, config.model_dir + "/weights.bin");
    digest_input(inputs, vector_dir + "/vector.json");
    digest_input(inputs, vector_dir + "/vector.bin");
    digest_input(inputs, questions_file);
  });

  const std::optional<InjectionConfig> injection =
      InjectionConfig{v, config.layer, config.inject_positions};
  const PromptFormat fmt = default_format(config.format);
  std::vector<std::string> outputs;
  outputs.reserve(questions.size());
  run_stage("eval/generate", [&] {
    for (const std::string& q : questions) {
      const std::vector<std::uint32_t> ids = tokenize_bytes(format_question(q, fmt));
      outputs.push_back(render_generated(generate_steered(model, ids, injection,
                                                          config.max_new_tokens)));
    }
  });

  const std::unique_ptr<Judge> judge = make_judge(config.judge);
  const EvalReport report = run_stage("eval/judge", [&] {
    return evaluate_generations(outputs, *judge, config.task_description, config.entropy_w2,
                                config.entropy_w3);
  });

  ensure_dir(config.out_dir);
  ArtifactDigests artifacts;
  run_stage("eval/artifacts", [&] {
    write_json_file(config.out_dir + "/generations.json", outputs);
    nlohmann::json items = nlohmann::json::array();
    for (const ItemVerdict& item : report.items) {
      items.push_back({{"index", item.index},
                       {"judged", item.judged},
                       {"success", item.success},
                       {"rationale", item.rationale}});
    }
    write_json_file(config.out_dir + "/report.json", {{"n_test", report.n_test},
                                                      {"n_judged", report.n_judged},
                                                      {"n_unjudged", report.n_unjudged},
                                                      {"n_success", report.n_success},
                                                      {"success_rate", report.success_rate},
                                                      {"entropy", report.entropy},
                                                      {"w2", report.w2},
                                                      {"w3", report.w3},
                                                      {"items", items}});
    add_artifact(artifacts, config.out_dir, "generations.json");
    add_artifact(artifacts, config.out_dir, "report.json");
  });
  write_run_manifest(config.out_dir, "eval", config_echo_json(config), inputs, artifacts,
                     {{"questions_file", questions_file}, {"vector_dir", vector_dir}});
  return report;
}

ArtifactDigests cmd_gen_synthetic(const PlantedCorpusSpec& spec, const std::string& out_dir) {
  const PlantedCorpus corpus =
      run_stage("gen-synthetic/generate", [&] { return generate_planted_corpus(spec); });
  ArtifactDigests artifacts;
  run_stage("gen-synthetic/artifacts", [&] {
    save_corpus(corpus, spec, out_dir);
    for (const char* rel : {"sae/manifest.json", "sae/weights.bin", "features.jsonl",
                            "activations.json", "activations.bin", "truth.json", "lexicon.txt",
                            "corpus.json"}) {
      add_artifact(artifacts, out_dir, rel);
    }
  });
  write_run_manifest(out_dir, "gen-synthetic", spec_to_json(spec), ArtifactDigests{}, artifacts);
  return artifacts;
}

}  // namespace steerkit
