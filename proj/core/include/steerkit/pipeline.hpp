#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "steerkit/dataset.hpp"
#include "steerkit/model.hpp"
#include "steerkit/relevance.hpp"
#include "steerkit/retrieval.hpp"
#include "steerkit/steering.hpp"

namespace steerkit {

struct JudgeSpec {
  std::string kind = "keyword";  // keyword | http | replay
  std::string lexicon_path;
  std::string endpoint;  // falls back to STEERKIT_JUDGE_URL
  std::string api_key;   // falls back to STEERKIT_JUDGE_KEY
  std::string model = "judge-default";
  std::string fixture_path;
  int max_retries = 3;
};

struct EmbedderSpec {
  std::string kind = "hash";  // hash | http
  std::uint32_t dim = 256;
  std::string endpoint;  // falls back to STEERKIT_EMBED_URL
  std::string api_key;   // falls back to STEERKIT_EMBED_KEY
  std::string model = "embedder-default";
  int max_retries = 3;
};

// Full pipeline configuration. Inputs come either from a generated corpus
// directory (sae/ + features.jsonl + activations dump) or from a model
// directory plus a pairs file; corpus_dir wins when both are set.
struct PipelineConfig {
  std::string corpus_dir;
  std::string model_dir;
  std::string sae_dir;
  std::string features_file;
  std::string pairs_file;
  // Where refine/steer/eval find earlier-stage artifacts; defaults to
  // out_dir when empty.
  std::string build_dir;
  std::uint32_t layer = 0;
  ExtractionSite site = ExtractionSite::kLastToken;
  FormatMode format = FormatMode::kAnswerInsideTags;
  InjectPositions inject_positions = InjectPositions::kAllPositions;
  ScalingConfig scaling;
  JudgeSpec judge;
  EmbedderSpec embedder;
  std::string task_description;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::uint32_t max_new_tokens = 32;
  double entropy_w2 = 0.5;
  double entropy_w3 = 0.5;
};

// JSON round trip for configs and run-manifest echoes. Unknown keys are a
// ConfigError so typos do not silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& config);
PipelineConfig load_config(const std::string& path);

// Config echo for run manifests: config_to_json with nonempty api_key
// fields masked. Only the echo is masked; the config itself is untouched.
nlohmann::json config_echo_json(const PipelineConfig& config);

std::unique_ptr<Judge> make_judge(const JudgeSpec& spec);
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec);

// Relative artifact path -> sha256 of the written bytes.
using ArtifactDigests = std::map<std::string, std::string>;

// Stage 1: capture pair activations, build the mean-difference vector, the
// per-feature activation diff, and the seed set. Artifacts under out_dir:
// caa/ (vector artifact), activation_diff.json/.bin, seed_set.json,
// run_manifest.json.
ArtifactDigests cmd_build(const PipelineConfig& config);

// Stage 2: judge the seed features, split them, build the noise vector,
// embed explanations, score and retrieve candidates, verify them, build the
// useful vector, and compose the refined vector. Artifacts: verdicts.jsonl,
// partition.json, noise/ useful/ refined/ vector artifacts, embeddings/,
// scores.json, run_manifest.json.
ArtifactDigests cmd_refine(const PipelineConfig& config);

// Greedy continuation of one formatted question, steered by the vector
// artifact at vector_dir unless steer is false. Writes generation.txt and a
// manifest under out_dir; returns the continuation text.
std::string cmd_steer(const PipelineConfig& config, const std::string& question,
                      const std::string& vector_dir, bool steer = true);

// Steered generation per question (plain text file, one per line), then
// judged evaluation. Writes report.json; returns the report.
EvalReport cmd_eval(const PipelineConfig& config, const std::string& questions_file,
                    const std::string& vector_dir);

// Thin wrapper over generate_planted_corpus + save_corpus.
ArtifactDigests cmd_gen_synthetic(const PlantedCorpusSpec& spec, const std::string& out_dir);

// Generation prompt: template prefix up to the answer slot with system text
// and question filled, so the model continues where the answer belongs.
std::string format_question(const std::string& question, const PromptFormat& fmt);

}  // namespace steerkit
