#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"
#include "steerkit/pipeline.hpp"
#include "steerkit/sha256.hpp"
#include "support.hpp"

using namespace steerkit;
using testsupport::TempDir;

namespace {

PlantedCorpusSpec small_spec(std::uint64_t seed = 0) {
  PlantedCorpusSpec spec;
  spec.n_relevant = 4;
  spec.n_missing = 4;
  spec.n_noise = 24;
  spec.n_pairs = 16;
  spec.hidden_dim = 32;
  spec.n_features = 128;
  spec.seed = seed;
  return spec;
}

// Corpus-backed config with the oracle judge and hash embedder; everything
// offline and deterministic.
PipelineConfig corpus_config(const std::string& corpus_dir, const std::string& out_dir) {
  PipelineConfig config;
  config.corpus_dir = corpus_dir;
  config.out_dir = out_dir;
  config.task_description = "planted task behavior";
  config.judge.kind = "keyword";
  config.judge.lexicon_path = corpus_dir + "/lexicon.txt";
  config.embedder.kind = "hash";
  config.embedder.dim = 128;
  config.scaling.alpha1 = 1.0f;
  config.scaling.alpha2 = 1.0f;
  config.scaling.alpha3 = 1.0f;
  config.scaling.k_retrieve = 8;
  return config;
}

}  // namespace

TEST_CASE("config json round trip preserves every field") {
  PipelineConfig config;
  config.corpus_dir = "corpus";
  config.model_dir = "model";
  config.sae_dir = "sae";
  config.features_file = "features.jsonl";
  config.pairs_file = "pairs.jsonl";
  config.build_dir = "build_artifacts";
  config.layer = 3;
  config.site = ExtractionSite::kMeanOverPositions;
  config.format = FormatMode::kAnswerOutsideTags;
  config.inject_positions = InjectPositions::kGeneratedOnly;
  config.scaling.alpha1 = 5.0f;
  config.scaling.alpha2 = 10.0f;
  config.scaling.alpha3 = 10.0f;
  config.scaling.k_retrieve = 20;
  config.judge.kind = "http";
  config.judge.endpoint = "http://judge.internal/v1";
  config.judge.api_key = "k";
  config.judge.model = "judge-x";
  config.judge.max_retries = 5;
  config.embedder.kind = "http";
  config.embedder.dim = 64;
  config.embedder.endpoint = "http://embed.internal/v1";
  config.embedder.model = "embed-x";
  config.task_description = "be sycophantic";
  config.out_dir = "runs/1";
  config.seed = 7;
  config.max_new_tokens = 48;
  config.entropy_w2 = 0.25;
  config.entropy_w3 = 0.75;

  const PipelineConfig back = config_from_json(config_to_json(config));
  CHECK(back.corpus_dir == config.corpus_dir);
  CHECK(back.model_dir == config.model_dir);
  CHECK(back.sae_dir == config.sae_dir);
  CHECK(back.features_file == config.features_file);
  CHECK(back.pairs_file == config.pairs_file);
  CHECK(back.build_dir == config.build_dir);
  CHECK(back.layer == config.layer);
  CHECK(back.site == config.site);
  CHECK(back.format == config.format);
  CHECK(back.inject_positions == config.inject_positions);
  CHECK(back.scaling.alpha1 == config.scaling.alpha1);
  CHECK(back.scaling.alpha2 == config.scaling.alpha2);
  CHECK(back.scaling.alpha3 == config.scaling.alpha3);
  CHECK(back.scaling.k_retrieve == config.scaling.k_retrieve);
  CHECK(back.judge.kind == config.judge.kind);
  CHECK(back.judge.endpoint == config.judge.endpoint);
  CHECK(back.judge.api_key == config.judge.api_key);
  CHECK(back.judge.model == config.judge.model);
  CHECK(back.judge.max_retries == config.judge.max_retries);
  CHECK(back.embedder.kind == config.embedder.kind);
  CHECK(back.embedder.dim == config.embedder.dim);
  CHECK(back.embedder.endpoint == config.embedder.endpoint);
  CHECK(back.embedder.model == config.embedder.model);
  CHECK(back.task_description == config.task_description);
  CHECK(back.out_dir == config.out_dir);
  CHECK(back.seed == config.seed);
  CHECK(back.max_new_tokens == config.max_new_tokens);
  CHECK(back.entropy_w2 == config.entropy_w2);
  CHECK(back.entropy_w3 == config.entropy_w3);
}

TEST_CASE("config rejects unknown keys at both levels") {
  nlohmann::json j = config_to_json(PipelineConfig{});
  j["typo_field"] = 1;
  CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("typo_field"), ConfigError);

  nlohmann::json j2 = config_to_json(PipelineConfig{});
  j2["judge"]["modle"] = "oops";
  CHECK_THROWS_WITH_AS(config_from_json(j2), doctest::Contains("modle"), ConfigError);

  nlohmann::json j3 = config_to_json(PipelineConfig{});
  j3["scaling"]["alpha4"] = 2.0;
  CHECK_THROWS_AS(config_from_json(j3), ConfigError);
}

TEST_CASE("config rejects bad enum strings and negative alphas") {
  nlohmann::json j = config_to_json(PipelineConfig{});
  j["site"] = "first_token";
  CHECK_THROWS_AS(config_from_json(j), ConfigError);

  nlohmann::json j2 = config_to_json(PipelineConfig{});
  j2["scaling"]["alpha2"] = -3.0;
  CHECK_THROWS_AS(config_from_json(j2), ConfigError);

  nlohmann::json j3 = config_to_json(PipelineConfig{});
  j3["inject_positions"] = "everywhere";
  CHECK_THROWS_AS(config_from_json(j3), ConfigError);
}

TEST_CASE("factories reject incomplete specs") {
  JudgeSpec keyword;
  keyword.kind = "keyword";  // lexicon_path missing
  CHECK_THROWS_AS(make_judge(keyword), ConfigError);

  JudgeSpec unknown;
  unknown.kind = "psychic";
  CHECK_THROWS_AS(make_judge(unknown), ConfigError);

  JudgeSpec replay;
  replay.kind = "replay";  // fixture_path missing
  CHECK_THROWS_AS(make_judge(replay), ConfigError);

  EmbedderSpec bad;
  bad.kind = "quantum";
  CHECK_THROWS_AS(make_embedder(bad), ConfigError);
}

TEST_CASE("format_question is the prompt prefix up to the answer slot") {
  const PromptFormat inside = default_format(FormatMode::kAnswerInsideTags);
  CHECK(format_question("Is it?", inside) ==
        "[INST] Answer the question.\nQuestion: Is it?\nAnswer: ");
  const PromptFormat outside = default_format(FormatMode::kAnswerOutsideTags);
  CHECK(format_question("Is it?", outside) ==
        "[INST] Answer the question.\nQuestion: Is it?\nAnswer: [/INST] ");
  CHECK_THROWS_AS(format_question("", inside), InputError);
}

TEST_CASE("build then refine recovers the planted structure") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(3), corpus_dir);
  const PlantedCorpus corpus = load_corpus(corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  const ArtifactDigests build_digests = cmd_build(config);
  CHECK(build_digests.count("caa/vector.json") == 1);
  CHECK(build_digests.count("seed_set.json") == 1);
  CHECK(build_digests.count("run_manifest.json") == 1);

  const nlohmann::json seed_json = read_json_file(std::string(work / "out") + "/seed_set.json");
  const auto seed = seed_json.at("indices").get<std::vector<FeatureIndex>>();
  FeatureSet want;
  for (FeatureIndex c : corpus.truth.relevant) {
    want.insert(c);
  }
  for (FeatureIndex c : corpus.truth.noise) {
    want.insert(c);
  }
  CHECK(FeatureSet(seed.begin(), seed.end()) == want);

  const ArtifactDigests refine_digests = cmd_refine(config);
  CHECK(refine_digests.count("refined/vector.json") == 1);
  CHECK(refine_digests.count("partition.json") == 1);
  CHECK(refine_digests.count("scores.json") == 1);
  CHECK(refine_digests.count("verdicts.jsonl") == 1);

  const nlohmann::json partition = read_json_file(std::string(work / "out") + "/partition.json");
  const auto relevant = partition.at("relevant").get<std::vector<FeatureIndex>>();
  const auto useful = partition.at("useful").get<std::vector<FeatureIndex>>();
  CHECK(FeatureSet(relevant.begin(), relevant.end()) == corpus.truth.relevant);
  // k_retrieve=8 with 4 planted missing features: verification keeps the
  // missing ones and drops the lexicon-mismatched rest.
  CHECK(FeatureSet(useful.begin(), useful.end()) == corpus.truth.missing);

  // The refined vector moves toward the truth direction relative to raw CAA.
  const SteeringVector caa = load_vector(std::string(work / "out") + "/caa");
  const SteeringVector refined = load_vector(std::string(work / "out") + "/refined");
  const double cos_before = testsupport::cosine(caa.values, corpus.truth.direction);
  const double cos_after = testsupport::cosine(refined.values, corpus.truth.direction);
  CHECK(cos_after > cos_before);
}

TEST_CASE("pipeline reruns are byte-identical") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(4), corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out_a");
  const ArtifactDigests build_a = cmd_build(config);
  const ArtifactDigests refine_a = cmd_refine(config);

  // Rerunning with the identical config reproduces every byte, manifest
  // included.
  const ArtifactDigests build_a2 = cmd_build(config);
  const ArtifactDigests refine_a2 = cmd_refine(config);
  CHECK(build_a == build_a2);
  CHECK(refine_a == refine_a2);

  // A different output directory changes only the manifest, which echoes the
  // configured paths; artifact content is location-independent.
  config.out_dir = work / "out_b";
  ArtifactDigests build_b = cmd_build(config);
  ArtifactDigests refine_b = cmd_refine(config);
  ArtifactDigests build_a_content = build_a;
  ArtifactDigests refine_a_content = refine_a;
  for (ArtifactDigests* m : {&build_b, &refine_b, &build_a_content, &refine_a_content}) {
    m->erase("run_manifest.json");
  }
  CHECK(build_a_content == build_b);
  CHECK(refine_a_content == refine_b);
}

TEST_CASE("k_retrieve zero skips retrieval entirely") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(5), corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  config.scaling.k_retrieve = 0;
  cmd_build(config);
  cmd_refine(config);

  const nlohmann::json partition = read_json_file(std::string(work / "out") + "/partition.json");
  CHECK(partition.at("useful").empty());
  const nlohmann::json scores = read_json_file(std::string(work / "out") + "/scores.json");
  CHECK(scores.at("selected").empty());

  // refined = alpha1*caa - alpha2*noise exactly when useful is empty.
  const SteeringVector caa = load_vector(std::string(work / "out") + "/caa");
  const SteeringVector noise = load_vector(std::string(work / "out") + "/noise");
  const SteeringVector refined = load_vector(std::string(work / "out") + "/refined");
  for (std::size_t i = 0; i < refined.dim(); ++i) {
    CHECK(refined.values[i] ==
          doctest::Approx(caa.values[i] - noise.values[i]).epsilon(1e-6));
  }
}

TEST_CASE("zero alpha2 and alpha3 reduce refined to scaled caa") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(6), corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  config.scaling.alpha1 = 2.0f;
  config.scaling.alpha2 = 0.0f;
  config.scaling.alpha3 = 0.0f;
  cmd_build(config);
  cmd_refine(config);

  const SteeringVector caa = load_vector(std::string(work / "out") + "/caa");
  const SteeringVector refined = load_vector(std::string(work / "out") + "/refined");
  REQUIRE(refined.dim() == caa.dim());
  for (std::size_t i = 0; i < refined.dim(); ++i) {
    CHECK(refined.values[i] == 2.0f * caa.values[i]);
  }
}

TEST_CASE("refine without build explains what to run") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(7), corpus_dir);
  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  CHECK_THROWS_WITH_AS(cmd_refine(config), doctest::Contains("run build first"), InputError);
}

TEST_CASE("build demands a complete input specification") {
  PipelineConfig config;
  config.out_dir = "unused";
  CHECK_THROWS_AS(cmd_build(config), ConfigError);
}

TEST_CASE("run manifests echo config and redact secrets") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  cmd_gen_synthetic(small_spec(8), corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  config.judge.api_key = "super-secret";
  cmd_build(config);

  const std::string manifest_path = std::string(work / "out") + "/run_manifest.json";
  const nlohmann::json manifest = read_json_file(manifest_path);
  CHECK(manifest.at("command") == "build");
  CHECK(manifest.at("config").at("judge").at("api_key") == "<redacted>");
  CHECK(manifest.at("inputs").size() > 0);
  CHECK(manifest.at("artifacts").count("seed_set.json") == 1);

  std::ifstream in(manifest_path);
  const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(raw.find("super-secret") == std::string::npos);
}

TEST_CASE("build leaves its inputs untouched") {
  TempDir work("pipe");
  const std::string corpus_dir = work / "corpus";
  const ArtifactDigests before = cmd_gen_synthetic(small_spec(9), corpus_dir);

  PipelineConfig config = corpus_config(corpus_dir, work / "out");
  cmd_build(config);
  cmd_refine(config);

  for (const auto& [rel, digest] : before) {
    CHECK(sha256_file_hex(std::string(corpus_dir) + "/" + rel) == digest);
  }
}

TEST_CASE("steer with a zero vector equals the unsteered continuation") {
  TempDir work("steer");
  const ModelParams model = random_model(260, 16, 2, 2, 96, 21);
  const std::string model_dir = work / "model";
  save_model(model, model_dir);

  SteeringVector zero;
  zero.values.assign(16, 0.0f);
  zero.kind = SteeringVector::Kind::kRefined;
  const std::string vec_dir = work / "vec";
  save_vector(zero, vec_dir);

  PipelineConfig config;
  config.model_dir = model_dir;
  config.out_dir = work / "out";
  config.layer = 1;
  config.max_new_tokens = 12;
  config.task_description = "anything";

  const std::string steered = cmd_steer(config, "What is up?", vec_dir, true);
  config.out_dir = work / "out2";
  const std::string plain = cmd_steer(config, "What is up?", vec_dir, false);
  CHECK(steered == plain);

  // Determinism across repeat runs.
  config.out_dir = work / "out3";
  CHECK(cmd_steer(config, "What is up?", vec_dir, false) == plain);

  // generation.txt holds exactly the returned continuation.
  std::ifstream in(std::string(work / "out3") + "/generation.txt");
  const std::string file_text((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
  CHECK(file_text == plain);
}

TEST_CASE("generated ids past the byte range end the rendered text") {
  TempDir work("steer");
  // Rig the head so greedy always picks id 258: the continuation renders
  // as empty text instead of failing detokenization.
  ModelParams model = random_model(260, 16, 2, 2, 96, 23);
  std::fill(model.lm_head.begin(), model.lm_head.end(), 0.0f);
  std::fill(model.lm_head_b.begin(), model.lm_head_b.end(), 0.0f);
  model.lm_head_b[258] = 1.0f;
  const std::string model_dir = work / "model";
  save_model(model, model_dir);

  SteeringVector zero;
  zero.values.assign(16, 0.0f);
  const std::string vec_dir = work / "vec";
  save_vector(zero, vec_dir);

  PipelineConfig config;
  config.model_dir = model_dir;
  config.out_dir = work / "out";
  config.layer = 0;
  config.max_new_tokens = 6;

  CHECK(cmd_steer(config, "hello", vec_dir, true) == "");
  std::ifstream in(std::string(work / "out") + "/generation.txt");
  const std::string file_text((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
  CHECK(file_text == "");
}

TEST_CASE("steer rejects a vector that does not fit the model") {
  TempDir work("steer");
  const ModelParams model = random_model(260, 16, 2, 2, 96, 22);
  const std::string model_dir = work / "model";
  save_model(model, model_dir);

  SteeringVector wrong;
  wrong.values.assign(8, 0.1f);
  const std::string vec_dir = work / "vec";
  save_vector(wrong, vec_dir);

  PipelineConfig config;
  config.model_dir = model_dir;
  config.out_dir = work / "out";
  CHECK_THROWS_AS(cmd_steer(config, "hi", vec_dir, true), ConfigError);

  PipelineConfig no_model;
  no_model.out_dir = work / "out2";
  CHECK_THROWS_AS(cmd_steer(no_model, "hi", vec_dir, true), ConfigError);
}

TEST_CASE("eval reports per-question verdicts and entropy") {
  TempDir work("eval");
  const ModelParams model = random_model(260, 16, 2, 2, 128, 23);
  const std::string model_dir = work / "model";
  save_model(model, model_dir);

  SteeringVector vec;
  vec.values.assign(16, 0.0f);
  const std::string vec_dir = work / "vec";
  save_vector(vec, vec_dir);

  const std::string questions = work / "questions.txt";
  {
    std::ofstream out(questions);
    out << "Is water wet?\n";
    out << "\n";  // blank lines are skipped
    out << "Why is the sky blue?\r\n";  // CRLF is trimmed
  }

  PipelineConfig config;
  config.model_dir = model_dir;
  config.out_dir = work / "out";
  config.layer = 0;
  config.max_new_tokens = 10;
  config.task_description = "contains the letter e";
  // The keyword oracle needs a lexicon; build one that matches some bytes.
  const std::string lexicon = work / "lex.txt";
  {
    std::ofstream out(lexicon);
    out << "e\n";
  }
  config.judge.kind = "keyword";
  config.judge.lexicon_path = lexicon;

  const EvalReport report = cmd_eval(config, questions, vec_dir);
  CHECK(report.n_test == 2);
  CHECK(report.n_judged + report.n_unjudged == 2);
  CHECK(report.items.size() == 2);
  CHECK(report.w2 == 0.5);

  const nlohmann::json saved = read_json_file(std::string(work / "out") + "/report.json");
  CHECK(saved.at("n_test") == 2);
  CHECK(saved.at("items").size() == 2);
  const nlohmann::json gens = read_json_file(std::string(work / "out") + "/generations.json");
  CHECK(gens.is_array());
  CHECK(gens.size() == 2);

  // Empty questions file is rejected.
  const std::string empty_questions = work / "empty.txt";
  {
    std::ofstream out(empty_questions);
    out << "\n\n";
  }
  config.out_dir = work / "out2";
  CHECK_THROWS_WITH_AS(cmd_eval(config, empty_questions, vec_dir),
                       doctest::Contains("no questions"), InputError);
}

TEST_CASE("stage failures name the stage") {
  TempDir work("pipe");
  PipelineConfig config;
  config.corpus_dir = work / "missing_corpus";
  config.out_dir = work / "out";
  CHECK_THROWS_WITH_AS(cmd_build(config), doctest::Contains("build/inputs"), Error);
}
