#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkit/common.hpp"
#include "steerkit/relevance.hpp"
#include "steerkit/sae.hpp"

namespace steerkit {

// One contrastive training item: a question with a behavior-matching and a
// behavior-violating answer.
struct ContrastivePair {
  std::string id;
  std::string question;
  std::string answer_matching;
  std::string answer_not_matching;
};

enum class FormatMode { kAnswerInsideTags, kAnswerOutsideTags };
enum class Polarity { kPositive, kNegative };

// Prompt template with exactly one {system}, one {question}, and one
// {answer} slot. The two modes differ only in whether the answer slot sits
// inside or after the instruction delimiter.
struct PromptFormat {
  FormatMode mode = FormatMode::kAnswerInsideTags;
  std::string tmpl;
  std::string system_text = "Answer the question.";
};

PromptFormat default_format(FormatMode mode);
// Throws ConfigError unless each slot appears exactly once.
void validate_format(const PromptFormat& fmt);
std::string format_pair(const ContrastivePair& pair, const PromptFormat& fmt, Polarity polarity);

// pairs.jsonl: one object per line {id, question, answer_matching,
// answer_not_matching}. Errors name the offending line; duplicate ids are
// rejected.
std::vector<ContrastivePair> load_pairs(const std::string& path);

struct ItemVerdict {
  std::uint32_t index = 0;
  bool judged = false;
  bool success = false;
  std::string rationale;
};

struct EvalReport {
  std::uint32_t n_test = 0;      // outputs presented for evaluation
  std::uint32_t n_judged = 0;    // outputs the judge actually decided
  std::uint32_t n_unjudged = 0;  // shortfall, reported rather than imputed
  std::uint32_t n_success = 0;
  double success_rate = 0.0;  // n_success / n_judged
  double entropy = 0.0;       // mean weighted n-gram entropy over outputs
  double w2 = 0.5;
  double w3 = 0.5;
  std::vector<ItemVerdict> items;
};

// Judges each output with the success prompt and averages ngram_entropy.
// Per-item judge failures are recorded as unjudged, never imputed.
EvalReport evaluate_generations(const std::vector<std::string>& outputs, Judge& judge,
                                const std::string& task_description, double w2 = 0.5,
                                double w3 = 0.5);

// Whitespace-tokenized weighted bigram/trigram entropy:
// w2*H2 + w3*H3 with H_n = -sum f log2 f over n-gram frequencies. Texts
// with fewer than n tokens contribute H_n = 0.
double ngram_entropy(const std::string& text, double w2 = 0.5, double w3 = 0.5);

// Synthetic ground-truth corpus. The dictionary splits the hidden space
// into disjoint subspaces: exact orthonormal directions for the relevant
// and missing features, a shared span for the noise features, a reserved
// ambient-noise span, and a reserved span for all background directions.
// Background and missing features therefore have pre-activation exactly
// zero on every generated sample, which makes the planted partition sound
// at any scale: seed splits into planted-noise and planted-relevant
// members only.
//
// "Missing" features are relevant-themed dictionary entries that never
// activate; they are what retrieval is supposed to recover. Explanations
// are generated from the lexicons so the keyword oracle reproduces the
// planted truth, and so missing-feature explanations embed close to
// relevant ones.
struct PlantedCorpusSpec {
  std::uint32_t n_relevant = 8;
  std::uint32_t n_missing = 8;
  std::uint32_t n_noise = 100;
  std::uint32_t n_pairs = 50;
  std::uint32_t hidden_dim = 64;
  std::uint32_t n_features = 512;
  // Normal regime: gap > noise_floor > 0. gap = 0 is the permitted
  // degenerate case where relevant features never activate.
  float gap = 1.0f;
  float noise_floor = 0.3f;
  // Probability that a given noise feature participates in a given pair.
  float noise_rate = 0.35f;
  std::uint64_t seed = 0;
  std::vector<std::string> task_lexicon;        // defaults filled if empty
  std::vector<std::string> spurious_lexicon;    // noise-feature vocabulary
  std::vector<std::string> background_lexicon;  // everything else
};

struct PlantedTruth {
  FeatureSet relevant;  // activating, behavior-carrying; always lands in seed when gap > 0
  FeatureSet noise;     // activating, spurious
  FeatureSet missing;   // behavior-themed but never activating; retrieval targets
  std::vector<float> direction;  // unit-norm mean of relevant + missing directions
};

struct PlantedCorpus {
  SaeParams sae;
  std::vector<FeatureRecord> records;
  std::vector<std::pair<HiddenState, HiddenState>> pairs_activations;
  PlantedTruth truth;
};

// Deterministic for a fixed spec. Throws ConfigError when the subspace
// budget does not fit hidden_dim or the feature counts exceed n_features.
PlantedCorpus generate_planted_corpus(const PlantedCorpusSpec& spec);

nlohmann::json spec_to_json(const PlantedCorpusSpec& spec);
PlantedCorpusSpec spec_from_json(const nlohmann::json& j);

// Corpus directory: sae/ (standard SAE artifact), features.jsonl,
// activations.json + activations.bin (pair dump), truth.json, lexicon.txt
// (task lexicon, oracle-ready), corpus.json (spec echo).
void save_corpus(const PlantedCorpus& corpus, const PlantedCorpusSpec& spec,
                 const std::string& dir);
PlantedCorpus load_corpus(const std::string& dir);

}  // namespace steerkit
