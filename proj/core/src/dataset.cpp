#include "steerkit/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "steerkit/io.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

namespace {

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
  std::size_t count = 0;
  for (auto pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string replace_once(std::string text, const std::string& slot, const std::string& value) {
  const auto pos = text.find(slot);
  text.replace(pos, slot.size(), value);
  return text;
}

}  // namespace

PromptFormat default_format(FormatMode mode) {
  PromptFormat fmt;
  fmt.mode = mode;
  fmt.tmpl = mode == FormatMode::kAnswerInsideTags
                 ? "[INST] {system}\nQuestion: {question}\nAnswer: {answer} [/INST]"
                 : "[INST] {system}\nQuestion: {question}\nAnswer: [/INST] {answer}";
  return fmt;
}

void validate_format(const PromptFormat& fmt) {
  for (const char* slot : {"{system}", "{question}", "{answer}"}) {
    const std::size_t n = count_occurrences(fmt.tmpl, slot);
    if (n != 1) {
      throw ConfigError("prompt template must contain exactly one " + std::string(slot) +
                        " slot, found " + std::to_string(n));
    }
  }
}

std::string format_pair(const ContrastivePair& pair, const PromptFormat& fmt, Polarity polarity) {
  validate_format(fmt);
  if (pair.question.empty() || pair.answer_matching.empty() ||
      pair.answer_not_matching.empty()) {
    throw InputError("format_pair: pair \"" + pair.id + "\" has an empty text field");
  }
  const std::string& answer =
      polarity == Polarity::kPositive ? pair.answer_matching : pair.answer_not_matching;
  std::string out = replace_once(fmt.tmpl, "{system}", fmt.system_text);
  out = replace_once(out, "{question}", pair.question);
  out = replace_once(out, "{answer}", answer);
  return out;
}

std::vector<ContrastivePair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open pairs file " + path);
  }
  std::vector<ContrastivePair> pairs;
  std::map<std::string, std::size_t> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      ContrastivePair p;
      p.id = j.at("id").get<std::string>();
      p.question = j.at("question").get<std::string>();
      p.answer_matching = j.at("answer_matching").get<std::string>();
      p.answer_not_matching = j.at("answer_not_matching").get<std::string>();
      if (p.question.empty() || p.answer_matching.empty() || p.answer_not_matching.empty()) {
        throw InputError(path + ":" + std::to_string(line_no) + ": empty text field");
      }
      const auto [it, inserted] = seen_ids.emplace(p.id, line_no);
      if (!inserted) {
        throw InputError(path + ":" + std::to_string(line_no) + ": duplicate id \"" + p.id +
                         "\" (first seen at line " + std::to_string(it->second) + ")");
      }
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

double ngram_entropy(const std::string& text, double w2, double w3) {
  std::vector<std::string> tokens;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    tokens.push_back(tok);
  }
  const auto h_n = [&tokens](std::size_t n) -> double {
    if (tokens.size() < n) {
      return 0.0;
    }
    std::map<std::string, std::size_t> counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
      std::string key = tokens[i];
      for (std::size_t j = 1; j < n; ++j) {
        key += '\x1f';
        key += tokens[i + j];
      }
      ++counts[key];
    }
    const double total = double(tokens.size() - n + 1);
    double h = 0.0;
    for (const auto& [_, c] : counts) {
      const double f = double(c) / total;
      h -= f * std::log2(f);
    }
    return h;
  };
  return w2 * h_n(2) + w3 * h_n(3);
}

EvalReport evaluate_generations(const std::vector<std::string>& outputs, Judge& judge,
                                const std::string& task_description, double w2, double w3) {
  if (outputs.empty()) {
    throw InputError("evaluate_generations: no outputs");
  }
  EvalReport report;
  report.n_test = std::uint32_t(outputs.size());
  report.w2 = w2;
  report.w3 = w3;
  double entropy_sum = 0.0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    entropy_sum += ngram_entropy(outputs[i], w2, w3);
    ItemVerdict item;
    item.index = std::uint32_t(i);
    try {
      const JudgeDecision d = judge.decide(success_prompt(task_description, outputs[i]),
                                           outputs[i]);
      item.judged = true;
      item.success = d.yes;
      item.rationale = d.rationale;
      ++report.n_judged;
      if (d.yes) {
        ++report.n_success;
      }
    } catch (const Error& e) {
      item.judged = false;
      item.rationale = e.what();
      ++report.n_unjudged;
    }
    report.items.push_back(std::move(item));
  }
  report.success_rate =
      report.n_judged > 0 ? double(report.n_success) / double(report.n_judged) : 0.0;
  report.entropy = entropy_sum / double(outputs.size());
  return report;
}

namespace {

const std::vector<std::string>& default_task_lexicon() {
  static const std::vector<std::string> lex = {"flattery",   "praise",      "agreement",
                                               "approval",   "compliment",  "endorsement",
                                               "admiration", "acquiescence"};
  return lex;
}

const std::vector<std::string>& default_spurious_lexicon() {
  static const std::vector<std::string> lex = {
      "punctuation", "numerals",     "whitespace", "capitalization", "quotation",
      "parentheses", "hyphenation",  "abbreviation", "typography",   "delimiters",
      "indentation", "ellipsis"};
  return lex;
}

const std::vector<std::string>& default_background_lexicon() {
  static const std::vector<std::string> lex = {
      "weather",   "geography", "cooking",   "music",     "botany",     "astronomy",
      "carpentry", "sailing",   "chess",     "pottery",   "cycling",    "calligraphy",
      "mineralogy", "origami",  "beekeeping", "cartography"};
  return lex;
}

// "stemA and stemB <suffix>" with stems walked deterministically by the
// feature's rank inside its group. The offset shifts missing-feature stem
// picks off the relevant ones so texts overlap without being identical.
std::string lexicon_text(const std::vector<std::string>& lexicon, std::size_t rank,
                         std::size_t offset, const std::string& suffix,
                         std::vector<std::string>* tokens_out) {
  const std::size_t l = lexicon.size();
  const std::string& a = lexicon[(2 * rank + offset) % l];
  const std::string& b = lexicon[(2 * rank + offset + 1) % l];
  if (tokens_out != nullptr) {
    *tokens_out = {a, b};
  }
  return a + " and " + b + " " + suffix;
}

}  // namespace

PlantedCorpus generate_planted_corpus(const PlantedCorpusSpec& spec_in) {
  PlantedCorpusSpec spec = spec_in;
  if (spec.task_lexicon.empty()) {
    spec.task_lexicon = default_task_lexicon();
  }
  if (spec.spurious_lexicon.empty()) {
    spec.spurious_lexicon = default_spurious_lexicon();
  }
  if (spec.background_lexicon.empty()) {
    spec.background_lexicon = default_background_lexicon();
  }

  const std::uint32_t d = spec.hidden_dim;
  const std::uint32_t m = spec.n_features;
  if (spec.n_relevant == 0 || spec.n_pairs == 0 || d == 0 || m == 0) {
    throw ConfigError("planted corpus: n_relevant, n_pairs, hidden_dim, n_features must be > 0");
  }
  if (!(spec.noise_floor > 0.0f) || spec.gap < 0.0f) {
    throw ConfigError("planted corpus: need noise_floor > 0 and gap >= 0");
  }
  if (!(spec.noise_rate > 0.0f) || spec.noise_rate > 1.0f) {
    throw ConfigError("planted corpus: noise_rate must be in (0, 1]");
  }
  const std::uint64_t planted = std::uint64_t(spec.n_relevant) + spec.n_missing + spec.n_noise;
  if (planted > m) {
    throw ConfigError("planted corpus: " + std::to_string(planted) +
                      " planted features exceed n_features " + std::to_string(m));
  }
  const std::uint32_t n_background = m - std::uint32_t(planted);

  // Subspace budget: exact directions for relevant + missing, a shared span
  // for noise directions, an ambient span orthogonal to every dictionary
  // direction, and a span for background directions.
  const std::uint32_t base = spec.n_relevant + spec.n_missing;
  const std::uint32_t b_dims = n_background > 0 ? 2 : 0;
  const std::uint32_t s_min = spec.n_noise > 0 ? 1 : 0;
  if (std::uint64_t(base) + b_dims + s_min + 1 > d) {
    throw ConfigError("planted corpus: hidden_dim " + std::to_string(d) +
                      " too small for the requested feature counts");
  }
  const std::uint32_t s_dims =
      spec.n_noise > 0 ? std::min(spec.n_noise, (d - base - b_dims) / 2) : 0;
  const std::uint32_t a_dims = d - base - b_dims - s_dims;

  std::mt19937_64 g(spec.seed);

  // Orthonormal basis for the whole hidden space.
  Eigen::MatrixXd raw(d, d);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      raw(i, j) = rng::normal(g);
    }
  }
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ();
  const auto basis_col = [&q](std::uint32_t j) { return q.col(Eigen::Index(j)); };
  const std::uint32_t noise_span_start = base;
  const std::uint32_t ambient_start = base + s_dims;
  const std::uint32_t background_start = ambient_start + a_dims;

  // Scatter planted feature indices over [0, m).
  std::vector<FeatureIndex> order(m);
  std::iota(order.begin(), order.end(), 0);
  rng::shuffle(order, g);
  PlantedTruth truth;
  std::vector<FeatureIndex> relevant_ids(order.begin(), order.begin() + spec.n_relevant);
  std::vector<FeatureIndex> missing_ids(order.begin() + spec.n_relevant,
                                        order.begin() + base);
  std::vector<FeatureIndex> noise_ids(order.begin() + base,
                                      order.begin() + base + spec.n_noise);
  truth.relevant.insert(relevant_ids.begin(), relevant_ids.end());
  truth.missing.insert(missing_ids.begin(), missing_ids.end());
  truth.noise.insert(noise_ids.begin(), noise_ids.end());

  // Decoder rows; encoder is the transpose, so a feature's pre-activation
  // is the inner product with its direction.
  Eigen::MatrixXd w_dec = Eigen::MatrixXd::Zero(m, d);
  for (std::uint32_t i = 0; i < spec.n_relevant; ++i) {
    w_dec.row(relevant_ids[i]) = basis_col(i).transpose();
  }
  for (std::uint32_t i = 0; i < spec.n_missing; ++i) {
    w_dec.row(missing_ids[i]) = basis_col(spec.n_relevant + i).transpose();
  }
  for (std::uint32_t i = 0; i < spec.n_noise; ++i) {
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
    for (std::uint32_t j = 0; j < s_dims; ++j) {
      dir += rng::normal(g) * basis_col(noise_span_start + j);
    }
    w_dec.row(noise_ids[i]) = dir.normalized().transpose();
  }
  {
    std::uint32_t written = 0;
    for (FeatureIndex c = 0; c < m && written < n_background; ++c) {
      if (truth.relevant.count(c) || truth.missing.count(c) || truth.noise.count(c)) {
        continue;
      }
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
      for (std::uint32_t j = 0; j < b_dims; ++j) {
        dir += rng::normal(g) * basis_col(background_start + j);
      }
      w_dec.row(c) = dir.normalized().transpose();
      ++written;
    }
  }

  PlantedCorpus corpus;
  corpus.sae.input_dim = d;
  corpus.sae.n_features = m;
  corpus.sae.nonlinearity = NonlinearitySpec::topk(spec.n_relevant + spec.n_noise);
  // Negative encoder bias acts as an activation threshold. The basis is
  // orthonormal in exact arithmetic but float dot products leave ~1e-5
  // residue, which would otherwise leak non-planted features into the top-k
  // support; genuine activations sit far above this.
  corpus.sae.b_enc.assign(m, -1e-3f);
  corpus.sae.b_dec.assign(d, 0.0f);
  corpus.sae.w_dec.resize(std::size_t(m) * d);
  corpus.sae.w_enc.resize(std::size_t(d) * m);
  for (std::uint32_t c = 0; c < m; ++c) {
    for (std::uint32_t i = 0; i < d; ++i) {
      const float v = float(w_dec(c, i));
      corpus.sae.w_dec[std::size_t(c) * d + i] = v;
      corpus.sae.w_enc[std::size_t(i) * m + c] = v;
    }
  }

  // Ground-truth behavior direction: mean of every behavior-themed
  // direction, activating or not, so retrieval gains are measurable.
  {
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(d);
    for (std::uint32_t i = 0; i < base; ++i) {
      dir += basis_col(i);
    }
    dir.normalize();
    truth.direction.resize(d);
    for (std::uint32_t i = 0; i < d; ++i) {
      truth.direction[i] = float(dir[Eigen::Index(i)]);
    }
  }

  // Contrastive activations. Relevant components appear only in positives;
  // noise components appear in both polarities with a positive-sample bias;
  // ambient noise lives in its own span so no feature ever sees it.
  const double sigma = double(spec.noise_floor) / 2.0;
  for (std::uint32_t n = 0; n < spec.n_pairs; ++n) {
    Eigen::VectorXd plus = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd minus = Eigen::VectorXd::Zero(d);
    for (std::uint32_t i = 0; i < spec.n_relevant; ++i) {
      const double gain = double(spec.gap) * (1.0 + 0.25 * rng::uniform01(g));
      plus += gain * basis_col(i);
    }
    for (std::uint32_t i = 0; i < spec.n_noise; ++i) {
      if (rng::uniform01(g) < double(spec.noise_rate)) {
        const double beta_plus = double(spec.noise_floor) * (1.0 + rng::uniform01(g));
        const double beta_minus = double(spec.noise_floor) * rng::uniform01(g);
        const Eigen::VectorXd dir = w_dec.row(noise_ids[i]).transpose();
        plus += beta_plus * dir;
        minus += beta_minus * dir;
      }
    }
    for (std::uint32_t j = 0; j < a_dims; ++j) {
      plus += sigma * rng::normal(g) * basis_col(ambient_start + j);
      minus += sigma * rng::normal(g) * basis_col(ambient_start + j);
    }
    HiddenState h_plus, h_minus;
    h_plus.values.resize(d);
    h_minus.values.resize(d);
    for (std::uint32_t i = 0; i < d; ++i) {
      h_plus.values[i] = float(plus[Eigen::Index(i)]);
      h_minus.values[i] = float(minus[Eigen::Index(i)]);
    }
    corpus.pairs_activations.emplace_back(std::move(h_plus), std::move(h_minus));
  }

  // Explanations: behavior-themed features draw from the task lexicon so
  // the keyword oracle and the hash embedder both see the planted truth.
  std::map<FeatureIndex, std::string> group_suffix;
  std::map<FeatureIndex, std::pair<const std::vector<std::string>*, std::pair<std::size_t, std::size_t>>>
      group_of;  // feature -> (lexicon, (rank, offset))
  for (std::size_t i = 0; i < relevant_ids.size(); ++i) {
    group_of[relevant_ids[i]] = {&spec.task_lexicon, {i, 0}};
    group_suffix[relevant_ids[i]] = "expressions";
  }
  for (std::size_t i = 0; i < missing_ids.size(); ++i) {
    group_of[missing_ids[i]] = {&spec.task_lexicon, {i, 1}};
    group_suffix[missing_ids[i]] = "expressions";
  }
  for (std::size_t i = 0; i < noise_ids.size(); ++i) {
    group_of[noise_ids[i]] = {&spec.spurious_lexicon, {i, 0}};
    group_suffix[noise_ids[i]] = "patterns";
  }
  std::size_t background_rank = 0;
  for (FeatureIndex c = 0; c < m; ++c) {
    FeatureRecord r;
    r.index = c;
    const auto it = group_of.find(c);
    if (it != group_of.end()) {
      r.explanation = lexicon_text(*it->second.first, it->second.second.first,
                                   it->second.second.second, group_suffix[c], &r.top_tokens);
    } else {
      r.explanation = lexicon_text(spec.background_lexicon, background_rank++, 0, "mentions",
                                   &r.top_tokens);
    }
    corpus.records.push_back(std::move(r));
  }

  corpus.truth = std::move(truth);
  return corpus;
}

nlohmann::json spec_to_json(const PlantedCorpusSpec& spec) {
  return {{"n_relevant", spec.n_relevant},
          {"n_missing", spec.n_missing},
          {"n_noise", spec.n_noise},
          {"n_pairs", spec.n_pairs},
          {"hidden_dim", spec.hidden_dim},
          {"n_features", spec.n_features},
          {"gap", spec.gap},
          {"noise_floor", spec.noise_floor},
          {"noise_rate", spec.noise_rate},
          {"seed", spec.seed},
          {"task_lexicon", spec.task_lexicon},
          {"spurious_lexicon", spec.spurious_lexicon},
          {"background_lexicon", spec.background_lexicon}};
}

PlantedCorpusSpec spec_from_json(const nlohmann::json& j) {
  PlantedCorpusSpec spec;
  try {
    spec.n_relevant = j.at("n_relevant").get<std::uint32_t>();
    spec.n_missing = j.at("n_missing").get<std::uint32_t>();
    spec.n_noise = j.at("n_noise").get<std::uint32_t>();
    spec.n_pairs = j.at("n_pairs").get<std::uint32_t>();
    spec.hidden_dim = j.at("hidden_dim").get<std::uint32_t>();
    spec.n_features = j.at("n_features").get<std::uint32_t>();
    spec.gap = j.at("gap").get<float>();
    spec.noise_floor = j.at("noise_floor").get<float>();
    spec.noise_rate = j.at("noise_rate").get<float>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.task_lexicon = j.at("task_lexicon").get<std::vector<std::string>>();
    spec.spurious_lexicon = j.at("spurious_lexicon").get<std::vector<std::string>>();
    spec.background_lexicon = j.at("background_lexicon").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("corpus spec: ") + e.what());
  }
  return spec;
}

void save_corpus(const PlantedCorpus& corpus, const PlantedCorpusSpec& spec,
                 const std::string& dir) {
  ensure_dir(dir);
  save_sae(corpus.sae, dir + "/sae");
  save_features(corpus.records, dir + "/features.jsonl");

  const std::uint32_t d = corpus.sae.input_dim;
  std::vector<float> dump;
  dump.reserve(corpus.pairs_activations.size() * 2 * d);
  for (const auto& [plus, minus] : corpus.pairs_activations) {
    dump.insert(dump.end(), plus.values.begin(), plus.values.end());
    dump.insert(dump.end(), minus.values.begin(), minus.values.end());
  }
  write_f32le(dir + "/activations.bin", dump);
  write_json_file(dir + "/activations.json",
                  {{"dim", d},
                   {"n_pairs", corpus.pairs_activations.size()},
                   {"file", "activations.bin"},
                   {"layout", "pairs x (plus, minus) x dim"}});

  write_json_file(dir + "/truth.json",
                  {{"relevant", corpus.truth.relevant},
                   {"noise", corpus.truth.noise},
                   {"missing", corpus.truth.missing},
                   {"direction", corpus.truth.direction}});

  std::ofstream lex(dir + "/lexicon.txt", std::ios::trunc);
  lex << "# task lexicon (keyword-oracle stems)\n";
  for (const std::string& stem :
       (spec.task_lexicon.empty() ? default_task_lexicon() : spec.task_lexicon)) {
    lex << stem << "\n";
  }
  if (!lex) {
    throw InputError("cannot write " + dir + "/lexicon.txt");
  }

  write_json_file(dir + "/corpus.json", spec_to_json(spec));
}

PlantedCorpus load_corpus(const std::string& dir) {
  PlantedCorpus corpus;
  corpus.sae = load_sae(dir + "/sae");
  corpus.records = load_features(dir + "/features.jsonl");

  const nlohmann::json manifest = read_json_file(dir + "/activations.json");
  std::uint32_t d = 0;
  std::size_t n_pairs = 0;
  std::string file;
  try {
    d = manifest.at("dim").get<std::uint32_t>();
    n_pairs = manifest.at("n_pairs").get<std::size_t>();
    file = manifest.at("file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("activations manifest " + dir + "/activations.json: " + e.what());
  }
  if (d != corpus.sae.input_dim) {
    throw InputError("activations dim " + std::to_string(d) + " != sae input_dim " +
                     std::to_string(corpus.sae.input_dim));
  }
  const std::vector<float> dump = read_f32le(dir + "/" + file, n_pairs * 2 * d);
  for (std::size_t n = 0; n < n_pairs; ++n) {
    HiddenState plus, minus;
    plus.values.assign(dump.begin() + std::ptrdiff_t(n * 2 * d),
                       dump.begin() + std::ptrdiff_t(n * 2 * d + d));
    minus.values.assign(dump.begin() + std::ptrdiff_t(n * 2 * d + d),
                        dump.begin() + std::ptrdiff_t((n + 1) * 2 * d));
    corpus.pairs_activations.emplace_back(std::move(plus), std::move(minus));
  }

  const nlohmann::json truth = read_json_file(dir + "/truth.json");
  try {
    for (FeatureIndex c : truth.at("relevant").get<std::vector<FeatureIndex>>()) {
      corpus.truth.relevant.insert(c);
    }
    for (FeatureIndex c : truth.at("noise").get<std::vector<FeatureIndex>>()) {
      corpus.truth.noise.insert(c);
    }
    for (FeatureIndex c : truth.at("missing").get<std::vector<FeatureIndex>>()) {
      corpus.truth.missing.insert(c);
    }
    corpus.truth.direction = truth.at("direction").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("truth file " + dir + "/truth.json: " + e.what());
  }
  return corpus;
}

}  // namespace steerkit
