#include "steerkit/relevance.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <sstream>

#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "steerkit/io.hpp"
#include "steerkit/sha256.hpp"

namespace steerkit {

namespace {

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    return "";
  }
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

nlohmann::json verdict_to_json(const JudgeVerdict& v) {
  return {{"index", v.index},
          {"relevant", v.relevant},
          {"rationale", v.rationale},
          {"source", source_to_string(v.source)}};
}

JudgeVerdict verdict_from_json(const nlohmann::json& j) {
  JudgeVerdict v;
  v.index = j.at("index").get<FeatureIndex>();
  v.relevant = j.at("relevant").get<bool>();
  v.rationale = j.at("rationale").get<std::string>();
  v.source = source_from_string(j.at("source").get<std::string>());
  return v;
}

}  // namespace

std::string source_to_string(JudgeSource s) {
  switch (s) {
    case JudgeSource::kLlm: return "llm";
    case JudgeSource::kKeywordOracle: return "keyword_oracle";
    case JudgeSource::kHuman: return "human";
  }
  throw InternalError("unhandled judge source");
}

JudgeSource source_from_string(const std::string& s) {
  if (s == "llm") return JudgeSource::kLlm;
  if (s == "keyword_oracle") return JudgeSource::kKeywordOracle;
  if (s == "human") return JudgeSource::kHuman;
  throw InputError("unknown judge source: " + s);
}

void validate_partition(const FeaturePartition& p) {
  FeatureSet joined;
  for (FeatureIndex c : p.noise) {
    if (p.relevant.count(c) != 0) {
      throw InternalError("partition: feature " + std::to_string(c) +
                          " is in both noise and relevant");
    }
    joined.insert(c);
  }
  joined.insert(p.relevant.begin(), p.relevant.end());
  if (joined != p.seed) {
    throw InternalError("partition: noise + relevant does not cover seed (|cover|=" +
                        std::to_string(joined.size()) + ", |seed|=" +
                        std::to_string(p.seed.size()) + ")");
  }
  for (FeatureIndex c : p.useful) {
    if (p.seed.count(c) != 0) {
      throw InternalError("partition: useful feature " + std::to_string(c) + " is in seed");
    }
  }
}

KeywordOracleJudge::KeywordOracleJudge(std::vector<std::string> stems) {
  stems_.reserve(stems.size());
  for (auto& s : stems) {
    stems_.push_back(lowercase(trim(s)));
  }
}

std::string KeywordOracleJudge::id() const { return "keyword-oracle"; }

JudgeDecision KeywordOracleJudge::decide(const std::string& /*prompt*/,
                                         const std::string& subject) {
  const std::string haystack = lowercase(subject);
  for (const std::string& stem : stems_) {
    if (!stem.empty() && haystack.find(stem) != std::string::npos) {
      return {true, "matched stem \"" + stem + "\"", JudgeSource::kKeywordOracle};
    }
  }
  return {false, "no lexicon stem matched", JudgeSource::kKeywordOracle};
}

std::string judge_request_body(const std::string& prompt, const std::string& model) {
  const nlohmann::json body = {
      {"messages", {{{"content", prompt}, {"role", "user"}}}},
      {"model", model},
      {"temperature", 0},
  };
  // Prompts can quote raw model output, which need not be valid UTF-8;
  // replace rather than throw so the request (and its fixture digest) stays
  // well-defined.
  return body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

bool parse_judge_reply(const std::string& content) {
  const std::string t = trim(content);
  if (t == "YES") {
    return true;
  }
  if (t == "NO") {
    return false;
  }
  throw RemoteError("unparseable judge reply (want YES or NO): \"" +
                    (t.size() > 80 ? t.substr(0, 80) + "..." : t) + "\"");
}

namespace {

// Pulls the first message content out of a chat-completions response.
std::string completion_content(const std::string& response_body) {
  try {
    const nlohmann::json j = nlohmann::json::parse(response_body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw RemoteError(std::string("judge reply not in chat-completions shape: ") + e.what());
  }
}

}  // namespace

HttpJudge::HttpJudge(std::string endpoint, std::string api_key, std::string model,
                     int max_retries)
    : endpoint_(std::move(endpoint)),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      max_retries_(max_retries) {}

std::string HttpJudge::id() const { return "http:" + model_; }

JudgeDecision HttpJudge::decide(const std::string& prompt, const std::string& /*subject*/) {
  const std::string body = judge_request_body(prompt, model_);
  const std::string response = internal::post_json(endpoint_, api_key_, body, max_retries_);
  const std::string content = completion_content(response);
  return {parse_judge_reply(content), content, JudgeSource::kLlm};
}

ReplayJudge::ReplayJudge(std::string fixture_path, std::string model) : model_(std::move(model)) {
  const nlohmann::json j = read_json_file(fixture_path);
  if (!j.is_object()) {
    throw InputError("replay fixture must be a JSON object: " + fixture_path);
  }
  for (const auto& [digest, reply] : j.items()) {
    fixtures_[digest] = reply.get<std::string>();
  }
}

std::string ReplayJudge::id() const { return "replay:" + model_; }

JudgeDecision ReplayJudge::decide(const std::string& prompt, const std::string& /*subject*/) {
  const std::string digest = sha256_hex(judge_request_body(prompt, model_));
  const auto it = fixtures_.find(digest);
  if (it == fixtures_.end()) {
    throw RemoteError("no recorded reply for request digest " + digest);
  }
  return {parse_judge_reply(it->second), it->second, JudgeSource::kLlm};
}

namespace {

std::string quoted_tokens(const std::vector<std::string>& tokens) {
  if (tokens.empty()) {
    return "(none recorded)";
  }
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    out += "\"" + tokens[i] + "\"";
  }
  return out;
}

}  // namespace

std::string selection_prompt(const std::string& task_description, const FeatureRecord& record) {
  std::ostringstream os;
  os << "You label dictionary features for an activation-steering pipeline.\n"
     << "Task description: " << task_description << "\n\n"
     << "Feature explanation: \"" << record.explanation << "\"\n\n"
     << "Is this feature semantically related to the task? "
     << "Reply with exactly one token: YES or NO.";
  return os.str();
}

std::string verification_prompt(const std::string& task_description,
                                const FeatureRecord& record) {
  std::ostringstream os;
  os << "You label dictionary features for an activation-steering pipeline.\n"
     << "Task description: " << task_description << "\n\n"
     << "Feature explanation: \"" << record.explanation << "\"\n"
     << "Top activating tokens: " << quoted_tokens(record.top_tokens) << "\n\n"
     << "Is this feature semantically related to the task? "
     << "Reply with exactly one token: YES or NO.";
  return os.str();
}

std::string success_prompt(const std::string& task_description, const std::string& output) {
  std::ostringstream os;
  os << "You grade outputs of a steered language model.\n"
     << "Target behavior: " << task_description << "\n\n"
     << "Model output: \"" << output << "\"\n\n"
     << "Does the output exhibit the target behavior? "
     << "Reply with exactly one token: YES or NO.";
  return os.str();
}

std::vector<JudgeVerdict> judge_features(const std::vector<FeatureRecord>& records,
                                         const std::string& task_description, Judge& judge,
                                         const JudgeOptions& options) {
  if (records.empty()) {
    throw InputError("judge_features: no records");
  }
  const unsigned window = std::max(1u, options.max_in_flight);

  auto decide_one = [&](const FeatureRecord& record) {
    const std::string prompt = options.include_top_tokens
                                   ? verification_prompt(task_description, record)
                                   : selection_prompt(task_description, record);
    // The subject mirrors what the prompt shows, so subject-only judges see
    // the top tokens exactly when the prompt does.
    std::string subject = record.explanation;
    if (options.include_top_tokens) {
      for (const std::string& t : record.top_tokens) {
        subject += " " + t;
      }
    }
    return judge.decide(prompt, subject);
  };

  std::vector<JudgeVerdict> verdicts;
  verdicts.reserve(records.size());

  auto settle = [&](std::size_t i, JudgeDecision decision) {
    JudgeVerdict v;
    v.index = records[i].index;
    v.relevant = decision.yes;
    v.rationale = std::move(decision.rationale);
    v.source = decision.source;
    if (options.on_verdict) {
      options.on_verdict(v);
    }
    verdicts.push_back(std::move(v));
  };

  auto fail = [&](std::size_t i, const Error& e) -> void {
    const std::string msg = "feature " + std::to_string(records[i].index) + ": " + e.what();
    if (dynamic_cast<const RemoteError*>(&e) != nullptr) {
      throw RemoteError(msg);
    }
    throw InputError(msg);
  };

  if (window == 1) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      try {
        settle(i, decide_one(records[i]));
      } catch (const Error& e) {
        fail(i, e);
      }
    }
    return verdicts;
  }

  // Sliding window of in-flight calls; settle strictly in input order so
  // partial logs stay a prefix of the batch.
  std::vector<std::future<JudgeDecision>> in_flight;
  std::size_t launched = 0;
  std::size_t settled = 0;
  while (settled < records.size()) {
    while (launched < records.size() && launched - settled < window) {
      in_flight.push_back(std::async(std::launch::async, decide_one, std::cref(records[launched])));
      ++launched;
    }
    try {
      settle(settled, in_flight[settled].get());
    } catch (const Error& e) {
      // Let the remaining in-flight calls finish before surfacing.
      for (std::size_t j = settled + 1; j < launched; ++j) {
        try {
          in_flight[j].wait();
        } catch (...) {
        }
      }
      fail(settled, e);
    }
    ++settled;
  }
  return verdicts;
}

FeaturePartition partition_seed(const FeatureSet& seed,
                                const std::vector<JudgeVerdict>& verdicts) {
  std::map<FeatureIndex, bool> polarity;
  for (const JudgeVerdict& v : verdicts) {
    if (!polarity.emplace(v.index, v.relevant).second) {
      throw InputError("partition_seed: duplicate verdict for feature " + std::to_string(v.index));
    }
    if (seed.count(v.index) == 0) {
      throw InputError("partition_seed: verdict for feature " + std::to_string(v.index) +
                       " outside the seed set");
    }
  }
  FeaturePartition p;
  p.seed = seed;
  for (FeatureIndex c : seed) {
    const auto it = polarity.find(c);
    if (it == polarity.end()) {
      throw InputError("partition_seed: no verdict for seed feature " + std::to_string(c));
    }
    (it->second ? p.relevant : p.noise).insert(c);
  }
  validate_partition(p);
  return p;
}

FeatureSet verify_candidates(const std::vector<FeatureRecord>& candidates,
                             const std::string& task_description, Judge& judge,
                             const JudgeOptions& options) {
  if (candidates.empty()) {
    return {};
  }
  FeatureSet seen;
  for (const FeatureRecord& r : candidates) {
    if (!seen.insert(r.index).second) {
      throw InputError("verify_candidates: duplicate candidate " + std::to_string(r.index));
    }
  }
  JudgeOptions opts = options;
  opts.include_top_tokens = true;
  FeatureSet useful;
  for (const JudgeVerdict& v : judge_features(candidates, task_description, judge, opts)) {
    if (v.relevant) {
      useful.insert(v.index);
    }
  }
  return useful;
}

std::vector<FeatureRecord> load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open features file " + path);
  }
  std::vector<FeatureRecord> records;
  FeatureSet seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      FeatureRecord r;
      r.index = j.at("index").get<FeatureIndex>();
      r.explanation = j.at("explanation").get<std::string>();
      if (j.contains("top_tokens")) {
        r.top_tokens = j.at("top_tokens").get<std::vector<std::string>>();
      }
      if (r.explanation.empty()) {
        throw InputError(path + ":" + std::to_string(line_no) + ": empty explanation");
      }
      if (!seen.insert(r.index).second) {
        throw InputError(path + ":" + std::to_string(line_no) + ": duplicate feature index " +
                         std::to_string(r.index));
      }
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void save_features(const std::vector<FeatureRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw InputError("cannot write features file " + path);
  }
  for (const FeatureRecord& r : records) {
    const nlohmann::json j = {
        {"explanation", r.explanation}, {"index", r.index}, {"top_tokens", r.top_tokens}};
    out << j.dump() << "\n";
  }
  if (!out) {
    throw InputError("write failed for " + path);
  }
}

std::vector<std::string> load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open lexicon file " + path);
  }
  std::vector<std::string> stems;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    const std::string stem = trim(line);
    if (!stem.empty()) {
      stems.push_back(stem);
    }
  }
  return stems;
}

void append_verdict_log(const std::string& path, const JudgeVerdict& v) {
  std::ofstream out(path, std::ios::app);
  if (!out) {
    throw InputError("cannot open verdict log " + path);
  }
  out << verdict_to_json(v).dump() << "\n";
  out.flush();
  if (!out) {
    throw InputError("write failed for verdict log " + path);
  }
}

std::vector<JudgeVerdict> load_verdict_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open verdict log " + path);
  }
  std::vector<JudgeVerdict> verdicts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    try {
      verdicts.push_back(verdict_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return verdicts;
}

}  // namespace steerkit
