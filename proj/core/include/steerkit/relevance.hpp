#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "steerkit/common.hpp"

namespace steerkit {

// One dictionary feature with its natural-language explanation. The
// embedding slot is filled by the retrieval stage.
struct FeatureRecord {
  FeatureIndex index = 0;
  std::string explanation;
  std::vector<std::string> top_tokens;
  std::optional<std::vector<float>> embedding;
};

enum class JudgeSource { kLlm, kKeywordOracle, kHuman };

std::string source_to_string(JudgeSource s);
JudgeSource source_from_string(const std::string& s);

struct JudgeVerdict {
  FeatureIndex index = 0;
  bool relevant = false;
  std::string rationale;
  JudgeSource source = JudgeSource::kKeywordOracle;
};

// Disjoint cover of the seed set plus the verified retrieved set.
// Invariants: noise and relevant partition seed; useful never overlaps seed.
struct FeaturePartition {
  FeatureSet seed;
  FeatureSet noise;
  FeatureSet relevant;
  FeatureSet useful;
};

// Throws InternalError when the partition invariants do not hold.
void validate_partition(const FeaturePartition& p);

// A yes/no decision maker. Remote implementations answer the filled prompt;
// the keyword oracle inspects only the bare subject text. decide() throws
// RemoteError on transport failure (after retries) and on replies that are
// not exactly YES or NO.
struct JudgeDecision {
  bool yes = false;
  std::string rationale;
  JudgeSource source = JudgeSource::kKeywordOracle;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::string id() const = 0;
  virtual JudgeDecision decide(const std::string& prompt, const std::string& subject) = 0;
};

// Relevant iff any lexicon stem occurs case-insensitively in the subject.
// Pure function of (lexicon, subject); the prompt is ignored.
class KeywordOracleJudge : public Judge {
 public:
  explicit KeywordOracleJudge(std::vector<std::string> stems);
  std::string id() const override;
  JudgeDecision decide(const std::string& prompt, const std::string& subject) override;

 private:
  std::vector<std::string> stems_;
};

// Chat-completions client. Sends the prompt as a single user message with
// temperature 0 and parses a strict single-token YES/NO reply. Transient
// transport failures and 5xx statuses are retried up to max_retries.
class HttpJudge : public Judge {
 public:
  HttpJudge(std::string endpoint, std::string api_key, std::string model,
            int max_retries = 3);
  std::string id() const override;
  JudgeDecision decide(const std::string& prompt, const std::string& subject) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  std::string model_;
  int max_retries_;
};

// Replays recorded replies keyed by the digest of the exact request body an
// HttpJudge would send; a missing fixture entry is a RemoteError.
class ReplayJudge : public Judge {
 public:
  // fixture_path: JSON object {request-body-sha256: reply-content}.
  ReplayJudge(std::string fixture_path, std::string model);
  std::string id() const override;
  JudgeDecision decide(const std::string& prompt, const std::string& subject) override;

 private:
  std::string model_;
  std::map<std::string, std::string> fixtures_;
};

// The exact chat-completions request body for a prompt; shared by HttpJudge
// and ReplayJudge so fixture digests line up with live traffic.
std::string judge_request_body(const std::string& prompt, const std::string& model);

// Parses a strict YES/NO judge reply (surrounding whitespace ignored).
// Anything else throws RemoteError.
bool parse_judge_reply(const std::string& content);

// Prompt builders. Selection judges an explanation alone; verification also
// shows the feature's top activating tokens; success judges a generated
// output against the task description. All are deterministic fills of fixed
// templates with a single-token YES/NO instruction.
std::string selection_prompt(const std::string& task_description, const FeatureRecord& record);
std::string verification_prompt(const std::string& task_description, const FeatureRecord& record);
std::string success_prompt(const std::string& task_description, const std::string& output);

struct JudgeOptions {
  bool include_top_tokens = false;
  // Maximum concurrent decide() calls. Verdict order always matches input
  // order regardless of completion order.
  unsigned max_in_flight = 1;
  // Invoked in input order as verdicts settle; lets callers persist a
  // partial log before a later feature fails.
  std::function<void(const JudgeVerdict&)> on_verdict;
};

// One verdict per record, order-preserving. A judge failure aborts the
// batch with the failing feature named; verdicts already settled have been
// delivered through on_verdict.
std::vector<JudgeVerdict> judge_features(const std::vector<FeatureRecord>& records,
                                         const std::string& task_description, Judge& judge,
                                         const JudgeOptions& options = {});

// Splits seed by verdict polarity. The verdicts must cover seed exactly;
// missing or extra indices are an InputError.
FeaturePartition partition_seed(const FeatureSet& seed,
                                const std::vector<JudgeVerdict>& verdicts);

// Verification pass over retrieved candidates (top tokens shown to the
// judge). Returns the accepted subset. Duplicate candidate indices are an
// InputError; callers keep candidates disjoint from seed.
FeatureSet verify_candidates(const std::vector<FeatureRecord>& candidates,
                             const std::string& task_description, Judge& judge,
                             const JudgeOptions& options = {});

// features.jsonl: one object per line {index, explanation, top_tokens}.
std::vector<FeatureRecord> load_features(const std::string& path);
void save_features(const std::vector<FeatureRecord>& records, const std::string& path);

// Lexicon file: one stem per line, '#' starts a comment, blanks ignored.
std::vector<std::string> load_lexicon(const std::string& path);

// Verdict log: JSONL {index, relevant, rationale, source}.
void append_verdict_log(const std::string& path, const JudgeVerdict& v);
std::vector<JudgeVerdict> load_verdict_log(const std::string& path);

}  // namespace steerkit
