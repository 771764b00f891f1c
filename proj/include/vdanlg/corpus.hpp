#pragma once

// Dialogue acts, (de)lexicalization, vocabularies and dataset files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vdanlg::corpus {

struct DialogueAct {
  std::string act_type;
  std::vector<std::pair<std::string, std::string>> slots;

  friend bool operator==(const DialogueAct&, const DialogueAct&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

// act_type '(' name '=' value (';' name '=' value)* ')'
// Values may be quoted with ', " or a leading backtick; quotes are stripped.
DialogueAct parse_dialogue_act(std::string_view text);
// Canonical printer; parse_dialogue_act(format_dialogue_act(da)) == da.
std::string format_dialogue_act(const DialogueAct& da);

// Slots whose values are true/false stay lexical in delexicalized text.
bool is_binary_value(std::string_view value);

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

// Lowercases, detaches leading/trailing punctuation (, . ? ! ; :) from words
// and splits on whitespace. "2.5" stays one token.
std::vector<std::string> tokenize(std::string_view text);

// SLOT_<UPPERCASE NAME>
std::string slot_token(std::string_view slot_name);
bool is_slot_token(std::string_view token);
// "SLOT_MEMORY" -> "memory"
std::string slot_name_of(std::string_view token);

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

class Vocab {
 public:
  Vocab();
  explicit Vocab(const std::vector<std::string>& tokens);

  // Returns kUnk for out-of-vocabulary tokens.
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  std::vector<int> ids(const std::vector<std::string>& tokens) const;
  std::vector<std::string> lookup(const std::vector<int>& ids) const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

struct Utterance {
  std::vector<std::string> tokens;
  std::vector<int> indices;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

Utterance make_utterance(std::vector<std::string> tokens, const Vocab& vocab);

// Longest-match, case-insensitive replacement of slot values with
// SLOT_<NAME>. Binary slots are left as text. Indices are left empty.
Utterance delexicalize(std::string_view raw, const DialogueAct& da);

// Replaces each SLOT_<NAME> with the next unconsumed value of that slot in
// DA order. Tokens with no value left pass through verbatim.
std::string relexicalize(const std::vector<std::string>& tokens,
                         const DialogueAct& da);

enum class Domain { Source, Target };

std::string to_string(Domain d);
Domain domain_from_string(std::string_view s);

struct Example {
  DialogueAct da;
  std::string raw;
  Utterance reference;  // delexicalized
  Domain domain = Domain::Source;

  friend bool operator==(const Example&, const Example&) = default;
};

Example make_example(const DialogueAct& da, std::string raw, Domain domain);

// Tokens that represent the DA on the encoder side.
std::string act_token(std::string_view act_type);
std::string slot_name_token(std::string_view slot_name);
// Value token for a slot: the literal value for binary slots, otherwise the
// slot's placeholder token.
std::string slot_value_token(std::string_view name, std::string_view value);

// Reserved tokens, then every reference token, SLOT_ token, act token,
// slot-name token and value token, in sorted order.
Vocab build_vocab(const std::vector<Example>& examples);

class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, std::size_t line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// One JSON object per line: {"da": "...", "ref": "...", "domain": "..."}.
// "domain" is optional and defaults to `default_domain`.
std::vector<Example> load_dataset(const std::filesystem::path& path,
                                  Domain default_domain = Domain::Source);
void save_dataset(const std::filesystem::path& path,
                  const std::vector<Example>& examples);

// Model-side view of a dialogue act: act token id followed by
// (slot-name id, value id) pairs.
struct EncodedDa {
  int act = kUnk;
  std::vector<std::pair<int, int>> slots;
};

EncodedDa encode_dialogue_act(const DialogueAct& da, const Vocab& vocab);

}  // namespace vdanlg::corpus
