#include "vdanlg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <set>

#include "json.hpp"

namespace vdanlg::corpus {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)); }

bool is_detachable(char c) {
  return c == ',' || c == '.' || c == '?' || c == '!' || c == ';' || c == ':';
}

bool is_identifier_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

class DaParser {
 public:
  explicit DaParser(std::string_view text) : text_(text) {}

  DialogueAct parse() {
    DialogueAct da;
    skip_space();
    const std::size_t act_start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '(' && !is_space(text_[pos_])) {
      if (!is_identifier_char(text_[pos_])) {
        throw ParseError("invalid character in act type", pos_);
      }
      ++pos_;
    }
    da.act_type = to_lower(text_.substr(act_start, pos_ - act_start));
    if (da.act_type.empty()) throw ParseError("empty act type", act_start);
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] != '(') {
      throw ParseError("expected '('", pos_);
    }
    ++pos_;
    skip_space();
    if (peek() == ')') {
      ++pos_;
    } else {
      while (true) {
        da.slots.push_back(parse_pair());
        skip_space();
        if (pos_ >= text_.size()) {
          throw ParseError("unbalanced parentheses: missing ')'", pos_);
        }
        if (text_[pos_] == ';') {
          ++pos_;
          continue;
        }
        if (text_[pos_] == ')') {
          ++pos_;
          break;
        }
        throw ParseError("expected ';' or ')'", pos_);
      }
    }
    skip_space();
    if (pos_ != text_.size()) {
      throw ParseError("unexpected trailing text", pos_);
    }
    return da;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  std::pair<std::string, std::string> parse_pair() {
    skip_space();
    const std::size_t name_start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '=') {
      const char c = text_[pos_];
      if (c == ';' || c == ')' || c == '(') {
        throw ParseError("missing '=' in slot", pos_);
      }
      ++pos_;
    }
    if (pos_ >= text_.size()) {
      throw ParseError("missing '=' in slot", pos_);
    }
    const auto raw_name = trim(text_.substr(name_start, pos_ - name_start));
    if (raw_name.empty()) throw ParseError("empty slot name", name_start);
    for (std::size_t i = 0; i < raw_name.size(); ++i) {
      if (!is_identifier_char(raw_name[i])) {
        throw ParseError("invalid character in slot name", name_start + i);
      }
    }
    ++pos_;  // '='
    skip_space();
    std::string value;
    const char open = peek();
    if (open == '\'' || open == '"' || open == '`') {
      const std::size_t quote_pos = pos_;
      ++pos_;
      const std::size_t start = pos_;
      const auto closes = [open](char c) {
        return open == '"' ? c == '"' : c == '\'';
      };
      while (pos_ < text_.size() && !closes(text_[pos_])) ++pos_;
      if (pos_ >= text_.size()) {
        throw ParseError("unterminated quote opened at " +
                             std::to_string(quote_pos),
                         pos_);
      }
      value = std::string(text_.substr(start, pos_ - start));
      ++pos_;
    } else {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && text_[pos_] != ';' && text_[pos_] != ')') {
        ++pos_;
      }
      value = std::string(trim(text_.substr(start, pos_ - start)));
    }
    return {to_lower(raw_name), value};
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

bool matches_at(const std::vector<std::string>& tokens, std::size_t i,
                const std::vector<std::string>& pattern) {
  if (pattern.empty() || i + pattern.size() > tokens.size()) return false;
  return std::equal(pattern.begin(), pattern.end(), tokens.begin() + i);
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

DialogueAct parse_dialogue_act(std::string_view text) {
  return DaParser(text).parse();
}

std::string format_dialogue_act(const DialogueAct& da) {
  std::string out = da.act_type + "(";
  for (std::size_t i = 0; i < da.slots.size(); ++i) {
    if (i) out += "; ";
    const auto& [name, value] = da.slots[i];
    const char quote = value.find('\'') == std::string::npos ? '\'' : '"';
    out += name + "=" + quote + value + quote;
  }
  return out + ")";
}

bool is_binary_value(std::string_view value) {
  const auto v = to_lower(trim(value));
  return v == "true" || v == "false";
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  const std::string lower = to_lower(text);
  std::size_t i = 0;
  while (i < lower.size()) {
    while (i < lower.size() && is_space(lower[i])) ++i;
    const std::size_t start = i;
    while (i < lower.size() && !is_space(lower[i])) ++i;
    std::string_view word(lower.data() + start, i - start);
    if (word.empty()) continue;
    std::vector<std::string> tail;
    while (!word.empty() && is_detachable(word.front())) {
      out.emplace_back(1, word.front());
      word.remove_prefix(1);
    }
    while (!word.empty() && is_detachable(word.back())) {
      tail.emplace_back(1, word.back());
      word.remove_suffix(1);
    }
    if (!word.empty()) out.emplace_back(word);
    out.insert(out.end(), tail.rbegin(), tail.rend());
  }
  return out;
}

std::string slot_token(std::string_view slot_name) {
  return "SLOT_" + to_upper(slot_name);
}

bool is_slot_token(std::string_view token) {
  return token.size() > 5 && token.substr(0, 5) == "SLOT_";
}

std::string slot_name_of(std::string_view token) {
  return is_slot_token(token) ? to_lower(token.substr(5)) : std::string();
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
  for (const auto& t : tokens) {
    if (!contains(t)) add(t);
  }
}

void Vocab::add(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const {
  return index_.find(token) != index_.end();
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<int> Vocab::ids(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocab::lookup(const std::vector<int>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

Utterance make_utterance(std::vector<std::string> tokens, const Vocab& vocab) {
  Utterance u;
  u.indices = vocab.ids(tokens);
  u.tokens = std::move(tokens);
  return u;
}

// ---------------------------------------------------------------------------
// Lexicalization

Utterance delexicalize(std::string_view raw, const DialogueAct& da) {
  struct Pattern {
    std::vector<std::string> tokens;
    std::string replacement;
  };
  std::vector<Pattern> patterns;
  for (const auto& [name, value] : da.slots) {
    if (is_binary_value(value)) continue;
    auto toks = tokenize(value);
    if (toks.empty()) continue;
    patterns.push_back({std::move(toks), slot_token(name)});
  }
  std::stable_sort(patterns.begin(), patterns.end(),
                   [](const Pattern& a, const Pattern& b) {
                     return a.tokens.size() > b.tokens.size();
                   });
  const auto tokens = tokenize(raw);
  Utterance out;
  std::size_t i = 0;
  while (i < tokens.size()) {
    const Pattern* hit = nullptr;
    for (const auto& p : patterns) {
      if (matches_at(tokens, i, p.tokens)) {
        hit = &p;
        break;
      }
    }
    if (hit) {
      out.tokens.push_back(hit->replacement);
      i += hit->tokens.size();
    } else {
      out.tokens.push_back(tokens[i]);
      ++i;
    }
  }
  return out;
}

std::string relexicalize(const std::vector<std::string>& tokens,
                         const DialogueAct& da) {
  std::map<std::string, std::deque<std::string>> values;
  for (const auto& [name, value] : da.slots) values[name].push_back(value);
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    if (is_slot_token(t)) {
      auto it = values.find(slot_name_of(t));
      if (it != values.end() && !it->second.empty()) {
        out += it->second.front();
        it->second.pop_front();
        continue;
      }
    }
    out += t;
  }
  return out;
}

std::string to_string(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

Domain domain_from_string(std::string_view s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw std::invalid_argument("unknown domain tag: " + std::string(s));
}

Example make_example(const DialogueAct& da, std::string raw, Domain domain) {
  Example ex;
  ex.da = da;
  ex.reference = delexicalize(raw, da);
  ex.raw = std::move(raw);
  ex.domain = domain;
  return ex;
}

std::string act_token(std::string_view act_type) {
  return "act:" + std::string(act_type);
}

std::string slot_name_token(std::string_view slot_name) {
  return "slot:" + std::string(slot_name);
}

std::string slot_value_token(std::string_view name, std::string_view value) {
  return is_binary_value(value) ? to_lower(trim(value)) : slot_token(name);
}

Vocab build_vocab(const std::vector<Example>& examples) {
  std::set<std::string> tokens;
  for (const auto& ex : examples) {
    tokens.insert(ex.reference.tokens.begin(), ex.reference.tokens.end());
    tokens.insert(act_token(ex.da.act_type));
    for (const auto& [name, value] : ex.da.slots) {
      tokens.insert(slot_name_token(name));
      tokens.insert(slot_value_token(name, value));
    }
  }
  return Vocab(std::vector<std::string>(tokens.begin(), tokens.end()));
}

EncodedDa encode_dialogue_act(const DialogueAct& da, const Vocab& vocab) {
  EncodedDa out;
  out.act = vocab.id(act_token(da.act_type));
  for (const auto& [name, value] : da.slots) {
    out.slots.emplace_back(vocab.id(slot_name_token(name)),
                           vocab.id(slot_value_token(name, value)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

std::vector<Example> load_dataset(const std::filesystem::path& path,
                                  Domain default_domain) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open dataset " + path.string(), 0);
  }
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": malformed record: " + e.what(),
                      line_no);
    }
    if (!record.is_object() || !record.contains("da") ||
        !record["da"].is_string() || !record.contains("ref") ||
        !record["ref"].is_string()) {
      throw DataError(path.string() +
                          ": record needs string fields \"da\" and \"ref\"",
                      line_no);
    }
    Domain domain = default_domain;
    try {
      if (record.contains("domain")) {
        domain = domain_from_string(record["domain"].get<std::string>());
      }
      out.push_back(make_example(
          parse_dialogue_act(record["da"].get<std::string>()),
          record["ref"].get<std::string>(), domain));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

void save_dataset(const std::filesystem::path& path,
                  const std::vector<Example>& examples) {
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write dataset " + path.string(), 0);
  }
  for (const auto& ex : examples) {
    nlohmann::json record = {{"da", format_dialogue_act(ex.da)},
                             {"ref", ex.raw},
                             {"domain", to_string(ex.domain)}};
    out << record.dump() << '\n';
  }
}

}  // namespace vdanlg::corpus
