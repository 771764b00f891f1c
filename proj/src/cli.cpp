#include "vdanlg/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vdanlg/corpus.hpp"
#include "vdanlg/evaluation.hpp"
#include "vdanlg/generator.hpp"
#include "vdanlg/training.hpp"

namespace vdanlg::cli {

namespace {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum Command : unsigned { kTrain = 1, kAdapt = 2, kGenerate = 4, kEvaluate = 8 };
enum class Kind { Path, Size, Real, Bool };

struct KeySpec {
  const char* key;
  const char* flag;
  Kind kind;
  unsigned commands;
  const char* help;
};

constexpr unsigned kTrainers = kTrain | kAdapt;

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"source", "source", Kind::Path, kTrainers, "source-domain dataset (JSONL)"},
      {"validation", "validation", Kind::Path, kTrain,
       "source validation set for early stopping"},
      {"target", "target", Kind::Path, kTrainers,
       "target-domain dataset; train only adds its tokens to the vocabulary"},
      {"target_validation", "target-validation", Kind::Path, kTrainers,
       "target validation set; adapt stops early on it"},
      {"checkpoint_in", "checkpoint", Kind::Path, kAdapt | kGenerate, "input checkpoint"},
      {"checkpoint_out", "out", Kind::Path, kTrainers,
       "output checkpoint, rewritten at each validation improvement"},
      {"log", "log", Kind::Path, kTrainers, "per-step training log (JSONL)"},
      {"input", "input", Kind::Path, kGenerate, "dialogue acts to realize (JSONL, field \"da\")"},
      {"output", "output", Kind::Path, kGenerate, "candidate file (JSONL); '-' for stdout"},
      {"candidates", "candidates", Kind::Path, kEvaluate, "candidate file written by generate"},
      {"references", "references", Kind::Path, kEvaluate, "reference dataset (JSONL)"},
      {"report", "report", Kind::Path, kEvaluate, "write the report as JSON here"},
      {"d_h", "d-h", Kind::Size, kTrain, "hidden and embedding size (default 80)"},
      {"d_z", "d-z", Kind::Size, kTrain, "latent size (default 16)"},
      {"dc_hidden", "dc-hidden", Kind::Size, kTrain, "domain critic hidden width (default 64)"},
      {"init_scale", "init-scale", Kind::Real, kTrain,
       "uniform initialization half-width (default 0.08)"},
      {"beam_width", "beam", Kind::Size, kTrainers | kGenerate,
       "beam width K, also the over-generation size (default 10)"},
      {"top_k", "top-k", Kind::Size, kAdapt | kGenerate,
       "candidates kept after re-ranking (default 3)"},
      {"samples", "samples", Kind::Size, kTrainers, "latent samples M per example (default 1)"},
      {"keep_dropout", "keep-dropout", Kind::Real, kTrainers, "dropout keep rate (default 0.70)"},
      {"lr", "lr", Kind::Real, kTrainers, "Adam learning rate (default 0.001)"},
      {"lr_decay", "lr-decay", Kind::Real, kTrainers, "per-epoch decay factor (default 0.95)"},
      {"decay_start_epochs", "decay-start", Kind::Size, kTrainers,
       "epochs before decay begins (default 5)"},
      {"num_steps", "num-steps", Kind::Size, kTrainers,
       "gradient reversal schedule horizon (default 8600)"},
      {"kl_anneal_steps", "kl-anneal-steps", Kind::Size, kTrainers,
       "steps of linear KL annealing (default 2000)"},
      {"max_epochs", "max-epochs", Kind::Size, kTrainers, "epoch limit (default 20)"},
      {"patience", "patience", Kind::Size, kTrainers,
       "epochs without validation improvement before stopping (default 3)"},
      {"max_len", "max-len", Kind::Size, kTrainers | kGenerate,
       "decoding length limit (default 40)"},
      {"penalty_weight", "penalty-weight", Kind::Real, kTrainers | kGenerate,
       "re-ranking penalty per missing or redundant slot (default 1.0)"},
      {"use_sc", "use-sc", Kind::Bool, kAdapt, "train the similarity critic (default true)"},
      {"use_dc", "use-dc", Kind::Bool, kAdapt, "train the domain critic (default true)"},
      {"seed", "seed", Kind::Size, kTrainers, "random seed (default 1)"},
  };
  return specs;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& s : key_specs()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

struct RunConfig {
  std::map<std::string, std::string> paths;
  training::TrainConfig train;

  std::optional<std::string> path(const std::string& key) const {
    const auto it = paths.find(key);
    if (it == paths.end()) return std::nullopt;
    return it->second;
  }
  std::string required_path(const std::string& key) const {
    auto p = path(key);
    if (!p) throw ConfigError("missing required config key '" + key + "'");
    return *p;
  }
};

std::uint64_t as_size(const KeySpec& spec, const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  throw ConfigError(std::string("config key '") + spec.key +
                    "' must be a non-negative integer, got " + v.dump());
}

void assign(RunConfig& cfg, const KeySpec& spec, const json& v) {
  const std::string key = spec.key;
  auto& t = cfg.train;
  switch (spec.kind) {
    case Kind::Path:
      if (!v.is_string()) {
        throw ConfigError("config key '" + key + "' must be a string, got " + v.dump());
      }
      cfg.paths[key] = v.get<std::string>();
      return;
    case Kind::Bool:
      if (!v.is_boolean()) {
        throw ConfigError("config key '" + key + "' must be true or false, got " + v.dump());
      }
      (key == "use_sc" ? t.use_sc : t.use_dc) = v.get<bool>();
      return;
    case Kind::Real: {
      if (!v.is_number()) {
        throw ConfigError("config key '" + key + "' must be a number, got " + v.dump());
      }
      const double x = v.get<double>();
      if (key == "init_scale") t.init_scale = x;
      else if (key == "keep_dropout") t.keep_dropout = x;
      else if (key == "lr") t.lr = x;
      else if (key == "lr_decay") t.lr_decay = x;
      else if (key == "penalty_weight") t.penalty_weight = x;
      return;
    }
    case Kind::Size: {
      const std::uint64_t n = as_size(spec, v);
      if (key == "d_h") t.d_h = n;
      else if (key == "d_z") t.d_z = n;
      else if (key == "dc_hidden") t.dc_hidden = n;
      else if (key == "beam_width") t.beam_width = n;
      else if (key == "top_k") t.top_k = n;
      else if (key == "samples") t.samples = n;
      else if (key == "decay_start_epochs") t.decay_start_epochs = n;
      else if (key == "num_steps") t.num_steps = n;
      else if (key == "kl_anneal_steps") t.kl_anneal_steps = n;
      else if (key == "max_epochs") t.max_epochs = n;
      else if (key == "patience") t.patience = n;
      else if (key == "max_len") t.max_len = n;
      else if (key == "seed") t.seed = n;
      return;
    }
  }
}

json flag_to_json(const KeySpec& spec, const std::string& text) {
  auto bad = [&](const char* what) {
    return ConfigError(std::string("flag --") + spec.flag + " (config key '" + spec.key +
                       "') must be " + what + ", got '" + text + "'");
  };
  switch (spec.kind) {
    case Kind::Path:
      return text;
    case Kind::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad("true or false");
    case Kind::Size: {
      if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
        throw bad("a non-negative integer");
      }
      try {
        return std::stoull(text);
      } catch (const std::exception&) {
        throw bad("a non-negative integer");
      }
    }
    case Kind::Real: {
      std::size_t used = 0;
      double x = 0;
      try {
        x = std::stod(text, &used);
      } catch (const std::exception&) {
        throw bad("a number");
      }
      if (used != text.size()) throw bad("a number");
      return x;
    }
  }
  return nullptr;
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path + " must hold a JSON object");
  return j;
}

RunConfig resolve_config(const std::optional<std::string>& file,
                         const std::map<std::string, std::string>& flags) {
  RunConfig cfg;
  if (file) {
    const json doc = read_config_file(*file);
    for (const auto& [key, value] : doc.items()) {
      const KeySpec* spec = find_key(key);
      if (spec == nullptr) throw ConfigError("unknown config key '" + key + "'");
      assign(cfg, *spec, value);
    }
  }
  for (const auto& [key, text] : flags) {
    const KeySpec* spec = find_key(key);
    assign(cfg, *spec, flag_to_json(*spec, text));
  }
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

void require_exists(const RunConfig& cfg, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    if (auto p = cfg.path(key); p && !std::filesystem::exists(*p)) {
      throw ConfigError("config key '" + std::string(key) + "': file not found: " + *p);
    }
  }
}

std::vector<corpus::Example> load_optional(const RunConfig& cfg, const char* key,
                                           corpus::Domain domain) {
  auto p = cfg.path(key);
  if (!p) return {};
  return corpus::load_dataset(*p, domain);
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

std::size_t count_unknown(std::span<const training::TrainExample> examples) {
  std::size_t n = 0;
  for (const auto& ex : examples) {
    n += static_cast<std::size_t>(std::count(ex.ref.begin(), ex.ref.end(), corpus::kUnk));
  }
  return n;
}

void print_epochs(const training::TrainLog& log, std::ostream& out) {
  for (const auto& e : log.epochs()) {
    out << e.phase << " epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean_loss;
    if (e.validation_bleu) out << " validation_bleu " << *e.validation_bleu;
    out << '\n';
  }
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_exists(cfg, {"source", "validation", "target", "target_validation"});
  const std::string ckpt_path = cfg.required_path("checkpoint_out");
  const auto source = corpus::load_dataset(cfg.required_path("source"), corpus::Domain::Source);
  const auto validation = load_optional(cfg, "validation", corpus::Domain::Source);
  std::vector<corpus::Example> all = source;
  all.insert(all.end(), validation.begin(), validation.end());
  for (const char* key : {"target", "target_validation"}) {
    const auto extra = load_optional(cfg, key, corpus::Domain::Target);
    all.insert(all.end(), extra.begin(), extra.end());
  }
  const corpus::Vocab vocab = corpus::build_vocab(all);
  const auto train_set = training::encode_examples(source, vocab);
  const auto val_set = training::encode_examples(validation, vocab);

  std::ofstream log_file;
  if (auto p = cfg.path("log")) log_file = open_output(*p);
  training::TrainLog log(log_file.is_open() ? &log_file : nullptr);
  auto save = [&](const Model& model, std::uint64_t steps) {
    save_checkpoint(ckpt_path, {model, vocab, steps});
  };
  const auto result =
      training::pretrain_source(train_set, val_set, vocab, cfg.train, log, save);
  print_epochs(log, out);
  out << "vocabulary " << vocab.size() << ", steps " << result.steps << ", checkpoint "
      << ckpt_path << '\n';
  return kOk;
}

int cmd_adapt(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_exists(cfg, {"source", "target", "target_validation", "checkpoint_in"});
  const std::string ckpt_path = cfg.required_path("checkpoint_out");
  const std::string target_path = cfg.required_path("target");
  const Checkpoint ckpt = load_checkpoint(cfg.required_path("checkpoint_in"));
  const auto target = training::encode_examples(
      corpus::load_dataset(target_path, corpus::Domain::Target), ckpt.vocab);
  const auto target_val = training::encode_examples(
      load_optional(cfg, "target_validation", corpus::Domain::Target), ckpt.vocab);
  std::vector<training::TrainExample> source;
  if (cfg.train.use_dc || cfg.train.use_sc) {
    source = training::encode_examples(
        corpus::load_dataset(cfg.required_path("source"), corpus::Domain::Source),
        ckpt.vocab);
  }
  if (const std::size_t unk = count_unknown(target) + count_unknown(target_val); unk > 0) {
    err << "warning: " << unk << " target reference tokens are outside the checkpoint "
        << "vocabulary and map to <unk>\n";
  }

  std::ofstream log_file;
  if (auto p = cfg.path("log")) log_file = open_output(*p);
  training::TrainLog log(log_file.is_open() ? &log_file : nullptr);
  auto save = [&](const Model& model, std::uint64_t steps) {
    save_checkpoint(ckpt_path, {model, ckpt.vocab, steps});
  };
  if (target.empty()) save(ckpt.model, ckpt.train_steps);
  const auto result = training::adapt(source, target, target_val, ckpt.model,
                                      ckpt.train_steps, ckpt.vocab, cfg.train, log, save);
  print_epochs(log, out);
  out << "dc updates " << result.stats.dc_updates << ", generator updates "
      << result.stats.gen_updates << ", sc updates " << result.stats.sc_updates
      << ", checkpoint " << ckpt_path << '\n';
  return kOk;
}

std::vector<corpus::DialogueAct> read_dialogue_acts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::vector<corpus::DialogueAct> das;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw corpus::DataError(path + ": malformed JSON record", line_no);
    }
    if (!j.is_object() || !j.contains("da") || !j["da"].is_string()) {
      throw corpus::DataError(path + ": record lacks a string field \"da\"", line_no);
    }
    try {
      das.push_back(corpus::parse_dialogue_act(j["da"].get<std::string>()));
    } catch (const corpus::ParseError& e) {
      throw corpus::DataError(path + ": " + e.what(), line_no);
    }
  }
  return das;
}

int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  require_exists(cfg, {"checkpoint_in", "input"});
  const Checkpoint ckpt = load_checkpoint(cfg.required_path("checkpoint_in"));
  const auto das = read_dialogue_acts(cfg.required_path("input"));
  const std::string out_path = cfg.required_path("output");
  std::ofstream file;
  if (out_path != "-") file = open_output(out_path);
  std::ostream& sink = out_path == "-" ? out : file;
  const auto lexicon = evaluation::default_lexicon();
  const auto& t = cfg.train;
  for (std::size_t i = 0; i < das.size(); ++i) {
    const auto encoded = corpus::encode_dialogue_act(das[i], ckpt.vocab);
    auto ranked = evaluation::rerank(
        generator::beam_search(ckpt.model, ckpt.vocab, encoded, t.beam_width, t.max_len),
        das[i], t.penalty_weight, lexicon);
    if (ranked.size() > t.top_k) ranked.resize(t.top_k);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& c = ranked[r];
      nlohmann::ordered_json rec;
      rec["da"] = corpus::format_dialogue_act(das[i]);
      rec["index"] = i;
      rec["rank"] = r + 1;
      rec["score"] = c.score;
      rec["log_prob"] = c.log_prob;
      rec["tokens"] = join(c.tokens.tokens);
      rec["text"] = corpus::relexicalize(c.tokens.tokens, das[i]);
      rec["missing"] = c.missing;
      rec["redundant"] = c.redundant;
      rec["finished"] = c.finished;
      sink << rec.dump() << '\n';
    }
  }
  if (out_path != "-") out << "wrote candidates for " << das.size() << " dialogue acts to "
                           << out_path << '\n';
  return kOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  require_exists(cfg, {"candidates", "references"});
  const std::string cand_path = cfg.required_path("candidates");
  const auto refs = corpus::load_dataset(cfg.required_path("references"));
  std::map<std::size_t, std::pair<std::string, std::vector<std::string>>> best;
  std::ifstream in(cand_path);
  if (!in) throw InputError("cannot read " + cand_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw corpus::DataError(cand_path + ": malformed JSON record", line_no);
    }
    if (!j.is_object() || !j.contains("index") || !j["index"].is_number_unsigned() ||
        !j.contains("rank") || !j["rank"].is_number_unsigned() || !j.contains("tokens") ||
        !j["tokens"].is_string() || !j.contains("da") || !j["da"].is_string()) {
      throw corpus::DataError(cand_path + ": record needs da, index, rank and tokens",
                              line_no);
    }
    if (j["rank"].get<std::size_t>() != 1) continue;
    const auto index = j["index"].get<std::size_t>();
    std::istringstream tokens(j["tokens"].get<std::string>());
    std::vector<std::string> toks{std::istream_iterator<std::string>(tokens), {}};
    best[index] = {j["da"].get<std::string>(), std::move(toks)};
  }

  std::vector<evaluation::Tokens> cands, references;
  std::vector<corpus::DialogueAct> das;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto it = best.find(i);
    if (it != best.end() &&
        corpus::parse_dialogue_act(it->second.first) != refs[i].da) {
      throw InputError("candidate " + std::to_string(i) + " was generated for " +
                       it->second.first + " but the reference has " +
                       corpus::format_dialogue_act(refs[i].da));
    }
    cands.push_back(it == best.end() ? evaluation::Tokens{} : it->second.second);
    references.push_back(refs[i].reference.tokens);
    das.push_back(refs[i].da);
  }
  if (refs.empty()) throw InputError("reference file holds no examples");
  const auto report =
      evaluation::evaluate(cands, references, das, evaluation::default_lexicon());
  if (auto p = cfg.path("report")) {
    auto file = open_output(*p);
    file << evaluation::report_json(report) << '\n';
  }
  out << evaluation::report_table(report);
  return kOk;
}

struct Subcommand {
  Command command;
  CLI::App* app;
};

}  // namespace

int run(const std::vector<std::string>& args) { return run(args, std::cout, std::cerr); }

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Variational domain-adaptation generator for dialogue acts", "vdanlg");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::optional<std::string> config_file;
  std::map<std::string, std::string> flag_values;
  const std::vector<std::pair<Command, std::pair<const char*, const char*>>> commands = {
      {kTrain, {"train", "Pretrain the generator on the source domain"}},
      {kAdapt, {"adapt", "Adapt a pretrained checkpoint to the target domain with critics"}},
      {kGenerate, {"generate", "Beam search, re-rank and relexicalize dialogue acts"}},
      {kEvaluate, {"evaluate", "Score rank-1 candidates against references (BLEU, ERR)"}},
  };
  std::vector<Subcommand> subs;
  for (const auto& [command, names] : commands) {
    CLI::App* sub = app.add_subcommand(names.first, names.second);
    sub->add_option_function<std::string>(
        "--config", [&](const std::string& v) { config_file = v; },
        "JSON object of config keys; flags override it");
    for (const auto& spec : key_specs()) {
      if ((spec.commands & command) == 0) continue;
      sub->add_option_function<std::string>(
          std::string("--") + spec.flag,
          [&flag_values, key = std::string(spec.key)](const std::string& v) {
            flag_values[key] = v;
          },
          std::string(spec.help) + " [key " + spec.key + "]");
    }
    subs.push_back({command, sub});
  }

  if (!args.empty() && !args[0].starts_with("-") &&
      std::none_of(commands.begin(), commands.end(),
                   [&](const auto& c) { return args[0] == c.second.first; })) {
    err << "error: unknown command '" << args[0] << "'\n\n" << app.help();
    return kUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    const RunConfig cfg = resolve_config(config_file, flag_values);
    for (const auto& s : subs) {
      if (!s.app->parsed()) continue;
      switch (s.command) {
        case kTrain: return cmd_train(cfg, out);
        case kAdapt: return cmd_adapt(cfg, out, err);
        case kGenerate: return cmd_generate(cfg, out);
        case kEvaluate: return cmd_evaluate(cfg, out);
      }
    }
    err << app.help();
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const corpus::DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const corpus::ParseError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const InputError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace vdanlg::cli
