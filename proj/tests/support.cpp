#include "support.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace vdanlg::testing {

ad::Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                         double scale) {
  ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Vec matvec(const Mat& W, const Vec& x) {
  Vec out(W.size(), 0.0);
  for (std::size_t r = 0; r < W.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) out[r] += W[r][c] * x[c];
  }
  return out;
}

Mat to_mat(const ad::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t[r * t.cols() + c];
  }
  return m;
}

Vec to_vec(const ad::Tensor& t) { return {t.values().begin(), t.values().end()}; }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void lstm_step(const Mat& W, const Vec& b, const Vec& x, Vec& h, Vec& c) {
  const std::size_t H = h.size();
  Vec in = x;
  in.insert(in.end(), h.begin(), h.end());
  Vec gates = matvec(W, in);
  for (std::size_t k = 0; k < gates.size(); ++k) gates[k] += b[k];
  for (std::size_t k = 0; k < H; ++k) {
    const double i = sigmoid(gates[k]);
    const double f = sigmoid(gates[H + k]);
    const double o = sigmoid(gates[2 * H + k]);
    const double g = std::tanh(gates[3 * H + k]);
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

std::vector<corpus::Example> toy_corpus() {
  const std::vector<std::pair<const char*, const char*>> pairs = {
      {"inform(name='satellite heracles 45'; type='laptop'; price='1200 dollars')",
       "the satellite heracles 45 is a laptop that costs 1200 dollars ."},
      {"inform(name='tecra erebus 20'; memory='4 gb')",
       "tecra erebus 20 has 4 gb of memory ."},
      {"inform(name='portege phosphorus 43'; isforbusinesscomputing='false')",
       "portege phosphorus 43 is not for business computing ."},
      {"inform(name='crios 69'; isforbusinesscomputing='true'; battery='9 hour')",
       "crios 69 is for business computing with a 9 hour battery life ."},
      {"compare(name='dinlas 61'; price='800 dollars'; name='hermes 12'; price='950 dollars')",
       "dinlas 61 costs 800 dollars while hermes 12 costs 950 dollars ."},
      {"confirm(drive='320 gb')", "do you want a 320 gb drive ?"},
      {"inform_count(count='12'; type='laptop')", "there are 12 laptop models available ."},
      {"inform(name='zeus 7'; weight='2.1 kg'; drive='500 gb')",
       "zeus 7 weighs 2.1 kg and has a 500 gb drive ."},
      {"goodbye()", "thank you , goodbye ."},
      {"recommend(name='apollo 3'; family='satellite')",
       "apollo 3 from the satellite family is a good choice ."},
  };
  std::vector<corpus::Example> out;
  for (const auto& [da, ref] : pairs) {
    out.push_back(corpus::make_example(corpus::parse_dialogue_act(da), ref,
                                       corpus::Domain::Source));
  }
  return out;
}

namespace {

struct DomainSpec {
  corpus::Domain domain;
  const char* noun;
  const char* attribute_word;
  // Slot names for the entity role and five attribute roles.
  std::array<const char*, 6> slots;
  std::array<std::vector<const char*>, 6> values;
};

const DomainSpec& spec_for(corpus::Domain d) {
  static const DomainSpec source{
      corpus::Domain::Source,
      "restaurant",
      "food",
      {"name", "food", "area", "pricerange", "near", "goodformeal"},
      {{{"curry prince", "bangkok city", "la margherita", "the eagle", "pipasha"},
        {"italian", "chinese", "indian", "french", "thai"},
        {"north", "south", "centre", "east", "west"},
        {"cheap", "moderate", "expensive"},
        {"the station", "the park", "the museum"},
        {"lunch", "dinner", "breakfast"}}}};
  static const DomainSpec target{
      corpus::Domain::Target,
      "hotel",
      "stars",
      {"hotel", "stars", "district", "rate", "landmark", "suitablefor"},
      {{{"acorn house", "gonville", "lensfield lodge", "alpha milton", "aylesbray"},
        {"2", "3", "4", "5"},
        {"riverside", "harbour", "old town", "uptown", "midtown"},
        {"budget", "mid range", "luxury"},
        {"the castle", "the bridge", "the market"},
        {"families", "couples", "business"}}}};
  return d == corpus::Domain::Source ? source : target;
}

// Both domains share one phrase per attribute role.
std::string role_phrase(const DomainSpec& spec, std::size_t role, const std::string& v) {
  switch (role) {
    case 1: return "serving " + v + " " + spec.attribute_word;
    case 2: return "in the " + v + " area";
    case 3: return "with " + v + " prices";
    case 4: return "near " + v;
    default: return "good for " + v;
  }
}

corpus::Example sample_example(const DomainSpec& spec, std::mt19937_64& rng) {
  auto pick = [&](std::size_t role) {
    const auto& vals = spec.values[role];
    std::uniform_int_distribution<std::size_t> u(0, vals.size() - 1);
    return std::string(vals[u(rng)]);
  };
  auto slot = [&](std::size_t role, const std::string& value) {
    return std::string(spec.slots[role]) + "='" + value + "'";
  };
  std::uniform_int_distribution<std::size_t> any_role(1, 5);
  std::bernoulli_distribution coin(0.5);
  const std::string noun = spec.noun;
  std::uniform_int_distribution<int> act_dist(0, 9);
  const int act = act_dist(rng);
  std::string da, ref;
  if (act < 4) {
    const std::string e = pick(0);
    da = "inform(" + slot(0, e);
    ref = e + " is a nice " + noun;
    for (std::size_t role = 1; role <= 5; ++role) {
      if (!coin(rng)) continue;
      const std::string v = pick(role);
      da += "; " + slot(role, v);
      ref += " " + role_phrase(spec, role, v);
    }
    da += ")";
    ref += " .";
  } else if (act < 5) {
    const std::string b = pick(2);
    da = "inform_no_match(" + slot(2, b);
    ref = "there is no " + noun + " in the " + b + " area";
    if (coin(rng)) {
      const std::string v = pick(3);
      da += "; " + slot(3, v);
      ref += " with " + v + " prices";
    }
    da += ")";
    ref += " .";
  } else if (act < 6) {
    const std::size_t role = any_role(rng);
    const std::string v = pick(role);
    da = "confirm(" + slot(role, v) + ")";
    ref = "do you want a " + noun + " " + role_phrase(spec, role, v) + " ?";
  } else if (act < 7) {
    const std::size_t a = any_role(rng);
    std::size_t b = any_role(rng);
    while (b == a) b = any_role(rng);
    const auto [first, second] = std::minmax(a, b);
    const std::string e = pick(0), v = pick(first), w = pick(second);
    da = "recommend(" + slot(0, e) + "; " + slot(first, v) + "; " + slot(second, w) + ")";
    ref = "i recommend " + e + " , it is " + role_phrase(spec, first, v) + " and " +
          role_phrase(spec, second, w) + " .";
  } else if (act < 8) {
    const std::string e = pick(0), f = pick(0), v = pick(3), w = pick(3);
    da = "compare(" + slot(0, e) + "; " + slot(3, v) + "; " + slot(0, f) + "; " +
         slot(3, w) + ")";
    ref = e + " has " + v + " prices while " + f + " has " + w + " prices .";
  } else if (act < 9) {
    da = "reqmore()";
    ref = "is there anything else i can help you with ?";
  } else {
    da = "goodbye()";
    ref = "thank you , goodbye .";
  }
  return corpus::make_example(corpus::parse_dialogue_act(da), ref, spec.domain);
}

std::vector<corpus::Example> sample_set(corpus::Domain d, std::size_t n,
                                        std::mt19937_64& rng) {
  std::vector<corpus::Example> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_example(spec_for(d), rng));
  return out;
}

}  // namespace

TwoDomainCorpus two_domain_corpus(std::uint64_t seed, std::size_t n_source,
                                  std::size_t n_target, std::size_t n_validation,
                                  std::size_t n_test) {
  std::mt19937_64 rng(seed);
  TwoDomainCorpus c;
  c.source = sample_set(corpus::Domain::Source, n_source, rng);
  c.source_validation = sample_set(corpus::Domain::Source, n_validation, rng);
  c.target = sample_set(corpus::Domain::Target, n_target, rng);
  c.target_validation = sample_set(corpus::Domain::Target, n_validation, rng);
  c.target_test = sample_set(corpus::Domain::Target, n_test, rng);
  return c;
}

}  // namespace vdanlg::testing

namespace vdanlg::testing {

namespace {

struct PriorDecoder {
  ad::Graph g;
  const Model& model;
  ad::Var h_e;
  generator::AttentionMemory mem;

  PriorDecoder(const Model& m, const corpus::EncodedDa& da) : model(m) {
    auto enc = generator::encode_dialogue_act(g, model, da);
    h_e = generator::project_latent(g, model, generator::prior(g, model, enc.pooled).mu);
    mem = generator::prepare_attention(g, model, enc.states);
  }

  // Log-distribution of the next token and the advanced state.
  std::pair<std::vector<double>, generator::DecoderState> step(
      int previous, const generator::DecoderState& state) {
    ad::Var y = ad::lookup(g.param(model.param("embed")), static_cast<std::size_t>(previous));
    ad::Var d_t = generator::attend_da(g, model, mem, state.h);
    auto out = generator::decode_step(g, model, y, h_e, d_t, state);
    return {ad::log_softmax(out.logits.value().values()), out.state};
  }
};

void enumerate(PriorDecoder& dec, const generator::DecoderState& state, int previous,
               std::vector<int>& prefix, double lp, std::size_t max_len,
               std::vector<Enumerated>& out) {
  const auto [logp, next] = dec.step(previous, state);
  out.push_back({prefix, lp + logp[corpus::kEos]});
  if (prefix.size() + 1 >= max_len) return;
  for (std::size_t tok = 0; tok < logp.size(); ++tok) {
    if (static_cast<int>(tok) == corpus::kEos) continue;
    prefix.push_back(static_cast<int>(tok));
    enumerate(dec, next, static_cast<int>(tok), prefix, lp + logp[tok], max_len, out);
    prefix.pop_back();
  }
}

}  // namespace

double prefix_log_prob(const Model& model, const corpus::EncodedDa& da,
                       std::span<const int> ids) {
  PriorDecoder dec(model, da);
  auto state = generator::initial_decoder_state(dec.g, model);
  int previous = corpus::kBos;
  double lp = 0;
  for (int id : ids) {
    auto [logp, next] = dec.step(previous, state);
    lp += logp[static_cast<std::size_t>(id)];
    state = next;
    previous = id;
  }
  return lp;
}

std::vector<Enumerated> enumerate_finished(const Model& model,
                                           const corpus::EncodedDa& da,
                                           std::size_t max_len) {
  PriorDecoder dec(model, da);
  std::vector<Enumerated> out;
  std::vector<int> prefix;
  enumerate(dec, generator::initial_decoder_state(dec.g, model), corpus::kBos, prefix, 0.0,
            max_len, out);
  return out;
}

Enumerated exhaustive_best(const std::vector<Enumerated>& all) {
  const Enumerated* best = &all.front();
  auto norm = [](const Enumerated& e) {
    return e.log_prob / static_cast<double>(e.ids.size() + 1);
  };
  for (const auto& e : all) {
    if (norm(e) > norm(*best)) best = &e;
  }
  return *best;
}

}  // namespace vdanlg::testing
