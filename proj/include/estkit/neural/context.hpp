#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "estkit/core/binio.hpp"
#include "estkit/core/error.hpp"
#include "estkit/core/rng.hpp"
#include "estkit/systems/system.hpp"

namespace estkit::neural {

// Byte vocabulary plus two specials.
inline constexpr int kBosToken = 256;
inline constexpr int kSepToken = 257;
inline constexpr int kContextVocab = 258;
inline constexpr std::size_t kDefaultMaxContextTokens = 512;

// Placeholders: {system} {domain} {state_dim} {obs_dim} {state_semantics}
// {obs_semantics}.
inline const char* kDefaultInstructionTemplate =
    "{system} system ({domain}), state dimension {state_dim}: {state_semantics}; "
    "observation dimension {obs_dim}: {obs_semantics}. Estimate the states.";

struct SaPContext {
  std::string instruction_text;
  std::string example_text;
  std::vector<int> token_ids;  // BOS, instruction bytes, SEP, example bytes

  std::size_t size() const { return token_ids.size(); }
};

// An (observation excerpt, state excerpt) pair of equal length.
using SaPExample = std::pair<Series, Series>;

inline std::string display_name(const std::string& system) {
  static const std::map<std::string, std::string> names = {
      {"tracking", "Tracking"}, {"selkov", "Selkov"},     {"oscillator", "Oscillator"}, {"hopf", "Hopf"},
      {"pendulum", "Pendulum"}, {"lorenz96", "Lorenz96"}, {"vl20", "VL20"}};
  auto it = names.find(system);
  return it == names.end() ? system : it->second;
}

inline std::string fill_template(std::string text, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (std::size_t pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + value.size()))
      text.replace(pos, token.size(), value);
  }
  if (const auto open = text.find('{'); open != std::string::npos) {
    const auto close = text.find('}', open);
    throw ConfigError("unknown placeholder " + text.substr(open, close == std::string::npos ? 1 : close - open + 1) +
                      " in context template");
  }
  return text;
}

inline std::string load_template(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  std::string text(bytes.begin(), bytes.end());
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

inline std::string render_instruction(const SystemModel& sys, const std::string& tmpl = kDefaultInstructionTemplate) {
  return fill_template(tmpl, {{"system", display_name(sys.name)},
                              {"domain", sys.domain},
                              {"state_dim", std::to_string(sys.state_dim)},
                              {"obs_dim", std::to_string(sys.obs_dim)},
                              {"state_semantics", sys.state_semantics},
                              {"obs_semantics", sys.obs_semantics}});
}

namespace detail {

inline void append_row(std::string& out, const Series& a, Index t) {
  char buf[32];
  for (Index c = 0; c < a.cols(); ++c) {
    std::snprintf(buf, sizeof buf, c == 0 ? "%.3f" : ",%.3f", a(t, c));
    out += buf;
  }
}

}  // namespace detail

// One line per step: "y=<obs> x=<state>"; examples separated by '|'.
inline std::string render_examples(const std::vector<SaPExample>& examples) {
  std::string out;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& [obs, states] = examples[e];
    if (obs.rows() != states.rows()) throw ShapeError("example observation and state excerpts differ in length");
    if (e > 0) out += "|";
    for (Index t = 0; t < obs.rows(); ++t) {
      out += "y=";
      detail::append_row(out, obs, t);
      out += " x=";
      detail::append_row(out, states, t);
      out += "\n";
    }
  }
  return out;
}

// Renders and byte-tokenizes the context. At most 2 examples are used; if the
// result exceeds max_tokens the example text is cut from its end.
inline SaPContext build_sap_context(const SystemModel& sys, const std::vector<SaPExample>& examples,
                                    std::size_t max_tokens = kDefaultMaxContextTokens,
                                    const std::string& tmpl = kDefaultInstructionTemplate) {
  SaPContext ctx;
  ctx.instruction_text = render_instruction(sys, tmpl);
  const std::vector<SaPExample> used(examples.begin(), examples.begin() + std::min<std::size_t>(examples.size(), 2));
  ctx.example_text = render_examples(used);
  const std::size_t fixed = ctx.instruction_text.size() + 2;
  if (fixed > max_tokens)
    throw ConfigError("context instruction needs " + std::to_string(fixed) + " tokens but max_tokens is " +
                      std::to_string(max_tokens));
  if (fixed + ctx.example_text.size() > max_tokens) ctx.example_text.resize(max_tokens - fixed);
  ctx.token_ids.reserve(fixed + ctx.example_text.size());
  ctx.token_ids.push_back(kBosToken);
  for (unsigned char ch : ctx.instruction_text) ctx.token_ids.push_back(ch);
  ctx.token_ids.push_back(kSepToken);
  for (unsigned char ch : ctx.example_text) ctx.token_ids.push_back(ch);
  return ctx;
}

// Draws `count` excerpts of `steps` consecutive steps from the given
// trajectories (callers pass training trajectories only).
inline std::vector<SaPExample> sample_examples(const std::vector<const Trajectory*>& pool, std::size_t count,
                                               Index steps, Rng& rng) {
  if (pool.empty()) throw ConfigError("no trajectories to draw context examples from");
  std::vector<SaPExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Trajectory& tr = *pool[static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool.size())) % pool.size()];
    const Index len = std::min(steps, tr.length());
    const Index start = static_cast<Index>(rng.uniform() * static_cast<double>(tr.length() - len + 1)) % (tr.length() - len + 1);
    out.emplace_back(tr.observations.middleRows(start, len), tr.states.middleRows(start, len));
  }
  return out;
}

}  // namespace estkit::neural
