#include "surveysim/prompts.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "surveysim/errors.hpp"
#include "surveysim/fingerprint.hpp"

#ifndef SURVEYSIM_DEFAULT_TEMPLATE_DIR
#define SURVEYSIM_DEFAULT_TEMPLATE_DIR "templates"
#endif

namespace surveysim {

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::direct: return "direct";
    case PromptKind::cot: return "cot";
    case PromptKind::claim_generation: return "claim_generation";
    case PromptKind::summary_generation: return "summary_generation";
    case PromptKind::claimsim_answer: return "claimsim_answer";
  }
  return "?";
}

std::string_view template_filename(PromptKind kind) {
  switch (kind) {
    case PromptKind::direct: return "direct.tmpl";
    case PromptKind::cot: return "cot.tmpl";
    case PromptKind::claim_generation: return "claim_generation.tmpl";
    case PromptKind::summary_generation: return "summary_generation.tmpl";
    case PromptKind::claimsim_answer: return "claimsim_answer.tmpl";
  }
  return "?";
}

std::string render_label_choices(std::span<const std::string> labels) {
  std::string out = "[";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += ", ";
    out += "'";
    out += labels[i];
    out += "'";
  }
  out += "]";
  return out;
}

namespace tmpl {
namespace {

std::string trim(std::string_view text) {
  std::size_t begin = text.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  std::size_t end = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(begin, end - begin + 1));
}

struct ForDirective {
  std::string var_a;
  std::string var_b;  // empty for single-variable loops
  std::string list_name;
};

// "for a, b in name" / "for a in name"
ForDirective parse_for(std::string_view body) {
  std::istringstream in{std::string(body)};
  std::string kw, a, in_kw, name;
  in >> kw >> a;
  ForDirective d;
  if (a.ends_with(',')) {
    a.pop_back();
    std::string b;
    in >> b >> in_kw >> name;
    d.var_b = b;
  } else if (in >> in_kw && in_kw == ",") {
    std::string b;
    in >> b >> in_kw >> name;
    d.var_b = b;
  } else {
    name = {};
    in >> name;
  }
  d.var_a = a;
  d.list_name = name;
  if (kw != "for" || in_kw != "in" || d.var_a.empty() || d.list_name.empty()) {
    throw Error("template: malformed for directive '" + std::string(body) + "'");
  }
  return d;
}

void substitute_line(std::string_view text, const Bindings& bindings,
                     const std::map<std::string, std::string, std::less<>>& locals,
                     std::string& out) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      return;
    }
    out.append(text.substr(pos, open - pos));
    std::size_t close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error("template: unterminated placeholder");
    }
    std::string name = trim(text.substr(open + 2, close - open - 2));
    if (auto it = locals.find(name); it != locals.end()) {
      out.append(it->second);
    } else if (auto it2 = bindings.scalars.find(name); it2 != bindings.scalars.end()) {
      out.append(it2->second);
    } else {
      throw Error("template: unknown placeholder '" + name + "'");
    }
    pos = close + 2;
  }
}

// A directive line is a line whose only content is one {% ... %} block.
bool directive_of_line(std::string_view line, std::string& directive) {
  std::string t = trim(line);
  if (!t.starts_with("{%") || !t.ends_with("%}")) return false;
  directive = trim(std::string_view(t).substr(2, t.size() - 4));
  return true;
}

std::vector<std::string_view> split_lines(std::string_view source) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= source.size()) {
    std::size_t nl = source.find('\n', pos);
    if (nl == std::string_view::npos) {
      if (pos < source.size()) lines.push_back(source.substr(pos));
      break;
    }
    lines.push_back(source.substr(pos, nl - pos + 1));  // keep the newline
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

std::string render(std::string_view source, const Bindings& bindings) {
  const auto lines = split_lines(source);
  std::string out;
  out.reserve(source.size());

  const std::map<std::string, std::string, std::less<>> no_locals;
  std::size_t i = 0;
  while (i < lines.size()) {
    std::string directive;
    if (!directive_of_line(lines[i], directive)) {
      substitute_line(lines[i], bindings, no_locals, out);
      ++i;
      continue;
    }
    if (!directive.starts_with("for")) {
      throw Error("template: unexpected directive '" + directive + "'");
    }
    const ForDirective d = parse_for(directive);

    // Collect the body up to the matching endfor line.
    std::size_t body_begin = i + 1;
    std::size_t body_end = body_begin;
    bool closed = false;
    std::string inner;
    for (; body_end < lines.size(); ++body_end) {
      if (directive_of_line(lines[body_end], inner) && inner == "endfor") {
        closed = true;
        break;
      }
    }
    if (!closed) {
      throw Error("template: for over '" + d.list_name + "' has no endfor");
    }

    auto render_body = [&](const std::map<std::string, std::string, std::less<>>& locals) {
      for (std::size_t b = body_begin; b < body_end; ++b) {
        substitute_line(lines[b], bindings, locals, out);
      }
    };

    if (!d.var_b.empty()) {
      auto it = bindings.pair_lists.find(d.list_name);
      if (it == bindings.pair_lists.end()) {
        throw Error("template: unknown pair list '" + d.list_name + "'");
      }
      for (const auto& [a, b] : it->second) {
        render_body({{d.var_a, a}, {d.var_b, b}});
      }
    } else {
      auto it = bindings.string_lists.find(d.list_name);
      if (it == bindings.string_lists.end()) {
        throw Error("template: unknown string list '" + d.list_name + "'");
      }
      for (const auto& a : it->second) {
        render_body({{d.var_a, a}});
      }
    }
    i = body_end + 1;  // skip past the endfor line
  }
  return out;
}

}  // namespace tmpl

namespace {

std::string read_file_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open template file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

tmpl::Bindings question_bindings(const SurveyQuestion& question) {
  tmpl::Bindings b;
  b.scalars["domain"] = std::string(to_string(question.domain));
  b.scalars["instruction"] = question.instruction;
  b.scalars["question"] = question.question;
  b.scalars["labels"] = render_label_choices(question.labels);
  return b;
}

void record_scalars(const tmpl::Bindings& b, RenderedPrompt& prompt) {
  for (const auto& [name, value] : b.scalars) {
    prompt.bindings.emplace_back(name, value);
  }
}

void record_pairs(std::string_view list_name,
                  std::span<const std::pair<std::string, std::string>> pairs,
                  RenderedPrompt& prompt) {
  std::size_t i = 0;
  for (const auto& [a, b] : pairs) {
    prompt.bindings.emplace_back(std::string(list_name) + "[" + std::to_string(i) + "]",
                                 a + ": " + b);
    ++i;
  }
}

}  // namespace

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  TemplateSet set;
  set.dir_ = dir;

  const auto manifest_path = dir / "manifest.json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file_or_throw(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  const auto& files = manifest.at("files");

  for (std::size_t i = 0; i < kAllPromptKinds.size(); ++i) {
    const auto filename = std::string(template_filename(kAllPromptKinds[i]));
    const auto path = dir / filename;
    std::string text = read_file_or_throw(path);
    if (!files.contains(filename)) {
      throw ValidationError("template manifest does not list " + filename);
    }
    const std::string expected = files.at(filename).get<std::string>();
    const std::string actual = sha256_hex(text);
    if (actual != expected) {
      throw ValidationError("template checksum mismatch for " + path.string() + ": expected " +
                            expected + ", file hashes to " + actual);
    }
    set.sources_[i] = std::move(text);
  }
  return set;
}

std::filesystem::path TemplateSet::default_dir() {
  if (const char* env = std::getenv("SURVEYSIM_TEMPLATES"); env != nullptr && *env != '\0') {
    return env;
  }
  return SURVEYSIM_DEFAULT_TEMPLATE_DIR;
}

const std::string& TemplateSet::source(PromptKind kind) const {
  return sources_[static_cast<std::size_t>(kind)];
}

RenderedPrompt TemplateSet::render_direct(const DemographicProfile& profile,
                                          const SurveyQuestion& question) const {
  tmpl::Bindings b = question_bindings(question);
  b.pair_lists["demo_infos"] = profile.features;

  RenderedPrompt prompt{PromptKind::direct, {}, {}};
  prompt.text = tmpl::render(source(PromptKind::direct), b);
  record_scalars(b, prompt);
  record_pairs("demo_infos", profile.features, prompt);
  return prompt;
}

RenderedPrompt TemplateSet::render_cot(const DemographicProfile& profile,
                                       const SurveyQuestion& question) const {
  tmpl::Bindings b = question_bindings(question);
  b.pair_lists["demo_infos"] = profile.features;

  RenderedPrompt prompt{PromptKind::cot, {}, {}};
  prompt.text = tmpl::render(source(PromptKind::cot), b);
  record_scalars(b, prompt);
  record_pairs("demo_infos", profile.features, prompt);
  return prompt;
}

RenderedPrompt TemplateSet::render_claim(const std::pair<std::string, std::string>& feature,
                                         const SurveyQuestion& question) const {
  tmpl::Bindings b;
  b.scalars["feature_category"] = feature.first;
  b.scalars["feature_label"] = feature.second;
  b.scalars["question"] = question.question;

  RenderedPrompt prompt{PromptKind::claim_generation, {}, {}};
  prompt.text = tmpl::render(source(PromptKind::claim_generation), b);
  record_scalars(b, prompt);
  return prompt;
}

RenderedPrompt TemplateSet::render_summary(const std::pair<std::string, std::string>& feature,
                                           std::span<const std::string> claims) const {
  if (claims.empty()) {
    throw UsageError("render_summary: claim list is empty");
  }
  tmpl::Bindings b;
  b.scalars["feature_category"] = feature.first;
  b.scalars["feature_label"] = feature.second;
  b.string_lists["claims"] = {claims.begin(), claims.end()};

  RenderedPrompt prompt{PromptKind::summary_generation, {}, {}};
  prompt.text = tmpl::render(source(PromptKind::summary_generation), b);
  record_scalars(b, prompt);
  for (std::size_t i = 0; i < claims.size(); ++i) {
    prompt.bindings.emplace_back("claims[" + std::to_string(i) + "]", claims[i]);
  }
  return prompt;
}

RenderedPrompt TemplateSet::render_claimsim_answer(
    const DemographicProfile& profile, const SurveyQuestion& question,
    std::span<const std::pair<std::string, std::string>> statements) const {
  if (statements.empty()) {
    throw UsageError("render_claimsim_answer: statements are empty");
  }
  tmpl::Bindings b = question_bindings(question);
  b.pair_lists["demo_infos"] = profile.features;
  b.pair_lists["statements"] = {statements.begin(), statements.end()};

  RenderedPrompt prompt{PromptKind::claimsim_answer, {}, {}};
  prompt.text = tmpl::render(source(PromptKind::claimsim_answer), b);
  record_scalars(b, prompt);
  record_pairs("demo_infos", profile.features, prompt);
  record_pairs("statements", statements, prompt);
  return prompt;
}

}  // namespace surveysim
