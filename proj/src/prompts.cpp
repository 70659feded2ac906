#include "elegant/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <set>

#include "elegant/errors.hpp"
#include "prompt_assets.hpp"

namespace elegant::prompts {

namespace {

bool is_slot_char(char c) {
  return std::islower(static_cast<unsigned char>(c)) || c == '_';
}

// Finds the slot starting at `pos` ('{' expected), returns its name or "".
std::string slot_at(const std::string& body, std::size_t pos) {
  std::size_t end = pos + 1;
  while (end < body.size() && is_slot_char(body[end])) ++end;
  if (end == pos + 1 || end >= body.size() || body[end] != '}') return {};
  return body.substr(pos + 1, end - pos - 1);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

void require_nonempty(std::string_view value, const char* what) {
  if (trim(value).empty()) {
    throw ValidationError(std::string("prompt: empty ") + what);
  }
}

}  // namespace

PromptTemplate::PromptTemplate(std::string name, std::string body)
    : name_(std::move(name)), body_(std::move(body)) {
  for (std::size_t i = 0; i < body_.size(); ++i) {
    if (body_[i] != '{') continue;
    auto slot = slot_at(body_, i);
    if (!slot.empty()) slots_.insert(std::move(slot));
  }
}

std::string PromptTemplate::render(
    const std::map<std::string, std::string>& values) const {
  for (const auto& slot : slots_) {
    if (!values.contains(slot)) {
      throw ValidationError("template " + name_ + ": missing slot '" + slot + "'");
    }
  }
  std::string out;
  out.reserve(body_.size() + 64);
  for (std::size_t i = 0; i < body_.size(); ++i) {
    if (body_[i] == '{') {
      const auto slot = slot_at(body_, i);
      if (!slot.empty()) {
        out += values.at(slot);
        i += slot.size() + 1;
        continue;
      }
    }
    out.push_back(body_[i]);
  }
  return out;
}

const std::vector<std::string>& TemplateSet::names() {
  static const std::vector<std::string> kNames = {
      "thinker_open", "thinker_closed_20", "thinker_closed_24", "verify",
      "rationale",    "calibration",       "vqa_context"};
  return kNames;
}

const TemplateSet& TemplateSet::builtin() {
  static const TemplateSet kBuiltin = [] {
    TemplateSet set;
    for (const auto& [name, body] : assets::prompt_templates()) {
      set.templates_.emplace(std::string(name), PromptTemplate(std::string(name), std::string(body)));
    }
    for (const auto& name : names()) {
      if (!set.templates_.contains(name)) {
        throw Error("builtin prompt asset missing: " + name);
      }
    }
    return set;
  }();
  return kBuiltin;
}

TemplateSet TemplateSet::from_directory(const std::filesystem::path& dir) {
  TemplateSet set;
  for (const auto& name : names()) {
    const auto path = dir / (name + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read prompt template " + path.string());
    std::string body((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    set.templates_.emplace(name, PromptTemplate(name, std::move(body)));
  }
  return set;
}

const PromptTemplate& TemplateSet::get(const std::string& name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ValidationError("unknown prompt template " + name);
  return it->second;
}

std::string join_labels(std::span<const std::string> labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0) out += ", ";
    out += labels[i];
  }
  return out;
}

std::string render_thinker_open(std::string_view subject,
                                std::span<const std::string> entity_labels,
                                const TemplateSet& t) {
  require_nonempty(subject, "subject");
  return t.get("thinker_open").render(
      {{"subject", std::string(subject)}, {"entities", join_labels(entity_labels)}});
}

std::string render_thinker_closed(std::string_view subject,
                                  std::span<const std::string> entity_labels,
                                  std::span<const std::string> vocab,
                                  std::string_view vocab_id, const TemplateSet& t) {
  require_nonempty(subject, "subject");
  if (vocab.empty()) throw ValidationError("prompt: empty relation vocabulary");
  const char* name = vocab_id == "recode24" ? "thinker_closed_24" : "thinker_closed_20";
  return t.get(name).render({{"subject", std::string(subject)},
                             {"entities", join_labels(entity_labels)},
                             {"relations", join_labels(vocab)}});
}

std::string render_verify(const TripletLabels& labels, const TemplateSet& t) {
  require_nonempty(labels.subject, "subject");
  require_nonempty(labels.predicate, "predicate");
  require_nonempty(labels.object, "object");
  return t.get("verify").render({{"subject", labels.subject},
                                 {"relationship", labels.predicate},
                                 {"object", labels.object}});
}

std::string render_rationale(std::string_view subject, std::string_view object,
                             const TemplateSet& t) {
  require_nonempty(subject, "subject");
  require_nonempty(object, "object");
  return t.get("rationale").render(
      {{"subject", std::string(subject)}, {"object", std::string(object)}});
}

std::string render_calibration(std::string_view rationale,
                               const TripletLabels& labels, const TemplateSet& t) {
  require_nonempty(rationale, "rationale");
  require_nonempty(labels.subject, "subject");
  require_nonempty(labels.predicate, "predicate");
  require_nonempty(labels.object, "object");
  return t.get("calibration").render({{"rationale", trim(rationale)},
                                      {"subject", labels.subject},
                                      {"relationship", labels.predicate},
                                      {"object", labels.object}});
}

std::string render_vqa(std::string_view context, std::string_view question,
                       const TemplateSet& t) {
  require_nonempty(question, "question");
  return t.get("vqa_context").render(
      {{"context", std::string(context)}, {"question", std::string(question)}});
}

std::string to_string(SkipReason reason) {
  switch (reason) {
    case SkipReason::arity_mismatch: return "arity_mismatch";
    case SkipReason::empty_field: return "empty_field";
    case SkipReason::subject_mismatch: return "subject_mismatch";
    case SkipReason::unknown_object: return "unknown_object";
  }
  return "arity_mismatch";
}

ParseReport parse_triplets(std::string_view completion, const Entity& subject,
                           std::span<const Entity> allowed_objects) {
  ParseReport report;
  std::set<EntityId> used;

  auto handle = [&](std::string_view inner) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= inner.size(); ++i) {
      if (i == inner.size() || inner[i] == ',') {
        parts.push_back(normalize_label(inner.substr(start, i - start)));
        start = i + 1;
      }
    }
    const std::string fragment = "(" + std::string(inner) + ")";
    if (parts.size() != 3) {
      report.skipped.push_back({fragment, SkipReason::arity_mismatch});
      return;
    }
    if (std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); })) {
      report.skipped.push_back({fragment, SkipReason::empty_field});
      return;
    }
    if (parts[0] != subject.label) {
      report.skipped.push_back({fragment, SkipReason::subject_mismatch});
      return;
    }
    const Entity* best_unused = nullptr;
    const Entity* best_any = nullptr;
    for (const auto& obj : allowed_objects) {
      if (obj.id == subject.id || obj.label != parts[2]) continue;
      if (best_any == nullptr || obj.confidence > best_any->confidence) best_any = &obj;
      if (!used.contains(obj.id) &&
          (best_unused == nullptr || obj.confidence > best_unused->confidence)) {
        best_unused = &obj;
      }
    }
    const Entity* chosen = best_unused != nullptr ? best_unused : best_any;
    if (chosen == nullptr) {
      report.skipped.push_back({fragment, SkipReason::unknown_object});
      return;
    }
    used.insert(chosen->id);
    report.accepted.push_back(make_triplet(subject.id, parts[1], chosen->id));
  };

  int depth = 0;
  std::size_t open = 0;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    const char c = completion[i];
    if (c == '(') {
      if (depth == 0) open = i;
      ++depth;
    } else if (c == ')' && depth > 0) {
      if (--depth == 0) handle(completion.substr(open + 1, i - open - 1));
    }
  }
  return report;
}

std::string to_string(YesNo v) {
  switch (v) {
    case YesNo::yes: return "yes";
    case YesNo::no: return "no";
    case YesNo::unknown: return "unknown";
  }
  return "unknown";
}

YesNo parse_yes_no(std::string_view answer) {
  const std::string norm = normalize_label(answer);
  std::size_t end = 0;
  while (end < norm.size() && std::isalpha(static_cast<unsigned char>(norm[end]))) ++end;
  const std::string_view word(norm.data(), end);
  if (word == "yes") return YesNo::yes;
  if (word == "no") return YesNo::no;
  return YesNo::unknown;
}

}  // namespace elegant::prompts
