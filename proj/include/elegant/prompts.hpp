#pragma once

// Prompt templates with `{slot}` placeholders, their renderers, and the
// parsers for thinker triplet lists and yes/no answers.

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elegant/scene.hpp"

namespace elegant::prompts {

class PromptTemplate {
 public:
  PromptTemplate() = default;
  PromptTemplate(std::string name, std::string body);

  const std::string& name() const { return name_; }
  const std::string& body() const { return body_; }
  const std::set<std::string>& required_slots() const { return slots_; }

  /// Single pass: substituted values are never re-scanned for slots, so a
  /// value containing "{x}" is emitted verbatim. Missing slots throw
  /// ValidationError.
  std::string render(const std::map<std::string, std::string>& values) const;

 private:
  std::string name_;
  std::string body_;
  std::set<std::string> slots_;
};

/// The seven named templates: thinker_open, thinker_closed_20,
/// thinker_closed_24, verify, rationale, calibration, vqa_context.
class TemplateSet {
 public:
  static const std::vector<std::string>& names();

  /// Compiled from assets/prompts at build time.
  static const TemplateSet& builtin();
  /// Reads `<name>.txt` for every template name; all must exist.
  static TemplateSet from_directory(const std::filesystem::path& dir);

  const PromptTemplate& get(const std::string& name) const;

 private:
  std::map<std::string, PromptTemplate> templates_;
};

std::string join_labels(std::span<const std::string> labels);

std::string render_thinker_open(std::string_view subject,
                                std::span<const std::string> entity_labels,
                                const TemplateSet& t = TemplateSet::builtin());

/// `vocab_id` picks the template variant ("recode24" uses the 24-class
/// wording, anything else the 20-class one); the candidate list itself is
/// always rendered from `vocab`.
std::string render_thinker_closed(std::string_view subject,
                                  std::span<const std::string> entity_labels,
                                  std::span<const std::string> vocab,
                                  std::string_view vocab_id = "visualds20",
                                  const TemplateSet& t = TemplateSet::builtin());

std::string render_verify(const TripletLabels& labels,
                          const TemplateSet& t = TemplateSet::builtin());
std::string render_rationale(std::string_view subject, std::string_view object,
                             const TemplateSet& t = TemplateSet::builtin());
std::string render_calibration(std::string_view rationale,
                               const TripletLabels& labels,
                               const TemplateSet& t = TemplateSet::builtin());
std::string render_vqa(std::string_view context, std::string_view question,
                       const TemplateSet& t = TemplateSet::builtin());

enum class SkipReason { arity_mismatch, empty_field, subject_mismatch, unknown_object };

std::string to_string(SkipReason reason);

struct SkippedFragment {
  std::string fragment;
  SkipReason reason;
};

struct ParseReport {
  std::vector<Triplet> accepted;
  std::vector<SkippedFragment> skipped;
};

/// Extracts "(subject, predicate, object)" fragments. Total: never throws
/// on malformed text. Each balanced top-level parenthesized group ends up
/// in exactly one of accepted/skipped. Objects are matched by exact
/// normalized label; when several allowed objects share the label, the
/// highest-confidence instance not yet used by this parse wins.
ParseReport parse_triplets(std::string_view completion, const Entity& subject,
                           std::span<const Entity> allowed_objects);

enum class YesNo { yes, no, unknown };

std::string to_string(YesNo v);

/// Looks only at the leading word: "yes..." -> yes, "no..." -> no.
YesNo parse_yes_no(std::string_view answer);

}  // namespace elegant::prompts
