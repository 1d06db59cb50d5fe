#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ce/common.hpp"
#include "ce/domain.hpp"

namespace ce {

struct MutationParseError : Error {
  using Error::Error;
};
struct OutOfRangeOption : MutationParseError {
  using MutationParseError::MutationParseError;
};
struct PreconditionViolation : Error {
  using Error::Error;
};

struct RenderedPrompt {
  std::string text;
  std::vector<ClassLabel> class_order;
  std::string template_id;
};

// One observed mistake plus the optimizer model's explanation of it.
struct Feedback {
  std::string example_id;
  std::optional<int> predicted;  // absent when the scorer output was unparseable
  int gold = 0;
  std::string explanation;
};

// Substitutes {{name}} placeholders. Placeholders with no binding are left
// in place so broken templates are visible in transcripts.
inline std::string render_template(std::string_view tmpl,
                                   const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (i + 1 < tmpl.size() && tmpl[i] == '{' && tmpl[i + 1] == '{') {
      std::size_t close = tmpl.find("}}", i + 2);
      if (close != std::string_view::npos) {
        std::string key(tmpl.substr(i + 2, close - i - 2));
        auto it = vars.find(key);
        if (it != vars.end()) {
          out += it->second;
          i = close + 2;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline std::string template_id_for(std::string_view name, std::string_view content) {
  return std::string(name) + "#" + hex64(fnv1a64(content));
}

// Metaprompt texts for the optimizer model. These ship as versioned assets
// under assets/templates/ and can be overridden at runtime; the defaults here
// are the same bytes.
struct MetapromptSet {
  std::string feedback =
      "You are reviewing a mistake made by a rules-based classifier.\n"
      "Task: {{task_description}}\n"
      "Current principles:\n"
      "{{principles}}\n"
      "Example:\n"
      "{{features}}\n"
      "Predicted label: {{predicted}}\n"
      "Correct label: answer_{{gold_id}} ({{gold_name}})\n"
      "Explain in at most 3 sentences why the predicted label is incorrect for this example.\n";

  std::string mutation =
      "You are improving a rules-based classifier.\n"
      "Task: {{task_description}}\n"
      "Current principles:\n"
      "{{principles}}\n"
      "Example:\n"
      "{{features}}\n"
      "Why the current prediction is wrong:\n"
      "{{explanation}}\n"
      "Choose from the following mutation options:\n"
      "{{menu}}\n"
      "Respond with exactly {{m}} lines, each of the form \"OPTION <n>: <new principle text>\" "
      "(omit the text for delete options). Each line must use a different option or different "
      "text.\n";

  std::string paraphrase =
      "Rewrite the following classification task question as variant {{variant}}, keeping its "
      "meaning:\n"
      "{{question}}\n";
};

namespace detail {

inline std::string feature_block(const Example& e) {
  std::string out;
  for (const auto& [name, value] : e.features) {
    out += "<" + name + ">\n    " + value + "\n</" + name + ">\n";
  }
  return out;
}

inline std::string principle_block(const Constitution& c, const std::vector<ClassLabel>& classes) {
  std::string out;
  for (const auto& cls : classes) {
    const ClassPrinciples* e = c.entry_for(cls.id);
    if (e == nullptr) continue;
    for (std::size_t i = 0; i < e->principles.size(); ++i) {
      out += "answer_" + std::to_string(cls.id) + " (" + cls.name + ") [" + std::to_string(i) +
             "]: " + e->principles[i] + "\n";
    }
  }
  if (out.empty()) out = "(none)\n";
  return out;
}

}  // namespace detail

// The classification prompt: tag-wrapped input features, the task question
// with its step-by-step cue, one answer block per class listing that class's
// principles, and the trailing "answer_" completion cue.
inline RenderedPrompt render_scoring_prompt(const Constitution& c, const Example& e,
                                            const std::vector<ClassLabel>& classes) {
  validate_constitution(c, classes);
  std::string text = "Consider the following example:\n";
  text += detail::feature_block(e);
  text += c.task_description + " Let's think step-by-step.\n";
  text += "Consider the following possible answers:\n";
  for (const auto& cls : classes) {
    text += "answer_" + std::to_string(cls.id) + ": \n";
    const ClassPrinciples* entry = c.entry_for(cls.id);
    for (const auto& p : entry->principles) {
      text += "    " + p + "\n";
    }
  }
  text += "\nProvide the answer that best applies to this example: \nanswer_";

  RenderedPrompt out;
  out.text = std::move(text);
  out.class_order = classes;
  out.template_id = template_id_for("scoring", "builtin-v1");
  return out;
}

// First case-insensitive "answer_<id>" token wins; a bare leading class id is
// accepted as a fallback. No match means abstention, not a crash.
inline std::optional<ClassLabel> parse_answer(const std::string& completion,
                                              const std::vector<ClassLabel>& classes) {
  auto lower = completion;
  for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  const std::string token = "answer_";
  std::size_t pos = 0;
  while ((pos = lower.find(token, pos)) != std::string::npos) {
    std::size_t digits = pos + token.size();
    std::size_t end = digits;
    while (end < lower.size() && std::isdigit(static_cast<unsigned char>(lower[end]))) ++end;
    if (end > digits) {
      int id = std::stoi(lower.substr(digits, end - digits));
      for (const auto& cls : classes) {
        if (cls.id == id) return cls;
      }
    }
    pos += token.size();
  }
  // bare leading id, e.g. " 0\n"
  std::string t = trim(completion);
  std::size_t end = 0;
  while (end < t.size() && std::isdigit(static_cast<unsigned char>(t[end]))) ++end;
  if (end > 0 && (end == t.size() || !std::isalnum(static_cast<unsigned char>(t[end])))) {
    int id = std::stoi(t.substr(0, end));
    for (const auto& cls : classes) {
      if (cls.id == id) return cls;
    }
  }
  return std::nullopt;
}

inline std::string render_feedback_prompt(const Constitution& c, const Example& e,
                                          std::optional<int> predicted,
                                          const std::vector<ClassLabel>& classes,
                                          const MetapromptSet& templates = {}) {
  if (!e.label) throw PreconditionViolation("feedback requires a labeled example");
  if (predicted && *predicted == *e.label) {
    throw PreconditionViolation("feedback requires predicted != gold");
  }
  const ClassLabel& gold = classes.at(static_cast<std::size_t>(*e.label));
  std::string predicted_str = "(no parseable answer)";
  if (predicted) {
    const ClassLabel& p = classes.at(static_cast<std::size_t>(*predicted));
    predicted_str = "answer_" + std::to_string(p.id) + " (" + p.name + ")";
  }
  return render_template(templates.feedback,
                         {{"task_description", c.task_description},
                          {"principles", detail::principle_block(c, classes)},
                          {"features", detail::feature_block(e)},
                          {"predicted", predicted_str},
                          {"gold_id", std::to_string(gold.id)},
                          {"gold_name", gold.name}});
}

struct MenuEntry {
  MutationKind kind;
  int class_id;
  int index;  // -1 for Add
};

// The enumerated mutation options for one constitution: an edit and a delete
// per existing principle, plus an add per class. Handles are 1-based.
struct MutationMenu {
  std::vector<MenuEntry> entries;

  static MutationMenu for_constitution(const Constitution& c,
                                       const std::vector<ClassLabel>& classes) {
    MutationMenu menu;
    for (const auto& cls : classes) {
      const ClassPrinciples* e = c.entry_for(cls.id);
      if (e == nullptr) continue;
      for (std::size_t i = 0; i < e->principles.size(); ++i) {
        menu.entries.push_back({MutationKind::Edit, cls.id, static_cast<int>(i)});
        menu.entries.push_back({MutationKind::Delete, cls.id, static_cast<int>(i)});
      }
    }
    for (const auto& cls : classes) {
      menu.entries.push_back({MutationKind::Add, cls.id, -1});
    }
    return menu;
  }

  std::string render(const Constitution& c, const std::vector<ClassLabel>& classes) const {
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const MenuEntry& m = entries[i];
      const ClassLabel& cls = classes.at(static_cast<std::size_t>(m.class_id));
      out += "OPTION " + std::to_string(i + 1) + ": ";
      switch (m.kind) {
        case MutationKind::Edit:
          out += "edit principle " + std::to_string(m.index) + " of class answer_" +
                 std::to_string(cls.id) + " (" + cls.name + "), currently: \"" +
                 c.entry_for(m.class_id)->principles[static_cast<std::size_t>(m.index)] + "\"";
          break;
        case MutationKind::Delete:
          out += "delete principle " + std::to_string(m.index) + " of class answer_" +
                 std::to_string(cls.id) + " (" + cls.name + ")";
          break;
        case MutationKind::Add:
          out += "add a new principle to class answer_" + std::to_string(cls.id) + " (" +
                 cls.name + ")";
          break;
      }
      out += "\n";
    }
    return out;
  }
};

inline std::string render_mutation_prompt(const Constitution& c, const Example& e,
                                          const Feedback& f, const MutationMenu& menu,
                                          const std::vector<ClassLabel>& classes, int m,
                                          const MetapromptSet& templates = {}) {
  return render_template(templates.mutation,
                         {{"task_description", c.task_description},
                          {"principles", detail::principle_block(c, classes)},
                          {"features", detail::feature_block(e)},
                          {"explanation", f.explanation},
                          {"menu", menu.render(c, classes)},
                          {"m", std::to_string(m)}});
}

// Maps one "OPTION <n>: <text>" line back to a structured op.
inline MutationOp parse_mutation(const std::string& completion, const MutationMenu& menu) {
  if (menu.entries.empty()) throw MutationParseError("empty mutation menu");
  std::string t = trim(completion);
  const std::string token = "OPTION";
  // case-insensitive prefix match
  std::string head = t.substr(0, token.size());
  for (char& ch : head) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (head != token) throw MutationParseError("no OPTION token in \"" + t + "\"");
  std::size_t pos = token.size();
  while (pos < t.size() && std::isspace(static_cast<unsigned char>(t[pos]))) ++pos;
  std::size_t digits = pos;
  while (pos < t.size() && std::isdigit(static_cast<unsigned char>(t[pos]))) ++pos;
  if (pos == digits) throw MutationParseError("OPTION without a number: \"" + t + "\"");
  const long n = std::stol(t.substr(digits, pos - digits));
  if (n < 1 || static_cast<std::size_t>(n) > menu.entries.size()) {
    throw OutOfRangeOption("OPTION " + std::to_string(n) + " outside menu of " +
                           std::to_string(menu.entries.size()));
  }
  while (pos < t.size() && (std::isspace(static_cast<unsigned char>(t[pos])) || t[pos] == ':')) {
    ++pos;
  }
  const MenuEntry& entry = menu.entries[static_cast<std::size_t>(n - 1)];
  MutationOp op;
  op.kind = entry.kind;
  op.class_id = entry.class_id;
  op.index = entry.index;
  if (entry.kind != MutationKind::Delete) {
    op.new_text = trim(t.substr(pos));
    if (op.new_text.empty()) {
      throw MutationParseError("add/edit option " + std::to_string(n) + " carries no text");
    }
  }
  return op;
}

}  // namespace ce
