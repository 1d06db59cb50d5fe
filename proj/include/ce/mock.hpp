#pragma once

#include <optional>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ce/common.hpp"
#include "ce/gateway.hpp"

namespace ce {

// Hidden rule set driving the mock: keyword -> class id, in priority order.
struct MockSpec {
  std::vector<std::pair<std::string, int>> keywords;
  int embed_dim = 16;
  std::uint64_t seed = 0;
};

// Fully deterministic offline gateway.
//
// Published behavior, relied on by tests:
//  - scorer: scans the rendered answer blocks in order; the first principle
//    sharing a spec keyword with the example's feature text answers that
//    block's class ("answer_<id>"); otherwise "answer_0".
//  - optimizer feedback: quotes the first spec keyword of the gold class
//    found in the example text, or a generic sentence when none matches.
//  - optimizer mutations: proposes adds (and one edit of the gold class's
//    first principle) whose text carries the quoted gold keyword.
//  - paraphrase: echoes the question with a " (variant <i>)" suffix.
//  - embedder: per token, fnv1a64 seeds a splitmix64 stream that fills a
//    fixed-dimension vector with values in [-1,1); token vectors are summed
//    and the result unit-normalized.
class MockGateway : public Gateway {
 public:
  explicit MockGateway(MockSpec spec = {}) : spec_(std::move(spec)) {}

  std::string name() const override { return "mock"; }
  bool deterministic() const override { return true; }

  std::string model_for(LlmRole role) const override {
    switch (role) {
      case LlmRole::Score:
        return "mock-score";
      case LlmRole::Optimize:
        return "mock-opt";
      case LlmRole::Embed:
        return "mock-embed-" + std::to_string(spec_.embed_dim);
    }
    return "mock";
  }

  // Exposed so oracle tests can recompute single vectors independently of
  // the embed() batching/caching path.
  std::vector<double> embed_one(const std::string& text) const {
    std::vector<double> v(static_cast<std::size_t>(spec_.embed_dim), 0.0);
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens.push_back("");
    for (const auto& tok : tokens) {
      std::uint64_t h = fnv1a64(tok) ^ splitmix64(spec_.seed);
      for (auto& x : v) {
        h = splitmix64(h);
        x += static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
      }
    }
    double n = norm(v);
    if (n == 0.0) {
      v[0] = 1.0;
    } else {
      for (auto& x : v) x /= n;
    }
    return v;
  }

 protected:
  std::string do_complete(const LlmRequest& req) override {
    const std::string& p = req.prompt;
    if (p.rfind("Consider the following example:", 0) == 0) return score(p);
    if (p.rfind("You are reviewing", 0) == 0) return feedback(p);
    if (p.rfind("You are improving", 0) == 0) return mutations(p);
    if (p.rfind("Rewrite the following", 0) == 0) return paraphrase(p);
    return "answer_0";
  }

  std::vector<std::vector<double>> do_embed(const std::vector<std::string>& texts) override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

 private:
  static std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
      std::size_t nl = s.find('\n', start);
      if (nl == std::string::npos) {
        lines.push_back(s.substr(start));
        break;
      }
      lines.push_back(s.substr(start, nl - start));
      start = nl + 1;
    }
    return lines;
  }

  // Feature values from <tag>...</tag> blocks.
  static std::string feature_text(const std::string& prompt) {
    static const std::regex re("<([^/>\\n]+)>\\n([^\\n]*)\\n</\\1>");
    std::string out;
    for (auto it = std::sregex_iterator(prompt.begin(), prompt.end(), re);
         it != std::sregex_iterator(); ++it) {
      out += (*it)[2].str();
      out += "\n";
    }
    return out;
  }

  std::optional<std::string> keyword_in(const std::set<std::string>& tokens, int class_id) const {
    for (const auto& [kw, cls] : spec_.keywords) {
      if (cls == class_id && tokens.count(kw)) return kw;
    }
    return std::nullopt;
  }

  std::string score(const std::string& prompt) const {
    auto feat_tokens_vec = tokenize(feature_text(prompt));
    std::set<std::string> feat_tokens(feat_tokens_vec.begin(), feat_tokens_vec.end());

    static const std::regex header("^answer_([0-9]+): $");
    int current_class = -1;
    for (const auto& line : split_lines(prompt)) {
      std::smatch m;
      if (std::regex_match(line, m, header)) {
        current_class = std::stoi(m[1].str());
        continue;
      }
      if (current_class >= 0 && line.rfind("    ", 0) == 0) {
        auto principle_tokens = tokenize(line);
        std::set<std::string> pset(principle_tokens.begin(), principle_tokens.end());
        for (const auto& [kw, cls] : spec_.keywords) {
          (void)cls;  // the answering class is the block the principle sits in
          if (pset.count(kw) && feat_tokens.count(kw)) {
            return "answer_" + std::to_string(current_class);
          }
        }
      } else if (!line.empty() && line[0] != ' ') {
        current_class = -1;
      }
    }
    return "answer_0";
  }

  std::string feedback(const std::string& prompt) const {
    static const std::regex gold_re("Correct label: answer_([0-9]+) \\(([^)]*)\\)");
    std::smatch m;
    if (!std::regex_search(prompt, m, gold_re)) return "The prediction is incorrect.";
    const int gold = std::stoi(m[1].str());
    const std::string gold_name = m[2].str();
    auto toks = tokenize(feature_text(prompt));
    std::set<std::string> tokens(toks.begin(), toks.end());
    if (auto kw = keyword_in(tokens, gold)) {
      return "The example contains the keyword \"" + *kw + "\", which indicates answer_" +
             std::to_string(gold) + " (" + gold_name + ").";
    }
    return "The prediction is incorrect; the correct label is answer_" + std::to_string(gold) +
           " (" + gold_name + ").";
  }

  std::string mutations(const std::string& prompt) const {
    // how many mutation lines were requested
    static const std::regex m_re("Respond with exactly ([0-9]+) lines");
    std::smatch sm;
    int m = 1;
    if (std::regex_search(prompt, sm, m_re)) m = std::stoi(sm[1].str());

    // the explanation section carries the gold class and (usually) a keyword
    std::string expl;
    {
      const std::string begin = "Why the current prediction is wrong:\n";
      const std::string end = "Choose from the following mutation options:";
      std::size_t b = prompt.find(begin);
      std::size_t e = prompt.find(end);
      if (b != std::string::npos && e != std::string::npos) {
        expl = prompt.substr(b + begin.size(), e - b - begin.size());
      }
    }
    static const std::regex kw_re("\"([a-z0-9]+)\"");
    static const std::regex gold_re("answer_([0-9]+) \\(([^)]*)\\)");
    std::smatch km, gm;
    std::optional<std::string> kw;
    if (std::regex_search(expl, km, kw_re)) kw = km[1].str();
    int gold = 0;
    std::string gold_name;
    if (std::regex_search(expl, gm, gold_re)) {
      gold = std::stoi(gm[1].str());
      gold_name = gm[2].str();
    }

    // menu handles for add(gold) and edit(gold, 0)
    int add_opt = -1, edit_opt = -1;
    static const std::regex add_re("^OPTION ([0-9]+): add a new principle to class answer_([0-9]+)");
    static const std::regex edit_re(
        "^OPTION ([0-9]+): edit principle 0 of class answer_([0-9]+)");
    for (const auto& line : split_lines(prompt)) {
      std::smatch om;
      if (std::regex_search(line, om, add_re) && std::stoi(om[2].str()) == gold) {
        add_opt = std::stoi(om[1].str());
      } else if (std::regex_search(line, om, edit_re) && std::stoi(om[2].str()) == gold) {
        edit_opt = std::stoi(om[1].str());
      }
    }
    if (add_opt < 0) return "OPTION 1";  // degenerate menu; let the caller skip it

    std::vector<std::string> texts;
    if (kw) {
      texts.push_back("The example mentions \"" + *kw + "\".");
      texts.push_back("The text contains the word \"" + *kw + "\".");
      for (int i = 3; i <= m; ++i) {
        texts.push_back("The example refers to \"" + *kw + "\" (variant " + std::to_string(i) +
                        ").");
      }
    } else {
      for (int i = 1; i <= m; ++i) {
        texts.push_back("The correct label is " + gold_name + " (hint " + std::to_string(i) +
                        ").");
      }
    }

    std::string out;
    for (int i = 0; i < m; ++i) {
      const std::string& text = texts[static_cast<std::size_t>(i)];
      if (i == 1 && kw && edit_opt >= 0) {
        // second proposal edits the gold class's first principle in place
        out += "OPTION " + std::to_string(edit_opt) + ": " + texts[0] + "\n";
      } else {
        out += "OPTION " + std::to_string(add_opt) + ": " + text + "\n";
      }
    }
    return out;
  }

  static std::string paraphrase(const std::string& prompt) {
    static const std::regex var_re("variant ([0-9]+)");
    std::smatch m;
    std::string variant = "1";
    if (std::regex_search(prompt, m, var_re)) variant = m[1].str();
    auto lines = split_lines(prompt);
    std::string question;
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
      if (!trim(*it).empty()) {
        question = trim(*it);
        break;
      }
    }
    return question + " (variant " + variant + ")";
  }

  MockSpec spec_;
};

}  // namespace ce
