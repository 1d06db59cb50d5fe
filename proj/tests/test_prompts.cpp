#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "ce/prompts.hpp"
#include "toy_task.hpp"

using namespace ce;

namespace {

Constitution base_constitution() {
  Constitution c;
  c.task_description = "Does the example contain toxic speech?";
  c.entries = {{0, {"The comment is not hateful."}}, {1, {"The comment is hateful."}}};
  return c;
}

Example text_example(const std::string& text) {
  Example e;
  e.id = "e0";
  e.features.emplace_back("text", text);
  e.label = 1;
  return e;
}

// Multiset of (class_id, principle) pairs, for locality checks.
std::multiset<std::pair<int, std::string>> principle_set(const Constitution& c) {
  std::multiset<std::pair<int, std::string>> out;
  for (const auto& e : c.entries) {
    for (const auto& p : e.principles) out.emplace(e.class_id, p);
  }
  return out;
}

std::size_t symmetric_difference(const Constitution& a, const Constitution& b) {
  auto sa = principle_set(a), sb = principle_set(b);
  std::size_t diff = 0;
  for (const auto& p : sa) diff += sa.count(p) > sb.count(p) ? 1 : 0;
  for (const auto& p : sb) diff += sb.count(p) > sa.count(p) ? 1 : 0;
  return diff;
}

}  // namespace

TEST_CASE("scoring prompt matches the golden file byte for byte") {
  std::ifstream in(std::string(CE_TEST_DIR) + "/golden/scoring_prompt.txt", std::ios::binary);
  REQUIRE(in);
  std::stringstream buf;
  buf << in.rdbuf();
  RenderedPrompt p = render_scoring_prompt(base_constitution(), text_example("x"), toy::classes());
  CHECK(p.text == buf.str());
  CHECK(p.class_order == toy::classes());
}

TEST_CASE("scoring prompt renders an empty answer block for a class with no principles") {
  Constitution c = base_constitution();
  c.entries[1].principles.clear();
  std::string text = render_scoring_prompt(c, text_example("x"), toy::classes()).text;
  CHECK(text.find("answer_1: \n\nProvide the answer") != std::string::npos);
}

TEST_CASE("scoring prompt renders multiple features as separate tag blocks in order") {
  Example e;
  e.id = "e1";
  e.features.emplace_back("title", "hello");
  e.features.emplace_back("body", "world");
  e.label = 0;
  std::string text = render_scoring_prompt(base_constitution(), e, toy::classes()).text;
  auto title = text.find("<title>\n    hello\n</title>\n");
  auto body = text.find("<body>\n    world\n</body>\n");
  CHECK(title != std::string::npos);
  CHECK(body != std::string::npos);
  CHECK(title < body);
}

TEST_CASE("parse_answer accepts answer tokens, bare ids, and abstains otherwise") {
  auto classes = toy::classes();
  CHECK(parse_answer("answer_1", classes)->id == 1);
  CHECK(parse_answer("I think ANSWER_0 fits best.", classes)->id == 0);
  CHECK(parse_answer(" 0\n", classes)->id == 0);
  CHECK(!parse_answer("neither", classes));
  CHECK(!parse_answer("answer_9", classes));  // not a known class
  CHECK(!parse_answer("", classes));
  CHECK(!parse_answer("42nd street", classes));  // digits glued to a word
  // the first valid token wins
  CHECK(parse_answer("answer_1 or maybe answer_0", classes)->id == 1);
}

TEST_CASE("feedback prompt carries the gold label, prediction, and principles") {
  Constitution c = base_constitution();
  Example e = text_example("you people are awful");
  std::string p = render_feedback_prompt(c, e, 0, toy::classes());
  CHECK(p.find("Correct label: answer_1 (True)") != std::string::npos);
  CHECK(p.find("Predicted label: answer_0 (False)") != std::string::npos);
  CHECK(p.find("you people are awful") != std::string::npos);
  CHECK(p.find("The comment is hateful.") != std::string::npos);

  std::string abstained = render_feedback_prompt(c, e, std::nullopt, toy::classes());
  CHECK(abstained.find("Predicted label: (no parseable answer)") != std::string::npos);
}

TEST_CASE("feedback prompt rejects a correct prediction") {
  CHECK_THROWS_AS(render_feedback_prompt(base_constitution(), text_example("x"), 1,
                                         toy::classes()),
                  PreconditionViolation);
}

TEST_CASE("mutation menu enumerates edit and delete per principle plus add per class") {
  Constitution c = base_constitution();
  MutationMenu menu = MutationMenu::for_constitution(c, toy::classes());
  REQUIRE(menu.entries.size() == 6);  // 2 edits + 2 deletes + 2 adds
  CHECK(menu.entries[0].kind == MutationKind::Edit);
  CHECK(menu.entries[1].kind == MutationKind::Delete);
  CHECK(menu.entries[2].kind == MutationKind::Edit);
  CHECK(menu.entries[3].kind == MutationKind::Delete);
  CHECK(menu.entries[4].kind == MutationKind::Add);
  CHECK(menu.entries[5].kind == MutationKind::Add);
  CHECK(menu.entries[4].class_id == 0);
  CHECK(menu.entries[5].class_id == 1);

  std::string rendered = menu.render(c, toy::classes());
  CHECK(rendered.find("OPTION 1: edit principle 0 of class answer_0 (False), currently: "
                      "\"The comment is not hateful.\"") != std::string::npos);
  CHECK(rendered.find("OPTION 4: delete principle 0 of class answer_1 (True)") !=
        std::string::npos);
  CHECK(rendered.find("OPTION 6: add a new principle to class answer_1 (True)") !=
        std::string::npos);
}

TEST_CASE("parse_mutation maps option lines back to structured ops") {
  Constitution c = base_constitution();
  MutationMenu menu = MutationMenu::for_constitution(c, toy::classes());

  MutationOp edit = parse_mutation("OPTION 3: The comment attacks a group.", menu);
  CHECK(edit.kind == MutationKind::Edit);
  CHECK(edit.class_id == 1);
  CHECK(edit.index == 0);
  CHECK(edit.new_text == "The comment attacks a group.");

  MutationOp del = parse_mutation("OPTION 2: this text is ignored", menu);
  CHECK(del.kind == MutationKind::Delete);
  CHECK(del.new_text.empty());

  MutationOp add = parse_mutation("option 6: Mentions of violence are hateful.", menu);
  CHECK(add.kind == MutationKind::Add);
  CHECK(add.class_id == 1);
  CHECK(add.index == -1);

  CHECK_THROWS_AS(parse_mutation("OPTION 99: text", menu), OutOfRangeOption);
  CHECK_THROWS_AS(parse_mutation("OPTION 0: text", menu), OutOfRangeOption);
  CHECK_THROWS_AS(parse_mutation("pick the third one", menu), MutationParseError);
  CHECK_THROWS_AS(parse_mutation("OPTION six: text", menu), MutationParseError);
  CHECK_THROWS_AS(parse_mutation("OPTION 3:", menu), MutationParseError);  // edit needs text
  CHECK_THROWS_AS(parse_mutation("x", MutationMenu{}), MutationParseError);
}

TEST_CASE("a targeted edit replaces exactly the named principle") {
  Constitution c = base_constitution();
  c.entries[1].principles = {"The comment is hateful.",
                             "The comment insults someone's appearance."};
  MutationMenu menu = MutationMenu::for_constitution(c, toy::classes());
  // entries: edit(0,0) del(0,0) edit(1,0) del(1,0) edit(1,1) del(1,1) add(0) add(1)
  REQUIRE(menu.entries.size() == 8);
  MutationOp op = parse_mutation(
      "OPTION 5: The comment threatens violence towards an entire group of people.", menu);
  Constitution mutated = apply_mutation(c, op);
  CHECK(mutated.entry_for(1)->principles[1] ==
        "The comment threatens violence towards an entire group of people.");
  CHECK(mutated.entry_for(1)->principles[0] == c.entry_for(1)->principles[0]);
  CHECK(*mutated.entry_for(0) == *c.entry_for(0));
}

TEST_CASE("every legal mutation changes at most two principle slots") {
  Constitution c = base_constitution();
  c.entries[0].principles.push_back("A second rule.");
  MutationMenu menu = MutationMenu::for_constitution(c, toy::classes());
  for (std::size_t n = 1; n <= menu.entries.size(); ++n) {
    std::string line = "OPTION " + std::to_string(n) + ": Replacement text.";
    Constitution mutated = apply_mutation(c, parse_mutation(line, menu));
    CHECK(symmetric_difference(c, mutated) <= 2);
    CHECK(mutated.task_description == c.task_description);
  }
}

TEST_CASE("render_template substitutes bindings and keeps unknown placeholders") {
  std::string out = render_template("a {{x}} b {{missing}} c {{x}}", {{"x", "1"}});
  CHECK(out == "a 1 b {{missing}} c 1");
}

TEST_CASE("template ids are stable under content, not name") {
  CHECK(template_id_for("a", "body") == "a#" + hex64(fnv1a64("body")));
  CHECK(template_id_for("a", "body") != template_id_for("a", "other"));
}

TEST_CASE("shipped template assets match the built-in defaults") {
  MetapromptSet defaults;
  auto read = [](const std::string& name) {
    std::ifstream in(std::string(CE_TEST_DIR) + "/../assets/templates/" + name,
                     std::ios::binary);
    REQUIRE(in);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  CHECK(read("feedback.tmpl") == defaults.feedback);
  CHECK(read("mutation.tmpl") == defaults.mutation);
  CHECK(read("paraphrase.tmpl") == defaults.paraphrase);
}
