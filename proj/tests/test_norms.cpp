#include <doctest.h>

#include <sstream>

#include "fixtures.hpp"
#include "forage/error.hpp"
#include "forage/norms.hpp"
#include "forage/sequence_io.hpp"
#include "oracles.hpp"

using namespace forage;

namespace {

const char* kPets = "category,animal\npets,dog\npets,cat\nsea creatures,octopus\n";

RawSequence raw(std::string id, std::vector<std::string> items) {
  return RawSequence{std::move(id), Source::human, std::nullopt, std::move(items)};
}

}  // namespace

TEST_CASE("canonicalize") {
  CHECK(canonicalize("  Dog.") == "dog");
  CHECK(canonicalize("Polar  Bear") == "polar bear");
  CHECK(canonicalize("t-rex") == "t-rex");
  CHECK(canonicalize("-dog-") == "dog");
  CHECK(canonicalize("\tGuinea\n Pig!") == "guinea pig");
  CHECK(canonicalize("...").empty());
  CHECK(canonicalize("").empty());

  for (const char* s : {"  Dog.", "Polar  Bear", "t-rex", "a - b", "x--y", " 'Emu' ", "Bald Eagle's"}) {
    const auto once = canonicalize(s);
    CHECK(canonicalize(once) == once);
  }
}

TEST_CASE("parse_norms") {
  SUBCASE("basic") {
    const auto n = fixture::norms_from(kPets);
    CHECK(n.num_animals() == 3);
    CHECK(n.num_categories() == 2);
    CHECK(n.categories() == std::vector<std::string>{"pets", "sea creatures"});
    CHECK(n.share_category("dog", "cat"));
    CHECK_FALSE(n.share_category("cat", "octopus"));
  }
  SUBCASE("duplicate spelling with the same categories merges") {
    const auto n = fixture::norms_from("category,animal\npets,Dog\npets,dog\n");
    CHECK(n.num_animals() == 1);
    CHECK(n.animals() == std::vector<std::string>{"dog"});
  }
  SUBCASE("spellings that collapse onto different category sets") {
    CHECK_THROWS_AS(fixture::norms_from("category,animal\npets,Dog\nfarm,dog\n"), ParseError);
  }
  SUBCASE("empty") {
    CHECK_THROWS_AS(fixture::norms_from(""), ParseError);
    CHECK_THROWS_AS(fixture::norms_from("category,animal\n"), ParseError);
  }
  SUBCASE("bad row reports its line") {
    try {
      fixture::norms_from("category,animal\npets,dog\npets,cat,extra\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
  }
  SUBCASE("CRLF and BOM") {
    const auto n = fixture::norms_from("\xEF\xBB\xBF" "category,animal\r\npets,dog\r\n");
    CHECK(n.contains("dog"));
  }
  SUBCASE("multi-category animal keeps category order") {
    const auto n = fixture::norms_from("category,animal\nfarm,goat\npets,dog\npets,goat\n");
    CHECK(n.category_labels("goat") == std::vector<std::string>{"farm", "pets"});
    CHECK(n.category_ids("goat") == std::vector<std::size_t>{0, 1});
  }
}

TEST_CASE("validate_and_filter") {
  const auto norms = fixture::norms_from(kPets);

  SUBCASE("dog, cat, octopus") {
    const std::vector<RawSequence> seqs{raw("s", {"Dog", "cat.", "octopus"})};
    const auto r = validate_and_filter(seqs, norms, 3);
    REQUIRE(r.kept.size() == 1);
    const auto& s = r.kept[0];
    CHECK(s.items == std::vector<std::string>{"dog", "cat", "octopus"});
    CHECK(s.switch_flags == std::vector<bool>{false, true});
    CHECK(s.switch_ratio == 0.5);
    CHECK(s.category_sets[2] == std::vector<std::string>{"sea creatures"});
  }
  SUBCASE("dispositions") {
    const std::vector<RawSequence> seqs{raw("invalid", {"dog", "unicorn", "cat"}),
                                        raw("short", {"dog", "cat"}),
                                        raw("repeat", {"dog", "Dog", "cat"}),
                                        raw("long", {"dog", "cat", "octopus", "unicorn"})};
    const auto r = validate_and_filter(seqs, norms, 3);
    REQUIRE(r.report.size() == 4);
    CHECK(to_string(r.report[0].disposition) == "invalid item");
    CHECK(r.report[0].item == "unicorn");
    CHECK(r.report[0].index == 1);
    CHECK(to_string(r.report[1].disposition) == "too short");
    CHECK(to_string(r.report[2].disposition) == "repeated item");
    CHECK(r.report[2].index == 1);
    // the invalid item lies beyond the truncated prefix
    CHECK(to_string(r.report[3].disposition) == "kept");
    REQUIRE(r.kept.size() == 1);
    CHECK(r.kept[0].id == "long");
    CHECK(r.kept[0].items.size() == 3);
  }
  SUBCASE("truncate_len below 2") { CHECK_THROWS_AS(validate_and_filter({}, norms, 1), std::invalid_argument); }

  SUBCASE("35 items") {
    Rng rng(7);
    const auto big = fixture::random_norms(rng, 60, 8);
    auto items = fixture::random_items(rng, big, 35);
    const std::vector<RawSequence> seqs{raw("x", items)};
    const auto r = validate_and_filter(seqs, big, 35);
    REQUIRE(r.kept.size() == 1);
    CHECK(r.kept[0].switch_flags.size() == 34);
  }
}

TEST_CASE("switch ratio extremes") {
  const auto norms = fixture::norms_from("category,animal\npets,dog\npets,cat\npets,hamster\nsea,octopus\nsea,eel\n");
  CHECK(label_sequence("a", Source::human, {}, {"dog", "cat", "hamster"}, norms).switch_ratio == 0.0);
  CHECK(label_sequence("b", Source::human, {}, {"dog", "octopus", "cat", "eel"}, norms).switch_ratio == 1.0);
  CHECK_THROWS_AS(label_sequence("c", Source::human, {}, {"dog"}, norms), std::invalid_argument);
  CHECK_THROWS_AS(label_sequence("d", Source::human, {}, {"dog", "unicorn"}, norms), std::out_of_range);
}

TEST_CASE("labels agree with set intersection on random sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto norms = fixture::random_norms(rng, 30, 6);
    const auto items = fixture::random_items(rng, norms, 2 + uniform_index(rng, 20));
    const auto s = label_sequence("t", Source::model, "m", items, norms);
    const auto expected = oracle::switch_flags(norms, items);
    REQUIRE(s.switch_flags == expected);
    const auto n = static_cast<double>(std::count(expected.begin(), expected.end(), true));
    CHECK(s.switch_ratio == doctest::Approx(n / static_cast<double>(expected.size())).epsilon(1e-15));
    CHECK(s.switch_ratio >= 0.0);
    CHECK(s.switch_ratio <= 1.0);
  }
}

TEST_CASE("validate_and_filter is idempotent") {
  Rng rng(3);
  const auto norms = fixture::random_norms(rng, 40, 5);
  std::vector<RawSequence> seqs;
  for (int i = 0; i < 50; ++i) {
    auto items = fixture::random_items(rng, norms, 5 + uniform_index(rng, 10));
    if (i % 5 == 0) items.push_back("unicorn");
    if (i % 7 == 0) items.insert(items.begin() + 1, items.front());
    seqs.push_back(raw("s" + std::to_string(i), items));
  }
  const auto first = validate_and_filter(seqs, norms, 6);
  std::vector<RawSequence> again;
  for (const auto& s : first.kept) again.push_back(to_raw(s));
  const auto second = validate_and_filter(again, norms, 6);
  CHECK(second.kept.size() == first.kept.size());
  for (std::size_t i = 0; i < first.kept.size(); ++i) CHECK(second.kept[i].items == first.kept[i].items);
}

TEST_CASE("parse_generation") {
  using V = std::vector<std::string>;
  CHECK(parse_generation("dog, cat, octopus") == V{"dog", "cat", "octopus"});
  CHECK(parse_generation("dog,,cat") == V{"dog", "cat"});
  CHECK(parse_generation("dog, cat\nI hope this helps!") == V{"dog", "cat"});

  // Hand-parsed continuations in the shapes models actually produce.
  const std::vector<std::pair<std::string, V>> corpus{
      {" zebra, giraffe, lion,", {"zebra", "giraffe", "lion"}},
      {"zebra, giraffe,\nlion, tiger", {"zebra", "giraffe", "lion", "tiger"}},
      {"zebra, giraffe\n\nNote: these are all mammals.", {"zebra", "giraffe"}},
      {"\n\nkoala, kangaroo, wombat", {"koala", "kangaroo", "wombat"}},
      {"polar bear, grizzly bear, panda.", {"polar bear", "grizzly bear", "panda."}},
      {"eagle, hawk,\n\nfalcon", {"eagle", "hawk"}},
      {"", {}},
      {" , ,", {}},
      {"dog, cat\r\nSure!", {"dog", "cat"}},
      {"shark,whale ,  dolphin", {"shark", "whale", "dolphin"}},
  };
  for (const auto& [text, expected] : corpus) {
    CAPTURE(text);
    CHECK(parse_generation(text) == expected);
  }
}

TEST_CASE("sequence JSONL round trip") {
  const auto norms = fixture::norms_from(kPets);
  const std::vector<RawSequence> raws{raw("h1", {"dog", "cat", "octopus"}),
                                      RawSequence{"m1", Source::model, "llama", {"cat", "octopus", "dog"}}};
  std::stringstream ss;
  write_jsonl(ss, raws);
  const auto back = read_jsonl_as<RawSequence>(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[1].model_tag == "llama");
  CHECK(back[1].source == Source::model);
  CHECK(back[0].items == raws[0].items);

  const auto labeled = validate_and_filter(raws, norms, 3).kept;
  std::stringstream ls;
  write_jsonl(ls, labeled);
  const auto lback = read_jsonl_as<LabeledSequence>(ls);
  REQUIRE(lback.size() == labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) CHECK(nlohmann::json(lback[i]) == nlohmann::json(labeled[i]));
  CHECK(nlohmann::json(labeled[0]).at("schema_version") == kSchemaVersion);
}

TEST_CASE("JSONL errors name the record") {
  std::istringstream bad_json("{\"id\":\"a\",\"source\":\"human\",\"items\":[\"dog\"]}\n{oops\n");
  CHECK_THROWS_AS(read_jsonl_as<RawSequence>(bad_json), ParseError);
  std::istringstream missing("{\"id\":\"a\",\"source\":\"human\",\"items\":[]}\n");
  CHECK_THROWS_AS(read_jsonl_as<RawSequence>(missing), ParseError);
  std::istringstream bad_source("{\"id\":\"a\",\"source\":\"robot\",\"items\":[\"dog\"]}\n");
  CHECK_THROWS(read_jsonl_as<RawSequence>(bad_source));
}
