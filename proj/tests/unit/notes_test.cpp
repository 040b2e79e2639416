#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "semforge/errors.hpp"
#include "semforge/notes.hpp"
#include "test_support.hpp"

using namespace semforge;
namespace st = semforge::testing;

namespace {

Note note(std::string op, std::string attr, std::string comment, std::optional<NoteTag> tag = std::nullopt) {
  Note n;
  n.operation_id = std::move(op);
  n.attribute = std::move(attr);
  n.comment = std::move(comment);
  n.tag = tag;
  return n;
}

}  // namespace

TEST(Notes, TagNamesRoundTrip) {
  for (auto t : {NoteTag::Red, NoteTag::Green, NoteTag::Yellow, NoteTag::Blue}) {
    EXPECT_EQ(note_tag_from_string(to_string(t)), t);
  }
  EXPECT_EQ(note_tag_from_string("RED"), NoteTag::Red);
  EXPECT_FALSE(note_tag_from_string("purple"));
}

TEST(Notes, AddRejectsEmptyComment) {
  NoteStore store;
  EXPECT_THROW(store.add(note("op", "a", "")), ValidationError);
  EXPECT_THROW(store.add(note("op", "a", "   \n")), ValidationError);
  EXPECT_TRUE(store.query({}).empty());
}

TEST(Notes, AddAssignsDistinctIdsAndKeepsNullTag) {
  NoteStore store;
  auto a = store.add(note("extract", "symptoms", "missed restless legs"));
  auto b = store.add(note("extract", "symptoms", "missed restless legs"));
  EXPECT_NE(a.id, b.id);
  EXPECT_FALSE(a.tag);
  EXPECT_GT(a.created_at, 0);
  EXPECT_LT(a.sequence, b.sequence);
  EXPECT_TRUE(to_json(a)["tag"].is_null());
  ASSERT_TRUE(store.get(a.id));
  EXPECT_EQ(store.get(a.id)->comment, "missed restless legs");
}

TEST(Notes, QueryFiltersConjunctivelyNewestFirst) {
  NoteStore store;
  auto n1 = store.add(note("extract", "symptoms", "Describes symptoms Behaviorally, not clinically", NoteTag::Red));
  auto n2 = store.add(note("extract", "severity", "severity scale is off", NoteTag::Yellow));
  auto n3 = store.add(note("summarize", "summary", "too behaviorally focused"));
  auto n4 = store.add(note("extract", "symptoms", "good catch", NoteTag::Green));

  NoteFilter by_op;
  by_op.operation_id = "extract";
  auto r = store.query(by_op);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].id, n4.id);
  EXPECT_EQ(r[1].id, n2.id);
  EXPECT_EQ(r[2].id, n1.id);

  NoteFilter text;
  text.text_query = "behaviorally";
  r = store.query(text);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].id, n3.id);
  EXPECT_EQ(r[1].id, n1.id);

  NoteFilter both;
  both.operation_id = "extract";
  both.text_query = "BEHAVIORALLY";
  r = store.query(both);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].id, n1.id);

  NoteFilter tag;
  tag.tag = NoteTag::Yellow;
  r = store.query(tag);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].id, n2.id);

  NoteFilter attr;
  attr.attribute = "symptoms";
  EXPECT_EQ(store.query(attr).size(), 2u);
}

TEST(Notes, UpdateAndRemove) {
  NoteStore store;
  auto n = store.add(note("extract", "symptoms", "first", NoteTag::Red));
  auto u = store.update(n.id, Value{{"comment", "second"}, {"tag", nullptr}, {"row_ref", "doc-3"}});
  ASSERT_TRUE(u);
  EXPECT_EQ(u->comment, "second");
  EXPECT_FALSE(u->tag);
  EXPECT_EQ(u->row_ref, "doc-3");
  EXPECT_EQ(u->created_at, n.created_at);
  EXPECT_THROW(store.update(n.id, Value{{"comment", ""}}), ValidationError);
  EXPECT_THROW(store.update(n.id, Value{{"tag", "purple"}}), ValidationError);
  EXPECT_FALSE(store.update("missing", Value{{"comment", "x"}}));
  EXPECT_TRUE(store.remove(n.id));
  EXPECT_FALSE(store.remove(n.id));
  EXPECT_FALSE(store.get(n.id));
}

TEST(Notes, PersistedLogReloadsLastRecordPerId) {
  st::TempDir dir;
  auto path = dir / "notes.jsonl";
  std::string kept, edited, dropped;
  {
    NoteStore store(path);
    kept = store.add(note("extract", "symptoms", "kept")).id;
    edited = store.add(note("extract", "symptoms", "before", NoteTag::Blue)).id;
    dropped = store.add(note("extract", "symptoms", "dropped")).id;
    store.update(edited, Value{{"comment", "after"}});
    store.remove(dropped);
  }
  {
    std::ofstream torn(path, std::ios::app);
    torn << "{\"id\": \"half";
  }
  NoteStore reloaded(path);
  auto all = reloaded.query({});
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(reloaded.get(edited)->comment, "after");
  EXPECT_EQ(reloaded.get(edited)->tag, NoteTag::Blue);
  EXPECT_TRUE(reloaded.get(kept));
  EXPECT_FALSE(reloaded.get(dropped));
  auto next = reloaded.add(note("extract", "symptoms", "later"));
  EXPECT_GT(next.sequence, reloaded.get(edited)->sequence);
}

TEST(Notes, OrphanedWhenOperationLeavesPipeline) {
  NoteStore store;
  store.add(note("extract", "symptoms", "live"));
  store.add(note("removed_op", "x", "stale"));
  std::set<std::string> live{"extract", "summarize"};
  auto r = store.query({}, &live);
  ASSERT_EQ(r.size(), 2u);
  for (const auto& n : r) EXPECT_EQ(n.orphaned, n.operation_id == "removed_op");
  for (const auto& n : store.query({})) EXPECT_FALSE(n.orphaned);
}

TEST(Notes, JsonRoundTrip) {
  Note n = note("extract", "symptoms", "c", NoteTag::Green);
  n.id = "note-1";
  n.row_ref = "d7";
  n.created_at = 1700000000000;
  n.sequence = 4;
  auto back = note_from_json(to_json(n));
  EXPECT_EQ(to_json(back), to_json(n));
  EXPECT_THROW(note_from_json(Value{{"tag", "purple"}}), ValidationError);
  EXPECT_THROW(note_from_json(Value::array()), ValidationError);
}
