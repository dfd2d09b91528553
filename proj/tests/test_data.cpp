#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "support/annotation_fixture.hpp"
#include "support/stubs.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"
#include "toblend/data.hpp"

using namespace toblend;

namespace {

void write(const std::filesystem::path& p, const std::string& content) {
    std::ofstream(p, std::ios::binary) << content;
}

std::string instance_line(const std::string& id, const std::string& dataset, const std::string& text) {
    return json{{"id", id}, {"dataset", dataset}, {"text", text}}.dump() + "\n";
}

// Splits like a byte-level BPE pre-tokenizer: an optional leading space
// followed by a run of letters, digits or other symbols.
struct PretokenizerStub final : Backend {
    BackendDescriptor describe() const override {
        BackendDescriptor d;
        d.backend_id = d.model_id = "pretok";
        d.capabilities = {Capability::tokenize};
        return d;
    }
    std::vector<std::string> tokenize(std::string_view text) const override {
        auto cls = [](unsigned char c) { return std::isalpha(c) ? 0 : std::isdigit(c) ? 1 : 2; };
        std::vector<std::string> out;
        std::size_t i = 0;
        while (i < text.size()) {
            std::size_t j = i;
            if (text[j] == ' ' && j + 1 < text.size() && text[j + 1] != ' ') ++j;
            if (std::isspace(static_cast<unsigned char>(text[j]))) {
                while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
            } else {
                const int c = cls(static_cast<unsigned char>(text[j]));
                while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
                       cls(static_cast<unsigned char>(text[j])) == c)
                    ++j;
            }
            out.emplace_back(text.substr(i, j - i));
            i = j;
        }
        return out;
    }
};

const std::string kXsumPrompt =
    "Maj Richard Scott, 40, is accused of driving at speeds of up to 95mph (153km/h) in bad weather before the "
    "smash on a B-road in Wiltshire";

}  // namespace

TEST(LoadJsonl, FiveHundredLines) {
    stubs::TempDir dir;
    std::string content;
    for (int i = 1; i <= 500; ++i) content += instance_line("x" + std::to_string(i), "XSum", "text number " + std::to_string(i));
    write(dir / "xsum.jsonl", content + "\n");
    const auto insts = load_jsonl(dir / "xsum.jsonl");
    ASSERT_EQ(insts.size(), 500u);
    EXPECT_EQ(insts[0].id, "x1");
    EXPECT_EQ(insts[0].dataset, Dataset::xsum);
    EXPECT_EQ(insts[499].text, "text number 500");
}

TEST(LoadJsonl, EmptyFile) {
    stubs::TempDir dir;
    write(dir / "e.jsonl", "");
    EXPECT_TRUE(load_jsonl(dir / "e.jsonl").empty());
    EXPECT_THROW(load_jsonl(dir / "absent.jsonl"), Error);
}

TEST(LoadJsonl, DuplicateIdNamesLine) {
    stubs::TempDir dir;
    write(dir / "d.jsonl", instance_line("a", "squad", "t") + instance_line("b", "squad", "t") + instance_line("a", "squad", "t"));
    try {
        load_jsonl(dir / "d.jsonl");
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("d.jsonl:3:"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    }
}

TEST(LoadJsonl, MalformedLineNamesLine) {
    stubs::TempDir dir;
    write(dir / "m.jsonl", instance_line("a", "writing", "t") + "{not json\n");
    try {
        load_jsonl(dir / "m.jsonl");
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("m.jsonl:2:"), std::string::npos) << e.what();
    }
    write(dir / "f.jsonl", "{\"id\":\"a\",\"dataset\":\"squad\"}\n");
    EXPECT_THROW(load_jsonl(dir / "f.jsonl"), ProtocolError);
}

TEST(LoadJsonl, DatasetNamesAndPrompt) {
    stubs::TempDir dir;
    write(dir / "p.jsonl", json{{"id", "w"}, {"dataset", "WritingPrompts"}, {"text", "t"}, {"prompt", "p"}}.dump() + "\n" +
                               instance_line("c", "other", "t"));
    const auto insts = load_jsonl(dir / "p.jsonl");
    EXPECT_EQ(insts[0].dataset, Dataset::writing);
    EXPECT_EQ(insts[0].prompt, "p");
    EXPECT_EQ(insts[1].dataset, Dataset::custom);
}

TEST(ExtractPrompt, FirstThirtyWords) {
    std::string text;
    for (int i = 1; i <= 40; ++i) text += (i > 1 ? " " : "") + std::string("w") + std::to_string(i);
    const WhitespaceTokenizer ws;
    const auto p = extract_prompt({"i", Dataset::custom, text, ""}, ws, 30);
    ASSERT_TRUE(p);
    EXPECT_EQ(whitespace_tokenize(*p).size(), 30u);
    EXPECT_EQ(p->substr(p->rfind(' ') + 1), "w30");
    EXPECT_EQ(text.rfind(*p, 0), 0u);
}

TEST(ExtractPrompt, PrefixRoundTrip) {
    const auto lang = synth::make_language(5);
    std::mt19937_64 rng(6);
    const WhitespaceTokenizer ws;
    for (int i = 0; i < 100; ++i) {
        auto text = synth::sample_line(lang, -1, 30 + static_cast<int>(rng() % 40), rng);
        if (i % 3 == 0) text = "  " + text;
        if (i % 5 == 0) std::replace(text.begin(), text.end(), ' ', i % 2 ? '\n' : '\t');
        const auto p = extract_prompt({"i", Dataset::custom, text, ""}, ws, 30);
        ASSERT_TRUE(p);
        EXPECT_EQ(text.rfind(*p, 0), 0u);
        const auto toks = whitespace_tokenize(text);
        EXPECT_EQ(whitespace_tokenize(*p), std::vector<std::string>(toks.begin(), toks.begin() + 30));
    }
}

TEST(ExtractPrompt, TooShort) {
    const WhitespaceTokenizer ws;
    EXPECT_FALSE(extract_prompt({"i", Dataset::custom, "only four words here", ""}, ws, 30));
    EXPECT_THROW(extract_prompt({"i", Dataset::custom, "x", ""}, ws, -1), PreconditionError);
    EXPECT_EQ(extract_prompt({"i", Dataset::custom, "x", ""}, ws, 0), "");
}

TEST(ExtractPrompt, XsumFirstInstance) {
    const Instance inst{"1", Dataset::xsum, kXsumPrompt + " last March. The trial continues.", ""};
    const WhitespaceTokenizer ws;
    EXPECT_EQ(extract_prompt(inst, ws, 26), kXsumPrompt);
    const PretokenizerStub bpe;
    EXPECT_EQ(extract_prompt(inst, bpe, 36), kXsumPrompt);
}

TEST(ExtractPrompt, NeedsTokenizeCapability) {
    const stubs::ChatBackend chat_only("x");
    try {
        extract_prompt({"i", Dataset::custom, "a b c", ""}, chat_only, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("reference backend"), std::string::npos) << e.what();
    }
}

TEST(Annotations, StudyDesignHas405Records) {
    stubs::TempDir dir;
    std::vector<AnnotationRecord> recs;
    const std::vector<std::string> columns{"tl1", "tl2", "tl3", "tl4", "tl5", "rand", "sent", "gpt2", "chatgpt"};
    for (const std::string d : {"xsum", "squad", "writing"})
        for (int i = 1; i <= 5; ++i)
            for (int a = 1; a <= 3; ++a)
                for (const auto& c : columns)
                    recs.push_back({d + std::to_string(i), c, "ann" + std::to_string(a), 1 + (i + a) % 7, 1 + i % 7, c == "tl2"});
    fixture::write_annotations_csv(recs, dir / "a.csv");
    const auto loaded = load_annotations(dir / "a.csv");
    EXPECT_EQ(loaded.size(), 405u);
    EXPECT_EQ(loaded, recs);
}

TEST(Annotations, ScoreOutOfRangeNamesRow) {
    stubs::TempDir dir;
    write(dir / "a.csv", "instance_id,setting,annotator,coherence,fluency,best\nx1,tl1,a,5,5,0\nx1,tl2,a,0,5,0\n");
    try {
        load_annotations(dir / "a.csv");
        FAIL();
    } catch (const ProtocolError& e) {
        EXPECT_NE(std::string(e.what()).find("a.csv:3:"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("coherence"), std::string::npos);
    }
    write(dir / "b.csv", "instance_id,setting,annotator,coherence,fluency,best\nx1,tl1,a,5,8,0\n");
    EXPECT_THROW(load_annotations(dir / "b.csv"), ProtocolError);
    write(dir / "c.csv", "instance_id,setting,annotator,coherence,fluency,best\nx1,tl1,a,5.5,5,0\n");
    EXPECT_THROW(load_annotations(dir / "c.csv"), ProtocolError);
}

TEST(Annotations, HeaderOnlyAndEmpty) {
    stubs::TempDir dir;
    write(dir / "h.csv", "instance_id,setting,annotator,coherence,fluency,best\n");
    EXPECT_TRUE(load_annotations(dir / "h.csv").empty());
    write(dir / "e.csv", "");
    EXPECT_TRUE(load_annotations(dir / "e.csv").empty());
    write(dir / "w.csv", "id,setting,annotator,coherence,fluency,best\n");
    EXPECT_THROW(load_annotations(dir / "w.csv"), ProtocolError);
}

TEST(Annotations, UnknownSetting) {
    stubs::TempDir dir;
    write(dir / "u.csv", "instance_id,setting,annotator,coherence,fluency,best\nx1,tl6,a,5,5,0\n");
    EXPECT_THROW(load_annotations(dir / "u.csv"), ProtocolError);
    EXPECT_TRUE(is_annotation_setting("advanced:tl2"));
    EXPECT_TRUE(is_annotation_setting("chatgpt"));
    EXPECT_FALSE(is_annotation_setting(":tl2"));
    EXPECT_FALSE(is_annotation_setting("human"));
}

TEST(Annotations, QuotedFieldsAndBooleans) {
    stubs::TempDir dir;
    write(dir / "q.csv",
          "instance_id,setting,annotator,coherence,fluency,best\r\n\"x,1\",sent,\"Ann \"\"B\"\"\",7,1,Yes\r\nx2,rand,c,1,7,\r\n");
    const auto r = load_annotations(dir / "q.csv");
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].instance_id, "x,1");
    EXPECT_EQ(r[0].annotator, "Ann \"B\"");
    EXPECT_TRUE(r[0].best_pick);
    EXPECT_FALSE(r[1].best_pick);
    write(dir / "b.csv", "instance_id,setting,annotator,coherence,fluency,best\nx,tl1,a,5,5,perhaps\n");
    EXPECT_THROW(load_annotations(dir / "b.csv"), ProtocolError);
}
