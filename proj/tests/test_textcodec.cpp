#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "unimse/rng.hpp"
#include "unimse/textcodec.hpp"

using namespace unimse;
using namespace unimse::textcodec;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::filesystem::path temp_file(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(p);
    return p;
}

} // namespace

TEST_CASE("build_vocab orders corpus tokens by frequency then lexicographic", "[textcodec]") {
    Vocabulary v = build_vocab({"the cat sat on the mat", "the cat"});
    const int base = reserved_count();
    REQUIRE(v.token(v.token_id("the")) == "the");
    REQUIRE(v.token_id("the") == base);     // freq 3
    REQUIRE(v.token_id("cat") == base + 1); // freq 2
    // freq-1 ties resolve lexicographically: mat < on < sat
    REQUIRE(v.token_id("mat") == base + 2);
    REQUIRE(v.token_id("on") == base + 3);
    REQUIRE(v.token_id("sat") == base + 4);
    REQUIRE(v.size() == base + 5);

    Vocabulary v2 = build_vocab({"the cat sat on the mat", "the cat"});
    REQUIRE(v.id_to_token == v2.id_to_token);
}

TEST_CASE("build_vocab rejects an empty corpus but accepts empty documents", "[textcodec]") {
    REQUIRE_THROWS_WITH(build_vocab({}), Catch::Matchers::ContainsSubstring("empty corpus"));
    Vocabulary v = build_vocab({""});
    REQUIRE(v.size() == reserved_count());
}

TEST_CASE("reserved tokens are namespaced away from corpus words", "[textcodec]") {
    Vocabulary v = build_vocab({"JOY joy positive neutral"});
    REQUIRE(v.token_id("joy") >= reserved_count());
    REQUIRE(v.token_id("joy") != v.emotion_id("joy"));
    REQUIRE(v.token_id("positive") != v.polarity_id(Polarity::positive));
    REQUIRE(v.token(v.emotion_id("joy")) == "<emo:joy>");
}

TEST_CASE("encode handles empty text, case folding, punctuation and oov", "[textcodec]") {
    Vocabulary v = build_vocab({"hello world"});
    REQUIRE(v.encode("").empty());
    REQUIRE(v.encode("Hello, WORLD!") == v.encode("hello world"));
    const auto ids = v.encode("hello unseen");
    REQUIRE(ids.size() == 2);
    REQUIRE(ids[1] == kUnk);
    REQUIRE(v.detokenize(v.encode("Hello,   world...")) == "hello world");
    REQUIRE_THROWS_WITH(v.detokenize({v.size()}), Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("round trip through encode/detokenize for in-vocabulary text", "[textcodec]") {
    Vocabulary v = build_vocab({"alpha beta gamma delta epsilon zeta"});
    Rng rng(31);
    const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    for (int trial = 0; trial < 50; ++trial) {
        std::string text;
        const int len = rng.range(1, 12);
        for (int i = 0; i < len; ++i) {
            if (i) text.push_back(' ');
            text += words[static_cast<std::size_t>(rng.range(0, 5))];
        }
        REQUIRE(v.detokenize(v.encode(text)) == text);
    }
}

TEST_CASE("universal label serialization produces the four-token target", "[textcodec]") {
    Vocabulary v = build_vocab({"x"});
    const UniversalLabel ul = make_universal_label(Polarity::positive, 1.6, "joy");
    const auto ids = serialize_ul(ul, v);
    REQUIRE(ids.size() == 4);
    REQUIRE(v.detokenize(ids) == "<pol:positive> <int:+1.6> <emo:joy> <eos>");

    const UniversalLabel neutral = make_universal_label(Polarity::neutral, 0.0, "neutral");
    REQUIRE(v.detokenize(serialize_ul(neutral, v)) == "<pol:neutral> <int:+0.0> <emo:neutral> <eos>");

    const UniversalLabel low = make_universal_label(Polarity::negative, -3.0, "frustrated");
    REQUIRE(v.detokenize(serialize_ul(low, v)) == "<pol:negative> <int:-3.0> <emo:frustrated> <eos>");
}

TEST_CASE("intensity quantization: 0.1 grid, ties away from zero, range checked", "[textcodec]") {
    REQUIRE(intensity_grid_value(quantize_intensity(1.649)) == Catch::Approx(1.6));
    REQUIRE(intensity_grid_value(quantize_intensity(1.65)) == Catch::Approx(1.7));
    REQUIRE(intensity_grid_value(quantize_intensity(-0.05)) == Catch::Approx(-0.1));
    REQUIRE(intensity_grid_value(quantize_intensity(0.04)) == Catch::Approx(0.0));
    REQUIRE_THROWS_WITH(quantize_intensity(3.05), Catch::Matchers::ContainsSubstring("outside"));
    REQUIRE_THROWS_WITH(quantize_intensity(-3.3), Catch::Matchers::ContainsSubstring("outside"));
}

TEST_CASE("universal label factory enforces polarity and intensity agreement", "[textcodec]") {
    REQUIRE_THROWS_WITH(make_universal_label(Polarity::positive, -0.5, "joy"),
                        Catch::Matchers::ContainsSubstring("inconsistent"));
    REQUIRE_THROWS_WITH(make_universal_label(Polarity::neutral, 1.0, "neutral"),
                        Catch::Matchers::ContainsSubstring("inconsistent"));
    // A generated intensity may disagree in sign (it was copied from a donor).
    REQUIRE_NOTHROW(make_universal_label(Polarity::positive, 0.0, "joy", Provenance::generated));
}

TEST_CASE("exhaustive codec round trip over the full label space", "[textcodec]") {
    Vocabulary v = build_vocab({"pad"});
    const Polarity pols[] = {Polarity::positive, Polarity::negative, Polarity::neutral};
    for (int gi = 0; gi < kIntensitySteps; ++gi) {
        const double intensity = intensity_grid_value(gi);
        for (Polarity pol : pols) {
            for (const auto& emo : emotion_names()) {
                UniversalLabel ul;
                ul.polarity = pol;
                ul.intensity = intensity;
                ul.emotion = emo;
                const auto ids = serialize_ul(ul, v);
                REQUIRE(ids.size() == 4);
                const auto pm = decode_prediction(ids, Task::msa, v);
                REQUIRE(pm.well_formed);
                REQUIRE(pm.intensity == intensity);
                REQUIRE(pm.polarity == pol);
                const auto pe = decode_prediction(ids, Task::erc, v);
                REQUIRE(pe.well_formed);
                REQUIRE(pe.emotion == emo);
            }
        }
    }
}

TEST_CASE("malformed generations fall back to neutral defaults", "[textcodec]") {
    Vocabulary v = build_vocab({"w"});
    // Too short: polarity then <eos>.
    auto p = decode_prediction({v.polarity_id(Polarity::positive), kEos}, Task::msa, v);
    REQUIRE_FALSE(p.well_formed);
    REQUIRE(p.intensity == 0.0);
    // Wrong class in the regression slot.
    auto p2 = decode_prediction(
        {v.polarity_id(Polarity::positive), v.emotion_id("joy"), v.emotion_id("joy"), kEos},
        Task::msa, v);
    REQUIRE_FALSE(p2.well_formed);
    REQUIRE(p2.intensity == 0.0);
    // Same sequence is fine for the classification task.
    auto p3 = decode_prediction(
        {v.polarity_id(Polarity::positive), v.emotion_id("joy"), v.emotion_id("joy"), kEos},
        Task::erc, v);
    REQUIRE(p3.well_formed);
    REQUIRE(p3.emotion == "joy");
    // Wrong class in the classification slot.
    auto p4 = decode_prediction({v.polarity_id(Polarity::negative), v.intensity_id(-2.0),
                                 v.intensity_id(-2.0), kEos},
                                Task::erc, v);
    REQUIRE_FALSE(p4.well_formed);
    REQUIRE(p4.emotion == "neutral");
    // Early <eos> truncates content even when more tokens follow.
    auto p5 = decode_prediction({kEos, v.polarity_id(Polarity::positive), v.intensity_id(1.0),
                                 v.emotion_id("joy")},
                                Task::msa, v);
    REQUIRE_FALSE(p5.well_formed);
}

TEST_CASE("vocabulary file round trip is bit exact", "[textcodec]") {
    Vocabulary v = build_vocab({"the quick brown fox", "the lazy dog"});
    const auto p1 = temp_file("umse_vocab_a.txt");
    const auto p2 = temp_file("umse_vocab_b.txt");
    v.save(p1.string());
    Vocabulary loaded = Vocabulary::load(p1.string());
    REQUIRE(loaded.id_to_token == v.id_to_token);
    loaded.save(p2.string());
    REQUIRE(slurp(p1.string()) == slurp(p2.string()));
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("vocabulary load rejects a damaged reserved block", "[textcodec]") {
    const auto p = temp_file("umse_vocab_bad.txt");
    {
        std::ofstream out(p);
        out << "<pad>\n<bos>\nนnot-eos\n";
    }
    REQUIRE_THROWS_WITH(Vocabulary::load(p.string()),
                        Catch::Matchers::ContainsSubstring("reserved"));
    std::filesystem::remove(p);
}

TEST_CASE("unknown emotion is rejected with a clear message", "[textcodec]") {
    Vocabulary v = build_vocab({"w"});
    REQUIRE_THROWS_WITH(v.emotion_id("melancholy"),
                        Catch::Matchers::ContainsSubstring("melancholy"));
}
