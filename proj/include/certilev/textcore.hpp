#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace certilev {

// A token sequence over some Alphabet. Token ids index rows of the
// embedding matrix; a non-empty sentence is required by the classifier.
using Sentence = std::vector<int>;

// Character vocabulary, ids contiguous in [0, size). Characters are Unicode
// code points; uppercase is folded to lowercase at build time and ids follow
// code-point order, so construction is corpus-order independent.
class Alphabet {
public:
    Alphabet() = default;
    explicit Alphabet(std::vector<char32_t> sorted_chars);

    int size() const { return static_cast<int>(chars_.size()); }
    char32_t char_at(int id) const { return chars_.at(static_cast<size_t>(id)); }
    // -1 when the character is not in the vocabulary
    int id_of(char32_t c) const;

    const std::vector<char32_t>& chars() const { return chars_; }

    void save(const std::string& path) const;
    static Alphabet load(const std::string& path);

private:
    std::vector<char32_t> chars_;
    std::unordered_map<char32_t, int> index_;
};

// UTF-8 <-> code point helpers. Decoding is lenient: an invalid byte is
// passed through as its own code point so arbitrary input never crashes.
std::vector<char32_t> utf8_decode(const std::string& text);
std::string utf8_encode(char32_t c);
std::string utf8_encode(const std::vector<char32_t>& chars);

// Lowercase mapping for ASCII and the Latin-1 supplement; other characters
// pass through unchanged.
char32_t fold_char(char32_t c);
std::vector<char32_t> fold_text(const std::string& text);

Alphabet build_alphabet(const std::vector<std::string>& corpus);

// Incremental construction for streaming corpora.
class AlphabetBuilder {
public:
    void add(const std::string& text);
    Alphabet finish() const;

private:
    std::vector<bool> seen_ascii_ = std::vector<bool>(128, false);
    std::unordered_map<char32_t, bool> seen_wide_;
};

Sentence tokenize(const std::string& text, const Alphabet& alphabet);
std::string detokenize(const Sentence& s, const Alphabet& alphabet);

// Edit distance (insertions, deletions, substitutions). Empty sequences
// are permitted here even though Sentence values elsewhere are non-empty.
int levenshtein(const Sentence& a, const Sentence& b);

struct BallStats {
    long long yielded = 0;             // sentences passed to the visitor
    long long duplicates_skipped = 0;  // only counted when dedup is on
    long long length1_deletions_excluded = 0;
};

// Visits every sentence at Levenshtein distance <= 1 from s: the original,
// all substitutions, deletions (skipped when |s| == 1 so sentences stay
// non-empty; the skip is counted), and insertions. Without dedup the same
// sentence may be visited more than once. The visitor returns false to stop
// early. Returns false if the visitor stopped the walk.
bool for_each_ball_member(const Sentence& s, const Alphabet& alphabet, bool dedup,
                          BallStats& stats, const std::function<bool(const Sentence&)>& visit);

// Materialized radius-k ball. k = 1 is the supported fast path; larger k
// composes the radius-1 enumerator and grows exponentially.
std::vector<Sentence> enumerate_ball(const Sentence& s, int k, const Alphabet& alphabet,
                                     bool dedup, BallStats* stats = nullptr);

} // namespace certilev
