#include "certilev/textcore.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace certilev {

namespace {

constexpr const char* kAlphabetHeader = "certilev-alphabet v1";

// The alphabet file stores one character per line, so the two line-breaking
// characters (and the escape character itself) are escaped.
std::string escape_alphabet_char(char32_t c) {
    if (c == U'\n') return "\\n";
    if (c == U'\r') return "\\r";
    if (c == U'\\') return "\\\\";
    return utf8_encode(c);
}

char32_t unescape_alphabet_line(const std::string& line, const std::string& path, int line_no) {
    std::vector<char32_t> cps;
    if (line == "\\n")
        cps = {U'\n'};
    else if (line == "\\r")
        cps = {U'\r'};
    else if (line == "\\\\")
        cps = {U'\\'};
    else
        cps = utf8_decode(line);
    if (cps.size() != 1)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected exactly one character per line");
    return cps[0];
}

} // namespace

Alphabet::Alphabet(std::vector<char32_t> sorted_chars) : chars_(std::move(sorted_chars)) {
    for (size_t i = 0; i < chars_.size(); ++i) {
        if (i > 0 && chars_[i] <= chars_[i - 1])
            throw std::invalid_argument("Alphabet: characters must be strictly increasing");
        if (fold_char(chars_[i]) != chars_[i])
            throw std::invalid_argument("Alphabet: uppercase character '" +
                                        utf8_encode(chars_[i]) + "' (tokenization folds case)");
        index_[chars_[i]] = static_cast<int>(i);
    }
}

int Alphabet::id_of(char32_t c) const {
    auto it = index_.find(c);
    return it == index_.end() ? -1 : it->second;
}

void Alphabet::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kAlphabetHeader << "\n";
    for (char32_t c : chars_) out << escape_alphabet_char(c) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

Alphabet Alphabet::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kAlphabetHeader)
        throw std::runtime_error(path + ": bad header, expected '" + kAlphabetHeader + "'");
    std::vector<char32_t> chars;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        chars.push_back(unescape_alphabet_line(line, path, line_no));
    }
    if (chars.empty()) throw std::runtime_error(path + ": no characters");
    return Alphabet(std::move(chars));
}

std::vector<char32_t> utf8_decode(const std::string& text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        unsigned char b0 = static_cast<unsigned char>(text[i]);
        int extra;
        char32_t cp;
        if (b0 < 0x80) {
            extra = 0;
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            extra = 1;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            extra = 2;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            extra = 3;
            cp = b0 & 0x07;
        } else {
            out.push_back(b0); // stray continuation byte, pass through
            ++i;
            continue;
        }
        bool ok = i + static_cast<size_t>(extra) < n;
        for (int k = 1; ok && k <= extra; ++k) {
            unsigned char bk = static_cast<unsigned char>(text[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
        if (!ok) {
            out.push_back(b0);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += extra + 1;
    }
    return out;
}

std::string utf8_encode(char32_t c) {
    std::string out;
    if (c < 0x80) {
        out += static_cast<char>(c);
    } else if (c < 0x800) {
        out += static_cast<char>(0xC0 | (c >> 6));
        out += static_cast<char>(0x80 | (c & 0x3F));
    } else if (c < 0x10000) {
        out += static_cast<char>(0xE0 | (c >> 12));
        out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (c >> 18));
        out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (c & 0x3F));
    }
    return out;
}

std::string utf8_encode(const std::vector<char32_t>& chars) {
    std::string out;
    for (char32_t c : chars) out += utf8_encode(c);
    return out;
}

char32_t fold_char(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 0x20;
    // Latin-1 supplement uppercase block, skipping the multiplication sign
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 0x20;
    return c;
}

std::vector<char32_t> fold_text(const std::string& text) {
    std::vector<char32_t> cps = utf8_decode(text);
    for (char32_t& c : cps) c = fold_char(c);
    return cps;
}

Alphabet build_alphabet(const std::vector<std::string>& corpus) {
    AlphabetBuilder builder;
    for (const auto& text : corpus) builder.add(text);
    return builder.finish();
}

void AlphabetBuilder::add(const std::string& text) {
    for (char32_t c : fold_text(text)) {
        if (c < 128)
            seen_ascii_[static_cast<size_t>(c)] = true;
        else
            seen_wide_[c] = true;
    }
}

Alphabet AlphabetBuilder::finish() const {
    std::vector<char32_t> chars;
    for (size_t c = 0; c < seen_ascii_.size(); ++c)
        if (seen_ascii_[c]) chars.push_back(static_cast<char32_t>(c));
    for (const auto& [c, _] : seen_wide_) chars.push_back(c);
    std::sort(chars.begin(), chars.end());
    if (chars.empty()) throw std::runtime_error("empty corpus");
    return Alphabet(std::move(chars));
}

Sentence tokenize(const std::string& text, const Alphabet& alphabet) {
    std::vector<char32_t> cps = fold_text(text);
    if (cps.empty()) throw std::runtime_error("empty sentence");
    Sentence s;
    s.reserve(cps.size());
    for (size_t i = 0; i < cps.size(); ++i) {
        int id = alphabet.id_of(cps[i]);
        if (id < 0)
            throw std::runtime_error("unknown character '" + utf8_encode(cps[i]) +
                                     "' at position " + std::to_string(i));
        s.push_back(id);
    }
    return s;
}

std::string detokenize(const Sentence& s, const Alphabet& alphabet) {
    std::string out;
    for (int id : s) out += utf8_encode(alphabet.char_at(id));
    return out;
}

int levenshtein(const Sentence& a, const Sentence& b) {
    const Sentence& shorter = a.size() <= b.size() ? a : b;
    const Sentence& longer = a.size() <= b.size() ? b : a;
    const size_t m = shorter.size();
    const size_t n = longer.size();
    if (m == 0) return static_cast<int>(n);

    // two-row Wagner-Fischer over the shorter dimension
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (longer[i - 1] == shorter[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

bool for_each_ball_member(const Sentence& s, const Alphabet& alphabet, bool dedup,
                          BallStats& stats, const std::function<bool(const Sentence&)>& visit) {
    const int m = static_cast<int>(s.size());
    const int v = alphabet.size();

    std::set<Sentence> seen;
    auto emit = [&](const Sentence& q) -> bool {
        if (dedup) {
            if (!seen.insert(q).second) {
                ++stats.duplicates_skipped;
                return true;
            }
        }
        ++stats.yielded;
        return visit(q);
    };

    if (!emit(s)) return false;

    Sentence q = s;
    for (int i = 0; i < m; ++i) {
        const int orig = q[i];
        for (int c = 0; c < v; ++c) {
            if (c == orig) continue;
            q[i] = c;
            if (!emit(q)) return false;
        }
        q[i] = orig;
    }

    if (m > 1) {
        for (int i = 0; i < m; ++i) {
            Sentence del;
            del.reserve(static_cast<size_t>(m) - 1);
            del.insert(del.end(), s.begin(), s.begin() + i);
            del.insert(del.end(), s.begin() + i + 1, s.end());
            if (!emit(del)) return false;
        }
    } else {
        ++stats.length1_deletions_excluded;
    }

    for (int i = 0; i <= m; ++i) {
        Sentence ins;
        ins.reserve(static_cast<size_t>(m) + 1);
        ins.insert(ins.end(), s.begin(), s.begin() + i);
        ins.push_back(0);
        ins.insert(ins.end(), s.begin() + i, s.end());
        for (int c = 0; c < v; ++c) {
            ins[static_cast<size_t>(i)] = c;
            if (!emit(ins)) return false;
        }
    }
    return true;
}

std::vector<Sentence> enumerate_ball(const Sentence& s, int k, const Alphabet& alphabet,
                                     bool dedup, BallStats* stats) {
    if (k < 1) throw std::invalid_argument("enumerate_ball: k must be >= 1");
    BallStats local;
    BallStats& st = stats ? *stats : local;
    st = BallStats{};

    if (k == 1) {
        std::vector<Sentence> out;
        for_each_ball_member(s, alphabet, dedup, st, [&](const Sentence& q) {
            out.push_back(q);
            return true;
        });
        return out;
    }

    // k >= 2: compose the radius-1 enumerator breadth-first. Exponential in k;
    // composition is inherently deduplicated.
    std::set<Sentence> all{s};
    std::vector<Sentence> frontier{s};
    for (int round = 0; round < k; ++round) {
        std::vector<Sentence> next;
        for (const Sentence& center : frontier) {
            BallStats inner;
            for_each_ball_member(center, alphabet, /*dedup=*/true, inner, [&](const Sentence& q) {
                if (all.insert(q).second) next.push_back(q);
                return true;
            });
            st.length1_deletions_excluded += inner.length1_deletions_excluded;
        }
        frontier = std::move(next);
    }
    st.yielded = static_cast<long long>(all.size());
    return std::vector<Sentence>(all.begin(), all.end());
}

} // namespace certilev
