#include "certilev/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "certilev/rng.hpp"

namespace certilev {

namespace {

// Splits one logical CSV row starting at stream position; consumes physical
// lines until quoting closes. Returns false at end of input.
bool read_row(std::istream& in, long long& line_no, std::vector<std::string>& fields,
              long long& start_line, bool& unterminated) {
    fields.clear();
    unterminated = false;
    std::string line;
    if (!std::getline(in, line)) return false;
    ++line_no;
    start_line = line_no;

    std::string field;
    bool in_quotes = false;
    size_t i = 0;
    while (true) {
        if (i >= line.size()) {
            if (in_quotes) {
                // quoted field continues on the next physical line
                if (!std::getline(in, line)) {
                    unterminated = true;
                    fields.push_back(field);
                    return true;
                }
                ++line_no;
                field += '\n';
                i = 0;
                continue;
            }
            fields.push_back(field);
            return true;
        }
        const char c = line[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    i += 2;
                } else {
                    in_quotes = false;
                    ++i;
                }
            } else {
                field += c;
                ++i;
            }
        } else if (c == '"' && field.empty()) {
            in_quotes = true;
            ++i;
        } else if (c == ',') {
            fields.push_back(field);
            field.clear();
            ++i;
        } else if (c == '\r' && i + 1 == line.size()) {
            ++i; // trailing CR of a CRLF file
        } else {
            field += c;
            ++i;
        }
    }
}

bool all_integer_labels(const std::set<std::string>& labels) {
    for (const std::string& s : labels) {
        if (s.empty()) return false;
        size_t i = s[0] == '-' ? 1 : 0;
        if (i == s.size()) return false;
        for (; i < s.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

} // namespace

CsvResult load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);

    CsvResult result;
    long long line_no = 0;
    std::vector<std::string> fields;
    long long start_line = 0;
    bool unterminated = false;

    const int needed = std::max(schema.label_col, schema.text_col) + 1;
    bool first = true;
    while (read_row(in, line_no, fields, start_line, unterminated)) {
        if (first && schema.has_header) {
            first = false;
            continue;
        }
        first = false;
        ++result.data_rows;
        if (unterminated) {
            result.errors.push_back({start_line, "unterminated quoted field"});
            continue;
        }
        if (static_cast<int>(fields.size()) < needed) {
            result.errors.push_back({start_line, "row has " + std::to_string(fields.size()) +
                                                     " columns, need " + std::to_string(needed)});
            continue;
        }
        result.records.push_back({start_line, fields[static_cast<size_t>(schema.label_col)],
                                  fields[static_cast<size_t>(schema.text_col)]});
    }
    return result;
}

void LabeledDataset::validate() const {
    if (num_classes < 2) throw std::runtime_error("dataset: need at least 2 classes");
    std::vector<long long> counts(static_cast<size_t>(num_classes), 0);
    for (const auto& [s, y] : samples) {
        if (y < 0 || y >= num_classes)
            throw std::runtime_error("dataset: label " + std::to_string(y) + " out of range");
        if (s.empty()) throw std::runtime_error("dataset: empty sentence");
        for (int tok : s)
            if (tok < 0 || tok >= alphabet.size())
                throw std::runtime_error("dataset: token out of alphabet range");
        ++counts[static_cast<size_t>(y)];
    }
}

int LabeledDataset::classes_present() const {
    std::set<int> seen;
    for (const auto& [s, y] : samples) seen.insert(y);
    return static_cast<int>(seen.size());
}

LabelMap build_label_map(const std::vector<CsvRecord>& records) {
    std::set<std::string> labels;
    for (const CsvRecord& r : records) labels.insert(r.label);
    std::vector<std::string> ordered(labels.begin(), labels.end());
    if (all_integer_labels(labels))
        std::sort(ordered.begin(), ordered.end(), [](const std::string& a, const std::string& b) {
            return std::stoll(a) < std::stoll(b);
        });
    LabelMap map;
    for (const std::string& s : ordered) map.emplace(s, static_cast<int>(map.size()));
    return map;
}

void save_label_map(const LabelMap& map, const std::string& path) {
    std::vector<std::string> by_id(map.size());
    for (const auto& [label, id] : map) by_id[static_cast<size_t>(id)] = label;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (size_t i = 0; i < by_id.size(); ++i) out << by_id[i] << "\t" << i << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

LabelMap load_label_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    LabelMap map;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const size_t tab = line.rfind('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected label<TAB>id");
        map[line.substr(0, tab)] = std::stoi(line.substr(tab + 1));
    }
    return map;
}

LabeledDataset make_dataset(const std::vector<CsvRecord>& records, const Alphabet& alphabet,
                            const LabelMap& labels, int max_len, std::vector<CsvError>& errors) {
    LabeledDataset ds;
    ds.alphabet = alphabet;
    ds.num_classes = static_cast<int>(labels.size());
    for (const CsvRecord& r : records) {
        auto it = labels.find(r.label);
        if (it == labels.end()) {
            errors.push_back({r.line_no, "label '" + r.label + "' not in label map"});
            continue;
        }
        try {
            Sentence s = tokenize(r.text, alphabet);
            if (max_len > 0 && static_cast<int>(s.size()) > max_len)
                s.resize(static_cast<size_t>(max_len));
            ds.samples.emplace_back(std::move(s), it->second);
        } catch (const std::exception& e) {
            errors.push_back({r.line_no, e.what()});
        }
    }
    return ds;
}

LabeledDataset synthetic_task(uint64_t seed, int n, int min_len, int max_len, int num_classes) {
    if (n < 20) throw std::runtime_error("synthetic_task: need n >= 20");
    if (num_classes < 2 || num_classes > 8)
        throw std::runtime_error("synthetic_task: num_classes must be in [2, 8]");
    if (min_len < num_classes || max_len < min_len)
        throw std::runtime_error("synthetic_task: bad length range");

    // markers a.., then four filler characters
    std::string chars;
    for (int c = 0; c < num_classes; ++c) chars += static_cast<char>('a' + c);
    for (int c = 0; c < 4; ++c) chars += static_cast<char>('a' + num_classes + c);
    Alphabet alphabet = build_alphabet({chars});

    Rng rng(seed, "synthetic");
    LabeledDataset ds;
    ds.alphabet = alphabet;
    ds.num_classes = num_classes;
    ds.samples.reserve(static_cast<size_t>(n));

    for (int i = 0; i < n; ++i) {
        const int len = rng.next_int(min_len, max_len);
        const int y = rng.next_int(0, num_classes - 1);
        int markers = std::max(num_classes, (2 * len) / 5);
        markers = std::min(markers, len);
        const int majority_floor = static_cast<int>(std::ceil(0.6 * markers));
        const int majority = rng.next_int(majority_floor, markers);

        std::vector<int> slots(static_cast<size_t>(len));
        for (int j = 0; j < len; ++j) slots[static_cast<size_t>(j)] = j;
        rng.shuffle(slots);

        Sentence s(static_cast<size_t>(len));
        int slot = 0;
        for (int j = 0; j < majority; ++j) s[static_cast<size_t>(slots[static_cast<size_t>(slot++)])] = y;
        int other = 0;
        for (int j = majority; j < markers; ++j) {
            if (other == y) other = (other + 1) % num_classes;
            s[static_cast<size_t>(slots[static_cast<size_t>(slot++)])] = other;
            other = (other + 1) % num_classes;
        }
        for (int j = markers; j < len; ++j)
            s[static_cast<size_t>(slots[static_cast<size_t>(slot++)])] =
                num_classes + rng.next_int(0, 3);
        ds.samples.emplace_back(std::move(s), y);
    }
    ds.validate();
    return ds;
}

namespace {

LabeledDataset gather(const LabeledDataset& src, const std::vector<size_t>& idx) {
    LabeledDataset out;
    out.alphabet = src.alphabet;
    out.num_classes = src.num_classes;
    out.samples.reserve(idx.size());
    for (size_t i : idx) out.samples.push_back(src.samples[i]);
    return out;
}

} // namespace

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, int val_size,
                                                uint64_t seed) {
    const int n = static_cast<int>(dataset.size());
    if (val_size < 0 || val_size >= n)
        throw std::runtime_error("split: val_size " + std::to_string(val_size) +
                                 " too large for dataset of " + std::to_string(n));
    std::vector<size_t> idx(static_cast<size_t>(n));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed, "split");
    rng.shuffle(idx);

    std::vector<size_t> val_idx(idx.begin(), idx.begin() + val_size);
    std::vector<size_t> train_idx(idx.begin() + val_size, idx.end());

    // restore class presence in train by swapping with val if needed
    std::set<int> want;
    for (const auto& [s, y] : dataset.samples) want.insert(y);
    auto present = [&](const std::vector<size_t>& ids) {
        std::set<int> got;
        for (size_t i : ids) got.insert(dataset.samples[i].second);
        return got;
    };
    std::set<int> have = present(train_idx);
    for (int cls : want) {
        if (have.count(cls)) continue;
        for (size_t vi = 0; vi < val_idx.size(); ++vi) {
            if (dataset.samples[val_idx[vi]].second != cls) continue;
            for (size_t ti = 0; ti < train_idx.size(); ++ti) {
                const int ty = dataset.samples[train_idx[ti]].second;
                long long count = 0;
                for (size_t j : train_idx) count += dataset.samples[j].second == ty;
                if (count >= 2) {
                    std::swap(val_idx[vi], train_idx[ti]);
                    have.insert(cls);
                    break;
                }
            }
            if (have.count(cls)) break;
        }
    }
    return {gather(dataset, train_idx), gather(dataset, val_idx)};
}

std::pair<LabeledDataset, LabeledDataset> split_tail(const LabeledDataset& dataset, int val_size) {
    const int n = static_cast<int>(dataset.size());
    if (val_size < 0 || val_size >= n)
        throw std::runtime_error("split_tail: val_size " + std::to_string(val_size) +
                                 " too large for dataset of " + std::to_string(n));
    std::vector<size_t> train_idx, val_idx;
    for (size_t i = 0; i < static_cast<size_t>(n - val_size); ++i) train_idx.push_back(i);
    for (size_t i = static_cast<size_t>(n - val_size); i < static_cast<size_t>(n); ++i)
        val_idx.push_back(i);
    return {gather(dataset, train_idx), gather(dataset, val_idx)};
}

} // namespace certilev
