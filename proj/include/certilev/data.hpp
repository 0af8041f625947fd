#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "certilev/textcore.hpp"

namespace certilev {

struct CsvSchema {
    int label_col = 0;
    int text_col = 1;
    bool has_header = false;
};

struct CsvRecord {
    long long line_no = 0; // physical line where the row starts, 1-based
    std::string label;
    std::string text;
};

struct CsvError {
    long long line_no = 0;
    std::string message;
};

// Malformed rows are reported, never silently dropped:
// records.size() + errors.size() == data_rows.
struct CsvResult {
    std::vector<CsvRecord> records;
    std::vector<CsvError> errors;
    long long data_rows = 0;
};

// RFC-4180-style reader: quoted fields may contain commas, doubled quotes
// and line breaks.
CsvResult load_csv(const std::string& path, const CsvSchema& schema);

struct LabeledDataset {
    std::vector<std::pair<Sentence, int>> samples;
    int num_classes = 0;
    Alphabet alphabet;

    size_t size() const { return samples.size(); }
    void validate() const;
    int classes_present() const;
};

// label string -> class id
using LabelMap = std::map<std::string, int>;

// Distinct labels mapped to 0..n-1. Labels that all parse as integers are
// ordered numerically (so "1".."4" maps to 0..3), otherwise lexicographically.
LabelMap build_label_map(const std::vector<CsvRecord>& records);
void save_label_map(const LabelMap& map, const std::string& path);
LabelMap load_label_map(const std::string& path);

// Tokenizes records against the alphabet. Rows with unknown characters or
// unmapped labels are reported into `errors` (with line numbers) and skipped.
// max_len > 0 truncates longer sentences.
LabeledDataset make_dataset(const std::vector<CsvRecord>& records, const Alphabet& alphabet,
                            const LabelMap& labels, int max_len, std::vector<CsvError>& errors);

// Separable toy task: the label is the majority of the class marker
// characters, with at least a 60% majority enforced, plus filler noise.
LabeledDataset synthetic_task(uint64_t seed, int n, int min_len, int max_len,
                              int num_classes = 2);

// Seeded shuffle split into (train, val); class presence in train preserved.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, int val_size,
                                                uint64_t seed);

// Deterministic last-N holdout.
std::pair<LabeledDataset, LabeledDataset> split_tail(const LabeledDataset& dataset, int val_size);

} // namespace certilev
