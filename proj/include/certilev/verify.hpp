#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "certilev/data.hpp"
#include "certilev/model.hpp"

namespace certilev {

// Single-forward-pass certificate: margins, pairwise Lipschitz constants and
// the certified radius floor(min margin / constant). radius -1 means the
// sample is misclassified or a margin is not strictly positive. A zero
// constant with a positive margin certifies up to k_max (constant margin).
struct CertResult {
    int predicted = -1;
    bool correct = false;
    std::vector<double> margins;    // indexed by class, entry [y] unused
    std::vector<double> constants;  // indexed by class, entry [y] unused
    long long radius = -1;
    double seconds = 0;
};

// Model-level precomputation shared by all samples: kernel factor product
// (certified-grade spectral norms), head pair norms, global embedding factor.
struct LipslevContext {
    double emb_global = 0;
    double kernel_product = 0;
    Mat pair_norms;
    bool local_embedding = true;
};

LipslevContext make_lipslev_context(const ConvTextClassifier& model, bool local_embedding = true);

CertResult lipslev_verify(const ConvTextClassifier& model, const LipslevContext& ctx,
                          const Sentence& s, int y, int k_max);
CertResult lipslev_verify(const ConvTextClassifier& model, const Sentence& s, int y, int k_max,
                          bool local_embedding = true);

struct BruteForceOptions {
    bool allow_expensive = false;  // required for k >= 2 on long sentences
    int expensive_length_cap = 40;
    bool dedup = true;
};

struct BruteForceResult {
    bool verified = false;
    std::optional<Sentence> witness;  // first misclassified ball member
    double seconds = 0;
    BallStats ball;
};

// Exact verification: evaluates the classifier on every sentence within
// Levenshtein distance k (including s itself).
BruteForceResult brute_force_verify(const ConvTextClassifier& model, const Alphabet& alphabet,
                                    const Sentence& s, int y, int k,
                                    const BruteForceOptions& opts = {});

struct IbpResult {
    bool verified = false;
    Vec margin_lower_bounds;  // indexed by class, entry [y] unused
    double seconds = 0;
    BallStats ball;
};

// Margin lower bounds through the head from a box on the pooled vector:
// positive/negative weight split, no bias.
Vec ibp_margin_lower_bounds(const Mat& head, int y, const IntervalBox& box);

// Pools every radius-1 ball member, wraps the pooled vectors in an interval
// box and bounds the margins through the head. Only k = 1 is possible under
// insertions and deletions.
IbpResult ibp_verify(const ConvTextClassifier& model, const Alphabet& alphabet, const Sentence& s,
                     int y);

// One line-delimited record per (sample, verifier[, k]).
struct SampleRecord {
    int sample_id = 0;
    std::string verifier;
    int length = 0;
    bool clean_correct = false;
    long long radius = -1;  // lipslev only
    int k = 0;              // brute/ibp only
    bool verified = false;  // brute/ibp only
    double seconds = 0;
};

void save_records(const std::vector<SampleRecord>& records, const std::string& path);
std::vector<SampleRecord> load_records(const std::string& path);

struct VerifierReport {
    std::string verifier;
    int k_max = 1;
    long long samples = 0;
    long long clean_correct = 0;
    std::vector<long long> verified_at_k;  // index k-1
    std::vector<double> seconds_at_k;      // index k-1, summed over samples
    double total_seconds = 0;
    long long length1_deletion_exclusions = 0;

    // at k = 1
    std::map<int, std::pair<long long, long long>> length_buckets;  // lo -> {total, verified}
    double mean_len_verified = 0;
    double mean_len_unverified = 0;

    double clean_accuracy() const;
    double verified_accuracy(int k) const;
    double mean_seconds() const;
    double mean_seconds_at(int k) const;
};

struct SoundnessViolation {
    int sample_id = 0;
    std::string kind;  // "lipslev not robust at k=1" / "ibp verified but not brute-force robust"
};

struct EvalOptions {
    bool use_lipslev = true;
    bool use_brute = false;
    bool use_ibp = false;
    int k_max = 1;
    bool allow_expensive = false;
    bool local_embedding = true;
    int limit = 0;  // 0 = whole dataset
    int jobs = 1;
    int bucket_width = 50;
};

struct EvalResult {
    std::vector<VerifierReport> reports;
    std::vector<SampleRecord> records;
    std::vector<SoundnessViolation> violations;
};

// Runs the selected verifiers over the dataset (folding a normalized model
// first) and cross-checks the subset relations lipslev within brute-force and
// ibp within brute-force whenever both sides ran.
EvalResult evaluate(const ConvTextClassifier& model, const LabeledDataset& dataset,
                    const EvalOptions& options);

std::string format_comparison_table(const EvalResult& result);

// Length-stratified verified accuracy rebuilt from saved records.
struct LengthBucketRow {
    int lo = 0, hi = 0;
    long long total = 0, verified = 0;
};
struct LengthReport {
    std::string verifier;
    int k = 1;
    std::vector<LengthBucketRow> rows;
    double mean_len_verified = 0;
    double mean_len_unverified = 0;
    long long verified = 0, total = 0;
};
std::vector<LengthReport> aggregate_by_length(const std::vector<SampleRecord>& records, int k,
                                              int bucket_width);
std::string format_length_report(const std::vector<LengthReport>& reports);

} // namespace certilev
