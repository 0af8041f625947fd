#include "certilev/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace certilev {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int argmax_lowest(const Vec& logits) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(logits.size()); ++i)
        if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
    return best;
}

void require_plain(const ConvTextClassifier& model, const char* who) {
    if (model.mode != ModelMode::plain)
        throw std::runtime_error(std::string(who) + ": model must be in plain mode (fold first)");
}

Vec pooled_vector(const ConvTextClassifier& model, const Sentence& s) {
    return forward_trace(model, s).pooled;
}

} // namespace

LipslevContext make_lipslev_context(const ConvTextClassifier& model, bool local_embedding) {
    require_plain(model, "lipslev");
    LipslevContext ctx;
    ctx.local_embedding = local_embedding;
    ctx.emb_global = m_emb(model.embedding, model.shape.p);
    ctx.kernel_product = 1.0;
    for (const auto& tensor : model.kernels)
        ctx.kernel_product *= m_kernel(tensor, model.shape.p, /*certified=*/true);
    const NormOrder r = holder_conjugate(model.shape.p);
    const int o = model.shape.classes;
    ctx.pair_norms = Mat(o, o);
    for (int y = 0; y < o; ++y)
        for (int j = y + 1; j < o; ++j)
            ctx.pair_norms(y, j) = ctx.pair_norms(j, y) = head_pair_norm(model.head, y, j, r);
    return ctx;
}

CertResult lipslev_verify(const ConvTextClassifier& model, const LipslevContext& ctx,
                          const Sentence& s, int y, int k_max) {
    require_plain(model, "lipslev");
    if (y < 0 || y >= model.shape.classes) throw std::runtime_error("lipslev: label out of range");
    const auto t0 = Clock::now();

    CertResult res;
    const Vec logits = forward(model, s);
    res.predicted = argmax_lowest(logits);
    res.correct = res.predicted == y;

    const double emb =
        ctx.local_embedding ? m_emb_local(model.embedding, s, model.shape.p) : ctx.emb_global;

    const int o = model.shape.classes;
    res.margins.assign(static_cast<size_t>(o), 0.0);
    res.constants.assign(static_cast<size_t>(o), 0.0);
    long long radius = std::numeric_limits<long long>::max();
    bool certifiable = res.correct;
    for (int j = 0; j < o; ++j) {
        if (j == y) continue;
        const double g = logits[static_cast<size_t>(y)] - logits[static_cast<size_t>(j)];
        const double G = ctx.pair_norms(y, j) * ctx.kernel_product * emb;
        res.margins[static_cast<size_t>(j)] = g;
        res.constants[static_cast<size_t>(j)] = G;
        if (g <= 0) {
            certifiable = false;
            continue;
        }
        const double ratio = G == 0 ? std::numeric_limits<double>::infinity() : g / G;
        if (!(ratio < 4.0e18)) {
            // zero or denormal constant: the margin survives any radius we
            // can certify, saturate at k_max
            radius = std::min<long long>(radius, k_max);
            continue;
        }
        long long kf = static_cast<long long>(std::floor(ratio));
        while (kf > 0 && static_cast<double>(kf) * G > g) --kf;
        radius = std::min(radius, kf);
    }
    res.radius = certifiable ? radius : -1;
    res.seconds = seconds_since(t0);
    return res;
}

CertResult lipslev_verify(const ConvTextClassifier& model, const Sentence& s, int y, int k_max,
                          bool local_embedding) {
    return lipslev_verify(model, make_lipslev_context(model, local_embedding), s, y, k_max);
}

BruteForceResult brute_force_verify(const ConvTextClassifier& model, const Alphabet& alphabet,
                                    const Sentence& s, int y, int k,
                                    const BruteForceOptions& opts) {
    require_plain(model, "brute_force");
    if (k < 1) throw std::runtime_error("brute_force: k must be >= 1");
    if (k >= 2 && static_cast<int>(s.size()) > opts.expensive_length_cap && !opts.allow_expensive)
        throw std::runtime_error(
            "brute_force: radius " + std::to_string(k) + " on a sentence of length " +
            std::to_string(s.size()) +
            " grows exponentially; pass the cost acknowledgment flag to proceed");

    const auto t0 = Clock::now();
    BruteForceResult res;
    res.verified = true;

    auto check = [&](const Sentence& q) {
        if (argmax_lowest(forward(model, q)) != y) {
            res.verified = false;
            res.witness = q;
            return false;
        }
        return true;
    };

    if (k == 1) {
        for_each_ball_member(s, alphabet, opts.dedup, res.ball, check);
    } else {
        for (const Sentence& q : enumerate_ball(s, k, alphabet, /*dedup=*/true, &res.ball))
            if (!check(q)) break;
    }
    res.seconds = seconds_since(t0);
    return res;
}

Vec ibp_margin_lower_bounds(const Mat& head, int y, const IntervalBox& box) {
    box.validate();
    const int k = head.rows();
    const int o = head.cols();
    if (static_cast<int>(box.lower.size()) != k)
        throw std::runtime_error("ibp: box dimension does not match the head");
    Vec bounds(static_cast<size_t>(o), 0.0);
    for (int j = 0; j < o; ++j) {
        if (j == y) continue;
        double lb = 0;
        for (int c = 0; c < k; ++c) {
            const double a = head(c, y) - head(c, j);
            lb += a > 0 ? a * box.lower[static_cast<size_t>(c)] : a * box.upper[static_cast<size_t>(c)];
        }
        bounds[static_cast<size_t>(j)] = lb;
    }
    return bounds;
}

IbpResult ibp_verify(const ConvTextClassifier& model, const Alphabet& alphabet, const Sentence& s,
                     int y) {
    require_plain(model, "ibp");
    const auto t0 = Clock::now();
    IbpResult res;

    IntervalBox box;
    for_each_ball_member(s, alphabet, /*dedup=*/true, res.ball, [&](const Sentence& q) {
        box.expand(pooled_vector(model, q));
        return true;
    });

    res.margin_lower_bounds = ibp_margin_lower_bounds(model.head, y, box);
    res.verified = true;
    for (int j = 0; j < model.shape.classes; ++j) {
        if (j == y) continue;
        if (res.margin_lower_bounds[static_cast<size_t>(j)] <= 0) {
            res.verified = false;
            break;
        }
    }
    res.seconds = seconds_since(t0);
    return res;
}

void save_records(const std::vector<SampleRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const SampleRecord& r : records) {
        nlohmann::json j{{"sample_id", r.sample_id},
                         {"verifier", r.verifier},
                         {"length", r.length},
                         {"clean_correct", r.clean_correct},
                         {"seconds", r.seconds}};
        if (r.verifier == "lipslev")
            j["radius"] = r.radius;
        else {
            j["k"] = r.k;
            j["verified"] = r.verified;
        }
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<SampleRecord> load_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<SampleRecord> records;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad record");
        SampleRecord r;
        r.sample_id = j.value("sample_id", 0);
        r.verifier = j.value("verifier", "");
        r.length = j.value("length", 0);
        r.clean_correct = j.value("clean_correct", false);
        r.seconds = j.value("seconds", 0.0);
        r.radius = j.value("radius", static_cast<long long>(-1));
        r.k = j.value("k", 0);
        r.verified = j.value("verified", false);
        records.push_back(std::move(r));
    }
    return records;
}

double VerifierReport::clean_accuracy() const {
    return samples ? static_cast<double>(clean_correct) / static_cast<double>(samples) : 0;
}

double VerifierReport::verified_accuracy(int k) const {
    if (k < 1 || k > static_cast<int>(verified_at_k.size()) || samples == 0) return 0;
    return static_cast<double>(verified_at_k[static_cast<size_t>(k - 1)]) /
           static_cast<double>(samples);
}

double VerifierReport::mean_seconds() const {
    return samples ? total_seconds / static_cast<double>(samples) : 0;
}

double VerifierReport::mean_seconds_at(int k) const {
    if (k < 1 || k > static_cast<int>(seconds_at_k.size()) || samples == 0) return 0;
    return seconds_at_k[static_cast<size_t>(k - 1)] / static_cast<double>(samples);
}

namespace {

struct PerSample {
    CertResult cert;                      // lipslev
    std::vector<std::pair<int, BruteForceResult>> brute;  // per k
    IbpResult ibp;
    bool has_ibp = false;
};

void fill_report_common(VerifierReport& rep, int length, bool clean_correct, bool verified_at_1,
                        double seconds, int bucket_width) {
    ++rep.samples;
    rep.clean_correct += clean_correct;
    rep.total_seconds += seconds;
    const int lo = (length / bucket_width) * bucket_width;
    auto& bucket = rep.length_buckets[lo];
    ++bucket.first;
    bucket.second += verified_at_1;
}

void finish_mean_lengths(VerifierReport& rep, const std::vector<int>& lens_verified,
                         const std::vector<int>& lens_unverified) {
    auto mean = [](const std::vector<int>& v) {
        if (v.empty()) return 0.0;
        double s = 0;
        for (int x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    rep.mean_len_verified = mean(lens_verified);
    rep.mean_len_unverified = mean(lens_unverified);
}

} // namespace

EvalResult evaluate(const ConvTextClassifier& model_in, const LabeledDataset& dataset,
                    const EvalOptions& options) {
    if (dataset.samples.empty()) throw std::runtime_error("evaluate: empty dataset");
    if (options.k_max < 1) throw std::runtime_error("evaluate: k_max must be >= 1");
    if (options.bucket_width < 1) throw std::runtime_error("evaluate: bucket width must be >= 1");

    ConvTextClassifier folded;
    const ConvTextClassifier* model = &model_in;
    if (model_in.mode == ModelMode::normalized) {
        folded = fold_normalization(model_in);
        model = &folded;
    }
    check_alphabet_compat(*model, dataset.alphabet);

    const int n = options.limit > 0
                      ? std::min<int>(options.limit, static_cast<int>(dataset.samples.size()))
                      : static_cast<int>(dataset.samples.size());

    LipslevContext ctx;
    if (options.use_lipslev) ctx = make_lipslev_context(*model, options.local_embedding);

    std::vector<int> brute_ks;
    if (options.use_brute) {
        brute_ks.push_back(1);
        if (options.allow_expensive)
            for (int k = 2; k <= options.k_max; ++k) brute_ks.push_back(k);
    }

    std::vector<PerSample> per_sample(static_cast<size_t>(n));
    auto worker = [&](int begin, int stride) {
        for (int i = begin; i < n; i += stride) {
            const auto& [s, y] = dataset.samples[static_cast<size_t>(i)];
            PerSample& out = per_sample[static_cast<size_t>(i)];
            if (options.use_lipslev) out.cert = lipslev_verify(*model, ctx, s, y, options.k_max);
            for (int k : brute_ks) {
                BruteForceOptions bf;
                bf.allow_expensive = options.allow_expensive;
                out.brute.emplace_back(k, brute_force_verify(*model, dataset.alphabet, s, y, k, bf));
                if (!out.brute.back().second.verified) break;  // smaller radius already fails
            }
            if (options.use_ibp) {
                out.ibp = ibp_verify(*model, dataset.alphabet, s, y);
                out.has_ibp = true;
            }
        }
    };

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker, t, jobs);
        for (auto& t : pool) t.join();
    }

    EvalResult result;

    if (options.use_lipslev) {
        VerifierReport rep;
        rep.verifier = "lipslev";
        rep.k_max = options.k_max;
        rep.verified_at_k.assign(static_cast<size_t>(options.k_max), 0);
        rep.seconds_at_k.assign(static_cast<size_t>(options.k_max), 0.0);
        std::vector<int> lv, lu;
        for (int i = 0; i < n; ++i) {
            const CertResult& c = per_sample[static_cast<size_t>(i)].cert;
            const int len = static_cast<int>(dataset.samples[static_cast<size_t>(i)].first.size());
            for (int k = 1; k <= options.k_max; ++k) {
                rep.verified_at_k[static_cast<size_t>(k - 1)] += c.radius >= k;
                rep.seconds_at_k[static_cast<size_t>(k - 1)] += c.seconds;
            }
            fill_report_common(rep, len, c.correct, c.radius >= 1, c.seconds, options.bucket_width);
            (c.radius >= 1 ? lv : lu).push_back(len);

            SampleRecord rec;
            rec.sample_id = i;
            rec.verifier = "lipslev";
            rec.length = len;
            rec.clean_correct = c.correct;
            rec.radius = c.radius;
            rec.seconds = c.seconds;
            result.records.push_back(std::move(rec));
        }
        finish_mean_lengths(rep, lv, lu);
        result.reports.push_back(std::move(rep));
    }

    if (options.use_brute) {
        VerifierReport rep;
        rep.verifier = "brute";
        rep.k_max = static_cast<int>(brute_ks.size());
        rep.verified_at_k.assign(brute_ks.size(), 0);
        rep.seconds_at_k.assign(brute_ks.size(), 0.0);
        std::vector<int> lv, lu;
        for (int i = 0; i < n; ++i) {
            const PerSample& ps = per_sample[static_cast<size_t>(i)];
            const auto& [s, y] = dataset.samples[static_cast<size_t>(i)];
            const int len = static_cast<int>(s.size());
            const bool clean = argmax_lowest(forward(*model, s)) == y;
            double secs = 0;
            bool prev_ok = true;
            for (size_t bk = 0; bk < brute_ks.size(); ++bk) {
                bool ok = false;
                double sec_k = 0;
                if (bk < ps.brute.size()) {
                    ok = ps.brute[bk].second.verified;
                    sec_k = ps.brute[bk].second.seconds;
                    rep.length1_deletion_exclusions += ps.brute[bk].second.ball.length1_deletions_excluded;
                } else {
                    ok = false;  // skipped because a smaller radius already failed
                }
                ok = ok && prev_ok;
                prev_ok = ok;
                rep.verified_at_k[bk] += ok;
                rep.seconds_at_k[bk] += sec_k;
                secs += sec_k;

                SampleRecord rec;
                rec.sample_id = i;
                rec.verifier = "brute";
                rec.length = len;
                rec.clean_correct = clean;
                rec.k = brute_ks[bk];
                rec.verified = ok;
                rec.seconds = sec_k;
                result.records.push_back(std::move(rec));
            }
            fill_report_common(rep, len, clean, !ps.brute.empty() && ps.brute[0].second.verified,
                               secs, options.bucket_width);
            (!ps.brute.empty() && ps.brute[0].second.verified ? lv : lu).push_back(len);
        }
        finish_mean_lengths(rep, lv, lu);
        result.reports.push_back(std::move(rep));
    }

    if (options.use_ibp) {
        VerifierReport rep;
        rep.verifier = "ibp";
        rep.k_max = 1;
        rep.verified_at_k.assign(1, 0);
        rep.seconds_at_k.assign(1, 0.0);
        std::vector<int> lv, lu;
        for (int i = 0; i < n; ++i) {
            const PerSample& ps = per_sample[static_cast<size_t>(i)];
            const int len = static_cast<int>(dataset.samples[static_cast<size_t>(i)].first.size());
            const auto& [s, y] = dataset.samples[static_cast<size_t>(i)];
            const bool clean = argmax_lowest(forward(*model, s)) == y;
            rep.verified_at_k[0] += ps.ibp.verified;
            rep.seconds_at_k[0] += ps.ibp.seconds;
            rep.length1_deletion_exclusions += ps.ibp.ball.length1_deletions_excluded;
            fill_report_common(rep, len, clean, ps.ibp.verified, ps.ibp.seconds,
                               options.bucket_width);
            (ps.ibp.verified ? lv : lu).push_back(len);

            SampleRecord rec;
            rec.sample_id = i;
            rec.verifier = "ibp";
            rec.length = len;
            rec.clean_correct = clean;
            rec.k = 1;
            rec.verified = ps.ibp.verified;
            rec.seconds = ps.ibp.seconds;
            result.records.push_back(std::move(rec));
        }
        finish_mean_lengths(rep, lv, lu);
        result.reports.push_back(std::move(rep));
    }

    // soundness audits against the exact verifier
    if (options.use_brute) {
        for (int i = 0; i < n; ++i) {
            const PerSample& ps = per_sample[static_cast<size_t>(i)];
            const bool brute1 = !ps.brute.empty() && ps.brute[0].second.verified;
            if (options.use_lipslev && ps.cert.radius >= 1 && !brute1)
                result.violations.push_back({i, "lipslev radius >= 1 but not brute-force robust at k=1"});
            if (options.use_ibp && ps.has_ibp && ps.ibp.verified && !brute1)
                result.violations.push_back({i, "ibp verified but not brute-force robust at k=1"});
        }
    }
    return result;
}

std::string format_comparison_table(const EvalResult& result) {
    std::ostringstream out;
    out << "verifier     k   verified%      clean%   mean-seconds\n";
    char line[128];
    for (const VerifierReport& rep : result.reports) {
        for (int k = 1; k <= static_cast<int>(rep.verified_at_k.size()); ++k) {
            std::snprintf(line, sizeof line, "%-10s %3d   %8.2f    %8.2f   %12.6f\n",
                          rep.verifier.c_str(), k, 100.0 * rep.verified_accuracy(k),
                          100.0 * rep.clean_accuracy(), rep.mean_seconds_at(k));
            out << line;
        }
        if (rep.length1_deletion_exclusions > 0)
            out << "  (" << rep.verifier << ": " << rep.length1_deletion_exclusions
                << " length-1 deletion exclusions in ball enumeration)\n";
    }
    for (const SoundnessViolation& v : result.violations)
        out << "SOUNDNESS VIOLATION sample " << v.sample_id << ": " << v.kind << "\n";
    return out.str();
}

std::vector<LengthReport> aggregate_by_length(const std::vector<SampleRecord>& records, int k,
                                              int bucket_width) {
    if (records.empty()) throw std::runtime_error("aggregate_by_length: no records");
    if (bucket_width < 1) throw std::runtime_error("aggregate_by_length: bucket width must be >= 1");

    std::map<std::string, std::map<int, LengthBucketRow>> buckets;
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> lens;
    for (const SampleRecord& r : records) {
        bool verified;
        if (r.verifier == "lipslev")
            verified = r.radius >= k;
        else if (r.k == k)
            verified = r.verified;
        else
            continue;
        const int lo = (r.length / bucket_width) * bucket_width;
        LengthBucketRow& row = buckets[r.verifier][lo];
        row.lo = lo;
        row.hi = lo + bucket_width;
        ++row.total;
        row.verified += verified;
        (verified ? lens[r.verifier].first : lens[r.verifier].second).push_back(r.length);
    }

    std::vector<LengthReport> reports;
    for (auto& [verifier, rows] : buckets) {
        LengthReport rep;
        rep.verifier = verifier;
        rep.k = k;
        for (auto& [lo, row] : rows) {
            rep.total += row.total;
            rep.verified += row.verified;
            rep.rows.push_back(row);
        }
        auto mean = [](const std::vector<int>& v) {
            if (v.empty()) return 0.0;
            double s = 0;
            for (int x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        rep.mean_len_verified = mean(lens[verifier].first);
        rep.mean_len_unverified = mean(lens[verifier].second);
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::string format_length_report(const std::vector<LengthReport>& reports) {
    std::ostringstream out;
    char line[160];
    for (const LengthReport& rep : reports) {
        out << rep.verifier << " @ k=" << rep.k << "\n";
        out << "  length        n   verified%\n";
        for (const LengthBucketRow& row : rep.rows) {
            std::snprintf(line, sizeof line, "  [%4d,%4d) %5lld    %8.2f\n", row.lo, row.hi,
                          row.total,
                          row.total ? 100.0 * static_cast<double>(row.verified) /
                                          static_cast<double>(row.total)
                                    : 0.0);
            out << line;
        }
        std::snprintf(line, sizeof line,
                      "  mean length: verified %.1f, unverified %.1f; verified %lld/%lld\n",
                      rep.mean_len_verified, rep.mean_len_unverified, rep.verified, rep.total);
        out << line;
    }
    return out.str();
}

} // namespace certilev
