#include "certilev/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "certilev/data.hpp"
#include "certilev/model.hpp"
#include "certilev/training.hpp"
#include "certilev/verify.hpp"

namespace certilev {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitSoundness = 3;

struct CsvFlags {
    std::string path;
    int label_col = 0;
    int text_col = 1;
    bool has_header = false;
};

void add_csv_flags(CLI::App* cmd, CsvFlags& flags) {
    cmd->add_option("--data", flags.path, "CSV/TSV input file")->required();
    cmd->add_option("--label-col", flags.label_col, "label column index");
    cmd->add_option("--text-col", flags.text_col, "text column index");
    cmd->add_flag("--header", flags.has_header, "skip the first line");
}

CsvResult load_csv_reporting(const CsvFlags& flags) {
    CsvResult csv = load_csv(flags.path, {flags.label_col, flags.text_col, flags.has_header});
    if (!csv.errors.empty()) {
        std::cerr << "certilev: " << csv.errors.size() << " malformed row(s) skipped in "
                  << flags.path << " (first at line " << csv.errors[0].line_no << ": "
                  << csv.errors[0].message << ")\n";
    }
    if (csv.records.empty()) throw std::runtime_error(flags.path + ": no usable rows");
    return csv;
}

LabeledDataset assemble_dataset(const CsvResult& csv, const Alphabet& alphabet,
                                const LabelMap& labels, int max_len) {
    std::vector<CsvError> errors;
    LabeledDataset ds = make_dataset(csv.records, alphabet, labels, max_len, errors);
    if (!errors.empty())
        std::cerr << "certilev: " << errors.size() << " row(s) skipped during tokenization"
                  << " (first at line " << errors[0].line_no << ": " << errors[0].message << ")\n";
    if (ds.samples.empty()) throw std::runtime_error("no tokenizable rows in the input");
    return ds;
}

int resolve_jobs(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("CERTILEV_JOBS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

int cmd_build_alphabet(const CsvFlags& csv_flags, const std::string& out) {
    CsvResult csv = load_csv_reporting(csv_flags);
    AlphabetBuilder builder;
    for (const CsvRecord& r : csv.records) builder.add(r.text);
    Alphabet alphabet = builder.finish();
    alphabet.save(out);
    std::cout << "alphabet size " << alphabet.size() << " written to " << out << "\n";
    return kExitOk;
}

int cmd_train(const CsvFlags& csv_flags, const std::string& alphabet_path,
              const std::string& label_map_path, const std::string& out, TrainConfig config,
              const std::string& mode_name, const std::string& p_name, int max_len) {
    config.mode = train_mode_from_name(mode_name);
    config.p = norm_from_name(p_name);
    config.validate();

    CsvResult csv = load_csv_reporting(csv_flags);

    Alphabet alphabet;
    std::string alphabet_used = alphabet_path;
    if (!alphabet_path.empty()) {
        alphabet = Alphabet::load(alphabet_path);
    } else {
        AlphabetBuilder builder;
        for (const CsvRecord& r : csv.records) builder.add(r.text);
        alphabet = builder.finish();
        alphabet_used = out + ".alphabet";
        alphabet.save(alphabet_used);
        std::cout << "alphabet built from training data (" << alphabet.size()
                  << " characters) and written to " << alphabet_used << "\n";
    }

    LabelMap labels;
    if (!label_map_path.empty()) {
        labels = load_label_map(label_map_path);
    } else {
        labels = build_label_map(csv.records);
        save_label_map(labels, out + ".labels");
    }

    LabeledDataset dataset = assemble_dataset(csv, alphabet, labels, max_len);
    auto [model, report] = train(dataset, config);

    save_checkpoint(model, out, alphabet_used);
    save_train_report(report, out + ".report");

    const double final_val = report.epochs.empty() ? 0.0 : report.epochs.back().val_acc;
    std::printf("trained %s (p=%s) on %d samples, val %d: final G %.6g, val accuracy %.2f%%\n",
                mode_name.c_str(), p_name.c_str(), report.train_size, report.val_size,
                report.final_g, 100.0 * final_val);
    std::cout << "checkpoint written to " << out << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& model_path, const CsvFlags& csv_flags,
               const std::string& alphabet_path, const std::string& label_map_path,
               const std::string& verifiers, const std::string& out, EvalOptions options,
               int jobs_flag, int max_len) {
    options.use_lipslev = options.use_brute = options.use_ibp = false;
    std::stringstream ss(verifiers);
    std::string name;
    while (std::getline(ss, name, ',')) {
        if (name == "lipslev")
            options.use_lipslev = true;
        else if (name == "brute")
            options.use_brute = true;
        else if (name == "ibp")
            options.use_ibp = true;
        else if (!name.empty())
            throw std::runtime_error("unknown verifier '" + name +
                                     "' (expected lipslev, brute or ibp)");
    }
    if (!options.use_lipslev && !options.use_brute && !options.use_ibp)
        throw std::runtime_error("no verifier selected");
    if (options.use_brute && options.k_max > 1 && !options.allow_expensive)
        throw std::runtime_error(
            "brute-force verification beyond k=1 is exponential; pass --allow-expensive");
    options.jobs = resolve_jobs(jobs_flag);

    Checkpoint ckpt = load_checkpoint(model_path);
    const std::string alpha = !alphabet_path.empty() ? alphabet_path : ckpt.alphabet_name;
    if (alpha.empty())
        throw std::runtime_error("no alphabet: pass --alphabet or use a checkpoint that names one");
    Alphabet alphabet = Alphabet::load(alpha);
    check_alphabet_compat(ckpt.model, alphabet);

    CsvResult csv = load_csv_reporting(csv_flags);
    LabelMap labels;
    if (!label_map_path.empty()) {
        labels = load_label_map(label_map_path);
    } else {
        std::ifstream sidecar(model_path + ".labels");
        if (sidecar.good())
            labels = load_label_map(model_path + ".labels");
        else
            labels = build_label_map(csv.records);
    }
    if (static_cast<int>(labels.size()) != ckpt.model.shape.classes)
        throw std::runtime_error("label map has " + std::to_string(labels.size()) +
                                 " classes but the model has " +
                                 std::to_string(ckpt.model.shape.classes));

    LabeledDataset dataset = assemble_dataset(csv, alphabet, labels, max_len);
    EvalResult result = evaluate(ckpt.model, dataset, options);

    std::cout << format_comparison_table(result);
    if (options.use_ibp && options.k_max > 1)
        std::cout << "(ibp supports k=1 only under insertions and deletions)\n";
    if (!out.empty()) {
        save_records(result.records, out);
        std::cout << "records written to " << out << "\n";
    }
    if (!result.violations.empty()) {
        std::cerr << "certilev: " << result.violations.size() << " soundness violation(s)\n";
        return kExitSoundness;
    }
    return kExitOk;
}

int cmd_report(const std::string& records_path, int k, int bucket) {
    std::vector<SampleRecord> records = load_records(records_path);
    if (records.empty()) throw std::runtime_error(records_path + ": no records");
    std::cout << format_length_report(aggregate_by_length(records, k, bucket));
    return kExitOk;
}

int cmd_synth(const std::string& out, uint64_t seed, int n, int min_len, int max_len,
              int classes) {
    LabeledDataset ds = synthetic_task(seed, n, min_len, max_len, classes);
    std::ofstream file(out, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open for writing: " + out);
    for (const auto& [s, y] : ds.samples) file << y << "," << detokenize(s, ds.alphabet) << "\n";
    if (!file) throw std::runtime_error("write failed: " + out);
    std::cout << "wrote " << ds.samples.size() << " samples over a " << ds.alphabet.size()
              << "-character alphabet to " << out << "\n";
    return kExitOk;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"certilev: Levenshtein-distance robustness certificates for character-level "
                 "convolutional text classifiers"};
    app.require_subcommand(1);

    // build-alphabet
    auto* ba = app.add_subcommand("build-alphabet", "build a character vocabulary from a CSV");
    CsvFlags ba_csv;
    std::string ba_out;
    add_csv_flags(ba, ba_csv);
    ba->add_option("--out", ba_out, "alphabet file to write")->required();

    // train
    auto* tr = app.add_subcommand("train", "train a classifier");
    CsvFlags tr_csv;
    TrainConfig tr_config;
    std::string tr_alphabet, tr_labels, tr_out, tr_mode = "one_lip", tr_p = "2";
    int tr_max_len = 0;
    add_csv_flags(tr, tr_csv);
    tr->add_option("--alphabet", tr_alphabet, "alphabet file (built from the data if omitted)");
    tr->add_option("--label-map", tr_labels, "label map sidecar (built from the data if omitted)");
    tr->add_option("--mode", tr_mode, "plain | one_lip | regularized")
        ->check(CLI::IsMember({"plain", "one_lip", "regularized"}));
    tr->add_option("--p", tr_p, "norm order: 1 | 2 | inf")->check(CLI::IsMember({"1", "2", "inf"}));
    tr->add_option("--epochs", tr_config.epochs, "training epochs");
    tr->add_option("--batch", tr_config.batch_size, "batch size");
    tr->add_option("--lr-max", tr_config.lr_max, "peak of the cyclic schedule");
    tr->add_option("--lambda", tr_config.lambda, "Lipschitz regularization weight");
    tr->add_option("--seed", tr_config.seed, "seed for init/shuffle streams");
    tr->add_option("--val-size", tr_config.val_size, "validation holdout (last N samples)");
    tr->add_option("--embed-dim", tr_config.embed_dim, "embedding width");
    tr->add_option("--hidden", tr_config.hidden, "conv filters per layer");
    tr->add_option("--kernel", tr_config.kernel, "conv kernel size");
    tr->add_option("--layers", tr_config.layers, "conv layers");
    tr->add_option("--max-len", tr_max_len, "truncate sentences longer than this (0 = off)");
    tr->add_flag("--differentiate-normalization", tr_config.differentiate_normalization,
                 "one_lip: backprop through the factor divisions");
    tr->add_option("--out", tr_out, "checkpoint file to write")->required();
    tr->set_config("--config", "", "key=value config file (keys match the long flags)");

    // verify
    auto* ve = app.add_subcommand("verify", "run verifiers and print a comparison table");
    CsvFlags ve_csv;
    EvalOptions ve_options;
    std::string ve_model, ve_alphabet, ve_labels, ve_verifiers = "lipslev", ve_out;
    int ve_jobs = 0, ve_max_len = 0;
    bool ve_global_emb = false;
    ve->add_option("--model", ve_model, "checkpoint file")->required();
    add_csv_flags(ve, ve_csv);
    ve->add_option("--alphabet", ve_alphabet, "alphabet file (default: the one in the checkpoint)");
    ve->add_option("--label-map", ve_labels, "label map sidecar");
    ve->add_option("--verifiers", ve_verifiers, "comma list of lipslev,brute,ibp");
    ve->add_option("--k-max", ve_options.k_max, "largest radius to certify");
    ve->add_option("--limit", ve_options.limit, "verify only the first N samples");
    ve->add_option("--jobs", ve_jobs, "worker threads (or CERTILEV_JOBS)");
    ve->add_option("--bucket", ve_options.bucket_width, "length bucket width for the report");
    ve->add_option("--max-len", ve_max_len, "truncate sentences longer than this (0 = off)");
    ve->add_flag("--allow-expensive", ve_options.allow_expensive,
                 "acknowledge the exponential cost of brute force beyond k=1");
    ve->add_flag("--global-emb", ve_global_emb,
                 "use the global embedding factor instead of the per-sentence one");
    ve->add_option("--out", ve_out, "write per-sample records (JSON lines)");

    // report
    auto* re = app.add_subcommand("report", "length-stratified tables from saved records");
    std::string re_records;
    int re_k = 1, re_bucket = 50;
    bool re_by_length = false;
    re->add_option("--records", re_records, "records file from verify --out")->required();
    re->add_flag("--by-length", re_by_length, "bucket verified accuracy by sentence length");
    re->add_option("--bucket", re_bucket, "bucket width");
    re->add_option("--k", re_k, "radius to report");

    // synth
    auto* sy = app.add_subcommand("synth", "write a separable synthetic CSV for smoke tests");
    std::string sy_out;
    uint64_t sy_seed = 0;
    int sy_n = 2000, sy_min = 10, sy_max = 30, sy_classes = 2;
    sy->add_option("--out", sy_out, "CSV file to write")->required();
    sy->add_option("--seed", sy_seed, "generator seed");
    sy->add_option("--n", sy_n, "sample count");
    sy->add_option("--min-len", sy_min, "minimum sentence length");
    sy->add_option("--max-len", sy_max, "maximum sentence length");
    sy->add_option("--classes", sy_classes, "number of classes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (ba->parsed()) return cmd_build_alphabet(ba_csv, ba_out);
        if (tr->parsed())
            return cmd_train(tr_csv, tr_alphabet, tr_labels, tr_out, tr_config, tr_mode, tr_p,
                             tr_max_len);
        if (ve->parsed()) {
            ve_options.local_embedding = !ve_global_emb;
            return cmd_verify(ve_model, ve_csv, ve_alphabet, ve_labels, ve_verifiers, ve_out,
                              ve_options, ve_jobs, ve_max_len);
        }
        if (re->parsed()) {
            if (!re_by_length)
                std::cerr << "certilev: note: only --by-length reports are implemented; "
                             "printing the length table\n";
            return cmd_report(re_records, re_k, re_bucket);
        }
        if (sy->parsed()) return cmd_synth(sy_out, sy_seed, sy_n, sy_min, sy_max, sy_classes);
    } catch (const std::exception& e) {
        std::cerr << "certilev: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitError;
}

} // namespace certilev
