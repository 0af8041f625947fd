#include "certilev/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace certilev {

std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::plain: return "plain";
        case TrainMode::one_lip: return "one_lip";
        case TrainMode::regularized: return "regularized";
    }
    throw std::logic_error("bad TrainMode");
}

TrainMode train_mode_from_name(const std::string& name) {
    if (name == "plain") return TrainMode::plain;
    if (name == "one_lip") return TrainMode::one_lip;
    if (name == "regularized") return TrainMode::regularized;
    throw std::runtime_error("unknown training mode '" + name +
                             "' (expected plain, one_lip or regularized)");
}

double TrainConfig::resolved_lr_max() const {
    if (lr_max > 0) return lr_max;
    return mode == TrainMode::one_lip ? 100.0 : 0.01;
}

int TrainConfig::resolved_val_size(int dataset_size) const {
    if (val_size >= 0) return val_size;
    return std::min(1000, dataset_size / 5);
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
    if (batch_size < 1) throw std::runtime_error("config: batch size must be >= 1");
    if (lambda < 0) throw std::runtime_error("config: lambda must be >= 0");
    if (lambda > 0 && mode != TrainMode::regularized)
        throw std::runtime_error("config: lambda requires regularized mode");
    if (differentiate_normalization && mode != TrainMode::one_lip)
        throw std::runtime_error("config: differentiate_normalization requires one_lip mode");
    if (embed_dim < 1 || hidden < 1 || kernel < 1 || layers < 1)
        throw std::runtime_error("config: model dimensions must be positive");
}

void save_train_report(const TrainReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const EpochStats& e : report.epochs) {
        nlohmann::json rec{{"epoch", e.epoch},
                           {"loss", e.mean_loss},
                           {"val_acc", e.val_acc},
                           {"G", e.g_constant},
                           {"seconds", e.seconds}};
        out << rec.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

double cyclic_lr(long long step, long long total_steps, double lr_max) {
    if (step < 0 || step >= total_steps) throw std::runtime_error("cyclic_lr: step out of range");
    const double half = static_cast<double>(total_steps) / 2.0;
    if (static_cast<double>(step) <= half) return lr_max * static_cast<double>(step) / half;
    return lr_max * static_cast<double>(total_steps - step) / (static_cast<double>(total_steps) - half);
}

double cross_entropy(const Vec& logits, int label, Vec& grad_logits) {
    const int o = static_cast<int>(logits.size());
    if (label < 0 || label >= o) throw std::runtime_error("cross_entropy: label out of range");
    double hi = logits[0];
    for (double x : logits) {
        if (!std::isfinite(x)) throw std::runtime_error("cross_entropy: non-finite logits");
        hi = std::max(hi, x);
    }
    double sum = 0;
    for (double x : logits) sum += std::exp(x - hi);
    const double lse = hi + std::log(sum);

    grad_logits.assign(static_cast<size_t>(o), 0.0);
    for (int i = 0; i < o; ++i)
        grad_logits[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - hi) / sum;
    grad_logits[static_cast<size_t>(label)] -= 1.0;
    return lse - logits[static_cast<size_t>(label)];
}

void Gradients::init_like(const ConvTextClassifier& model) {
    embedding = Mat(model.embedding.rows(), model.embedding.cols());
    kernels.clear();
    for (const auto& tensor : model.kernels) {
        KernelTensor g;
        for (const Mat& slice : tensor) g.emplace_back(slice.rows(), slice.cols());
        kernels.push_back(std::move(g));
    }
    head = Mat(model.head.rows(), model.head.cols());
}

void Gradients::set_zero() {
    std::fill(embedding.data(), embedding.data() + embedding.size(), 0.0);
    for (auto& tensor : kernels)
        for (Mat& slice : tensor) std::fill(slice.data(), slice.data() + slice.size(), 0.0);
    std::fill(head.data(), head.data() + head.size(), 0.0);
}

std::string Gradients::first_non_finite() const {
    if (!embedding.all_finite()) return "embedding";
    for (size_t i = 0; i < kernels.size(); ++i)
        for (const Mat& slice : kernels[i])
            if (!slice.all_finite()) return "conv layer " + std::to_string(i + 1);
    if (!head.all_finite()) return "head";
    return "";
}

namespace {

// Subgradient of ||x||_p; ties at the max broken toward the lowest index.
void grad_vec_norm(const double* x, int d, NormOrder p, double scale, double* out) {
    switch (p) {
        case NormOrder::p1: {
            for (int i = 0; i < d; ++i)
                out[i] += scale * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
            return;
        }
        case NormOrder::p2: {
            double n = 0;
            for (int i = 0; i < d; ++i) n += x[i] * x[i];
            n = std::sqrt(n);
            if (n == 0) return;
            for (int i = 0; i < d; ++i) out[i] += scale * x[i] / n;
            return;
        }
        case NormOrder::pinf: {
            int best = 0;
            for (int i = 1; i < d; ++i)
                if (std::abs(x[i]) > std::abs(x[best])) best = i;
            out[best] += scale * (x[best] > 0 ? 1.0 : (x[best] < 0 ? -1.0 : 0.0));
            return;
        }
    }
}

} // namespace

Mat grad_m_emb(const Mat& embedding, NormOrder p) {
    const int v = embedding.rows();
    const int d = embedding.cols();
    // locate the max achiever: rows first, then pairs, lowest index wins
    double best = -1;
    int best_row = -1, best_i = -1, best_j = -1;
    for (int i = 0; i < v; ++i) {
        const double n = vec_norm(embedding.row(i), d, p);
        if (n > best) {
            best = n;
            best_row = i;
        }
    }
    for (int i = 0; i < v; ++i)
        for (int j = i + 1; j < v; ++j) {
            const double n = vec_diff_norm(embedding.row(i), embedding.row(j), d, p);
            if (n > best) {
                best = n;
                best_row = -1;
                best_i = i;
                best_j = j;
            }
        }

    Mat grad(v, d);
    if (best_row >= 0) {
        grad_vec_norm(embedding.row(best_row), d, p, 1.0, grad.row(best_row));
    } else {
        Vec diff(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) diff[static_cast<size_t>(c)] = embedding(best_i, c) - embedding(best_j, c);
        Vec g(static_cast<size_t>(d), 0.0);
        grad_vec_norm(diff.data(), d, p, 1.0, g.data());
        for (int c = 0; c < d; ++c) {
            grad(best_i, c) += g[static_cast<size_t>(c)];
            grad(best_j, c) -= g[static_cast<size_t>(c)];
        }
    }
    return grad;
}

KernelTensor grad_m_kernel(const KernelTensor& kernel, NormOrder p) {
    KernelTensor grad;
    for (const Mat& slice : kernel) {
        Mat g(slice.rows(), slice.cols());
        switch (p) {
            case NormOrder::p1: { // max absolute column sum
                int best = 0;
                double best_sum = -1;
                for (int j = 0; j < slice.cols(); ++j) {
                    double s = 0;
                    for (int i = 0; i < slice.rows(); ++i) s += std::abs(slice(i, j));
                    if (s > best_sum) {
                        best_sum = s;
                        best = j;
                    }
                }
                for (int i = 0; i < slice.rows(); ++i) {
                    const double x = slice(i, best);
                    g(i, best) = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
                }
                break;
            }
            case NormOrder::pinf: { // max absolute row sum
                int best = 0;
                double best_sum = -1;
                for (int i = 0; i < slice.rows(); ++i) {
                    double s = 0;
                    for (int j = 0; j < slice.cols(); ++j) s += std::abs(slice(i, j));
                    if (s > best_sum) {
                        best_sum = s;
                        best = i;
                    }
                }
                for (int j = 0; j < slice.cols(); ++j) {
                    const double x = slice(best, j);
                    g(best, j) = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
                }
                break;
            }
            case NormOrder::p2: { // d sigma / dM = u v^T for the top singular pair
                Vec u, vvec;
                spectral_norm(slice, &u, &vvec);
                for (int i = 0; i < slice.rows(); ++i)
                    for (int j = 0; j < slice.cols(); ++j)
                        g(i, j) = u[static_cast<size_t>(i)] * vvec[static_cast<size_t>(j)];
                break;
            }
        }
        grad.push_back(std::move(g));
    }
    return grad;
}

Mat grad_m_head(const Mat& head, NormOrder r) {
    const int k = head.rows();
    const int o = head.cols();
    double best = -1;
    int by = 0, bj = 1;
    Vec diff(static_cast<size_t>(k));
    for (int y = 0; y < o; ++y)
        for (int j = y + 1; j < o; ++j) {
            const double n = head_pair_norm(head, y, j, r);
            if (n > best) {
                best = n;
                by = y;
                bj = j;
            }
        }
    for (int c = 0; c < k; ++c) diff[static_cast<size_t>(c)] = head(c, by) - head(c, bj);
    Vec g(static_cast<size_t>(k), 0.0);
    grad_vec_norm(diff.data(), k, r, 1.0, g.data());
    Mat grad(k, o);
    for (int c = 0; c < k; ++c) {
        grad(c, by) += g[static_cast<size_t>(c)];
        grad(c, bj) -= g[static_cast<size_t>(c)];
    }
    return grad;
}

namespace {

// Reverse pass for one sample; grad_logits must already carry the 1/batch
// weight. factors may be null for plain-mode models.
void backward_sample(const ConvTextClassifier& model, const Sentence& s,
                     const ForwardTrace& trace, const Vec& grad_logits,
                     const LipschitzFactors* factors, bool differentiate_normalization,
                     Gradients& grads) {
    const ModelShape& sh = model.shape;
    const bool normalized = model.mode == ModelMode::normalized;
    const double head_div = normalized ? factors->head : 1.0;

    // head: logits_o = sum_c pooled_c W(c,o) / head_div
    Vec dpooled(static_cast<size_t>(sh.hidden), 0.0);
    for (int c = 0; c < sh.hidden; ++c) {
        const double* wrow = model.head.row(c);
        double* gw = grads.head.row(c);
        const double pc = trace.pooled[static_cast<size_t>(c)];
        double acc = 0;
        for (int o = 0; o < sh.classes; ++o) {
            const double gl = grad_logits[static_cast<size_t>(o)];
            gw[o] += pc * gl / head_div;
            acc += wrow[o] * gl / head_div;
        }
        dpooled[static_cast<size_t>(c)] = acc;
    }
    if (normalized && differentiate_normalization) {
        double inner = 0;
        for (int o = 0; o < sh.classes; ++o)
            inner += grad_logits[static_cast<size_t>(o)] * trace.logits[static_cast<size_t>(o)];
        const double dhead = -inner / head_div;
        Mat mgrad = grad_m_head(model.head, holder_conjugate(sh.p));
        for (size_t i = 0; i < mgrad.size(); ++i) grads.head.data()[i] += dhead * mgrad.data()[i];
    }

    // sum pooling broadcasts the pooled gradient to every row
    const Mat& last = trace.hidden.back();
    Mat dh(last.rows(), last.cols());
    for (int i = 0; i < dh.rows(); ++i)
        for (int c = 0; c < sh.hidden; ++c) dh(i, c) = dpooled[static_cast<size_t>(c)];

    for (int layer = sh.layers - 1; layer >= 0; --layer) {
        const Mat& h = trace.hidden[static_cast<size_t>(layer)];
        const Mat& input = layer == 0 ? trace.embedded : trace.hidden[static_cast<size_t>(layer - 1)];
        const double div = normalized ? factors->kernels[static_cast<size_t>(layer)] : 1.0;

        if (normalized && differentiate_normalization) {
            double inner = 0;
            for (size_t i = 0; i < h.size(); ++i) inner += dh.data()[i] * h.data()[i];
            const double dfac = -inner / div;
            KernelTensor mgrad = grad_m_kernel(model.kernels[static_cast<size_t>(layer)], sh.p);
            for (size_t t = 0; t < mgrad.size(); ++t)
                for (size_t i = 0; i < mgrad[t].size(); ++i)
                    grads.kernels[static_cast<size_t>(layer)][t].data()[i] +=
                        dfac * mgrad[t].data()[i];
        }

        // through the ReLU and the division: h = relu(conv) / div
        Mat da(h.rows(), h.cols());
        for (size_t i = 0; i < h.size(); ++i)
            da.data()[i] = h.data()[i] > 0 ? dh.data()[i] / div : 0.0;

        Mat dinput(input.rows(), input.cols());
        conv_backward(input, model.kernels[static_cast<size_t>(layer)], da,
                      grads.kernels[static_cast<size_t>(layer)], dinput);
        dh = std::move(dinput);
    }

    // embedding rows: embedded(i, :) = E(s_i, :) / emb_div
    const double emb_div = normalized ? factors->emb : 1.0;
    if (normalized && differentiate_normalization) {
        double inner = 0;
        for (size_t i = 0; i < trace.embedded.size(); ++i)
            inner += dh.data()[i] * trace.embedded.data()[i];
        const double demb = -inner / emb_div;
        Mat mgrad = grad_m_emb(model.embedding, sh.p);
        for (size_t i = 0; i < mgrad.size(); ++i) grads.embedding.data()[i] += demb * mgrad.data()[i];
    }
    for (size_t i = 0; i < s.size(); ++i) {
        double* ge = grads.embedding.row(s[i]);
        const double* drow = dh.row(static_cast<int>(i));
        for (int c = 0; c < sh.embed_dim; ++c) ge[c] += drow[c] / emb_div;
    }
}

} // namespace

double batch_loss_and_gradients(const ConvTextClassifier& model,
                                const std::vector<std::pair<Sentence, int>>& batch,
                                const TrainConfig& config, const LipschitzFactors* factors,
                                Gradients& grads) {
    if (batch.empty()) throw std::runtime_error("batch_loss_and_gradients: empty batch");
    const bool normalized = model.mode == ModelMode::normalized;
    LipschitzFactors computed;
    if (normalized && !factors) {
        computed = compute_factors(model);
        factors = &computed;
    }

    grads.set_zero();
    const double weight = 1.0 / static_cast<double>(batch.size());
    double loss = 0;
    Vec grad_logits;
    for (const auto& [s, y] : batch) {
        ForwardTrace trace = forward_trace(model, s, factors);
        loss += weight * cross_entropy(trace.logits, y, grad_logits);
        for (double& g : grad_logits) g *= weight;
        backward_sample(model, s, trace, grad_logits, factors, config.differentiate_normalization,
                        grads);
    }

    if (config.mode == TrainMode::regularized && config.lambda > 0) {
        const NormOrder p = model.shape.p;
        LipschitzFactors f = compute_factors(model);
        double g_value = f.head * f.emb * f.kernel_product();
        loss += config.lambda * g_value;

        const double others_head = f.emb * f.kernel_product();
        Mat gh = grad_m_head(model.head, holder_conjugate(p));
        for (size_t i = 0; i < gh.size(); ++i)
            grads.head.data()[i] += config.lambda * others_head * gh.data()[i];

        const double others_emb = f.head * f.kernel_product();
        Mat ge = grad_m_emb(model.embedding, p);
        for (size_t i = 0; i < ge.size(); ++i)
            grads.embedding.data()[i] += config.lambda * others_emb * ge.data()[i];

        for (size_t layer = 0; layer < model.kernels.size(); ++layer) {
            double others = f.head * f.emb;
            for (size_t j = 0; j < f.kernels.size(); ++j)
                if (j != layer) others *= f.kernels[j];
            KernelTensor gk = grad_m_kernel(model.kernels[layer], p);
            for (size_t t = 0; t < gk.size(); ++t)
                for (size_t i = 0; i < gk[t].size(); ++i)
                    grads.kernels[layer][t].data()[i] += config.lambda * others * gk[t].data()[i];
        }
    }
    return loss;
}

double clean_accuracy(const ConvTextClassifier& model, const LabeledDataset& dataset) {
    if (dataset.samples.empty()) return 0;
    LipschitzFactors factors;
    const LipschitzFactors* fp = nullptr;
    if (model.mode == ModelMode::normalized) {
        factors = compute_factors(model);
        fp = &factors;
    }
    long long correct = 0;
    for (const auto& [s, y] : dataset.samples) {
        Vec logits = forward(model, s, fp);
        int arg = 0;
        for (int i = 1; i < static_cast<int>(logits.size()); ++i)
            if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(arg)]) arg = i;
        correct += arg == y;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
}

std::pair<ConvTextClassifier, TrainReport> train(const LabeledDataset& dataset,
                                                 const TrainConfig& config) {
    config.validate();
    dataset.validate();

    const int n = static_cast<int>(dataset.size());
    const int vs = config.resolved_val_size(n);
    if (vs >= n) throw std::runtime_error("train: validation size too large");
    auto [train_set, val_set] = split_tail(dataset, vs);
    if (train_set.classes_present() < 2)
        throw std::runtime_error("train: training data must contain at least 2 classes");

    ModelShape shape{.vocab = dataset.alphabet.size(),
                     .embed_dim = config.embed_dim,
                     .hidden = config.hidden,
                     .kernel = config.kernel,
                     .layers = config.layers,
                     .classes = dataset.num_classes,
                     .p = config.p};
    Rng init_rng(config.seed, "init");
    const ModelMode mode =
        config.mode == TrainMode::one_lip ? ModelMode::normalized : ModelMode::plain;
    ConvTextClassifier model = init_model(shape, mode, init_rng);

    const int train_n = static_cast<int>(train_set.size());
    const long long steps_per_epoch = (train_n + config.batch_size - 1) / config.batch_size;
    const long long total_steps = steps_per_epoch * config.epochs;
    const double lr_max = config.resolved_lr_max();

    Rng shuffle_rng(config.seed, "shuffle");
    std::vector<size_t> order(static_cast<size_t>(train_n));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    Gradients grads;
    grads.init_like(model);
    TrainReport report;
    report.train_size = train_n;
    report.val_size = static_cast<int>(val_set.size());

    long long step = 0;
    std::vector<std::pair<Sentence, int>> batch;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);

        double loss_sum = 0;
        long long batches = 0;
        for (long long b = 0; b < steps_per_epoch; ++b) {
            batch.clear();
            const size_t lo = static_cast<size_t>(b) * config.batch_size;
            const size_t hi = std::min(lo + config.batch_size, static_cast<size_t>(train_n));
            for (size_t i = lo; i < hi; ++i) batch.push_back(train_set.samples[order[i]]);

            LipschitzFactors step_factors;
            const LipschitzFactors* fp = nullptr;
            if (model.mode == ModelMode::normalized) {
                step_factors = compute_factors(model);
                fp = &step_factors;
            }
            loss_sum += batch_loss_and_gradients(model, batch, config, fp, grads);
            ++batches;

            const std::string bad = grads.first_non_finite();
            if (!bad.empty())
                throw std::runtime_error("train: non-finite gradient in " + bad + " at step " +
                                         std::to_string(step));

            const double lr = cyclic_lr(step, total_steps, lr_max);
            for (size_t i = 0; i < model.embedding.size(); ++i)
                model.embedding.data()[i] -= lr * grads.embedding.data()[i];
            for (size_t l = 0; l < model.kernels.size(); ++l)
                for (size_t t = 0; t < model.kernels[l].size(); ++t)
                    for (size_t i = 0; i < model.kernels[l][t].size(); ++i)
                        model.kernels[l][t].data()[i] -= lr * grads.kernels[l][t].data()[i];
            for (size_t i = 0; i < model.head.size(); ++i)
                model.head.data()[i] -= lr * grads.head.data()[i];
            ++step;
        }

        // in one_lip mode the raw weight scale is arbitrary; report the
        // constant of the folded equivalent (1 by construction)
        LipschitzFactors f = config.mode == TrainMode::one_lip
                                 ? compute_factors(fold_normalization(model))
                                 : compute_factors(model);
        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(batches);
        stats.val_acc = val_set.samples.empty() ? 0.0 : clean_accuracy(model, val_set);
        stats.g_constant = f.head * f.emb * f.kernel_product();
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(stats);
    }

    report.final_factors = config.mode == TrainMode::one_lip
                               ? compute_factors(fold_normalization(model))
                               : compute_factors(model);
    report.final_g =
        report.final_factors.head * report.final_factors.emb * report.final_factors.kernel_product();

    if (config.mode == TrainMode::one_lip) model = fold_normalization(model);
    return {std::move(model), std::move(report)};
}

} // namespace certilev
