#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "certilev/data.hpp"
#include "certilev/model.hpp"

namespace certilev {

// plain: cross-entropy on the raw classifier. one_lip: every layer output
// divided by its Lipschitz factor during training; the returned model is
// folded back to plain form. regularized: plain forward plus
// lambda * M(W) * prod M(K) * M(E) penalty.
enum class TrainMode { plain, one_lip, regularized };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::one_lip;
    int epochs = 30;
    int batch_size = 128;
    double lr_max = -1; // <= 0 picks the mode default: 100 for one_lip, 0.01 otherwise
    double lambda = 0.0;
    uint64_t seed = 0;
    NormOrder p = NormOrder::p2;
    int val_size = -1; // < 0 picks min(1000, n/5)

    int embed_dim = 150;
    int hidden = 100;
    int kernel = 10;
    int layers = 1;

    // one_lip only: also backpropagate through the factor divisions instead
    // of treating them as per-step constants
    bool differentiate_normalization = false;

    double resolved_lr_max() const;
    int resolved_val_size(int dataset_size) const;
    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0;
    double val_acc = 0;
    double g_constant = 0; // M(W) * prod M(K) * M(E) at epoch end
    double seconds = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    LipschitzFactors final_factors;
    double final_g = 0;
    int train_size = 0;
    int val_size = 0;
};

void save_train_report(const TrainReport& report, const std::string& path);

// Triangular schedule: 0 -> lr_max over the first half of the steps,
// lr_max -> 0 over the second half.
double cyclic_lr(long long step, long long total_steps, double lr_max);

// Softmax cross-entropy with max-shifted log-sum-exp; writes
// softmax(logits) - onehot(label) into grad_logits.
double cross_entropy(const Vec& logits, int label, Vec& grad_logits);

struct Gradients {
    Mat embedding;
    std::vector<KernelTensor> kernels;
    Mat head;

    void init_like(const ConvTextClassifier& model);
    void set_zero();
    // returns the offending layer name, or empty if all finite
    std::string first_non_finite() const;
};

// Subgradients of the stage factors; max ties broken toward the lowest index.
Mat grad_m_emb(const Mat& embedding, NormOrder p);
KernelTensor grad_m_kernel(const KernelTensor& kernel, NormOrder p);
Mat grad_m_head(const Mat& head, NormOrder r);

// Mean cross-entropy over the batch (plus the lambda*G term in regularized
// mode) and its exact gradients. For one_lip the caller supplies the factors
// of the current step; pass nullptr to recompute from the weights. Gradients
// must be pre-initialized with init_like and are accumulated from zero.
double batch_loss_and_gradients(const ConvTextClassifier& model,
                                const std::vector<std::pair<Sentence, int>>& batch,
                                const TrainConfig& config, const LipschitzFactors* factors,
                                Gradients& grads);

// SGD with the cyclic schedule. Deterministic for a fixed (dataset, config):
// init and shuffle orders come from named sub-streams of config.seed. For
// one_lip the returned model is already folded to plain mode.
std::pair<ConvTextClassifier, TrainReport> train(const LabeledDataset& dataset,
                                                 const TrainConfig& config);

double clean_accuracy(const ConvTextClassifier& model, const LabeledDataset& dataset);

} // namespace certilev
