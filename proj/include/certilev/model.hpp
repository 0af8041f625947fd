#pragma once

#include <optional>
#include <string>
#include <vector>

#include "certilev/erp.hpp"
#include "certilev/mat.hpp"
#include "certilev/rng.hpp"
#include "certilev/textcore.hpp"

namespace certilev {

// plain: logits as parameterized. normalized: every stage output divided by
// its layer Lipschitz factor so the end-to-end margin constant is at most 1.
enum class ModelMode { plain, normalized };

std::string mode_name(ModelMode m);
ModelMode mode_from_name(const std::string& name);

struct ModelShape {
    int vocab = 0;      // |alphabet|
    int embed_dim = 0;  // embedding width d
    int hidden = 0;     // conv filters per layer
    int kernel = 0;     // conv kernel size q
    int layers = 1;
    int classes = 2;
    NormOrder p = NormOrder::p2;

    void validate() const;
    bool operator==(const ModelShape&) const = default;
};

// One conv layer: kernel slices K[0..q-1], each hidden x in_dim, where
// in_dim = embed_dim for the first layer and hidden afterwards.
using KernelTensor = std::vector<Mat>;

struct ConvTextClassifier {
    ModelShape shape;
    ModelMode mode = ModelMode::plain;
    Mat embedding;                      // vocab x embed_dim
    std::vector<KernelTensor> kernels;  // one tensor per layer
    Mat head;                           // hidden x classes, columns are class vectors

    void validate() const;
    bool operator==(const ConvTextClassifier&) const = default;
};

// Per-layer Lipschitz factors (kernel factors at the model's norm order,
// head factor at the Holder conjugate).
struct LipschitzFactors {
    double emb = 0;
    std::vector<double> kernels;
    double head = 0;

    double kernel_product() const;
};

// Elementwise bounds on the pooled representation.
struct IntervalBox {
    Vec lower, upper;

    void expand(const Vec& point);
    void validate() const;
};

// Induced p->p operator norm for a matrix acting on column vectors:
// max absolute column sum (p=1), spectral norm (p=2), max absolute row sum
// (p=inf). `certified` multiplies the power-iteration estimate by 1+1e-6 so
// a slightly under-converged value cannot understate a certification bound;
// never used during training.
double induced_opnorm(const Mat& m, NormOrder p, bool certified = false);

// Largest singular value via power iteration on M^T M: fixed seeded start
// vector, at most 200 iterations, stop at relative change < 1e-9. Optionally
// returns the top singular pair (u, v) with ||Mv|| = sigma, u = Mv/sigma.
double spectral_norm(const Mat& m, Vec* left = nullptr, Vec* right = nullptr);

double m_kernel(const KernelTensor& kernel, NormOrder p, bool certified = false);
double m_emb(const Mat& embedding, NormOrder p);
double m_emb_local(const Mat& embedding, const Sentence& s, NormOrder p);
// max over class pairs of || w_y - w_yhat ||_r
double m_head(const Mat& head, NormOrder r);
double head_pair_norm(const Mat& head, int y, int yhat, NormOrder r);

LipschitzFactors compute_factors(const ConvTextClassifier& model, bool certified = false);

// Margin Lipschitz constant for the class pair (y, yhat): the head pair norm
// times the kernel factors times the embedding factor (the local, per-sentence
// embedding factor when s is given -- tighter and still valid for balls
// centered at s). For normalized models the layer divisions cancel the kernel
// terms and the value is at most 1.
double margin_lipschitz(const ConvTextClassifier& model, int y, int yhat,
                        const Sentence* s = nullptr, bool certified = false);

// Full cross-correlation with q-1 zero rows of padding on both sides;
// output length is input length + q - 1, no bias.
Mat conv_full(const Mat& input, const KernelTensor& kernel);

// Gradients of a scalar loss through conv_full: accumulates into grad_kernel
// and grad_input (both must be pre-sized and may carry prior contributions).
void conv_backward(const Mat& input, const KernelTensor& kernel, const Mat& grad_output,
                   KernelTensor& grad_kernel, Mat& grad_input);

struct ForwardTrace {
    Mat embedded;               // input to the first conv layer
    std::vector<Mat> hidden;    // post-ReLU (and post-division) output per layer
    Vec pooled;                 // sum over rows of the last hidden sequence
    Vec logits;
};

// Runs the classifier on a sentence. In normalized mode the layer factors are
// recomputed from the current weights unless `factors` is supplied (weights
// are constant within an optimizer step, so a per-step computation is exact).
ForwardTrace forward_trace(const ConvTextClassifier& model, const Sentence& s,
                           const LipschitzFactors* factors = nullptr);
Vec forward(const ConvTextClassifier& model, const Sentence& s,
            const LipschitzFactors* factors = nullptr);

// Divides each stage's weights by its Lipschitz factor, producing a plain-mode
// model with the same outputs as the normalized forward. On an already-folded
// model the factors are 1 and this is the identity up to rounding.
ConvTextClassifier fold_normalization(const ConvTextClassifier& model);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, then every stage rescaled
// so its Lipschitz factor is exactly 1.
ConvTextClassifier init_model(const ModelShape& shape, ModelMode mode, Rng& rng);

// Text checkpoint: one JSON header line, then weight sections as decimal
// floats with full round-trip precision.
void save_checkpoint(const ConvTextClassifier& model, const std::string& path,
                     const std::string& alphabet_name = "");
struct Checkpoint {
    ConvTextClassifier model;
    std::string alphabet_name;
};
Checkpoint load_checkpoint(const std::string& path);

void check_alphabet_compat(const ConvTextClassifier& model, const Alphabet& alphabet);

} // namespace certilev
