#include "certilev/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace certilev {

namespace {

constexpr double kSpectralSafety = 1e-6;
constexpr int kSpectralMaxIters = 200;
constexpr double kSpectralRelTol = 1e-13;
constexpr uint64_t kSpectralSeed = 0x5eed51ecull; // fixed start-vector stream

double relu(double x) { return x > 0 ? x : 0; }

} // namespace

std::string mode_name(ModelMode m) {
    return m == ModelMode::plain ? "plain" : "normalized";
}

ModelMode mode_from_name(const std::string& name) {
    if (name == "plain") return ModelMode::plain;
    if (name == "normalized") return ModelMode::normalized;
    throw std::runtime_error("unknown model mode '" + name + "'");
}

void ModelShape::validate() const {
    if (vocab < 1 || embed_dim < 1 || hidden < 1 || kernel < 1)
        throw std::runtime_error("model shape: all dimensions must be positive");
    if (layers < 1) throw std::runtime_error("model shape: layers must be >= 1");
    if (classes < 2) throw std::runtime_error("model shape: classes must be >= 2");
}

void ConvTextClassifier::validate() const {
    shape.validate();
    if (embedding.rows() != shape.vocab || embedding.cols() != shape.embed_dim)
        throw std::runtime_error("model: embedding shape mismatch");
    if (static_cast<int>(kernels.size()) != shape.layers)
        throw std::runtime_error("model: layer count mismatch");
    for (int i = 0; i < shape.layers; ++i) {
        const int in_dim = i == 0 ? shape.embed_dim : shape.hidden;
        if (static_cast<int>(kernels[i].size()) != shape.kernel)
            throw std::runtime_error("model: kernel size mismatch in layer " + std::to_string(i + 1));
        for (const Mat& slice : kernels[i])
            if (slice.rows() != shape.hidden || slice.cols() != in_dim)
                throw std::runtime_error("model: kernel slice shape mismatch in layer " +
                                         std::to_string(i + 1));
    }
    if (head.rows() != shape.hidden || head.cols() != shape.classes)
        throw std::runtime_error("model: head shape mismatch");
    if (!embedding.all_finite() || !head.all_finite())
        throw std::runtime_error("model: non-finite weights");
    for (const auto& tensor : kernels)
        for (const Mat& slice : tensor)
            if (!slice.all_finite()) throw std::runtime_error("model: non-finite weights");
}

double LipschitzFactors::kernel_product() const {
    double prod = 1.0;
    for (double k : kernels) prod *= k;
    return prod;
}

void IntervalBox::expand(const Vec& point) {
    if (lower.empty()) {
        lower = point;
        upper = point;
        return;
    }
    if (point.size() != lower.size()) throw std::runtime_error("IntervalBox: dimension mismatch");
    for (size_t i = 0; i < point.size(); ++i) {
        lower[i] = std::min(lower[i], point[i]);
        upper[i] = std::max(upper[i], point[i]);
    }
}

void IntervalBox::validate() const {
    if (lower.size() != upper.size()) throw std::runtime_error("IntervalBox: dimension mismatch");
    for (size_t i = 0; i < lower.size(); ++i)
        if (lower[i] > upper[i]) throw std::runtime_error("IntervalBox: lower > upper");
}

double spectral_norm(const Mat& m, Vec* left, Vec* right) {
    const int rows = m.rows();
    const int cols = m.cols();
    bool nonzero = false;
    for (size_t i = 0; i < m.size(); ++i)
        if (m.data()[i] != 0.0) {
            nonzero = true;
            break;
        }
    if (!nonzero) {
        if (left) left->assign(static_cast<size_t>(rows), 0.0);
        if (right) right->assign(static_cast<size_t>(cols), 0.0);
        return 0.0;
    }

    Rng rng(kSpectralSeed);
    Vec v(static_cast<size_t>(cols)), w(static_cast<size_t>(rows)), z(static_cast<size_t>(cols));

    auto apply = [&](const Vec& x, Vec& out) { // out = M x
        for (int i = 0; i < rows; ++i) {
            const double* row = m.row(i);
            double s = 0;
            for (int j = 0; j < cols; ++j) s += row[j] * x[j];
            out[i] = s;
        }
    };
    auto apply_t = [&](const Vec& x, Vec& out) { // out = M^T x
        std::fill(out.begin(), out.end(), 0.0);
        for (int i = 0; i < rows; ++i) {
            const double* row = m.row(i);
            for (int j = 0; j < cols; ++j) out[j] += row[j] * x[i];
        }
    };
    auto norm2 = [](const Vec& x) {
        double s = 0;
        for (double t : x) s += t * t;
        return std::sqrt(s);
    };

    double sigma = 0;
    for (int restart = 0; restart < 4; ++restart) {
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        double nv = norm2(v);
        if (nv == 0) continue;
        for (double& x : v) x /= nv;

        double prev = -1;
        for (int iter = 0; iter < kSpectralMaxIters; ++iter) {
            apply(v, w);
            sigma = norm2(w);
            if (sigma == 0) break; // v landed in the null space, restart
            apply_t(w, z);
            double nz = norm2(z);
            if (nz == 0) break;
            for (int j = 0; j < cols; ++j) v[j] = z[j] / nz;
            if (prev >= 0 && std::abs(sigma - prev) <= kSpectralRelTol * std::max(sigma, 1e-300))
                break;
            prev = sigma;
        }
        if (sigma > 0) break;
    }

    if (right) *right = v;
    if (left) {
        apply(v, w);
        double n = norm2(w);
        left->assign(static_cast<size_t>(rows), 0.0);
        if (n > 0)
            for (int i = 0; i < rows; ++i) (*left)[i] = w[i] / n;
    }
    return sigma;
}

double induced_opnorm(const Mat& m, NormOrder p, bool certified) {
    switch (p) {
        case NormOrder::p1: {
            double best = 0;
            for (int j = 0; j < m.cols(); ++j) {
                double s = 0;
                for (int i = 0; i < m.rows(); ++i) s += std::abs(m(i, j));
                best = std::max(best, s);
            }
            return best;
        }
        case NormOrder::pinf: {
            double best = 0;
            for (int i = 0; i < m.rows(); ++i) {
                double s = 0;
                const double* row = m.row(i);
                for (int j = 0; j < m.cols(); ++j) s += std::abs(row[j]);
                best = std::max(best, s);
            }
            return best;
        }
        case NormOrder::p2: {
            double sigma = spectral_norm(m);
            return certified ? sigma * (1.0 + kSpectralSafety) : sigma;
        }
    }
    throw std::logic_error("bad NormOrder");
}

double m_kernel(const KernelTensor& kernel, NormOrder p, bool certified) {
    double s = 0;
    for (const Mat& slice : kernel) s += induced_opnorm(slice, p, certified);
    return s;
}

double m_emb(const Mat& embedding, NormOrder p) {
    const int v = embedding.rows();
    const int d = embedding.cols();
    double best = 0;
    for (int i = 0; i < v; ++i) best = std::max(best, vec_norm(embedding.row(i), d, p));
    for (int i = 0; i < v; ++i)
        for (int j = i + 1; j < v; ++j)
            best = std::max(best, vec_diff_norm(embedding.row(i), embedding.row(j), d, p));
    return best;
}

double m_emb_local(const Mat& embedding, const Sentence& s, NormOrder p) {
    const int v = embedding.rows();
    const int d = embedding.cols();
    double best = 0;
    for (int i = 0; i < v; ++i) best = std::max(best, vec_norm(embedding.row(i), d, p));
    for (int tok : s) {
        if (tok < 0 || tok >= v) throw std::runtime_error("m_emb_local: token id out of range");
        const double* e_tok = embedding.row(tok);
        for (int j = 0; j < v; ++j)
            best = std::max(best, vec_diff_norm(e_tok, embedding.row(j), d, p));
    }
    return best;
}

double head_pair_norm(const Mat& head, int y, int yhat, NormOrder r) {
    const int k = head.rows();
    Vec diff(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) diff[c] = head(c, y) - head(c, yhat);
    return vec_norm(diff, r);
}

double m_head(const Mat& head, NormOrder r) {
    double best = 0;
    for (int y = 0; y < head.cols(); ++y)
        for (int j = y + 1; j < head.cols(); ++j)
            best = std::max(best, head_pair_norm(head, y, j, r));
    return best;
}

LipschitzFactors compute_factors(const ConvTextClassifier& model, bool certified) {
    LipschitzFactors f;
    f.emb = m_emb(model.embedding, model.shape.p);
    f.kernels.reserve(model.kernels.size());
    for (const auto& tensor : model.kernels)
        f.kernels.push_back(m_kernel(tensor, model.shape.p, certified));
    f.head = m_head(model.head, holder_conjugate(model.shape.p));
    return f;
}

double margin_lipschitz(const ConvTextClassifier& model, int y, int yhat,
                        const Sentence* s, bool certified) {
    if (y == yhat) throw std::runtime_error("margin_lipschitz: class pair must be distinct");
    const NormOrder p = model.shape.p;
    const NormOrder r = holder_conjugate(p);
    const double pair = head_pair_norm(model.head, y, yhat, r);
    const double emb = s ? m_emb_local(model.embedding, *s, p) : m_emb(model.embedding, p);

    if (model.mode == ModelMode::normalized) {
        // the per-layer divisions cancel the kernel terms exactly
        const double head = m_head(model.head, r);
        const double emb_global = m_emb(model.embedding, p);
        if (head <= 0 || emb_global <= 0) throw std::runtime_error("degenerate layer norm");
        return (pair / head) * (emb / emb_global);
    }

    double prod = 1.0;
    for (const auto& tensor : model.kernels) prod *= m_kernel(tensor, p, certified);
    return pair * prod * emb;
}

Mat conv_full(const Mat& input, const KernelTensor& kernel) {
    const int q = static_cast<int>(kernel.size());
    if (q < 1) throw std::runtime_error("conv_full: empty kernel");
    const int k = kernel[0].rows();
    const int r = kernel[0].cols();
    if (input.rows() > 0 && input.cols() != r)
        throw std::runtime_error("conv_full: input dimension " + std::to_string(input.cols()) +
                                 " does not match kernel " + std::to_string(r));
    const int m = input.rows();
    Mat out(m + q - 1, k);
    for (int j = 0; j < m; ++j) {
        const double* in_row = input.row(j);
        for (int t = 0; t < q; ++t) {
            double* out_row = out.row(j + q - 1 - t);
            const Mat& slice = kernel[t];
            for (int f = 0; f < k; ++f) {
                const double* w = slice.row(f);
                double s = 0;
                for (int c = 0; c < r; ++c) s += w[c] * in_row[c];
                out_row[f] += s;
            }
        }
    }
    return out;
}

void conv_backward(const Mat& input, const KernelTensor& kernel, const Mat& grad_output,
                   KernelTensor& grad_kernel, Mat& grad_input) {
    const int q = static_cast<int>(kernel.size());
    const int k = kernel[0].rows();
    const int r = kernel[0].cols();
    const int m = input.rows();
    if (grad_output.rows() != m + q - 1 || grad_output.cols() != k)
        throw std::runtime_error("conv_backward: grad_output shape mismatch");

    for (int j = 0; j < m; ++j) {
        const double* in_row = input.row(j);
        double* gin_row = grad_input.row(j);
        for (int t = 0; t < q; ++t) {
            const double* gout_row = grad_output.row(j + q - 1 - t);
            const Mat& slice = kernel[t];
            Mat& gslice = grad_kernel[t];
            for (int f = 0; f < k; ++f) {
                const double g = gout_row[f];
                if (g == 0.0) continue;
                const double* w = slice.row(f);
                double* gw = gslice.row(f);
                for (int c = 0; c < r; ++c) {
                    gw[c] += g * in_row[c];
                    gin_row[c] += g * w[c];
                }
            }
        }
    }
}

ForwardTrace forward_trace(const ConvTextClassifier& model, const Sentence& s,
                           const LipschitzFactors* factors) {
    const ModelShape& sh = model.shape;
    if (s.empty()) throw std::runtime_error("forward: empty sentence");
    for (int tok : s)
        if (tok < 0 || tok >= sh.vocab)
            throw std::runtime_error("forward: token id " + std::to_string(tok) +
                                     " out of range for vocab " + std::to_string(sh.vocab));

    const bool normalized = model.mode == ModelMode::normalized;
    LipschitzFactors computed;
    if (normalized && !factors) {
        computed = compute_factors(model);
        factors = &computed;
    }
    if (normalized) {
        if (factors->emb <= 0 || factors->head <= 0) throw std::runtime_error("degenerate layer norm");
        for (double k : factors->kernels)
            if (k <= 0) throw std::runtime_error("degenerate layer norm");
    }

    ForwardTrace trace;
    const int m = static_cast<int>(s.size());
    trace.embedded = Mat(m, sh.embed_dim);
    const double emb_div = normalized ? factors->emb : 1.0;
    for (int i = 0; i < m; ++i) {
        const double* e = model.embedding.row(s[static_cast<size_t>(i)]);
        double* z = trace.embedded.row(i);
        for (int c = 0; c < sh.embed_dim; ++c) z[c] = e[c] / emb_div;
    }

    const Mat* cur = &trace.embedded;
    trace.hidden.reserve(static_cast<size_t>(sh.layers));
    for (int layer = 0; layer < sh.layers; ++layer) {
        Mat h = conv_full(*cur, model.kernels[static_cast<size_t>(layer)]);
        const double div = normalized ? factors->kernels[static_cast<size_t>(layer)] : 1.0;
        for (size_t i = 0; i < h.size(); ++i) h.data()[i] = relu(h.data()[i]) / div;
        trace.hidden.push_back(std::move(h));
        cur = &trace.hidden.back();
    }

    trace.pooled.assign(static_cast<size_t>(sh.hidden), 0.0);
    for (int i = 0; i < cur->rows(); ++i) {
        const double* row = cur->row(i);
        for (int c = 0; c < sh.hidden; ++c) trace.pooled[c] += row[c];
    }

    const double head_div = normalized ? factors->head : 1.0;
    trace.logits.assign(static_cast<size_t>(sh.classes), 0.0);
    for (int c = 0; c < sh.hidden; ++c) {
        const double* row = model.head.row(c);
        const double x = trace.pooled[static_cast<size_t>(c)];
        for (int o = 0; o < sh.classes; ++o) trace.logits[static_cast<size_t>(o)] += x * row[o] / head_div;
    }
    return trace;
}

Vec forward(const ConvTextClassifier& model, const Sentence& s, const LipschitzFactors* factors) {
    return forward_trace(model, s, factors).logits;
}

ConvTextClassifier fold_normalization(const ConvTextClassifier& model) {
    LipschitzFactors f = compute_factors(model);
    if (f.emb <= 0 || f.head <= 0) throw std::runtime_error("degenerate layer norm");
    for (double k : f.kernels)
        if (k <= 0) throw std::runtime_error("degenerate layer norm");

    ConvTextClassifier folded = model;
    folded.embedding.scale(1.0 / f.emb);
    for (size_t i = 0; i < folded.kernels.size(); ++i)
        for (Mat& slice : folded.kernels[i]) slice.scale(1.0 / f.kernels[i]);
    folded.head.scale(1.0 / f.head);
    folded.mode = ModelMode::plain;
    return folded;
}

ConvTextClassifier init_model(const ModelShape& shape, ModelMode mode, Rng& rng) {
    shape.validate();
    ConvTextClassifier model;
    model.shape = shape;
    model.mode = mode;

    auto fill = [&](Mat& m, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    };

    model.embedding = Mat(shape.vocab, shape.embed_dim);
    fill(model.embedding, shape.vocab);
    for (int layer = 0; layer < shape.layers; ++layer) {
        const int in_dim = layer == 0 ? shape.embed_dim : shape.hidden;
        KernelTensor tensor;
        for (int t = 0; t < shape.kernel; ++t) {
            Mat slice(shape.hidden, in_dim);
            fill(slice, shape.kernel * in_dim);
            tensor.push_back(std::move(slice));
        }
        model.kernels.push_back(std::move(tensor));
    }
    model.head = Mat(shape.hidden, shape.classes);
    fill(model.head, shape.hidden);

    // rescale every stage to unit Lipschitz factor at initialization
    LipschitzFactors f = compute_factors(model);
    if (f.emb <= 0 || f.head <= 0) throw std::runtime_error("degenerate layer norm");
    model.embedding.scale(1.0 / f.emb);
    for (size_t i = 0; i < model.kernels.size(); ++i) {
        if (f.kernels[i] <= 0) throw std::runtime_error("degenerate layer norm");
        for (Mat& slice : model.kernels[i]) slice.scale(1.0 / f.kernels[i]);
    }
    model.head.scale(1.0 / f.head);
    return model;
}

namespace {

void write_mat(std::FILE* f, const char* name, const Mat& m) {
    std::fprintf(f, "%s %d %d\n", name, m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        const double* row = m.row(i);
        for (int j = 0; j < m.cols(); ++j)
            std::fprintf(f, j + 1 == m.cols() ? "%.17g\n" : "%.17g ", row[j]);
    }
}

Mat read_mat(std::istream& in, const std::string& name, int rows, int cols,
             const std::string& path) {
    std::string tag;
    int r = -1, c = -1;
    if (!(in >> tag >> r >> c) || tag != name || r != rows || c != cols)
        throw std::runtime_error(path + ": corrupt checkpoint, expected section '" + name + "' " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
    Mat m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) {
        if (!(in >> m.data()[i]))
            throw std::runtime_error(path + ": truncated checkpoint in section '" + name + "'");
        if (!std::isfinite(m.data()[i]))
            throw std::runtime_error(path + ": non-finite weight in section '" + name + "'");
    }
    return m;
}

} // namespace

void save_checkpoint(const ConvTextClassifier& model, const std::string& path,
                     const std::string& alphabet_name) {
    model.validate();
    nlohmann::json header{
        {"format", "certilev-model"},
        {"version", 1},
        {"mode", mode_name(model.mode)},
        {"p", norm_name(model.shape.p)},
        {"vocab", model.shape.vocab},
        {"embed_dim", model.shape.embed_dim},
        {"hidden", model.shape.hidden},
        {"kernel", model.shape.kernel},
        {"layers", model.shape.layers},
        {"classes", model.shape.classes},
        {"alphabet", alphabet_name},
    };

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    std::fprintf(f, "%s\n", header.dump().c_str());
    write_mat(f, "E", model.embedding);
    for (int layer = 0; layer < model.shape.layers; ++layer) {
        for (int t = 0; t < model.shape.kernel; ++t) {
            std::string name = "K" + std::to_string(layer + 1) + "." + std::to_string(t + 1);
            write_mat(f, name.c_str(), model.kernels[static_cast<size_t>(layer)][static_cast<size_t>(t)]);
        }
    }
    write_mat(f, "W", model.head);
    std::fprintf(f, "end\n");
    if (std::fclose(f) != 0) throw std::runtime_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error(path + ": empty checkpoint");

    nlohmann::json header = nlohmann::json::parse(header_line, nullptr, /*allow_exceptions=*/false);
    if (header.is_discarded() || !header.is_object())
        throw std::runtime_error(path + ": bad checkpoint header");
    if (header.value("format", "") != "certilev-model")
        throw std::runtime_error(path + ": not a certilev-model checkpoint");
    const int version = header.value("version", -1);
    if (version != 1)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));

    Checkpoint ckpt;
    ConvTextClassifier& model = ckpt.model;
    try {
        model.shape.vocab = header.at("vocab").get<int>();
        model.shape.embed_dim = header.at("embed_dim").get<int>();
        model.shape.hidden = header.at("hidden").get<int>();
        model.shape.kernel = header.at("kernel").get<int>();
        model.shape.layers = header.at("layers").get<int>();
        model.shape.classes = header.at("classes").get<int>();
        model.shape.p = norm_from_name(header.at("p").get<std::string>());
        model.mode = mode_from_name(header.at("mode").get<std::string>());
        ckpt.alphabet_name = header.value("alphabet", "");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad checkpoint header: " + e.what());
    }
    model.shape.validate();

    model.embedding = read_mat(in, "E", model.shape.vocab, model.shape.embed_dim, path);
    for (int layer = 0; layer < model.shape.layers; ++layer) {
        const int in_dim = layer == 0 ? model.shape.embed_dim : model.shape.hidden;
        KernelTensor tensor;
        for (int t = 0; t < model.shape.kernel; ++t) {
            std::string name = "K" + std::to_string(layer + 1) + "." + std::to_string(t + 1);
            tensor.push_back(read_mat(in, name, model.shape.hidden, in_dim, path));
        }
        model.kernels.push_back(std::move(tensor));
    }
    model.head = read_mat(in, "W", model.shape.hidden, model.shape.classes, path);

    std::string tail;
    if (!(in >> tail) || tail != "end")
        throw std::runtime_error(path + ": truncated checkpoint (missing end marker)");
    model.validate();
    return ckpt;
}

void check_alphabet_compat(const ConvTextClassifier& model, const Alphabet& alphabet) {
    if (model.shape.vocab != alphabet.size())
        throw std::runtime_error("model vocab size " + std::to_string(model.shape.vocab) +
                                 " does not match alphabet size " + std::to_string(alphabet.size()));
}

} // namespace certilev
