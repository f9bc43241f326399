#include "imitate/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "imitate/errors.hpp"
#include "imitate/kernels.hpp"
#include "imitate/rng.hpp"

namespace imitate {

namespace fs = std::filesystem;

namespace {

std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double grid_x(int x, int width) { return (2.0 * x + 1.0) / width - 1.0; }
double grid_y(int y, int height) { return 1.0 - (2.0 * y + 1.0) / height; }

void require_finite(const std::vector<double>& v, const std::string& layer) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError("non-finite value in layer " + layer);
    }
}

/// Resolved layer geometry for one input size.
struct Plan {
    Architecture arch;
    std::vector<kernels::ConvShape> convs;
    std::vector<std::size_t> weight_offset;
    std::vector<std::size_t> bias_offset;
    std::size_t param_count = 0;
    std::size_t embed = 0;  // index of the embedding layer
};

Plan make_plan(const NetworkParams& params, int height, int width, bool with_convs = true) {
    Plan plan;
    plan.arch = architecture_of(params);
    int h = height, w = width, c = plan.arch.in_channels;
    for (std::size_t i = 0; with_convs && i < plan.arch.convs.size(); ++i) {
        kernels::ConvShape s;
        s.in_channels = c;
        s.in_height = h;
        s.in_width = w;
        s.out_channels = plan.arch.convs[i].out_channels;
        s.kernel = plan.arch.convs[i].kernel;
        s.stride = 2;
        s.pad = s.kernel / 2;
        if (h < 1 || w < 1 || s.out_height() < 1 || s.out_width() < 1) {
            throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) + " too small for layer " +
                             params.layers[i].name);
        }
        plan.convs.push_back(s);
        h = s.out_height();
        w = s.out_width();
        c = s.out_channels;
    }
    plan.embed = plan.arch.convs.size();
    if (with_convs && plan.arch.pooling == Pooling::Flatten &&
        static_cast<std::size_t>(c) * h * w != params.layers[plan.embed].weight.shape[1]) {
        throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                         " does not match the flattened width of layer " + params.layers[plan.embed].name);
    }
    std::size_t off = 0;
    for (const Layer& l : params.layers) {
        plan.weight_offset.push_back(off);
        off += l.weight.size();
        plan.bias_offset.push_back(off);
        off += l.bias.size();
    }
    plan.param_count = off;
    return plan;
}

struct EncoderTrace {
    std::vector<std::vector<double>> acts;  // acts[0] is the CHW input, acts[i+1] = relu(pre[i])
    std::vector<std::vector<double>> pre;
    std::vector<double> softmax;  // SoftArgmax only: per-channel spatial weights
    std::vector<double> pooled;
    std::vector<double> embedding;
};

struct HeadTrace {
    std::vector<double> hidden_pre;
    std::vector<double> hidden;
    std::vector<double> out;
};

void encoder_forward(const NetworkParams& params, const Plan& plan, const Image& img, EncoderTrace& tr) {
    if (img.height != plan.convs.front().in_height || img.width != plan.convs.front().in_width) {
        throw ShapeError("image size differs within batch at layer " + params.layers.front().name);
    }
    const std::size_t n_conv = plan.convs.size();
    tr.acts.resize(n_conv + 1);
    tr.pre.resize(n_conv);
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    std::vector<double>& x = tr.acts[0];
    x.resize(hw * Image::channels);
    for (std::size_t p = 0; p < hw; ++p) {
        for (int ch = 0; ch < Image::channels; ++ch) x[ch * hw + p] = img.data[p * Image::channels + ch];
    }
    for (std::size_t i = 0; i < n_conv; ++i) {
        const kernels::ConvShape& s = plan.convs[i];
        const Layer& l = params.layers[i];
        tr.pre[i].resize(s.out_size());
        kernels::conv2d_forward(s, tr.acts[i].data(), l.weight.data.data(), l.bias.data.data(), tr.pre[i].data());
        require_finite(tr.pre[i], l.name);
        tr.acts[i + 1].resize(s.out_size());
        std::transform(tr.pre[i].begin(), tr.pre[i].end(), tr.acts[i + 1].begin(),
                       [](double v) { return v > 0.0 ? v : 0.0; });
    }
    const kernels::ConvShape& last = plan.convs.back();
    const int fh = last.out_height(), fw = last.out_width();
    const std::size_t area = static_cast<std::size_t>(fh) * fw;
    const std::vector<double>& feat = tr.acts[n_conv];
    if (plan.arch.pooling == Pooling::Flatten) {
        tr.pooled = feat;
    } else if (plan.arch.pooling == Pooling::Average) {
        tr.pooled.assign(last.out_channels, 0.0);
        for (int ch = 0; ch < last.out_channels; ++ch) {
            double acc = 0.0;
            for (std::size_t p = 0; p < area; ++p) acc += feat[ch * area + p];
            tr.pooled[ch] = acc / static_cast<double>(area);
        }
    } else {
        tr.pooled.assign(2 * static_cast<std::size_t>(last.out_channels), 0.0);
        tr.softmax.resize(feat.size());
        for (int ch = 0; ch < last.out_channels; ++ch) {
            const double* a = feat.data() + ch * area;
            double* p = tr.softmax.data() + ch * area;
            const double peak = *std::max_element(a, a + area);
            double z = 0.0;
            for (std::size_t i = 0; i < area; ++i) z += (p[i] = std::exp(a[i] - peak));
            double ex = 0.0, ey = 0.0;
            for (int y = 0; y < fh; ++y) {
                for (int x = 0; x < fw; ++x) {
                    double& w = p[static_cast<std::size_t>(y) * fw + x];
                    w /= z;
                    ex += w * grid_x(x, fw);
                    ey += w * grid_y(y, fh);
                }
            }
            tr.pooled[2 * ch] = ex;
            tr.pooled[2 * ch + 1] = ey;
        }
    }
    const Layer& e = params.layers[plan.embed];
    tr.embedding.resize(params.embedding_dim);
    kernels::dense_forward(static_cast<int>(tr.pooled.size()), static_cast<int>(params.embedding_dim),
                           tr.pooled.data(), e.weight.data.data(), e.bias.data.data(), tr.embedding.data());
    require_finite(tr.embedding, e.name);
}

void head_forward(const NetworkParams& params, const Plan& plan, std::span<const double> embedding, HeadTrace& tr) {
    const Layer& h1 = params.layers[plan.embed + 1];
    const Layer& h2 = params.layers[plan.embed + 2];
    const int hidden = plan.arch.head_hidden;
    tr.hidden_pre.resize(hidden);
    kernels::dense_forward(plan.arch.embedding_dim, hidden, embedding.data(), h1.weight.data.data(),
                           h1.bias.data.data(), tr.hidden_pre.data());
    require_finite(tr.hidden_pre, h1.name);
    tr.hidden.resize(hidden);
    std::transform(tr.hidden_pre.begin(), tr.hidden_pre.end(), tr.hidden.begin(),
                   [](double v) { return v > 0.0 ? v : 0.0; });
    tr.out.resize(plan.arch.output_dim);
    kernels::dense_forward(hidden, plan.arch.output_dim, tr.hidden.data(), h2.weight.data.data(), h2.bias.data.data(),
                           tr.out.data());
    require_finite(tr.out, h2.name);
}

/// Adds d loss / d embedding from the head into `d_embedding`.
void head_backward(const NetworkParams& params, const Plan& plan, std::span<const double> embedding,
                   const HeadTrace& tr, std::span<const double> d_out, std::vector<double>& d_embedding,
                   std::vector<double>& grads) {
    const std::size_t i1 = plan.embed + 1, i2 = plan.embed + 2;
    const Layer& h1 = params.layers[i1];
    const Layer& h2 = params.layers[i2];
    const int hidden = plan.arch.head_hidden;
    std::vector<double> d_hidden(hidden);
    kernels::dense_backward(hidden, plan.arch.output_dim, tr.hidden.data(), h2.weight.data.data(), d_out.data(),
                            d_hidden.data(), grads.data() + plan.weight_offset[i2], grads.data() + plan.bias_offset[i2]);
    for (int j = 0; j < hidden; ++j) {
        if (!(tr.hidden_pre[j] > 0.0)) d_hidden[j] = 0.0;
    }
    std::vector<double> d_emb(plan.arch.embedding_dim);
    kernels::dense_backward(plan.arch.embedding_dim, hidden, embedding.data(), h1.weight.data.data(), d_hidden.data(),
                            d_emb.data(), grads.data() + plan.weight_offset[i1], grads.data() + plan.bias_offset[i1]);
    for (std::size_t j = 0; j < d_emb.size(); ++j) d_embedding[j] += d_emb[j];
}

void encoder_backward(const NetworkParams& params, const Plan& plan, const EncoderTrace& tr,
                      std::span<const double> d_embedding, std::vector<double>& grads) {
    const std::size_t n_conv = plan.convs.size();
    const Layer& e = params.layers[plan.embed];
    const kernels::ConvShape& last = plan.convs.back();
    std::vector<double> d_pooled(tr.pooled.size());
    kernels::dense_backward(static_cast<int>(tr.pooled.size()), plan.arch.embedding_dim, tr.pooled.data(),
                            e.weight.data.data(), d_embedding.data(), d_pooled.data(),
                            grads.data() + plan.weight_offset[plan.embed], grads.data() + plan.bias_offset[plan.embed]);

    const int fh = last.out_height(), fw = last.out_width();
    const std::size_t area = static_cast<std::size_t>(fh) * fw;
    std::vector<double> d_act(last.out_size());
    if (plan.arch.pooling == Pooling::Flatten) d_act = d_pooled;
    for (int ch = 0; plan.arch.pooling != Pooling::Flatten && ch < last.out_channels; ++ch) {
        if (plan.arch.pooling == Pooling::Average) {
            const double g = d_pooled[ch] / static_cast<double>(area);
            std::fill(d_act.begin() + ch * area, d_act.begin() + (ch + 1) * area, g);
            continue;
        }
        // d E[x] / d a_j = p_j (x_j - E[x]), likewise for y.
        const double gx = d_pooled[2 * ch], gy = d_pooled[2 * ch + 1];
        const double ex = tr.pooled[2 * ch], ey = tr.pooled[2 * ch + 1];
        const double* p = tr.softmax.data() + ch * area;
        for (int y = 0; y < fh; ++y) {
            for (int x = 0; x < fw; ++x) {
                const std::size_t j = static_cast<std::size_t>(y) * fw + x;
                d_act[ch * area + j] = p[j] * (gx * (grid_x(x, fw) - ex) + gy * (grid_y(y, fh) - ey));
            }
        }
    }
    std::vector<double> d_in;
    for (std::size_t i = n_conv; i-- > 0;) {
        const kernels::ConvShape& s = plan.convs[i];
        for (std::size_t j = 0; j < d_act.size(); ++j) {
            if (!(tr.pre[i][j] > 0.0)) d_act[j] = 0.0;
        }
        const Layer& l = params.layers[i];
        if (i > 0) d_in.resize(s.in_size());
        kernels::conv2d_backward(s, tr.acts[i].data(), l.weight.data.data(), d_act.data(), i > 0 ? d_in.data() : nullptr,
                                 grads.data() + plan.weight_offset[i], grads.data() + plan.bias_offset[i]);
        if (i > 0) std::swap(d_act, d_in);
    }
}

std::vector<double> pose_vec(EEPose p) { return {p.x, p.y}; }

void check_batch(std::span<const TripletExample> batch) {
    if (batch.empty()) throw ShapeError("empty triplet batch");
    for (const TripletExample& t : batch) {
        if (!t.anchor || !t.positive || !t.negative) throw ShapeError("triplet with missing image");
    }
}

/// Loss terms for one triplet plus, when `grads` is non-null, the gradient
/// of tcn_weight * tcn + regression accumulated into it.
TripletTerms triplet_pass(const NetworkParams& params, const Plan& plan, const TripletExample& ex,
                          const LossOptions& opts, std::vector<double>* grads) {
    const Image* images[3] = {ex.anchor, ex.positive, ex.negative};
    const std::vector<double> targets[3] = {pose_vec(ex.target_anchor), pose_vec(ex.target_positive),
                                            pose_vec(ex.target_negative)};
    EncoderTrace enc[3];
    HeadTrace head[3];
    for (int k = 0; k < 3; ++k) {
        encoder_forward(params, plan, *images[k], enc[k]);
        head_forward(params, plan, enc[k].embedding, head[k]);
    }
    const TripletLoss tl = triplet_loss(enc[0].embedding, enc[1].embedding, enc[2].embedding, opts.margin);
    const RegressionLoss rl =
        regression_loss(head[0].out, head[1].out, head[2].out, targets[0], targets[1], targets[2]);
    if (!std::isfinite(tl.loss) || !std::isfinite(rl.loss)) throw NumericError("non-finite loss value");

    if (grads) {
        const std::vector<double>* tcn_grads[3] = {&tl.grad_anchor, &tl.grad_positive, &tl.grad_negative};
        for (int k = 0; k < 3; ++k) {
            std::vector<double> d_emb(params.embedding_dim);
            for (std::size_t j = 0; j < d_emb.size(); ++j) d_emb[j] = opts.tcn_weight * (*tcn_grads[k])[j];
            head_backward(params, plan, enc[k].embedding, head[k], rl.grad[k], d_emb, *grads);
            encoder_backward(params, plan, enc[k], d_emb, *grads);
        }
    }
    return {tl.loss, rl.loss};
}

template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t i) {
        try {
            body(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) guarded(i);
    } else {
#pragma omp parallel for num_threads(threads) schedule(dynamic)
        for (long i = 0; i < static_cast<long>(n); ++i) guarded(static_cast<std::size_t>(i));
    }
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

Layer make_layer(std::string name, std::vector<std::size_t> weight_shape, std::size_t out) {
    return {std::move(name), Tensor(std::move(weight_shape)), Tensor({out})};
}

void write_u16(std::vector<char>& b, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}
void write_u32(std::vector<char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}

class Cursor {
public:
    Cursor(const std::vector<char>& b, std::string ctx) : b_(b), ctx_(std::move(ctx)) {}
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) {
            throw ParseError(ParseError::Kind::Truncated, ctx_ + ": truncated checkpoint at byte " + std::to_string(pos_));
        }
    }
    std::uint32_t uint(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint32_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b_[pos_++])) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    bool at_end() const { return pos_ == b_.size(); }

private:
    const std::vector<char>& b_;
    std::string ctx_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string_view pooling_name(Pooling p) {
    switch (p) {
        case Pooling::Average:
            return "average";
        case Pooling::SoftArgmax:
            return "softargmax";
        case Pooling::Flatten:
            return "flatten";
    }
    return "?";
}

Pooling parse_pooling(std::string_view name) {
    for (Pooling p : {Pooling::Average, Pooling::SoftArgmax, Pooling::Flatten}) {
        if (pooling_name(p) == name) return p;
    }
    throw ConfigError("unknown pooling '" + std::string(name) + "'");
}

Architecture reduced_architecture() {
    Architecture a;
    a.convs = {{3, 4}, {3, 6}};
    a.embedding_dim = 6;
    a.head_hidden = 5;
    return a;
}

std::size_t pooled_features(const Architecture& arch) {
    const auto channels = static_cast<std::size_t>(arch.convs.empty() ? arch.in_channels : arch.convs.back().out_channels);
    switch (arch.pooling) {
        case Pooling::Average:
            return channels;
        case Pooling::SoftArgmax:
            return 2 * channels;
        case Pooling::Flatten:
            break;
    }
    int h = arch.input_height, w = arch.input_width;
    for (const ConvSpec& c : arch.convs) {
        const int pad = c.kernel / 2;
        h = (h + 2 * pad - c.kernel) / 2 + 1;
        w = (w + 2 * pad - c.kernel) / 2 + 1;
    }
    if (h < 1 || w < 1) throw ShapeError("input too small for the conv stack of a flattening network");
    return channels * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
}

std::size_t NetworkParams::parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const Tensor& t) { n += t.size(); });
    return n;
}

Architecture architecture_of(const NetworkParams& params) {
    const auto& L = params.layers;
    if (L.size() < 4) throw ShapeError("network needs at least one conv layer, embed, head1 and head2");
    Architecture arch;
    arch.convs.clear();
    const std::size_t n_conv = L.size() - 3;
    auto bad = [](const Layer& l, const std::string& why) { throw ShapeError("layer " + l.name + ": " + why); };
    std::size_t channels = 0;
    for (std::size_t i = 0; i < n_conv; ++i) {
        const Layer& l = L[i];
        const auto& s = l.weight.shape;
        if (s.size() != 4) bad(l, "conv weight must have rank 4");
        if (s[2] != s[3] || s[2] == 0) bad(l, "conv kernel must be square");
        if (i == 0) {
            channels = s[1];
            arch.in_channels = static_cast<int>(s[1]);
        } else if (s[1] != channels) {
            bad(l, "input channels do not match the previous layer");
        }
        if (l.bias.shape != std::vector<std::size_t>{s[0]}) bad(l, "bias shape mismatch");
        arch.convs.push_back({static_cast<int>(s[2]), static_cast<int>(s[0])});
        channels = s[0];
    }
    auto dense = [&](const Layer& l, std::size_t in) {
        const auto& s = l.weight.shape;
        if (s.size() != 2 || s[1] != in) bad(l, "dense weight shape mismatch");
        if (l.bias.shape != std::vector<std::size_t>{s[0]}) bad(l, "bias shape mismatch");
        return s[0];
    };
    const auto& ew = L[n_conv].weight.shape;
    if (ew.size() != 2 || ew[1] == 0 || ew[1] % channels != 0) {
        bad(L[n_conv], "embedding input width is not a multiple of the conv channels");
    }
    arch.pooling = ew[1] == channels ? Pooling::Average
                   : ew[1] == 2 * channels ? Pooling::SoftArgmax
                                           : Pooling::Flatten;
    const std::size_t emb = dense(L[n_conv], ew[1]);
    const std::size_t hid = dense(L[n_conv + 1], emb);
    const std::size_t out = dense(L[n_conv + 2], hid);
    if (params.embedding_dim != emb) bad(L[n_conv], "embedding_dim disagrees with the layer");
    if (params.output_dim != out) bad(L[n_conv + 2], "output_dim disagrees with the layer");
    arch.embedding_dim = static_cast<int>(emb);
    arch.head_hidden = static_cast<int>(hid);
    arch.output_dim = static_cast<int>(out);
    return arch;
}

NetworkParams zero_params(const Architecture& arch) {
    NetworkParams p;
    std::size_t c = static_cast<std::size_t>(arch.in_channels);
    for (std::size_t i = 0; i < arch.convs.size(); ++i) {
        const auto k = static_cast<std::size_t>(arch.convs[i].kernel);
        const auto o = static_cast<std::size_t>(arch.convs[i].out_channels);
        p.layers.push_back(make_layer("conv" + std::to_string(i + 1), {o, c, k, k}, o));
        c = o;
    }
    const auto e = static_cast<std::size_t>(arch.embedding_dim);
    const auto h = static_cast<std::size_t>(arch.head_hidden);
    const auto out = static_cast<std::size_t>(arch.output_dim);
    p.layers.push_back(make_layer("embed", {e, pooled_features(arch)}, e));
    p.layers.push_back(make_layer("head1", {h, e}, h));
    p.layers.push_back(make_layer("head2", {out, h}, out));
    p.embedding_dim = e;
    p.output_dim = out;
    return p;
}

NetworkParams init_params(const Architecture& arch, std::uint64_t seed) {
    NetworkParams p = zero_params(arch);
    for (Layer& l : p.layers) {
        const std::size_t fan_in = l.weight.size() / l.weight.shape[0];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Rng rng(mix_seed(seed, name_hash(l.name)));
        for (float& w : l.weight.data) w = static_cast<float>(rng.uniform(-limit, limit));
    }
    return p;
}

Matrix encode(const NetworkParams& params, std::span<const Image> images, int threads) {
    Matrix out(images.size(), params.embedding_dim);
    if (images.empty()) return out;
    const Image& first = images.front();
    const Plan plan = make_plan(params, first.height, first.width);
    for (const Image& img : images) {
        if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * Image::channels ||
            plan.arch.in_channels != Image::channels) {
            throw ShapeError("image does not match input channels of layer " + params.layers.front().name);
        }
    }
    parallel_for(images.size(), threads, [&](std::size_t i) {
        EncoderTrace tr;
        encoder_forward(params, plan, images[i], tr);
        std::copy(tr.embedding.begin(), tr.embedding.end(), out.row(i).begin());
    });
    return out;
}

Matrix regress(const NetworkParams& params, const Matrix& embeddings) {
    const Architecture arch = architecture_of(params);
    if (embeddings.cols != params.embedding_dim) {
        throw ShapeError("embedding width " + std::to_string(embeddings.cols) + " does not match layer " +
                         params.layers[arch.convs.size() + 1].name);
    }
    Plan plan;
    plan.arch = arch;
    plan.embed = arch.convs.size();
    Matrix out(embeddings.rows, params.output_dim);
    HeadTrace tr;
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
        head_forward(params, plan, embeddings.row(i), tr);
        std::copy(tr.out.begin(), tr.out.end(), out.row(i).begin());
    }
    return out;
}

double embedding_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s + kDistanceEpsilon);
}

TripletLoss triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                         std::span<const double> negative, double margin) {
    const std::size_t n = anchor.size();
    if (positive.size() != n || negative.size() != n) throw ShapeError("triplet embeddings differ in dimension");
    if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
    TripletLoss out;
    out.grad_anchor.assign(n, 0.0);
    out.grad_positive.assign(n, 0.0);
    out.grad_negative.assign(n, 0.0);
    const double d_ap = embedding_distance(anchor, positive);
    const double d_an = embedding_distance(anchor, negative);
    const double arg = d_ap - d_an + margin;
    if (!(arg > 0.0)) return out;
    out.loss = arg;
    for (std::size_t i = 0; i < n; ++i) {
        const double u = (anchor[i] - positive[i]) / d_ap;
        const double v = (anchor[i] - negative[i]) / d_an;
        out.grad_anchor[i] = u - v;
        out.grad_positive[i] = -u;
        out.grad_negative[i] = v;
    }
    return out;
}

RegressionLoss regression_loss(std::span<const double> pred_a, std::span<const double> pred_p,
                               std::span<const double> pred_n, std::span<const double> target_a,
                               std::span<const double> target_p, std::span<const double> target_n) {
    const std::span<const double> preds[3] = {pred_a, pred_p, pred_n};
    const std::span<const double> targets[3] = {target_a, target_p, target_n};
    RegressionLoss out;
    for (int k = 0; k < 3; ++k) {
        const std::size_t n = preds[k].size();
        if (n == 0 || targets[k].size() != n) throw ShapeError("prediction and target shapes differ");
        double mse = 0.0;
        out.grad[k].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = preds[k][i] - targets[k][i];
            mse += d * d;
            out.grad[k][i] = 2.0 * d / static_cast<double>(n);
        }
        out.loss += mse / static_cast<double>(n);
    }
    return out;
}

double total_loss(double tcn, double regression, double tcn_weight) { return tcn_weight * tcn + regression; }

std::vector<double> encode_vjp(const NetworkParams& params, const Image& image, std::span<const double> cotangent) {
    const Plan plan = make_plan(params, image.height, image.width);
    if (cotangent.size() != params.embedding_dim) throw ShapeError("cotangent size differs from layer embed");
    EncoderTrace tr;
    encoder_forward(params, plan, image, tr);
    std::vector<double> grads(plan.param_count, 0.0);
    encoder_backward(params, plan, tr, cotangent, grads);
    return grads;
}

std::vector<double> regress_vjp(const NetworkParams& params, std::span<const double> embedding,
                                std::span<const double> cotangent) {
    const Plan plan = make_plan(params, 0, 0, false);
    if (embedding.size() != params.embedding_dim) throw ShapeError("embedding size differs from layer head1");
    if (cotangent.size() != params.output_dim) throw ShapeError("cotangent size differs from layer head2");
    HeadTrace tr;
    head_forward(params, plan, embedding, tr);
    std::vector<double> grads(plan.param_count, 0.0);
    std::vector<double> d_emb(params.embedding_dim, 0.0);
    head_backward(params, plan, embedding, tr, cotangent, d_emb, grads);
    return grads;
}

std::vector<TripletTerms> triplet_terms(const NetworkParams& params, std::span<const TripletExample> batch,
                                        const LossOptions& opts) {
    check_batch(batch);
    const Plan plan = make_plan(params, batch.front().anchor->height, batch.front().anchor->width);
    std::vector<TripletTerms> out(batch.size());
    parallel_for(batch.size(), opts.threads,
                 [&](std::size_t i) { out[i] = triplet_pass(params, plan, batch[i], opts, nullptr); });
    return out;
}

BackwardResult backward(const NetworkParams& params, std::span<const TripletExample> batch, const LossOptions& opts) {
    check_batch(batch);
    const Plan plan = make_plan(params, batch.front().anchor->height, batch.front().anchor->width);
    std::vector<std::vector<double>> per(batch.size());
    std::vector<TripletTerms> terms(batch.size());
    parallel_for(batch.size(), opts.threads, [&](std::size_t i) {
        per[i].assign(plan.param_count, 0.0);
        terms[i] = triplet_pass(params, plan, batch[i], opts, &per[i]);
    });

    BackwardResult r;
    r.grads.assign(plan.param_count, 0.0);
    double tcn = 0.0, reg = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        tcn += terms[i].tcn;
        reg += terms[i].regression;
        for (std::size_t j = 0; j < plan.param_count; ++j) r.grads[j] += per[i][j];
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& g : r.grads) g *= inv;
    r.loss.tcn = tcn * inv;
    r.loss.regression = reg * inv;
    r.loss.total = total_loss(r.loss.tcn, r.loss.regression, opts.tcn_weight);
    require_finite(r.grads, "gradients");
    return r;
}

AdamState AdamState::for_params(const NetworkParams& params, double lr) {
    AdamState s;
    s.lr = lr;
    params.for_each_tensor([&](const Tensor& t) {
        s.m.emplace_back(t.size(), 0.0);
        s.v.emplace_back(t.size(), 0.0);
    });
    return s;
}

void adam_step(NetworkParams& params, std::span<const double> grads, AdamState& state) {
    if (grads.size() != params.parameter_count()) throw ShapeError("gradient length does not match parameters");
    std::size_t tensors = 0;
    params.for_each_tensor([&](const Tensor&) { ++tensors; });
    if (state.m.size() != tensors || state.v.size() != tensors) throw ShapeError("Adam state does not match parameters");

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::size_t ti = 0, off = 0;
    params.for_each_tensor([&](Tensor& t) {
        std::vector<double>& m = state.m[ti];
        std::vector<double>& v = state.v[ti];
        if (m.size() != t.size() || v.size() != t.size()) throw ShapeError("Adam moment shape mismatch");
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double g = grads[off + i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            t.data[i] = static_cast<float>(t.data[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
        off += t.size();
        ++ti;
    });
}

void save_params(const NetworkParams& params, const fs::path& path) {
    architecture_of(params);
    std::vector<char> buf(kCheckpointMagic, kCheckpointMagic + 4);
    write_u32(buf, kCheckpointVersion);
    write_u32(buf, static_cast<std::uint32_t>(params.layers.size() * 2));
    for (const Layer& l : params.layers) {
        const std::pair<std::string, const Tensor*> entries[2] = {{l.name + ".weight", &l.weight},
                                                                  {l.name + ".bias", &l.bias}};
        for (const auto& [name, t] : entries) {
            write_u16(buf, static_cast<std::uint16_t>(name.size()));
            buf.insert(buf.end(), name.begin(), name.end());
            buf.push_back(static_cast<char>(t->rank()));
            for (std::size_t d : t->shape) write_u32(buf, static_cast<std::uint32_t>(d));
            for (float f : t->data) write_u32(buf, std::bit_cast<std::uint32_t>(f));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

NetworkParams load_params(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    const std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    Cursor cur(buf, path.string());
    if (cur.str(4) != std::string(kCheckpointMagic, 4)) {
        throw ParseError(ParseError::Kind::BadMagic, path.string() + ": bad magic (not a checkpoint)");
    }
    const std::uint32_t version = cur.uint(4);
    if (version != kCheckpointVersion) {
        throw ParseError(ParseError::Kind::BadVersion, path.string() + ": unsupported checkpoint version " +
                                                           std::to_string(version));
    }
    const std::uint32_t count = cur.uint(4);
    if (count % 2 != 0) throw ParseError(ParseError::Kind::Malformed, path.string() + ": odd tensor count");

    NetworkParams p;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = cur.str(cur.uint(2));
        const std::uint32_t rank = cur.uint(1);
        std::vector<std::size_t> dims(rank);
        for (std::size_t& d : dims) d = cur.uint(4);
        Tensor t(dims);
        cur.need(4 * t.size());
        for (float& f : t.data) f = std::bit_cast<float>(cur.uint(4));

        const bool is_weight = i % 2 == 0;
        const std::string suffix = is_weight ? ".weight" : ".bias";
        if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
            throw ParseError(ParseError::Kind::Malformed, path.string() + ": unexpected tensor name '" + name + "'");
        }
        const std::string layer = name.substr(0, name.size() - suffix.size());
        if (is_weight) {
            p.layers.push_back({layer, std::move(t), {}});
        } else {
            if (p.layers.back().name != layer) {
                throw ParseError(ParseError::Kind::Malformed, path.string() + ": bias without weight for " + layer);
            }
            p.layers.back().bias = std::move(t);
        }
    }
    if (!cur.at_end()) throw ParseError(ParseError::Kind::Malformed, path.string() + ": trailing bytes");
    if (p.layers.size() < 4) throw ParseError(ParseError::Kind::Malformed, path.string() + ": too few layers");
    p.embedding_dim = p.layers[p.layers.size() - 3].weight.shape.at(0);
    p.output_dim = p.layers.back().weight.shape.at(0);
    try {
        architecture_of(p);
    } catch (const ShapeError& e) {
        throw ParseError(ParseError::Kind::Malformed, path.string() + ": " + e.what());
    }
    return p;
}

}  // namespace imitate
