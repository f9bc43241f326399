#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imitate/arm_sim.hpp"
#include "imitate/tensor.hpp"

namespace imitate {

/// Conv layers are stride 2 with padding kernel/2, followed by ReLU.
struct ConvSpec {
    int kernel = 3;
    int out_channels = 8;
};

/// How the last conv feature map is reduced before the embedding layer.
enum class Pooling {
    /// Channel means (C features).
    Average,
    /// Per-channel expected image coordinates under a spatial softmax
    /// (2C features, x then y per channel, in [-1, 1] with y up).
    SoftArgmax,
    /// The whole C x H' x W' map (ties the network to one input size).
    Flatten,
};

std::string_view pooling_name(Pooling p);
/// "average", "softargmax" or "flatten"; throws ConfigError otherwise.
Pooling parse_pooling(std::string_view name);

/// Encoder: convs -> pooling -> dense to the embedding.
/// Head: dense -> ReLU -> dense to the 2D end-effector position.
struct Architecture {
    int in_channels = 3;
    /// Input size the embedding layer is sized for; only Flatten uses it.
    int input_height = 64;
    int input_width = 64;
    Pooling pooling = Pooling::SoftArgmax;
    std::vector<ConvSpec> convs{{5, 8}, {3, 16}, {3, 32}};
    int embedding_dim = 32;
    int head_hidden = 32;
    int output_dim = 2;
};

/// Two small conv layers; used for exhaustive gradient checks on 8x8 inputs.
Architecture reduced_architecture();

struct Layer {
    std::string name;
    Tensor weight;  // conv: O x C x K x K, dense: out x in
    Tensor bias;    // O or out
    friend bool operator==(const Layer&, const Layer&) = default;
};

/// Layers in forward order: conv1..convN, embed, head1, head2.
struct NetworkParams {
    std::vector<Layer> layers;
    std::size_t embedding_dim = 0;
    std::size_t output_dim = 0;

    std::size_t parameter_count() const;
    /// Visits every parameter tensor in the canonical flat order
    /// (layer by layer, weight before bias).
    template <typename F>
    void for_each_tensor(F&& f) {
        for (Layer& l : layers) {
            f(l.weight);
            f(l.bias);
        }
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        for (const Layer& l : layers) {
            f(l.weight);
            f(l.bias);
        }
    }

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// Width of the embedding layer's input.
std::size_t pooled_features(const Architecture& arch);

/// Recovers the architecture from tensor shapes. Pooling follows the width
/// of the embedding layer: C is Average, 2C is SoftArgmax, any other multiple
/// of C is Flatten (input size left at the defaults; checked at run time).
/// Throws ShapeError naming the first inconsistent layer.
Architecture architecture_of(const NetworkParams& params);

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases. Each layer draws
/// from its own stream derived from `seed` and the layer name.
NetworkParams init_params(const Architecture& arch, std::uint64_t seed);

/// Same layout with every value zero.
NetworkParams zero_params(const Architecture& arch);

/// Rows are embeddings (embedding_dim columns). Throws ShapeError naming the
/// layer when an image does not fit the network.
Matrix encode(const NetworkParams& params, std::span<const Image> images, int threads = 1);

/// Rows are end-effector predictions (output_dim columns).
Matrix regress(const NetworkParams& params, const Matrix& embeddings);

/// Gradient of <cotangent, encode(image)> with respect to every parameter,
/// in the canonical flat order (head entries are zero).
std::vector<double> encode_vjp(const NetworkParams& params, const Image& image, std::span<const double> cotangent);
/// Gradient of <cotangent, regress(embedding)>; only head entries are non-zero.
std::vector<double> regress_vjp(const NetworkParams& params, std::span<const double> embedding,
                                std::span<const double> cotangent);

inline constexpr double kDistanceEpsilon = 1e-12;
inline constexpr double kDefaultMargin = 5.0;
inline constexpr double kDefaultTcnWeight = 0.4;

/// sqrt(sum (a-b)^2 + kDistanceEpsilon).
double embedding_distance(std::span<const double> a, std::span<const double> b);

struct TripletLoss {
    double loss = 0.0;
    std::vector<double> grad_anchor;
    std::vector<double> grad_positive;
    std::vector<double> grad_negative;
};

/// max(d(A,P) - d(A,N) + margin, 0); gradients are exactly zero unless the
/// hinge argument is strictly positive.
TripletLoss triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                         std::span<const double> negative, double margin);

struct RegressionLoss {
    double loss = 0.0;
    /// d loss / d prediction for anchor, positive, negative.
    std::vector<double> grad[3];
};

/// Sum over anchor/positive/negative of the per-coordinate mean squared error.
RegressionLoss regression_loss(std::span<const double> pred_a, std::span<const double> pred_p,
                               std::span<const double> pred_n, std::span<const double> target_a,
                               std::span<const double> target_p, std::span<const double> target_n);

double total_loss(double tcn, double regression, double tcn_weight = kDefaultTcnWeight);

struct LossBreakdown {
    double tcn = 0.0;
    double regression = 0.0;
    double total = 0.0;
};

/// One training sample: three frames and their ground-truth end-effector positions.
struct TripletExample {
    const Image* anchor = nullptr;
    const Image* positive = nullptr;
    const Image* negative = nullptr;
    EEPose target_anchor;
    EEPose target_positive;
    EEPose target_negative;
};

struct LossOptions {
    double margin = kDefaultMargin;
    double tcn_weight = kDefaultTcnWeight;
    int threads = 1;
};

/// Per-triplet loss terms from a forward pass only.
struct TripletTerms {
    double tcn = 0.0;
    double regression = 0.0;
};

std::vector<TripletTerms> triplet_terms(const NetworkParams& params, std::span<const TripletExample> batch,
                                        const LossOptions& opts);

struct BackwardResult {
    LossBreakdown loss;
    /// d mean_total / d parameter in the canonical flat order.
    std::vector<double> grads;
};

/// Batch-mean losses and exact gradients of the combined loss. Regression
/// gradients flow through the encoder. Per-triplet gradients may be computed
/// on several threads but are summed in triplet order.
/// Throws NumericError naming the layer on a non-finite intermediate.
BackwardResult backward(const NetworkParams& params, std::span<const TripletExample> batch, const LossOptions& opts);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Zero moments shaped like `params`.
    static AdamState for_params(const NetworkParams& params, double lr = 1e-3);
};

/// Bias-corrected Adam update applied in place.
void adam_step(NetworkParams& params, std::span<const double> grads, AdamState& state);

inline constexpr char kCheckpointMagic[4] = {'T', 'C', 'N', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "TCNW" | u32 version | u32 tensor count | per tensor: u16 name length,
/// name bytes, u8 rank, u32 dims, f32 data. Tensors are named
/// "<layer>.weight" / "<layer>.bias". All little-endian.
void save_params(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_params(const std::filesystem::path& path);

}  // namespace imitate
