#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "svp/errors.hpp"
#include "svp/rng.hpp"
#include "svp/sphere_raster.hpp"
#include "svp/synthgen.hpp"

namespace svp {

enum class LayerKind { kConv, kRelu, kMaxPool, kFullyConnected };

struct LayerSpec {
    LayerKind kind = LayerKind::kRelu;
    int out_channels = 0;  // conv
    int kernel = 0;        // conv, maxpool
    int stride = 1;        // conv, maxpool
    int out = 0;           // fully_connected

    static LayerSpec conv(int out_channels, int kernel, int stride);
    static LayerSpec relu();
    static LayerSpec maxpool(int kernel, int stride);
    static LayerSpec fc(int out);
};

struct NetSpec {
    int input_resolution = 128;
    int grid_n = 20;
    std::vector<LayerSpec> layers;

    int output_bins() const { return grid_n * grid_n; }
    std::string to_json() const;
    static NetSpec from_json(const std::string& text);

    // Default production architecture (128x128x1 input).
    static NetSpec desk_scale(int grid_n = 20);
    // Small net for gradient checking: 16x16 input, 4x4 grid, 2 conv + 1 fc.
    static NetSpec tiny();
};

struct LayerShape {
    int channels = 0, height = 0, width = 0;
    int count() const { return channels * height * width; }
};

// Input shape of every layer plus the final output shape; validates the spec.
std::vector<LayerShape> layer_shapes(const NetSpec& spec);

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
struct TensorT {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<S> data;

    size_t size() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

template <typename S>
struct NetParamsT {
    NetSpec spec;
    std::vector<TensorT<S>> tensors;  // weight, bias per parameterized layer, in order

    // He-uniform weights, zero biases; deterministic in seed.
    static NetParamsT init(const NetSpec& spec, uint64_t seed);
};

using NetParams = NetParamsT<float>;

template <typename To, typename From>
NetParamsT<To> cast_params(const NetParamsT<From>& p);

template <typename S>
struct BatchCache {
    std::vector<MatX<S>> acts;               // acts[i] = input of layer i; back() = logits
    std::vector<MatX<S>> cols;               // im2col per conv layer (empty otherwise)
    std::vector<std::vector<int32_t>> argmax;  // pool winners per maxpool layer
};

template <typename S>
class NetEngine {
  public:
    explicit NetEngine(NetSpec spec);

    const NetSpec& spec() const { return spec_; }
    const std::vector<LayerShape>& shapes() const { return shapes_; }

    // input: (resolution^2) x batch, one channel. Returns sigmoid probabilities
    // (grid_n^2) x batch. Pass a cache to enable backward().
    MatX<S> forward(const NetParamsT<S>& params, const MatX<S>& input,
                    BatchCache<S>* cache = nullptr) const;

    // Mean binary cross entropy over all bins and batch columns.
    static S bce(const MatX<S>& probs, const MatX<S>& targets);

    // Gradient of bce(forward(input), targets) w.r.t. every parameter.
    NetParamsT<S> backward(const NetParamsT<S>& params, const BatchCache<S>& cache,
                           const MatX<S>& probs, const MatX<S>& targets) const;

  private:
    NetSpec spec_;
    std::vector<LayerShape> shapes_;
};

extern template class NetEngine<float>;
extern template class NetEngine<double>;

// --- single-image inference -------------------------------------------------

BinGrid forward(const NetParams& params, const SphereImage& img);

double loss_bce(const BinGrid& pred, const BinGrid& target);

// Binary grid with a 1 at each true VP's bin.
BinGrid make_target(const SynthScene& scene, int n);

// --- training ----------------------------------------------------------------

struct TrainConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 64;
    int epochs = 10;
    uint64_t seed = 1;
    double validation_fraction = 0.05;
};

struct Momentum {
    std::vector<TensorT<float>> velocity;
    static Momentum zeros_like(const NetParams& params);
};

// One momentum-SGD step on a batch; returns the batch loss.
double train_step(const NetEngine<float>& engine, NetParams& params, Momentum& vel,
                  const MatX<float>& inputs, const MatX<float>& targets,
                  double learning_rate, double momentum);

struct Dataset {
    int resolution = 0;
    int grid_n = 0;
    std::vector<std::vector<uint8_t>> images;    // bit-packed sphere images
    std::vector<std::vector<uint16_t>> targets;  // indices of 1-bins, sorted
};

Dataset build_dataset(std::span<const std::string> scene_files, int resolution, int grid_n);

std::vector<uint8_t> pack_bits(std::span<const float> values);
void unpack_bits(std::span<const uint8_t> bits, int count, float* out);

struct TrainReport {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch
    double final_val_bce = 0.0;
};

// Momentum SGD; lr decays x0.1 after 2/3 of the epochs. Deterministic in
// (cfg.seed, dataset order). Logs one line per epoch if log is non-null.
NetParams train(const NetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                TrainReport* report = nullptr, std::ostream* log = nullptr);

double validate_bce(const NetParams& params, const Dataset& data, std::span<const int> indices);

// Fraction of true-VP bins that appear among the top-k local maxima of the
// predicted grid, over the given examples.
double topk_recall(const NetParams& params, const Dataset& data, std::span<const int> indices,
                   int k, double theta_act);

// Max relative error between analytic and central finite-difference gradients
// (h = 1e-3) over n_samples randomly chosen parameters, in double precision.
// Probes whose +/-h passes flip a relu sign or pool argmax are discarded (the
// difference quotient there mixes two one-sided slopes). Denominator is
// floored at 1e-3 so that parameters whose gradient sits below the probe's
// own noise scale compare absolutely.
double gradient_check(const NetSpec& spec, uint64_t seed, int n_samples);

// --- serialization -----------------------------------------------------------

// Format: magic "SVPM", u32 version, u32 JSON length + NetSpec JSON, then per
// tensor: u32 name length + name, u32 rank, u32 dims, f32 little-endian data.
void save_model(const NetParams& params, const std::string& path);
NetParams load_model(const std::string& path);

}  // namespace svp
