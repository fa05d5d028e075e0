#include "svp/coarse_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace svp {

namespace {

using nlohmann::json;

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstRowMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

constexpr double kProbClamp = 1e-7;

int conv_out(int in, int kernel, int stride) { return (in - kernel) / stride + 1; }

template <typename S>
S stable_sigmoid(S z) {
    if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
    const S e = std::exp(z);
    return e / (S(1) + e);
}

// Gathers one sample's receptive fields: rows = c*k*k, cols = outH*outW.
template <typename S>
void im2col(const S* in, const LayerShape& s, int kernel, int stride, int out_h, int out_w,
            S* out) {
    const int hw = s.height * s.width;
    for (int c = 0; c < s.channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                S* row = out + static_cast<ptrdiff_t>((c * kernel + ky) * kernel + kx) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const S* src = in + c * hw + (oy * stride + ky) * s.width + kx;
                    for (int ox = 0; ox < out_w; ++ox) row[oy * out_w + ox] = src[ox * stride];
                }
            }
}

template <typename S>
void col2im_add(const S* cols, const LayerShape& s, int kernel, int stride, int out_h, int out_w,
                S* in_grad) {
    const int hw = s.height * s.width;
    for (int c = 0; c < s.channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                const S* row =
                    cols + static_cast<ptrdiff_t>((c * kernel + ky) * kernel + kx) * out_h * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    S* dst = in_grad + c * hw + (oy * stride + ky) * s.width + kx;
                    for (int ox = 0; ox < out_w; ++ox) dst[ox * stride] += row[oy * out_w + ox];
                }
            }
}

json spec_to_json(const NetSpec& s) {
    json layers = json::array();
    for (const LayerSpec& l : s.layers) {
        switch (l.kind) {
            case LayerKind::kConv:
                layers.push_back({{"type", "conv"},
                                  {"out_channels", l.out_channels},
                                  {"kernel", l.kernel},
                                  {"stride", l.stride}});
                break;
            case LayerKind::kRelu:
                layers.push_back({{"type", "relu"}});
                break;
            case LayerKind::kMaxPool:
                layers.push_back({{"type", "maxpool"}, {"kernel", l.kernel}, {"stride", l.stride}});
                break;
            case LayerKind::kFullyConnected:
                layers.push_back({{"type", "fc"}, {"out", l.out}});
                break;
        }
    }
    return json{{"input_resolution", s.input_resolution}, {"grid_n", s.grid_n}, {"layers", layers}};
}

}  // namespace

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride) {
    return LayerSpec{LayerKind::kConv, out_channels, kernel, stride, 0};
}
LayerSpec LayerSpec::relu() { return LayerSpec{LayerKind::kRelu, 0, 0, 1, 0}; }
LayerSpec LayerSpec::maxpool(int kernel, int stride) {
    return LayerSpec{LayerKind::kMaxPool, 0, kernel, stride, 0};
}
LayerSpec LayerSpec::fc(int out) { return LayerSpec{LayerKind::kFullyConnected, 0, 0, 1, out}; }

NetSpec NetSpec::desk_scale(int grid_n) {
    NetSpec s;
    s.input_resolution = 128;
    s.grid_n = grid_n;
    s.layers = {LayerSpec::conv(16, 5, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                LayerSpec::conv(32, 3, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                LayerSpec::conv(64, 3, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                LayerSpec::fc(512),        LayerSpec::relu(), LayerSpec::fc(grid_n * grid_n)};
    return s;
}

NetSpec NetSpec::tiny() {
    NetSpec s;
    s.input_resolution = 16;
    s.grid_n = 4;
    s.layers = {LayerSpec::conv(4, 3, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
                LayerSpec::conv(8, 3, 1), LayerSpec::relu(), LayerSpec::fc(16)};
    return s;
}

std::string NetSpec::to_json() const { return spec_to_json(*this).dump(2); }

NetSpec NetSpec::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("bad net spec JSON: ") + e.what());
    }
    NetSpec s;
    s.input_resolution = j.at("input_resolution").get<int>();
    s.grid_n = j.at("grid_n").get<int>();
    for (const auto& l : j.at("layers")) {
        const std::string type = l.at("type").get<std::string>();
        if (type == "conv")
            s.layers.push_back(LayerSpec::conv(l.at("out_channels").get<int>(),
                                               l.at("kernel").get<int>(), l.at("stride").get<int>()));
        else if (type == "relu")
            s.layers.push_back(LayerSpec::relu());
        else if (type == "maxpool")
            s.layers.push_back(LayerSpec::maxpool(l.at("kernel").get<int>(), l.at("stride").get<int>()));
        else if (type == "fc")
            s.layers.push_back(LayerSpec::fc(l.at("out").get<int>()));
        else
            throw IoError("unknown layer type: " + type);
    }
    return s;
}

std::vector<LayerShape> layer_shapes(const NetSpec& spec) {
    std::vector<LayerShape> shapes;
    LayerShape cur{1, spec.input_resolution, spec.input_resolution};
    shapes.push_back(cur);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::kConv:
                if (l.kernel <= 0 || l.stride <= 0 || l.out_channels <= 0 || cur.height < l.kernel ||
                    cur.width < l.kernel)
                    throw ShapeMismatch("conv layer " + std::to_string(i) + " does not fit " +
                                        std::to_string(cur.height) + "x" + std::to_string(cur.width));
                cur = LayerShape{l.out_channels, conv_out(cur.height, l.kernel, l.stride),
                                 conv_out(cur.width, l.kernel, l.stride)};
                break;
            case LayerKind::kRelu:
                break;
            case LayerKind::kMaxPool:
                if (l.kernel <= 0 || l.stride <= 0 || cur.height < l.kernel || cur.width < l.kernel)
                    throw ShapeMismatch("maxpool layer " + std::to_string(i) + " does not fit");
                cur.height = conv_out(cur.height, l.kernel, l.stride);
                cur.width = conv_out(cur.width, l.kernel, l.stride);
                break;
            case LayerKind::kFullyConnected:
                if (l.out <= 0) throw ShapeMismatch("fc layer " + std::to_string(i) + " needs out > 0");
                cur = LayerShape{l.out, 1, 1};
                break;
        }
        shapes.push_back(cur);
    }
    if (shapes.back().count() != spec.output_bins())
        throw ShapeMismatch("final layer outputs " + std::to_string(shapes.back().count()) +
                            ", expected " + std::to_string(spec.output_bins()));
    return shapes;
}

template <typename S>
NetParamsT<S> NetParamsT<S>::init(const NetSpec& spec, uint64_t seed) {
    const std::vector<LayerShape> shapes = layer_shapes(spec);
    Rng rng(seed);
    NetParamsT<S> p;
    p.spec = spec;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        TensorT<S> w, b;
        int fan_in = 0;
        if (l.kind == LayerKind::kConv) {
            fan_in = shapes[i].channels * l.kernel * l.kernel;
            w.dims = {static_cast<uint32_t>(l.out_channels), static_cast<uint32_t>(shapes[i].channels),
                      static_cast<uint32_t>(l.kernel), static_cast<uint32_t>(l.kernel)};
            b.dims = {static_cast<uint32_t>(l.out_channels)};
        } else if (l.kind == LayerKind::kFullyConnected) {
            fan_in = shapes[i].count();
            w.dims = {static_cast<uint32_t>(l.out), static_cast<uint32_t>(fan_in)};
            b.dims = {static_cast<uint32_t>(l.out)};
        } else {
            continue;
        }
        const std::string base = "layer" + std::to_string(i);
        w.name = base + ".weight";
        b.name = base + ".bias";
        const double limit = std::sqrt(6.0 / fan_in);
        w.data.resize(w.size());
        for (S& v : w.data) v = static_cast<S>(rng.uniform(-limit, limit));
        b.data.assign(b.size(), S(0));
        p.tensors.push_back(std::move(w));
        p.tensors.push_back(std::move(b));
    }
    return p;
}

template struct NetParamsT<float>;
template struct NetParamsT<double>;

template <typename To, typename From>
NetParamsT<To> cast_params(const NetParamsT<From>& p) {
    NetParamsT<To> out;
    out.spec = p.spec;
    for (const TensorT<From>& t : p.tensors) {
        TensorT<To> c;
        c.name = t.name;
        c.dims = t.dims;
        c.data.reserve(t.data.size());
        for (From v : t.data) c.data.push_back(static_cast<To>(v));
        out.tensors.push_back(std::move(c));
    }
    return out;
}

template NetParamsT<double> cast_params<double, float>(const NetParamsT<float>&);
template NetParamsT<float> cast_params<float, double>(const NetParamsT<double>&);

template <typename S>
NetEngine<S>::NetEngine(NetSpec spec) : spec_(std::move(spec)), shapes_(layer_shapes(spec_)) {}

template <typename S>
MatX<S> NetEngine<S>::forward(const NetParamsT<S>& params, const MatX<S>& input,
                              BatchCache<S>* cache) const {
    if (input.rows() != shapes_[0].count())
        throw ShapeMismatch("input has " + std::to_string(input.rows()) + " rows, expected " +
                            std::to_string(shapes_[0].count()));
    const int batch = static_cast<int>(input.cols());
    const size_t n_layers = spec_.layers.size();
    if (cache) {
        cache->acts.assign(n_layers + 1, MatX<S>());
        cache->cols.assign(n_layers, MatX<S>());
        cache->argmax.assign(n_layers, {});
    }

    MatX<S> act = input;
    MatX<S> cols_scratch;
    size_t pi = 0;  // index into params.tensors
    for (size_t i = 0; i < n_layers; ++i) {
        if (cache) cache->acts[i] = act;
        const LayerSpec& l = spec_.layers[i];
        const LayerShape& in_s = shapes_[i];
        const LayerShape& out_s = shapes_[i + 1];
        switch (l.kind) {
            case LayerKind::kConv: {
                const TensorT<S>& w = params.tensors.at(pi++);
                const TensorT<S>& b = params.tensors.at(pi++);
                const int ck = in_s.channels * l.kernel * l.kernel;
                const int ohw = out_s.height * out_s.width;
                MatX<S>& cols = cache ? cache->cols[i] : cols_scratch;
                cols.resize(ck, static_cast<Eigen::Index>(batch) * ohw);
                MatX<S> next(out_s.count(), batch);
                ConstRowMap<S> wm(w.data.data(), out_s.channels, ck);
                ConstVecMap<S> bm(b.data.data(), out_s.channels);
                for (int s = 0; s < batch; ++s) {
                    S* col_ptr = cols.data() + static_cast<ptrdiff_t>(s) * ohw * ck;
                    im2col(act.col(s).data(), in_s, l.kernel, l.stride, out_s.height, out_s.width,
                           col_ptr);
                    Eigen::Map<MatX<S>> col_s(col_ptr, ck, ohw);
                    RowMap<S> out_s_map(next.col(s).data(), out_s.channels, ohw);
                    out_s_map.noalias() = wm * col_s;
                    out_s_map.colwise() += bm;
                }
                act = std::move(next);
                break;
            }
            case LayerKind::kRelu:
                act = act.cwiseMax(S(0));
                break;
            case LayerKind::kMaxPool: {
                const int ohw = out_s.height * out_s.width;
                MatX<S> next(out_s.count(), batch);
                std::vector<int32_t>* arg = cache ? &cache->argmax[i] : nullptr;
                if (arg) arg->assign(static_cast<size_t>(out_s.count()) * batch, -1);
                for (int s = 0; s < batch; ++s) {
                    const S* in = act.col(s).data();
                    S* out = next.col(s).data();
                    for (int c = 0; c < in_s.channels; ++c)
                        for (int oy = 0; oy < out_s.height; ++oy)
                            for (int ox = 0; ox < out_s.width; ++ox) {
                                S best = std::numeric_limits<S>::lowest();
                                int best_idx = -1;
                                for (int ky = 0; ky < l.kernel; ++ky)
                                    for (int kx = 0; kx < l.kernel; ++kx) {
                                        const int idx = c * in_s.height * in_s.width +
                                                        (oy * l.stride + ky) * in_s.width +
                                                        (ox * l.stride + kx);
                                        if (in[idx] > best) {
                                            best = in[idx];
                                            best_idx = idx;
                                        }
                                    }
                                const int o = c * ohw + oy * out_s.width + ox;
                                out[o] = best;
                                if (arg) (*arg)[static_cast<size_t>(s) * out_s.count() + o] = best_idx;
                            }
                }
                act = std::move(next);
                break;
            }
            case LayerKind::kFullyConnected: {
                const TensorT<S>& w = params.tensors.at(pi++);
                const TensorT<S>& b = params.tensors.at(pi++);
                ConstRowMap<S> wm(w.data.data(), l.out, in_s.count());
                ConstVecMap<S> bm(b.data.data(), l.out);
                MatX<S> next(l.out, batch);
                next.noalias() = wm * act;
                next.colwise() += bm;
                act = std::move(next);
                break;
            }
        }
    }
    if (cache) cache->acts[n_layers] = act;  // logits
    return act.unaryExpr([](S z) { return stable_sigmoid(z); });
}

template <typename S>
S NetEngine<S>::bce(const MatX<S>& probs, const MatX<S>& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw ShapeMismatch("bce: prediction and target shapes differ");
    const S lo = static_cast<S>(kProbClamp), hi = S(1) - static_cast<S>(kProbClamp);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j)
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            const double p = std::clamp(probs(i, j), lo, hi);
            const double t = targets(i, j);
            sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
    return static_cast<S>(sum / (static_cast<double>(probs.rows()) * probs.cols()));
}

template <typename S>
NetParamsT<S> NetEngine<S>::backward(const NetParamsT<S>& params, const BatchCache<S>& cache,
                                     const MatX<S>& probs, const MatX<S>& targets) const {
    NetParamsT<S> grads;
    grads.spec = params.spec;
    grads.tensors.reserve(params.tensors.size());
    for (const TensorT<S>& t : params.tensors) {
        TensorT<S> g;
        g.name = t.name;
        g.dims = t.dims;
        g.data.assign(t.data.size(), S(0));
        grads.tensors.push_back(std::move(g));
    }

    const int batch = static_cast<int>(probs.cols());
    const S scale = S(1) / static_cast<S>(static_cast<double>(probs.rows()) * batch);
    MatX<S> delta = (probs - targets) * scale;  // dloss/dlogits for sigmoid+BCE

    int pi = static_cast<int>(params.tensors.size());
    for (int i = static_cast<int>(spec_.layers.size()) - 1; i >= 0; --i) {
        const LayerSpec& l = spec_.layers[i];
        const LayerShape& in_s = shapes_[i];
        const LayerShape& out_s = shapes_[i + 1];
        switch (l.kind) {
            case LayerKind::kConv: {
                pi -= 2;
                const TensorT<S>& w = params.tensors[pi];
                TensorT<S>& gw = grads.tensors[pi];
                TensorT<S>& gb = grads.tensors[pi + 1];
                const int ck = in_s.channels * l.kernel * l.kernel;
                const int ohw = out_s.height * out_s.width;
                ConstRowMap<S> wm(w.data.data(), out_s.channels, ck);
                RowMap<S> gwm(gw.data.data(), out_s.channels, ck);
                VecMap<S> gbm(gb.data.data(), out_s.channels);
                MatX<S> prev(in_s.count(), batch);
                prev.setZero();
                MatX<S> dcol(ck, ohw);
                for (int s = 0; s < batch; ++s) {
                    ConstRowMap<S> dout(delta.col(s).data(), out_s.channels, ohw);
                    Eigen::Map<const MatX<S>> col_s(
                        cache.cols[i].data() + static_cast<ptrdiff_t>(s) * ohw * ck, ck, ohw);
                    gwm.noalias() += dout * col_s.transpose();
                    gbm.noalias() += dout.rowwise().sum();
                    dcol.noalias() = wm.transpose() * dout;
                    col2im_add(dcol.data(), in_s, l.kernel, l.stride, out_s.height, out_s.width,
                               prev.col(s).data());
                }
                delta = std::move(prev);
                break;
            }
            case LayerKind::kRelu:
                delta.array() *= (cache.acts[i].array() > S(0)).template cast<S>();
                break;
            case LayerKind::kMaxPool: {
                MatX<S> prev(in_s.count(), batch);
                prev.setZero();
                const std::vector<int32_t>& arg = cache.argmax[i];
                for (int s = 0; s < batch; ++s) {
                    const S* d = delta.col(s).data();
                    S* p = prev.col(s).data();
                    for (int o = 0; o < out_s.count(); ++o)
                        p[arg[static_cast<size_t>(s) * out_s.count() + o]] += d[o];
                }
                delta = std::move(prev);
                break;
            }
            case LayerKind::kFullyConnected: {
                pi -= 2;
                const TensorT<S>& w = params.tensors[pi];
                TensorT<S>& gw = grads.tensors[pi];
                TensorT<S>& gb = grads.tensors[pi + 1];
                ConstRowMap<S> wm(w.data.data(), l.out, in_s.count());
                RowMap<S> gwm(gw.data.data(), l.out, in_s.count());
                VecMap<S> gbm(gb.data.data(), l.out);
                gwm.noalias() += delta * cache.acts[i].transpose();
                gbm.noalias() += delta.rowwise().sum();
                MatX<S> prev(in_s.count(), batch);
                prev.noalias() = wm.transpose() * delta;
                delta = std::move(prev);
                break;
            }
        }
    }
    return grads;
}

template class NetEngine<float>;
template class NetEngine<double>;

BinGrid forward(const NetParams& params, const SphereImage& img) {
    NetEngine<float> engine(params.spec);
    if (img.resolution != params.spec.input_resolution)
        throw ShapeMismatch("sphere image resolution " + std::to_string(img.resolution) +
                            " != net input " + std::to_string(params.spec.input_resolution));
    MatX<float> in(img.intensities.size(), 1);
    for (size_t i = 0; i < img.intensities.size(); ++i) in(static_cast<Eigen::Index>(i), 0) = img.intensities[i];
    const MatX<float> probs = engine.forward(params, in);
    BinGrid grid;
    grid.n = params.spec.grid_n;
    grid.values.resize(static_cast<size_t>(grid.n) * grid.n);
    for (size_t i = 0; i < grid.values.size(); ++i) grid.values[i] = probs(static_cast<Eigen::Index>(i), 0);
    return grid;
}

double loss_bce(const BinGrid& pred, const BinGrid& target) {
    if (pred.n != target.n) throw ShapeMismatch("loss_bce: grid sizes differ");
    double sum = 0.0;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double p = std::clamp(pred.values[i], kProbClamp, 1.0 - kProbClamp);
        const double t = target.values[i];
        sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return sum / static_cast<double>(pred.values.size());
}

BinGrid make_target(const SynthScene& scene, int n) {
    BinGrid grid;
    grid.n = n;
    grid.values.assign(static_cast<size_t>(n) * n, 0.0);
    for (const SphereCoord& v : scene.true_vps) grid.values[vp_to_bin(v, n)] = 1.0;
    return grid;
}

Momentum Momentum::zeros_like(const NetParams& params) {
    Momentum m;
    for (const TensorT<float>& t : params.tensors) {
        TensorT<float> v;
        v.name = t.name;
        v.dims = t.dims;
        v.data.assign(t.data.size(), 0.0f);
        m.velocity.push_back(std::move(v));
    }
    return m;
}

double train_step(const NetEngine<float>& engine, NetParams& params, Momentum& vel,
                  const MatX<float>& inputs, const MatX<float>& targets, double learning_rate,
                  double momentum) {
    if (inputs.cols() == 0) throw EmptyInput("train_step: empty batch");
    BatchCache<float> cache;
    const MatX<float> probs = engine.forward(params, inputs, &cache);
    const double loss = NetEngine<float>::bce(probs, targets);
    if (!std::isfinite(loss))
        throw NonFiniteLoss("non-finite batch loss " + std::to_string(loss));
    const NetParamsT<float> grads = engine.backward(params, cache, probs, targets);
    for (size_t t = 0; t < params.tensors.size(); ++t) {
        std::vector<float>& th = params.tensors[t].data;
        std::vector<float>& v = vel.velocity[t].data;
        const std::vector<float>& g = grads.tensors[t].data;
        for (size_t i = 0; i < th.size(); ++i) {
            v[i] = static_cast<float>(momentum * v[i] - learning_rate * g[i]);
            th[i] += v[i];
            if (!std::isfinite(th[i]))
                throw NonFiniteLoss("non-finite parameter in " + params.tensors[t].name +
                                    " after update");
        }
    }
    return loss;
}

std::vector<uint8_t> pack_bits(std::span<const float> values) {
    std::vector<uint8_t> bits((values.size() + 7) / 8, 0);
    for (size_t i = 0; i < values.size(); ++i)
        if (values[i] > 0.5f) bits[i >> 3] |= static_cast<uint8_t>(1u << (i & 7));
    return bits;
}

void unpack_bits(std::span<const uint8_t> bits, int count, float* out) {
    for (int i = 0; i < count; ++i)
        out[i] = (bits[static_cast<size_t>(i) >> 3] >> (i & 7)) & 1u ? 1.0f : 0.0f;
}

Dataset build_dataset(std::span<const std::string> scene_files, int resolution, int grid_n) {
    Dataset d;
    d.resolution = resolution;
    d.grid_n = grid_n;
    d.images.reserve(scene_files.size());
    d.targets.reserve(scene_files.size());
    for (const std::string& path : scene_files) {
        const SynthScene scene = load_scene(path);
        std::vector<HomLine> lines;
        lines.reserve(scene.segments.size());
        for (const Segment& s : scene.segments) lines.push_back(segment_to_line(s));
        const SphereImage img = render_sphere_image(lines, resolution);
        d.images.push_back(pack_bits(img.intensities));
        std::vector<uint16_t> bins;
        for (const SphereCoord& v : scene.true_vps)
            bins.push_back(static_cast<uint16_t>(vp_to_bin(v, grid_n)));
        std::sort(bins.begin(), bins.end());
        bins.erase(std::unique(bins.begin(), bins.end()), bins.end());
        d.targets.push_back(std::move(bins));
    }
    return d;
}

namespace {

void fill_batch(const Dataset& data, std::span<const int> idx, int bins, MatX<float>& inputs,
                MatX<float>& targets) {
    const int res2 = data.resolution * data.resolution;
    inputs.resize(res2, static_cast<Eigen::Index>(idx.size()));
    targets.resize(bins, static_cast<Eigen::Index>(idx.size()));
    targets.setZero();
    for (size_t s = 0; s < idx.size(); ++s) {
        unpack_bits(data.images[idx[s]], res2, inputs.col(static_cast<Eigen::Index>(s)).data());
        for (uint16_t b : data.targets[idx[s]]) targets(b, static_cast<Eigen::Index>(s)) = 1.0f;
    }
}

}  // namespace

NetParams train(const NetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                TrainReport* report, std::ostream* log) {
    if (cfg.learning_rate <= 0) throw Error("learning_rate must be > 0");
    if (cfg.validation_fraction <= 0 || cfg.validation_fraction >= 1)
        throw Error("validation_fraction must be in (0,1)");
    if (data.images.empty()) throw EmptyInput("train: empty dataset");
    if (data.resolution != spec.input_resolution || data.grid_n != spec.grid_n)
        throw ShapeMismatch("dataset rendered for a different net geometry");

    NetEngine<float> engine(spec);
    NetParams params = NetParams::init(spec, cfg.seed);
    Momentum vel = Momentum::zeros_like(params);

    const int n = static_cast<int>(data.images.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(stream_seed(cfg.seed, 99));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_int(0, i)]);
    const int n_val = std::max(1, static_cast<int>(std::lround(n * cfg.validation_fraction)));
    const std::vector<int> val_idx(order.end() - n_val, order.end());
    std::vector<int> train_idx(order.begin(), order.end() - n_val);

    const int bins = spec.output_bins();
    const int decay_epoch = (2 * cfg.epochs) / 3;
    MatX<float> inputs, targets;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = epoch >= decay_epoch ? cfg.learning_rate * 0.1 : cfg.learning_rate;
        Rng epoch_rng(stream_seed(cfg.seed, 100 + static_cast<uint64_t>(epoch)));
        for (int i = static_cast<int>(train_idx.size()) - 1; i > 0; --i)
            std::swap(train_idx[i], train_idx[epoch_rng.uniform_int(0, i)]);

        double loss_sum = 0.0;
        int n_batches = 0;
        for (size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
            const size_t end = std::min(train_idx.size(), start + cfg.batch_size);
            fill_batch(data, std::span<const int>(train_idx.data() + start, end - start), bins,
                       inputs, targets);
            loss_sum += train_step(engine, params, vel, inputs, targets, lr, cfg.momentum);
            ++n_batches;
        }
        const double train_loss = loss_sum / std::max(1, n_batches);
        const double val = validate_bce(params, data, val_idx);
        if (report) {
            report->train_loss.push_back(train_loss);
            report->val_loss.push_back(val);
            report->final_val_bce = val;
        }
        if (log)
            (*log) << "epoch " << (epoch + 1) << "/" << cfg.epochs << " lr " << lr << " train_bce "
                   << train_loss << " val_bce " << val << "\n";
    }
    return params;
}

double validate_bce(const NetParams& params, const Dataset& data, std::span<const int> indices) {
    if (indices.empty()) throw EmptyInput("validate_bce: no examples");
    NetEngine<float> engine(params.spec);
    const int bins = params.spec.output_bins();
    MatX<float> inputs, targets;
    double sum = 0.0;
    constexpr size_t kChunk = 64;
    for (size_t start = 0; start < indices.size(); start += kChunk) {
        const size_t end = std::min(indices.size(), start + kChunk);
        fill_batch(data, indices.subspan(start, end - start), bins, inputs, targets);
        const MatX<float> probs = engine.forward(params, inputs);
        sum += static_cast<double>(NetEngine<float>::bce(probs, targets)) * (end - start);
    }
    return sum / static_cast<double>(indices.size());
}

double topk_recall(const NetParams& params, const Dataset& data, std::span<const int> indices,
                   int k, double theta_act) {
    if (indices.empty()) throw EmptyInput("topk_recall: no examples");
    NetEngine<float> engine(params.spec);
    const int res2 = data.resolution * data.resolution;
    MatX<float> input(res2, 1);
    size_t hits = 0, total = 0;
    for (int idx : indices) {
        unpack_bits(data.images[idx], res2, input.col(0).data());
        const MatX<float> probs = engine.forward(params, input);
        BinGrid grid;
        grid.n = params.spec.grid_n;
        grid.values.resize(static_cast<size_t>(grid.n) * grid.n);
        for (size_t i = 0; i < grid.values.size(); ++i)
            grid.values[i] = probs(static_cast<Eigen::Index>(i), 0);
        std::vector<int> maxima;
        try {
            maxima = local_maxima(grid, k, theta_act);
        } catch (const Error&) {
            maxima.clear();
        }
        for (uint16_t b : data.targets[idx]) {
            ++total;
            if (std::find(maxima.begin(), maxima.end(), static_cast<int>(b)) != maxima.end()) ++hits;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

// True when the two forward passes disagree on any relu sign or pool argmax;
// a central difference across such a point averages two one-sided slopes and
// says nothing about the analytic derivative at the centre.
bool crosses_kink(const NetSpec& spec, const BatchCache<double>& a, const BatchCache<double>& b) {
    for (size_t l = 0; l < spec.layers.size(); ++l) {
        if (spec.layers[l].kind == LayerKind::kMaxPool && a.argmax[l] != b.argmax[l]) return true;
        if (spec.layers[l].kind == LayerKind::kRelu)
            for (Eigen::Index e = 0; e < a.acts[l].size(); ++e)
                if ((a.acts[l].data()[e] > 0.0) != (b.acts[l].data()[e] > 0.0)) return true;
    }
    return false;
}

}  // namespace

double gradient_check(const NetSpec& spec, uint64_t seed, int n_samples) {
    NetEngine<double> engine(spec);
    NetParamsT<double> params = NetParamsT<double>::init(spec, seed);
    Rng rng(stream_seed(seed, 7));

    const int res2 = spec.input_resolution * spec.input_resolution;
    MatX<double> input(res2, 1);
    for (int i = 0; i < res2; ++i) input(i, 0) = rng.bernoulli(0.1) ? 1.0 : 0.0;
    MatX<double> target(spec.output_bins(), 1);
    for (int i = 0; i < spec.output_bins(); ++i) target(i, 0) = rng.bernoulli(0.2) ? 1.0 : 0.0;

    BatchCache<double> cache;
    const MatX<double> probs = engine.forward(params, input, &cache);
    const NetParamsT<double> grads = engine.backward(params, cache, probs, target);

    const double h = 1e-3;
    double worst = 0.0;
    int accepted = 0;
    for (int attempt = 0; accepted < n_samples && attempt < 50 * n_samples; ++attempt) {
        const int t = rng.uniform_int(0, static_cast<int>(params.tensors.size()) - 1);
        const int i = rng.uniform_int(0, static_cast<int>(params.tensors[t].data.size()) - 1);
        double& theta = params.tensors[t].data[i];
        const double orig = theta;
        BatchCache<double> plus, minus;
        theta = orig + h;
        const double lp =
            static_cast<double>(NetEngine<double>::bce(engine.forward(params, input, &plus), target));
        theta = orig - h;
        const double lm = static_cast<double>(
            NetEngine<double>::bce(engine.forward(params, input, &minus), target));
        theta = orig;
        if (crosses_kink(spec, plus, minus)) continue;  // probe straddles a relu/pool switch
        ++accepted;
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = grads.tensors[t].data[i];
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
        worst = std::max(worst, rel);
    }
    if (accepted < n_samples) throw EmptyInput("gradient_check: too few kink-free probes");
    return worst;
}

// --- serialization -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'V', 'P', 'M'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw TruncatedFile("model file ends inside a header field");
    return v;
}

}  // namespace

void save_model(const NetParams& params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f.write(kMagic, 4);
    write_u32(f, kVersion);
    const std::string spec_json = spec_to_json(params.spec).dump();
    write_u32(f, static_cast<uint32_t>(spec_json.size()));
    f.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));
    for (const TensorT<float>& t : params.tensors) {
        write_u32(f, static_cast<uint32_t>(t.name.size()));
        f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(f, static_cast<uint32_t>(t.dims.size()));
        for (uint32_t d : t.dims) write_u32(f, d);
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

NetParams load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagic("not a model file: " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion)
        throw VersionMismatch("model version " + std::to_string(version) + ", expected " +
                              std::to_string(kVersion));
    const uint32_t spec_len = read_u32(f);
    std::string spec_json(spec_len, '\0');
    f.read(spec_json.data(), spec_len);
    if (!f) throw TruncatedFile("model file ends inside the net spec");

    NetParams params;
    params.spec = NetSpec::from_json(spec_json);
    const NetParams reference = NetParams::init(params.spec, 0);  // shape template
    for (const TensorT<float>& ref : reference.tensors) {
        TensorT<float> t;
        const uint32_t name_len = read_u32(f);
        t.name.resize(name_len);
        f.read(t.name.data(), name_len);
        if (!f) throw TruncatedFile("model file ends inside a tensor name");
        const uint32_t rank = read_u32(f);
        t.dims.resize(rank);
        for (uint32_t& d : t.dims) d = read_u32(f);
        if (t.name != ref.name || t.dims != ref.dims)
            throw ShapeMismatch("tensor " + t.name + " does not match the net spec");
        t.data.resize(t.size());
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!f) throw TruncatedFile("model file ends inside tensor " + t.name);
        params.tensors.push_back(std::move(t));
    }
    return params;
}

}  // namespace svp
