#include "tsc/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>

namespace tsc::nn {

void Gradients::zero() {
    for (auto& v : dw) {
        std::fill(v.begin(), v.end(), 0.0);
    }
    for (auto& v : db) {
        std::fill(v.begin(), v.end(), 0.0);
    }
}

void Gradients::add(const Gradients& other, double scale) {
    if (other.dw.size() != dw.size()) {
        throw ShapeError("gradient layer count mismatch");
    }
    for (std::size_t k = 0; k < dw.size(); ++k) {
        if (other.dw[k].size() != dw[k].size() || other.db[k].size() != db[k].size()) {
            throw ShapeError("gradient shape mismatch");
        }
        for (std::size_t i = 0; i < dw[k].size(); ++i) {
            dw[k][i] += scale * other.dw[k][i];
        }
        for (std::size_t i = 0; i < db[k].size(); ++i) {
            db[k][i] += scale * other.db[k][i];
        }
    }
}

double Gradients::max_abs() const {
    double m = 0.0;
    for (const auto& v : dw) {
        for (double x : v) {
            m = std::max(m, std::abs(x));
        }
    }
    for (const auto& v : db) {
        for (double x : v) {
            m = std::max(m, std::abs(x));
        }
    }
    return m;
}

namespace {

void check_dropout(const std::vector<double>& dropout, std::size_t hidden) {
    if (dropout.size() != hidden) {
        throw ShapeError("expected " + std::to_string(hidden) + " dropout entries, got " +
                         std::to_string(dropout.size()));
    }
    for (double p : dropout) {
        if (!(p >= 0.0 && p < 1.0)) {
            throw ShapeError("dropout probability must lie in [0, 1)");
        }
    }
}

} // namespace

Mlp::Mlp(const std::vector<std::size_t>& widths, std::vector<double> dropout, Rng& init_rng)
    : dropout_(std::move(dropout)) {
    if (widths.size() < 2) {
        throw ShapeError("an MLP needs at least input and output widths");
    }
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        Layer l;
        l.in = widths[k];
        l.out = widths[k + 1];
        if (l.in == 0 || l.out == 0) {
            throw ShapeError("layer widths must be positive");
        }
        const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        l.w.resize(l.in * l.out);
        for (double& x : l.w) {
            x = (2.0 * uniform01(init_rng) - 1.0) * bound;
        }
        l.b.assign(l.out, 0.0);
        layers_.push_back(std::move(l));
    }
    check_dropout(dropout_, layers_.size() - 1);
}

Mlp::Mlp(std::vector<Layer> layers, std::vector<double> dropout)
    : layers_(std::move(layers)), dropout_(std::move(dropout)) {
    if (layers_.empty()) {
        throw ShapeError("an MLP needs at least one layer");
    }
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const Layer& l = layers_[k];
        if (l.w.size() != l.in * l.out || l.b.size() != l.out) {
            throw ShapeError("layer " + std::to_string(k) + " parameter sizes do not match its dimensions");
        }
        if (k > 0 && layers_[k - 1].out != l.in) {
            throw ShapeError("layer " + std::to_string(k) + " input width does not match the previous output");
        }
    }
    check_dropout(dropout_, layers_.size() - 1);
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) {
        n += l.w.size() + l.b.size();
    }
    return n;
}

std::vector<std::size_t> Mlp::widths() const {
    std::vector<std::size_t> w;
    if (layers_.empty()) {
        return w;
    }
    w.push_back(layers_.front().in);
    for (const Layer& l : layers_) {
        w.push_back(l.out);
    }
    return w;
}

std::vector<double> Mlp::run(std::span<const double> x, Rng* rng, ForwardCache* cache) const {
    if (x.size() != input_size()) {
        throw ShapeError("input width " + std::to_string(x.size()) + " does not match network input " +
                         std::to_string(input_size()));
    }
    if (cache != nullptr) {
        cache->inputs.assign(layers_.size(), {});
        cache->pre.assign(layers_.size(), {});
        cache->masks.assign(layers_.size() - 1, {});
        cache->valid = true;
    }
    std::vector<double> a(x.begin(), x.end());
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        const Layer& l = layers_[k];
        std::vector<double> z(l.b);
        for (std::size_t o = 0; o < l.out; ++o) {
            const double* row = &l.w[o * l.in];
            double s = 0.0;
            for (std::size_t i = 0; i < l.in; ++i) {
                s += row[i] * a[i];
            }
            z[o] += s;
        }
        if (cache != nullptr) {
            cache->inputs[k] = std::move(a);
            cache->pre[k] = z;
        }
        const bool hidden = k + 1 < layers_.size();
        if (hidden) {
            for (double& v : z) {
                v = std::max(0.0, v);
            }
            const double p = dropout_[k];
            if (rng != nullptr && p > 0.0) {
                std::vector<double> mask(l.out);
                const double keep_scale = 1.0 / (1.0 - p);
                for (std::size_t o = 0; o < l.out; ++o) {
                    mask[o] = uniform01(*rng) < p ? 0.0 : keep_scale;
                    z[o] *= mask[o];
                }
                if (cache != nullptr) {
                    cache->masks[k] = std::move(mask);
                }
            }
        }
        a = std::move(z);
    }
    return a;
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
    return run(x, nullptr, nullptr);
}

std::vector<double> Mlp::forward_train(std::span<const double> x, Rng& rng, ForwardCache& cache) const {
    return run(x, &rng, &cache);
}

std::vector<double> Mlp::forward_cached(std::span<const double> x, ForwardCache& cache) const {
    return run(x, nullptr, &cache);
}

Gradients Mlp::make_gradients() const {
    Gradients g;
    for (const Layer& l : layers_) {
        g.dw.emplace_back(l.w.size(), 0.0);
        g.db.emplace_back(l.b.size(), 0.0);
    }
    return g;
}

void Mlp::backward(const ForwardCache& cache, std::span<const double> dout, Gradients& acc) const {
    if (!cache.valid || cache.inputs.size() != layers_.size()) {
        throw UsageError("backward called without a matching forward cache");
    }
    if (dout.size() != output_size()) {
        throw ShapeError("output gradient width does not match network output");
    }
    if (acc.dw.size() != layers_.size()) {
        throw ShapeError("gradient buffer does not match the network");
    }
    std::vector<double> delta(dout.begin(), dout.end()); // dL/dz of current layer
    for (std::size_t k = layers_.size(); k-- > 0;) {
        const Layer& l = layers_[k];
        const auto& in = cache.inputs[k];
        auto& dw = acc.dw[k];
        auto& db = acc.db[k];
        for (std::size_t o = 0; o < l.out; ++o) {
            const double d = delta[o];
            db[o] += d;
            if (d == 0.0) {
                continue;
            }
            double* row = &dw[o * l.in];
            for (std::size_t i = 0; i < l.in; ++i) {
                row[i] += d * in[i];
            }
        }
        if (k == 0) {
            break;
        }
        // Back through layer k-1's dropout and ReLU.
        std::vector<double> prev(l.in, 0.0);
        for (std::size_t o = 0; o < l.out; ++o) {
            const double d = delta[o];
            if (d == 0.0) {
                continue;
            }
            const double* row = &l.w[o * l.in];
            for (std::size_t i = 0; i < l.in; ++i) {
                prev[i] += d * row[i];
            }
        }
        const auto& mask = cache.masks[k - 1];
        const auto& z = cache.pre[k - 1];
        for (std::size_t i = 0; i < l.in; ++i) {
            double g = z[i] > 0.0 ? prev[i] : 0.0;
            if (!mask.empty()) {
                g *= mask[i];
            }
            prev[i] = g;
        }
        delta = std::move(prev);
    }
}

void Mlp::sgd_step(const Gradients& g, double lr) {
    if (g.dw.size() != layers_.size()) {
        throw ShapeError("gradient does not match the network");
    }
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        Layer& l = layers_[k];
        if (g.dw[k].size() != l.w.size() || g.db[k].size() != l.b.size()) {
            throw ShapeError("gradient shape mismatch at layer " + std::to_string(k));
        }
        for (std::size_t i = 0; i < l.w.size(); ++i) {
            l.w[i] -= lr * g.dw[k][i];
        }
        for (std::size_t i = 0; i < l.b.size(); ++i) {
            l.b[i] -= lr * g.db[k][i];
        }
    }
}

bool Mlp::same_shape(const Mlp& other) const {
    return widths() == other.widths();
}

void Mlp::copy_into(Mlp& target) const {
    if (!same_shape(target)) {
        throw ShapeError("copy_into between networks of different shapes");
    }
    target.layers_ = layers_;
    target.dropout_ = dropout_;
}

bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size() || a.dropout_ != b.dropout_) {
        return false;
    }
    for (std::size_t k = 0; k < a.layers_.size(); ++k) {
        const Layer& x = a.layers_[k];
        const Layer& y = b.layers_[k];
        if (x.in != y.in || x.out != y.out || x.w != y.w || x.b != y.b) {
            return false;
        }
    }
    return true;
}

std::vector<double> mse_gradient(std::span<const double> output, std::span<const double> target) {
    if (output.size() != target.size()) {
        throw ShapeError("output and target widths differ");
    }
    std::vector<double> g(output.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = 2.0 * (output[i] - target[i]);
    }
    return g;
}

// Checkpoint layout, little-endian throughout:
//   "DQNW" | u8 version | u32 layer count | per layer: u32 in, u32 out
//   | per layer: f64 weights (row-major), f64 biases
//   | u32 text length | text (activation and dropout config)
namespace {

constexpr char kMagic[4] = {'D', 'Q', 'N', 'W'};
constexpr std::uint8_t kVersion = 1;

template <class T>
void put_le(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(buf, buf + sizeof(T));
    }
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
        throw CheckpointError("truncated checkpoint");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(buf, buf + sizeof(T));
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

std::string config_text(const Mlp& net) {
    std::ostringstream s;
    s.precision(17);
    s << "activation=";
    for (std::size_t k = 0; k < net.layers().size(); ++k) {
        s << (k ? "," : "") << (k + 1 < net.layers().size() ? "relu" : "identity");
    }
    s << "\ndropout=";
    for (std::size_t k = 0; k < net.dropout().size(); ++k) {
        s << (k ? "," : "") << net.dropout()[k];
    }
    s << "\n";
    return s.str();
}

std::vector<double> parse_dropout(const std::string& text, std::size_t hidden) {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.rfind("dropout=", 0) != 0) {
            continue;
        }
        std::vector<double> out;
        std::istringstream items(line.substr(8));
        std::string item;
        while (std::getline(items, item, ',')) {
            try {
                out.push_back(std::stod(item));
            } catch (const std::exception&) {
                throw CheckpointError("bad dropout entry '" + item + "'");
            }
        }
        return out;
    }
    return std::vector<double>(hidden, 0.0);
}

} // namespace

void save_checkpoint(const Mlp& net, std::ostream& out) {
    out.write(kMagic, 4);
    put_le<std::uint8_t>(out, kVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
    for (const Layer& l : net.layers()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.in));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(l.out));
    }
    for (const Layer& l : net.layers()) {
        for (double w : l.w) {
            put_le<double>(out, w);
        }
        for (double b : l.b) {
            put_le<double>(out, b);
        }
    }
    const std::string text = config_text(net);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw CheckpointError("failed to write checkpoint");
    }
}

Mlp load_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("not a DQNW checkpoint");
    }
    const auto version = get_le<std::uint8_t>(in);
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = get_le<std::uint32_t>(in);
    if (count == 0 || count > 64) {
        throw CheckpointError("implausible layer count " + std::to_string(count));
    }
    std::vector<Layer> layers(count);
    for (Layer& l : layers) {
        l.in = get_le<std::uint32_t>(in);
        l.out = get_le<std::uint32_t>(in);
        if (l.in == 0 || l.out == 0 || l.in > (1u << 20) || l.out > (1u << 20)) {
            throw CheckpointError("implausible layer dimensions");
        }
    }
    for (Layer& l : layers) {
        l.w.resize(l.in * l.out);
        for (double& w : l.w) {
            w = get_le<double>(in);
        }
        l.b.resize(l.out);
        for (double& b : l.b) {
            b = get_le<double>(in);
        }
    }
    const auto len = get_le<std::uint32_t>(in);
    std::string text(len, '\0');
    if (len > 0 && !in.read(text.data(), len)) {
        throw CheckpointError("truncated checkpoint config block");
    }
    try {
        return Mlp(std::move(layers), parse_dropout(text, count - 1));
    } catch (const ShapeError& e) {
        throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
    }
}

void save_checkpoint(const Mlp& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw CheckpointError("cannot open " + path.string() + " for writing");
    }
    save_checkpoint(net, out);
}

Mlp load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open " + path.string());
    }
    return load_checkpoint(in);
}

} // namespace tsc::nn
