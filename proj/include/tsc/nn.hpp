#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "tsc/rng.hpp"

namespace tsc::nn {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense layer, weights stored out x in row-major.
struct Layer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;
    std::vector<double> b;

    double& weight(std::size_t o, std::size_t i) { return w[o * in + i]; }
    double weight(std::size_t o, std::size_t i) const { return w[o * in + i]; }
};

/// Activations recorded by a training forward pass.
struct ForwardCache {
    std::vector<std::vector<double>> inputs; // input to each layer
    std::vector<std::vector<double>> pre;    // pre-activation of each layer
    std::vector<std::vector<double>> masks;  // dropout scale per hidden output; empty when no dropout
    bool valid = false;
};

/// Parameter-shaped buffer for accumulated gradients.
struct Gradients {
    std::vector<std::vector<double>> dw;
    std::vector<std::vector<double>> db;

    void zero();
    void add(const Gradients& other, double scale = 1.0);
    double max_abs() const;
};

/// Fully connected ReLU network with an identity output layer.
///
/// `dropout[k]` is the drop probability applied to the output of hidden layer
/// k in training mode; survivors are scaled by 1/(1-p) so evaluation needs no
/// rescaling.
class Mlp {
public:
    Mlp() = default;
    /// Uniform init in +-sqrt(6/(fan_in+fan_out)), zero biases.
    Mlp(const std::vector<std::size_t>& widths, std::vector<double> dropout, Rng& init_rng);
    Mlp(std::vector<Layer> layers, std::vector<double> dropout);

    std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().in; }
    std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().out; }
    std::size_t parameter_count() const;
    std::vector<std::size_t> widths() const;

    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<double>& dropout() const { return dropout_; }

    /// Deterministic evaluation pass.
    std::vector<double> forward(std::span<const double> x) const;
    /// Training pass with dropout masks drawn from `rng`.
    std::vector<double> forward_train(std::span<const double> x, Rng& rng, ForwardCache& cache) const;
    /// Evaluation pass that still records a cache, for gradient checks.
    std::vector<double> forward_cached(std::span<const double> x, ForwardCache& cache) const;

    /// Adds dL/dtheta to `acc` given dL/dout for the cached pass.
    void backward(const ForwardCache& cache, std::span<const double> dout, Gradients& acc) const;

    Gradients make_gradients() const;
    void sgd_step(const Gradients& g, double lr);

    /// Copies parameters into `target`; shapes must match.
    void copy_into(Mlp& target) const;
    bool same_shape(const Mlp& other) const;

    friend bool operator==(const Mlp& a, const Mlp& b);

private:
    std::vector<double> run(std::span<const double> x, Rng* rng, ForwardCache* cache) const;

    std::vector<Layer> layers_;
    std::vector<double> dropout_; // one entry per hidden layer
};

/// dL/dy for L = sum (y - t)^2.
std::vector<double> mse_gradient(std::span<const double> output, std::span<const double> target);

void save_checkpoint(const Mlp& net, std::ostream& out);
Mlp load_checkpoint(std::istream& in);
void save_checkpoint(const Mlp& net, const std::filesystem::path& path);
Mlp load_checkpoint(const std::filesystem::path& path);

} // namespace tsc::nn
