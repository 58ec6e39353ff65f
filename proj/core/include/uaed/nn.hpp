#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/uniform_real_distribution.hpp>

#include "uaed/error.hpp"
#include "uaed/random.hpp"

/// Fully connected predictor with a single logit output, and Adam.
namespace uaed::nn {

enum class Activation { relu, tanh };

Activation parse_activation(const std::string& name);
const char* to_string(Activation act);

/// Parameters live in one flat vector; each layer is a row-major
/// (out x in) weight block followed by its bias.
template <class Scalar>
class Mlp {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    /// Layer inputs recorded during the forward pass. inputs[0] is the batch;
    /// inputs.back() holds the penultimate features.
    struct Trace {
        std::vector<Matrix> inputs;
        Vector logits;

        const Matrix& features() const { return inputs.back(); }
    };

    Mlp() = default;

    /// `dims` lists the layer widths from input to output; the last entry
    /// must be 1. Weights use Glorot-uniform initialisation, biases start at 0.
    Mlp(std::vector<int> dims, Activation act, Rng& rng) : dims_(std::move(dims)), act_(act) {
        if (dims_.size() < 2 || dims_.back() != 1) {
            throw ConfigError("network needs at least an input width and a single output");
        }
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            if (dims_[l] < 1) {
                throw ConfigError("layer widths must be positive");
            }
            n += static_cast<std::size_t>(dims_[l + 1]) * static_cast<std::size_t>(dims_[l] + 1);
        }
        params_ = Vector::Zero(static_cast<Eigen::Index>(n));
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            const int in = dims_[l];
            const int out = dims_[l + 1];
            const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
            boost::random::uniform_real_distribution<double> u(-bound, bound);
            for (int i = 0; i < in * out; ++i) {
                params_[static_cast<Eigen::Index>(off + static_cast<std::size_t>(i))] = static_cast<Scalar>(u(rng));
            }
            off += static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
        }
    }

    const std::vector<int>& dims() const { return dims_; }
    Activation activation() const { return act_; }
    Vector& parameters() { return params_; }
    const Vector& parameters() const { return params_; }
    std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
    int input_width() const { return dims_.front(); }
    int feature_width() const { return dims_[dims_.size() - 2]; }

    Trace forward(const Matrix& x) const {
        if (x.cols() != dims_.front()) {
            throw ConfigError("input width " + std::to_string(x.cols()) + " does not match network input " +
                              std::to_string(dims_.front()));
        }
        Trace t;
        t.inputs.reserve(dims_.size() - 1);
        t.inputs.push_back(x);
        std::size_t off = 0;
        const std::size_t layers = dims_.size() - 1;
        for (std::size_t l = 0; l < layers; ++l) {
            const auto w = weight(off, l);
            const auto b = bias(off, l);
            Matrix z = t.inputs.back() * w.transpose();
            z.rowwise() += b.transpose();
            off += block(l);
            if (l + 1 == layers) {
                t.logits = z.col(0);
            } else {
                activate(z);
                t.inputs.push_back(std::move(z));
            }
        }
        return t;
    }

    Vector logits(const Matrix& x) const { return forward(x).logits; }

    /// Accumulates dL/dparameters into `grad` given dL/dlogits and,
    /// optionally, dL/dfeatures (same shape as trace.features()).
    void backward(const Trace& t, const Vector& d_logits, const Matrix* d_features, Vector& grad) const {
        if (grad.size() != params_.size()) {
            grad = Vector::Zero(params_.size());
        }
        const std::size_t layers = dims_.size() - 1;
        std::vector<std::size_t> offsets(layers);
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            offsets[l] = off;
            off += block(l);
        }
        Matrix d_out = d_logits;
        for (std::size_t li = layers; li-- > 0;) {
            const Matrix& a = t.inputs[li];
            const std::size_t o = offsets[li];
            const Eigen::Index in = dims_[li];
            const Eigen::Index out = dims_[li + 1];
            Eigen::Map<Matrix> gw(grad.data() + o, out, in);
            Eigen::Map<Vector> gb(grad.data() + o + static_cast<std::size_t>(out * in), out);
            gw.noalias() += d_out.transpose() * a;
            gb += d_out.colwise().sum().transpose();
            if (li == 0) {
                break;
            }
            Matrix d_a = d_out * weight(o, li);
            if (li + 1 == layers && d_features != nullptr) {
                d_a += *d_features;
            }
            activate_backward(a, d_a);
            d_out = std::move(d_a);
        }
    }

private:
    std::size_t block(std::size_t l) const {
        return static_cast<std::size_t>(dims_[l + 1]) * static_cast<std::size_t>(dims_[l] + 1);
    }

    Eigen::Map<const Matrix> weight(std::size_t off, std::size_t l) const {
        return {params_.data() + off, dims_[l + 1], dims_[l]};
    }

    Eigen::Map<const Vector> bias(std::size_t off, std::size_t l) const {
        return {params_.data() + off + static_cast<std::size_t>(dims_[l + 1] * dims_[l]), dims_[l + 1]};
    }

    void activate(Matrix& z) const {
        if (act_ == Activation::relu) {
            z = z.cwiseMax(Scalar(0));
        } else {
            z = z.array().tanh().matrix();
        }
    }

    // `a` is the post-activation output of the layer.
    void activate_backward(const Matrix& a, Matrix& d) const {
        if (act_ == Activation::relu) {
            d = (a.array() > Scalar(0)).select(d, Scalar(0));
        } else {
            d.array() *= Scalar(1) - a.array().square();
        }
    }

    std::vector<int> dims_;
    Activation act_ = Activation::relu;
    Vector params_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// L2 penalty added to the gradient before the moment updates.
    double weight_decay = 0.0;
};

template <class Scalar>
class Adam {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Adam() = default;
    Adam(AdamConfig config, std::size_t n)
        : config_(config), m_(Vector::Zero(static_cast<Eigen::Index>(n))),
          v_(Vector::Zero(static_cast<Eigen::Index>(n))) {}

    /// One update with learning rate `lr` (pass config().lr for a constant schedule).
    void step(Vector& params, const Vector& grad, double lr) {
        if (grad.size() != params.size() || params.size() != m_.size()) {
            throw ConfigError("optimizer state does not match the parameter vector");
        }
        ++t_;
        const auto b1 = static_cast<Scalar>(config_.beta1);
        const auto b2 = static_cast<Scalar>(config_.beta2);
        const auto wd = static_cast<Scalar>(config_.weight_decay);
        const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta1, static_cast<double>(t_)));
        const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta2, static_cast<double>(t_)));
        const auto step = static_cast<Scalar>(lr);
        const auto eps = static_cast<Scalar>(config_.eps);
        for (Eigen::Index i = 0; i < params.size(); ++i) {
            const Scalar g = grad[i] + wd * params[i];
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g * g;
            params[i] -= step * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
        }
    }

    const AdamConfig& config() const { return config_; }
    const Vector& first_moment() const { return m_; }
    const Vector& second_moment() const { return v_; }
    long long steps() const { return t_; }

    void restore(Vector m, Vector v, long long t) {
        if (m.size() != m_.size() || v.size() != v_.size()) {
            throw FormatError("optimizer moment size mismatch");
        }
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

private:
    AdamConfig config_;
    Vector m_;
    Vector v_;
    long long t_ = 0;
};

} // namespace uaed::nn
