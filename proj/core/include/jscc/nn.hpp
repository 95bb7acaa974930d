#pragma once

#include "jscc/autograd.hpp"

#include <random>
#include <string>
#include <vector>

namespace jscc::nn {

using Rng = std::mt19937_64;

struct NamedParameter {
    std::string name;
    ag::Var var;
};

using ParameterList = std::vector<NamedParameter>;

/// Truncated normal (+-2 std) initializer used for attention and MLP weights.
std::vector<float> trunc_normal(std::size_t n, float std, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features, Rng& rng, bool bias = true, float init_std = 0.02f);

    ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight_, bias_); }

    int in_features() const { return in_; }
    int out_features() const { return out_; }
    void collect(const std::string& prefix, ParameterList& out) const;
    /// Zero weight and bias, turning the layer into a constant-zero map.
    void zero();

    ag::Var& weight() { return weight_; }
    ag::Var& bias() { return bias_; }
    const ag::Var& weight() const { return weight_; }
    const ag::Var& bias() const { return bias_; }

private:
    int in_ = 0;
    int out_ = 0;
    ag::Var weight_;  // {in, out}
    ag::Var bias_;
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int features);

    ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma_, beta_); }
    void collect(const std::string& prefix, ParameterList& out) const;

private:
    ag::Var gamma_;
    ag::Var beta_;
};

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::vector<ag::Var> params, AdamOptions options);

    void zero_grad();
    void step();

    double lr() const { return options_.lr; }
    void set_lr(double lr) { options_.lr = lr; }
    long steps() const { return t_; }

private:
    std::vector<ag::Var> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamOptions options_;
    long t_ = 0;
};

}  // namespace jscc::nn
