#include "jscc/nn.hpp"

#include <cmath>

namespace jscc::nn {

std::vector<float> trunc_normal(std::size_t n, float std, Rng& rng) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> out(n);
    for (float& v : out) {
        float z = dist(rng);
        while (std::abs(z) > 2.0f) z = dist(rng);
        v = z * std;
    }
    return out;
}

Linear::Linear(int in_features, int out_features, Rng& rng, bool bias, float init_std)
    : in_(in_features), out_(out_features) {
    weight_ = ag::parameter({in_, out_}, trunc_normal(static_cast<std::size_t>(in_) * out_, init_std, rng));
    if (bias) bias_ = ag::parameter({out_}, std::vector<float>(static_cast<std::size_t>(out_), 0.0f));
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight_});
    if (bias_) out.push_back({prefix + ".bias", bias_});
}

void Linear::zero() {
    for (float& v : weight_.mutable_value()) v = 0.0f;
    if (bias_) {
        for (float& v : bias_.mutable_value()) v = 0.0f;
    }
}

LayerNorm::LayerNorm(int features)
    : gamma_(ag::parameter({features}, std::vector<float>(static_cast<std::size_t>(features), 1.0f))),
      beta_(ag::parameter({features}, std::vector<float>(static_cast<std::size_t>(features), 0.0f))) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".gamma", gamma_});
    out.push_back({prefix + ".beta", beta_});
}

Adam::Adam(std::vector<ag::Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0f);
        v_.emplace_back(p.size(), 0.0f);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const float step = static_cast<float>(options_.lr / c1);
    const float inv_c2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(options_.eps);
    const float fb1 = static_cast<float>(b1);
    const float fb2 = static_cast<float>(b2);

    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto g = params_[k].grad();
        if (g.empty()) continue;
        auto w = params_[k].mutable_value();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = fb1 * m[i] + (1.0f - fb1) * g[i];
            v[i] = fb2 * v[i] + (1.0f - fb2) * g[i] * g[i];
            w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
}

}  // namespace jscc::nn
