#pragma once

#include <map>
#include <string>

#include "unihand/rng.hpp"
#include "unihand/tensor.hpp"

namespace unihand {

// Owns every trainable tensor of a model, keyed by a dotted path name.
// Initialization is a pure function of (seed, name, shape), so construction
// order never affects values and appending new submodules (fine-tuning)
// leaves existing parameters untouched.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    // Weight matrix [in, out], init uniform(-1/sqrt(in), 1/sqrt(in)).
    Tensor weight(const std::string& name, int in, int out);
    // Bias / zero-initialized vector.
    Tensor bias(const std::string& name, int n);
    Tensor filled(const std::string& name, Shape shape, double v);
    // Arbitrary-shape parameter with the fan-in init rule.
    Tensor uniform_fan_in(const std::string& name, Shape shape, int fan_in);
    // Parameter with caller-provided initial values (structured inits).
    Tensor with_values(const std::string& name, Shape shape, std::vector<double> data);

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    Tensor get(const std::string& name) const;
    const std::map<std::string, Tensor>& all() const { return params_; }
    uint64_t seed() const { return seed_; }

    void load_values(const std::string& name, const Shape& shape,
                     const std::vector<double>& data);

private:
    Tensor insert(const std::string& name, Shape shape, std::vector<double> data);

    uint64_t seed_;
    std::map<std::string, Tensor> params_;
};

struct Linear {
    Tensor W, b;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& prefix, int in, int out);
    Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, W), b); }
};

// Two-layer MLP with SiLU between. All feature encoders and decoders use
// this shape.
struct Mlp {
    Linear l1, l2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out);
    Tensor forward(const Tensor& x) const { return l2.forward(silu(l1.forward(x))); }
};

struct LayerNorm {
    Tensor gain, bias;
    double eps = 1e-5;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& prefix, int n);
    Tensor forward(const Tensor& x) const {
        return add_rowvec(mul_rowvec(layernorm_rows(x, eps), gain), bias);
    }
};

// Sinusoidal code over positions [0, n). Row t: interleaved
// sin(t / 10000^(2i/f)), cos(t / 10000^(2i/f)). Shared by the temporal
// position code and the diffusion step embedding.
Tensor sinusoidal_code(int n, int f);
Tensor sinusoidal_row(int pos, int f); // single row [f]

} // namespace unihand
