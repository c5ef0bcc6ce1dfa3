#include "unihand/nn.hpp"

#include <cmath>

namespace unihand {

Tensor ParamStore::insert(const std::string& name, Shape shape, std::vector<double> data) {
    if (params_.count(name))
        throw ValidationError("parameter registered twice: " + name);
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), true);
    t.node()->name = name;
    params_.emplace(name, t);
    return t;
}

Tensor ParamStore::uniform_fan_in(const std::string& name, Shape shape, int fan_in) {
    double bound = 1.0 / std::sqrt(double(fan_in));
    Rng rng = Rng::from(seed_, "param:" + name);
    std::vector<double> data(size_t(shape_numel(shape)));
    for (auto& x : data) x = rng.uniform(-bound, bound);
    return insert(name, std::move(shape), std::move(data));
}

Tensor ParamStore::weight(const std::string& name, int in, int out) {
    return uniform_fan_in(name, {in, out}, in);
}

Tensor ParamStore::with_values(const std::string& name, Shape shape, std::vector<double> data) {
    if (int64_t(data.size()) != shape_numel(shape))
        throw DimensionError("param " + name + ": value count does not match shape");
    return insert(name, std::move(shape), std::move(data));
}

Tensor ParamStore::bias(const std::string& name, int n) {
    return insert(name, {n}, std::vector<double>(size_t(n), 0.0));
}

Tensor ParamStore::filled(const std::string& name, Shape shape, double v) {
    return insert(name, shape, std::vector<double>(size_t(shape_numel(shape)), v));
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::load_values(const std::string& name, const Shape& shape,
                             const std::vector<double>& data) {
    auto it = params_.find(name);
    if (it == params_.end()) throw CheckpointError("checkpoint has unknown parameter: " + name);
    if (it->second.shape() != shape)
        throw CheckpointError("shape mismatch for " + name + ": model " +
                              shape_str(it->second.shape()) + " vs checkpoint " +
                              shape_str(shape));
    it->second.leaf_values() = data;
}

Linear::Linear(ParamStore& ps, const std::string& prefix, int in, int out)
    : W(ps.weight(prefix + ".W", in, out)), b(ps.bias(prefix + ".b", out)) {}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out)
    : l1(ps, prefix + ".l1", in, hidden), l2(ps, prefix + ".l2", hidden, out) {}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& prefix, int n)
    : gain(ps.filled(prefix + ".gain", {n}, 1.0)), bias(ps.bias(prefix + ".bias", n)) {}

Tensor sinusoidal_row(int pos, int f) {
    std::vector<double> row(static_cast<size_t>(f), 0.0);
    for (int i = 0; i < f; i += 2) {
        double freq = std::pow(10000.0, -double(i) / double(f));
        row[size_t(i)] = std::sin(double(pos) * freq);
        if (i + 1 < f) row[size_t(i) + 1] = std::cos(double(pos) * freq);
    }
    return Tensor::from_data({f}, std::move(row));
}

Tensor sinusoidal_code(int n, int f) {
    std::vector<double> v(static_cast<size_t>(n) * static_cast<size_t>(f), 0.0);
    for (int t = 0; t < n; ++t)
        for (int i = 0; i < f; i += 2) {
            double freq = std::pow(10000.0, -double(i) / double(f));
            v[size_t(t) * f + i] = std::sin(double(t) * freq);
            if (i + 1 < f) v[size_t(t) * f + i + 1] = std::cos(double(t) * freq);
        }
    return Tensor::from_data({n, f}, std::move(v));
}

} // namespace unihand
