#include "sccf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sccf {

static size_t shape_numel(const std::vector<size_t>& s) {
    if (s.empty()) return 0;
    size_t n = 1;
    for (size_t d : s) {
        if (d == 0) throw ConfigError("tensor shape has a zero dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    data.assign(shape_numel(shape), 0.0f);
}

Tensor::Tensor(std::vector<size_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) throw ConfigError("tensor shape/data length mismatch");
}

Tensor Tensor::full(std::vector<size_t> s, float value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

void Tensor::check_finite(const std::string& what) const {
    for (float v : data) {
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + what);
    }
}

// ---------------------------------------------------------------------------
// rng
// ---------------------------------------------------------------------------

uint64_t SeededRng::next_u64() {
    // splitmix64
    uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

uint64_t SeededRng::uniform_below(uint64_t n) {
    if (n == 0) throw ConfigError("uniform_below(0)");
    const uint64_t limit = (std::numeric_limits<uint64_t>::max() / n) * n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

// ---------------------------------------------------------------------------
// kernels
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const size_t n = a.shape[0], m = a.shape[1], p = b.shape[1];
    if (b.shape[0] != m) throw std::runtime_error("matmul: inner dimension mismatch");
    Tensor c({n, p});
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a.row_ptr(i);
        float* crow = c.row_ptr(i);
        for (size_t k = 0; k < m; ++k) {
            const float aik = arow[k];
            if (aik == 0.0f) continue;
            const float* brow = b.row_ptr(k);
            for (size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const size_t n = a.shape[0], m = a.shape[1], p = b.shape[1];
    if (b.shape[0] != n) throw std::runtime_error("matmul_tn: outer dimension mismatch");
    Tensor c({m, p});
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a.row_ptr(i);
        const float* brow = b.row_ptr(i);
        for (size_t k = 0; k < m; ++k) {
            const float aik = arow[k];
            if (aik == 0.0f) continue;
            float* crow = c.row_ptr(k);
            for (size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const size_t n = a.shape[0], p = a.shape[1], m = b.shape[0];
    if (b.shape[1] != p) throw std::runtime_error("matmul_nt: inner dimension mismatch");
    Tensor c({n, m});
    for (size_t i = 0; i < n; ++i) {
        const float* arow = a.row_ptr(i);
        float* crow = c.row_ptr(i);
        for (size_t j = 0; j < m; ++j) crow[j] = static_cast<float>(dot(arow, b.row_ptr(j), p));
    }
    return c;
}

double dot(const float* a, const float* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

void axpy(float alpha, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double l2_norm(const float* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * x[i];
    return std::sqrt(acc);
}

Tensor softmax_rows(const Tensor& t) {
    const size_t n = t.shape[0], m = t.shape[1];
    Tensor out({n, m});
    for (size_t i = 0; i < n; ++i) {
        const float* row = t.row_ptr(i);
        float* orow = out.row_ptr(i);
        float mx = -std::numeric_limits<float>::infinity();
        for (size_t j = 0; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (size_t j = 0; j < m; ++j) {
            // exp(-inf - mx) is NaN when the whole row is -inf; no caller
            // produces such a row (causal masks keep the diagonal).
            const double e = std::exp(static_cast<double>(row[j]) - mx);
            orow[j] = static_cast<float>(e);
            sum += e;
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (size_t j = 0; j < m; ++j) orow[j] *= inv;
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (eps <= 0.0f) throw ConfigError("layer_norm eps must be > 0");
    const size_t d = x.shape.back();
    if (gain.numel() != d || bias.numel() != d) throw std::runtime_error("layer_norm: gain/bias size mismatch");
    const size_t rows = x.numel() / d;
    Tensor out(x.shape);
    for (size_t i = 0; i < rows; ++i) {
        const float* row = x.data.data() + i * d;
        float* orow = out.data.data() + i * d;
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_sd = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < d; ++j) {
            const double norm = (row[j] - mean) * inv_sd;
            orow[j] = static_cast<float>(norm * gain.data[j] + bias.data[j]);
        }
    }
    return out;
}

Tensor layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& dy,
                           Tensor& dgain, Tensor& dbias, float eps) {
    const size_t d = x.shape.back();
    const size_t rows = x.numel() / d;
    Tensor dx(x.shape);
    for (size_t i = 0; i < rows; ++i) {
        const float* row = x.data.data() + i * d;
        const float* dyrow = dy.data.data() + i * d;
        float* dxrow = dx.data.data() + i * d;
        double mean = 0.0;
        for (size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv_sd = 1.0 / std::sqrt(var + eps);

        double sum_g = 0.0, sum_gx = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv_sd;
            const double g = static_cast<double>(dyrow[j]) * gain.data[j];
            sum_g += g;
            sum_gx += g * xhat;
            dgain.data[j] += static_cast<float>(dyrow[j] * xhat);
            dbias.data[j] += dyrow[j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv_sd;
            const double g = static_cast<double>(dyrow[j]) * gain.data[j];
            dxrow[j] = static_cast<float>(inv_sd * (g - sum_g * inv_d - xhat * sum_gx * inv_d));
        }
    }
    return dx;
}

Tensor dropout_mask(const std::vector<size_t>& shape, float rate, SeededRng& rng, bool training) {
    if (rate < 0.0f || rate >= 1.0f) throw ConfigError("dropout rate must be in [0, 1)");
    Tensor mask = Tensor::full(shape, 1.0f);
    if (!training || rate == 0.0f) return mask;
    const float keep_scale = 1.0f / (1.0f - rate);
    for (float& v : mask.data) v = (rng.uniform01() < rate) ? 0.0f : keep_scale;
    return mask;
}

Tensor truncated_normal_init(std::vector<size_t> shape, float low, float high, SeededRng& rng) {
    if (!(low < high)) throw ConfigError("truncated_normal_init: low must be < high");
    Tensor t(std::move(shape));
    const double sigma = (static_cast<double>(high) - low) / 2.0;
    for (float& v : t.data) {
        double draw;
        do {
            draw = rng.normal() * sigma;
        } while (draw < low || draw > high);
        v = static_cast<float>(draw);
    }
    return t;
}

double log_sigmoid(double x) {
    // log(1/(1+e^-x)) = -log1p(e^-x) for x>=0; x - log1p(e^x) otherwise
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double log_one_minus_sigmoid(double x) { return log_sigmoid(-x); }

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
    if (entries_.count(name)) throw ConfigError("parameter already registered: " + name);
    m_[name] = Tensor(t.shape);
    v_[name] = Tensor(t.shape);
    auto [it, ok] = entries_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

void ParameterStore::adam_step(const GradMap& grads, const AdamConfig& cfg) {
    adam_step(grads, SparseGradMap{}, cfg);
}

void ParameterStore::adam_step(const GradMap& dense, const SparseGradMap& sparse, const AdamConfig& cfg) {
    step_ += 1;
    double lr = cfg.base_lr;
    if (cfg.decay.linear) {
        const double frac = cfg.decay.total_steps == 0
                                ? 0.0
                                : 1.0 - static_cast<double>(step_) / static_cast<double>(cfg.decay.total_steps);
        lr *= std::max(0.0, frac);
    }
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step_));

    auto update_span = [&](float* w, float* m, float* v, const float* g, size_t count) {
        for (size_t i = 0; i < count; ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            w[i] = static_cast<float>(w[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    };

    for (const auto& [name, g] : dense) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::runtime_error("adam_step: gradient for unknown parameter " + name);
        Tensor& w = it->second;
        if (!w.same_shape(g)) {
            // shape mismatch between grad and parameter is a programming error
            throw std::logic_error("adam_step: shape mismatch for " + name);
        }
        update_span(w.data.data(), m_[name].data.data(), v_[name].data.data(), g.data.data(), w.numel());
    }

    for (const auto& [name, srg] : sparse) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::runtime_error("adam_step: gradient for unknown parameter " + name);
        Tensor& w = it->second;
        if (w.rank() != 2) throw std::logic_error("adam_step: sparse grads need a 2-D parameter: " + name);
        const size_t width = w.shape[1];
        if (srg.values.size() != srg.rows.size() * width)
            throw std::logic_error("adam_step: sparse grad width mismatch for " + name);
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        for (size_t r = 0; r < srg.rows.size(); ++r) {
            const size_t row = srg.rows[r];
            if (row >= w.shape[0]) throw std::logic_error("adam_step: sparse row out of range for " + name);
            update_span(w.row_ptr(row), m.row_ptr(row), v.row_ptr(row), srg.values.data() + r * width, width);
        }
    }
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

GradCheckReport finite_diff_check(const std::function<double()>& loss_fn, ParameterStore& store,
                                  const GradMap& analytic, double h, double tol, SeededRng& rng,
                                  size_t min_coords) {
    // Enumerate all (name, index) coordinates with an analytic gradient.
    std::vector<std::pair<const std::string*, size_t>> coords;
    for (const auto& [name, g] : analytic) {
        for (size_t i = 0; i < g.numel(); ++i) coords.emplace_back(&name, i);
    }
    GradCheckReport report;
    if (coords.empty()) return report;

    std::vector<size_t> order(coords.size());
    std::iota(order.begin(), order.end(), size_t{0});
    rng.shuffle(order);
    const size_t n_check = std::min(coords.size(), std::max(min_coords, size_t{1}));

    std::vector<std::string> failed;
    double max_rel = 0.0;
    for (size_t k = 0; k < n_check; ++k) {
        const auto& [name_ptr, idx] = coords[order[k]];
        Tensor& param = store.get(*name_ptr);
        const float saved = param.data[idx];

        // Divide by the realized step: float storage quantizes saved +/- h.
        const float up_val = static_cast<float>(saved + h);
        const float down_val = static_cast<float>(saved - h);
        param.data[idx] = up_val;
        const double up = loss_fn();
        param.data[idx] = down_val;
        const double down = loss_fn();
        param.data[idx] = saved;

        const double fd = (up - down) / (static_cast<double>(up_val) - static_cast<double>(down_val));
        const double g = analytic.at(*name_ptr).data[idx];
        const double err = std::abs(fd - g) / (1.0 + std::abs(g));
        max_rel = std::max(max_rel, err);
        if (err > tol) {
            if (std::find(failed.begin(), failed.end(), *name_ptr) == failed.end()) failed.push_back(*name_ptr);
        }
    }
    report.pass = failed.empty();
    report.max_rel_err = max_rel;
    report.n_checked = n_check;
    report.failed_params = std::move(failed);
    return report;
}

}  // namespace sccf
