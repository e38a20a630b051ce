#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace sccf {

// Dense row-major float32 tensor. Reductions (sums, means, variances) accumulate
// in double; storage stays float32.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s);
    Tensor(std::vector<size_t> s, std::vector<float> d);

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<size_t> s, float value);

    size_t numel() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }

    float& at(size_t i) { return data[i]; }
    float at(size_t i) const { return data[i]; }
    float& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    float at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

    float* row_ptr(size_t i) { return data.data() + i * shape[1]; }
    const float* row_ptr(size_t i) const { return data.data() + i * shape[1]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    // Throws if any element is NaN/Inf. Operations call this before returning
    // results across a module boundary.
    void check_finite(const std::string& what) const;
};

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Counter-based RNG (splitmix64): identical seed gives an identical draw
// sequence on every platform, independent of libstdc++ internals.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : seed_(seed), counter_(0) {}

    uint64_t next_u64();
    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01();
    // Uniform integer in [0, n), unbiased via rejection. n must be > 0.
    uint64_t uniform_below(uint64_t n);
    // Standard normal via Box-Muller (caches the spare draw).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed() const { return seed_; }

  private:
    uint64_t seed_;
    uint64_t counter_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// element/matrix kernels
// ---------------------------------------------------------------------------

// C[n,p] = A[n,m] * B[m,p]
Tensor matmul(const Tensor& a, const Tensor& b);
// C[m,p] = A[n,m]^T * B[n,p]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// C[n,m] = A[n,p] * B[m,p]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

double dot(const float* a, const float* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);  // y += alpha*x
double l2_norm(const float* x, size_t n);

// Row-wise softmax with per-row max subtraction. Entries equal to -inf are
// legal and produce exact zeros.
Tensor softmax_rows(const Tensor& t);

// Per-last-axis layer normalization: mean 0 / variance 1 (population), then
// gain/bias affine. Default eps 1e-8.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-8f);

// Backward of layer_norm. dy is the upstream gradient; dgain/dbias are
// accumulated into (caller zeroes or chains them), returns dx.
Tensor layer_norm_backward(const Tensor& x, const Tensor& gain, const Tensor& dy,
                           Tensor& dgain, Tensor& dbias, float eps = 1e-8f);

// Inverted-dropout mask: training draws keep cells of value 1/(1-rate),
// inference returns all ones. 0 <= rate < 1.
Tensor dropout_mask(const std::vector<size_t>& shape, float rate, SeededRng& rng, bool training);

// Elements drawn from N(0, ((high-low)/2)^2), redrawn until within [low, high].
Tensor truncated_normal_init(std::vector<size_t> shape, float low, float high, SeededRng& rng);

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// log(sigmoid(x)) and log(1 - sigmoid(x)) without overflow.
double log_sigmoid(double x);
double log_one_minus_sigmoid(double x);

// ---------------------------------------------------------------------------
// parameters + Adam
// ---------------------------------------------------------------------------

struct DecaySchedule {
    bool linear = false;
    uint64_t total_steps = 0;
};

struct AdamConfig {
    float base_lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    DecaySchedule decay;
};

using GradMap = std::map<std::string, Tensor>;

// Row-sparse gradient for a 2-D embedding table: values holds rows.size()
// packed rows. Rows must be unique and sorted.
struct SparseRowGrads {
    std::vector<uint32_t> rows;
    std::vector<float> values;
};

using SparseGradMap = std::map<std::string, SparseRowGrads>;

// Named tensors plus Adam first/second-moment state. Single writer; iteration
// order is the sorted name order, so updates are bit-reproducible.
class ParameterStore {
  public:
    Tensor& add(const std::string& name, Tensor t);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    std::vector<std::string> names() const;

    uint64_t step() const { return step_; }
    void set_step(uint64_t s) { step_ = s; }

    // Standard Adam with bias correction; effective lr scales by
    // max(0, 1 - step/total_steps) when linear decay is enabled. Increments
    // step once per call. Grad keys must be a subset of parameter names.
    void adam_step(const GradMap& grads, const AdamConfig& cfg);

    // Adam step over dense grads plus row-sparse embedding grads. Sparse rows
    // get the lazy treatment: untouched rows keep their stale moments, the
    // usual behavior for embedding tables.
    void adam_step(const GradMap& dense, const SparseGradMap& sparse, const AdamConfig& cfg);

    std::map<std::string, Tensor>& entries() { return entries_; }
    const std::map<std::string, Tensor>& entries() const { return entries_; }
    std::map<std::string, Tensor>& adam_m() { return m_; }
    std::map<std::string, Tensor>& adam_v() { return v_; }
    const std::map<std::string, Tensor>& adam_m() const { return m_; }
    const std::map<std::string, Tensor>& adam_v() const { return v_; }

  private:
    std::map<std::string, Tensor> entries_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// finite-difference gradient oracle
// ---------------------------------------------------------------------------

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    size_t n_checked = 0;
    std::vector<std::string> failed_params;
};

// Central-difference check of analytic gradients on a random subset of at
// least min_coords coordinates: |(L(t+h)-L(t-h))/2h - g| <= tol*(1+|g|).
// loss_fn must be deterministic (dropout off, fixed negatives) and read the
// parameters from `store`.
GradCheckReport finite_diff_check(const std::function<double()>& loss_fn, ParameterStore& store,
                                  const GradMap& analytic, double h, double tol, SeededRng& rng,
                                  size_t min_coords = 100);

}  // namespace sccf
