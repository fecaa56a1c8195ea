#include "ecgtrust/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ecgtrust/io.hpp"
#include "ecgtrust/rng.hpp"

namespace ecgtrust::models {

struct ParamDecl {
  std::string name;
  std::size_t size = 0;
  double init_bound = 0.0;
  double fill = 0.0;
  bool trainable = true;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string_view name() const = 0;
  virtual std::size_t in_size() const = 0;
  virtual std::size_t out_size() const = 0;
  virtual std::vector<ParamDecl> params() const { return {}; }
  virtual bool is_standardize() const { return false; }

  /// `p` points at this layer's parameters.
  virtual void forward(const double* p, std::span<const double> in, std::vector<double>& out) const = 0;

  /// Writes d/d(in) into `gin` and accumulates d/d(params) into `gp` when it
  /// is non-null.
  virtual void backward(const double* p, std::span<const double> in, std::span<const double> out,
                        std::span<const double> gout, std::vector<double>& gin, double* gp) const = 0;

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const auto& d : params()) n += d.size;
    return n;
  }

  std::size_t offset = 0;  // relative to the trunk base
};

namespace {

double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }
double lecun_bound(std::size_t fan_in) { return std::sqrt(3.0 / static_cast<double>(fan_in)); }

class Dense final : public Layer {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, bool before_relu)
      : name_(std::move(name)), in_(in), out_(out), before_relu_(before_relu) {}

  std::string_view name() const override { return name_; }
  std::size_t in_size() const override { return in_; }
  std::size_t out_size() const override { return out_; }
  std::vector<ParamDecl> params() const override {
    const double bound = before_relu_ ? he_bound(in_) : lecun_bound(in_);
    return {{name_ + ".weight", in_ * out_, bound, 0.0, true}, {name_ + ".bias", out_, 0.0, 0.0, true}};
  }

  void forward(const double* p, std::span<const double> in, std::vector<double>& out) const override {
    const double* w = p;
    const double* b = p + in_ * out_;
    out.assign(out_, 0.0);
    for (std::size_t o = 0; o < out_; ++o) {
      const double* row = w + o * in_;
      double acc = b[o];
      for (std::size_t i = 0; i < in_; ++i) acc += row[i] * in[i];
      out[o] = acc;
    }
  }

  void backward(const double* p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double* gp) const override {
    const double* w = p;
    gin.assign(in_, 0.0);
    for (std::size_t o = 0; o < out_; ++o) {
      const double g = gout[o];
      if (g == 0.0) continue;
      const double* row = w + o * in_;
      for (std::size_t i = 0; i < in_; ++i) gin[i] += row[i] * g;
      if (gp) {
        double* gw = gp + o * in_;
        for (std::size_t i = 0; i < in_; ++i) gw[i] += g * in[i];
        gp[in_ * out_ + o] += g;
      }
    }
  }

 private:
  std::string name_;
  std::size_t in_;
  std::size_t out_;
  bool before_relu_;
};

class Relu final : public Layer {
 public:
  explicit Relu(std::size_t n) : n_(n) {}
  std::string_view name() const override { return "relu"; }
  std::size_t in_size() const override { return n_; }
  std::size_t out_size() const override { return n_; }

  void forward(const double*, std::span<const double> in, std::vector<double>& out) const override {
    out.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  }

  void backward(const double*, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double*) const override {
    gin.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) gin[i] = in[i] > 0.0 ? gout[i] : 0.0;
  }

 private:
  std::size_t n_;
};

class Standardize final : public Layer {
 public:
  Standardize(std::string name, std::size_t n) : name_(std::move(name)), n_(n) {}
  std::string_view name() const override { return name_; }
  std::size_t in_size() const override { return n_; }
  std::size_t out_size() const override { return n_; }
  bool is_standardize() const override { return true; }
  std::vector<ParamDecl> params() const override {
    return {{name_ + ".mean", n_, 0.0, 0.0, false}, {name_ + ".inv_std", n_, 0.0, 1.0, false}};
  }

  void forward(const double* p, std::span<const double> in, std::vector<double>& out) const override {
    out.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = (in[i] - p[i]) * p[n_ + i];
  }

  void backward(const double* p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double* gp) const override {
    gin.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      gin[i] = gout[i] * p[n_ + i];
      if (gp) {
        gp[i] -= gout[i] * p[n_ + i];
        gp[n_ + i] += gout[i] * (in[i] - p[i]);
      }
    }
  }

 private:
  std::string name_;
  std::size_t n_;
};

// Single input channel, `filters` output channels, zero "same" padding.
class Conv1d final : public Layer {
 public:
  Conv1d(std::string name, std::size_t length, std::size_t filters, std::size_t width)
      : name_(std::move(name)), len_(length), filters_(filters), width_(width) {}
  std::string_view name() const override { return name_; }
  std::size_t in_size() const override { return len_; }
  std::size_t out_size() const override { return len_ * filters_; }
  std::vector<ParamDecl> params() const override {
    return {{name_ + ".weight", filters_ * width_, he_bound(width_), 0.0, true},
            {name_ + ".bias", filters_, 0.0, 0.0, true}};
  }

  void forward(const double* p, std::span<const double> in, std::vector<double>& out) const override {
    const double* w = p;
    const double* b = p + filters_ * width_;
    const long half = static_cast<long>(width_ / 2);
    const long n = static_cast<long>(len_);
    out.assign(len_ * filters_, 0.0);
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* wf = w + f * width_;
      double* of = out.data() + f * len_;
      for (long t = 0; t < n; ++t) {
        double acc = b[f];
        const long k_lo = std::max(0L, half - t);
        const long k_hi = std::min(static_cast<long>(width_), n - t + half);
        for (long k = k_lo; k < k_hi; ++k) acc += wf[k] * in[static_cast<std::size_t>(t + k - half)];
        of[t] = acc;
      }
    }
  }

  void backward(const double* p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double* gp) const override {
    const double* w = p;
    const long half = static_cast<long>(width_ / 2);
    const long n = static_cast<long>(len_);
    gin.assign(len_, 0.0);
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* wf = w + f * width_;
      const double* gf = gout.data() + f * len_;
      for (long t = 0; t < n; ++t) {
        const double g = gf[t];
        if (g == 0.0) continue;
        const long k_lo = std::max(0L, half - t);
        const long k_hi = std::min(static_cast<long>(width_), n - t + half);
        for (long k = k_lo; k < k_hi; ++k) {
          const auto idx = static_cast<std::size_t>(t + k - half);
          gin[idx] += wf[k] * g;
          if (gp) gp[f * width_ + static_cast<std::size_t>(k)] += g * in[idx];
        }
        if (gp) gp[filters_ * width_ + f] += g;
      }
    }
  }

 private:
  std::string name_;
  std::size_t len_;
  std::size_t filters_;
  std::size_t width_;
};

// Single input channel, `filters` output channels, 3x3 kernel, "same" padding.
class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, std::size_t rows, std::size_t cols, std::size_t filters)
      : name_(std::move(name)), rows_(rows), cols_(cols), filters_(filters) {}
  std::string_view name() const override { return name_; }
  std::size_t in_size() const override { return rows_ * cols_; }
  std::size_t out_size() const override { return rows_ * cols_ * filters_; }
  std::vector<ParamDecl> params() const override {
    return {{name_ + ".weight", filters_ * 9, he_bound(9), 0.0, true}, {name_ + ".bias", filters_, 0.0, 0.0, true}};
  }

  void forward(const double* p, std::span<const double> in, std::vector<double>& out) const override {
    out.assign(out_size(), 0.0);
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* wf = p + f * 9;
      const double bias = p[filters_ * 9 + f];
      for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
          double acc = bias;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(rows_)) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const long cc = static_cast<long>(c) + dc;
              if (cc < 0 || cc >= static_cast<long>(cols_)) continue;
              acc += wf[(dr + 1) * 3 + (dc + 1)] * in[static_cast<std::size_t>(rr) * cols_ + static_cast<std::size_t>(cc)];
            }
          }
          out[(f * rows_ + r) * cols_ + c] = acc;
        }
      }
    }
  }

  void backward(const double* p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double* gp) const override {
    gin.assign(in_size(), 0.0);
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* wf = p + f * 9;
      for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
          const double g = gout[(f * rows_ + r) * cols_ + c];
          if (g == 0.0) continue;
          if (gp) gp[filters_ * 9 + f] += g;
          for (int dr = -1; dr <= 1; ++dr) {
            const long rr = static_cast<long>(r) + dr;
            if (rr < 0 || rr >= static_cast<long>(rows_)) continue;
            for (int dc = -1; dc <= 1; ++dc) {
              const long cc = static_cast<long>(c) + dc;
              if (cc < 0 || cc >= static_cast<long>(cols_)) continue;
              const std::size_t idx = static_cast<std::size_t>(rr) * cols_ + static_cast<std::size_t>(cc);
              const auto k = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
              gin[idx] += wf[k] * g;
              if (gp) gp[f * 9 + k] += g * in[idx];
            }
          }
        }
      }
    }
  }

 private:
  std::string name_;
  std::size_t rows_;
  std::size_t cols_;
  std::size_t filters_;
};

// Non-overlapping max pooling over `channels` planes of rows x cols; 1-D
// pooling uses rows = 1 and pool_rows = 1. Ties resolve to the first index.
class MaxPool final : public Layer {
 public:
  MaxPool(std::size_t channels, std::size_t rows, std::size_t cols, std::size_t pool_rows, std::size_t pool_cols)
      : ch_(channels), rows_(rows), cols_(cols), pr_(pool_rows), pc_(pool_cols),
        out_rows_(rows / pool_rows), out_cols_(cols / pool_cols) {}
  std::string_view name() const override { return "maxpool"; }
  std::size_t in_size() const override { return ch_ * rows_ * cols_; }
  std::size_t out_size() const override { return ch_ * out_rows_ * out_cols_; }

  void forward(const double*, std::span<const double> in, std::vector<double>& out) const override {
    out.resize(out_size());
    for (std::size_t c = 0; c < ch_; ++c) {
      for (std::size_t r = 0; r < out_rows_; ++r) {
        for (std::size_t q = 0; q < out_cols_; ++q) out[(c * out_rows_ + r) * out_cols_ + q] = in[winner(in, c, r, q)];
      }
    }
  }

  void backward(const double*, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double*) const override {
    gin.assign(in_size(), 0.0);
    for (std::size_t c = 0; c < ch_; ++c) {
      for (std::size_t r = 0; r < out_rows_; ++r) {
        for (std::size_t q = 0; q < out_cols_; ++q) {
          gin[winner(in, c, r, q)] += gout[(c * out_rows_ + r) * out_cols_ + q];
        }
      }
    }
  }

 private:
  std::size_t winner(std::span<const double> in, std::size_t c, std::size_t r, std::size_t q) const {
    std::size_t best = (c * rows_ + r * pr_) * cols_ + q * pc_;
    for (std::size_t i = 0; i < pr_; ++i) {
      for (std::size_t j = 0; j < pc_; ++j) {
        const std::size_t idx = (c * rows_ + r * pr_ + i) * cols_ + q * pc_ + j;
        if (in[idx] > in[best]) best = idx;
      }
    }
    return best;
  }

  std::size_t ch_, rows_, cols_, pr_, pc_, out_rows_, out_cols_;
};

// Tokens of `token` consecutive inputs, projected to width d with fixed
// sinusoidal positions, one head of scaled dot-product self-attention with a
// residual connection, then the mean over tokens.
class AttentionPool final : public Layer {
 public:
  AttentionPool(std::string name, std::size_t n_tokens, std::size_t token, std::size_t d)
      : name_(std::move(name)), T_(n_tokens), tok_(token), d_(d), pe_(n_tokens * d) {
    for (std::size_t t = 0; t < T_; ++t) {
      for (std::size_t i = 0; i < d_; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_));
        pe_[t * d_ + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
      }
    }
  }
  std::string_view name() const override { return name_; }
  std::size_t in_size() const override { return T_ * tok_; }
  std::size_t out_size() const override { return d_; }
  std::vector<ParamDecl> params() const override {
    const double b = lecun_bound(d_);
    return {{name_ + ".proj_weight", d_ * tok_, lecun_bound(tok_), 0.0, true},
            {name_ + ".proj_bias", d_, 0.0, 0.0, true},
            {name_ + ".query", d_ * d_, b, 0.0, true},
            {name_ + ".key", d_ * d_, b, 0.0, true},
            {name_ + ".value", d_ * d_, b, 0.0, true},
            {name_ + ".output", d_ * d_, b, 0.0, true}};
  }

  void forward(const double* p, std::span<const double> in, std::vector<double>& out) const override {
    Cache c = run(p, in);
    out.assign(d_, 0.0);
    for (std::size_t t = 0; t < T_; ++t) {
      for (std::size_t i = 0; i < d_; ++i) out[i] += c.Z[t * d_ + i] / static_cast<double>(T_);
    }
  }

  void backward(const double* p, std::span<const double> in, std::span<const double>,
                std::span<const double> gout, std::vector<double>& gin, double* gp) const override {
    const Cache c = run(p, in);
    const Offsets o = offsets();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
    const std::size_t n = T_ * d_;
    std::vector<double> gH(n, 0.0), gC(n, 0.0), gQ(n, 0.0), gK(n, 0.0), gV(n, 0.0);

    // Z_t = H_t + Wo C_t ; out = mean_t Z_t
    std::vector<double> gZ(d_);
    for (std::size_t i = 0; i < d_; ++i) gZ[i] = gout[i] / static_cast<double>(T_);
    for (std::size_t t = 0; t < T_; ++t) {
      for (std::size_t i = 0; i < d_; ++i) gH[t * d_ + i] += gZ[i];
      matvec_t(p + o.wo, gZ.data(), gC.data() + t * d_);
      if (gp) outer_add(gp + o.wo, gZ.data(), c.C.data() + t * d_);
    }
    // C_t = sum_s A_ts V_s
    std::vector<double> gA(T_ * T_, 0.0);
    for (std::size_t t = 0; t < T_; ++t) {
      for (std::size_t s = 0; s < T_; ++s) {
        gA[t * T_ + s] = dot(gC.data() + t * d_, c.V.data() + s * d_);
        const double a = c.A[t * T_ + s];
        for (std::size_t i = 0; i < d_; ++i) gV[s * d_ + i] += a * gC[t * d_ + i];
      }
    }
    // A_t = softmax(S_t); S_ts = Q_t . K_s * scale
    for (std::size_t t = 0; t < T_; ++t) {
      double inner = 0.0;
      for (std::size_t s = 0; s < T_; ++s) inner += c.A[t * T_ + s] * gA[t * T_ + s];
      for (std::size_t s = 0; s < T_; ++s) {
        const double gS = c.A[t * T_ + s] * (gA[t * T_ + s] - inner) * scale;
        for (std::size_t i = 0; i < d_; ++i) {
          gQ[t * d_ + i] += gS * c.K[s * d_ + i];
          gK[s * d_ + i] += gS * c.Q[t * d_ + i];
        }
      }
    }
    // Q, K, V = W H
    for (std::size_t t = 0; t < T_; ++t) {
      matvec_t_add(p + o.wq, gQ.data() + t * d_, gH.data() + t * d_);
      matvec_t_add(p + o.wk, gK.data() + t * d_, gH.data() + t * d_);
      matvec_t_add(p + o.wv, gV.data() + t * d_, gH.data() + t * d_);
      if (gp) {
        outer_add(gp + o.wq, gQ.data() + t * d_, c.H.data() + t * d_);
        outer_add(gp + o.wk, gK.data() + t * d_, c.H.data() + t * d_);
        outer_add(gp + o.wv, gV.data() + t * d_, c.H.data() + t * d_);
      }
    }
    // H_t = Wp x_t + bp + PE_t
    gin.assign(in_size(), 0.0);
    const double* wp = p + o.wp;
    for (std::size_t t = 0; t < T_; ++t) {
      const double* g = gH.data() + t * d_;
      const double* x = in.data() + t * tok_;
      for (std::size_t i = 0; i < d_; ++i) {
        for (std::size_t j = 0; j < tok_; ++j) {
          gin[t * tok_ + j] += wp[i * tok_ + j] * g[i];
          if (gp) gp[o.wp + i * tok_ + j] += g[i] * x[j];
        }
        if (gp) gp[o.bp + i] += g[i];
      }
    }
  }

 private:
  struct Offsets {
    std::size_t wp, bp, wq, wk, wv, wo;
  };
  struct Cache {
    std::vector<double> H, Q, K, V, A, C, Z;
  };

  Offsets offsets() const {
    Offsets o{};
    o.wp = 0;
    o.bp = d_ * tok_;
    o.wq = o.bp + d_;
    o.wk = o.wq + d_ * d_;
    o.wv = o.wk + d_ * d_;
    o.wo = o.wv + d_ * d_;
    return o;
  }

  double dot(const double* a, const double* b) const {
    double s = 0.0;
    for (std::size_t i = 0; i < d_; ++i) s += a[i] * b[i];
    return s;
  }
  // y = W x for a d x d matrix.
  void matvec(const double* w, const double* x, double* y) const {
    for (std::size_t i = 0; i < d_; ++i) y[i] = dot(w + i * d_, x);
  }
  // y = W^T g
  void matvec_t(const double* w, const double* g, double* y) const {
    for (std::size_t j = 0; j < d_; ++j) y[j] = 0.0;
    matvec_t_add(w, g, y);
  }
  void matvec_t_add(const double* w, const double* g, double* y) const {
    for (std::size_t i = 0; i < d_; ++i) {
      for (std::size_t j = 0; j < d_; ++j) y[j] += w[i * d_ + j] * g[i];
    }
  }
  void outer_add(double* gw, const double* g, const double* x) const {
    for (std::size_t i = 0; i < d_; ++i) {
      for (std::size_t j = 0; j < d_; ++j) gw[i * d_ + j] += g[i] * x[j];
    }
  }

  Cache run(const double* p, std::span<const double> in) const {
    const Offsets o = offsets();
    const std::size_t n = T_ * d_;
    Cache c;
    c.H.assign(n, 0.0);
    c.Q.assign(n, 0.0);
    c.K.assign(n, 0.0);
    c.V.assign(n, 0.0);
    c.C.assign(n, 0.0);
    c.Z.assign(n, 0.0);
    c.A.assign(T_ * T_, 0.0);
    const double* wp = p + o.wp;
    for (std::size_t t = 0; t < T_; ++t) {
      for (std::size_t i = 0; i < d_; ++i) {
        double acc = p[o.bp + i] + pe_[t * d_ + i];
        for (std::size_t j = 0; j < tok_; ++j) acc += wp[i * tok_ + j] * in[t * tok_ + j];
        c.H[t * d_ + i] = acc;
      }
      matvec(p + o.wq, c.H.data() + t * d_, c.Q.data() + t * d_);
      matvec(p + o.wk, c.H.data() + t * d_, c.K.data() + t * d_);
      matvec(p + o.wv, c.H.data() + t * d_, c.V.data() + t * d_);
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
    for (std::size_t t = 0; t < T_; ++t) {
      double mx = -1e300;
      for (std::size_t s = 0; s < T_; ++s) {
        c.A[t * T_ + s] = dot(c.Q.data() + t * d_, c.K.data() + s * d_) * scale;
        mx = std::max(mx, c.A[t * T_ + s]);
      }
      double z = 0.0;
      for (std::size_t s = 0; s < T_; ++s) {
        c.A[t * T_ + s] = std::exp(c.A[t * T_ + s] - mx);
        z += c.A[t * T_ + s];
      }
      for (std::size_t s = 0; s < T_; ++s) {
        c.A[t * T_ + s] /= z;
        for (std::size_t i = 0; i < d_; ++i) c.C[t * d_ + i] += c.A[t * T_ + s] * c.V[s * d_ + i];
      }
      std::vector<double> wc(d_);
      matvec(p + o.wo, c.C.data() + t * d_, wc.data());
      for (std::size_t i = 0; i < d_; ++i) c.Z[t * d_ + i] = c.H[t * d_ + i] + wc[i];
    }
    return c;
  }

  std::string name_;
  std::size_t T_, tok_, d_;
  std::vector<double> pe_;
};

constexpr std::size_t kTimeFilters = 8;
constexpr std::size_t kTimeWidth = 9;
constexpr std::size_t kTimePool = 4;
constexpr std::size_t kFreqTokens = 16;
constexpr std::size_t kAttnWidth = 16;
constexpr std::size_t kTfFilters = 4;
constexpr std::size_t kTfPool = 2;

struct TrunkBuilder {
  Trunk trunk;
  std::size_t width = 0;

  template <class L, class... Args>
  void add(Args&&... args) {
    auto layer = std::make_shared<L>(std::forward<Args>(args)...);
    if (layer->in_size() != width) throw std::logic_error("trunk: layer size mismatch");
    layer->offset = trunk.n_params;
    trunk.n_params += layer->n_params();
    width = layer->out_size();
    trunk.layers.push_back(std::move(layer));
  }
};

Trunk make_trunk(ArchKind kind, InputShape in, std::size_t latent) {
  TrunkBuilder b;
  b.trunk.kind = kind;
  b.trunk.hidden = latent;
  b.trunk.input = in;
  b.width = in.size();
  switch (kind) {
    case ArchKind::TimeConv: {
      if (in.rows != 1 || in.cols < kTimePool) throw std::invalid_argument("TimeConv: needs a 1-D input of length >= 4");
      b.add<Conv1d>("conv", in.cols, kTimeFilters, kTimeWidth);
      b.add<Relu>(b.width);
      b.add<MaxPool>(kTimeFilters, 1, in.cols, 1, kTimePool);
      b.add<Standardize>("std", b.width);
      b.add<Dense>("dense", b.width, latent, true);
      b.add<Relu>(latent);
      break;
    }
    case ArchKind::FreqAttn: {
      if (in.rows != 1 || in.cols % kFreqTokens != 0) {
        throw std::invalid_argument("FreqAttn: input length must be a multiple of 16");
      }
      b.add<Standardize>("std", b.width);
      b.add<AttentionPool>("attn", kFreqTokens, in.cols / kFreqTokens, kAttnWidth);
      b.add<Dense>("dense", b.width, latent, true);
      b.add<Relu>(latent);
      break;
    }
    case ArchKind::TfConv2d: {
      if (in.rows < kTfPool || in.cols < kTfPool) throw std::invalid_argument("TfConv2d: needs a 2-D input >= 2x2");
      b.add<Conv2d>("conv", in.rows, in.cols, kTfFilters);
      b.add<Relu>(b.width);
      b.add<MaxPool>(kTfFilters, in.rows, in.cols, kTfPool, kTfPool);
      b.add<Standardize>("std", b.width);
      b.add<Dense>("dense", b.width, latent, true);
      b.add<Relu>(latent);
      break;
    }
    case ArchKind::DenseHead: {
      b.add<Standardize>("std", b.width);
      if (latent > 0) {
        b.add<Dense>("dense", b.width, latent, true);
        b.add<Relu>(latent);
      }
      break;
    }
    case ArchKind::Fused:
      throw std::invalid_argument("build_branch: Fused is built with build_fused");
  }
  b.trunk.latent_dim = b.width;
  return b.trunk;
}

void init_slice(std::span<double> values, const ParamSlice& s, double fill, std::uint64_t seed,
                std::size_t stream) {
  if (s.init_bound > 0.0) {
    Rng rng(seed, stream);
    for (double& v : values) v = rng.uniform(-s.init_bound, s.init_bound);
  } else {
    std::fill(values.begin(), values.end(), fill);
  }
}

struct Activations {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[i + 1] = layer i output
};

Activations run_trunk(const Trunk& trunk, const double* params, std::span<const double> x,
                      std::size_t upto = static_cast<std::size_t>(-1)) {
  Activations a;
  a.acts.emplace_back(x.begin(), x.end());
  const std::size_t n = std::min(upto, trunk.layers.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Layer& layer = *trunk.layers[i];
    std::vector<double> out;
    layer.forward(params + trunk.base + layer.offset, a.acts.back(), out);
    a.acts.push_back(std::move(out));
  }
  return a;
}

void backprop_trunk(const Trunk& trunk, const double* params, const Activations& a,
                    std::vector<double> g, std::vector<double>* gin, double* gparams) {
  for (std::size_t i = trunk.layers.size(); i-- > 0;) {
    const Layer& layer = *trunk.layers[i];
    std::vector<double> gprev;
    const std::size_t off = trunk.base + layer.offset;
    layer.backward(params + off, a.acts[i], a.acts[i + 1], g, gprev, gparams ? gparams + off : nullptr);
    g = std::move(gprev);
  }
  if (gin) *gin = std::move(g);
}

void append_slices(std::vector<ParamSlice>& slices, const Trunk& trunk, const std::string& prefix,
                   std::vector<double>* fills) {
  for (const auto& layer : trunk.layers) {
    std::size_t off = trunk.base + layer->offset;
    for (const auto& d : layer->params()) {
      slices.push_back({prefix + d.name, off, d.size, d.trainable, d.init_bound});
      if (fills) fills->push_back(d.fill);
      off += d.size;
    }
  }
}

std::string dims_error(const char* what, std::size_t got, std::size_t want) {
  return std::string(what) + ": got " + std::to_string(got) + ", expected " + std::to_string(want);
}

}  // namespace

std::string_view arch_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::TimeConv: return "TimeConv";
    case ArchKind::FreqAttn: return "FreqAttn";
    case ArchKind::TfConv2d: return "TfConv2d";
    case ArchKind::DenseHead: return "DenseHead";
    case ArchKind::Fused: return "Fused";
  }
  return "?";
}

ArchKind parse_arch(std::string_view name) {
  for (ArchKind k : {ArchKind::TimeConv, ArchKind::FreqAttn, ArchKind::TfConv2d, ArchKind::DenseHead, ArchKind::Fused}) {
    if (arch_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown architecture: " + std::string(name));
}

std::size_t MicroNet::latent_dim() const {
  std::size_t n = 0;
  for (const auto& t : trunks_) n += t.latent_dim;
  return n;
}

std::vector<InputShape> MicroNet::input_shapes() const {
  std::vector<InputShape> out;
  for (const auto& t : trunks_) out.push_back(t.input);
  return out;
}

const ParamSlice& MicroNet::slice(std::string_view name) const {
  for (const auto& s : slices_) {
    if (s.name == name) return s;
  }
  throw std::invalid_argument("no parameter slice named " + std::string(name));
}

std::span<double> MicroNet::slice_values(std::string_view name) {
  const ParamSlice& s = slice(name);
  return {params_.data() + s.offset, s.size};
}

std::span<const double> MicroNet::slice_values(std::string_view name) const {
  const ParamSlice& s = slice(name);
  return {params_.data() + s.offset, s.size};
}

std::vector<std::uint8_t> MicroNet::trainable_mask() const {
  std::vector<std::uint8_t> mask(params_.size(), 0);
  for (const auto& s : slices_) {
    if (s.trainable) std::fill(mask.begin() + static_cast<std::ptrdiff_t>(s.offset),
                               mask.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size), 1);
  }
  return mask;
}

void MicroNet::check_input(const ModelInput& x) const {
  if (x.size() != trunks_.size()) throw std::invalid_argument(dims_error("model input count", x.size(), trunks_.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != trunks_[i].input.size()) {
      throw std::invalid_argument(dims_error("model input size", x[i].size(), trunks_[i].input.size()));
    }
  }
}

ForwardResult MicroNet::forward(const ModelInput& x) const {
  check_input(x);
  ForwardResult r;
  for (std::size_t i = 0; i < trunks_.size(); ++i) {
    const Activations a = run_trunk(trunks_[i], params_.data(), x[i]);
    r.latent.insert(r.latent.end(), a.acts.back().begin(), a.acts.back().end());
  }
  head_->forward(params_.data() + head_offset_, r.latent, r.logits);
  r.probs = softmax(r.logits);
  return r;
}

Gradients MicroNet::backward(const ModelInput& x, std::span<const double> logit_cotangent,
                             bool want_params) const {
  check_input(x);
  if (logit_cotangent.size() != n_classes_) throw std::invalid_argument("backward: cotangent size mismatch");
  std::vector<Activations> acts;
  std::vector<double> latent;
  for (std::size_t i = 0; i < trunks_.size(); ++i) {
    acts.push_back(run_trunk(trunks_[i], params_.data(), x[i]));
    latent.insert(latent.end(), acts.back().acts.back().begin(), acts.back().acts.back().end());
  }
  Gradients g;
  if (want_params) g.params.assign(params_.size(), 0.0);
  double* gp = want_params ? g.params.data() : nullptr;
  std::vector<double> logits;
  head_->forward(params_.data() + head_offset_, latent, logits);
  std::vector<double> glatent;
  head_->backward(params_.data() + head_offset_, latent, logits, logit_cotangent, glatent,
                  gp ? gp + head_offset_ : nullptr);
  g.input.resize(trunks_.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < trunks_.size(); ++i) {
    const std::size_t n = trunks_[i].latent_dim;
    std::vector<double> gi(glatent.begin() + static_cast<std::ptrdiff_t>(pos),
                           glatent.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    backprop_trunk(trunks_[i], params_.data(), acts[i], std::move(gi), &g.input[i], gp);
  }
  return g;
}

MicroNet build_branch(ArchKind kind, InputShape input, std::size_t latent_dim, std::size_t n_classes,
                      std::uint64_t seed) {
  if (input.size() == 0) throw std::invalid_argument("build_branch: empty input shape");
  if (n_classes < 2) throw std::invalid_argument("build_branch: need at least 2 classes");
  if (latent_dim == 0 && kind != ArchKind::DenseHead) throw std::invalid_argument("build_branch: latent_dim must be >= 1");
  MicroNet net;
  net.kind_ = kind;
  net.n_classes_ = n_classes;
  net.init_seed_ = seed;
  net.trunks_.push_back(make_trunk(kind, input, latent_dim));
  std::vector<double> fills;
  append_slices(net.slices_, net.trunks_[0], "", &fills);
  net.head_offset_ = net.trunks_[0].n_params;
  auto head = std::make_shared<Dense>("head", net.trunks_[0].latent_dim, n_classes, false);
  for (const auto& d : head->params()) {
    const std::size_t off = net.slices_.empty() ? 0 : net.slices_.back().offset + net.slices_.back().size;
    net.slices_.push_back({d.name, off, d.size, d.trainable, d.init_bound});
    fills.push_back(d.fill);
  }
  net.head_ = head;
  net.params_.assign(net.head_offset_ + head->n_params(), 0.0);
  for (std::size_t s = 0; s < net.slices_.size(); ++s) {
    const auto& sl = net.slices_[s];
    init_slice({net.params_.data() + sl.offset, sl.size}, sl, fills[s], seed, s);
  }
  return net;
}

MicroNet build_fused(const MicroNet& a, const MicroNet& b) {
  if (a.kind() == ArchKind::Fused || b.kind() == ArchKind::Fused) {
    throw std::invalid_argument("build_fused: branches must not be fused models");
  }
  if (a.n_classes() != b.n_classes()) throw std::invalid_argument("build_fused: class count mismatch");
  MicroNet net;
  net.kind_ = ArchKind::Fused;
  net.n_classes_ = a.n_classes();
  Trunk ta = a.trunks_[0];
  Trunk tb = b.trunks_[0];
  ta.base = 0;
  tb.base = ta.n_params;
  net.trunks_ = {ta, tb};
  append_slices(net.slices_, ta, "a.", nullptr);
  append_slices(net.slices_, tb, "b.", nullptr);
  net.head_offset_ = ta.n_params + tb.n_params;
  const std::size_t la = ta.latent_dim;
  const std::size_t lb = tb.latent_dim;
  const std::size_t c = net.n_classes_;
  auto head = std::make_shared<Dense>("head", la + lb, c, false);
  for (const auto& d : head->params()) {
    const std::size_t off = net.slices_.back().offset + net.slices_.back().size;
    net.slices_.push_back({d.name, off, d.size, d.trainable, d.init_bound});
  }
  net.head_ = head;
  net.params_.assign(net.head_offset_ + head->n_params(), 0.0);
  std::copy(a.params_.begin(), a.params_.begin() + static_cast<std::ptrdiff_t>(ta.n_params), net.params_.begin());
  std::copy(b.params_.begin(), b.params_.begin() + static_cast<std::ptrdiff_t>(tb.n_params),
            net.params_.begin() + static_cast<std::ptrdiff_t>(tb.base));

  const auto wa = a.slice_values("head.weight");
  const auto ba = a.slice_values("head.bias");
  const auto wb = b.slice_values("head.weight");
  const auto bb = b.slice_values("head.bias");
  auto w = net.slice_values("head.weight");
  auto bias = net.slice_values("head.bias");
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t i = 0; i < la; ++i) w[k * (la + lb) + i] = 0.5 * wa[k * la + i];
    for (std::size_t i = 0; i < lb; ++i) w[k * (la + lb) + la + i] = 0.5 * wb[k * lb + i];
    bias[k] = 0.5 * (ba[k] + bb[k]);
  }
  net.init_seed_ = a.init_seed_ ^ (b.init_seed_ << 1);
  return net;
}

MicroNet randomize_weights(const MicroNet& net, std::uint64_t seed) {
  MicroNet out = net;
  out.init_seed_ = seed;
  for (std::size_t s = 0; s < out.slices_.size(); ++s) {
    const auto& sl = out.slices_[s];
    if (!sl.trainable) continue;
    init_slice({out.params_.data() + sl.offset, sl.size}, sl, 0.0, seed, s);
  }
  return out;
}

void calibrate_standardization(MicroNet& net, const std::vector<ModelInput>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("calibrate_standardization: no inputs");
  for (std::size_t t = 0; t < net.trunks().size(); ++t) {
    const Trunk& trunk = net.trunks()[t];
    for (std::size_t li = 0; li < trunk.layers.size(); ++li) {
      const Layer& layer = *trunk.layers[li];
      if (!layer.is_standardize()) continue;
      const std::size_t n = layer.in_size();
      std::vector<double> mean(n, 0.0);
      std::vector<double> sq(n, 0.0);
      for (const auto& x : inputs) {
        if (x.size() != net.trunks().size() || x[t].size() != trunk.input.size()) {
          throw std::invalid_argument("calibrate_standardization: input shape mismatch");
        }
        const Activations a = run_trunk(trunk, net.params().data(), x[t], li);
        const auto& v = a.acts.back();
        for (std::size_t i = 0; i < n; ++i) {
          mean[i] += v[i];
          sq[i] += v[i] * v[i];
        }
      }
      double* p = net.params().data() + trunk.base + layer.offset;
      const double m = static_cast<double>(inputs.size());
      for (std::size_t i = 0; i < n; ++i) {
        const double mu = mean[i] / m;
        const double var = std::max(sq[i] / m - mu * mu, 0.0);
        p[i] = mu;
        p[n + i] = 1.0 / std::sqrt(var + 1e-8);
      }
    }
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

ModelInput grad_input(const MicroNet& net, const ModelInput& x, std::size_t target, GradOf of) {
  if (target >= net.n_classes()) throw std::invalid_argument("grad_input: invalid class index");
  std::vector<double> cot(net.n_classes(), 0.0);
  if (of == GradOf::Logit) {
    cot[target] = 1.0;
  } else {
    const auto probs = net.forward(x).probs;
    for (std::size_t k = 0; k < cot.size(); ++k) cot[k] = (k == target ? 1.0 : 0.0) - probs[k];
  }
  return net.backward(x, cot, false).input;
}

LossGrad cross_entropy_grad(const MicroNet& net, const ModelInput& x, std::size_t label, bool want_input,
                            bool want_params) {
  if (label >= net.n_classes()) throw std::invalid_argument("cross_entropy: invalid label");
  const ForwardResult f = net.forward(x);
  LossGrad r;
  const double mx = *std::max_element(f.logits.begin(), f.logits.end());
  double z = 0.0;
  for (double v : f.logits) z += std::exp(v - mx);
  r.loss = -(f.logits[label] - mx - std::log(z));
  if (want_input || want_params) {
    std::vector<double> cot(f.probs);
    cot[label] -= 1.0;
    r.grads = net.backward(x, cot, want_params);
    if (!want_input) r.grads.input.clear();
  }
  return r;
}

double cross_entropy(const MicroNet& net, const ModelInput& x, std::size_t label) {
  return cross_entropy_grad(net, x, label, false, false).loss;
}

namespace {

nlohmann::json arch_json(const MicroNet& net) {
  nlohmann::json j;
  j["kind"] = std::string(arch_name(net.kind()));
  j["n_classes"] = net.n_classes();
  nlohmann::json branches = nlohmann::json::array();
  for (const auto& t : net.trunks()) {
    branches.push_back({{"kind", std::string(arch_name(t.kind))},
                        {"input", {t.input.rows, t.input.cols}},
                        {"latent_dim", t.hidden}});
  }
  j["branches"] = branches;
  return j;
}

}  // namespace

std::string params_to_json(const MicroNet& net) {
  nlohmann::json j;
  j["format"] = "ecgtrust.micronet";
  j["version"] = 1;
  j["architecture"] = arch_json(net);
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : net.slices()) {
    nlohmann::json vals = nlohmann::json::array();
    for (std::size_t i = 0; i < s.size; ++i) vals.push_back(io::format_double(net.params()[s.offset + i]));
    slices.push_back({{"name", s.name}, {"size", s.size}, {"trainable", s.trainable}, {"values", vals}});
  }
  j["slices"] = slices;
  return io::dump_json(j);
}

MicroNet params_from_json(std::string_view text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", "") != "ecgtrust.micronet") throw std::invalid_argument("params: not a micronet document");
  if (j.value("version", 0) != 1) throw std::invalid_argument("params: unsupported version");
  const auto& arch = j.at("architecture");
  const auto n_classes = arch.at("n_classes").get<std::size_t>();
  std::vector<MicroNet> branches;
  for (const auto& b : arch.at("branches")) {
    const InputShape shape{b.at("input").at(0).get<std::size_t>(), b.at("input").at(1).get<std::size_t>()};
    branches.push_back(build_branch(parse_arch(b.at("kind").get<std::string>()), shape,
                                    b.at("latent_dim").get<std::size_t>(), n_classes, 0));
  }
  const ArchKind kind = parse_arch(arch.at("kind").get<std::string>());
  MicroNet net;
  if (kind == ArchKind::Fused) {
    if (branches.size() != 2) throw std::invalid_argument("params: fused model needs two branches");
    net = build_fused(branches[0], branches[1]);
  } else {
    if (branches.size() != 1) throw std::invalid_argument("params: branch model needs one trunk");
    net = branches[0];
  }
  const auto& slices = j.at("slices");
  if (slices.size() != net.slices().size()) throw std::invalid_argument("params: slice count mismatch");
  for (std::size_t s = 0; s < slices.size(); ++s) {
    const auto& js = slices[s];
    const ParamSlice& sl = net.slices()[s];
    if (js.at("name").get<std::string>() != sl.name) throw std::invalid_argument("params: slice name mismatch at " + sl.name);
    const auto& vals = js.at("values");
    if (vals.size() != sl.size || js.at("size").get<std::size_t>() != sl.size) {
      throw std::invalid_argument("params: slice length mismatch for " + sl.name);
    }
    for (std::size_t i = 0; i < sl.size; ++i) {
      net.params()[sl.offset + i] = std::strtod(vals[i].get<std::string>().c_str(), nullptr);
    }
  }
  return net;
}

void save_params(const MicroNet& net, const std::filesystem::path& path) {
  io::write_text(path, params_to_json(net));
}

MicroNet load_params(const std::filesystem::path& path) { return params_from_json(io::read_text(path)); }

}  // namespace ecgtrust::models
