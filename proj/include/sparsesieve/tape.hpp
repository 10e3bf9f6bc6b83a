#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sparsesieve/tensor.hpp"

namespace sparsesieve {

/// Define-by-run reverse-mode tape. Operations append nodes in execution
/// order, so the recorded list is already topologically sorted; backward
/// walks it once in reverse. Single-use: a second backward() throws.
class Tape {
 public:
  using Handle = int;

  Handle leaf(Tensor t) {
    values_.push_back(std::move(t));
    backs_.emplace_back();
    return static_cast<Handle>(values_.size() - 1);
  }

  const Tensor& value(Handle h) const { return values_.at(static_cast<std::size_t>(h)); }

  Handle add(Handle a, Handle b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a) + value(b);
    return record(std::move(out), [this, a, b](const Tensor& up) {
      accumulate(a, up);
      accumulate(b, up);
    });
  }

  Handle sub_scalar(Handle a, double s) {
    Tensor out = map(value(a), [s](double v) { return v - s; });
    return record(std::move(out), [this, a](const Tensor& up) { accumulate(a, up); });
  }

  Handle mul(Handle a, Handle b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a) * value(b);
    return record(std::move(out), [this, a, b](const Tensor& up) {
      accumulate(a, up * value(b));
      accumulate(b, up * value(a));
    });
  }

  Handle scale(Handle a, double c) {
    Tensor out = c * value(a);
    return record(std::move(out), [this, a, c](const Tensor& up) { accumulate(a, c * up); });
  }

  // ReLU with subgradient 0 at the kink.
  Handle relu(Handle a) {
    Tensor out = map(value(a), [](double v) { return v > 0.0 ? v : 0.0; });
    return record(std::move(out), [this, a](const Tensor& up) {
      const Tensor& in = value(a);
      Tensor g = up;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in.data[i] <= 0.0) g.data[i] = 0.0;
      accumulate(a, g);
    });
  }

  Handle reshape(Handle a, Shape s) {
    if (numel(s) != value(a).size())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(s), value(a).data);
    return record(std::move(out), [this, a](const Tensor& up) {
      Tensor g(value(a).shape, up.data);
      accumulate(a, g);
    });
  }

  /// a: [m,k], b: [k,n] -> [m,n]
  Handle matmul(Handle a, Handle b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape) + " x " +
                                  shape_str(B.shape));
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = A.data[i * k + p];
        if (av == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += av * B.data[p * n + j];
      }
    return record(std::move(out), [this, a, b, m, k, n](const Tensor& up) {
      const Tensor& A2 = value(a);
      const Tensor& B2 = value(b);
      Tensor da = Tensor::zeros({m, k});
      Tensor db = Tensor::zeros({k, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double u = up.data[i * n + j];
          if (u == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) {
            da.data[i * k + p] += u * B2.data[p * n + j];
            db.data[p * n + j] += u * A2.data[i * k + p];
          }
        }
      accumulate(a, da);
      accumulate(b, db);
    });
  }

  /// Cross-correlation (deep-learning convention, no kernel flip).
  /// input: [C,H,W], kernels: [F,C,kh,kw] -> [F,OH,OW]
  Handle conv2d(Handle in, Handle ker, std::size_t stride, std::size_t padding) {
    const Tensor& X = value(in);
    const Tensor& K = value(ker);
    if (X.shape.size() != 3 || K.shape.size() != 4)
      throw std::invalid_argument("conv2d: expected [C,H,W] input and [F,C,kh,kw] kernels");
    const std::size_t C = X.shape[0], H = X.shape[1], W = X.shape[2];
    const std::size_t F = K.shape[0], kh = K.shape[2], kw = K.shape[3];
    if (K.shape[1] != C) throw std::invalid_argument("conv2d: channel count mismatch");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    if (H + 2 * padding < kh || W + 2 * padding < kw)
      throw std::invalid_argument("conv2d: kernel larger than padded input");
    const std::size_t OH = (H + 2 * padding - kh) / stride + 1;
    const std::size_t OW = (W + 2 * padding - kw) / stride + 1;

    Tensor out = Tensor::zeros({F, OH, OW});
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
              if (iy < 0 || iy >= static_cast<long>(H)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                acc += X.data[(c * H + iy) * W + ix] * K.data[((f * C + c) * kh + ky) * kw + kx];
              }
            }
          out.data[(f * OH + oy) * OW + ox] = acc;
        }
    return record(std::move(out),
                  [this, in, ker, stride, padding, C, H, W, F, kh, kw, OH, OW](const Tensor& up) {
                    const Tensor& X2 = value(in);
                    const Tensor& K2 = value(ker);
                    Tensor dx = Tensor::zeros({C, H, W});
                    Tensor dk = Tensor::zeros({F, C, kh, kw});
                    for (std::size_t f = 0; f < F; ++f)
                      for (std::size_t oy = 0; oy < OH; ++oy)
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                          const double u = up.data[(f * OH + oy) * OW + ox];
                          if (u == 0.0) continue;
                          for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                              const long iy = static_cast<long>(oy * stride + ky) -
                                              static_cast<long>(padding);
                              if (iy < 0 || iy >= static_cast<long>(H)) continue;
                              for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long ix = static_cast<long>(ox * stride + kx) -
                                                static_cast<long>(padding);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                const std::size_t xi = (c * H + iy) * W + ix;
                                const std::size_t ki = ((f * C + c) * kh + ky) * kw + kx;
                                dx.data[xi] += u * K2.data[ki];
                                dk.data[ki] += u * X2.data[xi];
                              }
                            }
                        }
                    accumulate(in, dx);
                    accumulate(ker, dk);
                  });
  }

  /// Adds bias[f] to every spatial position of channel f. in: [F,H,W], bias: [F]
  Handle channel_bias(Handle in, Handle bias) {
    const Tensor& X = value(in);
    const Tensor& B = value(bias);
    if (X.shape.size() != 3 || B.shape.size() != 1 || B.shape[0] != X.shape[0])
      throw std::invalid_argument("channel_bias: shape mismatch");
    const std::size_t F = X.shape[0], plane = X.shape[1] * X.shape[2];
    Tensor out = X;
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t i = 0; i < plane; ++i) out.data[f * plane + i] += B.data[f];
    return record(std::move(out), [this, in, bias, F, plane](const Tensor& up) {
      accumulate(in, up);
      Tensor db = Tensor::zeros({F});
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t i = 0; i < plane; ++i) db.data[f] += up.data[f * plane + i];
      accumulate(bias, db);
    });
  }

  /// 2x2 max pooling, stride 2; even extents required. Ties resolve to the
  /// first element in scan order so the backward routing is deterministic.
  Handle maxpool2(Handle in) {
    const Tensor& X = value(in);
    if (X.shape.size() != 3 || X.shape[1] % 2 != 0 || X.shape[2] % 2 != 0)
      throw std::invalid_argument("maxpool2: expected [C,H,W] with even H and W");
    const std::size_t C = X.shape[0], H = X.shape[1], W = X.shape[2];
    const std::size_t OH = H / 2, OW = W / 2;
    Tensor out = Tensor::zeros({C, OH, OW});
    auto arg = std::make_shared<std::vector<std::size_t>>(C * OH * OW);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          std::size_t best = (c * H + 2 * oy) * W + 2 * ox;
          double bv = X.data[best];
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i = (c * H + 2 * oy + dy) * W + 2 * ox + dx;
              if (X.data[i] > bv) {
                bv = X.data[i];
                best = i;
              }
            }
          out.data[(c * OH + oy) * OW + ox] = bv;
          (*arg)[(c * OH + oy) * OW + ox] = best;
        }
    return record(std::move(out), [this, in, arg, C, H, W](const Tensor& up) {
      Tensor dx = Tensor::zeros({C, H, W});
      for (std::size_t i = 0; i < up.size(); ++i) dx.data[(*arg)[i]] += up.data[i];
      accumulate(in, dx);
    });
  }

  /// -log softmax(logits)[label] with max-subtraction. logits: 1-D [k].
  Handle softmax_cross_entropy(Handle logits, std::size_t label) {
    const Tensor& L = value(logits);
    if (L.shape.size() != 1)
      throw std::invalid_argument("softmax_cross_entropy: logits must be 1-D");
    const std::size_t k = L.shape[0];
    if (label >= k) throw std::out_of_range("softmax_cross_entropy: label out of range");
    double m = L.data[0];
    for (double v : L.data) m = std::max(m, v);
    double lse = 0.0;
    for (double v : L.data) lse += std::exp(v - m);
    lse = std::log(lse) + m;
    Tensor out({1}, {lse - L.data[label]});
    return record(std::move(out), [this, logits, label, k, lse](const Tensor& up) {
      const double u = up.data[0];
      const Tensor& L2 = value(logits);
      Tensor g = Tensor::zeros({k});
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(L2.data[j] - lse);
        g.data[j] = u * (p - (j == label ? 1.0 : 0.0));
      }
      accumulate(logits, g);
    });
  }

  /// Cross entropy against the label-smoothed target distribution
  /// t_j = smoothing/k + (1-smoothing)[j == label]. smoothing=0 matches
  /// softmax_cross_entropy exactly.
  Handle softmax_cross_entropy_smoothed(Handle logits, std::size_t label, double smoothing) {
    if (smoothing < 0.0 || smoothing >= 1.0)
      throw std::invalid_argument("softmax_cross_entropy_smoothed: smoothing must be in [0,1)");
    if (smoothing == 0.0) return softmax_cross_entropy(logits, label);
    const Tensor& L = value(logits);
    if (L.shape.size() != 1)
      throw std::invalid_argument("softmax_cross_entropy_smoothed: logits must be 1-D");
    const std::size_t k = L.shape[0];
    if (label >= k) throw std::out_of_range("softmax_cross_entropy_smoothed: label out of range");
    double m = L.data[0];
    for (double v : L.data) m = std::max(m, v);
    double lse = 0.0;
    for (double v : L.data) lse += std::exp(v - m);
    lse = std::log(lse) + m;
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      dot += (smoothing / k + (j == label ? 1.0 - smoothing : 0.0)) * L.data[j];
    Tensor out({1}, {lse - dot});
    return record(std::move(out), [this, logits, label, k, lse, smoothing](const Tensor& up) {
      const double u = up.data[0];
      const Tensor& L2 = value(logits);
      Tensor g = Tensor::zeros({k});
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(L2.data[j] - lse);
        const double t = smoothing / k + (j == label ? 1.0 - smoothing : 0.0);
        g.data[j] = u * (p - t);
      }
      accumulate(logits, g);
    });
  }

  /// Reverse pass from a scalar output. Gradients of every recorded tensor
  /// become available through grad(); the tape may not be reused.
  void backward(Handle out, double seed = 1.0) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
    if (value(out).size() != 1)
      throw std::invalid_argument("Tape::backward: output must be scalar");
    consumed_ = true;
    grads_.assign(values_.size(), Tensor{});
    grads_[static_cast<std::size_t>(out)] = Tensor(value(out).shape, {seed});
    for (std::size_t i = values_.size(); i-- > 0;) {
      if (grads_[i].size() == 0 || !backs_[i]) continue;
      backs_[i](grads_[i]);
    }
  }

  /// Zero tensor if the handle did not influence the output.
  Tensor grad(Handle h) const {
    if (!consumed_) throw std::logic_error("Tape::grad: call backward first");
    const auto i = static_cast<std::size_t>(h);
    if (grads_[i].size() == 0) return Tensor::zeros(values_[i].shape);
    return grads_[i];
  }

  bool consumed() const { return consumed_; }

 private:
  using BackFn = std::function<void(const Tensor&)>;

  Handle record(Tensor out, BackFn back) {
    require_finite(out, "tape op");
    values_.push_back(std::move(out));
    backs_.push_back(std::move(back));
    return static_cast<Handle>(values_.size() - 1);
  }

  void accumulate(Handle h, const Tensor& g) {
    auto& slot = grads_[static_cast<std::size_t>(h)];
    if (slot.size() == 0)
      slot = g;
    else
      for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += g.data[i];
  }

  std::vector<Tensor> values_;
  std::vector<BackFn> backs_;
  std::vector<Tensor> grads_;
  bool consumed_ = false;
};

}  // namespace sparsesieve
