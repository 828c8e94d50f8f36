#pragma once

// Layer ops for the 1-D conv GAN. Activations are [len x ch] or batched
// [batch x len x ch], channels contiguous. Convolutions run as im2col + GEMM.

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <vector>

#include "wr/tensor.hpp"

namespace wr::ag {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Seq {
  std::size_t batch, len, ch;
};

template <class T>
Seq seq_dims(const Tensor<T>& x, const char* op) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  throw ArgumentError(std::string(op) + ": expected [len x ch] or [batch x len x ch], got " + shape_str(x.shape()));
}

inline Shape seq_shape(std::size_t rank, Seq s) {
  return rank == 2 ? Shape{s.len, s.ch} : Shape{s.batch, s.len, s.ch};
}

// cols[(b*out_len + t), k*ch + c] = x[b, t*stride + k - pad, c] (zero outside).
template <class T>
void im2col(const T* x, Seq in, std::size_t out_len, std::size_t width, std::size_t stride, std::size_t pad, T* cols) {
  const std::size_t row = width * in.ch;
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t) {
      T* dst = cols + (b * out_len + t) * row;
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(in.len)) {
          std::fill_n(dst + k * in.ch, in.ch, T(0));
        } else {
          const T* src = x + (b * in.len + static_cast<std::size_t>(pos)) * in.ch;
          std::copy_n(src, in.ch, dst + k * in.ch);
        }
      }
    }
}

// Adjoint of im2col: scatter-add columns back onto a [batch x len x ch] buffer.
template <class T>
void col2im(const T* cols, Seq out, std::size_t in_len, std::size_t width, std::size_t stride, std::size_t pad, T* x) {
  const std::size_t row = width * out.ch;
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t t = 0; t < in_len; ++t) {
      const T* src = cols + (b * in_len + t) * row;
      for (std::size_t k = 0; k < width; ++k) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) - static_cast<std::ptrdiff_t>(pad);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(out.len)) continue;
        T* dst = x + (b * out.len + static_cast<std::size_t>(pos)) * out.ch;
        for (std::size_t c = 0; c < out.ch; ++c) dst[c] += src[k * out.ch + c];
      }
    }
}

template <class T>
void add_bias(std::vector<T>& y, const Tensor<T>& bias, std::size_t ch) {
  if (!bias.defined()) return;
  const auto b = bias.values();
  for (std::size_t i = 0; i < y.size(); i += ch)
    for (std::size_t c = 0; c < ch; ++c) y[i + c] += b[c];
}

template <class T>
void bias_grad(Node<T>* bias, const std::vector<T>& dy, std::size_t ch) {
  if (!bias || !bias->requires_grad) return;
  bias->ensure_grad();
  for (std::size_t i = 0; i < dy.size(); i += ch)
    for (std::size_t c = 0; c < ch; ++c) bias->grad[c] += dy[i + c];
}

}  // namespace detail

/// Strided 1-D cross-correlation with symmetric zero padding (width-1)/2.
/// kernel: [width x ch_in x ch_out]; output length = (len - 1) / stride + 1.
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride) {
  const auto in = detail::seq_dims(x, "conv1d");
  if (kernel.rank() != 3 || kernel.dim(1) != in.ch)
    throw ArgumentError("conv1d: kernel " + shape_str(kernel.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (stride == 0) throw ArgumentError("conv1d: stride must be positive");
  const std::size_t width = kernel.dim(0), cout = kernel.dim(2);
  if (bias.defined() && bias.numel() != cout) throw ArgumentError("conv1d: bias size mismatch");
  const std::size_t pad = (width - 1) / 2;
  const std::size_t out_len = (in.len - 1) / stride + 1;
  const std::size_t rows = in.batch * out_len, inner = width * in.ch;

  auto cols = std::make_shared<std::vector<T>>(rows * inner);
  detail::im2col(x.values().data(), in, out_len, width, stride, pad, cols->data());
  std::vector<T> y(rows * cout);
  {
    detail::CMapMat<T> C(cols->data(), rows, inner);
    detail::CMapMat<T> K(kernel.values().data(), inner, cout);
    detail::MapMat<T> Y(y.data(), rows, cout);
    Y.noalias() = C * K;
  }
  detail::add_bias(y, bias, cout);
  const detail::Seq out{in.batch, out_len, cout};
  auto px = x.node(), pk = kernel.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(detail::seq_shape(x.rank(), out), std::move(y), {&x, &kernel, &bias},
      [px, pk, pb, cols, in, out, width, stride, pad, rows, inner](Node<T>& self) {
        detail::CMapMat<T> dY(self.grad.data(), rows, out.ch);
        if (pk->requires_grad) {
          pk->ensure_grad();
          detail::MapMat<T> dK(pk->grad.data(), inner, out.ch);
          dK.noalias() += detail::CMapMat<T>(cols->data(), rows, inner).transpose() * dY;
        }
        detail::bias_grad(pb.get(), self.grad, out.ch);
        if (px->requires_grad) {
          std::vector<T> dcols(rows * inner);
          detail::MapMat<T>(dcols.data(), rows, inner).noalias() =
              dY * detail::CMapMat<T>(pk->value.data(), inner, out.ch).transpose();
          px->ensure_grad();
          detail::col2im(dcols.data(), in, out.len, width, stride, pad, px->grad.data());
        }
      },
      "conv1d");
}

/// Fractional-strided convolution: the adjoint of conv1d with the same kernel.
/// kernel: [width x ch_out x ch_in]; output length = len * stride.
template <class T>
Tensor<T> tconv1d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride) {
  const auto in = detail::seq_dims(x, "tconv1d");
  if (kernel.rank() != 3 || kernel.dim(2) != in.ch)
    throw ArgumentError("tconv1d: kernel " + shape_str(kernel.shape()) + " incompatible with input " + shape_str(x.shape()));
  if (stride == 0) throw ArgumentError("tconv1d: stride must be positive");
  const std::size_t width = kernel.dim(0), cout = kernel.dim(1);
  if (bias.defined() && bias.numel() != cout) throw ArgumentError("tconv1d: bias size mismatch");
  const std::size_t pad = (width - 1) / 2;
  const detail::Seq out{in.batch, in.len * stride, cout};
  const std::size_t rows = in.batch * in.len, inner = width * cout;

  std::vector<T> y(out.batch * out.len * cout, T(0));
  {
    std::vector<T> cols(rows * inner);
    detail::MapMat<T>(cols.data(), rows, inner).noalias() =
        detail::CMapMat<T>(x.values().data(), rows, in.ch) * detail::CMapMat<T>(kernel.values().data(), inner, in.ch).transpose();
    detail::col2im(cols.data(), out, in.len, width, stride, pad, y.data());
  }
  detail::add_bias(y, bias, cout);
  auto px = x.node(), pk = kernel.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(detail::seq_shape(x.rank(), out), std::move(y), {&x, &kernel, &bias},
      [px, pk, pb, in, out, width, stride, pad, rows, inner](Node<T>& self) {
        detail::bias_grad(pb.get(), self.grad, out.ch);
        if (!px->requires_grad && !pk->requires_grad) return;
        std::vector<T> dcols(rows * inner);
        detail::im2col(self.grad.data(), out, in.len, width, stride, pad, dcols.data());
        detail::CMapMat<T> dC(dcols.data(), rows, inner);
        if (pk->requires_grad) {
          pk->ensure_grad();
          detail::MapMat<T>(pk->grad.data(), inner, in.ch).noalias() +=
              dC.transpose() * detail::CMapMat<T>(px->value.data(), rows, in.ch);
        }
        if (px->requires_grad) {
          px->ensure_grad();
          detail::MapMat<T>(px->grad.data(), rows, in.ch).noalias() +=
              dC * detail::CMapMat<T>(pk->value.data(), inner, in.ch);
        }
      },
      "tconv1d");
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x.values()[i];
    y[i] = v >= 0 ? v : alpha * v;
  }
  auto px = x.node();
  return make_result<T>(x.shape(), std::move(y), {&x}, [px, alpha](Node<T>& self) {
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += (px->value[i] >= 0 ? T(1) : alpha) * self.grad[i];
  }, "leaky_relu");
}

/// Leaky ReLU with a learnable slope per channel (last dimension).
template <class T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slopes) {
  const std::size_t ch = x.shape().back();
  if (slopes.numel() != ch) throw ArgumentError("prelu: one slope per channel expected");
  std::vector<T> y(x.numel());
  const auto a = slopes.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = x.values()[i];
    y[i] = v >= 0 ? v : a[i % ch] * v;
  }
  auto px = x.node(), pa = slopes.node();
  return make_result<T>(x.shape(), std::move(y), {&x, &slopes}, [px, pa, ch](Node<T>& self) {
    if (px->requires_grad) px->ensure_grad();
    if (pa->requires_grad) pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T v = px->value[i];
      if (px->requires_grad) px->grad[i] += (v >= 0 ? T(1) : pa->value[i % ch]) * self.grad[i];
      if (pa->requires_grad && v < 0) pa->grad[i % ch] += v * self.grad[i];
    }
  }, "prelu");
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(x.values()[i]);
  auto px = x.node();
  auto yv = std::make_shared<std::vector<T>>(y);
  return make_result<T>(x.shape(), std::move(y), {&x}, [px, yv](Node<T>& self) {
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += (T(1) - (*yv)[i] * (*yv)[i]) * self.grad[i];
  }, "tanh");
}

/// Concatenate along channels: [.. x len x c1] ++ [.. x len x c2] -> [.. x len x (c1+c2)].
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const auto da = detail::seq_dims(a, "concat_channels"), db = detail::seq_dims(b, "concat_channels");
  if (da.batch != db.batch || da.len != db.len || a.rank() != b.rank())
    throw ArgumentError("concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t rows = da.batch * da.len, c = da.ch + db.ch;
  std::vector<T> y(rows * c);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * da.ch, da.ch, y.data() + r * c);
    std::copy_n(b.values().data() + r * db.ch, db.ch, y.data() + r * c + da.ch);
  }
  auto pa = a.node(), pb = b.node();
  return make_result<T>(detail::seq_shape(a.rank(), {da.batch, da.len, c}), std::move(y), {&a, &b},
      [pa, pb, rows, ca = da.ch, cb = db.ch, c](Node<T>& self) {
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < ca; ++i) pa->grad[r * ca + i] += self.grad[r * c + i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < cb; ++i) pb->grad[r * cb + i] += self.grad[r * c + ca + i];
        }
      },
      "concat_channels");
}

/// Per-channel first and second moments of a fixed reference batch.
template <class T>
struct VbnStats {
  std::vector<T> mean;
  std::vector<T> mean_sq;
  std::size_t batch_size = 0;  // B_ref

  bool empty() const noexcept { return mean.empty(); }
};

/// Batch moments over batch and time, per channel.
template <class T>
VbnStats<T> batch_moments(const Tensor<T>& x) {
  const auto d = detail::seq_dims(x, "batch_moments");
  VbnStats<T> s;
  s.mean.assign(d.ch, T(0));
  s.mean_sq.assign(d.ch, T(0));
  s.batch_size = d.batch;
  const auto v = x.values();
  // Accumulate in double so the reference statistics are order-stable.
  std::vector<double> m(d.ch, 0.0), q(d.ch, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    m[i % d.ch] += v[i];
    q[i % d.ch] += static_cast<double>(v[i]) * v[i];
  }
  const double n = static_cast<double>(d.batch * d.len);
  for (std::size_t c = 0; c < d.ch; ++c) {
    s.mean[c] = static_cast<T>(m[c] / n);
    s.mean_sq[c] = static_cast<T>(q[c] / n);
  }
  return s;
}

/// Virtual batch normalization. Each example is normalized by a convex blend of
/// its own per-channel moments (weight `current_weight`, normally 1/(B_ref+1))
/// and the frozen reference moments, then scaled and shifted per channel.
template <class T>
Tensor<T> virtual_batch_norm(const Tensor<T>& x, const VbnStats<T>& ref, const Tensor<T>& gain, const Tensor<T>& bias,
                             T current_weight, T eps = T(1e-5)) {
  const auto d = detail::seq_dims(x, "virtual_batch_norm");
  if (ref.mean.size() != d.ch || ref.mean_sq.size() != d.ch) throw ArgumentError("virtual_batch_norm: missing or mismatched reference statistics");
  if (gain.numel() != d.ch || bias.numel() != d.ch) throw ArgumentError("virtual_batch_norm: gain/bias size mismatch");
  const T w = current_weight;
  const T inv_len = T(1) / static_cast<T>(d.len);
  // Per (example, channel): blended mean mu and inverse std.
  auto mu = std::make_shared<std::vector<T>>(d.batch * d.ch);
  auto inv = std::make_shared<std::vector<T>>(d.batch * d.ch);
  const auto xv = x.values();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t c = 0; c < d.ch; ++c) {
      T m = 0, q = 0;
      for (std::size_t t = 0; t < d.len; ++t) {
        const T v = xv[(b * d.len + t) * d.ch + c];
        m += v;
        q += v * v;
      }
      m *= inv_len;
      q *= inv_len;
      const T bm = w * m + (T(1) - w) * ref.mean[c];
      const T bq = w * q + (T(1) - w) * ref.mean_sq[c];
      const T var = std::max(bq - bm * bm, T(0));
      (*mu)[b * d.ch + c] = bm;
      (*inv)[b * d.ch + c] = T(1) / std::sqrt(var + eps);
    }
  }
  std::vector<T> y(x.numel());
  const auto g = gain.values(), be = bias.values();
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t t = 0; t < d.len; ++t)
      for (std::size_t c = 0; c < d.ch; ++c) {
        const std::size_t i = (b * d.len + t) * d.ch + c;
        y[i] = (xv[i] - (*mu)[b * d.ch + c]) * (*inv)[b * d.ch + c] * g[c] + be[c];
      }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return make_result<T>(x.shape(), std::move(y), {&x, &gain, &bias},
      [px, pg, pb, mu, inv, d, w, inv_len](Node<T>& self) {
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (std::size_t b = 0; b < d.batch; ++b)
          for (std::size_t c = 0; c < d.ch; ++c) {
            const T m = (*mu)[b * d.ch + c], iv = (*inv)[b * d.ch + c];
            const T gc = pg->value[c];
            T dmu = 0, dnu = 0, dgain = 0, dbias = 0;
            for (std::size_t t = 0; t < d.len; ++t) {
              const std::size_t i = (b * d.len + t) * d.ch + c;
              const T dy = self.grad[i];
              const T centred = px->value[i] - m;
              dgain += dy * centred * iv;
              dbias += dy;
              const T dxhat = dy * gc;
              dmu += dxhat * (-iv + centred * m * iv * iv * iv);
              dnu += dxhat * (T(-0.5) * centred * iv * iv * iv);
            }
            if (pg->requires_grad) pg->grad[c] += dgain;
            if (pb->requires_grad) pb->grad[c] += dbias;
            if (!px->requires_grad) continue;
            for (std::size_t t = 0; t < d.len; ++t) {
              const std::size_t i = (b * d.len + t) * d.ch + c;
              px->grad[i] += self.grad[i] * gc * iv + dmu * w * inv_len + dnu * w * T(2) * px->value[i] * inv_len;
            }
          }
      },
      "virtual_batch_norm");
}

/// Fully connected layer applied per example: x flattened to [batch x in],
/// weight [in x out], bias [out]; returns [batch x out].
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t batch = 1) {
  if (weight.rank() != 2) throw ArgumentError("dense: weight must be [in x out]");
  const std::size_t n_in = weight.dim(0), n_out = weight.dim(1);
  if (batch == 0 || x.numel() != batch * n_in)
    throw ArgumentError("dense: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  if (bias.defined() && bias.numel() != n_out) throw ArgumentError("dense: bias size mismatch");
  std::vector<T> y(batch * n_out);
  detail::MapMat<T>(y.data(), batch, n_out).noalias() =
      detail::CMapMat<T>(x.values().data(), batch, n_in) * detail::CMapMat<T>(weight.values().data(), n_in, n_out);
  detail::add_bias(y, bias, n_out);
  auto px = x.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  return make_result<T>({batch, n_out}, std::move(y), {&x, &weight, &bias},
      [px, pw, pb, batch, n_in, n_out](Node<T>& self) {
        detail::CMapMat<T> dY(self.grad.data(), batch, n_out);
        if (pw->requires_grad) {
          pw->ensure_grad();
          detail::MapMat<T>(pw->grad.data(), n_in, n_out).noalias() +=
              detail::CMapMat<T>(px->value.data(), batch, n_in).transpose() * dY;
        }
        detail::bias_grad(pb.get(), self.grad, n_out);
        if (px->requires_grad) {
          px->ensure_grad();
          detail::MapMat<T>(px->grad.data(), batch, n_in).noalias() +=
              dY * detail::CMapMat<T>(pw->value.data(), n_in, n_out).transpose();
        }
      },
      "dense");
}

}  // namespace wr::ag
