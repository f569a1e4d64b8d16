#include <cblas.h>

#include <cstdlib>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "r2m/tensor.hpp"

extern "C" void openblas_set_num_threads(int);

namespace r2m {

void set_blas_threads(int n) {
  // CPUID is masked in some virtualized hosts and OpenBLAS then falls back to
  // pre-AVX kernels; pick the AVX2 set explicitly when the hardware has it.
#if defined(__x86_64__)
  if (__builtin_cpu_supports("avx2")) {
    ::setenv("OPENBLAS_CORETYPE", "HASWELL", /*overwrite=*/0);
  }
#endif
  openblas_set_num_threads(n);
}

namespace {

struct ConvDims {
  std::int64_t c_in, d, h, w;
  std::int64_t c_out, k;
  std::int64_t od, oh, ow;
  int stride, padding;
  std::int64_t patch() const { return c_in * k * k * k; }       // GEMM K
  std::int64_t out_voxels() const { return od * oh * ow; }      // GEMM N
};

ConvDims check_conv(const Tensor& input, const Tensor& weight,
                    const Tensor& bias, int stride, int padding) {
  if (input.shape().size() != 4) {
    throw ValidationError("conv3d: input must be [C,D,H,W], got " +
                          shape_str(input.shape()));
  }
  if (weight.shape().size() != 5) {
    throw ValidationError("conv3d: weight must be [C_out,C_in,k,k,k], got " +
                          shape_str(weight.shape()));
  }
  if (bias.shape().size() != 1) {
    throw ValidationError("conv3d: bias must be rank 1, got " +
                          shape_str(bias.shape()));
  }
  ConvDims dm{};
  dm.c_in = input.shape()[0];
  dm.d = input.shape()[1];
  dm.h = input.shape()[2];
  dm.w = input.shape()[3];
  dm.c_out = weight.shape()[0];
  dm.k = weight.shape()[2];
  dm.stride = stride;
  dm.padding = padding;
  if (weight.shape()[1] != dm.c_in) {
    throw ValidationError("conv3d: weight channel axis (1) has extent " +
                          std::to_string(weight.shape()[1]) +
                          " but input channel axis (0) has " +
                          std::to_string(dm.c_in));
  }
  if (weight.shape()[3] != dm.k || weight.shape()[4] != dm.k) {
    throw ValidationError("conv3d: kernel must be cubic, got " +
                          shape_str(weight.shape()));
  }
  if (dm.k % 2 == 0) {
    throw ValidationError("conv3d: kernel extent " + std::to_string(dm.k) +
                          " must be odd");
  }
  if (bias.shape()[0] != dm.c_out) {
    throw ValidationError("conv3d: bias axis 0 has extent " +
                          std::to_string(bias.shape()[0]) +
                          " but weight has " + std::to_string(dm.c_out) +
                          " output channels");
  }
  if (stride < 1 || padding < 0) {
    throw ValidationError("conv3d: stride must be >= 1 and padding >= 0");
  }
  const char* axis_names[3] = {"D (axis 1)", "H (axis 2)", "W (axis 3)"};
  const std::int64_t in_ext[3] = {dm.d, dm.h, dm.w};
  std::int64_t out_ext[3];
  for (int a = 0; a < 3; ++a) {
    const std::int64_t span = in_ext[a] + 2 * padding - dm.k;
    if (span < 0 || span % stride != 0) {
      throw ValidationError(
          std::string("conv3d: axis ") + axis_names[a] + " with extent " +
          std::to_string(in_ext[a]) + " gives non-integer output extent for k=" +
          std::to_string(dm.k) + " stride=" + std::to_string(stride) +
          " padding=" + std::to_string(padding));
    }
    out_ext[a] = span / stride + 1;
  }
  dm.od = out_ext[0];
  dm.oh = out_ext[1];
  dm.ow = out_ext[2];
  return dm;
}

// Column unit = one (od,oh) pair, i.e. `ow` consecutive output columns.
// Chunking keeps the im2col buffer bounded (~32 MB) at any volume size.
constexpr std::int64_t kColBudgetDoubles = std::int64_t{1} << 22;

std::int64_t chunk_units(const ConvDims& dm) {
  const std::int64_t per_unit = dm.patch() * dm.ow;
  return std::max<std::int64_t>(1, kColBudgetDoubles / std::max<std::int64_t>(1, per_unit));
}

// Fills `col` (patch x cols, row-major) for output columns
// [unit_start*ow, (unit_start+units)*ow).
void im2col_chunk(const double* x, const ConvDims& dm, std::int64_t unit_start,
                  std::int64_t units, double* col) {
  const std::int64_t cols = units * dm.ow;
  for (std::int64_t ci = 0; ci < dm.c_in; ++ci) {
    const double* xc = x + ci * dm.d * dm.h * dm.w;
    for (std::int64_t kd = 0; kd < dm.k; ++kd) {
      for (std::int64_t kh = 0; kh < dm.k; ++kh) {
        for (std::int64_t kw = 0; kw < dm.k; ++kw) {
          const std::int64_t row =
              ((ci * dm.k + kd) * dm.k + kh) * dm.k + kw;
          double* dst = col + row * cols;
          for (std::int64_t u = 0; u < units; ++u) {
            const std::int64_t od = (unit_start + u) / dm.oh;
            const std::int64_t ohh = (unit_start + u) % dm.oh;
            const std::int64_t id = od * dm.stride - dm.padding + kd;
            const std::int64_t ih = ohh * dm.stride - dm.padding + kh;
            double* out_row = dst + u * dm.ow;
            if (id < 0 || id >= dm.d || ih < 0 || ih >= dm.h) {
              std::memset(out_row, 0, sizeof(double) * static_cast<std::size_t>(dm.ow));
              continue;
            }
            const double* src = xc + (id * dm.h + ih) * dm.w;
            for (std::int64_t owi = 0; owi < dm.ow; ++owi) {
              const std::int64_t iw = owi * dm.stride - dm.padding + kw;
              out_row[owi] = (iw >= 0 && iw < dm.w) ? src[iw] : 0.0;
            }
          }
        }
      }
    }
  }
}

// dx[...] += col values scattered back to their source voxels.
void col2im_chunk(const double* col, const ConvDims& dm,
                  std::int64_t unit_start, std::int64_t units, double* dx) {
  const std::int64_t cols = units * dm.ow;
  for (std::int64_t ci = 0; ci < dm.c_in; ++ci) {
    double* xc = dx + ci * dm.d * dm.h * dm.w;
    for (std::int64_t kd = 0; kd < dm.k; ++kd) {
      for (std::int64_t kh = 0; kh < dm.k; ++kh) {
        for (std::int64_t kw = 0; kw < dm.k; ++kw) {
          const std::int64_t row =
              ((ci * dm.k + kd) * dm.k + kh) * dm.k + kw;
          const double* src_row = col + row * cols;
          for (std::int64_t u = 0; u < units; ++u) {
            const std::int64_t od = (unit_start + u) / dm.oh;
            const std::int64_t ohh = (unit_start + u) % dm.oh;
            const std::int64_t id = od * dm.stride - dm.padding + kd;
            const std::int64_t ih = ohh * dm.stride - dm.padding + kh;
            if (id < 0 || id >= dm.d || ih < 0 || ih >= dm.h) continue;
            double* dst = xc + (id * dm.h + ih) * dm.w;
            const double* src = src_row + u * dm.ow;
            for (std::int64_t owi = 0; owi < dm.ow; ++owi) {
              const std::int64_t iw = owi * dm.stride - dm.padding + kw;
              if (iw >= 0 && iw < dm.w) dst[iw] += src[owi];
            }
          }
        }
      }
    }
  }
}

void forward_gemm(const double* x, const double* w, const double* b,
                  const ConvDims& dm, double* out) {
  const std::int64_t n = dm.out_voxels();
  const std::int64_t total_units = dm.od * dm.oh;
  const std::int64_t step = std::min(chunk_units(dm), total_units);
  // uninitialized scratch: im2col writes every cell of the used range
  std::unique_ptr<double[]> col(
      new double[static_cast<std::size_t>(dm.patch() * step * dm.ow)]);
  for (std::int64_t u0 = 0; u0 < total_units; u0 += step) {
    const std::int64_t units = std::min(step, total_units - u0);
    const std::int64_t cols = units * dm.ow;
    im2col_chunk(x, dm, u0, units, col.get());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                static_cast<int>(dm.c_out), static_cast<int>(cols),
                static_cast<int>(dm.patch()), 1.0, w,
                static_cast<int>(dm.patch()), col.get(),
                static_cast<int>(cols), 0.0, out + u0 * dm.ow,
                static_cast<int>(n));
  }
  for (std::int64_t co = 0; co < dm.c_out; ++co) {
    const double bv = b[co];
    double* row = out + co * n;
    for (std::int64_t i = 0; i < n; ++i) row[i] += bv;
  }
}

void forward_direct(const double* x, const double* w, const double* b,
                    const ConvDims& dm, double* out) {
  for (std::int64_t co = 0; co < dm.c_out; ++co) {
    double* oc = out + co * dm.out_voxels();
    for (std::int64_t od = 0; od < dm.od; ++od) {
      for (std::int64_t ohh = 0; ohh < dm.oh; ++ohh) {
        for (std::int64_t owi = 0; owi < dm.ow; ++owi) {
          double acc = b[co];
          for (std::int64_t ci = 0; ci < dm.c_in; ++ci) {
            const double* xc = x + ci * dm.d * dm.h * dm.w;
            const double* wc = w + (co * dm.c_in + ci) * dm.k * dm.k * dm.k;
            for (std::int64_t kd = 0; kd < dm.k; ++kd) {
              const std::int64_t id = od * dm.stride - dm.padding + kd;
              if (id < 0 || id >= dm.d) continue;
              for (std::int64_t kh = 0; kh < dm.k; ++kh) {
                const std::int64_t ih = ohh * dm.stride - dm.padding + kh;
                if (ih < 0 || ih >= dm.h) continue;
                for (std::int64_t kw = 0; kw < dm.k; ++kw) {
                  const std::int64_t iw = owi * dm.stride - dm.padding + kw;
                  if (iw < 0 || iw >= dm.w) continue;
                  acc += xc[(id * dm.h + ih) * dm.w + iw] *
                         wc[(kd * dm.k + kh) * dm.k + kw];
                }
              }
            }
          }
          oc[(od * dm.oh + ohh) * dm.ow + owi] = acc;
        }
      }
    }
  }
}

// Shared backward: bias by row sums, weight and input via chunked GEMM.
void conv_backward(const std::vector<double>& up, const Tensor& input,
                   const Tensor& weight, const Tensor& bias,
                   const ConvDims& dm, Tape& t) {
  const std::int64_t n = dm.out_voxels();
  if (bias.tracked()) {
    auto& gb = t.grad_buffer(bias.node());
    for (std::int64_t co = 0; co < dm.c_out; ++co) {
      double s = 0.0;
      const double* row = up.data() + co * n;
      for (std::int64_t i = 0; i < n; ++i) s += row[i];
      gb[static_cast<std::size_t>(co)] += s;
    }
  }
  if (!weight.tracked() && !input.tracked()) return;

  const std::int64_t total_units = dm.od * dm.oh;
  const std::int64_t step = std::min(chunk_units(dm), total_units);
  const std::size_t scratch = static_cast<std::size_t>(dm.patch() * step * dm.ow);
  std::unique_ptr<double[]> col(new double[scratch]);
  std::unique_ptr<double[]> colgrad;
  if (input.tracked()) colgrad.reset(new double[scratch]);

  double* gw = weight.tracked() ? t.grad_buffer(weight.node()).data() : nullptr;
  double* gx = input.tracked() ? t.grad_buffer(input.node()).data() : nullptr;

  for (std::int64_t u0 = 0; u0 < total_units; u0 += step) {
    const std::int64_t units = std::min(step, total_units - u0);
    const std::int64_t cols = units * dm.ow;
    if (gw) {
      im2col_chunk(input.data().data(), dm, u0, units, col.get());
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                  static_cast<int>(dm.c_out), static_cast<int>(dm.patch()),
                  static_cast<int>(cols), 1.0, up.data() + u0 * dm.ow,
                  static_cast<int>(n), col.get(), static_cast<int>(cols), 1.0,
                  gw, static_cast<int>(dm.patch()));
    }
    if (gx) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans,
                  static_cast<int>(dm.patch()), static_cast<int>(cols),
                  static_cast<int>(dm.c_out), 1.0, weight.data().data(),
                  static_cast<int>(dm.patch()), up.data() + u0 * dm.ow,
                  static_cast<int>(n), 0.0, colgrad.get(),
                  static_cast<int>(cols));
      col2im_chunk(colgrad.get(), dm, u0, units, gx);
    }
  }
}

Tensor conv3d_with(const Tensor& input, const Tensor& weight,
                   const Tensor& bias, int stride, int padding, bool gemm) {
  const ConvDims dm = check_conv(input, weight, bias, stride, padding);
  std::vector<double> out(
      static_cast<std::size_t>(dm.c_out * dm.out_voxels()));
  if (gemm) {
    forward_gemm(input.data().data(), weight.data().data(),
                 bias.data().data(), dm, out.data());
  } else {
    forward_direct(input.data().data(), weight.data().data(),
                   bias.data().data(), dm, out.data());
  }
  Tensor y = Tensor::from(std::move(out), {dm.c_out, dm.od, dm.oh, dm.ow});
  detail::check_finite(y, "conv3d");
  Tape* tape = detail::common_tape({&input, &weight, &bias});
  if (!tape) return y;
  return tape->record(std::move(y),
                      [input, weight, bias, dm](const std::vector<double>& up, Tape& t) {
                        conv_backward(up, input, weight, bias, dm, t);
                      });
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  // GEMM pays off once the patch-by-output matrix is non-trivial.
  const ConvDims dm = check_conv(input, weight, bias, stride, padding);
  const bool gemm = dm.patch() * dm.out_voxels() >= 16384;
  return conv3d_with(input, weight, bias, stride, padding, gemm);
}

Tensor conv3d_direct(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride, int padding) {
  return conv3d_with(input, weight, bias, stride, padding, false);
}

Tensor maxpool3d(const Tensor& input, int k, int stride) {
  if (input.shape().size() != 4) {
    throw ValidationError("maxpool3d: input must be [C,D,H,W], got " +
                          shape_str(input.shape()));
  }
  if (k < 1 || stride < 1) {
    throw ValidationError("maxpool3d: window and stride must be >= 1");
  }
  const std::int64_t c = input.shape()[0];
  const std::int64_t ext[3] = {input.shape()[1], input.shape()[2],
                               input.shape()[3]};
  const char* axis_names[3] = {"D (axis 1)", "H (axis 2)", "W (axis 3)"};
  std::int64_t out_ext[3];
  for (int a = 0; a < 3; ++a) {
    if (ext[a] % stride != 0 || ext[a] < k || (ext[a] - k) % stride != 0) {
      throw ValidationError("maxpool3d: axis " + std::string(axis_names[a]) +
                            " with extent " + std::to_string(ext[a]) +
                            " is not tileable by window " + std::to_string(k) +
                            " stride " + std::to_string(stride));
    }
    out_ext[a] = (ext[a] - k) / stride + 1;
  }
  const std::int64_t od = out_ext[0], oh = out_ext[1], ow = out_ext[2];
  const std::int64_t out_n = c * od * oh * ow;
  std::vector<double> out(static_cast<std::size_t>(out_n));
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out_n));
  const auto& xd = input.data();
  std::int64_t oi = 0;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const std::int64_t cbase = ci * ext[0] * ext[1] * ext[2];
    for (std::int64_t zd = 0; zd < od; ++zd) {
      for (std::int64_t yh = 0; yh < oh; ++yh) {
        for (std::int64_t xw = 0; xw < ow; ++xw) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t dz = 0; dz < k; ++dz) {
            for (std::int64_t dy = 0; dy < k; ++dy) {
              for (std::int64_t dx = 0; dx < k; ++dx) {
                const std::int64_t idx =
                    cbase +
                    ((zd * stride + dz) * ext[1] + (yh * stride + dy)) *
                        ext[2] +
                    (xw * stride + dx);
                // strict > keeps the first index on ties
                if (xd[static_cast<std::size_t>(idx)] > best) {
                  best = xd[static_cast<std::size_t>(idx)];
                  best_idx = idx;
                }
              }
            }
          }
          out[static_cast<std::size_t>(oi)] = best;
          argmax[static_cast<std::size_t>(oi)] = best_idx;
          ++oi;
        }
      }
    }
  }
  Tensor y = Tensor::from(std::move(out), {c, od, oh, ow});
  detail::check_finite(y, "maxpool3d");
  Tape* tape = detail::common_tape({&input});
  if (!tape) return y;
  return tape->record(std::move(y), [input, argmax = std::move(argmax)](
                                        const std::vector<double>& up, Tape& t) {
    if (!input.tracked()) return;
    auto& gx = t.grad_buffer(input.node());
    for (std::size_t i = 0; i < up.size(); ++i) {
      gx[static_cast<std::size_t>(argmax[i])] += up[i];
    }
  });
}

}  // namespace r2m
