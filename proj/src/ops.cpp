#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "convgrade/autodiff.hpp"

namespace convgrade {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap cmap(const Tensor& t) {
  return CMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MMap mmap(Tensor& t) { return MMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": shape " + shape_str(a) + " " + what);
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename F, typename D>
Var unary(Var a, F f, D dfdx_from_x_y) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(y), {a}, [ia, self, dfdx_from_x_y](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += g[i] * dfdx_from_x_y(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.rank() != 2 || A.rank() == 0 || A.cols() != B.rows()) shape_fail("matmul", A.shape(), B.shape());
  Shape out_shape = A.rank() == 1 ? Shape{B.cols()} : Shape{A.rows(), B.cols()};
  Tensor C(out_shape);
  mmap(C).noalias() = cmap(A) * cmap(B);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_sink(ia)) mmap(*ga).noalias() += cmap(g) * cmap(B).transpose();
    if (Tensor* gb = t.grad_sink(ib)) mmap(*gb).noalias() += cmap(A).transpose() * cmap(g);
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = A.rank() == 2 && B.rank() == 1 && B.size() == A.cols();
  if (!broadcast && A.shape() != B.shape()) shape_fail("add", A.shape(), B.shape());
  Tensor C = A;
  if (broadcast) {
    for (std::size_t r = 0; r < A.rows(); ++r)
      for (std::size_t c = 0; c < A.cols(); ++c) C.at(r, c) += B[c];
  } else {
    C.axpy(1.0, B);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), {a, b}, [ia, ib, broadcast](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->axpy(1.0, g);
    if (Tensor* gb = t.grad_sink(ib)) {
      if (broadcast) {
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) (*gb)[c] += g.at(r, c);
      } else {
        gb->axpy(1.0, g);
      }
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_fail("sub", A.shape(), B.shape());
  Tensor C = A;
  C.axpy(-1.0, B);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->axpy(1.0, g);
    if (Tensor* gb = t.grad_sink(ib)) gb->axpy(-1.0, g);
  });
}

Var mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_fail("mul", A.shape(), B.shape());
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(C), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (Tensor* ga = t.grad_sink(ia))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    if (Tensor* gb = t.grad_sink(ib))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
  });
}

Var scale(Var a, double s) {
  Tensor C = a.value();
  for (auto& x : C.values()) x *= s;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(C), {a}, [ia, s](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->axpy(s, g);
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Tensor& first = parts[0].value();
  const std::size_t rank = first.rank();
  if (rank == 0 || axis >= rank) shape_fail("concat", first.shape(), "has no axis " + std::to_string(axis));
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != rank) shape_fail("concat", first.shape(), v.shape());
    if (rank == 2) {
      const bool ok = axis == 0 ? v.cols() == first.cols() : v.rows() == first.rows();
      if (!ok) shape_fail("concat", first.shape(), v.shape());
    }
    offsets.push_back(total);
    total += rank == 1 ? v.size() : v.shape()[axis];
  }
  Tensor out = rank == 1 ? Tensor(Shape{total})
                         : (axis == 0 ? Tensor(Shape{total, first.cols()}) : Tensor(Shape{first.rows(), total}));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    if (rank == 1 || axis == 0) {
      std::copy(v.data(), v.data() + v.size(), out.data() + offsets[k] * (rank == 1 ? 1 : out.cols()));
    } else {
      for (std::size_t r = 0; r < v.rows(); ++r)
        std::copy(v.row(r).begin(), v.row(r).end(), out.data() + r * total + offsets[k]);
    }
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(std::move(out), parts, [ids, offsets, rank, axis](Tape& t, const Tensor& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor* gk = t.grad_sink(ids[k]);
      if (!gk) continue;
      if (rank == 1 || axis == 0) {
        const double* src = g.data() + offsets[k] * (rank == 1 ? 1 : g.cols());
        for (std::size_t i = 0; i < gk->size(); ++i) (*gk)[i] += src[i];
      } else {
        for (std::size_t r = 0; r < gk->rows(); ++r)
          for (std::size_t c = 0; c < gk->cols(); ++c) gk->at(r, c) += g.at(r, offsets[k] + c);
      }
    }
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return sigm(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || axis >= x.rank()) shape_fail("softmax", x.shape(), "has no axis " + std::to_string(axis));
  // Treat the tensor as (outer, n) groups with stride.
  const std::size_t R = x.rows(), C = x.cols();
  const bool along_cols = x.rank() == 1 || axis == 1;
  const std::size_t groups = along_cols ? R : C;
  const std::size_t len = along_cols ? C : R;
  auto idx = [=](std::size_t gi, std::size_t k) { return along_cols ? gi * C + k : k * C + gi; };
  Tensor y(x.shape());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < len; ++k) m = std::max(m, x[idx(gi, k)]);
    double s = 0.0;
    for (std::size_t k = 0; k < len; ++k) s += (y[idx(gi, k)] = std::exp(x[idx(gi, k)] - m));
    for (std::size_t k = 0; k < len; ++k) y[idx(gi, k)] /= s;
  }
  const std::size_t ia = a.id(), self = a.tape().size();
  return a.tape().record(std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const Tensor& y = t.value(self);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double dot = 0.0;
      for (std::size_t k = 0; k < len; ++k) dot += g[idx(gi, k)] * y[idx(gi, k)];
      for (std::size_t k = 0; k < len; ++k) (*ga)[idx(gi, k)] += y[idx(gi, k)] * (g[idx(gi, k)] - dot);
    }
  });
}

Var mean(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || axis >= x.rank()) shape_fail("mean", x.shape(), "has no axis " + std::to_string(axis));
  if (x.size() == 0) throw ContractError("mean of an empty tensor");
  const std::size_t R = x.rows(), C = x.cols();
  Tensor y;
  if (x.rank() == 1) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    y = Tensor::scalar(s / static_cast<double>(x.size()));
  } else if (axis == 0) {
    y = Tensor(Shape{C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) y[c] += x.at(r, c);
    for (auto& v : y.values()) v /= static_cast<double>(R);
  } else {
    y = Tensor(Shape{R});
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) y[r] += x.at(r, c);
      y[r] /= static_cast<double>(C);
    }
  }
  const std::size_t ia = a.id();
  const std::size_t rank = x.rank();
  return a.tape().record(std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    if (rank == 1) {
      const double v = g[0] / static_cast<double>(ga->size());
      for (auto& e : ga->values()) e += v;
    } else if (axis == 0) {
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) ga->at(r, c) += g[c] / static_cast<double>(R);
    } else {
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) ga->at(r, c) += g[r] / static_cast<double>(C);
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia))
      for (auto& e : ga->values()) e += g[0];
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || axis >= x.rank()) shape_fail("slice", x.shape(), "has no axis " + std::to_string(axis));
  const std::size_t extent = x.shape()[axis];
  if (begin >= end || end > extent) {
    shape_fail("slice", x.shape(), "cannot take [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                       std::to_string(axis));
  }
  const std::size_t n = end - begin;
  Tensor y;
  if (x.rank() == 1) {
    y = Tensor(Shape{n}, std::vector<double>(x.data() + begin, x.data() + end));
  } else if (axis == 0) {
    y = Tensor(Shape{n, x.cols()},
               std::vector<double>(x.data() + begin * x.cols(), x.data() + end * x.cols()));
  } else {
    y = Tensor(Shape{x.rows(), n});
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < n; ++c) y.at(r, c) = x.at(r, begin + c);
  }
  const std::size_t ia = a.id();
  const std::size_t rank = x.rank();
  return a.tape().record(std::move(y), {a}, [=](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    if (rank == 1 || axis == 0) {
      const std::size_t stride = rank == 1 ? 1 : ga->cols();
      double* dst = ga->data() + begin * stride;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    } else {
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) ga->at(r, begin + c) += g.at(r, c);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->axpy(1.0, g);
  });
}

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
  const Tensor& T = table.value();
  if (T.rank() != 2) shape_fail("embedding_lookup", T.shape(), "is not a matrix");
  const std::size_t D = T.cols();
  Tensor y(Shape{ids.size(), D});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= T.rows()) {
      throw ShapeError("embedding_lookup: id " + std::to_string(ids[k]) + " out of range for table " +
                       shape_str(T.shape()));
    }
    std::copy(T.row(ids[k]).begin(), T.row(ids[k]).end(), y.row(k).begin());
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.tape().record(std::move(y), {table}, [it, idv = std::move(idv), D](Tape& t, const Tensor& g) {
    Tensor* gt = t.grad_sink(it);
    if (!gt) return;
    for (std::size_t k = 0; k < idv.size(); ++k)
      for (std::size_t c = 0; c < D; ++c) gt->at(idv[k], c) += g.at(k, c);
  });
}

Var pad_rows(Var a, std::size_t offset, std::size_t total) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || offset + x.rows() > total) {
    shape_fail("pad_rows", x.shape(), "does not fit at offset " + std::to_string(offset) + " in " + std::to_string(total));
  }
  Tensor y(Shape{total, x.cols()});
  std::copy(x.data(), x.data() + x.size(), y.data() + offset * x.cols());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, offset](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const double* src = g.data() + offset * g.cols();
    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += src[i];
  });
}

Var max_rows(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || x.rows() == 0) shape_fail("max_rows", x.shape(), "needs a non-empty matrix");
  const std::size_t R = x.rows(), C = x.cols();
  Tensor y(Shape{C});
  std::vector<std::size_t> arg(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    double m = x.at(0, c);
    for (std::size_t r = 1; r < R; ++r) {
      if (x.at(r, c) > m) {
        m = x.at(r, c);
        arg[c] = r;
      }
    }
    y[c] = m;
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(y), {a}, [ia, arg = std::move(arg)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    for (std::size_t c = 0; c < arg.size(); ++c) ga->at(arg[c], c) += g[c];
  });
}

namespace {

// Unfolded windows: row t holds x[t-left .. t-left+w) flattened, zeros outside.
Tensor unfold(const Tensor& src, std::size_t w) {
  const std::size_t T = src.rows(), In = src.cols(), left = (w - 1) / 2;
  Tensor U(Shape{T, w * In});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < w; ++j) {
      const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
      if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(T)) continue;
      const auto row = src.row(static_cast<std::size_t>(pos));
      std::copy(row.begin(), row.end(), U.data() + t * w * In + j * In);
    }
  return U;
}

}  // namespace

Var conv1d(Var x, std::span<const Var> kernels, std::span<const Var> biases, std::span<const std::size_t> widths) {
  const Tensor& X = x.value();
  if (X.rank() != 2) shape_fail("conv1d", X.shape(), "is not a (T, In) matrix");
  if (kernels.size() != widths.size() || biases.size() != widths.size() || widths.empty()) {
    throw ContractError("conv1d: kernels, biases and widths must have the same non-zero length");
  }
  const std::size_t T = X.rows(), In = X.cols();
  std::vector<std::size_t> feat, offs;
  std::size_t total = 0;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    const Tensor& K = kernels[k].value();
    const Tensor& b = biases[k].value();
    if (widths[k] == 0 || K.rank() != 2 || K.rows() != widths[k] * In) shape_fail("conv1d", X.shape(), K.shape());
    if (b.rank() != 1 || b.size() != K.cols()) shape_fail("conv1d", K.shape(), b.shape());
    feat.push_back(K.cols());
    offs.push_back(total);
    total += K.cols();
  }
  Tensor Y(Shape{T, total});
  for (std::size_t k = 0; k < widths.size(); ++k) {
    Tensor U = unfold(X, widths[k]);
    RowMat out = cmap(U) * cmap(kernels[k].value());
    const Tensor& b = biases[k].value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < feat[k]; ++f) Y.at(t, offs[k] + f) = out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) + b[f];
  }
  std::vector<Var> inputs{x};
  inputs.insert(inputs.end(), kernels.begin(), kernels.end());
  inputs.insert(inputs.end(), biases.begin(), biases.end());
  std::vector<std::size_t> kid, bid;
  for (const Var& k : kernels) kid.push_back(k.id());
  for (const Var& b : biases) bid.push_back(b.id());
  std::vector<std::size_t> wv(widths.begin(), widths.end());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(Y), inputs, [=](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(ix);
    Tensor* gx = t.grad_sink(ix);
    for (std::size_t k = 0; k < wv.size(); ++k) {
      const std::size_t w = wv[k], left = (w - 1) / 2, F = feat[k];
      RowMat G(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(F));
      for (std::size_t r = 0; r < T; ++r)
        for (std::size_t f = 0; f < F; ++f) G(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = g.at(r, offs[k] + f);
      if (Tensor* gb = t.grad_sink(bid[k]))
        for (std::size_t r = 0; r < T; ++r)
          for (std::size_t f = 0; f < F; ++f) (*gb)[f] += G(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f));
      Tensor* gk = t.grad_sink(kid[k]);
      if (!gk && !gx) continue;
      Tensor U = unfold(X, w);
      if (gk) mmap(*gk).noalias() += cmap(U).transpose() * G;
      if (gx) {
        RowMat dU = G * cmap(t.value(kid[k])).transpose();
        for (std::size_t r = 0; r < T; ++r)
          for (std::size_t j = 0; j < w; ++j) {
            const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(r + j) - static_cast<std::ptrdiff_t>(left);
            if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(T)) continue;
            for (std::size_t c = 0; c < In; ++c)
              gx->at(static_cast<std::size_t>(pos), c) += dU(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j * In + c));
          }
      }
    }
  });
}

namespace {

struct LstmTrace {
  RowMat gates;  // (T, 4H) post-activation i, f, g, o
  RowMat cell;   // (T, H)
  RowMat hidden; // (T, H)
};

// Runs one direction. Rows of the trace are indexed by sequence position t.
LstmTrace lstm_forward(const Tensor& X, const Tensor& Wx, const Tensor& Wh, const Tensor& b, bool reverse) {
  const Eigen::Index T = static_cast<Eigen::Index>(X.rows());
  const Eigen::Index H = static_cast<Eigen::Index>(Wh.rows());
  LstmTrace tr;
  RowMat pre = cmap(X) * cmap(Wx);
  tr.gates.resize(T, 4 * H);
  tr.cell.resize(T, H);
  tr.hidden.resize(T, H);
  Eigen::RowVectorXd h = Eigen::RowVectorXd::Zero(H), c = Eigen::RowVectorXd::Zero(H);
  Eigen::RowVectorXd z(4 * H);
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    z.noalias() = pre.row(t) + h * cmap(Wh);
    for (Eigen::Index k = 0; k < 4 * H; ++k) z(k) += b[static_cast<std::size_t>(k)];
    for (Eigen::Index k = 0; k < H; ++k) {
      const double ig = sigm(z(k)), fg = sigm(z(H + k)), gg = std::tanh(z(2 * H + k)), og = sigm(z(3 * H + k));
      tr.gates(t, k) = ig;
      tr.gates(t, H + k) = fg;
      tr.gates(t, 2 * H + k) = gg;
      tr.gates(t, 3 * H + k) = og;
      c(k) = fg * c(k) + ig * gg;
      h(k) = og * std::tanh(c(k));
    }
    tr.cell.row(t) = c;
    tr.hidden.row(t) = h;
  }
  return tr;
}

void lstm_backward(Tape& tp, const Tensor& X, const LstmTrace& tr, std::size_t col_offset, const Tensor& g,
                   std::size_t ix, std::size_t iwx, std::size_t iwh, std::size_t ib, bool reverse) {
  const Eigen::Index T = tr.hidden.rows();
  const Eigen::Index H = tr.hidden.cols();
  const Tensor& Wx = tp.value(iwx);
  const Tensor& Wh = tp.value(iwh);
  RowMat dpre(T, 4 * H);
  Eigen::RowVectorXd dh_next = Eigen::RowVectorXd::Zero(H), dc_next = Eigen::RowVectorXd::Zero(H);
  Tensor* gwh = tp.grad_sink(iwh);
  for (Eigen::Index s = T; s-- > 0;) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    const Eigen::Index prev = reverse ? t + 1 : t - 1;
    const bool has_prev = s > 0;
    Eigen::RowVectorXd dh = dh_next;
    for (Eigen::Index k = 0; k < H; ++k) dh(k) += g.at(static_cast<std::size_t>(t), col_offset + static_cast<std::size_t>(k));
    for (Eigen::Index k = 0; k < H; ++k) {
      const double ig = tr.gates(t, k), fg = tr.gates(t, H + k), gg = tr.gates(t, 2 * H + k), og = tr.gates(t, 3 * H + k);
      const double c = tr.cell(t, k);
      const double c_prev = has_prev ? tr.cell(prev, k) : 0.0;
      const double tc = std::tanh(c);
      const double dc = dh(k) * og * (1.0 - tc * tc) + dc_next(k);
      dpre(t, k) = dc * gg * ig * (1.0 - ig);
      dpre(t, H + k) = dc * c_prev * fg * (1.0 - fg);
      dpre(t, 2 * H + k) = dc * ig * (1.0 - gg * gg);
      dpre(t, 3 * H + k) = dh(k) * tc * og * (1.0 - og);
      dc_next(k) = dc * fg;
    }
    if (has_prev) {
      dh_next.noalias() = dpre.row(t) * cmap(Wh).transpose();
      if (gwh) mmap(*gwh).noalias() += tr.hidden.row(prev).transpose() * dpre.row(t);
    }
  }
  if (Tensor* gb = tp.grad_sink(ib)) {
    Eigen::RowVectorXd colsum = dpre.colwise().sum();
    for (Eigen::Index k = 0; k < 4 * H; ++k) (*gb)[static_cast<std::size_t>(k)] += colsum(k);
  }
  if (Tensor* gwx = tp.grad_sink(iwx)) mmap(*gwx).noalias() += cmap(X).transpose() * dpre;
  if (Tensor* gx = tp.grad_sink(ix)) mmap(*gx).noalias() += dpre * cmap(Wx).transpose();
}

}  // namespace

Var bilstm(Var x, const LstmWeights& fwd, const LstmWeights& bwd) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || X.rows() == 0) shape_fail("bilstm", X.shape(), "needs a non-empty (T, In) matrix");
  auto check = [&](const LstmWeights& w) {
    const Tensor& Wx = w.input.value();
    const Tensor& Wh = w.recurrent.value();
    const Tensor& b = w.bias.value();
    const std::size_t H = Wh.rows();
    if (Wx.rank() != 2 || Wx.rows() != X.cols() || Wx.cols() != 4 * H) shape_fail("bilstm", X.shape(), Wx.shape());
    if (Wh.rank() != 2 || Wh.cols() != 4 * H) shape_fail("bilstm", Wh.shape(), "is not (H, 4H)");
    if (b.rank() != 1 || b.size() != 4 * H) shape_fail("bilstm", b.shape(), "is not (4H)");
    return H;
  };
  const std::size_t Hf = check(fwd), Hb = check(bwd);
  auto tf = std::make_shared<LstmTrace>(lstm_forward(X, fwd.input.value(), fwd.recurrent.value(), fwd.bias.value(), false));
  auto tb = std::make_shared<LstmTrace>(lstm_forward(X, bwd.input.value(), bwd.recurrent.value(), bwd.bias.value(), true));
  const std::size_t T = X.rows();
  Tensor Y(Shape{T, Hf + Hb});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < Hf; ++k) Y.at(t, k) = tf->hidden(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < Hb; ++k) Y.at(t, Hf + k) = tb->hidden(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
  }
  const std::size_t ix = x.id();
  const std::size_t f0 = fwd.input.id(), f1 = fwd.recurrent.id(), f2 = fwd.bias.id();
  const std::size_t b0 = bwd.input.id(), b1 = bwd.recurrent.id(), b2 = bwd.bias.id();
  return x.tape().record(std::move(Y), {x, fwd.input, fwd.recurrent, fwd.bias, bwd.input, bwd.recurrent, bwd.bias},
                         [=](Tape& t, const Tensor& g) {
                           const Tensor& X = t.value(ix);
                           lstm_backward(t, X, *tf, 0, g, ix, f0, f1, f2, false);
                           lstm_backward(t, X, *tb, Hf, g, ix, b0, b1, b2, true);
                         });
}

namespace {

struct AttentionCache {
  std::vector<std::vector<double>> alpha;  // [head][edge]
  std::vector<std::vector<double>> pre;    // [head][edge] pre-activation logit
};

AttentionCache attention_forward(const Tensor& P, const Tensor& A, const InAdjacency& adj, double slope) {
  const std::size_t N = P.rows(), D = P.cols(), heads = A.rows(), dh = D / heads;
  AttentionCache cache;
  cache.alpha.assign(heads, std::vector<double>(adj.sources.size()));
  cache.pre.assign(heads, std::vector<double>(adj.sources.size()));
  std::vector<double> src_score(N), dst_score(N);
  for (std::size_t h = 0; h < heads; ++h) {
    const double* a = A.data() + h * 2 * dh;
    for (std::size_t n = 0; n < N; ++n) {
      const double* p = P.data() + n * D + h * dh;
      double s_dst = 0.0, s_src = 0.0;
      for (std::size_t k = 0; k < dh; ++k) {
        s_dst += a[k] * p[k];
        s_src += a[dh + k] * p[k];
      }
      dst_score[n] = s_dst;
      src_score[n] = s_src;
    }
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t lo = adj.offsets[i], hi = adj.offsets[i + 1];
      if (lo == hi) continue;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t e = lo; e < hi; ++e) {
        const double z = dst_score[i] + src_score[adj.sources[e]];
        cache.pre[h][e] = z;
        const double l = z > 0.0 ? z : slope * z;
        cache.alpha[h][e] = l;
        m = std::max(m, l);
      }
      double s = 0.0;
      for (std::size_t e = lo; e < hi; ++e) s += (cache.alpha[h][e] = std::exp(cache.alpha[h][e] - m));
      for (std::size_t e = lo; e < hi; ++e) cache.alpha[h][e] /= s;
    }
  }
  return cache;
}

void check_attention_args(const Tensor& P, const Tensor& A, const InAdjacency& adj) {
  if (P.rank() != 2 || A.rank() != 2) shape_fail("graph_attention", P.shape(), A.shape());
  const std::size_t heads = A.rows();
  if (heads == 0 || P.cols() % heads != 0 || A.cols() != 2 * (P.cols() / heads)) {
    shape_fail("graph_attention", P.shape(), A.shape());
  }
  if (adj.num_nodes() != P.rows()) {
    shape_fail("graph_attention", P.shape(), "does not match adjacency over " + std::to_string(adj.num_nodes()) + " nodes");
  }
  for (std::size_t s : adj.sources) {
    if (s >= P.rows()) throw ShapeError("graph_attention: edge source " + std::to_string(s) + " out of range");
  }
}

}  // namespace

std::vector<std::vector<double>> attention_weights(const Tensor& projected, const Tensor& attn, const InAdjacency& adj,
                                                   double slope) {
  check_attention_args(projected, attn, adj);
  return attention_forward(projected, attn, adj, slope).alpha;
}

Var graph_attention(Var projected, Var attn, const InAdjacency& adj, double slope) {
  const Tensor& P = projected.value();
  const Tensor& A = attn.value();
  check_attention_args(P, A, adj);
  const std::size_t N = P.rows(), D = P.cols(), heads = A.rows(), dh = D / heads;
  auto cache = std::make_shared<AttentionCache>(attention_forward(P, A, adj, slope));
  Tensor Y(Shape{N, D});
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
        const double w = cache->alpha[h][e];
        const double* p = P.data() + adj.sources[e] * D + h * dh;
        double* y = Y.data() + i * D + h * dh;
        for (std::size_t k = 0; k < dh; ++k) y[k] += w * p[k];
      }
  const std::size_t ip = projected.id(), ia = attn.id();
  auto adj_copy = std::make_shared<InAdjacency>(adj);
  return projected.tape().record(std::move(Y), {projected, attn}, [=](Tape& t, const Tensor& g) {
    const Tensor& P = t.value(ip);
    const Tensor& A = t.value(ia);
    Tensor* gp = t.grad_sink(ip);
    Tensor* ga = t.grad_sink(ia);
    const InAdjacency& adj = *adj_copy;
    std::vector<double> dalpha;
    for (std::size_t h = 0; h < heads; ++h) {
      const double* a = A.data() + h * 2 * dh;
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t lo = adj.offsets[i], hi = adj.offsets[i + 1];
        if (lo == hi) continue;
        const double* gi = g.data() + i * D + h * dh;
        dalpha.assign(hi - lo, 0.0);
        double weighted = 0.0;
        for (std::size_t e = lo; e < hi; ++e) {
          const std::size_t j = adj.sources[e];
          const double* pj = P.data() + j * D + h * dh;
          double d = 0.0;
          for (std::size_t k = 0; k < dh; ++k) d += gi[k] * pj[k];
          dalpha[e - lo] = d;
          weighted += cache->alpha[h][e] * d;
          if (gp) {
            double* gpj = gp->data() + j * D + h * dh;
            for (std::size_t k = 0; k < dh; ++k) gpj[k] += cache->alpha[h][e] * gi[k];
          }
        }
        const double* pi = P.data() + i * D + h * dh;
        for (std::size_t e = lo; e < hi; ++e) {
          const std::size_t j = adj.sources[e];
          const double dz = cache->alpha[h][e] * (dalpha[e - lo] - weighted) * (cache->pre[h][e] > 0.0 ? 1.0 : slope);
          const double* pj = P.data() + j * D + h * dh;
          if (ga) {
            double* gah = ga->data() + h * 2 * dh;
            for (std::size_t k = 0; k < dh; ++k) {
              gah[k] += dz * pi[k];
              gah[dh + k] += dz * pj[k];
            }
          }
          if (gp) {
            double* gpi = gp->data() + i * D + h * dh;
            double* gpj = gp->data() + j * D + h * dh;
            for (std::size_t k = 0; k < dh; ++k) {
              gpi[k] += dz * a[k];
              gpj[k] += dz * a[dh + k];
            }
          }
        }
      }
    }
  });
}

Var dropout(Var a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor mask(a.value().shape());
  for (auto& m : mask.values()) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mul(a, a.tape().constant(std::move(mask)));
}

}  // namespace convgrade
