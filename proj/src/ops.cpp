// SPDX-License-Identifier: Apache-2.0
#include "dvit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dvit/tape.hpp"

namespace dvit {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.ndim() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(t.shape()));
}

// Splits a shape around `axis` into (outer, k, inner) extents so slices along
// the axis can be walked with two nested strides.
struct AxisSplit {
  std::size_t outer = 1, k = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) +
                        " out of range for " + shape_str(s));
  AxisSplit sp;
  for (std::size_t i = 0; i < axis; ++i) sp.outer *= s[i];
  sp.k = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

// Double view of a tensor: its shadow when one exists, else the floats
// promoted into `scratch`. Every op computes its output shadow from these,
// so chains stay in double while the float buffers keep the official values.
const std::vector<double>& hi_of(const Tensor& t, std::vector<double>& scratch) {
  const auto& st = t.storage();
  if (!st.shadow.empty()) return st.shadow;
  scratch.assign(st.data.begin(), st.data.end());
  return scratch;
}

void set_shadow(Tensor& t, std::vector<double> v) {
  t.storage().shadow = std::move(v);
}

Tape* tape_for(const Tensor& a) {
  Tape* t = Tape::active();
  return (t && t->flows(a)) ? t : nullptr;
}

Tape* tape_for(const Tensor& a, const Tensor& b) {
  Tape* t = Tape::active();
  return (t && (t->flows(a) || t->flows(b))) ? t : nullptr;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  {
    const float *pa = a.data(), *pb = b.data();
    float* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    std::vector<double> sa, sb, so(n);
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    for (std::size_t i = 0; i < n; ++i) so[i] = ha[i] + hb[i];
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    t->record("add", {ia, ib}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      if (na) {
        auto& da = adj.into(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (nb) {
        auto& db = adj.into(ib);
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  {
    const float *pa = a.data(), *pb = b.data();
    float* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    std::vector<double> sa, sb, so(n);
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    for (std::size_t i = 0; i < n; ++i) so[i] = ha[i] - hb[i];
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    t->record("sub", {ia, ib}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      if (na) {
        auto& da = adj.into(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (nb) {
        auto& db = adj.into(ib);
        for (std::size_t i = 0; i < n; ++i) db[i] -= dy[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  {
    const float *pa = a.data(), *pb = b.data();
    float* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    std::vector<double> sa, sb, so(n);
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    for (std::size_t i = 0; i < n; ++i) so[i] = ha[i] * hb[i];
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    Tensor ca = a, cb = b;  // saved activations
    t->record("mul", {ia, ib}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      if (na) {
        auto& da = adj.into(ia);
        const float* vb = cb.data();
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * vb[i];
      }
      if (nb) {
        auto& db = adj.into(ib);
        const float* va = ca.data();
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * va[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  const std::size_t n = out.numel();
  {
    const float* pa = a.data();
    float* po = out.data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
    std::vector<double> sa, so(n);
    const auto& ha = hi_of(a, sa);
    for (std::size_t i = 0; i < n; ++i) so[i] = ha[i] * double(s);
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a)) {
    const auto ia = t->node_of(a), io = t->node_of(out);
    t->record("scale", {ia}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& da = adj.into(ia);
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * s;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  if (b.dim(0) != q)
    throw ShapeError("matmul: inner dims of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  Tensor out(Shape{p, r});
  {
    const float *pa = a.data(), *pb = b.data();
    float* po = out.data();
    std::vector<double> acc(r);
    for (std::size_t i = 0; i < p; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k < q; ++k) {
        const double av = pa[i * q + k];
        const float* bk = pb + k * r;
        for (std::size_t j = 0; j < r; ++j) acc[j] += av * bk[j];
      }
      for (std::size_t j = 0; j < r; ++j) po[i * r + j] = static_cast<float>(acc[j]);
    }
    std::vector<double> sa, sb, so(p * r, 0.0);
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = 0; k < q; ++k) {
        const double av = ha[i * q + k];
        const double* bk = hb.data() + k * r;
        double* orow = so.data() + i * r;
        for (std::size_t j = 0; j < r; ++j) orow[j] += av * bk[j];
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    Tensor ca = a, cb = b;
    t->record("matmul", {ia, ib}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      if (na) {  // dA += dY . B^T
        auto& da = adj.into(ia);
        const float* vb = cb.data();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            double s = 0.0;
            const float* dyr = dy.data() + i * r;
            const float* bk = vb + k * r;
            for (std::size_t j = 0; j < r; ++j) s += double(dyr[j]) * bk[j];
            da[i * q + k] += static_cast<float>(s);
          }
      }
      if (nb) {  // dB += A^T . dY
        auto& db = adj.into(ib);
        const float* va = ca.data();
        for (std::size_t i = 0; i < p; ++i)
          for (std::size_t k = 0; k < q; ++k) {
            const float av = va[i * q + k];
            if (av == 0.0f) continue;
            const float* dyr = dy.data() + i * r;
            float* dbk = db.data() + k * r;
            for (std::size_t j = 0; j < r; ++j) dbk[j] += av * dyr[j];
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t n = a.dim(0), m = a.dim(1);
  Tensor out(Shape{m, n});
  {
    const float* pa = a.data();
    float* po = out.data();
    std::vector<double> sa, so(n * m);
    const auto& ha = hi_of(a, sa);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        po[j * n + i] = pa[i * m + j];
        so[j * n + i] = ha[i * m + j];
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a)) {
    const auto ia = t->node_of(a), io = t->node_of(out);
    t->record("transpose", {ia}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& da = adj.into(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) da[i * m + j] += dy[j * n + i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  Tensor out(std::move(shape));
  out.vec() = a.vec();
  {
    std::vector<double> sa;
    set_shadow(out, hi_of(a, sa));
  }
  const std::size_t n = out.numel();

  if (Tape* t = tape_for(a)) {
    const auto ia = t->node_of(a), io = t->node_of(out);
    t->record("reshape", {ia}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& da = adj.into(ia);
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
    });
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  const auto sp = split_axis("slice", a.shape(), axis);
  if (start + len > sp.k || len == 0)
    throw ContractError("slice: range [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") invalid for axis extent " +
                        std::to_string(sp.k));
  Shape oshape = a.shape();
  oshape[axis] = len;
  Tensor out(std::move(oshape));
  {
    const float* pa = a.data();
    float* po = out.data();
    std::vector<double> sa, so(out.numel());
    const auto& ha = hi_of(a, sa);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t src = (o * sp.k + start + j) * sp.inner;
        const std::size_t dst = (o * len + j) * sp.inner;
        std::copy(pa + src, pa + src + sp.inner, po + dst);
        std::copy(ha.begin() + src, ha.begin() + src + sp.inner, so.begin() + dst);
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(a)) {
    const auto ia = t->node_of(a), io = t->node_of(out);
    const auto spc = sp;
    t->record("slice", {ia}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& da = adj.into(ia);
      for (std::size_t o = 0; o < spc.outer; ++o)
        for (std::size_t j = 0; j < len; ++j) {
          const float* src = dy.data() + (o * len + j) * spc.inner;
          float* dst = da.data() + (o * spc.k + start + j) * spc.inner;
          for (std::size_t i = 0; i < spc.inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no parts");
  const Shape& base = parts[0].shape();
  if (axis >= base.size())
    throw ContractError("concat: axis " + std::to_string(axis) + " out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != base.size())
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t i = 0; i < base.size(); ++i)
      if (i != axis && p.shape()[i] != base[i])
        throw ShapeError("concat: shapes " + shape_str(base) + " and " +
                         shape_str(p.shape()) + " differ off-axis");
    total += p.shape()[axis];
  }
  Shape oshape = base;
  oshape[axis] = total;
  Tensor out(oshape);
  const auto sp = split_axis("concat", oshape, axis);
  {
    float* po = out.data();
    std::vector<double> so(out.numel());
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t k = p.shape()[axis];
      const float* src = p.data();
      std::vector<double> sc;
      const auto& hs = hi_of(p, sc);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t si = (o * k + j) * sp.inner;
          const std::size_t di = (o * sp.k + off + j) * sp.inner;
          std::copy(src + si, src + si + sp.inner, po + di);
          std::copy(hs.begin() + si, hs.begin() + si + sp.inner, so.begin() + di);
        }
      off += k;
    }
    set_shadow(out, std::move(so));
  }

  Tape* t = Tape::active();
  bool any = false;
  if (t)
    for (const auto& p : parts) any = any || t->flows(p);
  if (t && any) {
    std::vector<std::uint32_t> ids;
    std::vector<bool> need;
    std::vector<std::size_t> ks;
    for (const auto& p : parts) {
      need.push_back(t->flows(p));
      ids.push_back(t->node_of(p));
      ks.push_back(p.shape()[axis]);
    }
    const auto io = t->node_of(out);
    const auto spc = sp;
    t->record("concat", ids, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      std::size_t base_off = 0;
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        const std::size_t k = ks[pi];
        if (need[pi]) {
          auto& da = adj.into(ids[pi]);
          for (std::size_t o = 0; o < spc.outer; ++o)
            for (std::size_t j = 0; j < k; ++j) {
              const float* src = dy.data() + (o * spc.k + base_off + j) * spc.inner;
              float* dst = da.data() + (o * k + j) * spc.inner;
              for (std::size_t i = 0; i < spc.inner; ++i) dst[i] += src[i];
            }
        }
        base_off += k;
      }
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& mat, const Tensor& vec) {
  require_rank("add_rowwise", mat, 2);
  require_rank("add_rowwise", vec, 1);
  const std::size_t n = mat.dim(0), d = mat.dim(1);
  if (vec.dim(0) != d)
    throw ShapeError("add_rowwise: " + shape_str(mat.shape()) + " rows vs vec " +
                     shape_str(vec.shape()));
  Tensor out(mat.shape());
  {
    const float *pm = mat.data(), *pv = vec.data();
    float* po = out.data();
    std::vector<double> sm, sv, so(n * d);
    const auto &hm = hi_of(mat, sm), &hv = hi_of(vec, sv);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        po[i * d + j] = pm[i * d + j] + pv[j];
        so[i * d + j] = hm[i * d + j] + hv[j];
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(mat, vec)) {
    const bool nm = t->flows(mat), nv = t->flows(vec);
    const auto im = t->node_of(mat), iv = t->node_of(vec), io = t->node_of(out);
    t->record("add_rowwise", {im, iv}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      if (nm) {
        auto& dm = adj.into(im);
        for (std::size_t i = 0; i < n * d; ++i) dm[i] += dy[i];
      }
      if (nv) {
        auto& dv = adj.into(iv);
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += dy[i * d + j];
          dv[j] += static_cast<float>(s);
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = out.numel();
  {
    const float* px = x.data();
    float* po = out.data();
    std::vector<double> sx, so(n);
    const auto& hx = hi_of(x, sx);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = px[i];
      po[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
      const double hv = hx[i];
      so[i] = 0.5 * hv * (1.0 + std::erf(hv / std::numbers::sqrt2));
    }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(x)) {
    const auto ix = t->node_of(x), io = t->node_of(out);
    Tensor cx = x;
    t->record("gelu", {ix}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& dx = adj.into(ix);
      const float* v = cx.data();
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (std::size_t i = 0; i < n; ++i) {
        const double z = v[i];
        const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * z * z);
        dx[i] += dy[i] * static_cast<float>(cdf + z * pdf);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  require_rank("layer_norm", x, 2);
  require_rank("layer_norm", gamma, 1);
  require_rank("layer_norm", beta, 1);
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.dim(0) != d || beta.dim(0) != d)
    throw ShapeError("layer_norm: params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " vs rows of " + shape_str(x.shape()));
  Tensor out(x.shape());
  {
    const float *px = x.data(), *pg = gamma.data(), *pb = beta.data();
    float* po = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = px + i * d;
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= d;
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = row[j] - mu;
        var += c * c;
      }
      var /= d;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j)
        po[i * d + j] = static_cast<float>(((row[j] - mu) * inv) * pg[j] + pb[j]);
    }
    std::vector<double> sx, sg, sb, so(n * d);
    const auto &hx = hi_of(x, sx), &hg = hi_of(gamma, sg), &hb = hi_of(beta, sb);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = hx.data() + i * d;
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= d;
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = row[j] - mu;
        var += c * c;
      }
      var /= d;
      const double inv = 1.0 / std::sqrt(var + double(eps));
      for (std::size_t j = 0; j < d; ++j)
        so[i * d + j] = ((row[j] - mu) * inv) * hg[j] + hb[j];
    }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = Tape::active();
      t && (t->flows(x) || t->flows(gamma) || t->flows(beta))) {
    const bool nx = t->flows(x), ng = t->flows(gamma), nb = t->flows(beta);
    const auto ix = t->node_of(x), ig = t->node_of(gamma), ib = t->node_of(beta),
               io = t->node_of(out);
    Tensor cx = x, cg = gamma;
    t->record("layer_norm", {ix, ig, ib}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      const float *v = cx.data(), *g = cg.data();
      std::vector<double> xhat(d);
      for (std::size_t i = 0; i < n; ++i) {
        const float* row = v + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double c = row[j] - mu;
          var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) xhat[j] = (row[j] - mu) * inv;

        if (ng) {
          auto& dg = adj.into(ig);
          for (std::size_t j = 0; j < d; ++j)
            dg[j] += static_cast<float>(dy[i * d + j] * xhat[j]);
        }
        if (nb) {
          auto& db = adj.into(ib);
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
        }
        if (nx) {
          auto& dx = adj.into(ix);
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = double(dy[i * d + j]) * g[j];
            m1 += dxh;
            m2 += dxh * xhat[j];
          }
          m1 /= d;
          m2 /= d;
          for (std::size_t j = 0; j < d; ++j) {
            const double dxh = double(dy[i * d + j]) * g[j];
            dx[i * d + j] += static_cast<float>((dxh - m1 - xhat[j] * m2) * inv);
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis("softmax", x.shape(), axis);
  const float* px = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!std::isfinite(px[i]))
      throw NumericError("softmax: non-finite input at flat index " + std::to_string(i));

  Tensor out(x.shape());
  {
    float* po = out.data();
    std::vector<double> sx, so(x.numel());
    const auto& hx = hi_of(x, sx);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.k * sp.inner + in;
        float mx = px[base];
        for (std::size_t j = 1; j < sp.k; ++j)
          mx = std::max(mx, px[base + j * sp.inner]);
        double denom = 0.0;
        for (std::size_t j = 0; j < sp.k; ++j)
          denom += std::exp(double(px[base + j * sp.inner]) - mx);
        for (std::size_t j = 0; j < sp.k; ++j)
          po[base + j * sp.inner] =
              static_cast<float>(std::exp(double(px[base + j * sp.inner]) - mx) / denom);

        double hmx = hx[base];
        for (std::size_t j = 1; j < sp.k; ++j)
          hmx = std::max(hmx, hx[base + j * sp.inner]);
        double hden = 0.0;
        for (std::size_t j = 0; j < sp.k; ++j)
          hden += std::exp(hx[base + j * sp.inner] - hmx);
        for (std::size_t j = 0; j < sp.k; ++j)
          so[base + j * sp.inner] = std::exp(hx[base + j * sp.inner] - hmx) / hden;
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(x)) {
    const auto ix = t->node_of(x), io = t->node_of(out);
    Tensor cy = out;
    const auto spc = sp;
    t->record("softmax", {ix}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& dx = adj.into(ix);
      const float* y = cy.data();
      for (std::size_t o = 0; o < spc.outer; ++o)
        for (std::size_t in = 0; in < spc.inner; ++in) {
          const std::size_t base = o * spc.k * spc.inner + in;
          double s = 0.0;
          for (std::size_t j = 0; j < spc.k; ++j) {
            const std::size_t idx = base + j * spc.inner;
            s += double(dy[idx]) * y[idx];
          }
          for (std::size_t j = 0; j < spc.k; ++j) {
            const std::size_t idx = base + j * spc.inner;
            dx[idx] += static_cast<float>((dy[idx] - s) * y[idx]);
          }
        }
    });
  }
  return out;
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis("mean", x.shape(), axis);
  Shape oshape;
  for (std::size_t i = 0; i < x.ndim(); ++i)
    if (i != axis) oshape.push_back(x.shape()[i]);
  Tensor out(oshape);
  {
    const float* px = x.data();
    float* po = out.data();
    std::vector<double> sx, so(out.numel());
    const auto& hx = hi_of(x, sx);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        double s = 0.0, hs = 0.0;
        for (std::size_t j = 0; j < sp.k; ++j) {
          const std::size_t idx = o * sp.k * sp.inner + j * sp.inner + in;
          s += px[idx];
          hs += hx[idx];
        }
        po[o * sp.inner + in] = static_cast<float>(s / sp.k);
        so[o * sp.inner + in] = hs / sp.k;
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(x)) {
    const auto ix = t->node_of(x), io = t->node_of(out);
    const auto spc = sp;
    t->record("mean", {ix}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& dx = adj.into(ix);
      const float invk = 1.0f / static_cast<float>(spc.k);
      for (std::size_t o = 0; o < spc.outer; ++o)
        for (std::size_t in = 0; in < spc.inner; ++in) {
          const float g = dy[o * spc.inner + in] * invk;
          for (std::size_t j = 0; j < spc.k; ++j)
            dx[o * spc.k * spc.inner + j * spc.inner + in] += g;
        }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const std::size_t n = x.numel();
  double s = 0.0;
  {
    const float* px = x.data();
    for (std::size_t i = 0; i < n; ++i) s += px[i];
  }
  Tensor out = Tensor::scalar(static_cast<float>(s));
  {
    std::vector<double> sx;
    const auto& hx = hi_of(x, sx);
    double hs = 0.0;
    for (std::size_t i = 0; i < n; ++i) hs += hx[i];
    set_shadow(out, {hs});
  }

  if (Tape* t = tape_for(x)) {
    const auto ix = t->node_of(x), io = t->node_of(out);
    t->record("sum", {ix}, io, [=](AdjointView& adj) {
      const float g = (*adj.of(io))[0];
      auto& dx = adj.into(ix);
      for (std::size_t i = 0; i < n; ++i) dx[i] += g;
    });
  }
  return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_rank("dot", a, 1);
  require_rank("dot", b, 1);
  require_same_shape("dot", a, b);
  const std::size_t n = a.numel();
  double s = 0.0;
  {
    const float *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < n; ++i) s += double(pa[i]) * pb[i];
  }
  Tensor out = Tensor::scalar(static_cast<float>(s));
  {
    std::vector<double> sa, sb;
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    double hs = 0.0;
    for (std::size_t i = 0; i < n; ++i) hs += ha[i] * hb[i];
    set_shadow(out, {hs});
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    Tensor ca = a, cb = b;
    t->record("dot", {ia, ib}, io, [=](AdjointView& adj) {
      const float g = (*adj.of(io))[0];
      if (na) {
        auto& da = adj.into(ia);
        const float* vb = cb.data();
        for (std::size_t i = 0; i < n; ++i) da[i] += g * vb[i];
      }
      if (nb) {
        auto& db = adj.into(ib);
        const float* va = ca.data();
        for (std::size_t i = 0; i < n; ++i) db[i] += g * va[i];
      }
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const std::size_t n = a.numel();
  double s = 0.0;
  {
    const float *pa = a.data(), *pb = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = double(pa[i]) - pb[i];
      s += d * d;
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(s / n));
  {
    std::vector<double> sa, sb;
    const auto &ha = hi_of(a, sa), &hb = hi_of(b, sb);
    double hs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ha[i] - hb[i];
      hs += d * d;
    }
    set_shadow(out, {hs / n});
  }

  if (Tape* t = tape_for(a, b)) {
    const bool na = t->flows(a), nb = t->flows(b);
    const auto ia = t->node_of(a), ib = t->node_of(b), io = t->node_of(out);
    Tensor ca = a, cb = b;
    t->record("mse", {ia, ib}, io, [=](AdjointView& adj) {
      const float g = (*adj.of(io))[0];
      const float c = 2.0f * g / static_cast<float>(n);
      const float *va = ca.data(), *vb = cb.data();
      if (na) {
        auto& da = adj.into(ia);
        for (std::size_t i = 0; i < n; ++i) da[i] += c * (va[i] - vb[i]);
      }
      if (nb) {
        auto& db = adj.into(ib);
        for (std::size_t i = 0; i < n; ++i) db[i] -= c * (va[i] - vb[i]);
      }
    });
  }
  return out;
}

Tensor cross_entropy_logits(const Tensor& logits, std::size_t label) {
  require_rank("cross_entropy_logits", logits, 1);
  const std::size_t k = logits.dim(0);
  if (label >= k)
    throw ContractError("cross_entropy_logits: label " + std::to_string(label) +
                        " out of range for " + std::to_string(k) + " classes");
  const float* pz = logits.data();
  float mx = pz[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, pz[j]);
  double denom = 0.0;
  for (std::size_t j = 0; j < k; ++j) denom += std::exp(double(pz[j]) - mx);
  const double lse = mx + std::log(denom);
  Tensor out = Tensor::scalar(static_cast<float>(lse - pz[label]));
  {
    std::vector<double> sz;
    const auto& hz = hi_of(logits, sz);
    double hmx = hz[0];
    for (std::size_t j = 1; j < k; ++j) hmx = std::max(hmx, hz[j]);
    double hden = 0.0;
    for (std::size_t j = 0; j < k; ++j) hden += std::exp(hz[j] - hmx);
    set_shadow(out, {hmx + std::log(hden) - hz[label]});
  }

  if (Tape* t = tape_for(logits)) {
    const auto iz = t->node_of(logits), io = t->node_of(out);
    Tensor cz = logits;
    t->record("cross_entropy_logits", {iz}, io, [=](AdjointView& adj) {
      const float g = (*adj.of(io))[0];
      auto& dz = adj.into(iz);
      const float* z = cz.data();
      float m = z[0];
      for (std::size_t j = 1; j < k; ++j) m = std::max(m, z[j]);
      double den = 0.0;
      for (std::size_t j = 0; j < k; ++j) den += std::exp(double(z[j]) - m);
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(double(z[j]) - m) / den;
        dz[j] += g * static_cast<float>(p - (j == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_rank("patchify", image, 3);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: patch " + std::to_string(patch) +
                     " does not tile image " + shape_str(image.shape()));
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t pv = patch * patch * c;
  Tensor out(Shape{gh * gw, pv});
  {
    const float* pi = image.data();
    float* po = out.data();
    std::vector<double> si, so(out.numel());
    const auto& hi = hi_of(image, si);
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const std::size_t dst = (gy * gw + gx) * pv;
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px) {
            const std::size_t src = ((gy * patch + py) * w + (gx * patch + px)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) {
              po[dst + (py * patch + px) * c + ch] = pi[src + ch];
              so[dst + (py * patch + px) * c + ch] = hi[src + ch];
            }
          }
      }
    set_shadow(out, std::move(so));
  }

  if (Tape* t = tape_for(image)) {
    const auto ii = t->node_of(image), io = t->node_of(out);
    t->record("patchify", {ii}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& di = adj.into(ii);
      for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const float* src = dy.data() + (gy * gw + gx) * pv;
          for (std::size_t py = 0; py < patch; ++py)
            for (std::size_t px = 0; px < patch; ++px)
              for (std::size_t ch = 0; ch < c; ++ch)
                di[((gy * patch + py) * w + (gx * patch + px)) * c + ch] +=
                    src[(py * patch + px) * c + ch];
        }
    });
  }
  return out;
}

Tensor argmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_axis("argmax", x.shape(), axis);
  Shape oshape;
  for (std::size_t i = 0; i < x.ndim(); ++i)
    if (i != axis) oshape.push_back(x.shape()[i]);
  Tensor out(oshape);
  const float* px = x.data();
  float* po = out.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      std::size_t best = 0;
      float bv = px[o * sp.k * sp.inner + in];
      for (std::size_t j = 1; j < sp.k; ++j) {
        const float v = px[o * sp.k * sp.inner + j * sp.inner + in];
        if (v > bv) {  // strict: ties keep the lowest index
          bv = v;
          best = j;
        }
      }
      po[o * sp.inner + in] = static_cast<float>(best);
    }
  return out;
}

}  // namespace dvit
