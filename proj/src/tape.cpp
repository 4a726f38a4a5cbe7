#include "oescn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace oescn {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

CMapRM cmap2d(const Grid& g) {
  return CMapRM(g.values.data(), static_cast<Eigen::Index>(g.rows()),
                static_cast<Eigen::Index>(g.cols()));
}

MapRM map2d(Grid& g) {
  return MapRM(g.values.data(), static_cast<Eigen::Index>(g.rows()),
               static_cast<Eigen::Index>(g.cols()));
}

void require(bool cond, const char* msg) {
  if (!cond) throw InvalidArgument(msg);
}

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int oh, ow;
  int pt, pl;  // top/left padding
};

ConvDims conv_dims(const Grid& x, const Grid& k, Padding pad) {
  require(x.ndim() == 4, "conv2d: input must be 4-D [n, cin, h, w]");
  require(k.ndim() == 4, "conv2d: kernels must be 4-D [cout, cin, kh, kw]");
  ConvDims d;
  d.n = static_cast<int>(x.shape[0]);
  d.cin = static_cast<int>(x.shape[1]);
  d.h = static_cast<int>(x.shape[2]);
  d.w = static_cast<int>(x.shape[3]);
  d.cout = static_cast<int>(k.shape[0]);
  d.kh = static_cast<int>(k.shape[2]);
  d.kw = static_cast<int>(k.shape[3]);
  require(static_cast<int>(k.shape[1]) == d.cin,
          "conv2d: kernel depth does not match input channels");
  if (pad == Padding::same) {
    d.oh = d.h;
    d.ow = d.w;
    d.pt = (d.kh - 1) / 2;
    d.pl = (d.kw - 1) / 2;
    require(d.kh <= d.h + d.kh - 1 && d.kw <= d.w + d.kw - 1,
            "conv2d: kernel exceeds padded input");
  } else {
    require(d.kh <= d.h && d.kw <= d.w,
            "conv2d: kernel exceeds input in valid mode");
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    d.pt = 0;
    d.pl = 0;
  }
  return d;
}

// Patch matrix: column (oi*ow + oj) holds the receptive field of output
// (oi, oj), rows ordered (cin, kh, kw) row-major.
void im2col(const double* x, const ConvDims& d, Matrix& m) {
  m.resize(static_cast<Eigen::Index>(d.cin) * d.kh * d.kw,
           static_cast<Eigen::Index>(d.oh) * d.ow);
  for (int c = 0; c < d.cin; ++c) {
    const double* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const Eigen::Index row =
            (static_cast<Eigen::Index>(c) * d.kh + ki) * d.kw + kj;
        for (int oi = 0; oi < d.oh; ++oi) {
          const int ii = oi - d.pt + ki;
          const bool row_ok = ii >= 0 && ii < d.h;
          for (int oj = 0; oj < d.ow; ++oj) {
            const int jj = oj - d.pl + kj;
            m(row, static_cast<Eigen::Index>(oi) * d.ow + oj) =
                (row_ok && jj >= 0 && jj < d.w)
                    ? xc[static_cast<std::size_t>(ii) * d.w + jj]
                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const Matrix& m, const ConvDims& d, double* dx) {
  for (int c = 0; c < d.cin; ++c) {
    double* xc = dx + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const Eigen::Index row =
            (static_cast<Eigen::Index>(c) * d.kh + ki) * d.kw + kj;
        for (int oi = 0; oi < d.oh; ++oi) {
          const int ii = oi - d.pt + ki;
          if (ii < 0 || ii >= d.h) continue;
          for (int oj = 0; oj < d.ow; ++oj) {
            const int jj = oj - d.pl + kj;
            if (jj < 0 || jj >= d.w) continue;
            xc[static_cast<std::size_t>(ii) * d.w + jj] +=
                m(row, static_cast<Eigen::Index>(oi) * d.ow + oj);
          }
        }
      }
    }
  }
}

}  // namespace

Tape::Var Tape::push(Grid value, bool requires_grad,
                     std::function<void(Tape&, int)> backprop) {
  if (backward_done_)
    throw StateError("tape: cannot record ops after backward");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
    throw StateError("tape: variable does not reference a recorded node");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Grid& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.shape.empty()) n.grad = Grid(n.value.shape);
  return n.grad;
}

bool Tape::has_grad(int id) const {
  return !nodes_[static_cast<std::size_t>(id)].grad.shape.empty();
}

Tape::Var Tape::leaf(Grid value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

const Grid& Tape::value(Var v) const { return node(v).value; }

const Grid& Tape::grad(Var v) {
  node(v);  // bounds check
  if (!backward_done_)
    throw StateError("tape: gradients requested before backward");
  return grad_buf(v.id);
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward: no forward pass recorded");
  node(loss);
  if (backward_done_) throw StateError("backward: tape already consumed");
  if (node(loss).value.numel() != 1)
    throw InvalidArgument("backward: loss must be scalar");
  backward_done_ = true;
  grad_buf(loss.id).values[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backprop || !has_grad(id)) continue;
    n.backprop(*this, id);
  }
}

// ---------------------------------------------------------------------------
// 2-D linear algebra
// ---------------------------------------------------------------------------

Tape::Var Tape::matmul(Var a, Var b) {
  const Grid& av = value(a);
  const Grid& bv = value(b);
  require(av.ndim() == 2 && bv.ndim() == 2 && av.cols() == bv.rows(),
          "matmul: incompatible shapes");
  Grid out({av.rows(), bv.cols()});
  map2d(out).noalias() = cmap2d(av) * cmap2d(bv);
  const int ia = a.id, ib = b.id;
  return push(std::move(out), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const CMapRM dy = cmap2d(t.nodes_[self].grad);
    const Grid& avV = t.nodes_[ia].value;
    const Grid& bvV = t.nodes_[ib].value;
    if (t.nodes_[ia].requires_grad)
      map2d(t.grad_buf(ia)).noalias() += dy * cmap2d(bvV).transpose();
    if (t.nodes_[ib].requires_grad)
      map2d(t.grad_buf(ib)).noalias() += cmap2d(avV).transpose() * dy;
  });
}

Tape::Var Tape::transpose(Var a) {
  const Grid& av = value(a);
  require(av.ndim() == 2, "transpose: input must be 2-D");
  Grid out({av.cols(), av.rows()});
  map2d(out) = cmap2d(av).transpose();
  const int ia = a.id;
  return push(std::move(out), rg(a), [ia](Tape& t, int self) {
    if (t.nodes_[ia].requires_grad)
      map2d(t.grad_buf(ia)) += cmap2d(t.nodes_[self].grad).transpose();
  });
}

Tape::Var Tape::scale(Var a, double c) {
  const Grid& av = value(a);
  Grid out = av;
  for (double& v : out.values) v *= c;
  const int ia = a.id;
  return push(std::move(out), rg(a), [ia, c](Tape& t, int self) {
    if (!t.nodes_[ia].requires_grad) return;
    const Grid& dy = t.nodes_[self].grad;
    Grid& da = t.grad_buf(ia);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += c * dy[i];
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Grid& av = value(a);
  const Grid& bv = value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Grid out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return push(std::move(out), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Grid& dy = t.nodes_[self].grad;
    for (int target : {ia, ib}) {
      if (!t.nodes_[target].requires_grad) continue;
      Grid& d = t.grad_buf(target);
      for (std::size_t i = 0; i < dy.numel(); ++i) d[i] += dy[i];
    }
  });
}

Tape::Var Tape::cmul(Var a, Grid w) {
  const Grid& av = value(a);
  require(av.same_shape(w), "cmul: shape mismatch");
  Grid out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= w[i];
  const int ia = a.id;
  auto wp = std::make_shared<Grid>(std::move(w));
  return push(std::move(out), rg(a), [ia, wp](Tape& t, int self) {
    if (!t.nodes_[ia].requires_grad) return;
    const Grid& dy = t.nodes_[self].grad;
    Grid& da = t.grad_buf(ia);
    for (std::size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * (*wp)[i];
  });
}

Tape::Var Tape::slice_cols(Var a, int start, int count) {
  const Grid& av = value(a);
  require(av.ndim() == 2, "slice_cols: input must be 2-D");
  require(start >= 0 && count >= 1 &&
              static_cast<std::size_t>(start + count) <= av.cols(),
          "slice_cols: range out of bounds");
  Grid out({av.rows(), static_cast<std::size_t>(count)});
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (int c = 0; c < count; ++c) out.at(r, c) = av.at(r, start + c);
  const int ia = a.id;
  return push(std::move(out), rg(a), [ia, start, count](Tape& t, int self) {
    if (!t.nodes_[ia].requires_grad) return;
    const Grid& dy = t.nodes_[self].grad;
    Grid& da = t.grad_buf(ia);
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (int c = 0; c < count; ++c) da.at(r, start + c) += dy.at(r, c);
  });
}

Tape::Var Tape::concat_cols(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_cols: no inputs");
  const std::size_t rows = value(xs[0]).rows();
  std::size_t total = 0;
  bool need = false;
  for (Var v : xs) {
    const Grid& g = value(v);
    require(g.ndim() == 2 && g.rows() == rows, "concat_cols: row mismatch");
    total += g.cols();
    need = need || rg(v);
  }
  Grid out({rows, total});
  std::size_t off = 0;
  std::vector<int> ids;
  std::vector<std::size_t> widths;
  for (Var v : xs) {
    const Grid& g = value(v);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < g.cols(); ++c)
        out.at(r, off + c) = g.at(r, c);
    ids.push_back(v.id);
    widths.push_back(g.cols());
    off += g.cols();
  }
  return push(std::move(out), need, [ids, widths](Tape& t, int self) {
    const Grid& dy = t.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.nodes_[ids[i]].requires_grad) {
        Grid& da = t.grad_buf(ids[i]);
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < widths[i]; ++c)
            da.at(r, c) += dy.at(r, off + c);
      }
      off += widths[i];
    }
  });
}

Tape::Var Tape::softmax_cols(Var a) {
  const Grid& av = value(a);
  require(av.ndim() == 2, "softmax_cols: input must be 2-D");
  if (!av.all_finite())
    throw NumericError("softmax_cols: non-finite attention logits");
  Grid out(av.shape);
  for (std::size_t c = 0; c < av.cols(); ++c) {
    double mx = av.at(0, c);
    for (std::size_t r = 1; r < av.rows(); ++r) mx = std::max(mx, av.at(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r < av.rows(); ++r) {
      const double e = std::exp(av.at(r, c) - mx);
      out.at(r, c) = e;
      sum += e;
    }
    for (std::size_t r = 0; r < av.rows(); ++r) out.at(r, c) /= sum;
  }
  const int ia = a.id;
  return push(std::move(out), rg(a), [ia](Tape& t, int self) {
    if (!t.nodes_[ia].requires_grad) return;
    const Grid& y = t.nodes_[self].value;
    const Grid& dy = t.nodes_[self].grad;
    Grid& da = t.grad_buf(ia);
    for (std::size_t c = 0; c < y.cols(); ++c) {
      double dot = 0.0;
      for (std::size_t r = 0; r < y.rows(); ++r)
        dot += dy.at(r, c) * y.at(r, c);
      for (std::size_t r = 0; r < y.rows(); ++r)
        da.at(r, c) += y.at(r, c) * (dy.at(r, c) - dot);
    }
  });
}

Tape::Var Tape::fuse_heads(Var a, Var b, Var w_max, Var w_avg, Var bias) {
  const Grid& av = value(a);
  const Grid& bv = value(b);
  require(av.same_shape(bv), "fuse_heads: head shapes differ");
  require(value(w_max).numel() == 1 && value(w_avg).numel() == 1 &&
              value(bias).numel() == 1,
          "fuse_heads: fusion parameters must be scalars");
  const double wm = value(w_max)[0];
  const double wa = value(w_avg)[0];
  const double bb = value(bias)[0];
  Grid out(av.shape);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = wm * std::max(av[i], bv[i]) + wa * 0.5 * (av[i] + bv[i]) + bb;
  const int ia = a.id, ib = b.id, iwm = w_max.id, iwa = w_avg.id,
            ibb = bias.id;
  const bool need = rg(a) || rg(b) || rg(w_max) || rg(w_avg) || rg(bias);
  return push(std::move(out), need, [ia, ib, iwm, iwa, ibb](Tape& t,
                                                            int self) {
    const Grid& dy = t.nodes_[self].grad;
    const Grid& ga = t.nodes_[ia].value;
    const Grid& gb = t.nodes_[ib].value;
    const double wmv = t.nodes_[iwm].value[0];
    const double wav = t.nodes_[iwa].value[0];
    double dwm = 0.0, dwa = 0.0, dbb = 0.0;
    Grid* da = t.nodes_[ia].requires_grad ? &t.grad_buf(ia) : nullptr;
    Grid* db = t.nodes_[ib].requires_grad ? &t.grad_buf(ib) : nullptr;
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      const double g = dy[i];
      const bool a_wins = ga[i] >= gb[i];
      dwm += g * std::max(ga[i], gb[i]);
      dwa += g * 0.5 * (ga[i] + gb[i]);
      dbb += g;
      if (da) (*da)[i] += g * ((a_wins ? wmv : 0.0) + 0.5 * wav);
      if (db) (*db)[i] += g * ((a_wins ? 0.0 : wmv) + 0.5 * wav);
    }
    if (t.nodes_[iwm].requires_grad) t.grad_buf(iwm)[0] += dwm;
    if (t.nodes_[iwa].requires_grad) t.grad_buf(iwa)[0] += dwa;
    if (t.nodes_[ibb].requires_grad) t.grad_buf(ibb)[0] += dbb;
  });
}

Tape::Var Tape::stack2d(const std::vector<Var>& xs) {
  require(!xs.empty(), "stack2d: no inputs");
  const Grid& first = value(xs[0]);
  require(first.ndim() == 2, "stack2d: inputs must be 2-D");
  bool need = false;
  for (Var v : xs) {
    require(value(v).same_shape(first), "stack2d: input shapes differ");
    need = need || rg(v);
  }
  const std::size_t per = first.numel();
  Grid out({xs.size(), 1, first.rows(), first.cols()});
  std::vector<int> ids;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Grid& g = value(xs[i]);
    std::copy(g.values.begin(), g.values.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(i * per));
    ids.push_back(xs[i].id);
  }
  return push(std::move(out), need, [ids, per](Tape& t, int self) {
    const Grid& dy = t.nodes_[self].grad;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.nodes_[ids[i]].requires_grad) continue;
      Grid& da = t.grad_buf(ids[i]);
      for (std::size_t j = 0; j < per; ++j) da[j] += dy[i * per + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Network layers
// ---------------------------------------------------------------------------

Tape::Var Tape::conv2d(Var x, Var kernels, Var bias, Padding pad) {
  const Grid& xv = value(x);
  const Grid& kv = value(kernels);
  const Grid& bv = value(bias);
  const ConvDims d = conv_dims(xv, kv, pad);
  require(bv.numel() == static_cast<std::size_t>(d.cout),
          "conv2d: bias size does not match output channels");

  Grid out({static_cast<std::size_t>(d.n), static_cast<std::size_t>(d.cout),
            static_cast<std::size_t>(d.oh), static_cast<std::size_t>(d.ow)});
  const CMapRM kmat(kv.values.data(), d.cout,
                    static_cast<Eigen::Index>(d.cin) * d.kh * d.kw);
  Matrix patches;
  const std::size_t in_stride = static_cast<std::size_t>(d.cin) * d.h * d.w;
  const std::size_t out_stride =
      static_cast<std::size_t>(d.cout) * d.oh * d.ow;
  for (int s = 0; s < d.n; ++s) {
    im2col(xv.values.data() + s * in_stride, d, patches);
    MapRM y(out.values.data() + s * out_stride, d.cout,
            static_cast<Eigen::Index>(d.oh) * d.ow);
    y.noalias() = kmat * patches;
    for (int r = 0; r < d.cout; ++r) y.row(r).array() += bv[r];
  }

  const int ix = x.id, ik = kernels.id, ib = bias.id;
  const bool need = rg(x) || rg(kernels) || rg(bias);
  return push(std::move(out), need, [d, in_stride, out_stride, ix, ik,
                                     ib](Tape& t, int self) {
    const Grid& dyg = t.nodes_[self].grad;
    const Grid& xvv = t.nodes_[ix].value;
    const Grid& kvv = t.nodes_[ik].value;
    const CMapRM km(kvv.values.data(), d.cout,
                    static_cast<Eigen::Index>(d.cin) * d.kh * d.kw);
    const bool need_x = t.nodes_[ix].requires_grad;
    const bool need_k = t.nodes_[ik].requires_grad;
    const bool need_b = t.nodes_[ib].requires_grad;
    Matrix patches;
    for (int s = 0; s < d.n; ++s) {
      const CMapRM dy(dyg.values.data() + s * out_stride, d.cout,
                      static_cast<Eigen::Index>(d.oh) * d.ow);
      if (need_k || need_x)
        im2col(xvv.values.data() + s * in_stride, d, patches);
      if (need_k) {
        MapRM dk(t.grad_buf(ik).values.data(), d.cout,
                 static_cast<Eigen::Index>(d.cin) * d.kh * d.kw);
        dk.noalias() += dy * patches.transpose();
      }
      if (need_b) {
        Grid& db = t.grad_buf(ib);
        for (int r = 0; r < d.cout; ++r) db[r] += dy.row(r).sum();
      }
      if (need_x) {
        const Matrix dpatch = km.transpose() * dy;
        col2im_accumulate(dpatch, d,
                          t.grad_buf(ix).values.data() + s * in_stride);
      }
    }
  });
}

Tape::Var Tape::elu(Var x) {
  const Grid& xv = value(x);
  Grid out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i)
    out[i] = xv[i] > 0.0 ? xv[i] : std::expm1(xv[i]);
  const int ix = x.id;
  return push(std::move(out), rg(x), [ix](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const Grid& y = t.nodes_[self].value;
    const Grid& dy = t.nodes_[self].grad;
    Grid& dx = t.grad_buf(ix);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      dx[i] += dy[i] * (y[i] > 0.0 ? 1.0 : y[i] + 1.0);
  });
}

Tape::Var Tape::avg_pool2d(Var x, int ph, int pw, int sh, int sw) {
  const Grid& xv = value(x);
  require(xv.ndim() == 4, "avg_pool2d: input must be 4-D");
  require(ph >= 1 && pw >= 1 && sh >= 1 && sw >= 1,
          "avg_pool2d: pool/stride must be positive");
  const int n = static_cast<int>(xv.shape[0]);
  const int c = static_cast<int>(xv.shape[1]);
  const int h = static_cast<int>(xv.shape[2]);
  const int w = static_cast<int>(xv.shape[3]);
  require(ph <= h && pw <= w, "avg_pool2d: pool larger than input");
  const int oh = (h - ph) / sh + 1;
  const int ow = (w - pw) / sw + 1;
  Grid out({static_cast<std::size_t>(n), static_cast<std::size_t>(c),
            static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  const double inv = 1.0 / (static_cast<double>(ph) * pw);
  auto xat = [&](int s, int ch, int i, int j) {
    return xv.values[((static_cast<std::size_t>(s) * c + ch) * h + i) * w + j];
  };
  std::size_t o = 0;
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int oi = 0; oi < oh; ++oi)
        for (int oj = 0; oj < ow; ++oj) {
          double acc = 0.0;
          for (int i = 0; i < ph; ++i)
            for (int j = 0; j < pw; ++j)
              acc += xat(s, ch, oi * sh + i, oj * sw + j);
          out.values[o++] = acc * inv;
        }
  const int ix = x.id;
  return push(std::move(out), rg(x),
              [ix, n, c, h, w, oh, ow, ph, pw, sh, sw, inv](Tape& t, int self) {
                if (!t.nodes_[ix].requires_grad) return;
                const Grid& dy = t.nodes_[self].grad;
                Grid& dx = t.grad_buf(ix);
                std::size_t o = 0;
                for (int s = 0; s < n; ++s)
                  for (int ch = 0; ch < c; ++ch)
                    for (int oi = 0; oi < oh; ++oi)
                      for (int oj = 0; oj < ow; ++oj) {
                        const double g = dy.values[o++] * inv;
                        for (int i = 0; i < ph; ++i)
                          for (int j = 0; j < pw; ++j)
                            dx.values[((static_cast<std::size_t>(s) * c + ch) *
                                           h +
                                       oi * sh + i) *
                                          w +
                                      oj * sw + j] += g;
                      }
              });
}

Tape::Var Tape::batch_norm(Var x, Var gain, Var shift, Grid& running_mean,
                           Grid& running_var, RunMode mode, double momentum,
                           double eps) {
  const Grid& xv = value(x);
  require(xv.ndim() == 2 || xv.ndim() == 4,
          "batch_norm: input must be 2-D or 4-D");
  const std::size_t batch = xv.shape[0];
  const std::size_t ch = xv.shape[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < xv.ndim(); ++i) spatial *= xv.shape[i];
  require(value(gain).numel() == ch && value(shift).numel() == ch,
          "batch_norm: gain/shift size must equal channel count");
  require(running_mean.numel() == ch && running_var.numel() == ch,
          "batch_norm: running stats size must equal channel count");
  if (mode == RunMode::train && batch < 2)
    throw InvalidArgument("batch_norm: train mode requires batch >= 2");

  const std::size_t n_per = batch * spatial;
  std::vector<double> mean(ch), inv_std(ch);
  if (mode == RunMode::train) {
    for (std::size_t c = 0; c < ch; ++c) {
      double mu = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s)
          mu += xv.values[(b * ch + c) * spatial + s];
      mu /= static_cast<double>(n_per);
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = xv.values[(b * ch + c) * spatial + s] - mu;
          var += d * d;
        }
      var /= static_cast<double>(n_per);  // biased, matches normalization
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }

  auto xhat = std::make_shared<Grid>(xv.shape);
  Grid out(xv.shape);
  const Grid& gv = value(gain);
  const Grid& sv = value(shift);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = (b * ch + c) * spatial + s;
        const double xh = (xv.values[i] - mean[c]) * inv_std[c];
        (*xhat)[i] = xh;
        out.values[i] = gv[c] * xh + sv[c];
      }

  const int ix = x.id, ig = gain.id, is = shift.id;
  const bool train = mode == RunMode::train;
  const bool need = rg(x) || rg(gain) || rg(shift);
  return push(
      std::move(out), need,
      [ix, ig, is, xhat, inv_std, batch, ch, spatial, n_per, train](
          Tape& t, int self) {
        const Grid& dy = t.nodes_[self].grad;
        const Grid& gv = t.nodes_[ig].value;
        const bool need_x = t.nodes_[ix].requires_grad;
        const bool need_g = t.nodes_[ig].requires_grad;
        const bool need_s = t.nodes_[is].requires_grad;
        for (std::size_t c = 0; c < ch; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t i = (b * ch + c) * spatial + s;
              sum_dy += dy.values[i];
              sum_dy_xhat += dy.values[i] * (*xhat)[i];
            }
          if (need_g) t.grad_buf(ig)[c] += sum_dy_xhat;
          if (need_s) t.grad_buf(is)[c] += sum_dy;
          if (need_x) {
            Grid& dx = t.grad_buf(ix);
            const double k = gv[c] * inv_std[c];
            const double m1 = sum_dy / static_cast<double>(n_per);
            const double m2 = sum_dy_xhat / static_cast<double>(n_per);
            for (std::size_t b = 0; b < batch; ++b)
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t i = (b * ch + c) * spatial + s;
                if (train)
                  dx.values[i] += k * (dy.values[i] - m1 - (*xhat)[i] * m2);
                else
                  dx.values[i] += k * dy.values[i];
              }
          }
        }
      });
}

Tape::Var Tape::dropout(Var x, double p_drop, RunMode mode, Rng& rng) {
  if (!(p_drop >= 0.0 && p_drop < 1.0))
    throw InvalidArgument("dropout: p_drop must be in [0, 1)");
  if (mode == RunMode::eval || p_drop == 0.0) return x;  // exact identity
  const Grid& xv = value(x);
  auto mask = std::make_shared<std::vector<double>>(xv.numel());
  const double keep_scale = 1.0 / (1.0 - p_drop);
  Grid out(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const double m = rng.uniform01() < p_drop ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  const int ix = x.id;
  return push(std::move(out), rg(x), [ix, mask](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const Grid& dy = t.nodes_[self].grad;
    Grid& dx = t.grad_buf(ix);
    for (std::size_t i = 0; i < dy.numel(); ++i)
      dx[i] += dy[i] * (*mask)[i];
  });
}

Tape::Var Tape::flatten(Var x) {
  const Grid& xv = value(x);
  require(xv.ndim() >= 2, "flatten: input must have a batch axis");
  const std::size_t batch = xv.shape[0];
  const std::size_t rest = xv.numel() / batch;
  Grid out({batch, rest});
  out.values = xv.values;  // identical row-major storage
  const int ix = x.id;
  return push(std::move(out), rg(x), [ix](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const Grid& dy = t.nodes_[self].grad;
    Grid& dx = t.grad_buf(ix);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
  });
}

Tape::Var Tape::concat_depth(const std::vector<Var>& xs) {
  require(!xs.empty(), "concat_depth: no inputs");
  const Grid& first = value(xs[0]);
  require(first.ndim() == 4, "concat_depth: inputs must be 4-D");
  const std::size_t n = first.shape[0];
  const std::size_t h = first.shape[2];
  const std::size_t w = first.shape[3];
  std::size_t total_c = 0;
  bool need = false;
  for (Var v : xs) {
    const Grid& g = value(v);
    require(g.ndim() == 4 && g.shape[0] == n && g.shape[2] == h &&
                g.shape[3] == w,
            "concat_depth: incompatible shapes");
    total_c += g.shape[1];
    need = need || rg(v);
  }
  Grid out({n, total_c, h, w});
  const std::size_t hw = h * w;
  std::vector<int> ids;
  std::vector<std::size_t> depths;
  std::size_t c_off = 0;
  for (Var v : xs) {
    const Grid& g = value(v);
    const std::size_t ci = g.shape[1];
    for (std::size_t b = 0; b < n; ++b)
      std::copy(g.values.begin() + static_cast<std::ptrdiff_t>(b * ci * hw),
                g.values.begin() + static_cast<std::ptrdiff_t>((b + 1) * ci * hw),
                out.values.begin() +
                    static_cast<std::ptrdiff_t>((b * total_c + c_off) * hw));
    ids.push_back(v.id);
    depths.push_back(ci);
    c_off += ci;
  }
  return push(std::move(out), need,
              [ids, depths, n, hw, total_c](Tape& t, int self) {
                const Grid& dy = t.nodes_[self].grad;
                std::size_t c_off = 0;
                for (std::size_t i = 0; i < ids.size(); ++i) {
                  const std::size_t ci = depths[i];
                  if (t.nodes_[ids[i]].requires_grad) {
                    Grid& dx = t.grad_buf(ids[i]);
                    for (std::size_t b = 0; b < n; ++b)
                      for (std::size_t j = 0; j < ci * hw; ++j)
                        dx[b * ci * hw + j] +=
                            dy[(b * total_c + c_off) * hw + j];
                  }
                  c_off += ci;
                }
              });
}

Tape::Var Tape::dense(Var x, Var w, Var b) {
  const Grid& xv = value(x);
  const Grid& wv = value(w);
  const Grid& bv = value(b);
  require(xv.ndim() == 2 && wv.ndim() == 2 && xv.cols() == wv.rows(),
          "dense: incompatible shapes");
  require(bv.numel() == wv.cols(), "dense: bias size mismatch");
  Grid out({xv.rows(), wv.cols()});
  map2d(out).noalias() = cmap2d(xv) * cmap2d(wv);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv[c];
  const int ix = x.id, iw = w.id, ib = b.id;
  const bool need = rg(x) || rg(w) || rg(b);
  return push(std::move(out), need, [ix, iw, ib](Tape& t, int self) {
    const CMapRM dy = cmap2d(t.nodes_[self].grad);
    const Grid& xvv = t.nodes_[ix].value;
    const Grid& wvv = t.nodes_[iw].value;
    if (t.nodes_[iw].requires_grad)
      map2d(t.grad_buf(iw)).noalias() += cmap2d(xvv).transpose() * dy;
    if (t.nodes_[ix].requires_grad)
      map2d(t.grad_buf(ix)).noalias() += dy * cmap2d(wvv).transpose();
    if (t.nodes_[ib].requires_grad) {
      Grid& db = t.grad_buf(ib);
      for (Eigen::Index c = 0; c < dy.cols(); ++c) db[c] += dy.col(c).sum();
    }
  });
}

Tape::Var Tape::softmax_rows(Var x) {
  const Grid& xv = value(x);
  require(xv.ndim() == 2, "softmax_rows: input must be 2-D");
  if (!xv.all_finite()) throw NumericError("softmax_rows: non-finite logits");
  Grid out(xv.shape);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = xv.at(r, 0);
    for (std::size_t c = 1; c < xv.cols(); ++c) mx = std::max(mx, xv.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      const double e = std::exp(xv.at(r, c) - mx);
      out.at(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) out.at(r, c) /= sum;
  }
  const int ix = x.id;
  return push(std::move(out), rg(x), [ix](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const Grid& y = t.nodes_[self].value;
    const Grid& dy = t.nodes_[self].grad;
    Grid& dx = t.grad_buf(ix);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c)
        dot += dy.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c)
        dx.at(r, c) += y.at(r, c) * (dy.at(r, c) - dot);
    }
  });
}

Tape::Var Tape::cross_entropy_logits(Var logits,
                                     const std::vector<int>& targets) {
  const Grid& zv = value(logits);
  require(zv.ndim() == 2, "cross_entropy: logits must be 2-D");
  require(targets.size() == zv.rows(), "cross_entropy: target count mismatch");
  if (!zv.all_finite()) throw NumericError("cross_entropy: non-finite logits");
  const std::size_t n = zv.rows();
  const std::size_t k = zv.cols();
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw InvalidArgument("cross_entropy: target class out of range");

  auto probs = std::make_shared<Grid>(zv.shape);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double mx = zv.at(r, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, zv.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double e = std::exp(zv.at(r, c) - mx);
      probs->at(r, c) = e;
      sum += e;
    }
    const double lse = mx + std::log(sum);
    for (std::size_t c = 0; c < k; ++c) probs->at(r, c) /= sum;
    loss += lse - zv.at(r, static_cast<std::size_t>(targets[r]));
  }
  loss /= static_cast<double>(n);
  if (!std::isfinite(loss)) throw NumericError("cross_entropy: loss overflow");

  const int iz = logits.id;
  auto tg = std::make_shared<std::vector<int>>(targets);
  return push(Grid::scalar(loss), rg(logits), [iz, probs, tg](Tape& t,
                                                              int self) {
    if (!t.nodes_[iz].requires_grad) return;
    const double g = t.nodes_[self].grad[0];
    Grid& dz = t.grad_buf(iz);
    const std::size_t n = probs->rows();
    const std::size_t k = probs->cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < k; ++c) {
        const double onehot =
            c == static_cast<std::size_t>((*tg)[r]) ? 1.0 : 0.0;
        dz.at(r, c) += g * (probs->at(r, c) - onehot) * inv_n;
      }
  });
}

Tape::Var Tape::sum(Var x) {
  const Grid& xv = value(x);
  double acc = 0.0;
  for (double v : xv.values) acc += v;
  const int ix = x.id;
  return push(Grid::scalar(acc), rg(x), [ix](Tape& t, int self) {
    if (!t.nodes_[ix].requires_grad) return;
    const double g = t.nodes_[self].grad[0];
    Grid& dx = t.grad_buf(ix);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += g;
  });
}

}  // namespace oescn
