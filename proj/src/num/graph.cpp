#include "ctaf/num/graph.hpp"

#include <cmath>
#include <cstring>

#include "ctaf/common/errors.hpp"
#include "ctaf/kern/kernels.hpp"

namespace ctaf::num {
namespace {

enum class Op {
  Leaf, Const,
  Add, Sub, Mul, Scale, AddScalar,
  Exp, Log, Sqrt, Sigmoid, Gelu, Relu,
  Matmul, MatmulNT, MatmulTN, Bmm, BmmNT, AddBias,
  Reshape, ConcatLast, SplitHeads, MergeHeads,
  SumAll, MeanAll, SumLast, SumRows, MeanRows, SubRowvec, SumMid, Diag2D,
  HeadMean, LogsumexpRows,
  MaskedSoftmax, MaskedMeanTokens, PoolWeighted, L2NormRows,
  Conv1DMasked, LayerNorm,
};

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Sigmoid: return "sigmoid";
    case Op::Gelu: return "gelu";
    case Op::Relu: return "relu";
    case Op::Matmul: return "matmul";
    case Op::MatmulNT: return "matmul_nt";
    case Op::MatmulTN: return "matmul_tn";
    case Op::Bmm: return "bmm";
    case Op::BmmNT: return "bmm_nt";
    case Op::AddBias: return "add_bias";
    case Op::Reshape: return "reshape";
    case Op::ConcatLast: return "concat_last";
    case Op::SplitHeads: return "split_heads";
    case Op::MergeHeads: return "merge_heads";
    case Op::SumAll: return "sum_all";
    case Op::MeanAll: return "mean_all";
    case Op::SumLast: return "sum_last";
    case Op::SumRows: return "sum_rows";
    case Op::MeanRows: return "mean_rows";
    case Op::SubRowvec: return "sub_rowvec";
    case Op::SumMid: return "sum_mid";
    case Op::Diag2D: return "diag2d";
    case Op::HeadMean: return "head_mean";
    case Op::LogsumexpRows: return "logsumexp_rows";
    case Op::MaskedSoftmax: return "masked_softmax";
    case Op::MaskedMeanTokens: return "masked_mean_tokens";
    case Op::PoolWeighted: return "pool_weighted";
    case Op::L2NormRows: return "l2norm_rows";
    case Op::Conv1DMasked: return "conv1d_masked";
    case Op::LayerNorm: return "layer_norm";
  }
  return "?";
}

std::size_t rows_of(const Tensor& t) {
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < t.rank(); ++i) r *= t.dim(i);
  return r;
}

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
constexpr double kL2Eps = 1e-24;

// Valid-tap fraction compensation for the masked conv: k / max(valid, 1).
Tensor conv_factor(const Tensor& mask, int k) {
  const std::size_t B = mask.dim(0), S = mask.dim(1);
  const int r = k / 2;
  Tensor f({B, S});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < S; ++i) {
      int valid = 0;
      for (int o = -r; o <= r; ++o) {
        const long src = static_cast<long>(i) + o;
        if (src >= 0 && src < static_cast<long>(S) &&
            mask.at2(b, static_cast<std::size_t>(src)) != 0.0)
          ++valid;
      }
      f.at2(b, i) = static_cast<double>(k) / (valid > 0 ? valid : 1);
    }
  return f;
}

}  // namespace

struct Graph::Node {
  Op op = Op::Leaf;
  Tensor val;
  Tensor grad;
  Tensor aux;   // op-specific saved state (mask copy, tanh values, ...)
  int a = -1, b = -1, c = -1;
  double d0 = 0.0;
  int i0 = 0;
  bool has_grad = false;
  bool needs_grad = false;
  std::string tg;
};

Graph::Graph(GraphOptions opts) : opts_(opts) { nodes_.reserve(1024); }

Graph::~Graph() = default;

std::size_t Graph::num_nodes() const { return nodes_.size(); }

Graph::Node& Graph::node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
const Graph::Node& Graph::node(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Graph::push(Node n) {
  if (n.op != Op::Leaf && n.op != Op::Const) {
    n.needs_grad = (n.a >= 0 && nodes_[n.a].needs_grad) ||
                   (n.b >= 0 && nodes_[n.b].needs_grad) ||
                   (n.c >= 0 && nodes_[n.c].needs_grad);
  }
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  check_output(id);
  return Var{id};
}

void Graph::check_output(int id) {
  if (!opts_.check_finite) return;
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.val.all_finite())
    throw NumericError("non-finite value in graph node #" + std::to_string(id) +
                       " (" + op_name(n.op) + (n.tg.empty() ? "" : " '" + n.tg + "'") + ")");
}

Tensor& Graph::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.val.shape());
    n.has_grad = true;
  }
  return n.grad;
}

namespace {
void require(bool cond, const char* what) {
  if (!cond) throw NumericError(std::string("graph: ") + what);
}
}  // namespace

// --- inputs ---------------------------------------------------------------

Var Graph::leaf(Tensor value, bool needs_grad, std::string tag) {
  Node n;
  n.op = Op::Leaf;
  n.val = std::move(value);
  n.needs_grad = needs_grad;
  n.tg = std::move(tag);
  return push(std::move(n));
}

Var Graph::constant(Tensor value, std::string tag) {
  Node n;
  n.op = Op::Const;
  n.val = std::move(value);
  n.tg = std::move(tag);
  return push(std::move(n));
}

// --- elementwise ------------------------------------------------------------

Var Graph::add(Var a, Var b) {
  const Tensor& x = node(a).val;
  const Tensor& y = node(b).val;
  require(x.same_shape(y), "add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor::uninit(x.shape());
  kern::active().add(x.data(), y.data(), n.val.data(), x.numel());
  return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = node(a).val;
  const Tensor& y = node(b).val;
  require(x.same_shape(y), "sub: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor::uninit(x.shape());
  kern::active().sub(x.data(), y.data(), n.val.data(), x.numel());
  return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
  const Tensor& x = node(a).val;
  const Tensor& y = node(b).val;
  require(x.same_shape(y), "mul: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor::uninit(x.shape());
  kern::active().mul(x.data(), y.data(), n.val.data(), x.numel());
  return push(std::move(n));
}

Var Graph::scale(Var a, double c) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.d0 = c;
  n.val = Tensor::uninit(x.shape());
  kern::active().scale(x.data(), c, n.val.data(), x.numel());
  return push(std::move(n));
}

Var Graph::add_scalar(Var a, double c) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::AddScalar;
  n.a = a.id;
  n.d0 = c;
  n.val = Tensor::uninit(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) n.val[i] = x[i] + c;
  return push(std::move(n));
}

Var Graph::exp(Var a) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::Exp;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  kern::active().vexp(x.data(), n.val.data(), x.numel());
  return push(std::move(n));
}

Var Graph::log(Var a) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::Log;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) n.val[i] = std::log(x[i]);
  return push(std::move(n));
}

Var Graph::sqrt(Var a) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::Sqrt;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) n.val[i] = std::sqrt(x[i]);
  return push(std::move(n));
}

Var Graph::sigmoid(Var a) {
  const Tensor& x = node(a).val;
  const std::size_t m = x.numel();
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  std::vector<double> buf(m);
  kern::active().scale(x.data(), -1.0, buf.data(), m);
  kern::active().vexp(buf.data(), buf.data(), m);
  for (std::size_t i = 0; i < m; ++i) n.val[i] = 1.0 / (1.0 + buf[i]);
  return push(std::move(n));
}

Var Graph::gelu(Var a) {
  const Tensor& x = node(a).val;
  const std::size_t m = x.numel();
  Node n;
  n.op = Op::Gelu;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  n.aux = Tensor::uninit(x.shape());  // tanh values, reused by backward
  std::vector<double> buf(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double xx = x[i];
    buf[i] = 2.0 * kGeluC0 * (xx + kGeluC1 * xx * xx * xx);
  }
  kern::active().vexp(buf.data(), buf.data(), m);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = 1.0 - 2.0 / (buf[i] + 1.0);
    n.aux[i] = t;
    n.val[i] = 0.5 * x[i] * (1.0 + t);
  }
  return push(std::move(n));
}

Var Graph::relu(Var a) {
  const Tensor& x = node(a).val;
  Node n;
  n.op = Op::Relu;
  n.a = a.id;
  n.val = Tensor::uninit(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) n.val[i] = x[i] > 0.0 ? x[i] : 0.0;
  return push(std::move(n));
}

// --- linear algebra ---------------------------------------------------------

Var Graph::matmul(Var x, Var w) {
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(w).val;
  require(xv.rank() >= 2 && wv.rank() == 2, "matmul: rank");
  const std::size_t K = xv.dim(xv.rank() - 1);
  require(wv.dim(0) == K, "matmul: inner dim mismatch");
  const std::size_t R = rows_of(xv);
  const std::size_t M = wv.dim(1);
  std::vector<std::size_t> oshape = xv.shape();
  oshape.back() = M;
  Node n;
  n.op = Op::Matmul;
  n.a = x.id;
  n.b = w.id;
  n.val = Tensor(std::move(oshape));
  kern::active().gemm_nn(xv.data(), wv.data(), n.val.data(), R, K, M);
  return push(std::move(n));
}

Var Graph::matmul_nt(Var x, Var y) {
  const Tensor& xv = node(x).val;
  const Tensor& yv = node(y).val;
  require(xv.rank() == 2 && yv.rank() == 2, "matmul_nt: rank");
  require(xv.dim(1) == yv.dim(1), "matmul_nt: inner dim mismatch");
  Node n;
  n.op = Op::MatmulNT;
  n.a = x.id;
  n.b = y.id;
  n.val = Tensor({xv.dim(0), yv.dim(0)});
  kern::active().gemm_nt(xv.data(), yv.data(), n.val.data(), xv.dim(0),
                         xv.dim(1), yv.dim(0));
  return push(std::move(n));
}

Var Graph::matmul_tn(Var x, Var y) {
  const Tensor& xv = node(x).val;
  const Tensor& yv = node(y).val;
  require(xv.rank() == 2 && yv.rank() == 2, "matmul_tn: rank");
  require(xv.dim(0) == yv.dim(0), "matmul_tn: row count mismatch");
  Node n;
  n.op = Op::MatmulTN;
  n.a = x.id;
  n.b = y.id;
  n.val = Tensor({xv.dim(1), yv.dim(1)});
  kern::active().gemm_tn(xv.data(), yv.data(), n.val.data(), xv.dim(0),
                         xv.dim(1), yv.dim(1));
  return push(std::move(n));
}

Var Graph::bmm(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 3 && bv.rank() == 3, "bmm: rank");
  require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1), "bmm: shape");
  const std::size_t G = av.dim(0), S = av.dim(1), T = av.dim(2), D = bv.dim(2);
  Node n;
  n.op = Op::Bmm;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor({G, S, D});
  for (std::size_t g = 0; g < G; ++g)
    kern::active().gemm_nn(av.data() + g * S * T, bv.data() + g * T * D,
                           n.val.data() + g * S * D, S, T, D);
  return push(std::move(n));
}

Var Graph::bmm_nt(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == 3 && bv.rank() == 3, "bmm_nt: rank");
  require(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2), "bmm_nt: shape");
  const std::size_t G = av.dim(0), S = av.dim(1), D = av.dim(2), T = bv.dim(1);
  Node n;
  n.op = Op::BmmNT;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor({G, S, T});
  for (std::size_t g = 0; g < G; ++g)
    kern::active().gemm_nt(av.data() + g * S * D, bv.data() + g * T * D,
                           n.val.data() + g * S * T, S, D, T);
  return push(std::move(n));
}

Var Graph::add_bias(Var x, Var b) {
  const Tensor& xv = node(x).val;
  const Tensor& bv = node(b).val;
  require(bv.rank() == 1, "add_bias: bias must be rank 1");
  const std::size_t D = xv.dim(xv.rank() - 1);
  require(bv.dim(0) == D, "add_bias: dim mismatch");
  const std::size_t R = rows_of(xv);
  Node n;
  n.op = Op::AddBias;
  n.a = x.id;
  n.b = b.id;
  n.val = Tensor::uninit(xv.shape());
  for (std::size_t r = 0; r < R; ++r)
    kern::active().add(xv.data() + r * D, bv.data(), n.val.data() + r * D, D);
  return push(std::move(n));
}

// --- shape ------------------------------------------------------------------

Var Graph::reshape(Var x, std::vector<std::size_t> shape) {
  const Tensor& xv = node(x).val;
  std::size_t m = 1;
  for (std::size_t d : shape) m *= d;
  require(m == xv.numel(), "reshape: numel mismatch");
  Node n;
  n.op = Op::Reshape;
  n.a = x.id;
  n.val = Tensor(std::move(shape));
  std::memcpy(n.val.data(), xv.data(), xv.numel() * sizeof(double));
  return push(std::move(n));
}

Var Graph::concat_last(Var a, Var b) {
  const Tensor& av = node(a).val;
  const Tensor& bv = node(b).val;
  require(av.rank() == bv.rank() && av.rank() >= 1, "concat_last: rank");
  for (std::size_t i = 0; i + 1 < av.rank(); ++i)
    require(av.dim(i) == bv.dim(i), "concat_last: leading dims");
  const std::size_t R = rows_of(av);
  const std::size_t Da = av.dim(av.rank() - 1), Db = bv.dim(bv.rank() - 1);
  std::vector<std::size_t> oshape = av.shape();
  oshape.back() = Da + Db;
  Node n;
  n.op = Op::ConcatLast;
  n.a = a.id;
  n.b = b.id;
  n.i0 = static_cast<int>(Da);
  n.val = Tensor(std::move(oshape));
  for (std::size_t r = 0; r < R; ++r) {
    std::memcpy(n.val.data() + r * (Da + Db), av.data() + r * Da,
                Da * sizeof(double));
    std::memcpy(n.val.data() + r * (Da + Db) + Da, bv.data() + r * Db,
                Db * sizeof(double));
  }
  return push(std::move(n));
}

Var Graph::split_heads(Var x, int heads) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 3, "split_heads: rank");
  const std::size_t B = xv.dim(0), S = xv.dim(1), D = xv.dim(2);
  require(heads > 0 && D % static_cast<std::size_t>(heads) == 0,
          "split_heads: dim not divisible by heads");
  const std::size_t h = static_cast<std::size_t>(heads), dh = D / h;
  Node n;
  n.op = Op::SplitHeads;
  n.a = x.id;
  n.i0 = heads;
  n.val = Tensor({B * h, S, dh});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t s = 0; s < S; ++s)
        std::memcpy(n.val.data() + (((b * h + a) * S) + s) * dh,
                    xv.data() + (b * S + s) * D + a * dh, dh * sizeof(double));
  return push(std::move(n));
}

Var Graph::merge_heads(Var x, int heads) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 3, "merge_heads: rank");
  const std::size_t h = static_cast<std::size_t>(heads);
  require(heads > 0 && xv.dim(0) % h == 0, "merge_heads: batch not divisible");
  const std::size_t B = xv.dim(0) / h, S = xv.dim(1), dh = xv.dim(2);
  Node n;
  n.op = Op::MergeHeads;
  n.a = x.id;
  n.i0 = heads;
  n.val = Tensor({B, S, h * dh});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t s = 0; s < S; ++s)
        std::memcpy(n.val.data() + (b * S + s) * h * dh + a * dh,
                    xv.data() + (((b * h + a) * S) + s) * dh,
                    dh * sizeof(double));
  return push(std::move(n));
}

// --- reductions ---------------------------------------------------------------

Var Graph::sum_all(Var x) {
  const Tensor& xv = node(x).val;
  Node n;
  n.op = Op::SumAll;
  n.a = x.id;
  n.val = Tensor::scalar(kern::active().sum(xv.data(), xv.numel()));
  return push(std::move(n));
}

Var Graph::mean_all(Var x) {
  const Tensor& xv = node(x).val;
  Node n;
  n.op = Op::MeanAll;
  n.a = x.id;
  n.val = Tensor::scalar(kern::active().sum(xv.data(), xv.numel()) /
                         static_cast<double>(xv.numel()));
  return push(std::move(n));
}

Var Graph::sum_last(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() >= 2, "sum_last: rank");
  const std::size_t C = xv.dim(xv.rank() - 1);
  const std::size_t R = rows_of(xv);
  std::vector<std::size_t> oshape(xv.shape().begin(), xv.shape().end() - 1);
  Node n;
  n.op = Op::SumLast;
  n.a = x.id;
  n.val = Tensor(std::move(oshape));
  for (std::size_t r = 0; r < R; ++r)
    n.val[r] = kern::active().sum(xv.data() + r * C, C);
  return push(std::move(n));
}

Var Graph::sum_rows(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 2, "sum_rows: rank");
  const std::size_t R = xv.dim(0), D = xv.dim(1);
  Node n;
  n.op = Op::SumRows;
  n.a = x.id;
  n.val = Tensor({D});
  for (std::size_t r = 0; r < R; ++r)
    kern::active().axpy(1.0, xv.data() + r * D, n.val.data(), D);
  return push(std::move(n));
}

Var Graph::mean_rows(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 2, "mean_rows: rank");
  const std::size_t R = xv.dim(0), D = xv.dim(1);
  Node n;
  n.op = Op::MeanRows;
  n.a = x.id;
  n.val = Tensor({D});
  const double inv = 1.0 / static_cast<double>(R);
  for (std::size_t r = 0; r < R; ++r)
    kern::active().axpy(inv, xv.data() + r * D, n.val.data(), D);
  return push(std::move(n));
}

Var Graph::sub_rowvec(Var x, Var v) {
  const Tensor& xv = node(x).val;
  const Tensor& vv = node(v).val;
  require(xv.rank() == 2 && vv.rank() == 1, "sub_rowvec: rank");
  require(xv.dim(1) == vv.dim(0), "sub_rowvec: dim mismatch");
  const std::size_t R = xv.dim(0), D = xv.dim(1);
  Node n;
  n.op = Op::SubRowvec;
  n.a = x.id;
  n.b = v.id;
  n.val = Tensor::uninit(xv.shape());
  for (std::size_t r = 0; r < R; ++r)
    kern::active().sub(xv.data() + r * D, vv.data(), n.val.data() + r * D, D);
  return push(std::move(n));
}

Var Graph::sum_mid(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 3, "sum_mid: rank");
  const std::size_t B = xv.dim(0), S = xv.dim(1), T = xv.dim(2);
  Node n;
  n.op = Op::SumMid;
  n.a = x.id;
  n.val = Tensor({B, T});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s)
      kern::active().axpy(1.0, xv.data() + (b * S + s) * T,
                          n.val.data() + b * T, T);
  return push(std::move(n));
}

Var Graph::diag2d(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 2 && xv.dim(0) == xv.dim(1), "diag2d: square rank-2");
  const std::size_t N = xv.dim(0);
  Node n;
  n.op = Op::Diag2D;
  n.a = x.id;
  n.val = Tensor({N});
  for (std::size_t i = 0; i < N; ++i) n.val[i] = xv.at2(i, i);
  return push(std::move(n));
}

Var Graph::head_mean(Var x, int heads) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 3, "head_mean: rank");
  const std::size_t h = static_cast<std::size_t>(heads);
  require(heads > 0 && xv.dim(0) % h == 0, "head_mean: batch not divisible");
  const std::size_t B = xv.dim(0) / h, S = xv.dim(1), T = xv.dim(2);
  Node n;
  n.op = Op::HeadMean;
  n.a = x.id;
  n.i0 = heads;
  n.val = Tensor({B, S, T});
  const double inv = 1.0 / static_cast<double>(h);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t a = 0; a < h; ++a)
      kern::active().axpy(inv, xv.data() + (b * h + a) * S * T,
                          n.val.data() + b * S * T, S * T);
  return push(std::move(n));
}

Var Graph::logsumexp_rows(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 2, "logsumexp_rows: rank");
  const std::size_t R = xv.dim(0), C = xv.dim(1);
  Node n;
  n.op = Op::LogsumexpRows;
  n.a = x.id;
  n.val = Tensor({R});
  std::vector<double> buf(C);
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = xv.data() + r * C;
    double mx = row[0];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    for (std::size_t j = 0; j < C; ++j) buf[j] = row[j] - mx;
    kern::active().vexp(buf.data(), buf.data(), C);
    n.val[r] = mx + std::log(kern::active().sum(buf.data(), C));
  }
  return push(std::move(n));
}

// --- masked / sequence ops ----------------------------------------------------

Var Graph::masked_softmax(Var x, const Tensor& keymask, int heads) {
  const Tensor& xv = node(x).val;
  require(xv.rank() == 3, "masked_softmax: rank");
  const std::size_t G = xv.dim(0), S = xv.dim(1), C = xv.dim(2);
  const std::size_t h = static_cast<std::size_t>(heads);
  require(heads > 0 && G % h == 0, "masked_softmax: batch not divisible");
  require(keymask.rank() == 2 && keymask.dim(0) == G / h && keymask.dim(1) == C,
          "masked_softmax: mask shape");
  Node n;
  n.op = Op::MaskedSoftmax;
  n.a = x.id;
  n.i0 = heads;
  n.val = Tensor(xv.shape());
  // Shifted logits for every row, with masked keys forced to a value whose
  // exp clamps to exactly 0; then one big vexp and per-row normalization.
  Tensor& out = n.val;
  std::vector<double> buf(xv.numel());
  const std::size_t rows = G * S;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t b = r / (h * S);
    const double* row = xv.data() + r * C;
    const double* mrow = keymask.data() + b * C;
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < C; ++j)
      if (mrow[j] != 0.0) {
        any = true;
        mx = std::max(mx, row[j]);
      }
    double* brow = buf.data() + r * C;
    if (!any) {
      for (std::size_t j = 0; j < C; ++j) brow[j] = -1e30;
      continue;
    }
    for (std::size_t j = 0; j < C; ++j)
      brow[j] = mrow[j] != 0.0 ? row[j] - mx : -1e30;
  }
  kern::active().vexp(buf.data(), buf.data(), xv.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double* brow = buf.data() + r * C;
    const double s = kern::active().sum(brow, C);
    double* orow = out.data() + r * C;
    if (s > 0.0)
      kern::active().scale(brow, 1.0 / s, orow, C);
    // else: all keys invalid, row stays exactly zero
  }
  return push(std::move(n));
}

Var Graph::masked_mean_tokens(Var h, const Tensor& mask, double eps) {
  const Tensor& hv = node(h).val;
  require(hv.rank() == 3, "masked_mean_tokens: rank");
  const std::size_t B = hv.dim(0), S = hv.dim(1), D = hv.dim(2);
  require(mask.rank() == 2 && mask.dim(0) == B && mask.dim(1) == S,
          "masked_mean_tokens: mask shape");
  Node n;
  n.op = Op::MaskedMeanTokens;
  n.a = h.id;
  n.d0 = eps;
  n.aux = mask;
  n.val = Tensor({B, D});
  for (std::size_t b = 0; b < B; ++b) {
    double cnt = 0.0;
    for (std::size_t i = 0; i < S; ++i) {
      if (mask.at2(b, i) != 0.0) {
        kern::active().axpy(1.0, hv.data() + (b * S + i) * D,
                            n.val.data() + b * D, D);
        cnt += 1.0;
      }
    }
    kern::active().scale(n.val.data() + b * D, 1.0 / (cnt + eps),
                         n.val.data() + b * D, D);
  }
  return push(std::move(n));
}

Var Graph::pool_weighted(Var h, Var alpha) {
  const Tensor& hv = node(h).val;
  const Tensor& av = node(alpha).val;
  require(hv.rank() == 3, "pool_weighted: rank");
  const std::size_t B = hv.dim(0), S = hv.dim(1), D = hv.dim(2);
  require(av.rank() == 2 && av.dim(0) == B && av.dim(1) == S,
          "pool_weighted: weight shape");
  Node n;
  n.op = Op::PoolWeighted;
  n.a = h.id;
  n.b = alpha.id;
  n.val = Tensor({B, D});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < S; ++i) {
      const double w = av.at2(b, i);
      if (w != 0.0)
        kern::active().axpy(w, hv.data() + (b * S + i) * D,
                            n.val.data() + b * D, D);
    }
  return push(std::move(n));
}

Var Graph::l2norm_rows(Var x) {
  const Tensor& xv = node(x).val;
  require(xv.rank() >= 2, "l2norm_rows: rank");
  const std::size_t D = xv.dim(xv.rank() - 1);
  const std::size_t R = rows_of(xv);
  Node n;
  n.op = Op::L2NormRows;
  n.a = x.id;
  n.val = Tensor(xv.shape());
  n.aux = Tensor({R});  // 1/norm per row
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = xv.data() + r * D;
    const double inv =
        1.0 / std::sqrt(kern::active().dot(row, row, D) + kL2Eps);
    n.aux[r] = inv;
    kern::active().scale(row, inv, n.val.data() + r * D, D);
  }
  return push(std::move(n));
}

Var Graph::conv1d_masked(Var x, const Tensor& mask, Var w) {
  const Tensor& xv = node(x).val;
  const Tensor& wv = node(w).val;
  require(xv.rank() == 3 && wv.rank() == 3, "conv1d_masked: rank");
  const std::size_t B = xv.dim(0), S = xv.dim(1), D = xv.dim(2);
  require(mask.rank() == 2 && mask.dim(0) == B && mask.dim(1) == S,
          "conv1d_masked: mask shape");
  require(wv.dim(1) == D && wv.dim(0) % 2 == 1, "conv1d_masked: weight shape");
  const int k = static_cast<int>(wv.dim(0));
  const int r = k / 2;
  const std::size_t Dout = wv.dim(2);
  Node n;
  n.op = Op::Conv1DMasked;
  n.a = x.id;
  n.b = w.id;
  n.aux = mask;
  n.val = Tensor({B, S, Dout});
  const Tensor factor = conv_factor(mask, k);
  Tensor gather({B * S, D});
  for (int o = -r; o <= r; ++o) {
    gather.fill(0.0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < S; ++i) {
        const long src = static_cast<long>(i) + o;
        if (src < 0 || src >= static_cast<long>(S)) continue;
        if (mask.at2(b, static_cast<std::size_t>(src)) == 0.0) continue;
        kern::active().axpy(factor.at2(b, i),
                            xv.data() + (b * S + static_cast<std::size_t>(src)) * D,
                            gather.data() + (b * S + i) * D, D);
      }
    kern::active().gemm_nn(gather.data(),
                           wv.data() + static_cast<std::size_t>(o + r) * D * Dout,
                           n.val.data(), B * S, D, Dout);
  }
  return push(std::move(n));
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = node(x).val;
  const Tensor& gv = node(gamma).val;
  const Tensor& bv = node(beta).val;
  require(xv.rank() >= 2, "layer_norm: rank");
  const std::size_t D = xv.dim(xv.rank() - 1);
  require(gv.rank() == 1 && gv.dim(0) == D && bv.rank() == 1 && bv.dim(0) == D,
          "layer_norm: param shape");
  const std::size_t R = rows_of(xv);
  Node n;
  n.op = Op::LayerNorm;
  n.a = x.id;
  n.b = gamma.id;
  n.c = beta.id;
  n.d0 = eps;
  n.val = Tensor(xv.shape());
  n.aux = Tensor({R, 2});  // (mean, 1/std) per row
  for (std::size_t r = 0; r < R; ++r) {
    const double* row = xv.data() + r * D;
    const double mean = kern::active().sum(row, D) / static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double invstd = 1.0 / std::sqrt(var + eps);
    n.aux.at2(r, 0) = mean;
    n.aux.at2(r, 1) = invstd;
    double* orow = n.val.data() + r * D;
    for (std::size_t j = 0; j < D; ++j)
      orow[j] = gv[j] * (row[j] - mean) * invstd + bv[j];
  }
  return push(std::move(n));
}

// --- access / backward ----------------------------------------------------------

const Tensor& Graph::val(Var v) const { return node(v).val; }

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad)
    throw NumericError("graph: no gradient recorded for node #" +
                       std::to_string(v.id) + " (" + op_name(n.op) + ")");
  return n.grad;
}

bool Graph::has_grad(Var v) const { return node(v).has_grad; }

void Graph::tag(Var v, std::string t) { node(v).tg = std::move(t); }

void Graph::backward(Var root) {
  Node& rn = node(root);
  if (rn.val.numel() != 1)
    throw NumericError("graph: backward root must be scalar, got " +
                       rn.val.shape_str());
  if (!rn.needs_grad) return;
  ensure_grad(root.id)[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& nd = nodes_[static_cast<std::size_t>(id)];
    if (!nd.has_grad || !nd.needs_grad) continue;
    if (nd.op == Op::Leaf || nd.op == Op::Const) continue;
    backward_node(id);
  }
}

void Graph::backward_node(int id) {
  Node& nd = nodes_[static_cast<std::size_t>(id)];
  const Tensor& dy = nd.grad;
  const auto& K = kern::active();
  const auto needs = [&](int pid) {
    return pid >= 0 && nodes_[static_cast<std::size_t>(pid)].needs_grad;
  };
  const auto pval = [&](int pid) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(pid)].val;
  };

  switch (nd.op) {
    case Op::Leaf:
    case Op::Const:
      break;

    case Op::Add: {
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      if (needs(nd.b)) K.axpy(1.0, dy.data(), ensure_grad(nd.b).data(), dy.numel());
      break;
    }
    case Op::Sub: {
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      if (needs(nd.b)) K.axpy(-1.0, dy.data(), ensure_grad(nd.b).data(), dy.numel());
      break;
    }
    case Op::Mul: {
      if (needs(nd.a))
        K.madd(dy.data(), pval(nd.b).data(), ensure_grad(nd.a).data(), dy.numel());
      if (needs(nd.b))
        K.madd(dy.data(), pval(nd.a).data(), ensure_grad(nd.b).data(), dy.numel());
      break;
    }
    case Op::Scale: {
      if (needs(nd.a)) K.axpy(nd.d0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      break;
    }
    case Op::AddScalar: {
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      break;
    }
    case Op::Exp: {
      if (needs(nd.a))
        K.madd(dy.data(), nd.val.data(), ensure_grad(nd.a).data(), dy.numel());
      break;
    }
    case Op::Log: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      for (std::size_t i = 0; i < dy.numel(); ++i) g[i] += dy[i] / x[i];
      break;
    }
    case Op::Sqrt: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        g[i] += dy[i] * 0.5 / nd.val[i];
      break;
    }
    case Op::Sigmoid: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        const double y = nd.val[i];
        g[i] += dy[i] * y * (1.0 - y);
      }
      break;
    }
    case Op::Gelu: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        const double t = nd.aux[i];
        const double xx = x[i];
        const double inner = kGeluC0 * (1.0 + 3.0 * kGeluC1 * xx * xx);
        g[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * xx * (1.0 - t * t) * inner);
      }
      break;
    }
    case Op::Relu: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      for (std::size_t i = 0; i < dy.numel(); ++i)
        if (x[i] > 0.0) g[i] += dy[i];
      break;
    }

    case Op::Matmul: {
      const Tensor& x = pval(nd.a);
      const Tensor& w = pval(nd.b);
      const std::size_t K_ = w.dim(0), M = w.dim(1);
      const std::size_t R = rows_of(x);
      if (needs(nd.a))
        K.gemm_nt(dy.data(), w.data(), ensure_grad(nd.a).data(), R, M, K_);
      if (needs(nd.b))
        K.gemm_tn(x.data(), dy.data(), ensure_grad(nd.b).data(), R, K_, M);
      break;
    }
    case Op::MatmulNT: {
      const Tensor& x = pval(nd.a);
      const Tensor& y = pval(nd.b);
      const std::size_t R = x.dim(0), K_ = x.dim(1), N = y.dim(0);
      if (needs(nd.a))
        K.gemm_nn(dy.data(), y.data(), ensure_grad(nd.a).data(), R, N, K_);
      if (needs(nd.b))
        K.gemm_tn(dy.data(), x.data(), ensure_grad(nd.b).data(), R, N, K_);
      break;
    }
    case Op::MatmulTN: {
      const Tensor& x = pval(nd.a);
      const Tensor& y = pval(nd.b);
      const std::size_t R = x.dim(0), D = x.dim(1), E = y.dim(1);
      if (needs(nd.a))
        K.gemm_nt(y.data(), dy.data(), ensure_grad(nd.a).data(), R, E, D);
      if (needs(nd.b))
        K.gemm_nn(x.data(), dy.data(), ensure_grad(nd.b).data(), R, D, E);
      break;
    }
    case Op::Bmm: {
      const Tensor& a = pval(nd.a);
      const Tensor& b = pval(nd.b);
      const std::size_t G = a.dim(0), S = a.dim(1), T = a.dim(2), D = b.dim(2);
      if (needs(nd.a)) {
        Tensor& g = ensure_grad(nd.a);
        for (std::size_t gi = 0; gi < G; ++gi)
          K.gemm_nt(dy.data() + gi * S * D, b.data() + gi * T * D,
                    g.data() + gi * S * T, S, D, T);
      }
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t gi = 0; gi < G; ++gi)
          K.gemm_tn(a.data() + gi * S * T, dy.data() + gi * S * D,
                    g.data() + gi * T * D, S, T, D);
      }
      break;
    }
    case Op::BmmNT: {
      const Tensor& a = pval(nd.a);
      const Tensor& b = pval(nd.b);
      const std::size_t G = a.dim(0), S = a.dim(1), D = a.dim(2), T = b.dim(1);
      if (needs(nd.a)) {
        Tensor& g = ensure_grad(nd.a);
        for (std::size_t gi = 0; gi < G; ++gi)
          K.gemm_nn(dy.data() + gi * S * T, b.data() + gi * T * D,
                    g.data() + gi * S * D, S, T, D);
      }
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t gi = 0; gi < G; ++gi)
          K.gemm_tn(dy.data() + gi * S * T, a.data() + gi * S * D,
                    g.data() + gi * T * D, S, T, D);
      }
      break;
    }
    case Op::AddBias: {
      const std::size_t D = pval(nd.b).dim(0);
      const std::size_t R = dy.numel() / D;
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t r = 0; r < R; ++r)
          K.axpy(1.0, dy.data() + r * D, g.data(), D);
      }
      break;
    }

    case Op::Reshape: {
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      break;
    }
    case Op::ConcatLast: {
      const std::size_t Da = static_cast<std::size_t>(nd.i0);
      const std::size_t Dtot = nd.val.dim(nd.val.rank() - 1);
      const std::size_t Db = Dtot - Da;
      const std::size_t R = dy.numel() / Dtot;
      if (needs(nd.a)) {
        Tensor& g = ensure_grad(nd.a);
        for (std::size_t r = 0; r < R; ++r)
          K.axpy(1.0, dy.data() + r * Dtot, g.data() + r * Da, Da);
      }
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t r = 0; r < R; ++r)
          K.axpy(1.0, dy.data() + r * Dtot + Da, g.data() + r * Db, Db);
      }
      break;
    }
    case Op::SplitHeads: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      const std::size_t h = static_cast<std::size_t>(nd.i0);
      const std::size_t B = x.dim(0), S = x.dim(1), D = x.dim(2), dh = D / h;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < h; ++a)
          for (std::size_t s = 0; s < S; ++s)
            K.axpy(1.0, dy.data() + (((b * h + a) * S) + s) * dh,
                   g.data() + (b * S + s) * D + a * dh, dh);
      break;
    }
    case Op::MergeHeads: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t h = static_cast<std::size_t>(nd.i0);
      const std::size_t B = nd.val.dim(0), S = nd.val.dim(1);
      const std::size_t D = nd.val.dim(2), dh = D / h;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < h; ++a)
          for (std::size_t s = 0; s < S; ++s)
            K.axpy(1.0, dy.data() + (b * S + s) * D + a * dh,
                   g.data() + (((b * h + a) * S) + s) * dh, dh);
      break;
    }

    case Op::SumAll: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const double s = dy[0];
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s;
      break;
    }
    case Op::MeanAll: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const double s = dy[0] / static_cast<double>(g.numel());
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s;
      break;
    }
    case Op::SumLast: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      const std::size_t C = x.dim(x.rank() - 1);
      const std::size_t R = rows_of(x);
      for (std::size_t r = 0; r < R; ++r) {
        const double s = dy[r];
        double* grow = g.data() + r * C;
        for (std::size_t j = 0; j < C; ++j) grow[j] += s;
      }
      break;
    }
    case Op::SumRows: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t D = dy.numel();
      const std::size_t R = g.numel() / D;
      for (std::size_t r = 0; r < R; ++r)
        K.axpy(1.0, dy.data(), g.data() + r * D, D);
      break;
    }
    case Op::MeanRows: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t D = dy.numel();
      const std::size_t R = g.numel() / D;
      const double inv = 1.0 / static_cast<double>(R);
      for (std::size_t r = 0; r < R; ++r)
        K.axpy(inv, dy.data(), g.data() + r * D, D);
      break;
    }
    case Op::SubRowvec: {
      const std::size_t D = pval(nd.b).dim(0);
      const std::size_t R = dy.numel() / D;
      if (needs(nd.a)) K.axpy(1.0, dy.data(), ensure_grad(nd.a).data(), dy.numel());
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t r = 0; r < R; ++r)
          K.axpy(-1.0, dy.data() + r * D, g.data(), D);
      }
      break;
    }
    case Op::SumMid: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      const std::size_t B = x.dim(0), S = x.dim(1), T = x.dim(2);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
          K.axpy(1.0, dy.data() + b * T, g.data() + (b * S + s) * T, T);
      break;
    }
    case Op::Diag2D: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t N = dy.numel();
      for (std::size_t i = 0; i < N; ++i) g[i * N + i] += dy[i];
      break;
    }
    case Op::HeadMean: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t h = static_cast<std::size_t>(nd.i0);
      const std::size_t B = nd.val.dim(0), S = nd.val.dim(1), T = nd.val.dim(2);
      const double inv = 1.0 / static_cast<double>(h);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < h; ++a)
          K.axpy(inv, dy.data() + b * S * T, g.data() + (b * h + a) * S * T,
                 S * T);
      break;
    }
    case Op::LogsumexpRows: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& x = pval(nd.a);
      const std::size_t R = x.dim(0), C = x.dim(1);
      std::vector<double> buf(C);
      for (std::size_t r = 0; r < R; ++r) {
        const double* row = x.data() + r * C;
        const double lse = nd.val[r];
        for (std::size_t j = 0; j < C; ++j) buf[j] = row[j] - lse;
        K.vexp(buf.data(), buf.data(), C);
        K.axpy(dy[r], buf.data(), g.data() + r * C, C);
      }
      break;
    }

    case Op::MaskedSoftmax: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t C = nd.val.dim(2);
      const std::size_t rows = nd.val.numel() / C;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = nd.val.data() + r * C;
        const double* dyr = dy.data() + r * C;
        double* grow = g.data() + r * C;
        const double s = K.dot(dyr, p, C);
        for (std::size_t j = 0; j < C; ++j) grow[j] += p[j] * (dyr[j] - s);
      }
      break;
    }
    case Op::MaskedMeanTokens: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const Tensor& mask = nd.aux;
      const std::size_t B = mask.dim(0), S = mask.dim(1);
      const std::size_t D = nd.val.dim(1);
      for (std::size_t b = 0; b < B; ++b) {
        double cnt = 0.0;
        for (std::size_t i = 0; i < S; ++i) cnt += mask.at2(b, i) != 0.0 ? 1.0 : 0.0;
        const double inv = 1.0 / (cnt + nd.d0);
        for (std::size_t i = 0; i < S; ++i)
          if (mask.at2(b, i) != 0.0)
            K.axpy(inv, dy.data() + b * D, g.data() + (b * S + i) * D, D);
      }
      break;
    }
    case Op::PoolWeighted: {
      const Tensor& h = pval(nd.a);
      const Tensor& al = pval(nd.b);
      const std::size_t B = h.dim(0), S = h.dim(1), D = h.dim(2);
      if (needs(nd.a)) {
        Tensor& g = ensure_grad(nd.a);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < S; ++i) {
            const double w = al.at2(b, i);
            if (w != 0.0)
              K.axpy(w, dy.data() + b * D, g.data() + (b * S + i) * D, D);
          }
      }
      if (needs(nd.b)) {
        Tensor& g = ensure_grad(nd.b);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < S; ++i)
            g.at2(b, i) += K.dot(dy.data() + b * D, h.data() + (b * S + i) * D, D);
      }
      break;
    }
    case Op::L2NormRows: {
      if (!needs(nd.a)) break;
      Tensor& g = ensure_grad(nd.a);
      const std::size_t D = nd.val.dim(nd.val.rank() - 1);
      const std::size_t R = nd.val.numel() / D;
      for (std::size_t r = 0; r < R; ++r) {
        const double* y = nd.val.data() + r * D;
        const double* dyr = dy.data() + r * D;
        double* grow = g.data() + r * D;
        const double inv = nd.aux[r];
        const double s = K.dot(y, dyr, D);
        for (std::size_t j = 0; j < D; ++j)
          grow[j] += inv * (dyr[j] - y[j] * s);
      }
      break;
    }

    case Op::Conv1DMasked: {
      const Tensor& x = pval(nd.a);
      const Tensor& w = pval(nd.b);
      const Tensor& mask = nd.aux;
      const std::size_t B = x.dim(0), S = x.dim(1), D = x.dim(2);
      const int k = static_cast<int>(w.dim(0));
      const int r = k / 2;
      const std::size_t Dout = w.dim(2);
      const Tensor factor = conv_factor(mask, k);
      Tensor gather({B * S, D});
      Tensor scratch({B * S, D});
      for (int o = -r; o <= r; ++o) {
        const std::size_t tap = static_cast<std::size_t>(o + r);
        if (needs(nd.b)) {
          gather.fill(0.0);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < S; ++i) {
              const long src = static_cast<long>(i) + o;
              if (src < 0 || src >= static_cast<long>(S)) continue;
              if (mask.at2(b, static_cast<std::size_t>(src)) == 0.0) continue;
              K.axpy(factor.at2(b, i),
                     x.data() + (b * S + static_cast<std::size_t>(src)) * D,
                     gather.data() + (b * S + i) * D, D);
            }
          K.gemm_tn(gather.data(), dy.data(),
                    ensure_grad(nd.b).data() + tap * D * Dout, B * S, D, Dout);
        }
        if (needs(nd.a)) {
          scratch.fill(0.0);
          K.gemm_nt(dy.data(), w.data() + tap * D * Dout, scratch.data(),
                    B * S, Dout, D);
          Tensor& g = ensure_grad(nd.a);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < S; ++i) {
              const long src = static_cast<long>(i) + o;
              if (src < 0 || src >= static_cast<long>(S)) continue;
              if (mask.at2(b, static_cast<std::size_t>(src)) == 0.0) continue;
              K.axpy(factor.at2(b, i), scratch.data() + (b * S + i) * D,
                     g.data() + (b * S + static_cast<std::size_t>(src)) * D, D);
            }
        }
      }
      break;
    }

    case Op::LayerNorm: {
      const Tensor& x = pval(nd.a);
      const Tensor& gv = pval(nd.b);
      const std::size_t D = gv.dim(0);
      const std::size_t R = x.numel() / D;
      Tensor* gx = needs(nd.a) ? &ensure_grad(nd.a) : nullptr;
      Tensor* gg = needs(nd.b) ? &ensure_grad(nd.b) : nullptr;
      Tensor* gb = needs(nd.c) ? &ensure_grad(nd.c) : nullptr;
      std::vector<double> xhat(D);
      for (std::size_t r = 0; r < R; ++r) {
        const double* xrow = x.data() + r * D;
        const double* dyr = dy.data() + r * D;
        const double mean = nd.aux.at2(r, 0);
        const double invstd = nd.aux.at2(r, 1);
        for (std::size_t j = 0; j < D; ++j) xhat[j] = (xrow[j] - mean) * invstd;
        if (gb) K.axpy(1.0, dyr, gb->data(), D);
        if (gg) K.madd(dyr, xhat.data(), gg->data(), D);
        if (gx) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < D; ++j) {
            const double gj = dyr[j] * gv[j];
            s1 += gj;
            s2 += gj * xhat[j];
          }
          s1 /= static_cast<double>(D);
          s2 /= static_cast<double>(D);
          double* grow = gx->data() + r * D;
          for (std::size_t j = 0; j < D; ++j)
            grow[j] += invstd * (dyr[j] * gv[j] - s1 - xhat[j] * s2);
        }
      }
      break;
    }
  }
}

}  // namespace ctaf::num
