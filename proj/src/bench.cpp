#include "amlp/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <new>
#include <numeric>
#include <ostream>
#include <sstream>

// Counting replacement of the global allocator. Each block carries a 16-byte
// header with the raw pointer and the requested size.
namespace {

std::atomic<std::uint64_t> g_current{0};
std::atomic<std::uint64_t> g_peak{0};

struct alignas(16) BlockHeader {
  void* raw;
  std::size_t size;
};
static_assert(sizeof(BlockHeader) == 16);

void* counted_alloc(std::size_t size, std::size_t align) noexcept {
  align = std::max(align, alignof(BlockHeader));
  void* raw = std::malloc(size + align + sizeof(BlockHeader));
  if (!raw) return nullptr;
  auto base = reinterpret_cast<std::uintptr_t>(raw) + sizeof(BlockHeader);
  base = (base + align - 1) & ~(std::uintptr_t(align) - 1);
  auto* h = reinterpret_cast<BlockHeader*>(base) - 1;
  h->raw = raw;
  h->size = size;
  const std::uint64_t now = g_current.fetch_add(size, std::memory_order_relaxed) + size;
  std::uint64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
  return reinterpret_cast<void*>(base);
}

void counted_free(void* p) noexcept {
  if (!p) return;
  auto* h = static_cast<BlockHeader*>(p) - 1;
  g_current.fetch_sub(h->size, std::memory_order_relaxed);
  std::free(h->raw);
}

void* checked_alloc(std::size_t size, std::size_t align) {
  void* p = counted_alloc(size, align);
  if (!p) throw std::bad_alloc();
  return p;
}

}  // namespace

void* operator new(std::size_t n) { return checked_alloc(n, alignof(std::max_align_t)); }
void* operator new[](std::size_t n) { return checked_alloc(n, alignof(std::max_align_t)); }
void* operator new(std::size_t n, std::align_val_t a) { return checked_alloc(n, static_cast<std::size_t>(a)); }
void* operator new[](std::size_t n, std::align_val_t a) { return checked_alloc(n, static_cast<std::size_t>(a)); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return counted_alloc(n, alignof(std::max_align_t)); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return counted_alloc(n, alignof(std::max_align_t)); }
void* operator new(std::size_t n, std::align_val_t a, const std::nothrow_t&) noexcept {
  return counted_alloc(n, static_cast<std::size_t>(a));
}
void* operator new[](std::size_t n, std::align_val_t a, const std::nothrow_t&) noexcept {
  return counted_alloc(n, static_cast<std::size_t>(a));
}
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }
void operator delete(void* p, std::align_val_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { counted_free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { counted_free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { counted_free(p); }
void operator delete(void* p, std::align_val_t, const std::nothrow_t&) noexcept { counted_free(p); }
void operator delete[](void* p, std::align_val_t, const std::nothrow_t&) noexcept { counted_free(p); }

namespace amlp {

namespace alloc_stats {
std::uint64_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::uint64_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }
std::uint64_t reset_peak() {
  const std::uint64_t now = current_bytes();
  g_peak.store(now, std::memory_order_relaxed);
  return now;
}
}  // namespace alloc_stats

std::string to_string(Arch a) {
  switch (a) {
    case Arch::ar_causal_softmax:
      return "ar-causal-softmax";
    case Arch::nar_softmax:
      return "nar-softmax";
    case Arch::nar_amlp:
      return "nar-amlp";
  }
  return "?";
}

Arch parse_arch(std::string_view name) {
  if (name == "ar-causal-softmax") return Arch::ar_causal_softmax;
  if (name == "nar-softmax") return Arch::nar_softmax;
  if (name == "nar-amlp") return Arch::nar_amlp;
  throw ConfigError("unknown architecture '" + std::string(name) + "' (ar-causal-softmax|nar-softmax|nar-amlp)");
}

void BenchConfig::validate() const {
  if (runs < 4) throw ConfigError("runs must be >= 4 for quartile filtering, got " + std::to_string(runs));
  if (warmup < 0) throw ConfigError("warmup must be >= 0");
  if (batch < 1 || d_model < 1 || heads < 1) throw ConfigError("batch, d_model and heads must be positive");
  if (d_model % heads != 0)
    throw ConfigError("heads " + std::to_string(heads) + " does not divide d_model " + std::to_string(d_model));
  if (c < 1 || c > d_model / heads) throw ConfigError("c must satisfy 1 <= c <= d_model/heads");
  if (lengths.empty()) throw ConfigError("no lengths given");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ConfigError("lengths must be positive");
    if (i && lengths[i] <= lengths[i - 1]) throw ConfigError("lengths must be strictly increasing");
  }
  if (archs.empty()) throw ConfigError("no architectures given");
}

IqrResult iqr_filter(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 4) throw ContractError("iqr_filter needs at least 4 samples, got " + std::to_string(n));
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t lo = n / 4;
  const std::size_t hi = (3 * n + 3) / 4;  // ceil(3n/4), exclusive
  IqrResult r;
  r.kept.assign(sorted.begin() + static_cast<std::ptrdiff_t>(lo), sorted.begin() + static_cast<std::ptrdiff_t>(hi));
  r.mean = std::accumulate(r.kept.begin(), r.kept.end(), 0.0) / static_cast<double>(r.kept.size());
  return r;
}

std::uint64_t model_memory(Arch arch, Index n, Index m, Index d, Index c, Index h, Index batch) {
  if (n < 1 || m < 1 || d < 1 || c < 1 || h < 1 || batch < 1) throw ContractError("model_memory arguments must be positive");
  const auto N = std::uint64_t(n), D = std::uint64_t(d), C = std::uint64_t(c), H = std::uint64_t(h),
             B = std::uint64_t(batch);
  const std::uint64_t dh = D / H;
  switch (arch) {
    case Arch::nar_softmax:
      return B * (H * N * N + 3 * N * D + N * D);
    case Arch::nar_amlp:
      return B * (2 * dh * dh * H + 2 * C * D + N * C * H + 4 * N * D);
    case Arch::ar_causal_softmax:
      break;
  }
  return B * (N * D * 2 + N * H);
}

double softmax_attention_ops(Index n, Index m, Index d) {
  const double N = double(n), M = double(m), D = double(d);
  return N * M * D + N * M + N * M * D;  // QKᵀ, exp, ·V
}

double amlp_cov_ops(Index n, Index m, Index d, Index c) {
  const double N = double(n), M = double(m), D = double(d), C = double(c);
  const double covariances = N * D * D + 2 * M * D * D;  // QᵀQ, KᵀK, KᵀV
  const double normalize = 3 * D * D;
  const double kappa = 3 * C * D * D;  // C_q·S, C_k·S, κ·S
  const double mlp = 2 * N * C * D + N * C;
  return covariances + normalize + kappa + mlp;
}

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("slope fit needs two or more paired points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw ContractError("slope fit needs positive values");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double k = double(x.size());
  const double denom = k * sxx - sx * sx;
  if (denom == 0.0) throw ContractError("slope fit needs distinct x values");
  return (k * sxy - sx * sy) / denom;
}

namespace kernels {

namespace {

using Strided = Eigen::Map<const RowMatrix<double>, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMatrix<double>, 0, Eigen::OuterStride<>>;
using Dense = Eigen::Map<RowMatrix<double>>;

void check_heads(Index d, Index heads) {
  if (heads < 1 || d % heads != 0) throw ConfigError("heads must divide d");
}

template <class M>
void activate_inplace(M& x, Nonlinearity f) {
  if (f == Nonlinearity::softmax)
    softmax_rows_inplace(x);
  else if (f == Nonlinearity::relu)
    x = x.cwiseMax(0.0);
}

}  // namespace

void nar_softmax(const double* q, const double* k, const double* v, Index batch, Index n, Index d, Index heads,
                 double* out) {
  check_heads(d, heads);
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> scores(static_cast<std::size_t>(batch * heads * n * n));
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h) {
      const Index off = b * n * d + h * dh;
      Strided Q(q + off, n, dh, Eigen::OuterStride<>(d));
      Strided K(k + off, n, dh, Eigen::OuterStride<>(d));
      Strided V(v + off, n, dh, Eigen::OuterStride<>(d));
      Dense S(scores.data() + (b * heads + h) * n * n, n, n);
      S.noalias() = scale * (Q * K.transpose());
      softmax_rows_inplace(S);
      StridedMut O(out + off, n, dh, Eigen::OuterStride<>(d));
      O.noalias() = S * V;
    }
}

void nar_amlp(const double* q, const double* k, const double* v, Index batch, Index n, Index d, Index heads,
              std::span<const Tensor> cq, std::span<const Tensor> ck, Nonlinearity sigma1, double* out) {
  check_heads(d, heads);
  const Index dh = d / heads;
  if (cq.size() != static_cast<std::size_t>(heads) || ck.size() != cq.size())
    throw ConfigError("one C_q and C_k per head required");
  const Index c = cq[0].rows();
  for (std::size_t i = 0; i < cq.size(); ++i)
    if (cq[i].shape() != Shape{c, dh} || ck[i].shape() != Shape{c, dh})
      throw DimensionError("projection must be " + Shape{c, dh}.str());

  const auto bh = static_cast<std::size_t>(batch * heads);
  std::vector<double> cov_a(bh * dh * dh), cov_b(bh * dh * dh);
  std::vector<double> kappa(bh * c * dh), qkv(bh * c * dh);
  std::vector<double> hidden(bh * n * c);
  for (Index b = 0; b < batch; ++b)
    for (Index h = 0; h < heads; ++h) {
      const Index off = b * n * d + h * dh;
      const Index slot = b * heads + h;
      Strided Q(q + off, n, dh, Eigen::OuterStride<>(d));
      Strided K(k + off, n, dh, Eigen::OuterStride<>(d));
      Strided V(v + off, n, dh, Eigen::OuterStride<>(d));
      Dense SA(cov_a.data() + slot * dh * dh, dh, dh);
      Dense SB(cov_b.data() + slot * dh * dh, dh, dh);
      Dense KA(kappa.data() + slot * c * dh, c, dh);
      Dense W(qkv.data() + slot * c * dh, c, dh);
      Dense H(hidden.data() + slot * n * c, n, c);

      SA.noalias() = Q.transpose() * Q;
      softmax_rows_inplace(SA);
      KA.noalias() = cq[h].matrix() * SA;
      SA.noalias() = K.transpose() * K;
      softmax_rows_inplace(SA);
      KA.noalias() += ck[h].matrix() * SA;
      SB.noalias() = K.transpose() * V;
      softmax_rows_inplace(SB);
      W.noalias() = KA * SB;
      H.noalias() = Q * KA.transpose();
      activate_inplace(H, sigma1);
      StridedMut O(out + off, n, dh, Eigen::OuterStride<>(d));
      O.noalias() = H * W;
    }
}

void ar_causal_softmax(const double* q_pool, const double* k_pool, const double* v_pool, Index pool_rows, Index batch,
                       Index n, Index d, Index heads, double* last, double* all) {
  check_heads(d, heads);
  if (pool_rows < 1) throw ContractError("empty token pool");
  const Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> kcache(static_cast<std::size_t>(batch * n * d)), vcache(kcache.size());
  std::vector<double> row(static_cast<std::size_t>(batch * heads * n));
  for (Index t = 0; t < n; ++t)
    for (Index b = 0; b < batch; ++b) {
      const Index r = (t + b) % pool_rows;
      double* kc = kcache.data() + b * n * d;
      double* vc = vcache.data() + b * n * d;
      std::copy_n(k_pool + r * d, d, kc + t * d);
      std::copy_n(v_pool + r * d, d, vc + t * d);
      for (Index h = 0; h < heads; ++h) {
        Strided K(kc + h * dh, t + 1, dh, Eigen::OuterStride<>(d));
        Strided V(vc + h * dh, t + 1, dh, Eigen::OuterStride<>(d));
        Eigen::Map<const Eigen::VectorXd> qv(q_pool + r * d + h * dh, dh);
        Eigen::Map<Eigen::RowVectorXd> s(row.data() + (b * heads + h) * n, t + 1);
        s.noalias() = scale * (K * qv).transpose();
        softmax_rows_inplace(s);
        Eigen::Map<Eigen::RowVectorXd> o(last + b * d + h * dh, dh);
        o.noalias() = s * V;
      }
      if (all) std::copy_n(last + b * d, d, all + (b * n + t) * d);
    }
}

}  // namespace kernels

namespace {

using Clock = std::chrono::steady_clock;

/// Inputs and parameters for one (arch, n) cell, plus the kernel call.
class Cell {
 public:
  Cell(Arch arch, Index n, const BenchConfig& cfg, Rng& rng) : arch_(arch), n_(n), cfg_(cfg) {
    const Index dh = cfg.d_model / cfg.heads;
    if (arch == Arch::nar_amlp)
      for (Index h = 0; h < cfg.heads; ++h) {
        cq_.push_back(init_weight(cfg.c, dh, rng));
        ck_.push_back(init_weight(cfg.c, dh, rng));
      }
  }

  void allocate_inputs(Rng& rng) {
    const Index rows = arch_ == Arch::ar_causal_softmax ? kPoolRows : cfg_.batch * n_;
    std::normal_distribution<double> dist;
    for (auto* buf : {&q_, &k_, &v_}) {
      buf->resize(static_cast<std::size_t>(rows * cfg_.d_model));
      for (double& x : *buf) x = dist(rng);
    }
    const Index out_rows = arch_ == Arch::ar_causal_softmax ? cfg_.batch : cfg_.batch * n_;
    out_.assign(static_cast<std::size_t>(out_rows * cfg_.d_model), 0.0);
  }

  void release_inputs() {
    for (auto* buf : {&q_, &k_, &v_, &out_}) std::vector<double>().swap(*buf);
  }

  void run() {
    const Index b = cfg_.batch, d = cfg_.d_model, h = cfg_.heads;
    switch (arch_) {
      case Arch::nar_softmax:
        kernels::nar_softmax(q_.data(), k_.data(), v_.data(), b, n_, d, h, out_.data());
        break;
      case Arch::nar_amlp:
        kernels::nar_amlp(q_.data(), k_.data(), v_.data(), b, n_, d, h, cq_, ck_, cfg_.sigma1, out_.data());
        break;
      case Arch::ar_causal_softmax:
        kernels::ar_causal_softmax(q_.data(), k_.data(), v_.data(), kPoolRows, b, n_, d, h, out_.data());
        break;
    }
  }

 private:
  static constexpr Index kPoolRows = 16;
  Arch arch_;
  Index n_;
  const BenchConfig& cfg_;
  std::vector<Tensor> cq_, ck_;
  std::vector<double> q_, k_, v_, out_;
};

std::string fmt9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

BenchRecord time_architecture(Arch arch, Index n, const BenchConfig& config) {
  config.validate();
  BenchRecord rec;
  rec.arch = arch;
  rec.n = n;
  rec.batch = config.batch;
  rec.runs = config.runs;
  rec.modeled_elems = model_memory(arch, n, n, config.d_model, config.c, config.heads, config.batch);
  if (rec.modeled_elems > config.memory_budget_bytes / sizeof(double)) return rec;

  Rng rng(config.seed + static_cast<std::uint64_t>(n) * 3 + static_cast<std::uint64_t>(arch));
  try {
    Cell cell(arch, n, config, rng);
    // Measured footprint: inputs, workspace and output of one cold run.
    const std::uint64_t base = alloc_stats::reset_peak();
    cell.allocate_inputs(rng);
    cell.run();
    rec.measured_peak_bytes = alloc_stats::peak_bytes() - base;

    for (Index i = 0; i < config.warmup; ++i) cell.run();
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(config.runs));
    for (Index i = 0; i < config.runs; ++i) {
      const auto t0 = Clock::now();
      cell.run();
      samples.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    cell.release_inputs();
    const IqrResult iqr = iqr_filter(samples);
    rec.kept = static_cast<Index>(iqr.kept.size());
    rec.mean_latency_s = iqr.mean;
    rec.min_latency_s = *std::min_element(samples.begin(), samples.end());
    rec.max_latency_s = *std::max_element(samples.begin(), samples.end());
    rec.feasible = rec.mean_latency_s > 0.0;
  } catch (const std::bad_alloc&) {
    rec.feasible = false;
    rec.measured_peak_bytes.reset();
  }
  return rec;
}

void write_csv(std::span<const BenchRecord> records, std::ostream& os) {
  os << kCsvHeader << '\n';
  for (const BenchRecord& r : records) {
    os << to_string(r.arch) << ',' << r.n << ',' << r.batch << ',' << r.runs << ',' << r.kept << ',';
    if (r.feasible) os << fmt9(r.mean_latency_s);
    os << ',' << r.modeled_elems << ',';
    if (r.measured_peak_bytes) os << *r.measured_peak_bytes;
    os << '\n';
  }
}

std::string summarize(std::span<const BenchRecord> records) {
  std::ostringstream os;
  auto find = [&](Arch a, Index n) -> const BenchRecord* {
    for (const BenchRecord& r : records)
      if (r.arch == a && r.n == n && r.feasible) return &r;
    return nullptr;
  };
  std::vector<Index> lengths;
  for (const BenchRecord& r : records)
    if (std::find(lengths.begin(), lengths.end(), r.n) == lengths.end()) lengths.push_back(r.n);
  std::sort(lengths.begin(), lengths.end());

  os << "speedup relative to ar-causal-softmax (latency_ar / latency_arch)\n";
  Index largest_common = 0;
  for (Index n : lengths) {
    const BenchRecord* ar = find(Arch::ar_causal_softmax, n);
    const BenchRecord* ns = find(Arch::nar_softmax, n);
    const BenchRecord* na = find(Arch::nar_amlp, n);
    os << "  n=" << n << ":";
    auto cell = [&](const char* label, const BenchRecord* r) {
      os << ' ' << label << '=';
      if (!r)
        os << "infeasible";
      else if (!ar)
        os << "n/a";
      else
        os << fmt9(ar->mean_latency_s / r->mean_latency_s) << 'x';
    };
    cell("nar-softmax", ns);
    cell("nar-amlp", na);
    os << '\n';
    if (ns && na) largest_common = n;
  }
  if (largest_common) {
    const double s = find(Arch::nar_softmax, largest_common)->mean_latency_s;
    const double a = find(Arch::nar_amlp, largest_common)->mean_latency_s;
    os << "nar-amlp vs nar-softmax at n=" << largest_common << ": " << fmt9(s / a) << "x faster\n";
  }
  os << "log-log latency slope over feasible lengths\n";
  for (Arch a : {Arch::ar_causal_softmax, Arch::nar_softmax, Arch::nar_amlp}) {
    std::vector<double> xs, ys;
    for (Index n : lengths)
      if (const BenchRecord* r = find(a, n)) {
        xs.push_back(double(n));
        ys.push_back(r->mean_latency_s);
      }
    if (xs.size() >= 2) os << "  " << to_string(a) << ": " << fmt9(fit_loglog_slope(xs, ys)) << '\n';
  }
  return os.str();
}

BenchReport run_and_report(const BenchConfig& config, const Progress& progress) {
  config.validate();
  BenchReport report;
  for (Arch a : config.archs)
    for (Index n : config.lengths) {
      BenchRecord r = time_architecture(a, n, config);
      if (progress) {
        std::string msg = to_string(a) + " n=" + std::to_string(n) + ": ";
        msg += r.feasible ? fmt9(r.mean_latency_s) + " s" : std::string("infeasible");
        progress(msg);
      }
      report.records.push_back(r);
    }
  report.summary = summarize(report.records);
  return report;
}

std::vector<SweepRow> sweep_inner_dimension(const SweepConfig& config, const Progress& progress) {
  const NarConfig& base = config.model;
  base.validate();
  if (config.runs < 4) throw ConfigError("runs must be >= 4 for quartile filtering");
  if (config.cs.empty()) throw ConfigError("no inner dimensions given");
  for (Index c : config.cs)
    if (c < 1 || c > base.head_width())
      throw ConfigError("c=" + std::to_string(c) + " exceeds head width " + std::to_string(base.head_width()));

  BenchConfig timing;
  timing.lengths = {config.n};
  timing.batch = config.batch;
  timing.runs = config.runs;
  timing.d_model = base.d_model;
  timing.heads = base.heads;
  timing.sigma1 = base.sigma1;
  timing.archs = {Arch::nar_amlp};
  timing.seed = base.seed;

  // Interleave runs across c so slow drift affects every c alike.
  std::vector<BenchConfig> cfgs;
  std::vector<Cell> cells;
  cfgs.reserve(config.cs.size());
  cells.reserve(config.cs.size());
  Rng rng(base.seed);
  for (Index c : config.cs) {
    cfgs.push_back(timing);
    cfgs.back().c = c;
  }
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    cells.emplace_back(Arch::nar_amlp, config.n, cfgs[i], rng);
    cells.back().allocate_inputs(rng);
  }
  for (Index w = 0; w < config.warmup; ++w)
    for (Cell& cell : cells) cell.run();
  std::vector<std::vector<double>> samples(cells.size());
  for (Index r = 0; r < config.runs; ++r)
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto t0 = Clock::now();
      cells[i].run();
      samples[i].push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
  cells.clear();

  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < config.cs.size(); ++i) {
    SweepRow row;
    row.c = config.cs[i];
    row.latency_s = iqr_filter(samples[i]).mean;
    NarConfig mc = base;
    mc.inner = row.c;
    mc.variant = Mechanism::cov;
    NarModel model = init_model(mc);
    TrainOptions opts;
    opts.steps = config.train_steps;
    opts.batch_size = config.train_batch;
    train(model, config.task, opts);
    row.accuracy = evaluate(model, config.task, config.eval_samples);
    if (progress) progress("c=" + std::to_string(row.c) + ": " + fmt9(row.latency_s) + " s, accuracy " + fmt9(row.accuracy));
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& os) {
  os << "c,mean_latency_s,accuracy\n";
  for (const SweepRow& r : rows) os << r.c << ',' << fmt9(r.latency_s) << ',' << fmt9(r.accuracy) << '\n';
}

}  // namespace amlp
