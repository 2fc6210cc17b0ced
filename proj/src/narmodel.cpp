#include "amlp/narmodel.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace amlp {

std::string to_string(TaskKind k) { return k == TaskKind::copy ? "copy" : "reverse"; }

TaskKind parse_task(std::string_view name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  throw ConfigError("unknown task '" + std::string(name) + "' (copy|reverse)");
}

Tokens SyntheticTask::target_for(std::span<const Index> source) const {
  Tokens t(source.begin(), source.end());
  if (kind == TaskKind::reverse) std::reverse(t.begin(), t.end());
  return t;
}

Example SyntheticTask::sample(Rng& rng) const {
  std::uniform_int_distribution<Index> tok(0, vocab - 1);
  Example ex;
  ex.source.resize(static_cast<std::size_t>(length));
  for (Index& t : ex.source) t = tok(rng);
  ex.target = target_for(ex.source);
  return ex;
}

std::vector<Example> SyntheticTask::draw(Index count) const {
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) out.push_back(sample(rng));
  return out;
}

void NarConfig::validate() const {
  auto positive = [](Index v, const char* what) {
    if (v < 1) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(vocab, "vocab_size");
  positive(seq_len, "seq_len");
  positive(source_len, "source_len");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(mlp_hidden, "mlp_hidden");
  if (d_model % heads != 0)
    throw ConfigError("heads " + std::to_string(heads) + " does not divide d_model " + std::to_string(d_model));
  if (inner < 1 || inner > head_width())
    throw ConfigError("inner c=" + std::to_string(inner) + " must satisfy 1 <= c <= d_model/heads=" +
                      std::to_string(head_width()));
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) throw ConfigError("learning_rate must be finite and >= 0");
}

namespace {

void attention_layout(const NarConfig& c, const std::string& prefix, std::vector<ParamShape>& out) {
  const Index d = c.d_model, dh = c.head_width();
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({prefix + "." + w, Shape{d, d}});
  if (c.variant == Mechanism::softmax) return;
  for (Index h = 0; h < c.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h) + ".";
    out.push_back({hp + "cq", Shape{c.inner, dh}});
    out.push_back({hp + "ck", Shape{c.inner, dh}});
    if (c.variant == Mechanism::pquery) out.push_back({hp + "mix", Shape{2 * dh, dh}});
  }
}

void norm_layout(const NarConfig& c, const std::string& prefix, std::vector<ParamShape>& out) {
  out.push_back({prefix + ".gain", Shape{c.d_model}});
  out.push_back({prefix + ".bias", Shape{c.d_model}});
}

void ffn_layout(const NarConfig& c, const std::string& prefix, std::vector<ParamShape>& out) {
  out.push_back({prefix + ".w1", Shape{c.d_model, c.mlp_hidden}});
  out.push_back({prefix + ".b1", Shape{c.mlp_hidden}});
  out.push_back({prefix + ".w2", Shape{c.mlp_hidden, c.d_model}});
  out.push_back({prefix + ".b2", Shape{c.d_model}});
}

bool ends_with(const std::string& s, std::string_view tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

}  // namespace

std::vector<ParamShape> parameter_layout(const NarConfig& c) {
  c.validate();
  std::vector<ParamShape> out;
  out.push_back({"embed", Shape{c.vocab, c.d_model}});
  out.push_back({"src_pos", Shape{c.source_len, c.d_model}});
  out.push_back({"tgt_pos", Shape{c.seq_len, c.d_model}});
  attention_layout(c, "enc.self", out);
  norm_layout(c, "enc.ln1", out);
  ffn_layout(c, "enc.ffn", out);
  norm_layout(c, "enc.ln2", out);
  attention_layout(c, "dec.self", out);
  norm_layout(c, "dec.ln1", out);
  attention_layout(c, "dec.cross", out);
  norm_layout(c, "dec.ln2", out);
  ffn_layout(c, "dec.ffn", out);
  norm_layout(c, "dec.ln3", out);
  out.push_back({"out.w", Shape{c.d_model, c.vocab}});
  out.push_back({"out.b", Shape{c.vocab}});
  return out;
}

const Tensor& NarModel::param(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return params[i];
  throw InputError("no parameter named '" + std::string(name) + "'");
}

std::size_t NarModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params) n += static_cast<std::size_t>(p.size());
  return n;
}

NarModel init_model(const NarConfig& config) {
  NarModel model;
  model.config = config;
  Rng rng(config.seed);
  for (const ParamShape& entry : parameter_layout(config)) {
    const std::string& n = entry.name;
    Tensor t(entry.shape);
    if (ends_with(n, ".gain")) {
      t = Tensor::constant(entry.shape, 1.0);
    } else if (ends_with(n, ".bias") || ends_with(n, ".b1") || ends_with(n, ".b2") || n == "out.b") {
      // zeros
    } else if (n == "embed" || ends_with(n, "_pos")) {
      t = randn(entry.shape, rng);
    } else if (n == "out.w") {
      t = randn(entry.shape, rng, config.output_init_scale / std::sqrt(double(entry.shape[0])));
    } else if (ends_with(n, ".cq") || ends_with(n, ".ck")) {
      t = init_weight(entry.shape[0], entry.shape[1], rng);
    } else {
      t = init_weight(entry.shape[0], entry.shape[1], rng, entry.shape[0]);
    }
    model.names.push_back(n);
    model.params.push_back(std::move(t));
  }
  return model;
}

namespace {

template <class T>
class Cursor {
 public:
  explicit Cursor(std::span<const T> params) : params_(params) {}
  const T& next() {
    if (pos_ >= params_.size()) throw DimensionError("parameter list shorter than the model layout");
    return params_[pos_++];
  }
  void finish() const {
    if (pos_ != params_.size()) throw DimensionError("parameter list longer than the model layout");
  }

 private:
  std::span<const T> params_;
  std::size_t pos_ = 0;
};

template <class T>
MultiHeadParams<T> take_attention(const NarConfig& c, Cursor<T>& cur) {
  MultiHeadParams<T> p;
  p.heads = c.heads;
  p.mechanism = c.variant;
  p.wq = cur.next();
  p.wk = cur.next();
  p.wv = cur.next();
  p.wo = cur.next();
  if (c.variant == Mechanism::softmax) return p;
  for (Index h = 0; h < c.heads; ++h) {
    const T& cq = cur.next();
    const T& ck = cur.next();
    if (c.variant == Mechanism::cov) {
      p.cov.push_back({cq, ck, c.sigma1});
    } else {
      p.pquery.push_back({cq, ck, cur.next(), c.beta, c.sigma1});
    }
  }
  return p;
}

template <class T>
T take_norm(const T& x, Cursor<T>& cur) {
  const T& gain = cur.next();
  return layer_norm(x, gain, cur.next());
}

template <class T>
T take_ffn(const T& x, Cursor<T>& cur) {
  const T& w1 = cur.next();
  const T& b1 = cur.next();
  const T& w2 = cur.next();
  const T& b2 = cur.next();
  return add_row(matmul(relu(add_row(matmul(x, w1), b1)), w2), b2);
}

/// Attention applied sample by sample over row blocks of stacked inputs.
template <class T>
T per_sample(const MultiHeadParams<T>& p, const T& target, Index n, const T& source, Index m, Index batch) {
  const Index d = value_of(target).cols();
  std::vector<T> outs;
  outs.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b)
    outs.push_back(multi_head_forward(block(target, b * n, n, 0, d), block(source, b * m, m, 0, d), p));
  return batch == 1 ? outs.front() : assemble(std::span<const T>(outs), batch, 1);
}

}  // namespace

template <class T>
T forward_batch(const NarConfig& c, std::span<const T> params, std::span<const Tokens> sources) {
  if (sources.empty()) throw InputError("empty batch");
  const Index batch = static_cast<Index>(sources.size());
  const Index n = c.seq_len, m = c.source_len;
  Tokens flat;
  flat.reserve(static_cast<std::size_t>(batch * m));
  for (const Tokens& s : sources) {
    if (static_cast<Index>(s.size()) != m)
      throw InputError("source length " + std::to_string(s.size()) + " != " + std::to_string(m));
    for (Index t : s) {
      if (t < 0 || t >= c.vocab) throw InputError("token " + std::to_string(t) + " outside vocab " + std::to_string(c.vocab));
      flat.push_back(t);
    }
  }

  Cursor<T> cur(params);
  const T& embed = cur.next();
  const T& src_pos = cur.next();
  const T& tgt_pos = cur.next();

  // Encoder.
  T x = add(gather_rows(embed, std::span<const Index>(flat)), batch == 1 ? src_pos : tile_rows(src_pos, batch));
  MultiHeadParams<T> enc_self = take_attention(c, cur);
  x = take_norm(add(x, per_sample(enc_self, x, m, x, m, batch)), cur);
  x = take_norm(add(x, take_ffn(x, cur)), cur);

  // Decoder: self-attention sees positions only, so it is shared by the batch.
  MultiHeadParams<T> dec_self = take_attention(c, cur);
  T y = take_norm(add(tgt_pos, multi_head_forward(tgt_pos, tgt_pos, dec_self)), cur);
  if (batch > 1) y = tile_rows(y, batch);
  MultiHeadParams<T> dec_cross = take_attention(c, cur);
  y = take_norm(add(y, per_sample(dec_cross, y, n, x, m, batch)), cur);
  y = take_norm(add(y, take_ffn(y, cur)), cur);

  const T& out_w = cur.next();
  const T& out_b = cur.next();
  cur.finish();
  return add_row(matmul(y, out_w), out_b);
}

template Tensor forward_batch<Tensor>(const NarConfig&, std::span<const Tensor>, std::span<const Tokens>);
template Var forward_batch<Var>(const NarConfig&, std::span<const Var>, std::span<const Tokens>);

Tensor forward(const NarModel& model, std::span<const Index> source) {
  const Tokens src(source.begin(), source.end());
  return forward_batch<Tensor>(model.config, model.params, std::span<const Tokens>(&src, 1));
}

Var batch_loss(const NarConfig& config, std::span<const Var> params, std::span<const Example> batch) {
  if (batch.empty()) throw InputError("empty batch");
  std::vector<Tokens> sources;
  Tokens targets;
  for (const Example& ex : batch) {
    if (static_cast<Index>(ex.target.size()) != config.seq_len) throw InputError("target length mismatch");
    sources.push_back(ex.source);
    targets.insert(targets.end(), ex.target.begin(), ex.target.end());
  }
  Var logits = forward_batch<Var>(config, params, sources);
  return cross_entropy(logits, std::span<const Index>(targets));
}

double train_step(NarModel& model, std::span<const Example> batch) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(model.params.size());
  for (const Tensor& p : model.params) vars.push_back(tape.parameter(p));
  Var loss = batch_loss(model.config, vars, batch);
  const double value = loss.value()[0];
  tape.backward(loss);
  const double lr = model.config.learning_rate;
  if (lr == 0.0) return value;
  for (std::size_t i = 0; i < vars.size(); ++i) model.params[i].matrix() -= lr * vars[i].grad().matrix();
  return value;
}

Tokens argmax_rows(const Tensor& logits) {
  Tokens out(static_cast<std::size_t>(logits.rows()));
  const auto m = logits.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(r, c) > m(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

Tokens generate(const NarModel& model, std::span<const Index> source) { return argmax_rows(forward(model, source)); }

double evaluate(const Generator& gen, std::span<const Example> examples) {
  if (examples.empty()) throw ContractError("evaluate needs at least one sample");
  Index hits = 0, total = 0;
  for (const Example& ex : examples) {
    const Tokens out = gen(ex.source);
    if (out.size() != ex.target.size()) throw InputError("generator returned the wrong length");
    for (std::size_t i = 0; i < out.size(); ++i) hits += out[i] == ex.target[i];
    total += static_cast<Index>(out.size());
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double evaluate(const Generator& gen, const SyntheticTask& task, Index num_samples) {
  if (num_samples < 1) throw ContractError("evaluate needs at least one sample");
  return evaluate(gen, task.draw(num_samples));
}

double evaluate(const NarModel& model, const SyntheticTask& task, Index num_samples) {
  return evaluate([&](std::span<const Index> s) { return generate(model, s); }, task, num_samples);
}

TrainResult train(NarModel& model, const SyntheticTask& task, const TrainOptions& options) {
  if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (task.vocab != model.config.vocab || task.length != model.config.source_len || task.length != model.config.seq_len)
    throw ConfigError("task shape does not match the model");
  Rng rng(model.config.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(options.steps));
  std::vector<Example> batch(static_cast<std::size_t>(options.batch_size));
  for (Index step = 0; step < options.steps; ++step) {
    for (Example& ex : batch) ex = task.sample(rng);
    const double loss = train_step(model, batch);
    result.losses.push_back(loss);
    if (options.on_log && options.log_every > 0 && step % options.log_every == 0) options.on_log(step, loss);
  }
  return result;
}

// Checkpoint: a text header, the config, then every tensor in hexfloat so
// values round-trip exactly.
namespace {

constexpr const char* kMagic = "AMLPCKPT";
constexpr int kVersion = 1;

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw IoError(path.string() + ": bad number '" + s + "'");
  return v;
}

}  // namespace

void save_checkpoint(const NarModel& model, const std::filesystem::path& path) {
  std::ostringstream os;
  const NarConfig& c = model.config;
  os << kMagic << ' ' << kVersion << '\n';
  os << "vocab " << c.vocab << '\n'
     << "seq_len " << c.seq_len << '\n'
     << "source_len " << c.source_len << '\n'
     << "d_model " << c.d_model << '\n'
     << "heads " << c.heads << '\n'
     << "inner " << c.inner << '\n'
     << "mlp_hidden " << c.mlp_hidden << '\n'
     << "variant " << to_string(c.variant) << '\n'
     << "sigma1 " << to_string(c.sigma1) << '\n'
     << "beta " << hexfloat(c.beta) << '\n'
     << "learning_rate " << hexfloat(c.learning_rate) << '\n'
     << "output_init_scale " << hexfloat(c.output_init_scale) << '\n'
     << "seed " << c.seed << '\n';
  os << "params " << model.params.size() << '\n';
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Shape& s = model.params[i].shape();
    os << model.names[i] << ' ' << s.rank();
    for (int k = 0; k < s.rank(); ++k) os << ' ' << s[k];
    os << '\n';
    for (double v : model.params[i].data()) os << hexfloat(v) << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path.string());
  f << os.str();
  f.close();
  if (!f) throw IoError("failed writing checkpoint: " + path.string());
}

NarModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint: " + path.string());
  auto word = [&]() {
    std::string w;
    if (!(f >> w)) throw IoError(path.string() + ": truncated checkpoint");
    return w;
  };
  auto integer = [&]() -> Index {
    const std::string w = word();
    try {
      std::size_t used = 0;
      const long long v = std::stoll(w, &used);
      if (used != w.size()) throw std::invalid_argument(w);
      return static_cast<Index>(v);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": bad integer '" + w + "'");
    }
  };
  auto expect = [&](const char* key) {
    const std::string w = word();
    if (w != key) throw IoError(path.string() + ": expected '" + key + "', found '" + w + "'");
  };
  expect(kMagic);
  if (integer() != kVersion) throw IoError(path.string() + ": unsupported checkpoint version");

  NarConfig c;
  try {
    expect("vocab"), c.vocab = integer();
    expect("seq_len"), c.seq_len = integer();
    expect("source_len"), c.source_len = integer();
    expect("d_model"), c.d_model = integer();
    expect("heads"), c.heads = integer();
    expect("inner"), c.inner = integer();
    expect("mlp_hidden"), c.mlp_hidden = integer();
    expect("variant"), c.variant = parse_mechanism(word());
    expect("sigma1"), c.sigma1 = parse_nonlinearity(word());
    expect("beta"), c.beta = parse_double(word(), path);
    expect("learning_rate"), c.learning_rate = parse_double(word(), path);
    expect("output_init_scale"), c.output_init_scale = parse_double(word(), path);
    expect("seed"), c.seed = static_cast<std::uint64_t>(std::stoull(word()));
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  const auto layout = parameter_layout(c);
  expect("params");
  if (integer() != static_cast<Index>(layout.size())) throw IoError(path.string() + ": parameter count mismatch");

  NarModel model;
  model.config = c;
  for (const ParamShape& entry : layout) {
    const std::string name = word();
    if (name != entry.name) throw IoError(path.string() + ": expected parameter '" + entry.name + "', found '" + name + "'");
    const Index rank = integer();
    if (rank != entry.shape.rank()) throw IoError(path.string() + ": rank mismatch for " + name);
    for (int k = 0; k < rank; ++k)
      if (integer() != entry.shape[k]) throw IoError(path.string() + ": shape mismatch for " + name);
    std::vector<double> values(static_cast<std::size_t>(entry.shape.size()));
    for (double& v : values) v = parse_double(word(), path);
    model.names.push_back(name);
    model.params.emplace_back(entry.shape, std::move(values));
  }
  std::string extra;
  if (f >> extra) throw IoError(path.string() + ": trailing data after last parameter");
  return model;
}

}  // namespace amlp
