#include "repcl/encoder.hpp"

#include "repcl/errors.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>

namespace repcl {

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::SpanConcat:
      return "span_concat";
    case Pooling::SpanMean:
      return "span_mean";
    case Pooling::SentenceMean:
      return "sentence_mean";
  }
  return "unknown";
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "span_concat") return Pooling::SpanConcat;
  if (s == "span_mean") return Pooling::SpanMean;
  if (s == "sentence_mean") return Pooling::SentenceMean;
  throw ConfigError("unknown pooling '" + s + "'");
}

void EncoderConfig::validate() const {
  if (vocab_size <= kNumSpecialTokens) throw ConfigError("vocab_size must exceed the reserved tokens");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("embed_dim must be a positive multiple of num_heads");
  if (num_layers < 0) throw ConfigError("num_layers must be non-negative");
  if (hidden_dim < 1 || proj_dim < 1) throw ConfigError("hidden_dim and proj_dim must be positive");
  if (max_seq_len < 1 || max_seq_len > 128) throw ConfigError("max_seq_len must be in [1, 128]");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"embed_dim", embed_dim},     {"num_layers", num_layers},
          {"num_heads", num_heads},   {"hidden_dim", hidden_dim},   {"max_seq_len", max_seq_len},
          {"pooling", to_string(pooling)}, {"proj_dim", proj_dim}, {"dropout", dropout},
          {"init_std", init_std}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.pooling = pooling_from_string(j.at("pooling").get<std::string>());
  c.proj_dim = j.at("proj_dim").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

namespace {

Mat normal_init(Eigen::Index r, Eigen::Index c, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = dist(rng);
  return m;
}

Param weight(const std::string& name, Eigen::Index r, Eigen::Index c, double std, Rng& rng) {
  return Param(name, normal_init(r, c, std, rng));
}

Param zeros(const std::string& name, Eigen::Index c) { return Param(name, Mat::Zero(1, c)); }
Param ones(const std::string& name, Eigen::Index c) { return Param(name, Mat::Ones(1, c)); }

Var linear(Tape& t, Var x, Param& w, Param& b) { return add_row(matmul(x, t.param(w)), t.param(b)); }

}  // namespace

Model::Model(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_rng(seed, 0xE7C0);
  const int d = cfg_.embed_dim;
  const int r = cfg_.repr_dim();
  const double s = cfg_.init_std;
  tok_embed_ = weight("encoder.tok_embed", cfg_.vocab_size, d, s, rng);
  pos_embed_ = weight("encoder.pos_embed", cfg_.max_seq_len, d, s, rng);
  emb_ln_g_ = ones("encoder.emb_ln.g", d);
  emb_ln_b_ = zeros("encoder.emb_ln.b", d);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    Layer L;
    L.wq = weight(p + "wq", d, d, s, rng);
    L.bq = zeros(p + "bq", d);
    L.wk = weight(p + "wk", d, d, s, rng);
    L.bk = zeros(p + "bk", d);
    L.wv = weight(p + "wv", d, d, s, rng);
    L.bv = zeros(p + "bv", d);
    L.wo = weight(p + "wo", d, d, s, rng);
    L.bo = zeros(p + "bo", d);
    L.ln1_g = ones(p + "ln1.g", d);
    L.ln1_b = zeros(p + "ln1.b", d);
    L.w1 = weight(p + "w1", d, cfg_.hidden_dim, s, rng);
    L.b1 = zeros(p + "b1", cfg_.hidden_dim);
    L.w2 = weight(p + "w2", cfg_.hidden_dim, d, s, rng);
    L.b2 = zeros(p + "b2", d);
    L.ln2_g = ones(p + "ln2.g", d);
    L.ln2_b = zeros(p + "ln2.b", d);
    layers_.push_back(std::move(L));
  }
  cls_w_ = Param("classifier.w", Mat(0, r));
  cls_b_ = Param("classifier.b", Mat(1, 0));
  proj_w1_ = weight("projection.w1", r, r, s, rng);
  proj_b1_ = zeros("projection.b1", r);
  proj_w2_ = weight("projection.w2", r, cfg_.proj_dim, s, rng);
  proj_b2_ = zeros("projection.b2", cfg_.proj_dim);
  xmlm_w1_ = weight("xmlm.w1", r + d, d, s, rng);
  xmlm_b1_ = zeros("xmlm.b1", d);
  xmlm_w2_ = weight("xmlm.w2", d, cfg_.vocab_size, s, rng);
  xmlm_b2_ = zeros("xmlm.b2", cfg_.vocab_size);
}

Var Model::dropout(Tape& tape, Var x, const PassOptions& opts) const {
  if (opts.dropout_rng == nullptr || cfg_.dropout <= 0.0) return x;
  const double keep = 1.0 - cfg_.dropout;
  std::bernoulli_distribution bern(keep);
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j)
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = bern(*opts.dropout_rng) ? 1.0 / keep : 0.0;
  (void)tape;
  return dropout_mask(x, mask);
}

Var Model::hidden_states(Tape& tape, std::span<const int> tokens, const PassOptions& opts) {
  if (tokens.empty()) throw InputError("cannot encode an empty sequence");
  std::size_t len = tokens.size();
  if (len > static_cast<std::size_t>(cfg_.max_seq_len)) {
    spdlog::warn("sequence of length {} truncated to {}", len, cfg_.max_seq_len);
    len = static_cast<std::size_t>(cfg_.max_seq_len);
  }
  const auto ids = tokens.first(len);
  const auto T = static_cast<Eigen::Index>(len);

  Var x = add(gather_rows(tape.param(tok_embed_), ids), rows(tape.param(pos_embed_), 0, T));
  if (opts.perturbation != nullptr) {
    if (opts.perturbation->rows() != T || opts.perturbation->cols() != cfg_.embed_dim)
      throw ShapeError("perturbation shape does not match the embedded sequence");
    x = add(x, *opts.perturbation);
  }
  x = layer_norm(x, tape.param(emb_ln_g_), tape.param(emb_ln_b_));
  x = dropout(tape, x, opts);

  const int heads = cfg_.num_heads;
  const Eigen::Index dh = cfg_.embed_dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (Layer& L : layers_) {
    Var q = linear(tape, x, L.wq, L.bq);
    Var k = linear(tape, x, L.wk, L.bk);
    Var v = linear(tape, x, L.wv, L.bv);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Var qh = cols(q, h * dh, dh);
      Var kh = cols(k, h * dh, dh);
      Var vh = cols(v, h * dh, dh);
      Var att = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
      outs.push_back(matmul(att, vh));
    }
    Var a = linear(tape, hconcat(outs), L.wo, L.bo);
    a = dropout(tape, a, opts);
    x = layer_norm(add(x, a), tape.param(L.ln1_g), tape.param(L.ln1_b));
    Var f = linear(tape, gelu(linear(tape, x, L.w1, L.b1)), L.w2, L.b2);
    f = dropout(tape, f, opts);
    x = layer_norm(add(x, f), tape.param(L.ln2_g), tape.param(L.ln2_b));
  }
  return x;
}

Var Model::pool(Var hidden, const Instance& x) const {
  const Eigen::Index T = hidden.rows();
  auto require = [&](SpanKind kind) -> const Span& {
    const Span* s = x.find_span(kind);
    if (s == nullptr) throw InputError(to_string(cfg_.pooling) + " pooling requires a " + to_string(kind) + " span");
    if (s->end > T) throw InputError(to_string(kind) + " span lies beyond the (truncated) sequence");
    return *s;
  };
  switch (cfg_.pooling) {
    case Pooling::SentenceMean:
      return mean_rows(hidden);
    case Pooling::SpanMean: {
      const Span& s = require(SpanKind::Trigger);
      return mean_rows(rows(hidden, s.start, s.end - s.start));
    }
    case Pooling::SpanConcat: {
      // The span start is where the [E11] / [E21] marker sits.
      const Span& head = require(SpanKind::HeadEntity);
      const Span& tail = require(SpanKind::TailEntity);
      const std::vector<Var> parts = {rows(hidden, head.start, 1), rows(hidden, tail.start, 1)};
      return hconcat(parts);
    }
  }
  throw std::logic_error("unreachable pooling");
}

Var Model::encode(Tape& tape, const Instance& x, const PassOptions& opts) {
  return pool(hidden_states(tape, x.tokens, opts), x);
}

Var Model::classify(Tape& tape, Var z) {
  if (num_classes() == 0) throw ShapeError("classifier head has not been expanded to any class");
  if (z.cols() != cfg_.repr_dim()) throw ShapeError("representation width does not match the classifier");
  return add_row(matmul_nt(z, tape.param(cls_w_)), tape.param(cls_b_));
}

Var Model::project(Tape& tape, Var z) {
  Var h = gelu(linear(tape, z, proj_w1_, proj_b1_));
  return l2_normalize_rows(linear(tape, h, proj_w2_, proj_b2_));
}

Var Model::xmlm_logits(Tape& tape, Var masked_hidden, std::span<const int> positions, Var z_anchor, bool use_anchor) {
  if (positions.empty()) throw InputError("xmlm requires at least one masked position");
  if (z_anchor.rows() != 1 || z_anchor.cols() != cfg_.repr_dim()) throw ShapeError("anchor must be 1 x repr_dim");
  std::vector<Var> picked;
  picked.reserve(positions.size());
  for (int p : positions) {
    if (p < 0 || p >= masked_hidden.rows()) throw InputError("masked position outside the sequence");
    picked.push_back(rows(masked_hidden, p, 1));
  }
  Var m = vconcat(picked);
  const auto n = static_cast<Eigen::Index>(positions.size());
  Var anchor;
  if (use_anchor) {
    std::vector<Var> rep(static_cast<std::size_t>(n), z_anchor);
    anchor = vconcat(rep);
  } else {
    anchor = tape.constant(Mat::Zero(n, cfg_.repr_dim()));
  }
  const std::vector<Var> parts = {anchor, m};
  Var h = gelu(linear(tape, hconcat(parts), xmlm_w1_, xmlm_b1_));
  return linear(tape, h, xmlm_w2_, xmlm_b2_);
}

void Model::expand_classes(int n, Rng& rng) {
  if (n < 0) throw InputError("cannot shrink the classifier");
  const Eigen::Index old = cls_w_.value.rows();
  const Eigen::Index r = cfg_.repr_dim();
  Mat w(old + n, r);
  w.topRows(old) = cls_w_.value;
  w.bottomRows(n) = normal_init(n, r, cfg_.init_std, rng);
  Mat b = Mat::Zero(1, old + n);
  b.leftCols(old) = cls_b_.value;
  cls_w_.value = std::move(w);
  cls_b_.value = std::move(b);
  cls_w_.zero_grad();
  cls_b_.zero_grad();
}

std::vector<Param*> Model::encoder_params() {
  std::vector<Param*> ps = {&tok_embed_, &pos_embed_, &emb_ln_g_, &emb_ln_b_};
  for (Layer& L : layers_) {
    for (Param* p : {&L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo, &L.ln1_g, &L.ln1_b, &L.w1, &L.b1, &L.w2,
                     &L.b2, &L.ln2_g, &L.ln2_b})
      ps.push_back(p);
  }
  return ps;
}

std::vector<Param*> Model::classifier_params() { return {&cls_w_, &cls_b_}; }
std::vector<Param*> Model::projection_params() { return {&proj_w1_, &proj_b1_, &proj_w2_, &proj_b2_}; }
std::vector<Param*> Model::xmlm_params() { return {&xmlm_w1_, &xmlm_b1_, &xmlm_w2_, &xmlm_b2_}; }

std::vector<Param*> Model::momentum_params() {
  std::vector<Param*> ps = encoder_params();
  for (Param* p : projection_params()) ps.push_back(p);
  return ps;
}

std::vector<Param*> Model::all_params() {
  std::vector<Param*> ps = encoder_params();
  for (auto group : {classifier_params(), projection_params(), xmlm_params()})
    for (Param* p : group) ps.push_back(p);
  return ps;
}

std::vector<const Param*> Model::all_params() const {
  auto ps = const_cast<Model*>(this)->all_params();
  return {ps.begin(), ps.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : all_params()) n += static_cast<std::size_t>(p->size());
  return n;
}

void Model::zero_grad() {
  for (Param* p : all_params()) p->zero_grad();
}

RowVec Model::representation(const Instance& x) {
  Tape tape(false);
  return encode(tape, x).value().row(0);
}

Mat Model::representations(std::span<const Instance> xs) {
  Mat out(static_cast<Eigen::Index>(xs.size()), cfg_.repr_dim());
  for (std::size_t i = 0; i < xs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = representation(xs[i]);
  return out;
}

RowVec Model::logits(const Instance& x) {
  Tape tape(false);
  return classify(tape, encode(tape, x)).value().row(0);
}

double cross_entropy_value(const RowVec& logits, int target) {
  const double m = logits.maxCoeff();
  return -(logits(target) - m - std::log((logits.array() - m).exp().sum()));
}

int argmax(const RowVec& v) {
  if (v.size() == 0) throw ShapeError("argmax of an empty vector");
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

nlohmann::json checkpoint_json(const Model& model, std::span<const int> class_order) {
  nlohmann::json params = nlohmann::json::object();
  for (const Param* p : model.all_params()) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(p->size()));
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) data.push_back(p->value(i, j));
    params[p->name] = {{"rows", p->value.rows()}, {"cols", p->value.cols()}, {"data", std::move(data)}};
  }
  return {{"format", "repcl-checkpoint-1"},
          {"config", model.config().to_json()},
          {"class_order", std::vector<int>(class_order.begin(), class_order.end())},
          {"params", std::move(params)}};
}

void save_checkpoint(const Model& model, std::span<const int> class_order, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model, class_order).dump();
}

Checkpoint checkpoint_from_json(const nlohmann::json& j, const std::optional<EncoderConfig>& expected) {
  if (j.value("format", "") != "repcl-checkpoint-1") throw ConfigError("not a repcl checkpoint");
  const EncoderConfig cfg = EncoderConfig::from_json(j.at("config"));
  if (expected && !(*expected == cfg))
    throw ConfigError("checkpoint encoder config " + cfg.to_json().dump() + " does not match expected " +
                      expected->to_json().dump());
  Checkpoint ck{Model(cfg, 0), j.at("class_order").get<std::vector<int>>()};
  Rng rng(0);
  ck.model.expand_classes(static_cast<int>(ck.class_order.size()), rng);
  const auto& params = j.at("params");
  for (Param* p : ck.model.all_params()) {
    if (!params.contains(p->name)) throw ConfigError("checkpoint is missing parameter " + p->name);
    const auto& e = params.at(p->name);
    const auto r = e.at("rows").get<Eigen::Index>();
    const auto c = e.at("cols").get<Eigen::Index>();
    if (r != p->value.rows() || c != p->value.cols())
      throw ConfigError("checkpoint parameter " + p->name + " has the wrong shape");
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != r * c) throw ConfigError("checkpoint parameter " + p->name + " is truncated");
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < c; ++k) p->value(i, k) = data[static_cast<std::size_t>(i * c + k)];
  }
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<EncoderConfig>& expected) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return checkpoint_from_json(j, expected);
}

}  // namespace repcl
