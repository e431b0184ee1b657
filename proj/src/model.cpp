#include "rtrans/model.hpp"

#include <cmath>
#include <stdexcept>

#include "rtrans/rng.hpp"

namespace rtrans {

using ad::Var;

void ModelConfig::validate() const {
  if (segment_len < 1 || feature_dim < 1 || num_classes < 1 ||
      num_categories < 1 || heads < 1 || mlp_hidden < 1) {
    throw ConfigError("all model dimensions must be >= 1");
  }
  if (feature_dim % heads != 0) {
    throw ConfigError("feature_dim " + std::to_string(feature_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
}

bool ModelConfig::same_architecture(const ModelConfig& other) const {
  return segment_len == other.segment_len &&
         feature_dim == other.feature_dim &&
         num_classes == other.num_classes &&
         num_categories == other.num_categories && heads == other.heads &&
         mlp_hidden == other.mlp_hidden;
}

int ParamSet::add(std::string name, Matrix value) {
  entries.push_back({std::move(name), std::move(value)});
  return static_cast<int>(entries.size()) - 1;
}

const Matrix& ParamSet::at(std::string_view name) const {
  for (const Entry& e : entries) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

Matrix& ParamSet::at(std::string_view name) {
  for (Entry& e : entries) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const Entry& e : entries) n += static_cast<std::size_t>(e.value.size());
  return n;
}

namespace {

constexpr int kNumFusionModules = 3;
constexpr int kFfExpansion = 2;

Matrix uniform_fan_in(Rng& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

// Walks every parameter of the model in its canonical order.
template <typename Fn>
void for_each_param(const ModelConfig& cfg, Fn&& fn) {
  const int d = cfg.feature_dim;
  const int h = cfg.mlp_hidden;
  for (int i = 0; i < kNumFusionModules; ++i) {
    const std::string base = "fusion" + std::to_string(i) + ".";
    for (const char* attn : {"self.", "cross."}) {
      for (const char* proj : {"wq", "wk", "wv", "wo"}) {
        fn(base + attn + proj, d, d, d);
        fn(base + attn + (proj[1] == 'q'   ? "bq"
                          : proj[1] == 'k' ? "bk"
                          : proj[1] == 'v' ? "bv"
                                           : "bo"),
           1, d, d);
      }
    }
    fn(base + "ff.w1", d, kFfExpansion * d, d);
    fn(base + "ff.b1", 1, kFfExpansion * d, d);
    fn(base + "ff.w2", kFfExpansion * d, d, kFfExpansion * d);
    fn(base + "ff.b2", 1, d, kFfExpansion * d);
    for (const char* norm : {"norm1", "norm2", "norm3"}) {
      fn(base + norm + ".gamma", 1, d, 0);
      fn(base + norm + ".beta", 1, d, 0);
    }
  }
  for (int n = 0; n < cfg.num_categories; ++n) {
    const std::string base = "head" + std::to_string(n) + ".";
    fn(base + "norm.gamma", 1, d, 0);
    fn(base + "norm.beta", 1, d, 0);
    fn(base + "fc1.w", d, h, d);
    fn(base + "fc1.b", 1, h, d);
    fn(base + "fc2.w", h, cfg.num_classes, h);
    fn(base + "fc2.b", 1, cfg.num_classes, h);
  }
}

bool is_gamma(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
}

bool is_beta(const std::string& name) {
  return name.size() >= 4 && name.compare(name.size() - 4, 4, "beta") == 0;
}

}  // namespace

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  Rng rng(config.seed);
  for_each_param(config, [&](const std::string& name, int rows, int cols,
                             int fan_in) {
    if (is_gamma(name)) {
      mp.params.add(name, Matrix::Ones(rows, cols));
    } else if (is_beta(name)) {
      mp.params.add(name, Matrix::Zero(rows, cols));
    } else {
      mp.params.add(name, uniform_fan_in(rng, rows, cols, fan_in));
    }
  });
  return mp;
}

BoundModel bind_model(ad::Tape& tape, const ModelParams& params,
                      bool requires_grad) {
  params.config.validate();
  BoundModel m;
  m.config = params.config;
  m.flat.reserve(params.params.entries.size());
  for (const ParamSet::Entry& e : params.params.entries) {
    m.flat.push_back(tape.leaf(e.value, requires_grad));
  }

  std::size_t i = 0;
  auto next = [&]() { return m.flat[i++]; };
  for (int f = 0; f < kNumFusionModules; ++f) {
    FusionVars fv;
    for (AttentionVars* attn : {&fv.self_attn, &fv.cross_attn}) {
      attn->wq = next();
      attn->bq = next();
      attn->wk = next();
      attn->bk = next();
      attn->wv = next();
      attn->bv = next();
      attn->wo = next();
      attn->bo = next();
    }
    fv.ff_w1 = next();
    fv.ff_b1 = next();
    fv.ff_w2 = next();
    fv.ff_b2 = next();
    fv.n1_gamma = next();
    fv.n1_beta = next();
    fv.n2_gamma = next();
    fv.n2_beta = next();
    fv.n3_gamma = next();
    fv.n3_beta = next();
    m.fusion.push_back(fv);
  }
  for (int n = 0; n < params.config.num_categories; ++n) {
    HeadVars hv;
    hv.norm_gamma = next();
    hv.norm_beta = next();
    hv.fc1_w = next();
    hv.fc1_b = next();
    hv.fc2_w = next();
    hv.fc2_b = next();
    m.heads.push_back(hv);
  }
  return m;
}

namespace {

Var linear(const Var& x, const Var& w, const Var& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

Var fusion_module(const FusionVars& p, const Var& x, const Var& z_prev,
                  int heads) {
  Var a = ad::layernorm_rows(x + multihead_attention(p.self_attn, x, x, heads),
                             p.n1_gamma, p.n1_beta);
  Var b = ad::layernorm_rows(
      a + multihead_attention(p.cross_attn, a, z_prev, heads), p.n2_gamma,
      p.n2_beta);
  Var ff = linear(ad::relu(linear(b, p.ff_w1, p.ff_b1)), p.ff_w2, p.ff_b2);
  return ad::layernorm_rows(b + ff, p.n3_gamma, p.n3_beta);
}

}  // namespace

Var multihead_attention(const AttentionVars& p, const Var& query_src,
                        const Var& kv_src, int heads) {
  Var q = linear(query_src, p.wq, p.bq);
  Var k = linear(kv_src, p.wk, p.bk);
  Var v = linear(kv_src, p.wv, p.bv);
  const int dh = static_cast<int>(q.cols()) / heads;
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    outs.push_back(ad::attention(ad::slice_cols(q, h * dh, dh),
                                 ad::slice_cols(k, h * dh, dh),
                                 ad::slice_cols(v, h * dh, dh)));
  }
  return linear(ad::concat_cols(outs), p.wo, p.bo);
}

Var fusion_forward(const BoundModel& m, const Var& z_prev, const Var& x) {
  const Eigen::Index l = m.config.segment_len, d = m.config.feature_dim;
  if (x.rows() != l || x.cols() != d || z_prev.rows() != l ||
      z_prev.cols() != d) {
    throw ShapeMismatchError(
        "fusion_forward: inputs must be " + std::to_string(l) + "x" +
        std::to_string(d) + ", got (" + std::to_string(x.rows()) + "x" +
        std::to_string(x.cols()) + ") and (" + std::to_string(z_prev.rows()) +
        "x" + std::to_string(z_prev.cols()) + ")");
  }
  Var r1 = fusion_module(m.fusion[0], x, z_prev, m.config.heads);
  Var r2 = fusion_module(m.fusion[1], r1, z_prev, m.config.heads) + x;
  return fusion_module(m.fusion[2], r2, z_prev, m.config.heads);
}

std::vector<Var> heads_forward(const BoundModel& m, const Var& z) {
  Var pooled = ad::mean_over_rows(z);  // 1 x D
  std::vector<Var> logits;
  logits.reserve(m.heads.size());
  for (const HeadVars& h : m.heads) {
    Var t = ad::relu(ad::layernorm_rows(pooled, h.norm_gamma, h.norm_beta));
    t = ad::relu(linear(t, h.fc1_w, h.fc1_b));
    logits.push_back(linear(t, h.fc2_w, h.fc2_b));
  }
  return logits;
}

TrialForward forward_trial(const BoundModel& m,
                           const std::vector<Matrix>& segments) {
  if (segments.empty()) {
    throw EmptySequenceError("forward_trial needs at least one segment");
  }
  ad::Tape& tape = *m.flat.front().tape;
  const Eigen::Index l = m.config.segment_len, d = m.config.feature_dim;

  TrialForward out;
  out.averaged_is_probabilities = m.config.average_probabilities;
  Var z = tape.constant(Matrix::Zero(l, d));
  for (const Matrix& seg : segments) {
    Var x = tape.constant(seg);
    z = fusion_forward(m, z, x);
    out.segment_logits.push_back(heads_forward(m, z));
  }

  const std::size_t categories = m.heads.size();
  const std::size_t s_count = out.segment_logits.size();
  out.averaged.reserve(categories);
  for (std::size_t n = 0; n < categories; ++n) {
    std::vector<Var> rows;
    rows.reserve(s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
      Var row = out.segment_logits[s][n];
      rows.push_back(m.config.average_probabilities ? ad::softmax_rows(row)
                                                    : row);
    }
    out.averaged.push_back(ad::mean_over_rows(ad::concat_rows(rows)));
  }
  return out;
}

}  // namespace rtrans
