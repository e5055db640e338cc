#include "tokenlens/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokenlens/error.hpp"
#include "tokenlens/parallel.hpp"
#include "tokenlens/random.hpp"

namespace tokenlens::probes {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "probes", msg);
}

bool is_bucketed(const std::string& kind) {
  return kind == "object_count" || kind == "scene_complexity";
}

std::vector<std::span<double>> parameters(ProbeModel& m) {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    out.push_back(m.weights[l].data());
    out.emplace_back(m.biases[l]);
  }
  return out;
}

std::vector<std::span<double>> parameters(Gradients& g) {
  std::vector<std::span<double>> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.push_back(g.weights[l].data());
    out.emplace_back(g.biases[l]);
  }
  return out;
}

Gradients zeros_like(const ProbeModel& m) {
  Gradients g;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    g.weights.emplace_back(m.weights[l].rows(), m.weights[l].cols());
    g.biases.emplace_back(m.biases[l].size(), 0.0);
  }
  return g;
}

std::vector<double> standardized(const ProbeModel& m, std::span<const double> x) {
  std::vector<double> a(x.begin(), x.end());
  if (!m.mean.empty()) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (a[i] - m.mean[i]) / m.scale[i];
  }
  return a;
}

// Pre-activations of every layer for one input; activations[0] is the
// standardized input and activations[l+1] = relu(pre[l]) except the head.
struct Trace {
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<double>> pre;
};

Trace forward(const ProbeModel& m, std::span<const double> x) {
  Trace t;
  t.activations.push_back(standardized(m, x));
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const Matrix& w = m.weights[l];
    const auto& in = t.activations.back();
    std::vector<double> z(m.biases[l]);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      const auto row = w.row(o);
      double s = 0.0;
      for (std::size_t i = 0; i < row.size(); ++i) s += row[i] * in[i];
      z[o] += s;
    }
    t.pre.push_back(z);
    if (l + 1 < m.weights.size()) {
      for (auto& v : z) v = std::max(0.0, v);
    }
    t.activations.push_back(std::move(z));
  }
  return t;
}

// Softmax in place; returns log-sum-exp of the logits.
double softmax(std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : logits) v /= sum;
  return mx + std::log(sum);
}

double accuracy(const ProbeModel& m, const ProbeDataset& ds, std::span<const std::size_t> idx) {
  if (idx.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hits = 0;
  for (auto i : idx) hits += m.predict(ds.x[i]) == ds.y[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return s / static_cast<double>(v.size());
}

}  // namespace

LabelSpec LabelSpec::for_kind(const std::string& kind) {
  LabelSpec s;
  s.kind = kind;
  if (kind == "object_count") {
    s.edges = {10, 50};
  } else if (kind == "scene_complexity") {
    s.edges = {2, 5};
  } else if (kind != "unique_shapes" && kind != "unique_colors" && kind != "dominant_shape" &&
             kind != "dominant_color") {
    fail(ErrorKind::invalid_argument, "unknown label kind '" + kind + "'");
  }
  return s;
}

std::size_t LabelSpec::n_classes(const synthgen::VisualVocabulary& vocab) const {
  if (is_bucketed(kind)) return edges.size() + 1;
  if (kind == "unique_shapes" || kind == "dominant_shape") return vocab.shapes.size();
  if (kind == "unique_colors" || kind == "dominant_color") return vocab.colors.size();
  fail(ErrorKind::invalid_argument, "unknown label kind '" + kind + "'");
}

int LabelSpec::label(const synthgen::AttributeManifest& m,
                     const synthgen::VisualVocabulary& vocab) const {
  if (is_bucketed(kind)) {
    if (!std::is_sorted(edges.begin(), edges.end()))
      fail(ErrorKind::invalid_argument, "bucket edges must be ascending");
    return static_cast<int>(
        std::count_if(edges.begin(), edges.end(), [&](int e) { return m.object_count > e; }));
  }
  if (kind == "unique_shapes") return m.unique_shapes - 1;
  if (kind == "unique_colors") return m.unique_colors - 1;
  if (kind == "dominant_shape")
    return static_cast<int>(vocab.shape_index(synthgen::parse_shape(m.dominant_shape)));
  if (kind == "dominant_color") return static_cast<int>(vocab.color_index(m.dominant_color));
  fail(ErrorKind::invalid_argument, "unknown label kind '" + kind + "'");
}

void ProbeDataset::validate() const {
  if (x.size() != y.size()) fail(ErrorKind::contract, "feature and label counts differ");
  if (x.empty()) fail(ErrorKind::contract, "empty probe dataset");
  std::vector<bool> seen(n_classes, false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != x[0].size()) fail(ErrorKind::contract, "embeddings differ in dimension");
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= n_classes)
      fail(ErrorKind::contract, fmt::format("label {} outside [0, {})", y[i], n_classes));
    seen[static_cast<std::size_t>(y[i])] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2)
    fail(ErrorKind::degenerate, "probe dataset needs at least two classes");
}

ProbeDataset build_probe_dataset(std::span<const hsd::HiddenStateDump> dumps,
                                 std::span<const synthgen::AttributeManifest> manifests,
                                 const LabelSpec& label, const synthgen::VisualVocabulary& vocab,
                                 std::size_t layer, std::size_t position) {
  if (dumps.size() != manifests.size()) fail(ErrorKind::contract, "one manifest per dump required");
  if (dumps.empty()) fail(ErrorKind::contract, "no dumps given");
  const auto& first = dumps.front();
  ProbeDataset ds;
  ds.n_classes = label.n_classes(vocab);
  ds.layer = layer;
  ds.position = position;
  ds.label_kind = label.kind;
  for (std::size_t i = 0; i < dumps.size(); ++i) {
    const auto& d = dumps[i];
    if (d.n_tokens != first.n_tokens || d.dim != first.dim || d.n_layers != first.n_layers) {
      fail(ErrorKind::contract,
           fmt::format("dump {} has shape {}x{}x{}, expected {}x{}x{} (images must share one size)",
                       i, d.n_layers, d.n_tokens, d.dim, first.n_layers, first.n_tokens, first.dim));
    }
    if (layer >= d.n_layers || position >= d.n_tokens)
      fail(ErrorKind::invalid_argument, "layer or position out of range");
    const float* row = d.layers[layer].data() + position * d.dim;
    ds.x.emplace_back(row, row + d.dim);
    ds.y.push_back(label.label(manifests[i], vocab));
  }
  return ds;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) fail(ErrorKind::invalid_argument, "learning rate must be positive");
  if (batch_size == 0) fail(ErrorKind::invalid_argument, "batch size must be positive");
  if (!(val_fraction >= 0 && val_fraction < 1))
    fail(ErrorKind::invalid_argument, "validation fraction must lie in [0, 1)");
  for (auto h : hidden)
    if (h == 0) fail(ErrorKind::invalid_argument, "hidden widths must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"hidden", c.hidden},         {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},     {"batch_size", c.batch_size},
          {"epochs", c.epochs},         {"val_fraction", c.val_fraction},
          {"split_seed", c.split_seed}, {"init_seed", c.init_seed},
          {"standardize", c.standardize}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.standardize = j.value("standardize", c.standardize);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("training config: ") + e.what());
  }
}

ProbeModel ProbeModel::init(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                            std::size_t n_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ProbeModel m;
  std::size_t in = in_dim;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(n_classes);
  for (auto out : widths) {
    Matrix w(out, in);
    const double limit = std::sqrt(6.0 / static_cast<double>(in));  // He uniform
    for (auto& v : w.data()) v = random::uniform(rng, -limit, limit);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
    in = out;
  }
  return m;
}

std::vector<double> ProbeModel::predict_proba(std::span<const double> x) const {
  auto t = forward(*this, x);
  auto p = std::move(t.activations.back());
  softmax(p);
  return p;
}

int ProbeModel::predict(std::span<const double> x) const {
  const auto t = forward(*this, x);
  const auto& z = t.activations.back();
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double loss_and_gradient(const ProbeModel& m, std::span<const std::vector<double>> x,
                         std::span<const int> y, Gradients* grad) {
  if (x.size() != y.size() || x.empty()) fail(ErrorKind::contract, "batch shape mismatch");
  if (grad) *grad = zeros_like(m);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  double loss = 0.0;
  const std::size_t n_layers = m.weights.size();
  for (std::size_t s = 0; s < x.size(); ++s) {
    Trace t = forward(m, x[s]);
    auto delta = t.activations.back();
    const double lse = softmax(delta);
    const auto cls = static_cast<std::size_t>(y[s]);
    loss += lse - t.pre.back()[cls];
    if (!grad) continue;
    delta[cls] -= 1.0;
    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& in = t.activations[l];
      Matrix& gw = grad->weights[l];
      for (std::size_t o = 0; o < gw.rows(); ++o) {
        const double d = delta[o] * inv_n;
        if (d == 0.0) continue;
        auto row = gw.row(o);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += d * in[i];
        grad->biases[l][o] += d;
      }
      if (l == 0) break;
      const Matrix& w = m.weights[l];
      std::vector<double> prev(w.cols(), 0.0);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        if (delta[o] == 0.0) continue;
        const auto row = w.row(o);
        for (std::size_t i = 0; i < row.size(); ++i) prev[i] += row[i] * delta[o];
      }
      const auto& z = t.pre[l - 1];
      for (std::size_t i = 0; i < prev.size(); ++i)
        if (z[i] <= 0.0) prev[i] = 0.0;
      delta = std::move(prev);
    }
  }
  return loss * inv_n;
}

double gradient_check(const ProbeModel& model, std::span<const std::vector<double>> x,
                      std::span<const int> y, double step, double floor) {
  Gradients analytic;
  loss_and_gradient(model, x, y, &analytic);
  ProbeModel probe = model;
  auto params = parameters(probe);
  auto grads = parameters(analytic);
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + step;
      const double up = loss_and_gradient(probe, x, y, nullptr);
      params[p][i] = saved - step;
      const double down = loss_and_gradient(probe, x, y, nullptr);
      params[p][i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = grads[p][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

StratifiedSplit stratified_split(std::span<const int> labels, double val_fraction,
                                 std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  StratifiedSplit split;
  for (auto& [cls, idx] : by_class) {
    random::shuffle(idx, rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(idx.size())));
    split.val.insert(split.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  return split;
}

TrainResult train_probe(const ProbeDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (ds.x.size() < 20)
    fail(ErrorKind::contract, fmt::format("need at least 20 examples, got {}", ds.x.size()));
  const auto split = stratified_split(ds.y, cfg.val_fraction, cfg.split_seed);
  {
    std::vector<int> train_labels;
    for (auto i : split.train) train_labels.push_back(ds.y[i]);
    std::sort(train_labels.begin(), train_labels.end());
    if (std::unique(train_labels.begin(), train_labels.end()) - train_labels.begin() < 2)
      fail(ErrorKind::degenerate, "training split contains a single class");
  }

  const std::size_t dim = ds.x.front().size();
  TrainResult result;
  ProbeModel& model = result.model;
  model = ProbeModel::init(dim, cfg.hidden, ds.n_classes, cfg.init_seed);
  if (cfg.standardize) {
    model.mean.assign(dim, 0.0);
    model.scale.assign(dim, 0.0);
    for (auto i : split.train)
      for (std::size_t c = 0; c < dim; ++c) model.mean[c] += ds.x[i][c];
    for (auto& v : model.mean) v /= static_cast<double>(split.train.size());
    for (auto i : split.train)
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = ds.x[i][c] - model.mean[c];
        model.scale[c] += d * d;
      }
    for (auto& v : model.scale) {
      v = std::sqrt(v / static_cast<double>(split.train.size()));
      if (!(v > 1e-12)) v = 1.0;  // constant feature: centre only
    }
  }

  Gradients m1 = zeros_like(model);
  Gradients m2 = zeros_like(model);
  auto params = parameters(model);
  auto first = parameters(m1);
  auto second = parameters(m2);

  std::mt19937_64 rng(cfg.split_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order = split.train;
  std::vector<std::vector<double>> bx;
  std::vector<int> by;
  Gradients g;
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    random::shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      bx.clear();
      by.clear();
      for (std::size_t k = start; k < end; ++k) {
        bx.push_back(ds.x[order[k]]);
        by.push_back(ds.y[order[k]]);
      }
      loss_and_gradient(model, bx, by, &g);
      ++t;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      auto grads = parameters(g);
      for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) {
          const double gi = grads[p][i];
          first[p][i] = cfg.beta1 * first[p][i] + (1 - cfg.beta1) * gi;
          second[p][i] = cfg.beta2 * second[p][i] + (1 - cfg.beta2) * gi * gi;
          const double mhat = first[p][i] / c1;
          const double vhat = second[p][i] / c2;
          params[p][i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
      }
    }
    if (cfg.track_history) result.train_acc_history.push_back(accuracy(model, ds, split.train));
  }
  result.train_acc = accuracy(model, ds, split.train);
  result.val_acc = accuracy(model, ds, split.val);
  return result;
}

ProbeGrid probe_grid(std::span<const hsd::HiddenStateDump> dumps,
                     std::span<const hsd::TokenRoleMap> roles,
                     std::span<const synthgen::AttributeManifest> manifests,
                     const LabelSpec& label, const synthgen::VisualVocabulary& vocab,
                     const TrainConfig& cfg, std::size_t jobs) {
  if (dumps.empty()) fail(ErrorKind::contract, "no dumps given");
  if (roles.size() != dumps.size()) fail(ErrorKind::contract, "one role map per dump required");
  ProbeGrid grid;
  grid.n_layers = dumps.front().n_layers;
  grid.n_tokens = dumps.front().n_tokens;
  grid.roles = roles.front().roles;
  if (grid.roles.size() != grid.n_tokens) fail(ErrorKind::contract, "role map length differs from n_tokens");
  // Shape checks happen once here so worker threads only see valid input.
  build_probe_dataset(dumps, manifests, label, vocab, 0, 0);

  grid.train_acc.assign(grid.n_layers, std::vector<double>(grid.n_tokens));
  grid.val_acc = grid.train_acc;
  parallel_for(grid.n_layers * grid.n_tokens, jobs, [&](std::size_t task) {
    const std::size_t layer = task / grid.n_tokens;
    const std::size_t pos = task % grid.n_tokens;
    const auto ds = build_probe_dataset(dumps, manifests, label, vocab, layer, pos);
    const auto r = train_probe(ds, cfg);
    grid.train_acc[layer][pos] = r.train_acc;
    grid.val_acc[layer][pos] = r.val_acc;
  });

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t l = 0; l < grid.n_layers; ++l) {
    std::vector<double> vision;
    std::vector<double> text;
    for (std::size_t p = 0; p < grid.n_tokens; ++p) {
      if (grid.roles[p] == hsd::TokenRole::vision) vision.push_back(grid.val_acc[l][p]);
      if (grid.roles[p] == hsd::TokenRole::text) text.push_back(grid.val_acc[l][p]);
    }
    LayerSummary s;
    s.layer = l;
    s.vision_mean = vision.empty() ? nan : mean_of(vision);
    s.vision_variance = vision.empty() ? nan : variance_of(vision);
    s.text_mean = text.empty() ? nan : mean_of(text);
    s.text_variance = text.empty() ? nan : variance_of(text);
    grid.summaries.push_back(s);
  }
  return grid;
}

}  // namespace tokenlens::probes
