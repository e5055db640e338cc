#include "tokenlens/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokenlens/ablation.hpp"
#include "tokenlens/csv.hpp"
#include "tokenlens/ftdata.hpp"
#include "tokenlens/hsdio.hpp"
#include "tokenlens/metrics.hpp"
#include "tokenlens/parallel.hpp"
#include "tokenlens/probes.hpp"
#include "tokenlens/stats.hpp"
#include "tokenlens/svdalign.hpp"
#include "tokenlens/synthgen.hpp"
#include "tokenlens/toyhsd.hpp"

namespace tokenlens::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, "cli", msg); }

// ---------------------------------------------------------------------------
// Bound option values, one block per verb.

struct Common {
  std::string out;
  std::string format = "csv";
  std::size_t jobs = 1;
};

struct DumpInputs {
  std::vector<std::string> dumps;
  std::string dump_dir;
};

struct Options {
  struct {
    Common c;
    std::string config;
    std::size_t base_configs = 20;
    std::string counts;
    std::uint64_t seed = 0;
    std::string shapes;
    std::string colors;
    std::string sizes;
    std::string image_format;
    int canvas = 1000;
    double max_overlap = 0.30;
  } generate;
  struct {
    Common c;
    std::string dataset;
    std::string config;
    std::size_t layers = 4;
    std::size_t special = 1;
    std::size_t vision = 48;
    std::size_t text = 12;
    std::size_t dim = 32;
    std::uint64_t seed = 0;
    double tau_base = 0.5;
    double tau_per_object = 0.05;
    double jitter = 0.1;
  } fabricate;
  struct {
    DumpInputs in;
    std::string dataset;
  } validate;
  struct {
    Common c;
    DumpInputs in;
    std::string modality = "vision";
  } metrics;
  struct {
    Common c;
    DumpInputs in;
    std::size_t k = svdalign::kDefaultRank;
    std::string rank_mode = "fixed";
  } svd;
  struct {
    Common c;
    DumpInputs in;
    std::string dataset;
    std::string label = "object_count";
    std::string edges;
    std::string train_config;
    std::string hidden = "256,256";
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
    bool no_standardize = false;
  } probe;
  struct {
    Common c;
    std::vector<std::string> roles;
    std::string dump_dir;
    std::string rho;
    std::uint64_t seed = 0;
  } ablate;
  struct {
    Common c;
    std::string responses;
    std::string expect_rho;
  } score;
  struct {
    Common c;
    std::string metrics;
    std::string svd;
    std::string dataset;
    std::string modality = "vision";
    bool pooled = false;
  } correlate;
  struct {
    std::string run;
    std::string out;
    std::string format = "csv";
  } report;
  struct {
    Common c;
    std::string records;
    double min_area = 0.03;
    double max_area = 0.30;
    double alpha = 0.05;
    std::string join = "any";
  } ftdata;
  struct {
    std::string snapshot;
  } rerun;
};

void add_common(CLI::App* sub, Common& c, bool emits_tables = true) {
  sub->add_option("--out", c.out,
                  "Output directory (default: $TOKENLENS_OUT, else ./tokenlens-out)");
  if (emits_tables) {
    sub->add_option("--format", c.format, "Table format")
        ->check(CLI::IsMember({"csv", "jsonlines"}))
        ->capture_default_str();
  }
  sub->add_option("--jobs", c.jobs, "Worker threads (0 = all cores)")->capture_default_str();
}

void add_dump_inputs(CLI::App* sub, DumpInputs& in) {
  sub->add_option("--dump", in.dumps, "Hidden-state dump file (repeatable)");
  sub->add_option("--dumps", in.dump_dir, "Directory of *.hsd dumps");
}

std::unique_ptr<CLI::App> build_app(Options& o) {
  auto app = std::make_unique<CLI::App>(
      "Visual-token redundancy toolkit: synthetic benchmark generation, compression and SVD "
      "alignment metrics, probes, ablation planning and correlation reports.",
      "tokenlens");
  app->require_subcommand(1);
  app->get_formatter()->column_width(34);

  auto* g = app->add_subcommand("generate", "Generate the synthetic 2D-shapes benchmark");
  add_common(g, o.generate.c, false);
  g->add_option("--config", o.generate.config, "Dataset config JSON (default: shipped 8,220-image schedule)");
  g->add_option("--base-configs", o.generate.base_configs, "Number of base configurations")->capture_default_str();
  g->add_option("--counts", o.generate.counts,
                "Object-count grid used on every axis, e.g. 1,5,10-20,30-90:10");
  g->add_option("--seed", o.generate.seed, "Generator seed");
  g->add_option("--shapes", o.generate.shapes, "Shape vocabulary, comma-separated");
  g->add_option("--colors", o.generate.colors, "Color vocabulary as name:#rrggbb, comma-separated");
  g->add_option("--sizes", o.generate.sizes, "Size classes as fractions of canvas width, comma-separated");
  g->add_option("--image-format", o.generate.image_format, "Raster format")
      ->check(CLI::IsMember({"png", "ppm"}));
  g->add_option("--canvas", o.generate.canvas, "Square canvas side in pixels");
  g->add_option("--max-overlap", o.generate.max_overlap,
                "Largest pairwise bbox overlap (fraction of the smaller box)");

  auto* f = app->add_subcommand("fabricate", "Write toy hidden-state dumps for a generated dataset");
  add_common(f, o.fabricate.c, false);
  f->add_option("--dataset", o.fabricate.dataset, "Generated dataset directory")->required();
  f->add_option("--config", o.fabricate.config, "Toy generator config JSON");
  f->add_option("--layers", o.fabricate.layers, "Layers per dump")->capture_default_str();
  f->add_option("--special-tokens", o.fabricate.special, "Leading special tokens")->capture_default_str();
  f->add_option("--vision-tokens", o.fabricate.vision, "Vision tokens")->capture_default_str();
  f->add_option("--text-tokens", o.fabricate.text, "Text tokens")->capture_default_str();
  f->add_option("--dim", o.fabricate.dim, "Embedding dimension")->capture_default_str();
  f->add_option("--seed", o.fabricate.seed, "Toy generator seed")->capture_default_str();
  f->add_option("--tau-base", o.fabricate.tau_base, "Vision spectral decay length at zero objects")
      ->capture_default_str();
  f->add_option("--tau-per-object", o.fabricate.tau_per_object, "Decay length added per object")
      ->capture_default_str();
  f->add_option("--jitter", o.fabricate.jitter, "Relative per-image jitter of the decay length")
      ->capture_default_str();

  auto* v = app->add_subcommand("validate", "Check dumps and generated datasets");
  add_dump_inputs(v, o.validate.in);
  v->add_option("--dataset", o.validate.dataset, "Dataset directory to recount against its specs");

  auto* m = app->add_subcommand("metrics", "Per-layer compression metrics");
  add_common(m, o.metrics.c);
  add_dump_inputs(m, o.metrics.in);
  m->add_option("--modality", o.metrics.modality, "Token rows to analyse")
      ->check(CLI::IsMember({"vision", "text", "all"}))
      ->capture_default_str();

  auto* s = app->add_subcommand("svd", "Per-layer SVD alignment metrics");
  add_common(s, o.svd.c);
  add_dump_inputs(s, o.svd.in);
  s->add_option("--k", o.svd.k, "Reconstruction rank")->capture_default_str();
  s->add_option("--rank-mode", o.svd.rank_mode, "fixed uses --k; stable-rank uses round(stable rank)")
      ->check(CLI::IsMember({"fixed", "stable-rank"}))
      ->capture_default_str();

  auto* p = app->add_subcommand("probe", "Train per-(layer, position) probes");
  add_common(p, o.probe.c);
  add_dump_inputs(p, o.probe.in);
  p->add_option("--dataset", o.probe.dataset, "Dataset directory holding the attribute manifests")->required();
  p->add_option("--label", o.probe.label, "Attribute to predict")
      ->check(CLI::IsMember(std::vector<std::string>(std::begin(probes::kLabelKinds),
                                                     std::end(probes::kLabelKinds))))
      ->capture_default_str();
  p->add_option("--edges", o.probe.edges, "Bucket edges for count labels, e.g. 10,50");
  p->add_option("--train-config", o.probe.train_config, "Training config JSON (flags override it)");
  p->add_option("--hidden", o.probe.hidden, "Hidden widths; empty for a linear probe")->capture_default_str();
  p->add_option("--epochs", o.probe.epochs, "Training epochs")->capture_default_str();
  p->add_option("--batch-size", o.probe.batch_size, "Mini-batch size")->capture_default_str();
  p->add_option("--lr", o.probe.lr, "Adam learning rate")->capture_default_str();
  p->add_option("--val-fraction", o.probe.val_fraction, "Stratified validation fraction")->capture_default_str();
  p->add_option("--seed", o.probe.seed, "Split and initialisation seed")->capture_default_str();
  p->add_flag("--no-standardize", o.probe.no_standardize, "Skip per-dimension input standardization");

  auto* a = app->add_subcommand("ablate-plan", "Plan random vision-token ablations");
  add_common(a, o.ablate.c);
  a->add_option("--roles", o.ablate.roles, "Role manifest or dump file (repeatable)");
  a->add_option("--dumps", o.ablate.dump_dir, "Directory of *.hsd dumps");
  a->add_option("--rho", o.ablate.rho, "Ablation ratios (default 0,0.25,0.5,0.75,0.9,0.95,0.99)");
  a->add_option("--seed", o.ablate.seed, "Sampling seed")->capture_default_str();

  auto* sc = app->add_subcommand("score", "Grade model answers and build degradation curves");
  add_common(sc, o.score.c);
  sc->add_option("--responses", o.score.responses, "Table with prompt_id, rho, answer, gold, family")->required();
  sc->add_option("--expect-rho", o.score.expect_rho, "Ratios every family should cover");

  auto* c = app->add_subcommand("correlate", "Spearman correlations between metrics and attributes");
  add_common(c, o.correlate.c);
  c->add_option("--metrics", o.correlate.metrics, "Metrics table from `metrics`")->required();
  c->add_option("--svd", o.correlate.svd, "Optional table from `svd`, joined on (image_id, layer)");
  c->add_option("--dataset", o.correlate.dataset, "Dataset directory holding the attribute manifests")->required();
  c->add_option("--modality", o.correlate.modality, "Metrics rows to use")
      ->check(CLI::IsMember({"vision", "text", "all"}))
      ->capture_default_str();
  c->add_flag("--pooled", o.correlate.pooled, "Pool all layers instead of correlating per layer");

  auto* r = app->add_subcommand("report", "Assemble SVG charts and summary tables for a run directory");
  r->add_option("--run", o.report.run, "Run directory with tables from earlier verbs")->required();
  r->add_option("--out", o.report.out, "Report directory (default: <run>/report)");
  r->add_option("--format", o.report.format, "Table format")
      ->check(CLI::IsMember({"csv", "jsonlines"}))
      ->capture_default_str();

  auto* ft = app->add_subcommand("ftdata", "Filter annotation records and emit spatial prompt/target pairs");
  add_common(ft, o.ftdata.c);
  ft->add_option("--records", o.ftdata.records, "Annotation records, JSON lines")->required();
  ft->add_option("--min-area", o.ftdata.min_area, "Smallest box area fraction")->capture_default_str();
  ft->add_option("--max-area", o.ftdata.max_area, "Largest box area fraction")->capture_default_str();
  ft->add_option("--alpha", o.ftdata.alpha, "Centering tolerance")->capture_default_str();
  ft->add_option("--join", o.ftdata.join, "any: off-center on one axis suffices; all: both axes")
      ->check(CLI::IsMember({"any", "all"}))
      ->capture_default_str();

  auto* re = app->add_subcommand("rerun", "Repeat a run from its config snapshot");
  re->add_option("--snapshot", o.rerun.snapshot, "Snapshot JSON written by an earlier run")->required();
  return app;
}

// ---------------------------------------------------------------------------
// Shared helpers.

class Progress {
 public:
  Progress(std::ostream& err, std::string verb, std::size_t total)
      : err_(err), verb_(std::move(verb)), total_(total), step_(std::max<std::size_t>(1, total / 20)) {
    err_ << fmt::format("progress verb={} done=0 total={}\n", verb_, total_);
  }
  void tick() {
    std::lock_guard lock(mu_);
    ++done_;
    if (done_ % step_ == 0 || done_ == total_) report(done_);
  }
  void report(std::size_t done) {
    err_ << fmt::format("progress verb={} done={} total={}\n", verb_, done, total_);
  }

 private:
  std::ostream& err_;
  std::string verb_;
  std::size_t total_;
  std::size_t step_;
  std::size_t done_ = 0;
  std::mutex mu_;
};

std::size_t resolve_jobs(std::size_t jobs) {
  return jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : jobs;
}

fs::path resolve_out(const std::string& out) {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("TOKENLENS_OUT"); env && *env) return env;
  return "tokenlens-out";
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) fail(ErrorKind::missing_input, what + " not found: " + p.string());
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

long parse_long(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::invalid_argument, "bad " + what + " '" + s + "'");
  }
}

double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::invalid_argument, "bad " + what + " '" + s + "'");
  }
}

// "1,5,10-20,30-90:10" -> explicit integer list.
std::vector<int> parse_int_list(const std::string& spec, const std::string& what) {
  std::vector<int> out;
  for (const auto& item : split(spec, ',')) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(static_cast<int>(parse_long(item, what)));
      continue;
    }
    const auto colon = item.find(':');
    const long lo = parse_long(item.substr(0, dash), what);
    const long hi = parse_long(item.substr(dash + 1, colon == std::string::npos ? std::string::npos : colon - dash - 1), what);
    const long step = colon == std::string::npos ? 1 : parse_long(item.substr(colon + 1), what);
    if (step <= 0 || hi < lo) fail(ErrorKind::invalid_argument, "bad range '" + item + "' in " + what);
    for (long x = lo; x <= hi; x += step) out.push_back(static_cast<int>(x));
  }
  return out;
}

std::vector<double> parse_real_list(const std::string& spec, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split(spec, ',')) out.push_back(parse_real(item, what));
  return out;
}

std::vector<fs::path> collect_dumps(const DumpInputs& in) {
  std::vector<fs::path> paths;
  for (const auto& d : in.dumps) {
    require_file(d, "dump");
    paths.emplace_back(d);
  }
  if (!in.dump_dir.empty()) {
    if (!fs::is_directory(in.dump_dir)) fail(ErrorKind::missing_input, "dump directory not found: " + in.dump_dir);
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(in.dump_dir))
      if (e.path().extension() == ".hsd") found.push_back(e.path());
    std::sort(found.begin(), found.end());
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.empty()) fail(ErrorKind::invalid_argument, "no dumps given (use --dump or --dumps)");
  return paths;
}

std::string extension_for(const std::string& format) { return format == "jsonlines" ? ".jsonl" : ".csv"; }

fs::path emit_table(const csv::Table& t, const fs::path& dir, const std::string& stem,
                    const std::string& format) {
  const fs::path path = dir / (stem + extension_for(format));
  if (format == "csv") {
    csv::write(t, path);
    return path;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  for (const auto& row : t.rows) {
    ordered_json j = ordered_json::object();
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      const auto& v = row[c];
      if (v == "NA") {
        j[t.header[c]] = nullptr;
        continue;
      }
      double d = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
      if (!v.empty() && ec == std::errc() && ptr == v.data() + v.size()) {
        j[t.header[c]] = d;
      } else {
        j[t.header[c]] = v;
      }
    }
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
  return path;
}

csv::Table load_table(const fs::path& path) {
  require_file(path, "table");
  if (path.extension() != ".jsonl") return csv::read(path);
  std::ifstream in(path);
  csv::Table t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const ordered_json::exception& e) {
      fail(ErrorKind::format, fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
    if (t.header.empty())
      for (const auto& [k, _] : j.items()) t.header.push_back(k);
    std::vector<std::string> row;
    for (const auto& h : t.header) {
      if (!j.contains(h)) fail(ErrorKind::format, fmt::format("{}:{}: missing field {}", path.string(), n, h));
      const auto& v = j.at(h);
      if (v.is_null()) row.emplace_back("NA");
      else if (v.is_number()) row.push_back(csv::format_double(v.get<double>()));
      else if (v.is_boolean()) row.emplace_back(v.get<bool>() ? "true" : "false");
      else row.push_back(v.get<std::string>());
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Finds <dir>/<stem>.csv or .jsonl.
std::optional<fs::path> find_table(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".csv", ".jsonl"})
    if (fs::exists(dir / (stem + ext))) return dir / (stem + ext);
  return std::nullopt;
}

void write_snapshot(const fs::path& dir, const std::string& verb, std::vector<std::string> argv,
                    const fs::path& out, const CLI::App& sub) {
  if (std::find(argv.begin(), argv.end(), "--out") == argv.end()) {
    argv.push_back("--out");
    argv.push_back(out.string());
  }
  ordered_json j;
  j["tool"] = "tokenlens";
  j["verb"] = verb;
  j["argv"] = argv;
  j["resolved"] = sub.config_to_str(true, false);
  std::ofstream f(dir / (verb + ".snapshot.json"), std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot write snapshot in " + dir.string());
  f << j.dump(1) << '\n';
}

std::map<std::string, synthgen::AttributeManifest> load_manifests(const fs::path& dataset) {
  const fs::path index_csv = dataset / "index.csv";
  require_file(index_csv, "dataset index");
  std::map<std::string, synthgen::AttributeManifest> out;
  for (const auto& e : synthgen::read_index(index_csv).entries) {
    const fs::path p = dataset / e.manifest;
    require_file(p, "attribute manifest");
    std::ifstream in(p);
    try {
      out.emplace(e.image_id, synthgen::manifest_from_json(json::parse(in)));
    } catch (const json::exception& ex) {
      fail(ErrorKind::format, p.string() + ": " + ex.what());
    }
  }
  return out;
}

synthgen::VisualVocabulary load_vocab(const fs::path& dataset) {
  const fs::path cfg = dataset / "dataset_config.json";
  if (!fs::exists(cfg)) return synthgen::VisualVocabulary::defaults();
  return synthgen::load_dataset_config(cfg).vocab;
}

/// Numeric attribute columns for correlation; categorical modes are left out.
std::pair<std::vector<std::string>, std::vector<double>> attribute_columns(
    const synthgen::AttributeManifest& m) {
  std::vector<std::string> names = {"object_count", "unique_shapes", "unique_colors", "unique_sizes"};
  std::vector<double> values = {static_cast<double>(m.object_count), static_cast<double>(m.unique_shapes),
                                static_cast<double>(m.unique_colors), static_cast<double>(m.unique_sizes)};
  for (const auto& [k, present] : m.shape_present) {
    names.push_back("has_shape_" + k);
    values.push_back(present ? 1.0 : 0.0);
  }
  for (const auto& [k, present] : m.color_present) {
    names.push_back("has_color_" + k);
    values.push_back(present ? 1.0 : 0.0);
  }
  return {names, values};
}

// ---------------------------------------------------------------------------
// Verbs.

struct Ctx {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> argv;  // after the verb
};

synthgen::DatasetConfig dataset_config_for(const Options& o, const CLI::App& sub) {
  const auto& g = o.generate;
  synthgen::DatasetConfig cfg = g.config.empty() ? synthgen::DatasetConfig::shipped_default()
                                                 : (require_file(g.config, "dataset config"),
                                                    synthgen::load_dataset_config(g.config));
  if (sub.count("--counts")) {
    const auto grid = parse_int_list(g.counts, "--counts");
    cfg.schedule.clear();
    for (auto a : synthgen::kAllAxes) cfg.schedule[a] = grid;
  }
  if (sub.count("--base-configs")) cfg.n_base_configs = g.base_configs;
  if (sub.count("--seed")) cfg.seed = g.seed;
  if (sub.count("--image-format")) cfg.image_format = g.image_format;
  if (sub.count("--canvas")) cfg.width = cfg.height = g.canvas;
  if (sub.count("--max-overlap")) cfg.max_overlap = g.max_overlap;
  if (sub.count("--shapes")) {
    cfg.vocab.shapes.clear();
    for (const auto& s : split(g.shapes, ',')) cfg.vocab.shapes.push_back(synthgen::parse_shape(s));
  }
  if (sub.count("--colors")) {
    cfg.vocab.colors.clear();
    for (const auto& item : split(g.colors, ',')) {
      const auto colon = item.find(':');
      const std::string hex = colon == std::string::npos ? "" : item.substr(colon + 1);
      if (hex.size() != 7 || hex[0] != '#')
        fail(ErrorKind::invalid_argument, "color '" + item + "' is not name:#rrggbb");
      const auto v = std::stoul(hex.substr(1), nullptr, 16);
      cfg.vocab.colors.push_back({item.substr(0, colon),
                                  {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
                                   static_cast<std::uint8_t>(v)}});
    }
  }
  if (sub.count("--sizes")) cfg.vocab.sizes = parse_real_list(g.sizes, "--sizes");
  cfg.validate();
  return cfg;
}

void run_generate(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto cfg = dataset_config_for(o, sub);
  const fs::path out = resolve_out(o.generate.c.out);
  ensure_dir(out);
  Progress progress(ctx.err, "generate", cfg.image_count());
  const auto index = synthgen::generate_dataset(
      cfg, out, resolve_jobs(o.generate.c.jobs),
      [&](std::size_t done, std::size_t total) {
        if (done % std::max<std::size_t>(1, total / 20) == 0 || done == total) progress.report(done);
      });
  write_snapshot(out, "generate", ctx.argv, out, sub);
  ctx.out << fmt::format("generated {} images in {}\n", index.entries.size(), out.string());
}

void run_fabricate(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& f = o.fabricate;
  toyhsd::ToyConfig cfg;
  if (!f.config.empty()) {
    require_file(f.config, "toy config");
    std::ifstream in(f.config);
    try {
      cfg = toyhsd::toy_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, f.config + ": " + e.what());
    }
  }
  if (f.config.empty() || sub.count("--layers")) cfg.n_layers = f.layers;
  if (f.config.empty() || sub.count("--special-tokens")) cfg.n_special = f.special;
  if (f.config.empty() || sub.count("--vision-tokens")) cfg.n_vision = f.vision;
  if (f.config.empty() || sub.count("--text-tokens")) cfg.n_text = f.text;
  if (f.config.empty() || sub.count("--dim")) cfg.dim = f.dim;
  if (f.config.empty() || sub.count("--seed")) cfg.seed = f.seed;
  if (f.config.empty() || sub.count("--tau-base")) cfg.tau_base = f.tau_base;
  if (f.config.empty() || sub.count("--tau-per-object")) cfg.tau_per_object = f.tau_per_object;
  if (f.config.empty() || sub.count("--jitter")) cfg.jitter = f.jitter;
  cfg.validate();
  require_file(fs::path(f.dataset) / "index.csv", "dataset index");
  const fs::path out = resolve_out(f.c.out);
  ensure_dir(out);
  ctx.err << fmt::format("progress verb=fabricate stage=start dataset={}\n", f.dataset);
  const auto paths = toyhsd::fabricate_dataset(cfg, f.dataset, out, resolve_jobs(f.c.jobs));
  {
    std::ofstream cfg_out(out / "toy_config.json", std::ios::trunc);
    cfg_out << toyhsd::to_json(cfg).dump(1) << '\n';
  }
  write_snapshot(out, "fabricate", ctx.argv, out, sub);
  ctx.out << fmt::format("fabricated {} dumps in {}\n", paths.size(), out.string());
}

void run_validate(const Options& o, const CLI::App&, Ctx& ctx) {
  const auto& v = o.validate;
  if (v.in.dumps.empty() && v.in.dump_dir.empty() && v.dataset.empty())
    fail(ErrorKind::invalid_argument, "nothing to validate (use --dump, --dumps or --dataset)");
  std::optional<Error> first;
  csv::Table t{{"path", "image_id", "n_layers", "n_tokens", "dim", "vision", "text", "special", "status"}, {}};
  if (!v.in.dumps.empty() || !v.in.dump_dir.empty()) {
    for (const auto& p : collect_dumps(v.in)) {
      try {
        const auto d = hsd::read_dump(p);
        t.rows.push_back({p.string(), d.roles.image_id, std::to_string(d.dump.n_layers),
                          std::to_string(d.dump.n_tokens), std::to_string(d.dump.dim),
                          std::to_string(d.roles.count(hsd::TokenRole::vision)),
                          std::to_string(d.roles.count(hsd::TokenRole::text)),
                          std::to_string(d.roles.count(hsd::TokenRole::special)), "ok"});
      } catch (const Error& e) {
        t.rows.push_back({p.string(), "", "", "", "", "", "", "", e.what()});
        if (!first) first = e;
      }
    }
  }
  if (!v.dataset.empty()) {
    const fs::path root = v.dataset;
    require_file(root / "index.csv", "dataset index");
    const auto vocab = load_vocab(root);
    for (const auto& e : synthgen::read_index(root / "index.csv").entries) {
      std::string status = "ok";
      try {
        require_file(root / e.image, "image");
        require_file(root / e.spec, "scene spec");
        std::ifstream spec_in(root / e.spec);
        std::ifstream man_in(root / e.manifest);
        const auto spec = synthgen::scene_from_json(json::parse(spec_in));
        spec.validate();
        const auto stored = synthgen::manifest_from_json(json::parse(man_in));
        if (synthgen::derive_attributes(spec, vocab) != stored)
          fail(ErrorKind::contract, "manifest of " + e.image_id + " disagrees with its scene spec");
      } catch (const Error& err) {
        status = err.what();
        if (!first) first = err;
      } catch (const json::exception& err) {
        status = std::string("format: ") + err.what();
        if (!first) first = Error(ErrorKind::format, "cli", status);
      }
      t.rows.push_back({(root / e.spec).string(), e.image_id, "", "", "", "", "", "", status});
    }
  }
  csv::write(t, ctx.out);
  if (first) throw *first;
}

void run_metrics(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& m = o.metrics;
  const auto paths = collect_dumps(m.in);
  const auto filter = metrics::parse_modality_filter(m.modality);
  const fs::path out = resolve_out(m.c.out);
  ensure_dir(out);
  std::vector<std::vector<std::vector<std::string>>> rows(paths.size());
  Progress progress(ctx.err, "metrics", paths.size());
  parallel_for(paths.size(), resolve_jobs(m.c.jobs), [&](std::size_t i) {
    const auto d = hsd::read_dump(paths[i]);
    for (const auto& lp : metrics::profile_dump(d.dump, d.roles, filter)) {
      std::vector<std::string> r = {d.roles.image_id, d.roles.prompt_id, std::to_string(lp.layer),
                                    metrics::to_string(filter)};
      for (double v : metrics::metric_values(lp)) r.push_back(csv::format_double(v));
      rows[i].push_back(std::move(r));
    }
    progress.tick();
  });
  csv::Table t{{"image_id", "prompt_id", "layer", "modality"}, {}};
  for (const char* c : metrics::kMetricColumns) t.header.emplace_back(c);
  for (auto& block : rows)
    for (auto& r : block) t.rows.push_back(std::move(r));
  const auto path = emit_table(t, out, "metrics", m.c.format);
  write_snapshot(out, "metrics", ctx.argv, out, sub);
  ctx.out << fmt::format("wrote {} rows to {}\n", t.rows.size(), path.string());
}

void run_svd(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& s = o.svd;
  const auto paths = collect_dumps(s.in);
  if (s.k == 0) fail(ErrorKind::invalid_argument, "--k must be at least 1");
  svdalign::AlignOptions opts;
  opts.k = s.k;
  opts.rank_mode = s.rank_mode == "stable-rank" ? svdalign::RankMode::stable_rank : svdalign::RankMode::fixed;
  const fs::path out = resolve_out(s.c.out);
  ensure_dir(out);
  std::vector<std::vector<svdalign::SvdAlignmentReport>> reports(paths.size());
  std::vector<hsd::TokenRoleMap> roles(paths.size());
  Progress progress(ctx.err, "svd", paths.size());
  parallel_for(paths.size(), resolve_jobs(s.c.jobs), [&](std::size_t i) {
    const auto d = hsd::read_dump(paths[i]);
    reports[i] = svdalign::align_dump(d.dump, d.roles, opts);
    roles[i] = d.roles;
    progress.tick();
  });
  csv::Table t{{"image_id", "prompt_id", "layer"}, {}};
  bool header_done = false;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (const auto& rep : reports[i]) {
      const auto fields = svdalign::report_fields(rep);
      if (!header_done) {
        for (const auto& [name, _] : fields) t.header.push_back(name);
        header_done = true;
      }
      std::vector<std::string> r = {roles[i].image_id, roles[i].prompt_id, std::to_string(rep.layer)};
      for (const auto& [_, value] : fields) r.push_back(csv::format_optional(value));
      t.rows.push_back(std::move(r));
      for (const auto& w : rep.warnings)
        ctx.err << fmt::format("warning verb=svd image={} layer={} msg=\"{}\"\n", roles[i].image_id, rep.layer, w);
    }
  }
  const auto path = emit_table(t, out, "svd", s.c.format);
  write_snapshot(out, "svd", ctx.argv, out, sub);
  ctx.out << fmt::format("wrote {} rows to {}\n", t.rows.size(), path.string());
}

void run_probe(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& p = o.probe;
  const auto paths = collect_dumps(p.in);
  probes::TrainConfig cfg;
  if (!p.train_config.empty()) {
    require_file(p.train_config, "training config");
    std::ifstream in(p.train_config);
    try {
      cfg = probes::train_config_from_json(json::parse(in));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, p.train_config + ": " + e.what());
    }
  }
  const bool base = p.train_config.empty();
  if (base || sub.count("--hidden")) {
    cfg.hidden.clear();
    for (int h : parse_int_list(p.hidden, "--hidden")) cfg.hidden.push_back(static_cast<std::size_t>(h));
  }
  if (base || sub.count("--epochs")) cfg.epochs = p.epochs;
  if (base || sub.count("--batch-size")) cfg.batch_size = p.batch_size;
  if (base || sub.count("--lr")) cfg.learning_rate = p.lr;
  if (base || sub.count("--val-fraction")) cfg.val_fraction = p.val_fraction;
  if (base || sub.count("--seed")) cfg.split_seed = cfg.init_seed = p.seed;
  if (sub.count("--no-standardize")) cfg.standardize = false;
  cfg.validate();

  auto label = probes::LabelSpec::for_kind(p.label);
  if (sub.count("--edges")) label.edges = parse_int_list(p.edges, "--edges");
  const auto manifests_by_id = load_manifests(p.dataset);
  const auto vocab = load_vocab(p.dataset);

  std::vector<hsd::HiddenStateDump> dumps;
  std::vector<hsd::TokenRoleMap> roles;
  std::vector<synthgen::AttributeManifest> manifests;
  for (const auto& path : paths) {
    auto d = hsd::read_dump(path);
    const auto it = manifests_by_id.find(d.roles.image_id);
    if (it == manifests_by_id.end())
      fail(ErrorKind::missing_input, "no attribute manifest for image " + d.roles.image_id);
    manifests.push_back(it->second);
    dumps.push_back(std::move(d.dump));
    roles.push_back(std::move(d.roles));
  }
  const fs::path out = resolve_out(p.c.out);
  ensure_dir(out);
  ctx.err << fmt::format("progress verb=probe stage=train probes={}\n",
                         dumps.front().n_layers * dumps.front().n_tokens);
  const auto grid = probes::probe_grid(dumps, roles, manifests, label, vocab, cfg, resolve_jobs(p.c.jobs));

  csv::Table g{{"layer", "position", "role", "train_acc", "val_acc"}, {}};
  for (std::size_t l = 0; l < grid.n_layers; ++l)
    for (std::size_t pos = 0; pos < grid.n_tokens; ++pos)
      g.rows.push_back({std::to_string(l), std::to_string(pos), hsd::to_string(grid.roles[pos]),
                        csv::format_double(grid.train_acc[l][pos]), csv::format_double(grid.val_acc[l][pos])});
  csv::Table s{{"layer", "vision_mean", "vision_variance", "text_mean", "text_variance"}, {}};
  for (const auto& row : grid.summaries)
    s.rows.push_back({std::to_string(row.layer), csv::format_double(row.vision_mean),
                      csv::format_double(row.vision_variance), csv::format_double(row.text_mean),
                      csv::format_double(row.text_variance)});
  emit_table(g, out, "probe_grid", p.c.format);
  emit_table(s, out, "probe_summary", p.c.format);
  {
    auto j = probes::to_json(cfg);
    j["label"] = label.kind;
    j["edges"] = label.edges;
    std::ofstream f(out / "probe_train_config.json", std::ios::trunc);
    f << j.dump(1) << '\n';
  }
  write_snapshot(out, "probe", ctx.argv, out, sub);
  ctx.out << fmt::format("trained {} probes; results in {}\n", g.rows.size(), out.string());
}

void run_ablate(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& a = o.ablate;
  std::vector<fs::path> sources;
  for (const auto& r : a.roles) {
    require_file(r, "role manifest");
    sources.emplace_back(r);
  }
  if (!a.dump_dir.empty()) {
    DumpInputs in;
    in.dump_dir = a.dump_dir;
    for (auto& p : collect_dumps(in)) sources.push_back(p);
  }
  if (sources.empty()) fail(ErrorKind::invalid_argument, "no role manifests given (use --roles or --dumps)");
  const auto rhos = a.rho.empty() ? ablation::kDefaultRhoGrid : parse_real_list(a.rho, "--rho");
  const fs::path out = resolve_out(a.c.out);
  ensure_dir(out / "plans");
  csv::Table t{{"image_id", "prompt_id", "rho", "n_vision", "n_dropped", "seed", "plan"}, {}};
  for (const auto& src : sources) {
    const fs::path manifest = src.extension() == ".manifest" ? src : hsd::manifest_path(src);
    require_file(manifest, "role manifest");
    const auto roles = hsd::read_manifest(manifest);
    for (double rho : rhos) {
      const auto plan = ablation::plan_ablation(roles, rho, a.seed);
      const std::string name = fmt::format("{}__{}__rho{}.plan", roles.image_id, roles.prompt_id, rho);
      ablation::write_plan(plan, out / "plans" / name);
      t.rows.push_back({roles.image_id, roles.prompt_id, csv::format_double(rho),
                        std::to_string(plan.vision_token_indices.size()),
                        std::to_string(plan.dropped_indices.size()), std::to_string(a.seed),
                        "plans/" + name});
    }
  }
  const auto path = emit_table(t, out, "plans", a.c.format);
  write_snapshot(out, "ablate-plan", ctx.argv, out, sub);
  ctx.out << fmt::format("wrote {} plans; index {}\n", t.rows.size(), path.string());
}

void run_score(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& s = o.score;
  const auto t = load_table(s.responses);
  const auto c_id = t.column("prompt_id");
  const auto c_rho = t.column("rho");
  const auto c_ans = t.column("answer");
  const auto c_gold = t.column("gold");
  const auto c_fam = t.column("family");
  std::vector<ablation::ScoredResponse> scored;
  csv::Table st{{"prompt_id", "family", "rho", "answer", "gold", "correct", "unparseable"}, {}};
  for (const auto& r : t.rows) {
    auto sr = ablation::score_response(r[c_ans], r[c_gold], r[c_fam]);
    sr.prompt_id = r[c_id];
    sr.rho = csv::parse_double(r[c_rho]);
    st.rows.push_back({sr.prompt_id, sr.task_family, csv::format_double(sr.rho), sr.model_answer, sr.gold,
                       sr.correct ? "1" : "0", sr.unparseable ? "1" : "0"});
    scored.push_back(std::move(sr));
  }
  const auto expected = s.expect_rho.empty() ? std::vector<double>{} : parse_real_list(s.expect_rho, "--expect-rho");
  const auto curve = ablation::degradation_curve(scored, expected);
  for (const auto& w : curve.warnings) ctx.err << fmt::format("warning verb=score msg=\"{}\"\n", w);
  csv::Table ct{{"family", "rho", "accuracy", "count"}, {}};
  for (const auto& c : curve.cells)
    ct.rows.push_back({c.family, csv::format_double(c.rho), csv::format_double(c.accuracy), std::to_string(c.count)});
  csv::Table mt{{"family", "spearman_accuracy_vs_rho"}, {}};
  for (const auto& [fam, rho] : curve.monotonicity) mt.rows.push_back({fam, csv::format_optional(rho)});
  const fs::path out = resolve_out(s.c.out);
  ensure_dir(out);
  emit_table(st, out, "scored", s.c.format);
  emit_table(ct, out, "curve", s.c.format);
  emit_table(mt, out, "monotonicity", s.c.format);
  write_snapshot(out, "score", ctx.argv, out, sub);
  ctx.out << fmt::format("scored {} responses into {} curve cells\n", st.rows.size(), ct.rows.size());
}

const std::set<std::string> kKeyColumns = {"image_id", "prompt_id", "layer", "modality", "k_vision", "k_text"};

void run_correlate(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& c = o.correlate;
  const auto mt = load_table(c.metrics);
  const auto manifests = load_manifests(c.dataset);

  // (image_id, layer) -> metric name -> value
  std::map<std::pair<std::string, std::size_t>, std::map<std::string, double>> joined;
  std::vector<std::string> metric_names;
  auto absorb = [&](const csv::Table& t, const std::string& modality) {
    const auto c_id = t.column("image_id");
    const auto c_layer = t.column("layer");
    const auto c_mod = t.find_column("modality");
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < t.header.size(); ++i) {
      if (kKeyColumns.contains(t.header[i])) continue;
      cols.push_back(i);
      if (std::find(metric_names.begin(), metric_names.end(), t.header[i]) == metric_names.end())
        metric_names.push_back(t.header[i]);
    }
    for (const auto& r : t.rows) {
      if (c_mod && !modality.empty() && r[*c_mod] != modality) continue;
      auto& cell = joined[{r[c_id], static_cast<std::size_t>(parse_long(r[c_layer], "layer"))}];
      for (auto i : cols) cell[t.header[i]] = csv::parse_double(r[i]);
    }
  };
  absorb(mt, c.modality);
  if (!c.svd.empty()) absorb(load_table(c.svd), "");
  if (joined.empty()) fail(ErrorKind::invalid_argument, "no metric rows for modality " + c.modality);

  std::vector<std::string> attr_names;
  stats::MetricTable table;
  bool first = true;
  for (const auto& [key, values] : joined) {
    const auto it = manifests.find(key.first);
    if (it == manifests.end()) fail(ErrorKind::missing_input, "no attribute manifest for image " + key.first);
    auto [names, attrs] = attribute_columns(it->second);
    if (first) {
      attr_names = names;
      table = stats::MetricTable(metric_names, attr_names);
      first = false;
    } else if (names != attr_names) {
      fail(ErrorKind::contract, "attribute columns differ between manifests");
    }
    stats::MetricRow row;
    row.image_id = key.first;
    row.layer = key.second;
    for (const auto& name : metric_names) {
      const auto v = values.find(name);
      row.metrics.push_back(v == values.end() ? std::numeric_limits<double>::quiet_NaN() : v->second);
    }
    row.attributes = std::move(attrs);
    table.add_row(std::move(row));
  }
  const auto grid = stats::correlate_table(table, !c.pooled);
  csv::Table t{{"layer", "metric", "attribute", "spearman", "n"}, {}};
  for (std::size_t l = 0; l < grid.values.size(); ++l) {
    const std::string layer = grid.pooled ? "all" : std::to_string(grid.layers[l]);
    std::size_t n = 0;
    for (const auto& r : table.rows())
      if (grid.pooled || r.layer == grid.layers[l]) ++n;
    for (std::size_t m = 0; m < grid.metrics.size(); ++m)
      for (std::size_t a = 0; a < grid.attributes.size(); ++a)
        t.rows.push_back({layer, grid.metrics[m], grid.attributes[a], csv::format_optional(grid.values[l][m][a]),
                          std::to_string(n)});
  }
  const fs::path out = resolve_out(c.c.out);
  ensure_dir(out);
  const auto path = emit_table(t, out, "correlations", c.c.format);
  write_snapshot(out, "correlate", ctx.argv, out, sub);
  ctx.out << fmt::format("wrote {} correlation cells to {}\n", t.rows.size(), path.string());
}

// Per-layer mean/variance of every numeric column, grouped by `group_col`
// (or "all").
csv::Table summarize_by_layer(const csv::Table& t, const std::string& group_col,
                              std::map<std::string, std::vector<stats::Series>>* charts) {
  const auto c_layer = t.column("layer");
  const auto c_group = t.find_column(group_col);
  std::vector<std::string> metrics;
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (kKeyColumns.contains(t.header[i])) continue;
    metrics.push_back(t.header[i]);
    cols.push_back(i);
  }
  std::map<std::string, stats::KeyedTable> groups;
  std::map<std::string, std::size_t> row_counter;
  for (const auto& r : t.rows) {
    const std::string g = c_group ? r[*c_group] : "all";
    auto [it, inserted] = groups.try_emplace(g);
    if (inserted) {
      it->second.keys = {{"group", g}};
      it->second.table = stats::MetricTable(metrics, {});
    }
    stats::MetricRow row;
    // Rows are keyed by (image, layer); a running index keeps repeated
    // prompts of one image distinct.
    row.image_id = r[t.column("image_id")] + "#" + std::to_string(row_counter[g + r[c_layer] + r[t.column("image_id")]]++);
    row.layer = static_cast<std::size_t>(parse_long(r[c_layer], "layer"));
    for (auto i : cols) row.metrics.push_back(csv::parse_double(r[i]));
    it->second.table.add_row(std::move(row));
  }
  std::vector<stats::KeyedTable> tables;
  for (auto& [_, kt] : groups) tables.push_back(std::move(kt));
  const auto cells = stats::aggregate(tables, {"group"});
  csv::Table out{{"group", "layer", "metric", "mean", "variance", "count"}, {}};
  for (const auto& c : cells) {
    out.rows.push_back({c.group, std::to_string(c.layer), c.metric, csv::format_double(c.mean),
                        csv::format_double(c.variance), std::to_string(c.count)});
    if (charts) {
      auto& series = (*charts)[c.metric];
      auto s = std::find_if(series.begin(), series.end(), [&](const stats::Series& x) { return x.name == c.group; });
      if (s == series.end()) {
        series.push_back({c.group, {}, {}});
        s = series.end() - 1;
      }
      if (!std::isnan(c.mean)) {
        s->x.push_back(static_cast<double>(c.layer));
        s->y.push_back(c.mean);
      }
    }
  }
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot write " + p.string());
  f << text;
}

void run_report(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& r = o.report;
  const fs::path run = r.run;
  if (!fs::is_directory(run)) fail(ErrorKind::missing_input, "run directory not found: " + run.string());
  const fs::path out = r.out.empty() ? run / "report" : fs::path(r.out);
  ensure_dir(out);
  ordered_json manifest;
  manifest["run"] = run.string();
  manifest["sources"] = ordered_json::object();
  manifest["tables"] = ordered_json::array();
  manifest["charts"] = ordered_json::array();
  auto add_chart = [&](const std::string& file, const std::string& title, const std::string& y_label,
                       const std::vector<stats::Series>& series) {
    write_text(out / file, stats::render_line_chart(title, "layer", y_label, series));
    manifest["charts"].push_back(file);
  };

  if (auto p = find_table(run, "metrics")) {
    manifest["sources"]["metrics"] = p->filename().string();
    std::map<std::string, std::vector<stats::Series>> charts;
    const auto summary = summarize_by_layer(load_table(*p), "modality", &charts);
    manifest["tables"].push_back(emit_table(summary, out, "compression_by_layer", r.format).filename().string());
    for (const auto& [metric, series] : charts) add_chart("compression_" + metric + ".svg", metric + " by layer", metric, series);
  }
  if (auto p = find_table(run, "svd")) {
    manifest["sources"]["svd"] = p->filename().string();
    std::map<std::string, std::vector<stats::Series>> charts;
    const auto summary = summarize_by_layer(load_table(*p), "", &charts);
    manifest["tables"].push_back(emit_table(summary, out, "svd_by_layer", r.format).filename().string());
    for (const auto& [metric, series] : charts) add_chart("svd_" + metric + ".svg", metric + " by layer", metric, series);
  }
  if (auto p = find_table(run, "correlations")) {
    manifest["sources"]["correlations"] = p->filename().string();
    const auto t = load_table(*p);
    const auto c_layer = t.column("layer");
    const auto c_metric = t.column("metric");
    const auto c_attr = t.column("attribute");
    const auto c_rho = t.column("spearman");
    std::map<std::string, std::vector<stats::Series>> by_attr;
    for (const auto& row : t.rows) {
      const double rho = csv::parse_double(row[c_rho]);
      if (row[c_layer] == "all" || std::isnan(rho)) continue;
      auto& series = by_attr[row[c_attr]];
      auto s = std::find_if(series.begin(), series.end(), [&](const stats::Series& x) { return x.name == row[c_metric]; });
      if (s == series.end()) {
        series.push_back({row[c_metric], {}, {}});
        s = series.end() - 1;
      }
      s->x.push_back(static_cast<double>(parse_long(row[c_layer], "layer")));
      s->y.push_back(rho);
    }
    manifest["tables"].push_back(emit_table(t, out, "correlations", r.format).filename().string());
    for (const auto& [attr, series] : by_attr)
      add_chart("correlation_" + attr + ".svg", "Spearman correlation with " + attr, "spearman", series);
  }
  if (auto p = find_table(run, "probe_summary")) {
    manifest["sources"]["probe_summary"] = p->filename().string();
    const auto t = load_table(*p);
    stats::Series vision{"vision", {}, {}};
    stats::Series text{"text", {}, {}};
    for (const auto& row : t.rows) {
      const double layer = csv::parse_double(row[t.column("layer")]);
      const double vm = csv::parse_double(row[t.column("vision_mean")]);
      const double tm = csv::parse_double(row[t.column("text_mean")]);
      if (!std::isnan(vm)) vision.x.push_back(layer), vision.y.push_back(vm);
      if (!std::isnan(tm)) text.x.push_back(layer), text.y.push_back(tm);
    }
    manifest["tables"].push_back(emit_table(t, out, "probe_summary", r.format).filename().string());
    add_chart("probe_accuracy.svg", "Mean probe accuracy by layer", "validation accuracy", {vision, text});
  }
  if (auto p = find_table(run, "curve")) {
    manifest["sources"]["curve"] = p->filename().string();
    const auto t = load_table(*p);
    std::map<std::string, stats::Series> by_family;
    for (const auto& row : t.rows) {
      auto& s = by_family[row[t.column("family")]];
      s.name = row[t.column("family")];
      s.x.push_back(csv::parse_double(row[t.column("rho")]));
      s.y.push_back(csv::parse_double(row[t.column("accuracy")]));
    }
    std::vector<stats::Series> series;
    for (auto& [_, s] : by_family) series.push_back(std::move(s));
    manifest["tables"].push_back(emit_table(t, out, "ablation_curve", r.format).filename().string());
    write_text(out / "ablation_curve.svg", stats::render_line_chart("Accuracy under vision-token ablation", "rho", "accuracy", series));
    manifest["charts"].push_back("ablation_curve.svg");
  }
  if (manifest["sources"].empty()) fail(ErrorKind::missing_input, "no tables found in " + run.string());
  write_text(out / "report.json", manifest.dump(1) + "\n");
  write_snapshot(out, "report", ctx.argv, out, sub);
  ctx.out << fmt::format("report with {} tables and {} charts in {}\n", manifest["tables"].size(),
                         manifest["charts"].size(), out.string());
}

void run_ftdata(const Options& o, const CLI::App& sub, Ctx& ctx) {
  const auto& f = o.ftdata;
  require_file(f.records, "annotation records");
  const auto records = ftdata::read_records(f.records);
  ftdata::FilterConfig cfg;
  cfg.min_area_frac = f.min_area;
  cfg.max_area_frac = f.max_area;
  cfg.alpha = f.alpha;
  cfg.join = f.join == "all" ? ftdata::CenterJoin::all_axes : ftdata::CenterJoin::any_axis;
  cfg.validate();
  const auto result = ftdata::filter_annotations(records, cfg);
  const fs::path out = resolve_out(f.c.out);
  ensure_dir(out);
  ftdata::write_records(result.accepted, out / "accepted.jsonl");
  csv::Table rej{{"record_index", "image_id", "category", "reasons"}, {}};
  for (const auto& r : result.rejected) {
    std::string reasons;
    for (const auto& s : r.reasons) reasons += (reasons.empty() ? "" : ";") + s;
    rej.rows.push_back({std::to_string(r.record_index), records[r.record_index].image_id,
                        records[r.record_index].category, reasons});
  }
  csv::Table pt{{"image_id", "task", "prompt", "target"}, {}};
  for (const auto& p : ftdata::emit_prompt_targets(result.accepted)) pt.rows.push_back({p.image_id, p.task, p.prompt, p.target});
  emit_table(rej, out, "rejections", f.c.format);
  emit_table(pt, out, "prompt_targets", f.c.format);
  write_snapshot(out, "ftdata", ctx.argv, out, sub);
  ctx.out << fmt::format("accepted {} of {} records; {} prompt/target pairs\n", result.accepted.size(),
                         records.size(), pt.rows.size());
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth);

void run_rerun(const Options& o, Ctx& ctx, int depth) {
  require_file(o.rerun.snapshot, "snapshot");
  std::ifstream in(o.rerun.snapshot);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, o.rerun.snapshot + ": " + e.what());
  }
  if (!j.contains("verb") || !j.contains("argv")) fail(ErrorKind::format, "snapshot lacks verb/argv");
  std::vector<std::string> args{j.at("verb").get<std::string>()};
  for (const auto& a : j.at("argv")) args.push_back(a.get<std::string>());
  if (args.front() == "rerun" || depth > 0) fail(ErrorKind::invalid_argument, "snapshot cannot rerun itself");
  const int code = dispatch(args, ctx.out, ctx.err, depth + 1);
  if (code != kOk) throw Error(ErrorKind::contract, "cli", fmt::format("rerun exited with code {}", code));
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, int depth) {
  Options opts;
  auto app = build_app(opts);
  std::vector<std::string> storage = {"tokenlens"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app->parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app->exit(e, out, err);
    return kUsage;
  }
  const CLI::App* sub = app->get_subcommands().front();
  const std::string verb = sub->get_name();
  Ctx ctx{out, err, std::vector<std::string>(args.begin() + 1, args.end())};
  try {
    if (verb == "generate") run_generate(opts, *sub, ctx);
    else if (verb == "fabricate") run_fabricate(opts, *sub, ctx);
    else if (verb == "validate") run_validate(opts, *sub, ctx);
    else if (verb == "metrics") run_metrics(opts, *sub, ctx);
    else if (verb == "svd") run_svd(opts, *sub, ctx);
    else if (verb == "probe") run_probe(opts, *sub, ctx);
    else if (verb == "ablate-plan") run_ablate(opts, *sub, ctx);
    else if (verb == "score") run_score(opts, *sub, ctx);
    else if (verb == "correlate") run_correlate(opts, *sub, ctx);
    else if (verb == "report") run_report(opts, *sub, ctx);
    else if (verb == "ftdata") run_ftdata(opts, *sub, ctx);
    else if (verb == "rerun") run_rerun(opts, ctx, depth);
  } catch (const Error& e) {
    err << fmt::format("error verb={} kind={} module={} msg=\"{}\"\n", verb, to_string(e.kind()), e.module(), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << fmt::format("error verb={} kind=other msg=\"{}\"\n", verb, e.what());
    return kOther;
  }
  return kOk;
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return kUsage;
    case ErrorKind::missing_input: return kMissingInput;
    case ErrorKind::format: return kFormat;
    case ErrorKind::degenerate:
    case ErrorKind::numerical: return kNumerical;
    case ErrorKind::io: return kIo;
    case ErrorKind::contract: return kContract;
  }
  return kOther;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return dispatch(args, out, err, 0);
}

std::vector<std::string> verbs() {
  Options o;
  auto app = build_app(o);
  std::vector<std::string> names;
  for (const auto* s : app->get_subcommands([](const CLI::App*) { return true; })) names.push_back(s->get_name());
  return names;
}

std::vector<std::string> flag_names(const std::string& verb) {
  Options o;
  auto app = build_app(o);
  const CLI::App* target = verb.empty() ? app.get() : app->get_subcommand(verb);
  std::vector<std::string> names;
  for (const auto* opt : target->get_options())
    for (const auto& n : opt->get_lnames()) names.push_back("--" + n);
  return names;
}

}  // namespace tokenlens::cli
