#include "tokenlens/ablation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "tokenlens/error.hpp"
#include "tokenlens/random.hpp"
#include "tokenlens/stats.hpp"

namespace tokenlens::ablation {
namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, "ablation", msg);
}

std::string normalize(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::ispunct(c)) {
      out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  // collapse whitespace
  std::string squeezed;
  bool space = true;
  for (char c : out) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!space) squeezed.push_back(' ');
      space = true;
    } else {
      squeezed.push_back(c);
      space = false;
    }
  }
  if (!squeezed.empty() && squeezed.back() == ' ') squeezed.pop_back();
  return squeezed;
}

std::optional<long long> first_integer(const std::string& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) continue;
    std::size_t j = i;
    while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
    try {
      return std::stoll(s.substr(i, j - i));
    } catch (const std::out_of_range&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::optional<bool> leading_yes_no(const std::string& s) {
  const auto norm = normalize(s);
  const auto word = norm.substr(0, norm.find(' '));
  if (word == "yes") return true;
  if (word == "no") return false;
  return std::nullopt;
}

}  // namespace

std::size_t dropped_count(double rho, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(n) + 1e-9));
}

AblationPlan plan_ablation(const hsd::TokenRoleMap& roles, double rho, std::uint64_t seed) {
  if (!(rho >= 0.0 && rho <= 1.0)) fail(ErrorKind::invalid_argument, "rho must lie in [0, 1]");
  AblationPlan plan;
  plan.rho = rho;
  plan.seed = seed;
  plan.image_id = roles.image_id;
  plan.prompt_id = roles.prompt_id;
  plan.vision_token_indices = roles.indices(hsd::TokenRole::vision);
  const std::size_t n = plan.vision_token_indices.size();
  if (n == 0) fail(ErrorKind::contract, "no vision tokens to ablate");
  const std::size_t drop = dropped_count(rho, n);

  std::mt19937_64 rng(seed);
  auto pool = plan.vision_token_indices;
  for (std::size_t i = 0; i < drop; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(random::uniform_below(rng, n - i));
    std::swap(pool[i], pool[j]);
  }
  plan.dropped_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(drop));
  std::sort(plan.dropped_indices.begin(), plan.dropped_indices.end());
  return plan;
}

void write_plan(const AblationPlan& plan, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "tokenlens-ablation-plan";
  j["version"] = 1;
  j["image_id"] = plan.image_id;
  j["prompt_id"] = plan.prompt_id;
  j["rho"] = plan.rho;
  j["seed"] = plan.seed;
  j["n_vision"] = plan.vision_token_indices.size();
  j["n_dropped"] = plan.dropped_indices.size();
  j["vision_token_indices"] = plan.vision_token_indices;
  j["dropped_indices"] = plan.dropped_indices;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << j.dump() << '\n';
}

AblationPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::missing_input, "no plan file at " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "tokenlens-ablation-plan")
      fail(ErrorKind::format, path.string() + " is not an ablation plan");
    AblationPlan p;
    p.image_id = j.at("image_id").get<std::string>();
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.rho = j.at("rho").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.vision_token_indices = j.at("vision_token_indices").get<std::vector<std::size_t>>();
    p.dropped_indices = j.at("dropped_indices").get<std::vector<std::size_t>>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

std::optional<ScoringRule> scoring_rule(const std::string& family) {
  static const std::map<std::string, ScoringRule> table = {
      {"count", ScoringRule::count},
      {"count-unique-shapes", ScoringRule::count},
      {"count-unique-colors", ScoringRule::count},
      {"object-count", ScoringRule::count},
      {"category-count", ScoringRule::count},
      {"dominant-shape", ScoringRule::name},
      {"dominant-color", ScoringRule::name},
      {"main-object", ScoringRule::name},
      {"category", ScoringRule::name},
      {"scene-type", ScoringRule::name},
      {"scene-complexity", ScoringRule::name},
      {"shape-pair-presence", ScoringRule::yes_no},
      {"color-pair-presence", ScoringRule::yes_no},
      {"category-pair-presence", ScoringRule::yes_no},
      {"presence", ScoringRule::yes_no},
  };
  const auto it = table.find(family);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

ScoredResponse score_response(const std::string& answer, const std::string& gold,
                              const std::string& family) {
  const auto rule = scoring_rule(family);
  if (!rule) fail(ErrorKind::invalid_argument, "family '" + family + "' has no scoring rule");
  ScoredResponse r;
  r.model_answer = answer;
  r.gold = gold;
  r.task_family = family;
  switch (*rule) {
    case ScoringRule::count: {
      const auto want = first_integer(gold);
      if (!want) fail(ErrorKind::invalid_argument, "gold '" + gold + "' is not an integer");
      const auto got = first_integer(answer);
      r.unparseable = !got.has_value();
      r.correct = got && *got == *want;
      break;
    }
    case ScoringRule::name: {
      const auto g = normalize(gold);
      r.correct = !g.empty() && normalize(answer).find(g) != std::string::npos;
      break;
    }
    case ScoringRule::yes_no: {
      const auto want = leading_yes_no(gold);
      if (!want) fail(ErrorKind::invalid_argument, "gold '" + gold + "' is not yes/no");
      const auto got = leading_yes_no(answer);
      r.unparseable = !got.has_value();
      r.correct = got && *got == *want;
      break;
    }
  }
  return r;
}

DegradationCurve degradation_curve(const std::vector<ScoredResponse>& scored,
                                   const std::vector<double>& expected_rhos) {
  std::map<std::pair<std::string, double>, std::pair<std::size_t, std::size_t>> cells;
  for (const auto& s : scored) {
    auto& [hits, n] = cells[{s.task_family, s.rho}];
    hits += s.correct ? 1 : 0;
    ++n;
  }
  DegradationCurve curve;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> per_family;
  for (const auto& [key, counts] : cells) {
    const double acc = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    curve.cells.push_back({key.first, key.second, acc, counts.second});
    per_family[key.first].first.push_back(key.second);
    per_family[key.first].second.push_back(acc);
  }
  for (const auto& [family, xy] : per_family) {
    curve.monotonicity.emplace_back(family, stats::spearman_or_null(xy.first, xy.second));
    for (double rho : expected_rhos) {
      if (!cells.contains({family, rho})) {
        curve.warnings.push_back("no responses for family " + family + " at rho " +
                                 std::to_string(rho) + "; cell omitted");
      }
    }
  }
  return curve;
}

}  // namespace tokenlens::ablation
