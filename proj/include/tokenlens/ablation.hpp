#pragma once

// Random vision-token ablation: plans, answer grading, degradation curves.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tokenlens/hsdio.hpp"

namespace tokenlens::ablation {

inline const std::vector<double> kDefaultRhoGrid = {0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99};

struct AblationPlan {
  double rho = 0.0;
  std::vector<std::size_t> vision_token_indices;
  std::vector<std::size_t> dropped_indices;  // ascending
  std::uint64_t seed = 0;
  std::string image_id;
  std::string prompt_id;

  friend bool operator==(const AblationPlan&, const AblationPlan&) = default;
};

/// floor(rho * n), robust to decimal representation error in rho.
std::size_t dropped_count(double rho, std::size_t n);

/// Uniform sample without replacement of dropped_count(rho, N) vision
/// positions. Text and special tokens are never selected.
AblationPlan plan_ablation(const hsd::TokenRoleMap& roles, double rho, std::uint64_t seed);

void write_plan(const AblationPlan& plan, const std::filesystem::path& path);
AblationPlan read_plan(const std::filesystem::path& path);

enum class ScoringRule { count, name, yes_no };

/// Known task families and how their answers are graded. Synthetic prompt
/// families and the natural-image families share one table.
std::optional<ScoringRule> scoring_rule(const std::string& family);

struct ScoredResponse {
  std::string prompt_id;
  double rho = 0.0;
  std::string model_answer;
  std::string gold;
  bool correct = false;
  bool unparseable = false;
  std::string task_family;
};

/// Grades one answer:
///  count   first integer in the answer equals the gold integer
///  name    gold appears in the answer, case-insensitive, punctuation stripped
///  yes_no  answer starts with yes/no matching the gold
ScoredResponse score_response(const std::string& answer, const std::string& gold,
                              const std::string& family);

struct CurveCell {
  std::string family;
  double rho = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct DegradationCurve {
  std::vector<CurveCell> cells;  // sorted by (family, rho)
  /// Spearman of accuracy vs rho per family; nullopt when undefined.
  std::vector<std::pair<std::string, std::optional<double>>> monotonicity;
  std::vector<std::string> warnings;
};

/// When `expected_rhos` is given, (family, rho) cells without responses are
/// reported as warnings.
DegradationCurve degradation_curve(const std::vector<ScoredResponse>& scored,
                                   const std::vector<double>& expected_rhos = {});

}  // namespace tokenlens::ablation
