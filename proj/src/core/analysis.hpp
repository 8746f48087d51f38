#pragma once

// Result computation over session logs: confusion matrices, site scores,
// object-task normalization and the report writer behind `analyze`.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "experiment.hpp"
#include "json.hpp"
#include "stats.hpp"

namespace tactwin {

struct ConfusionMatrix {
  Protocol protocol = Protocol::SingleLocation;
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;  // row = true, column = predicted
  std::vector<std::size_t> rejections;           // per true class, responses of None

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t trace() const noexcept;
  // All records, rejections included.
  std::size_t total() const noexcept;
  // trace / total; nullopt when there are no records.
  std::optional<double> accuracy() const noexcept;
};

// Throws Validation for the object task, for records of another protocol, or
// for stimuli/responses outside the site's domain.
ConfusionMatrix confusion(std::span<const TrialRecord> records, Protocol protocol, const BodySite& site);

// Unweighted mean of the three accuracies.
double aggregate_site_score(double acc_intensity, double acc_single, double acc_pair);
// Integer percent, halves rounded away from zero.
int percent_round(double fraction);

enum class NormScope { PerSubject, PerSubjectCondition, Global };

std::string_view norm_scope_name(NormScope s) noexcept;
std::optional<NormScope> parse_norm_scope(std::string_view name) noexcept;

struct TimedTrial {
  std::string subject;
  std::string condition;
  ObjectKind object = ObjectKind::Ball;
  double elapsed_ms = 0.0;
};

// Each duration divided by the mean of its scope. Throws Validation when a
// duration is not positive or the input is empty.
std::vector<double> normalize_times(std::span<const TimedTrial> trials,
                                    NormScope scope = NormScope::PerSubjectCondition);

enum class FriedmanBlocks { Subjects, SubjectObject };

struct ObjectTaskSummary {
  std::vector<std::string> modes;        // Friedman treatment order
  std::vector<double> mean_normalized;   // per mode
  std::vector<std::string> block_labels;
  std::vector<std::vector<double>> data;  // blocks x modes
  FriedmanResult friedman;
  NormScope scope = NormScope::PerSubject;
  FriedmanBlocks blocks = FriedmanBlocks::Subjects;
  std::size_t missing_pickups = 0;
};

// Logs are object-task sessions; every subject needs one complete log for each
// of the six built-in modes, otherwise Validation.
ObjectTaskSummary object_task_summary(std::span<const SessionLog> logs,
                                      FriedmanBlocks blocks = FriedmanBlocks::Subjects,
                                      NormScope scope = NormScope::PerSubject,
                                      PValueMethod method = PValueMethod::Auto);

// Machine-readable summary of one session; identical for a live log and the
// same log reloaded from disk.
nlohmann::json session_summary(const SessionLog& log);
std::string session_summary_text(const SessionLog& log);

struct SiteScore {
  std::string participant;  // "*" pools every participant
  std::string site;
  double intensity = 0.0;
  double single = 0.0;
  double pair = 0.0;
  double score = 0.0;
  int percent = 0;
};

// One row per (participant, site) with all three discrimination protocols,
// plus pooled rows per site.
std::vector<SiteScore> site_scores(std::span<const SessionLog> logs);

std::string confusion_csv(const ConfusionMatrix& m);

struct AnalysisOptions {
  FriedmanBlocks blocks = FriedmanBlocks::Subjects;
  NormScope scope = NormScope::PerSubject;
  PValueMethod method = PValueMethod::Auto;
};

nlohmann::json analyze_logs(std::span<const SessionLog> logs, const AnalysisOptions& opts = {});

// Loads every *.jsonl log under `input` (a directory or a single file) and
// writes summary.json, <id>.summary.json, <id>.confusion.csv,
// site_scores.csv and object_task.csv into `report`. Returns summary.json.
nlohmann::json analyze_path(const std::filesystem::path& input, const std::filesystem::path& report,
                            const AnalysisOptions& opts = {});

}  // namespace tactwin
