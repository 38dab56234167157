#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "irstyle/policy.hpp"
#include "irstyle/trainer.hpp"

namespace irstyle {

struct InspectStage {
  std::size_t stage = 0;
  std::string op;        // argmax of the selection distribution
  double select = 0.0;   // its selection probability
  double p = 0.0;        // its application probability
  double mu01 = 0.0;     // 0 for ops without a parameter
  double param = 0.0;    // physical parameter, 0 without one
};

struct InspectReport {
  std::vector<std::string> op_names;  // registry order
  std::vector<double> expected_count;
  std::vector<double> expected_param;
  std::vector<InspectStage> stages;
};

InspectReport inspect(const Policy& policy);

enum class ReportFormat { json, csv };
ReportFormat parse_report_format(std::string_view name);

/// Canonical JSON (sorted keys).
nlohmann::json to_json(const InspectReport& report);
/// Columns op_name, expected_count, expected_param; one row per op.
std::string to_csv(const InspectReport& report);
/// Writes either form; unwritable paths are data errors.
void emit_report(const InspectReport& report, const std::filesystem::path& path, ReportFormat format);

/// Shortest text that parses back to the same double.
std::string format_number(double v);

nlohmann::json to_json(const StepRecord& record);
nlohmann::json to_json(const PolicySummary& summary, const OpRegistry& registry);
/// One JSON object per step, then a final line with the summary, counters,
/// wall time and the effective config.
std::string train_report_jsonl(const TrainReport& report, const OpRegistry& registry);

}  // namespace irstyle
