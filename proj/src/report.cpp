#include "irstyle/report.hpp"

#include <algorithm>
#include <charconv>

#include "irstyle/image_io.hpp"

namespace irstyle {

using nlohmann::json;

InspectReport inspect(const Policy& policy) {
  InspectReport r;
  r.op_names = policy.registry.names();
  const PolicySummary s = summary(policy);
  r.expected_count = s.expected_count;
  r.expected_param = s.expected_param;
  for (std::size_t k = 0; k < policy.num_stages(); ++k) {
    const auto probs = policy.selection_probs(k);
    const auto best = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    const OpDescriptor& d = policy.registry.at(static_cast<int>(best));
    InspectStage st;
    st.stage = k;
    st.op = d.name;
    st.select = probs[best];
    st.p = policy.apply_prob(k, best);
    if (d.has_param) {
      st.mu01 = policy.stages[k].mu01[best];
      st.param = param_map(d, st.mu01);
    }
    r.stages.push_back(std::move(st));
  }
  return r;
}

ReportFormat parse_report_format(std::string_view name) {
  if (name == "json") return ReportFormat::json;
  if (name == "csv") return ReportFormat::csv;
  fail(ErrorKind::usage, "unknown report format '" + std::string(name) + "' (json, csv)");
}

json to_json(const InspectReport& r) {
  json ops = json::array();
  for (std::size_t i = 0; i < r.op_names.size(); ++i) {
    ops.push_back({{"name", r.op_names[i]}, {"expected_count", r.expected_count[i]}, {"expected_param", r.expected_param[i]}});
  }
  json stages = json::array();
  for (const InspectStage& s : r.stages) {
    stages.push_back({{"stage", s.stage}, {"op", s.op}, {"select", s.select}, {"p", s.p}, {"mu01", s.mu01}, {"param", s.param}});
  }
  return json{{"ops", ops}, {"stages", stages}};
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string to_csv(const InspectReport& r) {
  std::string out = "op_name,expected_count,expected_param\n";
  for (std::size_t i = 0; i < r.op_names.size(); ++i) {
    out += r.op_names[i] + "," + format_number(r.expected_count[i]) + "," + format_number(r.expected_param[i]) + "\n";
  }
  return out;
}

void emit_report(const InspectReport& report, const std::filesystem::path& path, ReportFormat format) {
  write_file(path, format == ReportFormat::json ? to_json(report).dump(2) + "\n" : to_csv(report));
}

json to_json(const StepRecord& r) {
  return json{{"step", r.step},         {"l_d", r.l_d},           {"l_task", r.l_task},
              {"l_total", r.l_total},   {"tau_select", r.tau_select}, {"tau_gate", r.tau_gate}};
}

json to_json(const PolicySummary& s, const OpRegistry& registry) {
  json out = json::object();
  const auto names = registry.names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    out[names[i]] = {{"expected_count", s.expected_count.at(i)}, {"expected_param", s.expected_param.at(i)}};
  }
  return out;
}

std::string train_report_jsonl(const TrainReport& report, const OpRegistry& registry) {
  std::string out;
  for (const StepRecord& r : report.records) out += to_json(r).dump() + "\n";
  const OpCounters& c = report.counters;
  json final{{"summary", to_json(report.summary, registry)},
             {"counters",
              {{"policy_forward", c.policy_forward},
               {"critic_forward", c.critic_forward},
               {"critic_updates", c.critic_updates},
               {"task_head_forward", c.task_head_forward},
               {"task_head_updates", c.task_head_updates}}},
             {"steps", report.records.size()},
             {"wall_seconds", report.wall_seconds},
             {"config", to_json(report.config)}};
  out += final.dump() + "\n";
  return out;
}

}  // namespace irstyle
