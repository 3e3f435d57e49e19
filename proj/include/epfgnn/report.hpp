#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epfgnn/errors.hpp"

namespace epfgnn {

/// One metric observation, e.g. ("warm", 17, "train_loss", 0.93).
struct ReportRecord {
  std::string phase;
  std::uint64_t step = 0;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const ReportRecord&, const ReportRecord&) = default;
};

/// State at a phase boundary that is eligible for model selection.
struct CheckpointEntry {
  std::uint64_t id = 0;
  std::string after;  // "warm", "estep" or "mstep"
  std::uint64_t round = 0;
  double validation_accuracy = 0.0;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

struct TrainReport {
  std::vector<ReportRecord> records;
  std::vector<CheckpointEntry> checkpoints;
  std::uint64_t selected_checkpoint = 0;
  double validation_accuracy = 0.0;
  double test_accuracy = 0.0;

  void add(std::string phase, std::uint64_t step, std::string metric, double value) {
    records.push_back({std::move(phase), step, std::move(metric), value});
  }

  std::vector<double> trace(const std::string& phase, const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : records)
      if (r.phase == phase && r.metric == metric) out.push_back(r.value);
    return out;
  }

  friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

namespace detail {

// NaN and infinities are written as the strings "nan", "inf", "-inf".
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline double json_double(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  throw std::runtime_error("report: bad number '" + s + "'");
}

}  // namespace detail

/// Line-delimited records: {"phase", "step", "metric", "value"} per line.
/// Checkpoints and the summary use the reserved phases "checkpoint" and "summary".
inline void write_report(std::ostream& out, const TrainReport& report) {
  using nlohmann::json;
  for (const auto& r : report.records) {
    out << json{{"phase", r.phase}, {"step", r.step}, {"metric", r.metric},
                {"value", detail::json_number(r.value)}}.dump()
        << '\n';
  }
  for (const auto& c : report.checkpoints) {
    out << json{{"phase", "checkpoint"}, {"step", c.id}, {"metric", "validation_accuracy"},
                {"value", detail::json_number(c.validation_accuracy)}, {"after", c.after},
                {"round", c.round}}.dump()
        << '\n';
  }
  out << json{{"phase", "summary"}, {"step", report.selected_checkpoint},
              {"metric", "selected_checkpoint"},
              {"value", static_cast<double>(report.selected_checkpoint)}}.dump()
      << '\n';
  out << json{{"phase", "summary"}, {"step", report.selected_checkpoint},
              {"metric", "validation_accuracy"},
              {"value", detail::json_number(report.validation_accuracy)}}.dump()
      << '\n';
  out << json{{"phase", "summary"}, {"step", report.selected_checkpoint},
              {"metric", "test_accuracy"},
              {"value", detail::json_number(report.test_accuracy)}}.dump()
      << '\n';
}

inline TrainReport read_report(std::istream& in) {
  TrainReport report;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("report", lineno, e.what());
    }
    const auto phase = j.at("phase").get<std::string>();
    const auto step = j.at("step").get<std::uint64_t>();
    const auto metric = j.at("metric").get<std::string>();
    const double value = detail::json_double(j.at("value"));
    if (phase == "checkpoint") {
      report.checkpoints.push_back(
          {step, j.at("after").get<std::string>(), j.at("round").get<std::uint64_t>(), value});
    } else if (phase == "summary") {
      if (metric == "selected_checkpoint") report.selected_checkpoint = step;
      else if (metric == "validation_accuracy") report.validation_accuracy = value;
      else if (metric == "test_accuracy") report.test_accuracy = value;
    } else {
      report.records.push_back({phase, step, metric, value});
    }
  }
  return report;
}

}  // namespace epfgnn
