#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sbd/analysis.hpp"
#include "sbd/pipeline.hpp"

namespace sbd {

// Insertion-ordered so the serialized bytes are a pure function of content.
using Json = nlohmann::ordered_json;

inline constexpr const char* kReportSchema = "sbd-report/1";
inline constexpr const char* kToolVersion = "0.1.0";

inline std::string hex_digest(std::uint64_t d) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << d;
  return os.str();
}

// Everything needed to reproduce an output: resolved config, seeds and the
// content digests of every input file.
struct RunManifest {
  std::string command;
  Json config = Json::object();
  std::vector<std::pair<std::string, std::uint64_t>> inputs;  // (path, digest)
  std::vector<std::pair<std::string, std::uint64_t>> seeds;
  std::string tool_version = kToolVersion;
};

inline Json to_json(const RunManifest& m) {
  Json inputs = Json::array();
  for (const auto& [path, digest] : m.inputs) inputs.push_back({{"path", path}, {"digest", hex_digest(digest)}});
  Json seeds = Json::object();
  for (const auto& [name, value] : m.seeds) seeds[name] = value;
  return {{"command", m.command}, {"tool_version", m.tool_version}, {"config", m.config}, {"inputs", inputs},
          {"seeds", seeds}};
}

inline Json to_json(const EvalReport& r) {
  return {{"model", r.model_tag}, {"classifier", r.classifier_tag}, {"dataset", r.dataset_tag},
          {"layer", r.layer_index}, {"top_k", r.top_k}, {"tp", r.tp}, {"fp", r.fp}, {"tn", r.tn},
          {"fn", r.fn}, {"f1", r.f1}, {"accuracy", r.accuracy}};
}

inline EvalReport eval_report_from_json(const Json& j) {
  EvalReport r;
  r.model_tag = j.at("model").get<std::string>();
  r.classifier_tag = j.at("classifier").get<std::string>();
  r.dataset_tag = j.at("dataset").get<std::string>();
  r.layer_index = j.at("layer").get<std::uint32_t>();
  r.top_k = j.at("top_k").get<std::size_t>();
  r.tp = j.at("tp").get<std::uint64_t>();
  r.fp = j.at("fp").get<std::uint64_t>();
  r.tn = j.at("tn").get<std::uint64_t>();
  r.fn = j.at("fn").get<std::uint64_t>();
  r.f1 = j.at("f1").get<double>();
  r.accuracy = j.at("accuracy").get<double>();
  return r;
}

// {model, layer, top_k, indices, delta}; top_k is the number of features
// actually selected.
inline Json to_json(const FeatureSelection& s) {
  return {{"model", s.model_name}, {"layer", s.layer_index},
          {"top_k", std::min(s.top_k, s.delta_snapshot.size())}, {"indices", s.indices},
          {"delta", s.delta_snapshot}};
}

inline FeatureSelection selection_from_json(const Json& j) {
  FeatureSelection s;
  s.model_name = j.at("model").get<std::string>();
  s.layer_index = j.at("layer").get<std::uint32_t>();
  s.top_k = j.at("top_k").get<std::size_t>();
  s.indices = j.at("indices").get<std::vector<std::size_t>>();
  s.delta_snapshot = j.at("delta").get<std::vector<double>>();
  for (auto i : s.indices) {
    if (i >= s.delta_snapshot.size()) {
      throw ValidationError("selection index " + std::to_string(i) + " exceeds delta length " +
                            std::to_string(s.delta_snapshot.size()));
    }
  }
  return s;
}

inline Json to_json(const SweepGrid& g) {
  Json cells = Json::array();
  for (const auto& c : g.cells) {
    Json per_k = Json::array();
    for (const auto& [k, f1] : c.f1_by_top_k) per_k.push_back({{"top_k", k}, {"f1", f1}});
    Json cell = {{"model", c.model_tag}, {"layer", c.layer_index}};
    cell["best"] = c.best ? to_json(*c.best) : Json(nullptr);
    cell["f1_by_top_k"] = per_k;
    if (!c.note.empty()) cell["note"] = c.note;
    cells.push_back(cell);
  }
  return {{"rows", g.models}, {"cols", g.layers}, {"cells", cells}};
}

inline Json to_json(const TransferCell& c) {
  Json j = {{"source", c.source_tag}, {"target", c.target_tag}, {"f1_source", c.f1_source},
            {"f1_target", c.f1_target}};
  j["delta"] = c.delta ? Json(*c.delta) : Json(nullptr);
  return j;
}

inline Json to_json(const ActivityStats& s) {
  return {{"n_codes", s.n_codes}, {"width", s.frequency.size()}, {"never_active", s.never_active},
          {"never_active_fraction", s.never_active_fraction()}, {"frequency", s.frequency}};
}

inline Json to_json(const std::vector<TokenActivation>& report) {
  Json rows = Json::array();
  for (const auto& t : report) rows.push_back({{"position", t.position}, {"value", t.value}});
  return rows;
}

// Top-level report document: {"schema", "kind", "manifest", <payload>}.
inline Json make_document(const std::string& kind, const RunManifest& manifest) {
  return {{"schema", kReportSchema}, {"kind", kind}, {"manifest", to_json(manifest)}};
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

namespace detail {

inline bool report_ok(const Json& j, std::vector<std::string>& problems, const std::string& where) {
  const EvalReport r = eval_report_from_json(j);
  if (metrics_consistent(r)) return true;
  problems.push_back(where + ": f1/accuracy do not match confusion counts");
  return false;
}

}  // namespace detail

// Re-derives every metric in a report document from its stored counts.
// Returns the list of inconsistencies (empty when the document checks out).
inline std::vector<std::string> recheck_document(const Json& doc) {
  std::vector<std::string> problems;
  if (doc.value("schema", "") != kReportSchema) {
    problems.push_back("unknown schema '" + doc.value("schema", "") + "'");
    return problems;
  }
  if (doc.contains("report")) detail::report_ok(doc["report"], problems, "report");
  if (doc.contains("grid")) {
    for (std::size_t i = 0; i < doc["grid"]["cells"].size(); ++i) {
      const auto& cell = doc["grid"]["cells"][i];
      if (!cell["best"].is_null()) detail::report_ok(cell["best"], problems, "grid cell " + std::to_string(i));
    }
  }
  if (doc.contains("transfer")) {
    for (std::size_t i = 0; i < doc["transfer"].size(); ++i) {
      const auto& c = doc["transfer"][i];
      const double src = c.at("f1_source").get<double>(), tgt = c.at("f1_target").get<double>();
      const bool expect_defined = src > 0.0;
      if (c["delta"].is_null() == expect_defined ||
          (expect_defined && c["delta"].get<double>() != transfer_delta(src, tgt))) {
        problems.push_back("transfer cell " + std::to_string(i) + ": delta does not match its F1 fields");
      }
    }
  }
  if (doc.contains("importance")) {
    const auto curve = doc["importance"].at("cumulative").get<std::vector<double>>();
    for (std::size_t i = 1; i < curve.size(); ++i) {
      if (curve[i] < curve[i - 1]) problems.push_back("cumulative importance decreases at " + std::to_string(i));
    }
  }
  return problems;
}

// ---- flat CSV tables ----------------------------------------------------------

inline std::string csv_number(double v) { return Json(v).dump(); }

inline std::string to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "model,classifier,dataset,layer,top_k,tp,fp,tn,fn,f1,accuracy\n";
  for (const auto& r : reports) {
    os << r.model_tag << ',' << r.classifier_tag << ',' << r.dataset_tag << ',' << r.layer_index << ',' << r.top_k
       << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ',' << csv_number(r.f1) << ','
       << csv_number(r.accuracy) << '\n';
  }
  return os.str();
}

inline std::string to_csv(const SweepGrid& g) {
  std::ostringstream os;
  os << "model,layer,best_top_k,f1,accuracy\n";
  for (const auto& c : g.cells) {
    os << c.model_tag << ',' << c.layer_index << ',';
    if (c.best) {
      os << c.best->top_k << ',' << csv_number(c.best->f1) << ',' << csv_number(c.best->accuracy) << '\n';
    } else {
      os << ",,\n";
    }
  }
  return os.str();
}

inline std::string to_csv(const std::vector<TransferCell>& cells) {
  std::ostringstream os;
  os << "source,target,f1_source,f1_target,delta\n";
  for (const auto& c : cells) {
    os << c.source_tag << ',' << c.target_tag << ',' << csv_number(c.f1_source) << ',' << csv_number(c.f1_target)
       << ',' << (c.delta ? csv_number(*c.delta) : std::string()) << '\n';
  }
  return os.str();
}

inline std::string to_csv(const std::vector<TokenActivation>& report) {
  std::ostringstream os;
  os << "position,value\n";
  for (const auto& t : report) os << t.position << ',' << csv_number(t.value) << '\n';
  return os.str();
}

// Two columns (index, value) for importance curves and activity frequencies.
inline std::string series_csv(const std::string& header, const std::vector<double>& values) {
  std::ostringstream os;
  os << "index," << header << '\n';
  for (std::size_t i = 0; i < values.size(); ++i) os << i << ',' << csv_number(values[i]) << '\n';
  return os.str();
}

}  // namespace sbd
