#pragma once

// On-disk dataset format: a single JSON document, schema_version 1.
// Feature values are serialized as decimals with 17 significant digits so
// save followed by load is bit-exact on the data model.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgf/errors.hpp"
#include "mgf/graph.hpp"
#include "mgf/io_util.hpp"

namespace mgf {

constexpr int kDatasetSchemaVersion = 1;

inline std::string dataset_to_json(const Dataset& d) {
  std::string out;
  out.reserve(d.samples.size() * 256 + 256);
  out += "{\n";
  out += "\"schema_version\":" + std::to_string(kDatasetSchemaVersion) + ",\n";
  out += "\"class_count\":" + std::to_string(d.class_count) + ",\n";
  out += "\"feature_dim\":" + std::to_string(d.feature_dim) + ",\n";
  out += "\"seed\":" + std::to_string(d.seed) + ",\n";
  if (!d.provenance.kind.empty()) {
    out += "\"provenance\":{\"kind\":" +
           nlohmann::json(d.provenance.kind).dump() + ",\"config\":" +
           (d.provenance.config_json.empty() ? std::string("null")
                                             : d.provenance.config_json) +
           "},\n";
  }
  out += "\"samples\":[\n";
  for (size_t k = 0; k < d.samples.size(); ++k) {
    const auto& s = d.samples[k];
    out += "{\"label\":" + std::to_string(s.label) + ",\"graphs\":[";
    for (size_t i = 0; i < s.graphs.size(); ++i) {
      const Graph& g = s.graphs[i];
      out += "{\"n\":" + std::to_string(g.node_count) + ",\"features\":[";
      for (int u = 0; u < g.node_count; ++u) {
        out += '[';
        for (int j = 0; j < g.feature_dim; ++j) {
          out += fmt_g17(g.feature(u, j));
          if (j + 1 < g.feature_dim) out += ',';
        }
        out += ']';
        if (u + 1 < g.node_count) out += ',';
      }
      out += "],\"edges\":[";
      for (size_t e = 0; e < g.edges.size(); ++e) {
        out += '[' + std::to_string(g.edges[e].first) + ',' +
               std::to_string(g.edges[e].second) + ']';
        if (e + 1 < g.edges.size()) out += ',';
      }
      out += "]";
      if (!g.node_labels.empty()) {
        out += ",\"node_labels\":" + nlohmann::json(g.node_labels).dump();
      }
      out += "}";
      if (i + 1 < s.graphs.size()) out += ',';
    }
    out += "]}";
    if (k + 1 < d.samples.size()) out += ',';
    out += '\n';
  }
  out += "]}\n";
  return out;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  write_text_file(path, dataset_to_json(d));
}

inline Dataset dataset_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("dataset JSON: ") + e.what());
  }
  if (!doc.contains("schema_version") ||
      !doc["schema_version"].is_number_integer()) {
    throw ParseError("dataset JSON: missing schema_version");
  }
  if (doc["schema_version"].get<int>() != kDatasetSchemaVersion) {
    throw VersionError("dataset schema_version " +
                       doc["schema_version"].dump() + " unsupported, expected " +
                       std::to_string(kDatasetSchemaVersion));
  }
  for (const char* field : {"class_count", "feature_dim", "samples"}) {
    if (!doc.contains(field)) {
      throw ParseError(std::string("dataset JSON: missing field '") + field +
                       "'");
    }
  }
  Dataset d;
  d.class_count = doc["class_count"].get<int>();
  d.feature_dim = doc["feature_dim"].get<int>();
  d.seed = doc.value("seed", uint64_t{0});
  if (doc.contains("provenance") && doc["provenance"].is_object()) {
    d.provenance.kind = doc["provenance"].value("kind", std::string{});
    if (doc["provenance"].contains("config") &&
        !doc["provenance"]["config"].is_null()) {
      d.provenance.config_json = doc["provenance"]["config"].dump();
    }
  }
  const auto& samples = doc["samples"];
  if (!samples.is_array()) {
    throw ParseError("dataset JSON: 'samples' must be an array");
  }
  for (size_t k = 0; k < samples.size(); ++k) {
    const auto& sj = samples[k];
    const std::string where = "samples[" + std::to_string(k) + "]";
    if (!sj.contains("label")) {
      throw ParseError("dataset JSON: missing 'label' in " + where);
    }
    if (!sj.contains("graphs") || !sj["graphs"].is_array()) {
      throw ParseError("dataset JSON: missing 'graphs' array in " + where);
    }
    MultiGraphSample s;
    s.label = sj["label"].get<int>();
    for (size_t i = 0; i < sj["graphs"].size(); ++i) {
      const auto& gj = sj["graphs"][i];
      const std::string gwhere = where + ".graphs[" + std::to_string(i) + "]";
      for (const char* field : {"n", "features", "edges"}) {
        if (!gj.contains(field)) {
          throw ParseError("dataset JSON: missing '" + std::string(field) +
                           "' in " + gwhere);
        }
      }
      Graph g(gj["n"].get<int>(), d.feature_dim);
      const auto& rows = gj["features"];
      if (!rows.is_array() || rows.size() != static_cast<size_t>(g.node_count)) {
        throw ParseError("dataset JSON: feature row count mismatch in " +
                         gwhere);
      }
      for (int u = 0; u < g.node_count; ++u) {
        const auto& row = rows[u];
        if (!row.is_array() ||
            row.size() != static_cast<size_t>(d.feature_dim)) {
          throw ParseError("dataset JSON: feature width mismatch in " + gwhere +
                           ".features[" + std::to_string(u) + "]");
        }
        for (int j = 0; j < d.feature_dim; ++j) {
          g.features[static_cast<size_t>(u) * d.feature_dim + j] =
              row[j].get<double>();
        }
      }
      for (const auto& ej : gj["edges"]) {
        if (!ej.is_array() || ej.size() != 2) {
          throw ParseError("dataset JSON: malformed edge in " + gwhere);
        }
        const int u = ej[0].get<int>();
        const int v = ej[1].get<int>();
        g.edges.emplace_back(std::min(u, v), std::max(u, v));
      }
      if (gj.contains("node_labels")) {
        g.node_labels = gj["node_labels"].get<std::vector<std::string>>();
      }
      s.graphs.push_back(std::move(g));
    }
    d.samples.push_back(std::move(s));
  }
  const auto violations = validate_dataset(d);
  if (!violations.empty()) {
    throw ParseError("dataset JSON: validation failed at " +
                     violations.front().path + ": " +
                     violations.front().message + " (and " +
                     std::to_string(violations.size() - 1) + " more)");
  }
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_json(read_text_file(path));
}

}  // namespace mgf
