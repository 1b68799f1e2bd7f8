#pragma once

#include "wsampler/combiners.hpp"
#include "wsampler/draws.hpp"
#include "wsampler/engine.hpp"
#include "wsampler/evaluation.hpp"
#include "wsampler/models.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace wsampler::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC-4180 reader: quoted fields, doubled quotes, CRLF or LF line ends.
CsvTable read_csv(const fs::path& path);
void write_csv(const fs::path& path, const CsvTable& table);
double parse_double(const std::string& s);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
void write_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const fs::path& path);
std::string sha256_string(const std::string& s);

// Dataset CSV: logistic y,x1..xp; mixture x; bernoulli y; indexed id.
void write_dataset_csv(const fs::path& path, const Dataset& d);
Dataset read_dataset_csv(const fs::path& path, Schema schema);

// Draw CSV: draw_index,<names>.
void write_draws_csv(const fs::path& path, const DrawMatrix& d);
DrawMatrix read_draws_csv(const fs::path& path);

// Combined CSV: draw_index,weight,<names> (weight 1/n when unweighted).
void write_combined_csv(const fs::path& path, const CombineResult& r);
CombineResult read_combined_csv(const fs::path& path);

json matrix_json(const Mat& m);  // row-major nested arrays
json vector_json(const Vec& v);
Vec vector_from_json(const json& j);

json subset_run_json(const SubsetRun& r);
json diagnostics_json(const CombineDiagnostics& d);
json metric_json(const MetricReport& r, const std::vector<std::string>& names);

/// x,density rows for external plotting.
void write_grid_csv(const fs::path& path, const GridDensity& g);

}  // namespace wsampler::io
