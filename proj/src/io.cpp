#include "wsampler/io.hpp"

#include "wsampler/error.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

namespace wsampler::io {

std::string format_double(double v) {
  require(std::isfinite(v), Errc::non_finite, "cannot write a non-finite value");
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  if (b < e && *b == '+') ++b;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc{} || res.ptr != e || !std::isfinite(v))
    fail(Errc::io, "not a finite number: '" + s + "'");
  return v;
}

namespace {

std::string quote_field(const std::string& f) {
  if (f.find_first_of(",\"\r\n") == std::string::npos) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::vector<std::string>> parse_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      rec.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
      }
      rec.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) fail(Errc::io, "unterminated quoted field");
  if (any || !field.empty()) {
    rec.push_back(std::move(field));
    records.push_back(std::move(rec));
  }
  return records;
}

std::size_t column_index(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  fail(Errc::io, "missing column '" + name + "'");
}

}  // namespace

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

CsvTable read_csv(const fs::path& path) {
  auto records = parse_records(read_text(path));
  if (records.empty()) fail(Errc::io, path.string() + ": empty CSV");
  CsvTable t;
  t.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      fail(Errc::io, path.string() + ": row " + std::to_string(r) + " has " +
                                  std::to_string(records[r].size()) + " fields, expected " +
                                  std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& rec) {
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (i) out += ',';
      out += quote_field(rec[i]);
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  write_text(path, out);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(Errc::io, path.string() + ": " + e.what());
  }
}

namespace {

std::string digest_hex(EVP_MD_CTX* ctx) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx, md.data(), &len) != 1) fail(Errc::io, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

using CtxPtr = std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)>;

CtxPtr new_ctx() {
  CtxPtr ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail(Errc::io, "sha256 init failed");
  return ctx;
}

}  // namespace

std::string sha256_string(const std::string& s) {
  auto ctx = new_ctx();
  EVP_DigestUpdate(ctx.get(), s.data(), s.size());
  return digest_hex(ctx.get());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  auto ctx = new_ctx();
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return digest_hex(ctx.get());
}

// ---------------------------------------------------------------- datasets

void write_dataset_csv(const fs::path& path, const Dataset& d) {
  CsvTable t;
  switch (d.schema) {
    case Schema::logistic:
      t.header.push_back("y");
      for (Index j = 0; j < d.x.cols(); ++j) t.header.push_back("x" + std::to_string(j + 1));
      break;
    case Schema::mixture: t.header = {"x"}; break;
    case Schema::bernoulli: t.header = {"y"}; break;
    case Schema::indexed: t.header = {"id"}; break;
  }
  for (Index r = 0; r < d.n(); ++r) {
    std::vector<std::string> row;
    switch (d.schema) {
      case Schema::logistic:
        row.push_back(format_double(d.y(r)));
        for (Index j = 0; j < d.x.cols(); ++j) row.push_back(format_double(d.x(r, j)));
        break;
      case Schema::mixture: row.push_back(format_double(d.y(r))); break;
      case Schema::bernoulli: row.push_back(format_double(d.y(r))); break;
      case Schema::indexed: row.push_back(format_double(d.y(r))); break;
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

Dataset read_dataset_csv(const fs::path& path, Schema schema) {
  const CsvTable t = read_csv(path);
  Dataset d;
  d.schema = schema;
  const Index n = static_cast<Index>(t.rows.size());
  require(n > 0, Errc::io, path.string() + ": no data rows");
  auto cell = [&](Index r, std::size_t c) { return parse_double(t.rows[static_cast<std::size_t>(r)][c]); };
  switch (schema) {
    case Schema::logistic: {
      const std::size_t yc = column_index(t, "y");
      std::vector<std::size_t> xc;
      for (std::size_t j = 1;; ++j) {
        const std::string name = "x" + std::to_string(j);
        bool found = false;
        for (std::size_t i = 0; i < t.header.size(); ++i)
          if (t.header[i] == name) {
            xc.push_back(i);
            found = true;
          }
        if (!found) break;
      }
      require(!xc.empty(), Errc::io, path.string() + ": no covariate columns x1..xp");
      d.y.resize(n);
      d.x.resize(n, static_cast<Index>(xc.size()));
      for (Index r = 0; r < n; ++r) {
        d.y(r) = cell(r, yc);
        require(d.y(r) == 0.0 || d.y(r) == 1.0, Errc::io, "response must be 0 or 1");
        for (std::size_t j = 0; j < xc.size(); ++j) d.x(r, static_cast<Index>(j)) = cell(r, xc[j]);
      }
      break;
    }
    case Schema::mixture: {
      const std::size_t c = column_index(t, "x");
      d.y.resize(n);
      for (Index r = 0; r < n; ++r) d.y(r) = cell(r, c);
      break;
    }
    case Schema::bernoulli: {
      const std::size_t c = column_index(t, "y");
      d.y.resize(n);
      for (Index r = 0; r < n; ++r) {
        d.y(r) = cell(r, c);
        require(d.y(r) == 0.0 || d.y(r) == 1.0, Errc::io, "response must be 0 or 1");
      }
      break;
    }
    case Schema::indexed: {
      const std::size_t c = column_index(t, "id");
      d.y.resize(n);
      for (Index r = 0; r < n; ++r) d.y(r) = cell(r, c);
      break;
    }
  }
  return d;
}

// ------------------------------------------------------------------- draws

void write_draws_csv(const fs::path& path, const DrawMatrix& d) {
  CsvTable t;
  t.header.push_back("draw_index");
  for (const auto& n : d.names()) t.header.push_back(n);
  t.rows.reserve(static_cast<std::size_t>(d.draws()));
  for (Index r = 0; r < d.draws(); ++r) {
    std::vector<std::string> row{std::to_string(r)};
    for (Index j = 0; j < d.dim(); ++j) row.push_back(format_double(d.values()(r, j)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

DrawMatrix read_draws_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(t.header.size() >= 2 && t.header.front() == "draw_index", Errc::io,
          path.string() + ": expected draw_index,<names> header");
  std::vector<std::string> names(t.header.begin() + 1, t.header.end());
  Mat v(static_cast<Index>(t.rows.size()), static_cast<Index>(names.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t j = 0; j < names.size(); ++j)
      v(static_cast<Index>(r), static_cast<Index>(j)) = parse_double(t.rows[r][j + 1]);
  return DrawMatrix(std::move(v), std::move(names));
}

void write_combined_csv(const fs::path& path, const CombineResult& r) {
  const DrawMatrix& d = r.draws;
  CsvTable t;
  t.header = {"draw_index", "weight"};
  for (const auto& n : d.names()) t.header.push_back(n);
  const double uniform = 1.0 / static_cast<double>(d.draws());
  for (Index k = 0; k < d.draws(); ++k) {
    std::vector<std::string> row{std::to_string(k),
                                 format_double(r.weights ? (*r.weights)[static_cast<std::size_t>(k)]
                                                         : uniform)};
    for (Index j = 0; j < d.dim(); ++j) row.push_back(format_double(d.values()(k, j)));
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

CombineResult read_combined_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(t.header.size() >= 3 && t.header[0] == "draw_index" && t.header[1] == "weight",
          Errc::io, path.string() + ": expected draw_index,weight,<names> header");
  std::vector<std::string> names(t.header.begin() + 2, t.header.end());
  const Index n = static_cast<Index>(t.rows.size());
  Mat v(n, static_cast<Index>(names.size()));
  std::vector<double> w(static_cast<std::size_t>(n));
  bool uniform = true;
  for (Index k = 0; k < n; ++k) {
    const auto& row = t.rows[static_cast<std::size_t>(k)];
    w[static_cast<std::size_t>(k)] = parse_double(row[1]);
    if (w[static_cast<std::size_t>(k)] != w.front()) uniform = false;
    for (std::size_t j = 0; j < names.size(); ++j) v(k, static_cast<Index>(j)) = parse_double(row[j + 2]);
  }
  CombineResult r;
  r.draws = DrawMatrix(std::move(v), std::move(names));
  if (!uniform) r.weights = std::move(w);
  return r;
}

// -------------------------------------------------------------------- json

json matrix_json(const Mat& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

json vector_json(const Vec& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vec vector_from_json(const json& j) {
  require(j.is_array(), Errc::io, "expected a numeric array");
  Vec v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    require(j[i].is_number(), Errc::io, "expected a numeric array");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

json subset_run_json(const SubsetRun& r) {
  json j;
  j["subset_id"] = r.subset_id;
  j["draws"] = r.draws.draws();
  j["parameters"] = r.draws.names();
  j["model"] = r.draws.meta().model_tag;
  j["source"] = r.draws.meta().source;
  j["seed_lineage"] = r.draws.meta().seed_lineage;
  j["acceptance_rate"] = r.acceptance_rate;
  j["proposal_scale"] = r.proposal_scale;
  j["sample_mean"] = vector_json(r.sample_mean);
  j["sample_cov"] = matrix_json(r.sample_cov);
  j["cov_repaired"] = r.cov_repaired;
  if (r.laplace) {
    j["laplace"] = {{"mode", vector_json(r.laplace->mode)},
                    {"cov", matrix_json(r.laplace->cov)},
                    {"iterations", r.laplace->iterations}};
  } else {
    j["laplace"] = nullptr;
  }
  return j;
}

json diagnostics_json(const CombineDiagnostics& d) {
  json j;
  j["method"] = d.method;
  j["acceptance_rate"] = d.acceptance_rate ? json(*d.acceptance_rate) : json(nullptr);
  j["proposals"] = d.proposals;
  j["accepted"] = d.accepted;
  j["bandwidth_multiplier"] = d.bandwidth_multiplier;
  j["saturated"] = d.saturated;
  j["bandwidths"] = d.bandwidths;
  j["level_acceptance"] = d.level_acceptance;
  j["level_draws"] = d.level_draws;
  j["schedule"] = d.schedule;
  j["step_trace"] = d.step_trace;
  j["failed_replicas"] = d.failed_replicas;
  j["ess"] = d.ess ? json(*d.ess) : json(nullptr);
  j["notes"] = d.notes;
  return j;
}

json metric_json(const MetricReport& r, const std::vector<std::string>& names) {
  json j;
  json tv = json::object();
  for (std::size_t i = 0; i < r.tv.size(); ++i)
    tv[i < names.size() ? names[i] : std::to_string(i)] = r.tv[i];
  j["tv"] = tv;
  j["tv_mean"] = r.tv_mean;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  j["tv_nonzero_mean"] = opt(r.tv_nonzero_mean);
  j["tv_zero_mean"] = opt(r.tv_zero_mean);
  j["kl"] = opt(r.kl);
  j["error_ratio"] = opt(r.error_ratio);
  j["ess"] = opt(r.ess);
  return j;
}

void write_grid_csv(const fs::path& path, const GridDensity& g) {
  CsvTable t;
  t.header = {"x", "density"};
  for (std::size_t i = 0; i < g.size(); ++i)
    t.rows.push_back({format_double(g.grid()[i]), format_double(g.values()[i])});
  write_csv(path, t);
}

}  // namespace wsampler::io
