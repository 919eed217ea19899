#include "biq/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>

#include "biq/rng.hpp"

namespace biq {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

double parse_double_cell(const std::string& cell, Eigen::Index row, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    if (!std::isfinite(v)) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("load_csv: unparsable cell at data row " + std::to_string(row) +
                      ", column '" + column + "' (value '" + cell + "')");
  }
}

std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV ingestion

LabeledSet load_csv(const std::filesystem::path& path, const CsvSchema& schema,
                    std::vector<std::string>* label_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv: cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ConfigError("load_csv: missing header row in " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::string item;
    std::istringstream hs(line);
    while (std::getline(hs, item, ',')) header.push_back(trim(item));
  }

  Eigen::Index label_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == schema.label_column) label_col = static_cast<Eigen::Index>(i);
  }
  if (label_col < 0) {
    throw ConfigError("load_csv: label column '" + schema.label_column + "' not found in " +
                      path.string());
  }

  std::vector<Eigen::Index> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (static_cast<Eigen::Index>(i) != label_col) {
        feature_cols.push_back(static_cast<Eigen::Index>(i));
      }
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      Eigen::Index col = -1;
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) col = static_cast<Eigen::Index>(i);
      }
      if (col < 0) throw ConfigError("load_csv: feature column '" + name + "' not found");
      feature_cols.push_back(col);
    }
  }
  if (feature_cols.empty()) throw ConfigError("load_csv: no feature columns");

  std::vector<std::vector<double>> feature_rows;
  std::vector<int> labels;
  std::vector<std::string> names;  // dictionary, first-appearance order
  Eigen::Index row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    std::vector<std::string> cells;
    std::string item;
    std::istringstream ls(line);
    while (std::getline(ls, item, ',')) cells.push_back(trim(item));
    while (cells.size() < header.size()) cells.emplace_back();
    if (cells.size() > header.size()) {
      throw ConfigError("load_csv: data row " + std::to_string(row) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    }

    std::vector<double> feats;
    feats.reserve(feature_cols.size());
    for (const Eigen::Index c : feature_cols) {
      feats.push_back(parse_double_cell(cells[static_cast<std::size_t>(c)], row,
                                        header[static_cast<std::size_t>(c)]));
    }
    feature_rows.push_back(std::move(feats));

    const std::string& label_cell = cells[static_cast<std::size_t>(label_col)];
    if (label_cell == "-1") {
      labels.push_back(kMaskedLabel);
    } else {
      int code = -1;
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == label_cell) code = static_cast<int>(i);
      }
      if (code < 0) {
        code = static_cast<int>(names.size());
        names.push_back(label_cell);
      }
      labels.push_back(code);
    }
  }

  if (names.size() < 2) {
    throw ConfigError("load_csv: " + path.string() + " has " + std::to_string(names.size()) +
                      " label class(es); at least 2 are required");
  }
  Eigen::MatrixXd features(static_cast<Eigen::Index>(feature_rows.size()),
                           static_cast<Eigen::Index>(feature_cols.size()));
  Eigen::VectorXi label_vec(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < feature_rows.size(); ++i) {
    for (std::size_t j = 0; j < feature_rows[i].size(); ++j) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feature_rows[i][j];
    }
    label_vec[static_cast<Eigen::Index>(i)] = labels[i];
  }
  if (label_names) *label_names = names;
  return LabeledSet(std::move(features), std::move(label_vec), static_cast<int>(names.size()));
}

void write_csv(const std::filesystem::path& path, const LabeledSet& set,
               const std::vector<std::string>* label_names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  for (Eigen::Index j = 0; j < set.dim(); ++j) out << 'x' << (j + 1) << ',';
  out << "label\n";
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    for (Eigen::Index j = 0; j < set.dim(); ++j) out << format_full(set.features()(i, j)) << ',';
    const int y = set.labels()[i];
    if (y == kMaskedLabel) {
      out << "-1";
    } else if (label_names && y < static_cast<int>(label_names->size())) {
      out << (*label_names)[static_cast<std::size_t>(y)];
    } else {
      out << y;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data and cell synthesis

LabeledSet make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw std::invalid_argument("make_blobs: need at least 2 classes");
  if (spec.rows < spec.classes) throw std::invalid_argument("make_blobs: rows < classes");
  if (spec.dim < 1) throw std::invalid_argument("make_blobs: dim must be >= 1");

  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(spec.classes, spec.dim);
  for (int c = 0; c < spec.classes; ++c) {
    const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(spec.classes);
    if (spec.dim == 1) {
      centers(c, 0) = spec.separation * (2.0 * c - (spec.classes - 1));
    } else {
      centers(c, 0) = spec.separation * std::cos(angle);
      centers(c, 1) = spec.separation * std::sin(angle);
    }
  }

  Rng rng(seed);
  Eigen::MatrixXd features(spec.rows, spec.dim);
  Eigen::VectorXi labels(spec.rows);
  for (Eigen::Index i = 0; i < spec.rows; ++i) {
    const int c = static_cast<int>(i % spec.classes);
    labels[i] = c;
    for (int j = 0; j < spec.dim; ++j) {
      features(i, j) = centers(c, j) + rng.normal();
    }
  }
  return LabeledSet(std::move(features), std::move(labels), spec.classes);
}

SynthesizedCell synthesize_cell(const LabeledSet& clean, double p, const CorruptionSpec& spec,
                                std::uint64_t seed, double test_fraction) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synthesize_cell: p must lie in [0,1]");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("synthesize_cell: test_fraction must lie in (0,1)");
  }

  auto [test_idx, train_idx] =
      stratified_split_indices(clean, test_fraction, derive_seed(seed, 1));
  LabeledSet test = clean.take_rows(test_idx);
  LabeledSet train = clean.take_rows(train_idx);

  std::vector<Eigen::Index> trusted_global, untrusted_global;
  LabeledSet trusted = clean.empty_like();
  LabeledSet untrusted_clean = clean.empty_like();
  if (p <= 0.0) {
    untrusted_clean = train;
    untrusted_global = train_idx;
  } else if (p >= 1.0) {
    trusted = train;
    trusted_global = train_idx;
  } else {
    auto [t_local, u_local] = stratified_split_indices(train, p, derive_seed(seed, 2));
    trusted = train.take_rows(t_local);
    untrusted_clean = train.take_rows(u_local);
    for (const Eigen::Index i : t_local) trusted_global.push_back(train_idx[static_cast<std::size_t>(i)]);
    for (const Eigen::Index i : u_local) untrusted_global.push_back(train_idx[static_cast<std::size_t>(i)]);
  }

  std::vector<std::uint8_t> mask;
  LabeledSet untrusted = untrusted_clean;
  if (!untrusted_clean.empty()) {
    CorruptionSpec cell_spec = spec;
    cell_spec.seed = derive_seed(seed, 3);
    CorruptionResult result = apply_corruption(untrusted_clean, cell_spec);
    untrusted = std::move(result.corrupted);
    mask = std::move(result.flip_mask);
  }

  SynthesizedCell cell{BiqualityDataset(std::move(trusted), std::move(untrusted), std::move(mask)),
                       std::move(test),
                       std::move(train),
                       std::move(test_idx),
                       std::move(trusted_global),
                       std::move(untrusted_global)};
  return cell;
}

// ---------------------------------------------------------------------------
// Methods

bool known_method(const std::string& method) {
  if (method == "trusted-only" || method == "naive-union" || method == "glc-forward" ||
      method == "glc-backward" || method == "irbl" || method == "diw" || method == "tradaboost") {
    return true;
  }
  if (method.rfind("mtl:", 0) == 0) {
    try {
      std::size_t used = 0;
      const double lambda = std::stod(method.substr(4), &used);
      return used == method.size() - 4 && lambda >= 0.0 && lambda <= 1.0;
    } catch (const std::exception&) {
      return false;
    }
  }
  return false;
}

bool method_applicable(const std::string& method, bool has_trusted, bool has_untrusted,
                       int class_count) {
  if (method == "trusted-only") return has_trusted;
  if (method == "naive-union") return has_trusted || has_untrusted;
  if (method == "tradaboost") return has_trusted && has_untrusted && class_count == 2;
  return has_trusted && has_untrusted;  // glc-*, irbl, diw, mtl:*
}

namespace {

ProbClassifier fit_plain_union(const BiqualityDataset& ds, const TrainConfig& cfg) {
  const Eigen::Index n = ds.trusted.size() + ds.untrusted.size();
  Eigen::MatrixXd features(n, ds.dim());
  Eigen::VectorXi labels(n);
  features << ds.trusted.features(), ds.untrusted.features();
  labels << ds.trusted.labels(), ds.untrusted.labels();
  const LabeledSet combined(std::move(features), std::move(labels), ds.class_count());
  return fit_weighted(combined, SampleWeights::ones(n), cfg);
}

Metrics run_method(const std::string& method, const SynthesizedCell& cell,
                   const ExperimentGrid& grid) {
  const BiqualityDataset& ds = cell.data;
  const TrainConfig& cfg = grid.train;

  if (method == "trusted-only") {
    return evaluate(fit_weighted(ds.trusted, SampleWeights::ones(ds.trusted.size()), cfg),
                    cell.test);
  }
  if (method == "naive-union") {
    return evaluate(fit_plain_union(ds, cfg), cell.test);
  }
  if (method == "glc-forward" || method == "glc-backward") {
    GlcConfig glc;
    glc.kind = method == "glc-forward" ? CorrectionKind::Forward : CorrectionKind::Backward;
    glc.trusted_upweight = grid.trusted_upweight;
    return evaluate(glc_fit(ds, cfg, glc).model, cell.test);
  }
  if (method == "irbl") {
    return evaluate(irbl_fit(ds, cfg).model, cell.test);
  }
  if (method == "diw") {
    DiwConfig diw;
    diw.kmm = grid.kmm;
    return evaluate(diw_fit(ds, diw, cfg).model, cell.test);
  }
  if (method == "tradaboost") {
    return tradaboost_fit(ds, grid.tradaboost_rounds, cfg).evaluate(cell.test);
  }
  if (method.rfind("mtl:", 0) == 0) {
    MtlConfig mtl;
    mtl.lambda = std::stod(method.substr(4));
    return evaluate(mtl_fit(ds, mtl, cfg), cell.test);
  }
  throw std::invalid_argument("run_method: unknown method '" + method + "'");
}

double measure_cell_quality(const SynthesizedCell& cell, const TrainConfig& cfg) {
  if (cell.data.untrusted.empty()) return 1.0;  // no untrusted data: SL corner
  try {
    const ProbClassifier clean_model =
        fit_weighted(cell.clean_train, SampleWeights::ones(cell.clean_train.size()), cfg);
    const ProbClassifier noisy_model = fit_weighted(
        cell.data.untrusted, SampleWeights::ones(cell.data.untrusted.size()), cfg);
    return measure_quality(clean_model, noisy_model, cell.test).q;
  } catch (const std::exception&) {
    return 0.0;  // untrusted side untrainable (e.g. fully masked)
  }
}

struct CellKey {
  std::size_t p_index;
  std::size_t noise_index;
  std::size_t seed_index;
};

}  // namespace

void ExperimentGrid::validate() const {
  if (dataset_id != "blobs2" && dataset_id != "blobs3" && dataset_id != "csv") {
    throw ConfigError("grid: dataset must be blobs2, blobs3 or csv, got '" + dataset_id + "'");
  }
  if (dataset_id == "csv" && csv_path.empty()) throw ConfigError("grid: csv_path is required");
  if (p_values.empty()) throw ConfigError("grid: p_values must be nonempty");
  if (!std::is_sorted(p_values.begin(), p_values.end())) {
    throw ConfigError("grid: p_values must be sorted ascending");
  }
  for (const double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("grid: p values must lie in [0,1]");
  }
  if (noise_levels.empty()) throw ConfigError("grid: noise_levels must be nonempty");
  if (methods.empty()) throw ConfigError("grid: methods must be nonempty");
  for (const std::string& m : methods) {
    if (!known_method(m)) throw ConfigError("grid: unknown method '" + m + "'");
  }
  if (seeds.empty()) throw ConfigError("grid: seeds must be nonempty");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("grid: test_fraction must lie in (0,1)");
  }
  if (tradaboost_rounds < 2) throw ConfigError("grid: tradaboost_rounds must be >= 2");
  if (!(trusted_upweight > 0.0)) throw ConfigError("grid: trusted_upweight must be positive");
  if (!(cell_timeout_s > 0.0)) throw ConfigError("grid: cell_timeout_s must be positive");
  if (workers < 1) throw ConfigError("grid: workers must be >= 1");
  try {
    train.validate();
    kmm.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("grid: ") + e.what());
  }
}

std::vector<ResultRecord> run_grid(const ExperimentGrid& grid) {
  grid.validate();

  LabeledSet clean;
  if (grid.dataset_id == "csv") {
    clean = load_csv(grid.csv_path, grid.csv_schema);
  } else {
    BlobSpec spec = grid.blobs;
    spec.classes = grid.dataset_id == "blobs3" ? 3 : 2;
    clean = make_blobs(spec, grid.dataset_seed);
  }

  // reject malformed noise specs before any cell runs
  std::vector<CorruptionSpec> parsed_specs;
  for (const std::string& text : grid.noise_levels) {
    try {
      parsed_specs.push_back(CorruptionSpec::parse(text, clean.class_count(), clean.dim(), 0));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("grid: bad noise spec '") + text + "': " + e.what());
    }
  }

  std::vector<CellKey> cells;
  for (std::size_t pi = 0; pi < grid.p_values.size(); ++pi) {
    for (std::size_t ni = 0; ni < grid.noise_levels.size(); ++ni) {
      for (std::size_t si = 0; si < grid.seeds.size(); ++si) {
        cells.push_back(CellKey{pi, ni, si});
      }
    }
  }
  std::vector<std::vector<ResultRecord>> per_cell(cells.size());

  const auto run_cell = [&](const CellKey& key) {
    const double p = grid.p_values[key.p_index];
    const std::string& noise = grid.noise_levels[key.noise_index];
    const std::uint64_t seed = grid.seeds[key.seed_index];

    std::vector<ResultRecord> records;
    ResultRecord base;
    base.p = p;
    base.noise = noise;
    base.seed = seed;

    std::optional<SynthesizedCell> maybe_cell;
    try {
      maybe_cell.emplace(
          synthesize_cell(clean, p, parsed_specs[key.noise_index], seed, grid.test_fraction));
    } catch (const std::exception& e) {
      for (const std::string& method : grid.methods) {
        ResultRecord r = base;
        r.method = method;
        r.status = "failed";
        r.detail = std::string("synthesis failed: ") + e.what();
        records.push_back(std::move(r));
      }
      return records;
    }
    const SynthesizedCell& cell = *maybe_cell;

    base.measured_q = measure_cell_quality(cell, grid.train);
    const bool has_trusted = !cell.data.trusted.empty();
    const bool has_untrusted = !cell.data.untrusted.empty();

    const auto cell_start = std::chrono::steady_clock::now();
    for (const std::string& method : grid.methods) {
      ResultRecord r = base;
      r.method = method;
      if (!method_applicable(method, has_trusted, has_untrusted, clean.class_count())) {
        r.status = "not-applicable";
        records.push_back(std::move(r));
        continue;
      }
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - cell_start).count();
      if (elapsed > grid.cell_timeout_s) {
        r.status = "failed";
        r.detail = "cell timeout (" + format_short(grid.cell_timeout_s) + "s) exceeded";
        records.push_back(std::move(r));
        continue;
      }
      const auto start = std::chrono::steady_clock::now();
      try {
        const Metrics m = run_method(method, cell, grid);
        r.status = "ok";
        r.accuracy = m.accuracy;
        r.balanced_accuracy = m.balanced_accuracy;
        r.mean_log_loss = m.mean_log_loss;
      } catch (const std::exception& e) {
        r.status = "failed";
        r.detail = e.what();
      }
      r.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      records.push_back(std::move(r));
    }
    return records;
  };

  const int workers = std::min<int>(grid.workers, static_cast<int>(cells.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) per_cell[i] = run_cell(cells[i]);
  } else {
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cells.size()) break;
        per_cell[i] = run_cell(cells[i]);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::vector<ResultRecord> records;
  for (const auto& cell_records : per_cell) {
    records.insert(records.end(), cell_records.begin(), cell_records.end());
  }
  return records;
}

// ---------------------------------------------------------------------------
// Reports

std::string records_to_json(const std::vector<ResultRecord>& records) {
  json array = json::array();
  for (const ResultRecord& r : records) {
    array.push_back(json{{"method", r.method},
                         {"p", r.p},
                         {"noise", r.noise},
                         {"measured_q", r.measured_q},
                         {"seed", r.seed},
                         {"status", r.status},
                         {"accuracy", r.accuracy},
                         {"balanced_accuracy", r.balanced_accuracy},
                         {"mean_log_loss", r.mean_log_loss},
                         {"wall_time_s", r.wall_time_s},
                         {"detail", r.detail}});
  }
  return array.dump(2);
}

std::vector<ResultRecord> records_from_json(const std::string& text) {
  const json array = json::parse(text);
  std::vector<ResultRecord> records;
  for (const json& item : array) {
    ResultRecord r;
    r.method = item.at("method").get<std::string>();
    r.p = item.at("p").get<double>();
    r.noise = item.at("noise").get<std::string>();
    r.measured_q = item.at("measured_q").get<double>();
    r.seed = item.at("seed").get<std::uint64_t>();
    r.status = item.at("status").get<std::string>();
    r.accuracy = item.at("accuracy").get<double>();
    r.balanced_accuracy = item.at("balanced_accuracy").get<double>();
    r.mean_log_loss = item.at("mean_log_loss").get<double>();
    r.wall_time_s = item.at("wall_time_s").get<double>();
    r.detail = item.at("detail").get<std::string>();
    records.push_back(std::move(r));
  }
  return records;
}

namespace {

std::string sanitize_filename(const std::string& name) {
  std::string out = name;
  for (char& c : out) {
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '-';
  }
  return out;
}

const char* kSchemaText = R"(results.csv
  one row per (method, p, noise, seed) grid cell
  method            algorithm name (trusted-only, naive-union, glc-forward,
                    glc-backward, irbl, diw, mtl:<lambda>, tradaboost)
  p                 trusted ratio |D_T| / (|D_T| + |D_U|) of the cell
  noise             corruption spec applied to the untrusted labels
  measured_q        post-hoc KL-ratio quality of the corrupted cell, in [0,1];
                    the KL expectation is the empirical mean over the cell's
                    held-out test features, with the clean-train fit as the
                    reference conditional (1.0 by convention when |D_U| = 0)
  seed              cell seed driving splits and corruption draws
  status            ok | not-applicable | failed
  accuracy          test-set argmax accuracy (0 unless status = ok)
  balanced_accuracy mean per-class recall on the test set
  mean_log_loss     mean floored negative log-likelihood on the test set
  wall_time_s       method wall-clock seconds (not deterministic across runs)
  detail            error text for failed records, else empty

aggregate.csv
  one row per (method, p, noise) over seeds with status = ok
  n_ok, median_q, median_accuracy, iqr_accuracy (q75 - q25),
  median_balanced_accuracy, median_log_loss

pivot_<method>.csv
  one row per noise level: noise, median_q, then one median-accuracy column
  per p value (plot-ready q x p plane for that method)

results.json
  the same records as results.csv, as a JSON array; reloads exactly

notes
  glc transition estimates average the untrusted model's predictions over
  each trusted class and normalize per row (row-stochastic by construction);
  inspect-t prints them next to the anchor-point estimates
)";

}  // namespace

std::vector<std::filesystem::path> emit_report(const std::vector<ResultRecord>& records,
                                               const std::filesystem::path& out_dir,
                                               const std::vector<std::string>& formats) {
  if (records.empty()) throw std::invalid_argument("emit_report: no records");
  bool want_csv = false;
  bool want_json = false;
  for (const std::string& f : formats) {
    if (f == "csv") want_csv = true;
    else if (f == "json") want_json = true;
    else throw std::invalid_argument("emit_report: unknown format '" + f + "'");
  }
  if (!want_csv && !want_json) throw std::invalid_argument("emit_report: no formats selected");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("emit_report: cannot create " + out_dir.string());

  std::vector<std::filesystem::path> paths;
  const auto open_out = [&](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("emit_report: cannot write " + p.string());
    paths.push_back(p);
    return out;
  };

  if (want_json) {
    auto out = open_out(out_dir / "results.json");
    out << records_to_json(records) << '\n';
  }

  if (want_csv) {
    auto out = open_out(out_dir / "results.csv");
    out << "method,p,noise,measured_q,seed,status,accuracy,balanced_accuracy,"
           "mean_log_loss,wall_time_s,detail\n";
    for (const ResultRecord& r : records) {
      out << csv_quote(r.method) << ',' << format_full(r.p) << ',' << csv_quote(r.noise) << ','
          << format_full(r.measured_q) << ',' << r.seed << ',' << r.status << ','
          << format_full(r.accuracy) << ',' << format_full(r.balanced_accuracy) << ','
          << format_full(r.mean_log_loss) << ',' << format_short(r.wall_time_s) << ','
          << csv_quote(r.detail) << '\n';
    }
  }

  // aggregate over seeds, then per-method pivots
  struct Key {
    std::string method;
    double p;
    std::string noise;
    bool operator<(const Key& o) const {
      return std::tie(method, p, noise) < std::tie(o.method, o.p, o.noise);
    }
  };
  std::map<Key, std::vector<const ResultRecord*>> groups;
  std::vector<std::string> method_order;
  std::vector<std::string> noise_order;
  std::vector<double> p_order;
  for (const ResultRecord& r : records) {
    if (std::find(method_order.begin(), method_order.end(), r.method) == method_order.end()) {
      method_order.push_back(r.method);
    }
    if (std::find(noise_order.begin(), noise_order.end(), r.noise) == noise_order.end()) {
      noise_order.push_back(r.noise);
    }
    if (std::find(p_order.begin(), p_order.end(), r.p) == p_order.end()) {
      p_order.push_back(r.p);
    }
    if (r.status == "ok") groups[Key{r.method, r.p, r.noise}].push_back(&r);
  }
  std::sort(p_order.begin(), p_order.end());

  const auto collect = [](const std::vector<const ResultRecord*>& rs, auto field) {
    std::vector<double> out;
    out.reserve(rs.size());
    for (const ResultRecord* r : rs) out.push_back(field(*r));
    return out;
  };

  if (want_csv) {
    auto out = open_out(out_dir / "aggregate.csv");
    out << "method,p,noise,n_ok,median_q,median_accuracy,iqr_accuracy,"
           "median_balanced_accuracy,median_log_loss\n";
    for (const auto& [key, rs] : groups) {
      const auto acc = collect(rs, [](const ResultRecord& r) { return r.accuracy; });
      const auto bal = collect(rs, [](const ResultRecord& r) { return r.balanced_accuracy; });
      const auto ll = collect(rs, [](const ResultRecord& r) { return r.mean_log_loss; });
      const auto qs = collect(rs, [](const ResultRecord& r) { return r.measured_q; });
      out << csv_quote(key.method) << ',' << format_full(key.p) << ',' << csv_quote(key.noise)
          << ',' << rs.size() << ',' << format_full(quantile(qs, 0.5)) << ','
          << format_full(quantile(acc, 0.5)) << ','
          << format_full(quantile(acc, 0.75) - quantile(acc, 0.25)) << ','
          << format_full(quantile(bal, 0.5)) << ',' << format_full(quantile(ll, 0.5)) << '\n';
    }

    for (const std::string& method : method_order) {
      auto out_pivot = open_out(out_dir / ("pivot_" + sanitize_filename(method) + ".csv"));
      out_pivot << "noise,median_q";
      for (const double p : p_order) out_pivot << ",p=" << format_short(p);
      out_pivot << '\n';
      for (const std::string& noise : noise_order) {
        out_pivot << csv_quote(noise);
        std::vector<double> row_q;
        std::string row_cells;
        for (const double p : p_order) {
          const auto it = groups.find(Key{method, p, noise});
          row_cells += ',';
          if (it != groups.end() && !it->second.empty()) {
            const auto acc = collect(it->second, [](const ResultRecord& r) { return r.accuracy; });
            const auto qs =
                collect(it->second, [](const ResultRecord& r) { return r.measured_q; });
            row_cells += format_full(quantile(acc, 0.5));
            row_q.push_back(quantile(qs, 0.5));
          }
        }
        out_pivot << ',' << (row_q.empty() ? "" : format_full(quantile(row_q, 0.5))) << row_cells
                  << '\n';
      }
    }
  }

  {
    auto out = open_out(out_dir / "schema.txt");
    out << kSchemaText;
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Config files

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(line_no));
    kv[key] = value;
  }
  return kv;
}

namespace {

double config_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: cannot parse number for '" + key + "' from '" + value + "'");
  }
}

long long config_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: cannot parse integer for '" + key + "' from '" + value + "'");
  }
}

}  // namespace

ExperimentGrid grid_from_config(const std::map<std::string, std::string>& kv,
                                std::uint64_t seed_base) {
  ExperimentGrid grid;
  for (const auto& [key, value] : kv) {
    if (key == "dataset") grid.dataset_id = value;
    else if (key == "csv_path") grid.csv_path = value;
    else if (key == "label_column") grid.csv_schema.label_column = value;
    else if (key == "feature_columns") {
      if (value != "rest") grid.csv_schema.feature_columns = split_list(value, ',');
    } else if (key == "blob_rows") grid.blobs.rows = config_int(key, value);
    else if (key == "blob_dim") grid.blobs.dim = static_cast<int>(config_int(key, value));
    else if (key == "blob_separation") grid.blobs.separation = config_double(key, value);
    else if (key == "dataset_seed") grid.dataset_seed = static_cast<std::uint64_t>(config_int(key, value));
    else if (key == "p_values") {
      for (const std::string& s : split_list(value, ',')) {
        grid.p_values.push_back(config_double(key, s));
      }
    } else if (key == "noise_levels") grid.noise_levels = split_list(value, '|');
    else if (key == "methods") grid.methods = split_list(value, ',');
    else if (key == "seeds") {
      for (const std::string& s : split_list(value, ',')) {
        grid.seeds.push_back(static_cast<std::uint64_t>(config_int(key, s)));
      }
    } else if (key == "test_fraction") grid.test_fraction = config_double(key, value);
    else if (key == "learning_rate") grid.train.learning_rate = config_double(key, value);
    else if (key == "max_iters") grid.train.max_iters = static_cast<int>(config_int(key, value));
    else if (key == "tolerance") grid.train.tolerance = config_double(key, value);
    else if (key == "l2_penalty") grid.train.l2_penalty = config_double(key, value);
    else if (key == "kmm_bandwidth") {
      if (value != "median") grid.kmm.kernel_bandwidth = config_double(key, value);
    } else if (key == "kmm_weight_cap") grid.kmm.weight_cap = config_double(key, value);
    else if (key == "kmm_mean_slack") grid.kmm.mean_slack = config_double(key, value);
    else if (key == "kmm_max_iters") grid.kmm.max_iters = static_cast<int>(config_int(key, value));
    else if (key == "kmm_step_size") grid.kmm.step_size = config_double(key, value);
    else if (key == "tradaboost_rounds") grid.tradaboost_rounds = static_cast<int>(config_int(key, value));
    else if (key == "trusted_upweight") grid.trusted_upweight = config_double(key, value);
    else if (key == "cell_timeout_s") grid.cell_timeout_s = config_double(key, value);
    else if (key == "workers") grid.workers = static_cast<int>(config_int(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  for (std::uint64_t& s : grid.seeds) s += seed_base;
  grid.validate();
  return grid;
}

std::string describe_grid(const ExperimentGrid& grid) {
  std::ostringstream out;
  out << "dataset = " << grid.dataset_id << '\n';
  if (grid.dataset_id == "csv") {
    out << "csv_path = " << grid.csv_path.string() << '\n';
    out << "label_column = " << grid.csv_schema.label_column << '\n';
    out << "feature_columns = ";
    if (grid.csv_schema.feature_columns.empty()) {
      out << "rest";
    } else {
      for (std::size_t i = 0; i < grid.csv_schema.feature_columns.size(); ++i) {
        if (i) out << ", ";
        out << grid.csv_schema.feature_columns[i];
      }
    }
    out << '\n';
  } else {
    out << "blob_rows = " << grid.blobs.rows << '\n';
    out << "blob_dim = " << grid.blobs.dim << '\n';
    out << "blob_separation = " << format_short(grid.blobs.separation) << '\n';
    out << "dataset_seed = " << grid.dataset_seed << '\n';
  }
  out << "p_values = ";
  for (std::size_t i = 0; i < grid.p_values.size(); ++i) {
    if (i) out << ", ";
    out << format_short(grid.p_values[i]);
  }
  out << '\n' << "noise_levels = ";
  for (std::size_t i = 0; i < grid.noise_levels.size(); ++i) {
    if (i) out << " | ";
    out << grid.noise_levels[i];
  }
  out << '\n' << "methods = ";
  for (std::size_t i = 0; i < grid.methods.size(); ++i) {
    if (i) out << ", ";
    out << grid.methods[i];
  }
  out << '\n' << "seeds = ";
  for (std::size_t i = 0; i < grid.seeds.size(); ++i) {
    if (i) out << ", ";
    out << grid.seeds[i];
  }
  out << '\n';
  out << "test_fraction = " << format_short(grid.test_fraction) << '\n';
  out << "learning_rate = " << format_short(grid.train.learning_rate) << '\n';
  out << "max_iters = " << grid.train.max_iters << '\n';
  out << "tolerance = " << format_short(grid.train.tolerance) << '\n';
  out << "l2_penalty = " << format_short(grid.train.l2_penalty) << '\n';
  out << "kmm_bandwidth = "
      << (grid.kmm.kernel_bandwidth ? format_short(*grid.kmm.kernel_bandwidth) : "median") << '\n';
  out << "kmm_weight_cap = " << format_short(grid.kmm.weight_cap) << '\n';
  out << "kmm_mean_slack = " << format_short(grid.kmm.mean_slack) << '\n';
  out << "kmm_max_iters = " << grid.kmm.max_iters << '\n';
  out << "kmm_step_size = " << format_short(grid.kmm.step_size) << '\n';
  out << "tradaboost_rounds = " << grid.tradaboost_rounds << '\n';
  out << "trusted_upweight = " << format_short(grid.trusted_upweight) << '\n';
  out << "cell_timeout_s = " << format_short(grid.cell_timeout_s) << '\n';
  out << "workers = " << grid.workers << '\n';
  return out.str();
}

}  // namespace biq
