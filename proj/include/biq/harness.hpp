// Benchmark harness: dataset ingestion, the built-in blob generator,
// (p, noise) cell synthesis, grid execution over all methods, and report
// emission (flat results, per-method aggregates, q x p pivots).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biq/correction.hpp"
#include "biq/corruption.hpp"
#include "biq/data.hpp"
#include "biq/learner.hpp"
#include "biq/reweighting.hpp"
#include "biq/transfer.hpp"

namespace biq {

// Configuration problems exit the CLI with code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CsvSchema {
  std::string label_column = "label";
  std::vector<std::string> feature_columns;  // empty: every non-label column
};

// CSV with a header row; labels are dictionary-encoded in first-appearance
// order, the literal cell "-1" marks an unlabeled row. Throws naming the
// offending row and column on unparsable cells.
LabeledSet load_csv(const std::filesystem::path& path, const CsvSchema& schema,
                    std::vector<std::string>* label_names = nullptr);

void write_csv(const std::filesystem::path& path, const LabeledSet& set,
               const std::vector<std::string>* label_names = nullptr);

struct BlobSpec {
  int classes = 2;
  Eigen::Index rows = 2000;
  int dim = 2;
  double separation = 3.0;  // distance of each class center from the origin
};

// Balanced Gaussian blobs, unit variance, centers on a circle in the first
// two feature dimensions.
LabeledSet make_blobs(const BlobSpec& spec, std::uint64_t seed);

struct SynthesizedCell {
  BiqualityDataset data;
  LabeledSet test;
  LabeledSet clean_train;  // pre-corruption train rows; evaluation-only
  std::vector<Eigen::Index> test_indices;       // into the clean input set
  std::vector<Eigen::Index> trusted_indices;    // into the clean input set
  std::vector<Eigen::Index> untrusted_indices;  // into the clean input set
};

// Stratified test split, then a trusted fraction p kept clean and the
// remainder corrupted per the spec. Deterministic for a fixed seed.
SynthesizedCell synthesize_cell(const LabeledSet& clean, double p, const CorruptionSpec& spec,
                                std::uint64_t seed, double test_fraction);

struct ExperimentGrid {
  std::string dataset_id = "blobs2";  // blobs2 | blobs3 | csv
  BlobSpec blobs;
  std::uint64_t dataset_seed = 42;
  std::filesystem::path csv_path;
  CsvSchema csv_schema;

  std::vector<double> p_values;
  std::vector<std::string> noise_levels;  // CorruptionSpec strings (the q axis)
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  double test_fraction = 0.3;

  TrainConfig train;
  KmmConfig kmm;
  int tradaboost_rounds = 10;
  double trusted_upweight = 1.0;
  double cell_timeout_s = 300.0;
  int workers = 1;

  void validate() const;
};

struct ResultRecord {
  std::string method;
  double p = 0.0;
  std::string noise;
  double measured_q = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // ok | not-applicable | failed
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double mean_log_loss = 0.0;
  double wall_time_s = 0.0;
  std::string detail;  // error text for failed cells
};

// Method names: trusted-only, naive-union, glc-forward, glc-backward, irbl,
// diw, mtl:<lambda>, tradaboost.
bool known_method(const std::string& method);
bool method_applicable(const std::string& method, bool has_trusted, bool has_untrusted,
                       int class_count);

// Cartesian product of (p, noise, seed) cells; each cell measures q once and
// runs every method. Records are complete and deterministically ordered
// regardless of worker count.
std::vector<ResultRecord> run_grid(const ExperimentGrid& grid);

// results.csv, optional results.json, aggregate.csv (median and IQR over
// seeds), one pivot_<method>.csv per method, and schema.txt. Returns the
// emitted paths.
std::vector<std::filesystem::path> emit_report(const std::vector<ResultRecord>& records,
                                               const std::filesystem::path& out_dir,
                                               const std::vector<std::string>& formats);

std::string records_to_json(const std::vector<ResultRecord>& records);
std::vector<ResultRecord> records_from_json(const std::string& text);

// key = value file with '#' comments; unknown keys are rejected.
std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);
ExperimentGrid grid_from_config(const std::map<std::string, std::string>& kv,
                                std::uint64_t seed_base = 0);

// Effective configuration echoed into reports for provenance.
std::string describe_grid(const ExperimentGrid& grid);

}  // namespace biq
