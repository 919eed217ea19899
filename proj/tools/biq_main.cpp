// biq: benchmark CLI for biquality learning.
//
//   biq synthesize --config grid.cfg --out dir      write one synthesized cell
//   biq run        --config grid.cfg --out dir      execute the full grid
//   biq report     --in results.json --out dir      regenerate reports
//   biq inspect-t  --config grid.cfg                estimated vs true T
//
// Exit codes: 0 success, 1 any failed grid cell, 2 configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "biq/harness.hpp"

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void print_matrix(const std::string& name, const Eigen::MatrixXd& m) {
  std::printf("%s\n", name.c_str());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::printf(" ");
    for (Eigen::Index j = 0; j < m.cols(); ++j) std::printf(" %8.5f", m(i, j));
    std::printf("\n");
  }
}

biq::SynthesizedCell first_cell(const biq::ExperimentGrid& grid, biq::LabeledSet& clean_out) {
  if (grid.dataset_id == "csv") {
    clean_out = biq::load_csv(grid.csv_path, grid.csv_schema);
  } else {
    biq::BlobSpec spec = grid.blobs;
    spec.classes = grid.dataset_id == "blobs3" ? 3 : 2;
    clean_out = biq::make_blobs(spec, grid.dataset_seed);
  }
  const auto spec = biq::CorruptionSpec::parse(grid.noise_levels.front(), clean_out.class_count(),
                                               clean_out.dim(), 0);
  return biq::synthesize_cell(clean_out, grid.p_values.front(), spec, grid.seeds.front(),
                              grid.test_fraction);
}

int cmd_synthesize(const fs::path& config_path, const fs::path& out_dir,
                   std::uint64_t seed_base) {
  const auto grid = biq::grid_from_config(biq::parse_config_file(config_path), seed_base);
  biq::LabeledSet clean;
  const biq::SynthesizedCell cell = first_cell(grid, clean);

  fs::create_directories(out_dir);
  biq::write_csv(out_dir / "trusted.csv", cell.data.trusted);
  biq::write_csv(out_dir / "untrusted.csv", cell.data.untrusted);
  biq::write_csv(out_dir / "test.csv", cell.test);
  if (cell.data.flip_mask) {
    std::ostringstream mask;
    mask << "untrusted_row,flipped\n";
    for (std::size_t i = 0; i < cell.data.flip_mask->size(); ++i) {
      mask << i << ',' << static_cast<int>((*cell.data.flip_mask)[i]) << '\n';
    }
    write_text(out_dir / "flip_mask.csv", mask.str());
  }
  write_text(out_dir / "config_echo.txt", biq::describe_grid(grid));
  std::printf("synthesized cell: p=%g noise=%s seed=%llu -> |D_T|=%lld |D_U|=%lld |test|=%lld\n",
              grid.p_values.front(), grid.noise_levels.front().c_str(),
              static_cast<unsigned long long>(grid.seeds.front()),
              static_cast<long long>(cell.data.trusted.size()),
              static_cast<long long>(cell.data.untrusted.size()),
              static_cast<long long>(cell.test.size()));
  return 0;
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, int workers,
            std::uint64_t seed_base, const std::string& formats_arg) {
  auto grid = biq::grid_from_config(biq::parse_config_file(config_path), seed_base);
  if (workers > 0) grid.workers = workers;

  std::vector<std::string> formats;
  {
    std::string item;
    std::istringstream in(formats_arg);
    while (std::getline(in, item, ',')) {
      if (!item.empty()) formats.push_back(item);
    }
  }

  const auto records = biq::run_grid(grid);
  fs::create_directories(out_dir);
  write_text(out_dir / "config_echo.txt", biq::describe_grid(grid));
  const auto paths = biq::emit_report(records, out_dir, formats);

  std::size_t ok = 0, na = 0, failed = 0;
  for (const auto& r : records) {
    if (r.status == "ok") ++ok;
    else if (r.status == "not-applicable") ++na;
    else ++failed;
  }
  std::printf("grid complete: %zu records (%zu ok, %zu not-applicable, %zu failed)\n",
              records.size(), ok, na, failed);
  for (const auto& r : records) {
    if (r.status == "failed") {
      std::fprintf(stderr, "failed: method=%s p=%g noise=%s seed=%llu: %s\n", r.method.c_str(),
                   r.p, r.noise.c_str(), static_cast<unsigned long long>(r.seed),
                   r.detail.c_str());
    }
  }
  for (const auto& p : paths) std::printf("wrote %s\n", p.string().c_str());
  return failed > 0 ? 1 : 0;
}

int cmd_report(const fs::path& in_path, const fs::path& out_dir, const std::string& formats_arg) {
  std::ifstream in(in_path);
  if (!in) throw biq::ConfigError("report: cannot open " + in_path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const auto records = biq::records_from_json(buf.str());

  std::vector<std::string> formats;
  std::string item;
  std::istringstream fin(formats_arg);
  while (std::getline(fin, item, ',')) {
    if (!item.empty()) formats.push_back(item);
  }
  const auto paths = biq::emit_report(records, out_dir, formats);
  for (const auto& p : paths) std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

int cmd_inspect_t(const fs::path& config_path, std::uint64_t seed_base) {
  const auto grid = biq::grid_from_config(biq::parse_config_file(config_path), seed_base);
  biq::LabeledSet clean;
  const biq::SynthesizedCell cell = first_cell(grid, clean);
  if (cell.data.untrusted.empty()) {
    std::fprintf(stderr, "inspect-t: the first cell has no untrusted data (p=1)\n");
    return 2;
  }

  const auto untrusted_model = biq::fit_weighted(
      cell.data.untrusted, biq::SampleWeights::ones(cell.data.untrusted.size()), grid.train);

  const auto spec = biq::CorruptionSpec::parse(grid.noise_levels.front(), clean.class_count(),
                                               clean.dim(), 0);
  std::printf("cell: p=%g noise=%s seed=%llu\n", grid.p_values.front(),
              grid.noise_levels.front().c_str(),
              static_cast<unsigned long long>(grid.seeds.front()));

  if (const auto* car = std::get_if<biq::CarSpec>(&spec.kind)) {
    print_matrix("true T (car):",
                 biq::car_matrix(clean.class_count(), car->rho).entries());
  } else if (const auto* ar = std::get_if<biq::ArSpec>(&spec.kind)) {
    print_matrix("true T (ar):", ar->matrix);
  } else {
    std::printf("true T: n/a (instance-dependent or masking corruption)\n");
  }

  const auto anchors = biq::find_anchors(untrusted_model, cell.data.untrusted);
  print_matrix("anchor-point estimate:",
               biq::estimate_T_anchor(untrusted_model, anchors).entries());
  if (!cell.data.trusted.empty()) {
    print_matrix("trusted-set estimate:",
                 biq::estimate_T_trusted(untrusted_model, cell.data.trusted).entries());
  } else {
    std::printf("trusted-set estimate: n/a (p=0)\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"biquality-learning benchmark harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", in_path, formats = "csv,json";
  int workers = 0;
  std::uint64_t seed_base = 0;

  auto* synth = app.add_subcommand("synthesize", "write one synthesized (p, noise, seed) cell");
  synth->add_option("--config", config_path, "key = value grid config")->required();
  synth->add_option("--out", out_dir, "output directory");
  synth->add_option("--seed-base", seed_base, "offset added to every seed");

  auto* run = app.add_subcommand("run", "run the experiment grid and emit reports");
  run->add_option("--config", config_path, "key = value grid config")->required();
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--workers", workers, "worker threads (overrides config)");
  run->add_option("--seed-base", seed_base, "offset added to every seed");
  run->add_option("--formats", formats, "comma list: csv,json");

  auto* report = app.add_subcommand("report", "regenerate reports from results.json");
  report->add_option("--in", in_path, "results.json path")->required();
  report->add_option("--out", out_dir, "output directory");
  report->add_option("--formats", formats, "comma list: csv,json");

  auto* inspect = app.add_subcommand("inspect-t", "print estimated vs true transition matrices");
  inspect->add_option("--config", config_path, "key = value grid config")->required();
  inspect->add_option("--seed-base", seed_base, "offset added to every seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synthesize(config_path, out_dir, seed_base);
    if (run->parsed()) return cmd_run(config_path, out_dir, workers, seed_base, formats);
    if (report->parsed()) return cmd_report(in_path, out_dir, formats);
    if (inspect->parsed()) return cmd_inspect_t(config_path, seed_base);
  } catch (const biq::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
