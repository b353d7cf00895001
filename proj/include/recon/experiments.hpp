#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "recon/checkpoint.hpp"
#include "recon/csv.hpp"
#include "recon/dataset.hpp"
#include "recon/evaluator.hpp"
#include "recon/hash.hpp"
#include "recon/reconstructor.hpp"
#include "recon/svg.hpp"
#include "recon/trainer.hpp"

namespace recon {

enum class DataKind { synthetic, cifar10, cifar100 };

inline const char* data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::cifar10: return "cifar10";
    case DataKind::cifar100: return "cifar100";
    default: return "synthetic";
  }
}

struct DataSpec {
  DataKind kind = DataKind::synthetic;
  SyntheticSpec synth;
  std::filesystem::path path;  // CIFAR batch file or directory
  std::optional<int> limit_per_class;
  std::optional<int> class_subset;     // keep only the first C classes
  std::filesystem::path test_path;     // optional held-out split (CIFAR)
};

struct ExperimentSpec {
  std::string run_id = "run";
  std::filesystem::path out_dir = "out";
  DataSpec data;
  std::vector<Index> hidden = {100};
  TrainConfig train;
  std::vector<ReconConfig> recon_grid;  // entries with m == 0 resolve to 2n
  MatchOptions eval;
  bool score_by_good_count = true;  // research-mode scorer; false ranks by final loss
  Precision precision = Precision::f64;
  int workers = 1;
  Index pairs_k = 10;

  void validate() const {
    if (run_id.empty()) throw ConfigError("experiment: run_id must not be empty");
    if (recon_grid.empty()) throw ConfigError("experiment: reconstruction grid is empty");
    train.validate();
  }
};

struct StageStatus {
  std::string name;
  std::string status;  // "ok" | "failed" | "skipped"
  std::string message;
};

struct ExperimentResult {
  std::filesystem::path run_dir;
  bool ok = false;
  long n = 0;
  double train_error = std::numeric_limits<double>::quiet_NaN();
  double test_error = std::numeric_limits<double>::quiet_NaN();
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();
  Index good_count = -1;
  double best_recon_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<StageStatus> stages;
};

namespace detail {

inline nlohmann::json spec_to_json(const ExperimentSpec& spec) {
  nlohmann::json j;
  j["run_id"] = spec.run_id;
  j["precision"] = precision_name(spec.precision);
  j["workers"] = spec.workers;
  j["pairs_k"] = spec.pairs_k;
  j["score_by_good_count"] = spec.score_by_good_count;
  nlohmann::json d;
  d["kind"] = data_kind_name(spec.data.kind);
  if (spec.data.kind == DataKind::synthetic) {
    d["class_count"] = spec.data.synth.class_count;
    d["per_class"] = spec.data.synth.per_class;
    d["dims"] = spec.data.synth.dims;
    d["cluster_separation"] = spec.data.synth.cluster_separation;
    d["noise_scale"] = spec.data.synth.noise_scale;
    d["seed"] = spec.data.synth.seed;
  } else {
    d["path"] = spec.data.path.string();
    if (spec.data.limit_per_class) d["limit_per_class"] = *spec.data.limit_per_class;
    if (spec.data.class_subset) d["class_subset"] = *spec.data.class_subset;
    if (!spec.data.test_path.empty()) d["test_path"] = spec.data.test_path.string();
  }
  j["data"] = d;
  j["hidden"] = spec.hidden;
  nlohmann::json t;
  t["learning_rate"] = spec.train.learning_rate;
  t["epochs"] = spec.train.epochs;
  t["weight_decay"] = spec.train.weight_decay;
  t["checkpoint_every"] = spec.train.checkpoint_every;
  t["seed"] = spec.train.seed;
  t["margin_epsilon"] = spec.train.margin_epsilon;
  t["kkt_in_report"] = spec.train.kkt_in_report;
  t["init_kind"] = init_kind_name(spec.train.init.kind);
  t["init_first_layer_exponent"] = spec.train.init.first_layer_exponent;
  t["init_seed"] = spec.train.init.seed;
  j["train"] = t;
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& rc : spec.recon_grid) {
    nlohmann::json g;
    g["m"] = rc.m;
    g["lambda_min"] = rc.lambda_min;
    g["sigma_x"] = rc.sigma_x;
    g["step_x"] = rc.opt.step_x;
    g["step_a"] = rc.opt.step_a;
    g["momentum"] = rc.opt.momentum;
    g["iterations"] = rc.opt.iterations;
    g["seed"] = rc.seed;
    grid.push_back(g);
  }
  j["recon_grid"] = grid;
  j["eval"] = {{"ssim_threshold", spec.eval.ssim_threshold},
               {"l2_threshold", spec.eval.l2_threshold}};
  return j;
}

inline std::string hash_file_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileFormatError("cannot hash missing artifact: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
  return buf;
}

template <typename Scalar>
Dataset<Scalar> load_data(const DataSpec& spec) {
  Dataset<Scalar> data;
  switch (spec.kind) {
    case DataKind::synthetic: data = make_synthetic<Scalar>(spec.synth); break;
    case DataKind::cifar10: data = load_cifar10<Scalar>(spec.path, spec.limit_per_class); break;
    case DataKind::cifar100: data = load_cifar100<Scalar>(spec.path, spec.limit_per_class); break;
  }
  if (spec.class_subset) data = take_classes(data, *spec.class_subset);
  data.validate();
  return data;
}

template <typename Scalar>
std::optional<Dataset<Scalar>> load_test_data(const DataSpec& spec) {
  if (spec.kind == DataKind::synthetic || spec.test_path.empty()) return std::nullopt;
  Dataset<Scalar> test = spec.kind == DataKind::cifar10
                             ? load_cifar10<Scalar>(spec.test_path, std::nullopt)
                             : load_cifar100<Scalar>(spec.test_path, std::nullopt);
  if (spec.class_subset) test = take_classes(test, *spec.class_subset);
  return test;
}

inline csv::Table search_summary_table(const std::vector<std::string>& errors,
                                       const std::vector<KeyValues>& configs,
                                       const std::vector<double>& scores) {
  csv::Table t;
  t.header = {"rank", "m",        "lambda_min", "sigma_x", "step_x", "step_a",
              "momentum", "iterations", "seed",     "score",   "error"};
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& kv = configs[i];
    t.add_row({csv::format_int(static_cast<long long>(i)), kv.get_string("m"),
               kv.get_string("lambda_min"), kv.get_string("sigma_x"), kv.get_string("step_x"),
               kv.get_string("step_a"), kv.get_string("momentum"), kv.get_string("iterations"),
               kv.get_string("seed"), csv::format_double(scores[i]), errors[i]});
  }
  return t;
}

template <typename Scalar>
ExperimentResult run_experiment_t(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  spec.validate();
  ExperimentResult result;
  result.run_dir = spec.out_dir / spec.run_id;
  fs::create_directories(result.run_dir);

  nlohmann::json manifest;
  manifest["run_id"] = spec.run_id;
  manifest["spec"] = spec_to_json(spec);
  nlohmann::json artifacts = nlohmann::json::object();
  auto note_artifact = [&](const std::string& name, const std::string& stage) {
    artifacts[name] = {{"fnv1a64", hash_file_hex(result.run_dir / name)}, {"stage", stage}};
  };
  auto finish = [&](bool ok) {
    manifest["artifacts"] = artifacts;
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : result.stages)
      stages.push_back({{"name", s.name}, {"status", s.status}, {"message", s.message}});
    manifest["stages"] = stages;
    manifest["status"] = ok ? "ok" : "failed";
    std::ofstream out(result.run_dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    result.ok = ok;
    return result;
  };
  auto fail_stage = [&](const std::string& stage, const std::string& message) {
    result.stages.push_back({stage, "failed", message});
    return finish(false);
  };
  auto ok_stage = [&](const std::string& stage) {
    result.stages.push_back({stage, "ok", ""});
  };

  // data
  Dataset<Scalar> data;
  std::optional<Dataset<Scalar>> test;
  try {
    data = load_data<Scalar>(spec.data);
    test = load_test_data<Scalar>(spec.data);
    result.n = data.n();
    ok_stage("data");
  } catch (const std::exception& e) {
    return fail_stage("data", e.what());
  }

  // train
  MlpParams<Scalar> params;
  try {
    std::vector<Index> dims;
    dims.push_back(data.dim());
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
    dims.push_back(data.class_count);
    params = init_params<Scalar>(spec.train.init, dims);
    auto [trained, report] = train(std::move(params), data, spec.train,
                                   test ? &*test : nullptr);
    params = std::move(trained);
    save_checkpoint(result.run_dir / "checkpoint.bin", params);
    csv::write_file(result.run_dir / "train_report.csv", report.to_csv());
    note_artifact("checkpoint.bin", "train");
    note_artifact("train_report.csv", "train");
    const auto& last = report.final_checkpoint();
    result.train_error = last.train_error;
    result.test_error = last.test_error;
    result.kkt_residual = last.kkt_residual;
    ok_stage("train");
  } catch (const std::exception& e) {
    return fail_stage("train", e.what());
  }

  // reconstruct
  ReconState<Scalar> best_state;
  try {
    std::vector<ReconConfig> grid = spec.recon_grid;
    for (auto& rc : grid)
      if (rc.m == 0) rc.m = 2 * data.n();
    std::function<double(const ReconState<Scalar>&)> scorer;
    if (spec.score_by_good_count) scorer = good_count_scorer(data, params, spec.eval);
    auto ranked = hyperparam_search(params, grid, scorer, spec.workers);
    std::vector<KeyValues> echoes;
    std::vector<double> scores;
    std::vector<std::string> errors;
    for (const auto& r : ranked) {
      echoes.push_back(r.config.echo());
      scores.push_back(r.score);
      errors.push_back(r.error);
    }
    csv::write_file(result.run_dir / "search_summary.csv",
                    search_summary_table(errors, echoes, scores));
    note_artifact("search_summary.csv", "reconstruct");
    if (!ranked.front().state)
      throw DivergenceError("every reconstruction run failed; best error: " +
                            ranked.front().error);
    best_state = std::move(*ranked.front().state);
    result.best_recon_loss = best_state.loss_trace.empty()
                                 ? std::numeric_limits<double>::quiet_NaN()
                                 : best_state.loss_trace.back();
    save_recon_state(result.run_dir / "recon_state.bin", best_state,
                     ranked.front().config.echo());
    note_artifact("recon_state.bin", "reconstruct");
    if (data.dim() == kCifarPixels) {
      std::vector<PairCell> cells;
      for (Index i = 0; i < best_state.m(); ++i) {
        PairCell cell;
        Vector<Scalar> c = best_state.candidates.row(i).transpose();
        cell.top = to_image<Scalar>(c);
        cell.bottom = Image::zeros(0, 0);
        cell.caption = std::to_string(best_state.labels(i));
        cells.push_back(std::move(cell));
      }
      write_ppm(result.run_dir / "recon_candidates.ppm",
                render_pair_grid(cells, 16, 1));
      note_artifact("recon_candidates.ppm", "reconstruct");
    }
    ok_stage("reconstruct");
  } catch (const std::exception& e) {
    return fail_stage("reconstruct", e.what());
  }

  // evaluate
  try {
    MatchOptions opts = spec.eval;
    opts.workers = spec.workers;
    const MatchReport report = match(data, best_state, params, opts);
    result.good_count = report.good_count;
    csv::Table scatter = scatter_data(report);
    csv::write_file(result.run_dir / "match_report.csv", scatter);
    csv::write_file(result.run_dir / "scatter.csv", scatter);
    note_artifact("match_report.csv", "evaluate");
    note_artifact("scatter.csv", "evaluate");
    std::vector<ScatterPoint> pts;
    for (const auto& row : report.rows)
      pts.push_back({row.margin, row.similarity, row.label});
    ScatterStyle style;
    style.threshold = report.threshold * (report.metric == SimilarityMetric::neg_l2 ? -1.0 : 1.0);
    style.y_label = report.metric == SimilarityMetric::ssim ? "best SSIM" : "-relative L2";
    style.title = spec.run_id;
    std::ofstream svg_out(result.run_dir / "scatter.svg", std::ios::binary);
    svg_out << scatter_svg(pts, style);
    svg_out.close();
    note_artifact("scatter.svg", "evaluate");
    if (data.dim() == kCifarPixels) {
      const auto pairs =
          ranked_pairs(report, std::min<Index>(spec.pairs_k, data.n()), /*per_class=*/true);
      write_ppm(result.run_dir / "ranked_pairs.ppm",
                render_ranked_pairs(pairs, data, best_state));
      note_artifact("ranked_pairs.ppm", "evaluate");
    }
    ok_stage("evaluate");
  } catch (const std::exception& e) {
    return fail_stage("evaluate", e.what());
  }

  return finish(true);
}

}  // namespace detail

// Full pipeline: load data, train, reconstruct over the hyperparameter
// grid, evaluate, and persist everything with a manifest. Stage failures
// are recorded in the manifest and stop the pipeline; partial artifacts
// stay on disk. Rerunning the same spec reproduces identical CSVs.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.precision == Precision::f32) return detail::run_experiment_t<float>(spec);
  return detail::run_experiment_t<double>(spec);
}

// One grid axis set: either class-count x per-class cells (optionally at a
// fixed total sample budget), or a weight-decay sweep with an optional
// small-first-layer-init baseline cell.
struct GridAxes {
  std::vector<int> class_counts;
  std::vector<int> per_class_counts;
  std::optional<int> fixed_total;  // per_class = fixed_total / C
  std::vector<double> weight_decays;
  bool include_small_init_baseline = false;
};

struct GridCell {
  std::string tag;
  ExperimentSpec spec;
};

namespace detail {

inline std::string format_wd_tag(double wd) {
  std::string s = csv::format_double(wd);
  for (auto& c : s)
    if (c == '.' || c == '+') c = 'p';
  return s;
}

inline void reseed_cell(ExperimentSpec& spec, std::size_t cell_index) {
  spec.train.init.seed = mix_seed(spec.train.init.seed, 1000 + cell_index);
  spec.train.seed = mix_seed(spec.train.seed, 2000 + cell_index);
  if (spec.data.kind == DataKind::synthetic)
    spec.data.synth.seed = mix_seed(spec.data.synth.seed, 3000 + cell_index);
  for (std::size_t g = 0; g < spec.recon_grid.size(); ++g)
    spec.recon_grid[g].seed = mix_seed(spec.recon_grid[g].seed, 4000 + cell_index * 131 + g);
}

}  // namespace detail

inline std::vector<GridCell> expand_grid(const ExperimentSpec& base, const GridAxes& axes) {
  std::vector<GridCell> cells;
  if (!axes.weight_decays.empty()) {
    for (double wd : axes.weight_decays) {
      GridCell cell{"wd" + detail::format_wd_tag(wd), base};
      cell.spec.train.weight_decay = wd;
      cell.spec.train.init.kind = InitKind::standard;
      cells.push_back(std::move(cell));
    }
    if (axes.include_small_init_baseline) {
      GridCell cell{"smallinit", base};
      cell.spec.train.weight_decay = 0.0;
      cell.spec.train.init.kind = InitKind::small_first_layer;
      cells.push_back(std::move(cell));
    }
  } else if (!axes.class_counts.empty()) {
    std::vector<int> per_class = axes.per_class_counts;
    if (axes.fixed_total) per_class = {0};  // resolved per class count
    if (per_class.empty()) throw ConfigError("grid: per-class axis is empty");
    for (int c : axes.class_counts) {
      for (int pc : per_class) {
        const int resolved_pc = axes.fixed_total ? *axes.fixed_total / c : pc;
        if (resolved_pc < 1) throw ConfigError("grid: per-class count resolves below 1");
        GridCell cell{"C" + std::to_string(c) + "_pc" + std::to_string(resolved_pc), base};
        if (base.data.kind == DataKind::synthetic) {
          cell.spec.data.synth.class_count = c;
          cell.spec.data.synth.per_class = resolved_pc;
        } else {
          cell.spec.data.class_subset = c;
          cell.spec.data.limit_per_class = resolved_pc;
        }
        cells.push_back(std::move(cell));
      }
    }
  } else {
    throw ConfigError("grid: no axes given");
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].spec.run_id = base.run_id + "_" + cells[i].tag;
    detail::reseed_cell(cells[i].spec, i);
  }
  return cells;
}

struct GridResult {
  csv::Table summary;
  std::vector<ExperimentResult> cells;
  bool ok = false;
};

// Runs one experiment per grid cell (concurrently up to `workers`), then
// writes a summary CSV next to the cell directories. Cell failures are
// recorded in the summary and do not stop the grid.
inline GridResult run_grid(const ExperimentSpec& base, const GridAxes& axes, int workers = 1) {
  const std::vector<GridCell> cells = expand_grid(base, axes);
  GridResult result;
  result.cells.resize(cells.size());

  ExperimentSpec base_inner = base;
  std::atomic<std::size_t> next{0};
  auto run_cell = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      ExperimentSpec spec = cells[i].spec;
      if (workers > 1) spec.workers = 1;
      try {
        result.cells[i] = run_experiment(spec);
      } catch (const std::exception& e) {
        result.cells[i].ok = false;
        result.cells[i].stages.push_back({"spec", "failed", e.what()});
      }
    }
  };
  const int thread_count = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  if (thread_count == 1) {
    run_cell();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < thread_count; ++t) pool.emplace_back(run_cell);
    for (auto& t : pool) t.join();
  }

  result.summary.header = {"cell",      "classes",     "per_class",  "weight_decay",
                           "init",      "n",           "train_error", "test_error",
                           "good_count", "kkt_residual", "status"};
  bool all_ok = true;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& spec = cells[i].spec;
    const auto& cell = result.cells[i];
    all_ok = all_ok && cell.ok;
    const int classes = spec.data.kind == DataKind::synthetic
                            ? spec.data.synth.class_count
                            : spec.data.class_subset.value_or(spec.data.kind == DataKind::cifar100 ? 100 : 10);
    const int per_class = spec.data.kind == DataKind::synthetic
                              ? spec.data.synth.per_class
                              : spec.data.limit_per_class.value_or(-1);
    result.summary.add_row(
        {cells[i].tag, csv::format_int(classes), csv::format_int(per_class),
         csv::format_double(spec.train.weight_decay), init_kind_name(spec.train.init.kind),
         csv::format_int(cell.n), csv::format_double(cell.train_error),
         csv::format_double(cell.test_error),
         cell.good_count < 0 ? "" : csv::format_int(cell.good_count),
         csv::format_double(cell.kkt_residual), cell.ok ? "ok" : "failed"});
  }
  std::filesystem::create_directories(base_inner.out_dir);
  csv::write_file(base_inner.out_dir / (base.run_id + "_grid_summary.csv"), result.summary);
  result.ok = all_ok;
  return result;
}

// Renders a persisted scatter CSV (schema from scatter_data) as an SVG.
inline void emit_plot(const std::filesystem::path& scatter_csv,
                      const std::filesystem::path& svg_path, ScatterStyle style = {}) {
  const csv::Table table = csv::read_file(scatter_csv);
  const std::vector<std::string> expected = {"margin", "similarity", "class", "sample_index"};
  if (table.header != expected)
    throw ShapeError("scatter CSV schema mismatch in " + scatter_csv.string());
  std::vector<ScatterPoint> pts;
  for (const auto& row : table.rows) {
    ScatterPoint p;
    p.x = std::stod(row[0]);
    p.y = std::stod(row[1]);
    p.cls = std::stoi(row[2]);
    pts.push_back(p);
  }
  std::ofstream out(svg_path, std::ios::binary);
  if (!out) throw FileFormatError("cannot open for writing: " + svg_path.string());
  out << scatter_svg(pts, style);
}

}  // namespace recon
