// comporth command-line driver: dataset generation, splits, training,
// evaluation, metrics and reports. Outputs are deterministic for a given
// plan and seed.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/betavae.hpp"
#include "comporth/corpus.hpp"
#include "comporth/disent.hpp"
#include "comporth/evaluator.hpp"
#include "comporth/orchestrator.hpp"
#include "comporth/perturb.hpp"
#include "comporth/renderer.hpp"
#include "comporth/splits.hpp"

namespace fs = std::filesystem;
using namespace comporth;

namespace {

struct GridFile {
  FactorGrid grid = FactorGrid::defaults();
  Canvas canvas;
};

GridFile load_grid(const std::string& path) {
  GridFile g;
  if (path.empty()) return g;
  std::ifstream is(path);
  if (!is) throw IoError("cannot open grid file: " + path);
  nlohmann::json j = nlohmann::json::parse(is);
  if (j.contains("alphabet")) {
    g.grid.alphabet.clear();
    for (const auto& s : j.at("alphabet")) g.grid.alphabet.push_back(s.get<std::string>().at(0));
  }
  g.grid.max_length = j.value("max_length", g.grid.max_length);
  g.grid.x_shifts = j.value("x_shifts", g.grid.x_shifts);
  g.grid.y_shifts = j.value("y_shifts", g.grid.y_shifts);
  g.grid.spacings = j.value("spacings", g.grid.spacings);
  g.canvas.height = j.value("canvas_h", g.canvas.height);
  g.canvas.width = j.value("canvas_w", g.canvas.width);
  g.grid.validate();
  return g;
}

struct Dataset {
  ImageStore store;
  std::vector<ManifestRow> manifest;
  std::vector<char> alphabet;
};

Dataset load_dataset(const std::string& dir) {
  Dataset d;
  d.store = read_store((fs::path(dir) / "images.bin").string());
  d.manifest = read_manifest_jsonl((fs::path(dir) / "manifest.jsonl").string());
  if (d.store.count != static_cast<long>(d.manifest.size()))
    throw IoError("store and manifest disagree on image count in " + dir);
  std::set<char> letters;
  for (const ManifestRow& r : d.manifest)
    for (char c : r.word) letters.insert(c);
  d.alphabet.assign(letters.begin(), letters.end());
  return d;
}

std::map<std::string, SplitSpec> load_splits(const std::string& dir) {
  std::map<std::string, SplitSpec> out;
  if (!fs::exists(dir)) throw IoError("split directory does not exist: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& p : files) {
    SplitSpec s = read_split_json(p.string());
    out[s.family + "__" + s.key] = std::move(s);
  }
  if (out.empty()) throw IoError("no split files in " + dir);
  return out;
}

std::string default_out_root() {
  const char* env = std::getenv("COMPORTH_OUT");
  return env ? env : "out";
}

std::vector<int> labels_from_manifest(const std::vector<ManifestRow>& manifest) {
  std::vector<int> labels;
  labels.reserve(manifest.size());
  for (const ManifestRow& r : manifest) labels.push_back(r.word_index);
  return labels;
}

int cmd_generate(const std::string& grid_path, const std::string& out_dir,
                 const std::string& pbm_dir, int threads) {
  const GridFile g = load_grid(grid_path);
  const GlyphSet glyphs = GlyphSet::builtin();
  glyphs.validate(g.grid.alphabet);
  fs::create_directories(out_dir);
  const auto manifest = build_manifest(g.grid);
  const ImageStore store = generate_dataset(enumerate_assignments(g.grid), glyphs, g.canvas, threads);
  write_store(store, (fs::path(out_dir) / "images.bin").string());
  write_manifest_jsonl(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
  if (!pbm_dir.empty()) {
    fs::create_directories(pbm_dir);
    for (long i = 0; i < store.count; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "%06ld.pbm", i);
      write_pbm(store.image(i), (fs::path(pbm_dir) / name).string());
    }
  }
  std::cout << "generated " << store.count << " images (" << store.canvas_height << "x"
            << store.canvas_width << ") into " << out_dir << "\n";
  return 0;
}

int cmd_split(const std::string& data_dir, const std::string& family, std::string out_dir) {
  const Dataset d = load_dataset(data_dir);
  if (out_dir.empty()) out_dir = (fs::path(data_dir) / "splits").string();
  fs::create_directories(out_dir);
  std::vector<SplitSpec> splits;
  if (family == "all" || family == "spatial") {
    auto s = spatial_splits(d.manifest);
    splits.insert(splits.end(), s.begin(), s.end());
  }
  if (family == "all" || family == "length") {
    auto s = length_splits(d.manifest);
    splits.insert(splits.end(), s.begin(), s.end());
  }
  if (family == "all" || family == "compositional") {
    auto s = compositional_splits(d.manifest);
    splits.insert(splits.end(), s.begin(), s.end());
  }
  if (splits.empty()) throw ConfigError("unknown split family: " + family);
  for (const SplitSpec& s : splits) write_split_json(s, (fs::path(out_dir) / s.filename()).string());
  std::cout << "wrote " << splits.size() << " splits into " << out_dir << "\n";
  return 0;
}

int cmd_train_evaluator(const std::string& data_dir, const std::string& out_path, uint64_t seed,
                        int max_epochs, double lr, double target_acc) {
  const Dataset d = load_dataset(data_dir);
  int n_classes = 0;
  for (const ManifestRow& r : d.manifest) n_classes = std::max(n_classes, r.word_index + 1);
  Evaluator<float> ev(n_classes, d.store.canvas_height, d.store.canvas_width, seed);
  EvaluatorConfig cfg;
  cfg.seed = seed;
  cfg.max_epochs = max_epochs;
  cfg.learning_rate = lr;
  cfg.target_accuracy = target_acc;
  std::vector<long> ids(d.manifest.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<long>(i);
  const auto res = ev.train(d.store, ids, labels_from_manifest(d.manifest), cfg);
  ev.save(out_path);
  std::cout << "evaluator: top-1 " << res.final_accuracy << " after " << res.epochs_run
            << " epochs -> " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& split_path, const std::string& out_path, double val_fraction) {
  const Dataset d = load_dataset(data_dir);
  VaeConfig cfg;
  if (!config_path.empty()) {
    std::ifstream is(config_path);
    if (!is) throw IoError("cannot open config: " + config_path);
    cfg = VaeConfig::from_json(nlohmann::json::parse(is));
  }
  std::vector<long> train_ids;
  if (!split_path.empty()) {
    train_ids = read_split_json(split_path).left_in;
  } else {
    train_ids.resize(d.manifest.size());
    for (size_t i = 0; i < train_ids.size(); ++i) train_ids[i] = static_cast<long>(i);
  }
  std::vector<long> val_ids;
  if (val_fraction > 0) {
    CounterRng rng(hash_counter(cfg.seed, 0xF01D));
    rng.shuffle(train_ids);
    const size_t n_val = static_cast<size_t>(static_cast<double>(train_ids.size()) * val_fraction);
    val_ids.assign(train_ids.end() - static_cast<long>(n_val), train_ids.end());
    train_ids.resize(train_ids.size() - n_val);
  }
  BetaVae<float> model(cfg, d.store.canvas_height, d.store.canvas_width);
  const auto history = model.train(d.store, train_ids, val_ids);
  model.save(out_path);
  std::cout << "trained " << history.size() << " epochs, final loss "
            << history.back().total << " -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& evaluator_path, const std::string& vae_path,
             const std::string& split_path, const std::string& data_dir,
             const std::string& report_path) {
  const Dataset d = load_dataset(data_dir);
  const Evaluator<float> ev = Evaluator<float>::load(evaluator_path);
  const BetaVae<float> model = BetaVae<float>::load(vae_path);
  const SplitSpec split = read_split_json(split_path);
  const auto words = enumerate_words(d.alphabet, [&] {
    int m = 0;
    for (const ManifestRow& r : d.manifest) m = std::max(m, r.length);
    return m;
  }());

  std::ofstream os(report_path, std::ios::binary);
  if (!os) throw IoError("cannot open report: " + report_path);
  os << "image_id,word,family,key,target_prob,top1_word\n";
  double mean = 0;
  const std::vector<long>& ids = split.left_out;
  for (size_t off = 0; off < ids.size(); off += 64) {
    const size_t n = std::min<size_t>(64, ids.size() - off);
    Tensor<float> batch = BetaVae<float>::make_batch(d.store, ids, off, n);
    Tensor<float> recon = model.reconstruct(batch);
    std::vector<int> targets(n);
    for (size_t i = 0; i < n; ++i)
      targets[i] = d.manifest[static_cast<size_t>(ids[off + i])].word_index;
    const auto scores = ev.score(recon, targets);
    for (size_t i = 0; i < n; ++i) {
      const ManifestRow& r = d.manifest[static_cast<size_t>(ids[off + i])];
      char prob[32];
      std::snprintf(prob, sizeof(prob), "%.6f", scores.target_prob[i]);
      os << r.id << "," << r.word << "," << split.family << "," << split.key << "," << prob << ","
         << words[static_cast<size_t>(scores.top1[i])].letters << "\n";
      mean += scores.target_prob[i];
    }
  }
  std::cout << "mean target probability " << mean / static_cast<double>(ids.size()) << " over "
            << ids.size() << " left-out images -> " << report_path << "\n";
  return 0;
}

int cmd_metrics(const std::string& vae_path, const std::string& data_dir,
                const std::string& factors, const std::string& out_path, int bins,
                long max_samples, double threshold) {
  const Dataset d = load_dataset(data_dir);
  const BetaVae<float> model = BetaVae<float>::load(vae_path);
  std::vector<long> ids;
  FactorSet fs_set;
  if (factors == "surface") {
    std::vector<long> all(d.manifest.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<long>(i);
    ids = detail::sampled_ids(all, max_samples, hash_counter(1, 0x5EED));
    fs_set = FactorSet::surface(d.manifest, ids);
  } else if (factors == "compositional") {
    int max_len = 0;
    for (const ManifestRow& r : d.manifest) max_len = std::max(max_len, r.length);
    std::vector<long> long_ids;
    for (const ManifestRow& r : d.manifest)
      if (r.length == max_len) long_ids.push_back(r.id);
    ids = detail::sampled_ids(long_ids, max_samples, hash_counter(1, 0xC0DE));
    fs_set = FactorSet::compositional(d.manifest, ids, max_len, d.alphabet);
  } else {
    throw ConfigError("unknown factor preset: " + factors);
  }
  const Tensor<float> mu = encode_means(model, d.store, ids);
  const MIMatrix M = mi_matrix(mu, fs_set, bins);
  double hmax = 0;
  for (double h : M.factor_entropy) hmax = std::max(hmax, h);
  const double thr = threshold >= 0 ? threshold : 0.01 * hmax;

  nlohmann::json out{{"preset", factors},      {"bins", bins},
                     {"n_samples", ids.size()}, {"activity_threshold", thr},
                     {"mi_matrix", M.to_json()}, {"mig", mig(M)},
                     {"mir", mir(M, thr)}};
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw IoError("cannot open metrics output: " + out_path);
  os << out.dump(2) << "\n";
  std::cout << "MIG " << out["mig"] << "  MIR " << out["mir"] << " (" << factors << ") -> "
            << out_path << "\n";
  return 0;
}

std::vector<RunRecord> load_records(const std::string& plan_dir) {
  std::vector<RunRecord> records;
  const fs::path runs = fs::path(plan_dir) / "runs";
  if (!fs::exists(runs)) throw IoError("no runs directory under " + plan_dir);
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(runs)) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    const fs::path rec = dir / "record.json";
    if (!fs::exists(rec)) continue;
    std::ifstream is(rec, std::ios::binary);
    records.push_back(RunRecord::from_json(nlohmann::json::parse(is)));
  }
  if (records.empty()) throw IoError("no run records under " + plan_dir);
  return records;
}

int cmd_grid(const std::string& plan_path, const std::string& data_dir,
             const std::string& splits_dir, const std::string& evaluator_path,
             std::string out_root, int workers, bool verbose) {
  const Dataset d = load_dataset(data_dir);
  ExperimentPlan plan;
  if (!plan_path.empty()) {
    std::ifstream is(plan_path);
    if (!is) throw IoError("cannot open plan: " + plan_path);
    plan = ExperimentPlan::from_json(nlohmann::json::parse(is));
  }
  const auto splits =
      load_splits(splits_dir.empty() ? (fs::path(data_dir) / "splits").string() : splits_dir);
  if (plan.split_keys.empty())
    for (const auto& [key, s] : splits) plan.split_keys.push_back(key);
  if (workers > 0) plan.workers = workers;
  if (out_root.empty()) out_root = default_out_root();
  const Evaluator<float> ev = Evaluator<float>::load(evaluator_path);

  RunContext ctx;
  ctx.store = &d.store;
  ctx.manifest = &d.manifest;
  ctx.splits = &splits;
  ctx.evaluator = &ev;
  ctx.alphabet = d.alphabet;
  const auto records = run_grid(plan, ctx, out_root, verbose);
  long ok = 0;
  for (const RunRecord& r : records) ok += r.ok;
  std::cout << ok << "/" << records.size() << " runs ok under " << out_root << "/"
            << plan.plan_hash() << "\n";
  return ok == static_cast<long>(records.size()) ? 0 : 1;
}

int cmd_pareto(const std::string& plan_dir, const std::string& out_path) {
  const auto records = load_records(plan_dir);
  const auto front = select_pareto(records);
  nlohmann::json out{{"pareto_configs", std::vector<std::string>(front.begin(), front.end())}};
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream os(out_path, std::ios::binary);
    os << out.dump(2) << "\n";
    std::cout << front.size() << " configs on the front -> " << out_path << "\n";
  }
  return 0;
}

int cmd_perturb(const std::string& vae_path, const std::string& data_dir,
                const std::string& units_arg, int samples, const std::string& out_dir,
                bool additive) {
  const Dataset d = load_dataset(data_dir);
  const BetaVae<float> model = BetaVae<float>::load(vae_path);
  std::vector<int> units;
  if (units_arg == "all") {
    for (int j = 0; j < model.config().latent_size; ++j) units.push_back(j);
  } else {
    std::stringstream ss(units_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) units.push_back(std::stoi(tok));
  }
  std::vector<long> ids;
  const long stride = std::max<long>(1, d.store.count / samples);
  for (long i = 0; i < d.store.count && static_cast<int>(ids.size()) < samples; i += stride)
    ids.push_back(i);
  fs::create_directories(out_dir);
  const auto mode = additive ? PerturbMode::kAdditive : PerturbMode::kAbsolute;
  for (int j : units) {
    const TraversalGrid grid = perturb_unit(model, d.store, ids, j, default_levels(), mode);
    char name[32];
    std::snprintf(name, sizeof(name), "unit_%02d.pgm", j);
    emit_grid(grid, (fs::path(out_dir) / name).string());
  }
  std::cout << units.size() << " panels (" << ids.size() << " samples x "
            << default_levels().size() << " levels) -> " << out_dir << "\n";
  return 0;
}

int cmd_report(const std::string& plan_dir, const std::string& out_dir) {
  const auto records = load_records(plan_dir);
  write_reports(records, out_dir);
  std::cout << "reports for " << records.size() << " runs -> " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CompOrth benchmark pipeline"};
  app.require_subcommand(1);

  // generate
  std::string grid_path, out_dir, pbm_dir;
  int threads = 0;
  auto* generate = app.add_subcommand("generate", "render the factor grid into an image store");
  generate->add_option("--grid", grid_path, "grid JSON (defaults to the standard grid)");
  generate->add_option("--out-dir", out_dir, "output directory")->required();
  generate->add_option("--pbm-dir", pbm_dir, "also dump per-image PBM files here");
  generate->add_option("--threads", threads, "render threads (0 = hardware)");

  // split
  std::string split_data_dir, split_family = "all", split_out;
  auto* split = app.add_subcommand("split", "emit train/test split files");
  split->add_option("--data-dir", split_data_dir)->required();
  split->add_option("--family", split_family, "spatial|length|compositional|all");
  split->add_option("--out-dir", split_out, "defaults to <data-dir>/splits");

  // train-evaluator
  std::string te_data_dir, te_out;
  uint64_t te_seed = 7;
  int te_epochs = 60;
  double te_lr = 1e-3, te_target = 0.995;
  auto* train_eval = app.add_subcommand("train-evaluator", "train the word classifier on originals");
  train_eval->add_option("--data-dir", te_data_dir)->required();
  train_eval->add_option("--out", te_out)->required();
  train_eval->add_option("--seed", te_seed);
  train_eval->add_option("--epochs", te_epochs);
  train_eval->add_option("--lr", te_lr);
  train_eval->add_option("--target-acc", te_target);

  // train
  std::string tr_config, tr_data_dir, tr_split, tr_out;
  double tr_val_fraction = 0.1;
  auto* train = app.add_subcommand("train", "train one beta-VAE on a split's left-in set");
  train->add_option("--config", tr_config, "VaeConfig JSON");
  train->add_option("--data-dir", tr_data_dir)->required();
  train->add_option("--split", tr_split, "split file (defaults to the full dataset)");
  train->add_option("--out", tr_out)->required();
  train->add_option("--val-fraction", tr_val_fraction);

  // grid
  std::string g_plan, g_data_dir, g_splits_dir, g_eval, g_out_root;
  int g_workers = 0;
  bool g_verbose = false;
  auto* grid = app.add_subcommand("grid", "run the hyperparameter sweep (resumable)");
  grid->add_option("--plan", g_plan, "ExperimentPlan JSON");
  grid->add_option("--data-dir", g_data_dir)->required();
  grid->add_option("--splits-dir", g_splits_dir, "defaults to <data-dir>/splits");
  grid->add_option("--evaluator", g_eval)->required();
  grid->add_option("--out-root", g_out_root, "defaults to $COMPORTH_OUT or ./out");
  grid->add_option("--workers", g_workers);
  grid->add_flag("--verbose", g_verbose);

  // eval
  std::string e_eval, e_vae, e_split, e_data_dir, e_report;
  auto* eval = app.add_subcommand("eval", "score a model's left-out reconstructions");
  eval->add_option("--evaluator", e_eval)->required();
  eval->add_option("--vae", e_vae)->required();
  eval->add_option("--split", e_split)->required();
  eval->add_option("--data-dir", e_data_dir)->required();
  eval->add_option("--report", e_report)->required();

  // metrics
  std::string m_vae, m_data_dir, m_factors = "surface", m_out;
  int m_bins = 20;
  long m_max_samples = 8000;
  double m_threshold = -1;
  auto* metrics = app.add_subcommand("metrics", "MI matrix, MIG and MIR for a checkpoint");
  metrics->add_option("--vae", m_vae)->required();
  metrics->add_option("--data-dir", m_data_dir)->required();
  metrics->add_option("--factors", m_factors, "surface|compositional");
  metrics->add_option("--out", m_out)->required();
  metrics->add_option("--bins", m_bins);
  metrics->add_option("--max-samples", m_max_samples);
  metrics->add_option("--activity-threshold", m_threshold);

  // pareto
  std::string p_plan_dir, p_out;
  auto* pareto = app.add_subcommand("pareto", "Pareto-front configs from run records");
  pareto->add_option("--plan-dir", p_plan_dir, "<out-root>/<plan-hash>")->required();
  pareto->add_option("--out", p_out);

  // perturb
  std::string pb_vae, pb_data_dir, pb_units = "all", pb_out;
  int pb_samples = 6;
  bool pb_additive = false;
  auto* perturb = app.add_subcommand("perturb", "latent traversal panels");
  perturb->add_option("--vae", pb_vae)->required();
  perturb->add_option("--data-dir", pb_data_dir)->required();
  perturb->add_option("--units", pb_units, "all or comma-separated unit indices");
  perturb->add_option("--samples", pb_samples);
  perturb->add_option("--out-dir", pb_out)->required();
  perturb->add_flag("--additive", pb_additive, "perturb as a delta on mu instead of setting it");

  // report
  std::string r_plan_dir, r_out;
  auto* report = app.add_subcommand("report", "figure-data tables from run records");
  report->add_option("--plan-dir", r_plan_dir, "<out-root>/<plan-hash>")->required();
  report->add_option("--out-dir", r_out)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(grid_path, out_dir, pbm_dir, threads);
    if (split->parsed()) return cmd_split(split_data_dir, split_family, split_out);
    if (train_eval->parsed())
      return cmd_train_evaluator(te_data_dir, te_out, te_seed, te_epochs, te_lr, te_target);
    if (train->parsed()) return cmd_train(tr_config, tr_data_dir, tr_split, tr_out, tr_val_fraction);
    if (grid->parsed())
      return cmd_grid(g_plan, g_data_dir, g_splits_dir, g_eval, g_out_root, g_workers, g_verbose);
    if (eval->parsed()) return cmd_eval(e_eval, e_vae, e_split, e_data_dir, e_report);
    if (metrics->parsed())
      return cmd_metrics(m_vae, m_data_dir, m_factors, m_out, m_bins, m_max_samples, m_threshold);
    if (pareto->parsed()) return cmd_pareto(p_plan_dir, p_out);
    if (perturb->parsed())
      return cmd_perturb(pb_vae, pb_data_dir, pb_units, pb_samples, pb_out, pb_additive);
    if (report->parsed()) return cmd_report(r_plan_dir, r_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
