#include "comporth/orchestrator.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "comporth/corpus.hpp"
#include "comporth/renderer.hpp"
#include "comporth/splits.hpp"

namespace fs = std::filesystem;
using namespace comporth;

namespace {

struct TinyWorld {
  ImageStore store;
  std::vector<ManifestRow> manifest;
  std::map<std::string, SplitSpec> splits;
  Evaluator<float> evaluator{6, 32, 32, 3};
};

TinyWorld make_world() {
  FactorGrid grid = FactorGrid::defaults();
  grid.max_length = 2;
  grid.x_shifts = {-1, 0, 1};
  grid.y_shifts = {-1, 0, 1};
  grid.spacings = {0};
  TinyWorld w;
  w.store = generate_dataset(grid, GlyphSet::builtin(), Canvas{32, 32});
  w.manifest = build_manifest(grid);
  for (auto& s : length_splits(w.manifest)) w.splits[s.family + "__" + s.key] = s;
  for (auto& s : spatial_splits(w.manifest)) w.splits[s.family + "__" + s.key] = s;
  for (auto& s : compositional_splits(w.manifest)) w.splits[s.family + "__" + s.key] = s;

  std::vector<long> ids;
  std::vector<int> labels;
  for (const ManifestRow& r : w.manifest) {
    ids.push_back(r.id);
    labels.push_back(r.word_index);
  }
  EvaluatorConfig cfg;
  cfg.max_epochs = 150;
  cfg.seed = 3;
  w.evaluator.train(w.store, ids, labels, cfg);
  return w;
}

ExperimentPlan tiny_plan() {
  ExperimentPlan plan;
  plan.betas = {1.0};
  plan.latent_sizes = {8};
  plan.learning_rates = {1e-3};
  plan.split_keys = {"length__len1", "compositional__A@2"};
  plan.batch_size = 16;
  plan.max_epochs = 3;
  plan.seed = 11;
  plan.workers = 2;
  plan.mi_max_samples = 200;
  return plan;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

RunRecord fake_record(double beta, int latent, double lr, const std::string& family,
                      const std::string& key, double loss, double mir_s, double acc) {
  RunRecord r;
  r.config.beta = beta;
  r.config.latent_size = latent;
  r.config.learning_rate = lr;
  r.split_family = family;
  r.split_key = family + "__" + key;
  r.run_id = run_id_for(beta, latent, lr, 64, 10, "bernoulli", r.split_key, 1);
  r.ok = true;
  r.left_out_recon_loss = loss;
  r.mir_surface = mir_s;
  r.mir_comp = mir_s * 0.5;
  r.left_out_accuracy = acc;
  return r;
}

}  // namespace

TEST(RunIdTest, PureHashOfInputs) {
  const std::string a = run_id_for(4, 32, 1e-4, 64, 200, "bernoulli", "spatial__x+0y+0", 1);
  const std::string b = run_id_for(4, 32, 1e-4, 64, 200, "bernoulli", "spatial__x+0y+0", 1);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, run_id_for(4, 32, 1e-4, 64, 200, "bernoulli", "spatial__x+0y+0", 2));
  EXPECT_NE(a, run_id_for(8, 32, 1e-4, 64, 200, "bernoulli", "spatial__x+0y+0", 1));
  EXPECT_NE(a, run_id_for(4, 32, 1e-4, 64, 200, "bernoulli", "spatial__x+1y+0", 1));
  EXPECT_EQ(a.size(), 16u);
}

TEST(PlanTest, HashIgnoresWorkers) {
  ExperimentPlan p = tiny_plan();
  ExperimentPlan q = p;
  q.workers = 7;
  EXPECT_EQ(p.plan_hash(), q.plan_hash());
  q.max_epochs = 4;
  EXPECT_NE(p.plan_hash(), q.plan_hash());
}

TEST(PlanTest, JsonRoundTrip) {
  const ExperimentPlan p = tiny_plan();
  const ExperimentPlan q = ExperimentPlan::from_json(p.to_json());
  EXPECT_EQ(p.to_json(), q.to_json());
}

TEST(PlanTest, GridSizes) {
  EXPECT_EQ(ExperimentPlan::paper_grid().config_count(), 120);  // 8 x 5 x 3
  const ExperimentPlan desk = ExperimentPlan::desk_default();
  EXPECT_EQ(desk.config_count(), 6);  // {1,4,32} x {16,32} x {1e-4}
  EXPECT_EQ(desk.betas, (std::vector<double>{1, 4, 32}));
  EXPECT_EQ(desk.latent_sizes, (std::vector<int>{16, 32}));
  EXPECT_EQ(desk.learning_rates, (std::vector<double>{1e-4}));
}

TEST(SelectParetoTest, GroupsByConfigAndFindsFront) {
  std::vector<RunRecord> records;
  // config A: loss 1.0, mir 0.9 ; config B: loss 2.0, mir 0.95 ; config C: dominated
  records.push_back(fake_record(1, 8, 1e-3, "length", "len1", 1.0, 0.9, 0.5));
  records.push_back(fake_record(1, 8, 1e-3, "length", "len2", 1.0, 0.9, 0.5));
  records.push_back(fake_record(2, 8, 1e-3, "length", "len1", 2.0, 0.95, 0.5));
  records.push_back(fake_record(4, 8, 1e-3, "length", "len1", 1.5, 0.8, 0.5));
  RunRecord failed = fake_record(8, 8, 1e-3, "length", "len1", 0.0, 1.0, 0.5);
  failed.ok = false;  // must be ignored
  records.push_back(failed);

  const auto front = select_pareto(records);
  EXPECT_EQ(front.size(), 2u);
  EXPECT_TRUE(front.count("beta=1|latent=8|lr=0.001"));
  EXPECT_TRUE(front.count("beta=2|latent=8|lr=0.001"));
}

TEST(OrchestratorTest, TinyGridEndToEndAndResumable) {
  const TinyWorld world = make_world();
  RunContext ctx;
  ctx.store = &world.store;
  ctx.manifest = &world.manifest;
  ctx.splits = &world.splits;
  ctx.evaluator = &world.evaluator;

  const ExperimentPlan plan = tiny_plan();
  const std::string root = testing::TempDir() + "grid_out";
  fs::remove_all(root);
  const auto records = run_grid(plan, ctx, root);
  ASSERT_EQ(records.size(), 2u);
  for (const RunRecord& r : records) {
    EXPECT_TRUE(r.ok) << r.error;
    EXPECT_EQ(r.epochs_run, 3);
    EXPECT_GE(r.left_out_accuracy, 0.0);
    EXPECT_LE(r.left_out_accuracy, 1.0);
    EXPECT_GE(r.val_loss, 0.0);
    EXPECT_GT(r.left_out_recon_loss, 0.0);
    EXPECT_GE(r.mir_surface, 0.0);
    EXPECT_LE(r.mir_surface, 1.0);
    EXPECT_GT(r.wall_seconds, 0.0);
    EXPECT_TRUE(fs::exists(fs::path(root) / plan.plan_hash() / "runs" / r.run_id / "model.ckpt"));
  }

  // a rerun performs zero training steps: records come back bit-identical,
  // including wall times, because they are read from disk
  const auto again = run_grid(plan, ctx, root);
  ASSERT_EQ(again.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i)
    EXPECT_EQ(again[i].to_json().dump(), records[i].to_json().dump());
}

TEST(OrchestratorTest, FailedRunIsRecordedNotFatal) {
  const TinyWorld world = make_world();
  RunContext ctx;
  ctx.store = &world.store;
  ctx.manifest = &world.manifest;
  ctx.splits = &world.splits;
  ctx.evaluator = &world.evaluator;

  ExperimentPlan plan = tiny_plan();
  plan.split_keys = {"length__len1", "length__no_such_split"};
  const std::string root = testing::TempDir() + "grid_fail";
  fs::remove_all(root);
  const auto records = run_grid(plan, ctx, root);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_TRUE(records[0].ok);
  EXPECT_FALSE(records[1].ok);
  EXPECT_FALSE(records[1].error.empty());
}

TEST(ReportTest, EmitsDeterministicTables) {
  std::vector<RunRecord> records;
  for (const std::string& key : {"A@1", "A@2", "B@1"}) {
    records.push_back(fake_record(1, 8, 1e-3, "compositional", key, 1.0, 0.9, 0.4));
    records.push_back(fake_record(2, 8, 1e-3, "compositional", key, 2.0, 0.95, 0.3));
  }
  records.push_back(fake_record(1, 8, 1e-3, "length", "len1", 1.0, 0.9, 0.8));
  records.push_back(fake_record(1, 8, 1e-3, "spatial", "x+0y+0", 1.0, 0.9, 0.9));

  const std::string d1 = testing::TempDir() + "report_a";
  const std::string d2 = testing::TempDir() + "report_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  write_reports(records, d1);
  write_reports(records, d2);

  for (const std::string& name :
       {"fig3_spatial.csv", "fig3_length.csv", "fig3_compositional.csv", "fig2a.csv",
        "figA5_points.csv", "figA5_summary.json"}) {
    ASSERT_TRUE(fs::exists(fs::path(d1) / name)) << name;
    EXPECT_EQ(slurp(fs::path(d1) / name), slurp(fs::path(d2) / name)) << name;
  }

  // compositional table: one row per key plus header
  std::ifstream comp(fs::path(d1) / "fig3_compositional.csv");
  std::string line;
  int rows = 0;
  while (std::getline(comp, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4);  // header + 3 keys

  // chance level column is embedded
  const std::string table = slurp(fs::path(d1) / "fig3_compositional.csv");
  EXPECT_NE(table.find("0.016129"), std::string::npos);

  // summary carries correlation fields and both averaging orders
  const auto summary = nlohmann::json::parse(slurp(fs::path(d1) / "figA5_summary.json"));
  EXPECT_TRUE(summary.contains("fit_all_models"));
  EXPECT_TRUE(summary["fit_all_models"].contains("rho"));
  EXPECT_TRUE(summary["fit_all_models"].contains("p_value"));
  EXPECT_TRUE(summary.contains("mean_accuracy_models_first"));
  EXPECT_TRUE(summary.contains("mean_accuracy_splits_first"));
  EXPECT_TRUE(summary.contains("models"));
  for (const auto& m : summary["models"]) {
    EXPECT_TRUE(m.contains("mean_accuracy"));
    EXPECT_TRUE(m.contains("sem_accuracy"));
  }
}
