#pragma once

// Experiment orchestration: a resumable work queue over (config, split)
// runs, Pareto selection over per-config means, and the report tables
// behind the paper-style figures.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/betavae.hpp"
#include "comporth/corpus.hpp"
#include "comporth/disent.hpp"
#include "comporth/error.hpp"
#include "comporth/evaluator.hpp"
#include "comporth/splits.hpp"

namespace comporth {

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct ExperimentPlan {
  std::vector<double> betas{1, 4, 32};
  std::vector<int> latent_sizes{16, 32};
  std::vector<double> learning_rates{1e-4};
  std::vector<std::string> split_keys;  // "<family>__<key>"
  int batch_size = 64;
  int max_epochs = 200;
  std::string recon_loss = "bernoulli";
  double val_fraction = 0.1;  // inner held-out fold of left_in
  uint64_t seed = 1;
  int workers = 2;
  int mi_bins = 20;
  long mi_max_samples = 8000;

  nlohmann::json to_json() const {
    return {{"betas", betas},
            {"latent_sizes", latent_sizes},
            {"learning_rates", learning_rates},
            {"split_keys", split_keys},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"recon_loss", recon_loss},
            {"val_fraction", val_fraction},
            {"seed", seed},
            {"workers", workers},
            {"mi_bins", mi_bins},
            {"mi_max_samples", mi_max_samples}};
  }

  static ExperimentPlan from_json(const nlohmann::json& j) {
    ExperimentPlan p;
    p.betas = j.value("betas", p.betas);
    p.latent_sizes = j.value("latent_sizes", p.latent_sizes);
    p.learning_rates = j.value("learning_rates", p.learning_rates);
    p.split_keys = j.value("split_keys", p.split_keys);
    p.batch_size = j.value("batch_size", p.batch_size);
    p.max_epochs = j.value("max_epochs", p.max_epochs);
    p.recon_loss = j.value("recon_loss", p.recon_loss);
    p.val_fraction = j.value("val_fraction", p.val_fraction);
    p.seed = j.value("seed", p.seed);
    p.workers = j.value("workers", p.workers);
    p.mi_bins = j.value("mi_bins", p.mi_bins);
    p.mi_max_samples = j.value("mi_max_samples", p.mi_max_samples);
    return p;
  }

  // The hash scopes an output directory; workers is execution detail and
  // stays out of it.
  std::string plan_hash() const {
    nlohmann::json j = to_json();
    j.erase("workers");
    return hex64(fnv1a64(j.dump()));
  }

  long config_count() const {
    return static_cast<long>(betas.size() * latent_sizes.size() * learning_rates.size());
  }

  // The full published search space: beta 2^0..2^7, latent 2^3..2^7,
  // lr 1e-4..1e-2. 120 configurations.
  static ExperimentPlan paper_grid() {
    ExperimentPlan p;
    p.betas.clear();
    for (int i = 0; i <= 7; ++i) p.betas.push_back(static_cast<double>(1 << i));
    p.latent_sizes = {8, 16, 32, 64, 128};
    p.learning_rates = {1e-4, 1e-3, 1e-2};
    p.max_epochs = 1000;
    return p;
  }

  // Reduced desk-scale sweep; the defaults above ({1,4,32} x {16,32} x
  // {1e-4}) are this plan.
  static ExperimentPlan desk_default() { return ExperimentPlan{}; }
};

struct RunRecord {
  std::string run_id;
  VaeConfig config;
  std::string split_family;
  std::string split_key;  // full "<family>__<key>"
  bool ok = false;
  std::string error;
  int epochs_run = 0;
  double final_train_loss = 0;
  double val_loss = -1;
  double left_out_recon_loss = 0;
  double left_out_accuracy = 0;  // mean target probability
  double left_out_top1 = 0;
  double mig_surface = 0, mir_surface = 0;
  double mig_comp = 0, mir_comp = 0;
  double wall_seconds = 0;

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"config", config.to_json()},
            {"split_family", split_family},
            {"split_key", split_key},
            {"ok", ok},
            {"error", error},
            {"epochs_run", epochs_run},
            {"final_train_loss", final_train_loss},
            {"val_loss", val_loss},
            {"left_out_recon_loss", left_out_recon_loss},
            {"left_out_accuracy", left_out_accuracy},
            {"left_out_top1", left_out_top1},
            {"mig_surface", mig_surface},
            {"mir_surface", mir_surface},
            {"mig_comp", mig_comp},
            {"mir_comp", mir_comp},
            {"wall_seconds", wall_seconds}};
  }

  static RunRecord from_json(const nlohmann::json& j) {
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.config = VaeConfig::from_json(j.at("config"));
    r.split_family = j.at("split_family").get<std::string>();
    r.split_key = j.at("split_key").get<std::string>();
    r.ok = j.value("ok", false);
    r.error = j.value("error", "");
    r.epochs_run = j.value("epochs_run", 0);
    r.final_train_loss = j.value("final_train_loss", 0.0);
    r.val_loss = j.value("val_loss", -1.0);
    r.left_out_recon_loss = j.value("left_out_recon_loss", 0.0);
    r.left_out_accuracy = j.value("left_out_accuracy", 0.0);
    r.left_out_top1 = j.value("left_out_top1", 0.0);
    r.mig_surface = j.value("mig_surface", 0.0);
    r.mir_surface = j.value("mir_surface", 0.0);
    r.mig_comp = j.value("mig_comp", 0.0);
    r.mir_comp = j.value("mir_comp", 0.0);
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  }

  std::string config_label() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "beta=%g|latent=%d|lr=%g", config.beta, config.latent_size,
                  config.learning_rate);
    return buf;
  }
};

// Pure hash of (config, split key, plan seed); doubles as the run seed.
inline std::string run_id_for(double beta, int latent, double lr, int batch_size, int max_epochs,
                              const std::string& recon_loss, const std::string& split_key,
                              uint64_t seed) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "beta=%g|latent=%d|lr=%g|bs=%d|me=%d|rl=%s|split=%s|seed=%llu",
                beta, latent, lr, batch_size, max_epochs, recon_loss.c_str(), split_key.c_str(),
                static_cast<unsigned long long>(seed));
  return hex64(fnv1a64(buf));
}

namespace detail {

// Deterministic shuffled prefix, shared across runs of a plan.
inline std::vector<long> sampled_ids(const std::vector<long>& ids, long max_n, uint64_t seed) {
  if (static_cast<long>(ids.size()) <= max_n) return ids;
  std::vector<long> copy = ids;
  CounterRng rng(seed);
  rng.shuffle(copy);
  copy.resize(static_cast<size_t>(max_n));
  std::sort(copy.begin(), copy.end());
  return copy;
}

}  // namespace detail

struct RunContext {
  const ImageStore* store = nullptr;
  const std::vector<ManifestRow>* manifest = nullptr;
  const std::map<std::string, SplitSpec>* splits = nullptr;  // by "<family>__<key>"
  const Evaluator<float>* evaluator = nullptr;
  std::vector<char> alphabet{'A', 'B'};
};

template <typename T>
Tensor<float> encode_means(const BetaVae<T>& model, const ImageStore& store,
                           const std::vector<long>& ids) {
  const long L = model.config().latent_size;
  Tensor<float> mu({static_cast<long>(ids.size()), L});
  for (size_t off = 0; off < ids.size(); off += 128) {
    const size_t n = std::min<size_t>(128, ids.size() - off);
    Tensor<T> batch = BetaVae<T>::make_batch(store, ids, off, n);
    LatentCode code = model.encode(batch);
    std::copy(code.mu.v.begin(), code.mu.v.end(), mu.data() + static_cast<long>(off) * L);
  }
  return mu;
}

// Trains one (config, split) run and fills every metric of the record.
inline RunRecord execute_run(const ExperimentPlan& plan, const RunContext& ctx, VaeConfig cfg,
                             const std::string& split_key, const std::string& ckpt_path) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.run_id = run_id_for(cfg.beta, cfg.latent_size, cfg.learning_rate, plan.batch_size,
                          plan.max_epochs, plan.recon_loss, split_key, plan.seed);
  rec.split_key = split_key;
  const SplitSpec& split = ctx.splits->at(split_key);
  rec.split_family = split.family;

  cfg.batch_size = plan.batch_size;
  cfg.max_epochs = plan.max_epochs;
  cfg.recon_loss = plan.recon_loss;
  cfg.seed = fnv1a64(rec.run_id);
  rec.config = cfg;

  // inner fold: trailing val_fraction of a seeded shuffle of left_in
  std::vector<long> pool = split.left_in;
  CounterRng fold_rng(hash_counter(cfg.seed, 0xF01D));
  fold_rng.shuffle(pool);
  const size_t n_val = static_cast<size_t>(static_cast<double>(pool.size()) * plan.val_fraction);
  std::vector<long> val_ids(pool.end() - static_cast<long>(n_val), pool.end());
  pool.resize(pool.size() - n_val);

  BetaVae<float> model(cfg, ctx.store->canvas_height, ctx.store->canvas_width);
  model.train(*ctx.store, pool, val_ids);
  rec.epochs_run = static_cast<int>(model.history().size());
  rec.final_train_loss = model.history().back().total;
  rec.val_loss = model.history().back().val_total;

  rec.left_out_recon_loss = model.recon_loss(*ctx.store, split.left_out);

  // behavioral score on the left-out set
  {
    double prob_sum = 0, top1_sum = 0;
    const std::vector<long>& ids = split.left_out;
    for (size_t off = 0; off < ids.size(); off += 64) {
      const size_t n = std::min<size_t>(64, ids.size() - off);
      Tensor<float> batch = BetaVae<float>::make_batch(*ctx.store, ids, off, n);
      Tensor<float> recon = model.reconstruct(batch);
      std::vector<int> targets(n);
      for (size_t i = 0; i < n; ++i)
        targets[i] = (*ctx.manifest)[static_cast<size_t>(ids[off + i])].word_index;
      auto scores = ctx.evaluator->score(recon, targets);
      prob_sum += scores.mean_target_prob * static_cast<double>(n);
      top1_sum += scores.top1_accuracy * static_cast<double>(n);
    }
    rec.left_out_accuracy = prob_sum / static_cast<double>(ids.size());
    rec.left_out_top1 = top1_sum / static_cast<double>(ids.size());
  }

  // neural metrics, both factor presets
  {
    std::vector<long> all_ids(ctx.manifest->size());
    for (size_t i = 0; i < all_ids.size(); ++i) all_ids[i] = static_cast<long>(i);
    const std::vector<long> surf_ids =
        detail::sampled_ids(all_ids, plan.mi_max_samples, hash_counter(plan.seed, 0x5EED));
    Tensor<float> mu = encode_means(model, *ctx.store, surf_ids);
    MIMatrix surf = mi_matrix(mu, FactorSet::surface(*ctx.manifest, surf_ids), plan.mi_bins);
    rec.mig_surface = mig(surf);
    rec.mir_surface = mir(surf);

    int max_len = 0;
    for (const ManifestRow& r : *ctx.manifest) max_len = std::max(max_len, r.length);
    std::vector<long> long_ids;
    for (const ManifestRow& r : *ctx.manifest)
      if (r.length == max_len) long_ids.push_back(r.id);
    if (max_len >= 2) {
      const std::vector<long> comp_ids =
          detail::sampled_ids(long_ids, plan.mi_max_samples, hash_counter(plan.seed, 0xC0DE));
      Tensor<float> mu_c = encode_means(model, *ctx.store, comp_ids);
      MIMatrix comp = mi_matrix(
          mu_c, FactorSet::compositional(*ctx.manifest, comp_ids, max_len, ctx.alphabet),
          plan.mi_bins);
      rec.mig_comp = mig(comp);
      rec.mir_comp = mir(comp);
    }
  }

  model.save(ckpt_path);
  rec.ok = true;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// Runs the whole grid on a small work queue; completed run ids are
// skipped, so a rerun of a finished plan trains nothing.
inline std::vector<RunRecord> run_grid(const ExperimentPlan& plan, const RunContext& ctx,
                                       const std::string& out_root, bool verbose = false) {
  namespace fs = std::filesystem;
  const fs::path plan_dir = fs::path(out_root) / plan.plan_hash();
  fs::create_directories(plan_dir / "runs");
  {
    std::ofstream os(plan_dir / "plan.json", std::ios::binary);
    os << plan.to_json().dump(2) << "\n";
  }

  struct Job {
    VaeConfig cfg;
    std::string split_key;
  };
  std::vector<Job> jobs;
  for (double beta : plan.betas)
    for (int latent : plan.latent_sizes)
      for (double lr : plan.learning_rates)
        for (const std::string& key : plan.split_keys) {
          VaeConfig cfg;
          cfg.beta = beta;
          cfg.latent_size = latent;
          cfg.learning_rate = lr;
          jobs.push_back({cfg, key});
        }

  std::vector<RunRecord> records(jobs.size());
  std::atomic<size_t> next{0};
  const int workers = std::max(1, plan.workers);
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      const std::string run_id =
          run_id_for(job.cfg.beta, job.cfg.latent_size, job.cfg.learning_rate, plan.batch_size,
                     plan.max_epochs, plan.recon_loss, job.split_key, plan.seed);
      const fs::path run_dir = plan_dir / "runs" / run_id;
      const fs::path record_path = run_dir / "record.json";
      if (fs::exists(record_path)) {
        std::ifstream is(record_path, std::ios::binary);
        records[i] = RunRecord::from_json(nlohmann::json::parse(is));
        if (verbose) std::fprintf(stderr, "[grid] %s cached\n", run_id.c_str());
        continue;
      }
      fs::create_directories(run_dir);
      if (verbose)
        std::fprintf(stderr, "[grid] %s start %s %s\n", run_id.c_str(),
                     job.split_key.c_str(),
                     (std::string("beta=") + std::to_string(job.cfg.beta)).c_str());
      RunRecord rec;
      try {
        rec = execute_run(plan, ctx, job.cfg, job.split_key, (run_dir / "model.ckpt").string());
      } catch (const std::exception& e) {
        rec.run_id = run_id;
        rec.split_key = job.split_key;
        rec.config = job.cfg;
        rec.ok = false;
        rec.error = e.what();
      }
      std::ofstream os(record_path, std::ios::binary);
      os << rec.to_json().dump(2) << "\n";
      records[i] = rec;
      if (verbose)
        std::fprintf(stderr, "[grid] %s done ok=%d acc=%.3f\n", run_id.c_str(), rec.ok,
                     rec.left_out_accuracy);
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return records;
}

// Per-config means of (left-out reconstruction loss, surface MIR), then
// the non-dominated subset. Returns config labels on the front.
inline std::set<std::string> select_pareto(const std::vector<RunRecord>& records) {
  std::map<std::string, std::pair<double, long>> loss_acc;
  std::map<std::string, std::pair<double, long>> mir_acc;
  for (const RunRecord& r : records) {
    if (!r.ok) continue;
    auto& la = loss_acc[r.config_label()];
    la.first += r.left_out_recon_loss;
    la.second += 1;
    auto& ma = mir_acc[r.config_label()];
    ma.first += r.mir_surface;
    ma.second += 1;
  }
  if (loss_acc.empty()) return {};
  std::vector<std::string> labels;
  std::vector<std::array<double, 2>> points;
  for (const auto& [label, la] : loss_acc) {
    labels.push_back(label);
    points.push_back({la.first / la.second,
                      mir_acc.at(label).first / mir_acc.at(label).second});
  }
  std::set<std::string> front;
  for (size_t idx : pareto_front(points)) front.insert(labels[idx]);
  return front;
}

constexpr double kChanceLevel = 1.0 / 62.0;

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

struct MeanSem {
  double mean = 0, sem = 0;
  long n = 0;
};

inline MeanSem mean_sem(const std::vector<double>& xs) {
  MeanSem out;
  out.n = static_cast<long>(xs.size());
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(out.n);
  if (out.n > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.sem = std::sqrt(ss / static_cast<double>(out.n - 1)) /
              std::sqrt(static_cast<double>(out.n));
  }
  return out;
}

}  // namespace detail

// CSV tables + figure data. Averages follow the Pareto-front models;
// every file is a pure function of the records.
inline void write_reports(const std::vector<RunRecord>& records, const std::string& out_dir,
                          double chance = kChanceLevel) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::set<std::string> pareto = select_pareto(records);

  std::vector<const RunRecord*> ok;
  for (const RunRecord& r : records)
    if (r.ok) ok.push_back(&r);
  std::vector<const RunRecord*> front;
  for (const RunRecord* r : ok)
    if (pareto.count(r->config_label())) front.push_back(r);

  // Fig 3 data: per-family, per-key accuracy means over front models.
  for (const std::string& family : {"spatial", "length", "compositional"}) {
    std::map<std::string, std::vector<const RunRecord*>> by_key;
    for (const RunRecord* r : front)
      if (r->split_family == family) by_key[r->split_key].push_back(r);
    std::ofstream os(fs::path(out_dir) / ("fig3_" + family + ".csv"), std::ios::binary);
    os << "family,key,n_models,mean_accuracy,sem_accuracy,mean_top1,mean_recon_loss,chance\n";
    for (const auto& [key, rs] : by_key) {
      std::vector<double> acc, top1, loss;
      for (const RunRecord* r : rs) {
        acc.push_back(r->left_out_accuracy);
        top1.push_back(r->left_out_top1);
        loss.push_back(r->left_out_recon_loss);
      }
      const auto a = detail::mean_sem(acc), t = detail::mean_sem(top1), l = detail::mean_sem(loss);
      os << family << "," << key << "," << rs.size() << "," << detail::fmt(a.mean) << ","
         << detail::fmt(a.sem) << "," << detail::fmt(t.mean) << "," << detail::fmt(l.mean) << ","
         << detail::fmt(chance) << "\n";
    }
  }

  // Fig 2A data: loss vs surface MIR per config.
  {
    std::map<std::string, std::vector<const RunRecord*>> by_cfg;
    for (const RunRecord* r : ok) by_cfg[r->config_label()].push_back(r);
    std::ofstream os(fs::path(out_dir) / "fig2a.csv", std::ios::binary);
    os << "beta,latent_size,learning_rate,n_runs,mean_recon_loss,mean_mir_surface,pareto\n";
    for (const auto& [label, rs] : by_cfg) {
      std::vector<double> loss, mirv;
      for (const RunRecord* r : rs) {
        loss.push_back(r->left_out_recon_loss);
        mirv.push_back(r->mir_surface);
      }
      const RunRecord* r0 = rs.front();
      char head[96];
      std::snprintf(head, sizeof(head), "%g,%d,%g", r0->config.beta, r0->config.latent_size,
                    r0->config.learning_rate);
      os << head << "," << rs.size() << "," << detail::fmt(detail::mean_sem(loss).mean) << ","
         << detail::fmt(detail::mean_sem(mirv).mean) << "," << (pareto.count(label) ? 1 : 0)
         << "\n";
    }
  }

  // Fig A.5 data: per-model per-compositional-split MIR vs accuracy.
  {
    std::vector<const RunRecord*> comp;
    for (const RunRecord* r : ok)
      if (r->split_family == "compositional") comp.push_back(r);
    std::ofstream os(fs::path(out_dir) / "figA5_points.csv", std::ios::binary);
    os << "beta,latent_size,learning_rate,split_key,mir,accuracy,pareto\n";
    std::vector<double> xs, ys, xs_front, ys_front;
    std::map<std::string, std::vector<double>> per_model_acc, per_model_mir;
    for (const RunRecord* r : comp) {
      char head[96];
      std::snprintf(head, sizeof(head), "%g,%d,%g", r->config.beta, r->config.latent_size,
                    r->config.learning_rate);
      os << head << "," << r->split_key << "," << detail::fmt(r->mir_comp) << ","
         << detail::fmt(r->left_out_accuracy) << "," << (pareto.count(r->config_label()) ? 1 : 0)
         << "\n";
      xs.push_back(r->mir_comp);
      ys.push_back(r->left_out_accuracy);
      if (pareto.count(r->config_label())) {
        xs_front.push_back(r->mir_comp);
        ys_front.push_back(r->left_out_accuracy);
      }
      per_model_acc[r->config_label()].push_back(r->left_out_accuracy);
      per_model_mir[r->config_label()].push_back(r->mir_comp);
    }

    nlohmann::json summary;
    summary["chance"] = chance;
    nlohmann::json models = nlohmann::json::array();
    for (const auto& [label, accs] : per_model_acc) {
      const auto a = detail::mean_sem(accs);
      const auto m = detail::mean_sem(per_model_mir.at(label));
      models.push_back({{"config", label},
                        {"n_splits", a.n},
                        {"mean_accuracy", a.mean},
                        {"sem_accuracy", a.sem},
                        {"mean_mir", m.mean},
                        {"sem_mir", m.sem},
                        {"pareto", pareto.count(label) > 0}});
    }
    summary["models"] = models;

    auto fit_and_corr = [](const std::vector<double>& x, const std::vector<double>& y,
                           uint64_t seed) -> nlohmann::json {
      if (x.size() < 2) return nullptr;
      double mx = 0, my = 0;
      for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
      }
      mx /= static_cast<double>(x.size());
      my /= static_cast<double>(x.size());
      double sxx = 0, sxy = 0;
      for (size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
      }
      if (sxx <= 0) return nullptr;
      const double slope = sxy / sxx;
      nlohmann::json out{{"n", x.size()}, {"slope", slope}, {"intercept", my - slope * mx}};
      if (x.size() >= 3) {
        try {
          PearsonResult pr = pearson_corr(x, y, 10000, seed);
          out["rho"] = pr.rho;
          out["p_value"] = pr.p_value;
          return out;
        } catch (const ConfigError&) {
        }
      }
      out["rho"] = nullptr;
      out["p_value"] = nullptr;
      return out;
    };
    summary["fit_all_models"] = fit_and_corr(xs, ys, 0xA5);
    summary["fit_pareto_models"] = fit_and_corr(xs_front, ys_front, 0xA5F);

    // both orders for the overall mean accuracy over front models
    {
      std::vector<double> model_means;
      std::vector<double> all_points;
      for (const auto& [label, accs] : per_model_acc) {
        if (!pareto.count(label)) continue;
        model_means.push_back(detail::mean_sem(accs).mean);
        for (double a : accs) all_points.push_back(a);
      }
      summary["mean_accuracy_models_first"] = detail::mean_sem(model_means).mean;
      summary["mean_accuracy_splits_first"] = detail::mean_sem(all_points).mean;
    }
    std::ofstream js(fs::path(out_dir) / "figA5_summary.json", std::ios::binary);
    js << summary.dump(2) << "\n";
  }
}

}  // namespace comporth
