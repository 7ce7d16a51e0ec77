#pragma once

// The beta-VAE: 4-conv + 2-dense encoder, mirrored decoder with
// transposed convolutions, Bernoulli pixel likelihood (squared error as
// a config alternative) and a beta-weighted KL term. Forward/backward
// are wired explicitly; the graph is static.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/checkpoint.hpp"
#include "comporth/error.hpp"
#include "comporth/ops.hpp"
#include "comporth/optimizer.hpp"
#include "comporth/renderer.hpp"
#include "comporth/rng.hpp"
#include "comporth/tensor.hpp"

namespace comporth {

struct VaeConfig {
  int latent_size = 32;
  double beta = 4.0;
  double learning_rate = 1e-4;
  int batch_size = 64;
  int max_epochs = 1000;
  uint64_t seed = 1;
  std::string recon_loss = "bernoulli";  // or "squared"
  // Stop when the window-5 smoothed train loss improves by less than
  // 0.01% relative over 20 epochs.
  bool early_stop = true;
  int early_stop_window = 5;
  int early_stop_patience = 20;
  double early_stop_rel_tol = 1e-4;

  void validate() const {
    if (latent_size < 1) throw ConfigError("VaeConfig: latent_size < 1");
    if (beta < 0) throw ConfigError("VaeConfig: beta < 0");
    if (learning_rate <= 0) throw ConfigError("VaeConfig: learning_rate <= 0");
    if (batch_size < 1) throw ConfigError("VaeConfig: batch_size < 1");
    if (max_epochs < 1) throw ConfigError("VaeConfig: max_epochs < 1");
    if (recon_loss != "bernoulli" && recon_loss != "squared")
      throw ConfigError("VaeConfig: unknown recon_loss " + recon_loss);
  }

  nlohmann::json to_json() const {
    return {{"latent_size", latent_size},
            {"beta", beta},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"seed", seed},
            {"recon_loss", recon_loss},
            {"early_stop", early_stop},
            {"early_stop_window", early_stop_window},
            {"early_stop_patience", early_stop_patience},
            {"early_stop_rel_tol", early_stop_rel_tol}};
  }

  static VaeConfig from_json(const nlohmann::json& j) {
    VaeConfig c;
    c.latent_size = j.value("latent_size", c.latent_size);
    c.beta = j.value("beta", c.beta);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    c.recon_loss = j.value("recon_loss", c.recon_loss);
    c.early_stop = j.value("early_stop", c.early_stop);
    c.early_stop_window = j.value("early_stop_window", c.early_stop_window);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.early_stop_rel_tol = j.value("early_stop_rel_tol", c.early_stop_rel_tol);
    c.validate();
    return c;
  }

  // Fig 2B confirmation model.
  static VaeConfig confirmation() {
    VaeConfig c;
    c.latent_size = 32;
    c.beta = 4.0;
    c.learning_rate = 1e-4;
    return c;
  }
};

struct LatentCode {
  Tensor<float> mu;      // [N, L]
  Tensor<float> logvar;  // [N, L]
  Tensor<float> sample;  // [N, L]; equals mu in eval mode
};

struct ElboTerms {
  double total = 0;
  double recon = 0;
  double kl = 0;
};

// total = bce_sum(recon, image) + beta * gaussian_kl(mu, logvar)
template <typename T>
ElboTerms elbo_loss(const Tensor<T>& image, const Tensor<T>& recon, const Tensor<T>& mu,
                    const Tensor<T>& logvar, double beta, const std::string& recon_loss = "bernoulli") {
  ElboTerms t;
  t.recon = recon_loss == "squared" ? sse_sum(recon, image) : bce_sum(recon, image);
  t.kl = gaussian_kl(mu, logvar);
  t.total = t.recon + beta * t.kl;
  return t;
}

struct EpochStats {
  int epoch = 0;
  double total = 0;  // per-image means
  double recon = 0;
  double kl = 0;
  double val_total = -1;  // -1 when no validation fold was supplied

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"total", total}, {"recon", recon}, {"kl", kl},
            {"val_total", val_total}};
  }
};

constexpr double kLogvarClamp = 10.0;

template <typename T>
class BetaVae {
 public:
  BetaVae(VaeConfig cfg, int canvas_h, int canvas_w) : cfg_(cfg), h_(canvas_h), w_(canvas_w) {
    cfg_.validate();
    if (h_ % 16 != 0 || w_ % 16 != 0)
      throw ConfigError("BetaVae: canvas sides must be divisible by 16, got " +
                        std::to_string(h_) + "x" + std::to_string(w_));
    build_params();
  }

  const VaeConfig& config() const { return cfg_; }
  int canvas_height() const { return h_; }
  int canvas_width() const { return w_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const std::vector<EpochStats>& history() const { return history_; }

  // ---- forward pieces -------------------------------------------------

  struct Context {
    Tensor<T> x;                                  // [N,1,H,W]
    Tensor<T> c1, r1, c2, r2, c3, r3, c4, r4;     // encoder convs
    Tensor<T> flat, f1, rf1, stats;               // encoder dense
    Tensor<T> mu, logvar, logvar_c, eps, z;       // latent
    Tensor<T> d1, rd1, d2, rd2, d2m;              // decoder dense
    Tensor<T> t4, rt4, t3, rt3, t2, rt2, logits;  // decoder convT
  };

  // Populates ctx up to mu/logvar; z is left to the caller (sample or mu).
  void encode_forward(const Tensor<T>& x, Context& ctx) const {
    const long N = x.shape[0];
    if (x.shape != std::vector<long>{N, 1, h_, w_})
      throw ShapeError("encode: input " + shape_string(x.shape) + " vs canvas " +
                       std::to_string(h_) + "x" + std::to_string(w_));
    ctx.x = x;
    ctx.c1 = conv2d(ctx.x, p("enc.conv1.w"), p("enc.conv1.b"), 4, 2, 1);
    ctx.r1 = relu(ctx.c1);
    ctx.c2 = conv2d(ctx.r1, p("enc.conv2.w"), p("enc.conv2.b"), 4, 2, 1);
    ctx.r2 = relu(ctx.c2);
    ctx.c3 = conv2d(ctx.r2, p("enc.conv3.w"), p("enc.conv3.b"), 4, 2, 1);
    ctx.r3 = relu(ctx.c3);
    ctx.c4 = conv2d(ctx.r3, p("enc.conv4.w"), p("enc.conv4.b"), 4, 2, 1);
    ctx.r4 = relu(ctx.c4);
    ctx.flat = ctx.r4;
    ctx.flat.shape = {N, flat_dim()};
    ctx.f1 = dense(ctx.flat, p("enc.fc1.w"), p("enc.fc1.b"));
    ctx.rf1 = relu(ctx.f1);
    ctx.stats = dense(ctx.rf1, p("enc.out.w"), p("enc.out.b"));
    const long L = cfg_.latent_size;
    ctx.mu = Tensor<T>({N, L});
    ctx.logvar = Tensor<T>({N, L});
    ctx.logvar_c = Tensor<T>({N, L});
    for (long i = 0; i < N; ++i) {
      for (long j = 0; j < L; ++j) {
        ctx.mu[i * L + j] = ctx.stats[i * 2 * L + j];
        const T lv = ctx.stats[i * 2 * L + L + j];
        ctx.logvar[i * L + j] = lv;
        ctx.logvar_c[i * L + j] =
            std::clamp(lv, static_cast<T>(-kLogvarClamp), static_cast<T>(kLogvarClamp));
      }
    }
  }

  void decode_forward(const Tensor<T>& z, Context& ctx) const {
    const long N = z.shape[0];
    if (z.shape != std::vector<long>{N, static_cast<long>(cfg_.latent_size)})
      throw ShapeError("decode: z " + shape_string(z.shape) + " vs latent_size " +
                       std::to_string(cfg_.latent_size));
    ctx.z = z;
    ctx.d1 = dense(ctx.z, p("dec.fc1.w"), p("dec.fc1.b"));
    ctx.rd1 = relu(ctx.d1);
    ctx.d2 = dense(ctx.rd1, p("dec.fc2.w"), p("dec.fc2.b"));
    ctx.rd2 = relu(ctx.d2);
    ctx.d2m = ctx.rd2;
    ctx.d2m.shape = {N, 64, h_ / 16, w_ / 16};
    ctx.t4 = conv2d_transpose(ctx.d2m, p("dec.convt4.w"), p("dec.convt4.b"), 4, 2, 1);
    ctx.rt4 = relu(ctx.t4);
    ctx.t3 = conv2d_transpose(ctx.rt4, p("dec.convt3.w"), p("dec.convt3.b"), 4, 2, 1);
    ctx.rt3 = relu(ctx.t3);
    ctx.t2 = conv2d_transpose(ctx.rt3, p("dec.convt2.w"), p("dec.convt2.b"), 4, 2, 1);
    ctx.rt2 = relu(ctx.t2);
    ctx.logits = conv2d_transpose(ctx.rt2, p("dec.convt1.w"), p("dec.convt1.b"), 4, 2, 1);
  }

  // Deterministic eval-mode encoding (sample = mu).
  LatentCode encode(const Tensor<T>& images) const {
    Context ctx;
    encode_forward(images, ctx);
    LatentCode code;
    code.mu = ctx.mu.template cast<float>();
    code.logvar = ctx.logvar.template cast<float>();
    code.sample = code.mu;
    return code;
  }

  // Pixel probabilities for a latent batch.
  Tensor<T> decode(const Tensor<T>& z) const {
    Context ctx;
    decode_forward(z, ctx);
    return sigmoid(ctx.logits);
  }

  Tensor<T> reconstruct(const Tensor<T>& images) const {
    Context ctx;
    encode_forward(images, ctx);
    decode_forward(ctx.mu, ctx);
    return sigmoid(ctx.logits);
  }

  // ---- one training step ----------------------------------------------

  // Samples z with noise from `noise`, accumulates gradients for the whole
  // batch into the param store, and returns per-batch summed loss terms.
  ElboTerms forward_backward(const Tensor<T>& x, CounterRng& noise) {
    Context ctx;
    encode_forward(x, ctx);
    const long N = x.shape[0], L = cfg_.latent_size;
    ctx.eps = Tensor<T>({N, L});
    for (long i = 0; i < N * L; ++i) ctx.eps[i] = static_cast<T>(noise.next_normal());
    ctx.z = Tensor<T>({N, L});
    for (long i = 0; i < N * L; ++i)
      ctx.z[i] = ctx.mu[i] + std::exp(ctx.logvar_c[i] / T(2)) * ctx.eps[i];
    decode_forward(ctx.z, ctx);

    ElboTerms terms;
    Tensor<T> glogits;
    if (cfg_.recon_loss == "squared") {
      Tensor<T> probs = sigmoid(ctx.logits);
      Tensor<T> flat_x = ctx.x;
      flat_x.shape = probs.shape;
      terms.recon = sse_sum(probs, flat_x);
      glogits = sigmoid_grad(probs, sse_sum_grad(probs, flat_x));
    } else {
      Tensor<T> flat_x = ctx.x;
      flat_x.shape = ctx.logits.shape;
      terms.recon = sigmoid_bce_sum(ctx.logits, flat_x);
      glogits = sigmoid_bce_sum_grad(ctx.logits, flat_x);
    }
    terms.kl = gaussian_kl(ctx.mu, ctx.logvar_c);
    terms.total = terms.recon + cfg_.beta * terms.kl;

    backward(ctx, glogits);
    return terms;
  }

  // ---- training loop ----------------------------------------------------

  std::vector<EpochStats> train(const ImageStore& store, const std::vector<long>& train_ids,
                                const std::vector<long>& val_ids = {}) {
    if (train_ids.empty()) throw ConfigError("train: empty training set");
    AdamConfig adam{cfg_.learning_rate};
    CounterRng noise(hash_counter(cfg_.seed, 0xA11CE));
    CounterRng shuffler(hash_counter(cfg_.seed, 0x5AFE));
    std::vector<long> order = train_ids;
    history_.clear();

    for (int epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
      shuffler.shuffle(order);
      double sum_total = 0, sum_recon = 0, sum_kl = 0;
      for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg_.batch_size)) {
        const size_t n = std::min(static_cast<size_t>(cfg_.batch_size), order.size() - off);
        Tensor<T> batch = make_batch(store, order, off, n);
        params_.zero_grads();
        ElboTerms t = forward_backward(batch, noise);
        if (!std::isfinite(t.total))
          throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) +
                               " batch " + std::to_string(off / cfg_.batch_size));
        scale_grads(T(1) / static_cast<T>(n));
        adam_step(params_, adam);
        sum_total += t.total;
        sum_recon += t.recon;
        sum_kl += t.kl;
      }
      EpochStats s;
      s.epoch = epoch;
      const double n = static_cast<double>(order.size());
      s.total = sum_total / n;
      s.recon = sum_recon / n;
      s.kl = sum_kl / n;
      if (!val_ids.empty()) s.val_total = eval_loss(store, val_ids);
      history_.push_back(s);
      if (should_stop()) break;
    }
    return history_;
  }

  // Mean eval-mode (z = mu) loss per image.
  double eval_loss(const ImageStore& store, const std::vector<long>& ids) const {
    double sum = 0;
    for (size_t off = 0; off < ids.size(); off += static_cast<size_t>(cfg_.batch_size)) {
      const size_t n = std::min(static_cast<size_t>(cfg_.batch_size), ids.size() - off);
      Tensor<T> batch = make_batch(store, ids, off, n);
      Context ctx;
      encode_forward(batch, ctx);
      decode_forward(ctx.mu, ctx);
      Tensor<T> flat_x = ctx.x;
      flat_x.shape = ctx.logits.shape;
      const double recon = cfg_.recon_loss == "squared"
                               ? sse_sum(sigmoid(ctx.logits), flat_x)
                               : sigmoid_bce_sum(ctx.logits, flat_x);
      sum += recon + cfg_.beta * gaussian_kl(ctx.mu, ctx.logvar_c);
    }
    return sum / static_cast<double>(ids.size());
  }

  // Mean eval-mode reconstruction term per image (no KL).
  double recon_loss(const ImageStore& store, const std::vector<long>& ids) const {
    double sum = 0;
    for (size_t off = 0; off < ids.size(); off += static_cast<size_t>(cfg_.batch_size)) {
      const size_t n = std::min(static_cast<size_t>(cfg_.batch_size), ids.size() - off);
      Tensor<T> batch = make_batch(store, ids, off, n);
      Context ctx;
      encode_forward(batch, ctx);
      decode_forward(ctx.mu, ctx);
      Tensor<T> flat_x = ctx.x;
      flat_x.shape = ctx.logits.shape;
      sum += cfg_.recon_loss == "squared" ? sse_sum(sigmoid(ctx.logits), flat_x)
                                          : sigmoid_bce_sum(ctx.logits, flat_x);
    }
    return sum / static_cast<double>(ids.size());
  }

  static Tensor<T> make_batch(const ImageStore& store, const std::vector<long>& ids, size_t off,
                              size_t n) {
    Tensor<T> batch({static_cast<long>(n), 1, store.canvas_height, store.canvas_width});
    const long fs = store.frame_size();
    for (size_t i = 0; i < n; ++i) {
      const uint8_t* src = store.frame(ids[off + i]);
      T* dst = batch.data() + static_cast<long>(i) * fs;
      for (long px = 0; px < fs; ++px) dst[px] = static_cast<T>(src[px]) / T(255);
    }
    return batch;
  }

  // ---- checkpointing ----------------------------------------------------

  void save(const std::string& path) const {
    nlohmann::json meta{{"format", "comporth-ckpt-v1"},
                        {"model", "betavae"},
                        {"config", cfg_.to_json()},
                        {"canvas_h", h_},
                        {"canvas_w", w_}};
    nlohmann::json hist = nlohmann::json::array();
    for (const EpochStats& s : history_) hist.push_back(s.to_json());
    meta["loss_history"] = hist;
    meta["epochs_run"] = history_.size();
    write_checkpoint(path, meta, params_);
  }

  static BetaVae load(const std::string& path) {
    ParamStore<T> loaded;
    nlohmann::json meta = read_checkpoint(path, &loaded);
    if (meta.value("model", "") != "betavae")
      throw IoError("checkpoint is not a betavae model: " + path);
    BetaVae model(VaeConfig::from_json(meta.at("config")), meta.at("canvas_h").get<int>(),
                  meta.at("canvas_w").get<int>());
    for (auto& [name, p] : loaded.params) {
      if (!model.params_.params.count(name)) throw IoError("unexpected parameter " + name);
      model.params_.params.at(name) = std::move(p);
    }
    for (const auto& s : meta.value("loss_history", nlohmann::json::array())) {
      EpochStats e;
      e.epoch = s.value("epoch", 0);
      e.total = s.value("total", 0.0);
      e.recon = s.value("recon", 0.0);
      e.kl = s.value("kl", 0.0);
      e.val_total = s.value("val_total", -1.0);
      model.history_.push_back(e);
    }
    return model;
  }

 private:
  const Tensor<T>& p(const std::string& name) const { return params_.param(name); }

  long flat_dim() const { return 64L * (h_ / 16) * (w_ / 16); }

  void build_params() {
    CounterRng rng(hash_counter(cfg_.seed, 0x1417));
    auto he = [&](std::vector<long> shape, long fan_in) {
      Tensor<T> t(shape);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.next_normal() * std);
      return t;
    };
    auto xavier = [&](std::vector<long> shape, long fan_in) {
      Tensor<T> t(shape);
      const double std = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.next_normal() * std);
      return t;
    };
    const long L = cfg_.latent_size, F = flat_dim();
    params_.add("enc.conv1.w", he({32, 1 * 16}, 1 * 16));
    params_.add("enc.conv1.b", Tensor<T>({32}));
    params_.add("enc.conv2.w", he({32, 32 * 16}, 32 * 16));
    params_.add("enc.conv2.b", Tensor<T>({32}));
    params_.add("enc.conv3.w", he({64, 32 * 16}, 32 * 16));
    params_.add("enc.conv3.b", Tensor<T>({64}));
    params_.add("enc.conv4.w", he({64, 64 * 16}, 64 * 16));
    params_.add("enc.conv4.b", Tensor<T>({64}));
    params_.add("enc.fc1.w", he({256, F}, F));
    params_.add("enc.fc1.b", Tensor<T>({256}));
    params_.add("enc.out.w", xavier({2 * L, 256}, 256));
    params_.add("enc.out.b", Tensor<T>({2 * L}));
    params_.add("dec.fc1.w", he({256, L}, L));
    params_.add("dec.fc1.b", Tensor<T>({256}));
    params_.add("dec.fc2.w", he({F, 256}, 256));
    params_.add("dec.fc2.b", Tensor<T>({F}));
    // convT weights use the adjoint-conv layout [in_ch, out_ch*k*k].
    params_.add("dec.convt4.w", he({64, 64 * 16}, 64 * 16));
    params_.add("dec.convt4.b", Tensor<T>({64}));
    params_.add("dec.convt3.w", he({64, 32 * 16}, 64 * 16));
    params_.add("dec.convt3.b", Tensor<T>({32}));
    params_.add("dec.convt2.w", he({32, 32 * 16}, 32 * 16));
    params_.add("dec.convt2.b", Tensor<T>({32}));
    params_.add("dec.convt1.w", xavier({32, 1 * 16}, 32 * 16));
    params_.add("dec.convt1.b", Tensor<T>({1}));
  }

  void scale_grads(T s) {
    for (auto& [name, g] : params_.grads)
      for (long i = 0; i < g.size(); ++i) g[i] *= s;
  }

  // Reverse pass; glogits is dLoss/dlogits summed over the batch.
  void backward(Context& ctx, const Tensor<T>& glogits_in) {
    const long N = ctx.x.shape[0], L = cfg_.latent_size;
    Tensor<T> g = glogits_in;

    // decoder convT chain
    Tensor<T> gz_part, gw, gb;
    conv2d_transpose_grad(ctx.rt2, p("dec.convt1.w"), g, 4, 2, 1, &gz_part, &gw, &gb);
    params_.accumulate("dec.convt1.w", gw);
    params_.accumulate("dec.convt1.b", gb);
    g = relu_grad(ctx.t2, gz_part);
    conv2d_transpose_grad(ctx.rt3, p("dec.convt2.w"), g, 4, 2, 1, &gz_part, &gw, &gb);
    params_.accumulate("dec.convt2.w", gw);
    params_.accumulate("dec.convt2.b", gb);
    g = relu_grad(ctx.t3, gz_part);
    conv2d_transpose_grad(ctx.rt4, p("dec.convt3.w"), g, 4, 2, 1, &gz_part, &gw, &gb);
    params_.accumulate("dec.convt3.w", gw);
    params_.accumulate("dec.convt3.b", gb);
    g = relu_grad(ctx.t4, gz_part);
    conv2d_transpose_grad(ctx.d2m, p("dec.convt4.w"), g, 4, 2, 1, &gz_part, &gw, &gb);
    params_.accumulate("dec.convt4.w", gw);
    params_.accumulate("dec.convt4.b", gb);

    // decoder dense chain
    Tensor<T> gflat = gz_part;
    gflat.shape = {N, flat_dim()};
    Tensor<T> gd2 = relu_grad(ctx.d2, gflat);
    Tensor<T> grd1;
    dense_grad(ctx.rd1, p("dec.fc2.w"), gd2, &grd1, &gw, &gb);
    params_.accumulate("dec.fc2.w", gw);
    params_.accumulate("dec.fc2.b", gb);
    Tensor<T> gd1 = relu_grad(ctx.d1, grd1);
    Tensor<T> gz;
    dense_grad(ctx.z, p("dec.fc1.w"), gd1, &gz, &gw, &gb);
    params_.accumulate("dec.fc1.w", gw);
    params_.accumulate("dec.fc1.b", gb);

    // latent: z = mu + exp(lv/2)*eps, plus beta * KL(mu, lv)
    Tensor<T> gmu(ctx.mu.shape), glv(ctx.logvar.shape);
    Tensor<T> kl_gmu, kl_glv;
    gaussian_kl_grad(ctx.mu, ctx.logvar_c, &kl_gmu, &kl_glv);
    const T beta = static_cast<T>(cfg_.beta);
    for (long i = 0; i < N * L; ++i) {
      const T std_half = std::exp(ctx.logvar_c[i] / T(2)) / T(2);
      gmu[i] = gz[i] + beta * kl_gmu[i];
      T glv_c = gz[i] * ctx.eps[i] * std_half + beta * kl_glv[i];
      // clamp is an identity inside the range, zero gradient outside
      if (ctx.logvar[i] != ctx.logvar_c[i]) glv_c = T(0);
      glv[i] = glv_c;
    }

    // encoder dense chain
    Tensor<T> gstats({N, 2 * L});
    for (long i = 0; i < N; ++i)
      for (long j = 0; j < L; ++j) {
        gstats[i * 2 * L + j] = gmu[i * L + j];
        gstats[i * 2 * L + L + j] = glv[i * L + j];
      }
    Tensor<T> grf1;
    dense_grad(ctx.rf1, p("enc.out.w"), gstats, &grf1, &gw, &gb);
    params_.accumulate("enc.out.w", gw);
    params_.accumulate("enc.out.b", gb);
    Tensor<T> gf1 = relu_grad(ctx.f1, grf1);
    Tensor<T> gflat_enc;
    dense_grad(ctx.flat, p("enc.fc1.w"), gf1, &gflat_enc, &gw, &gb);
    params_.accumulate("enc.fc1.w", gw);
    params_.accumulate("enc.fc1.b", gb);

    // encoder conv chain
    Tensor<T> gr4 = gflat_enc;
    gr4.shape = {N, 64, h_ / 16, w_ / 16};
    Tensor<T> gc4 = relu_grad(ctx.c4, gr4);
    Tensor<T> gr3;
    conv2d_grad(ctx.r3, p("enc.conv4.w"), gc4, 4, 2, 1, &gr3, &gw, &gb);
    params_.accumulate("enc.conv4.w", gw);
    params_.accumulate("enc.conv4.b", gb);
    Tensor<T> gc3 = relu_grad(ctx.c3, gr3);
    Tensor<T> gr2;
    conv2d_grad(ctx.r2, p("enc.conv3.w"), gc3, 4, 2, 1, &gr2, &gw, &gb);
    params_.accumulate("enc.conv3.w", gw);
    params_.accumulate("enc.conv3.b", gb);
    Tensor<T> gc2 = relu_grad(ctx.c2, gr2);
    Tensor<T> gr1;
    conv2d_grad(ctx.r1, p("enc.conv2.w"), gc2, 4, 2, 1, &gr1, &gw, &gb);
    params_.accumulate("enc.conv2.w", gw);
    params_.accumulate("enc.conv2.b", gb);
    Tensor<T> gc1 = relu_grad(ctx.c1, gr1);
    conv2d_grad(ctx.x, p("enc.conv1.w"), gc1, 4, 2, 1, static_cast<Tensor<T>*>(nullptr), &gw, &gb);
    params_.accumulate("enc.conv1.w", gw);
    params_.accumulate("enc.conv1.b", gb);
  }

  bool should_stop() const {
    if (!cfg_.early_stop) return false;
    const int w = cfg_.early_stop_window, patience = cfg_.early_stop_patience;
    const int n = static_cast<int>(history_.size());
    if (n < w + patience) return false;
    auto smoothed = [&](int end_epoch) {
      double s = 0;
      for (int i = end_epoch - w + 1; i <= end_epoch; ++i) s += history_[static_cast<size_t>(i)].total;
      return s / w;
    };
    const double now = smoothed(n - 1);
    const double before = smoothed(n - 1 - patience);
    return now > before - std::abs(before) * cfg_.early_stop_rel_tol;
  }

  VaeConfig cfg_;
  int h_, w_;
  ParamStore<T> params_;
  std::vector<EpochStats> history_;
};

}  // namespace comporth
