#pragma once

// The Evaluator: a feed-forward word classifier (2 conv + 2 dense,
// softmax over the vocabulary) trained on original images only. Its
// probability for the target word is the Reconstruction Accuracy of a
// reconstruction.

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

namespace comporth {

struct EvaluatorConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 60;
  // "perfect performance" proxy: both must hold on the training originals.
  double target_accuracy = 0.995;
  double target_prob = 0.98;
  uint64_t seed = 7;

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
            {"max_epochs", max_epochs},       {"target_accuracy", target_accuracy},
            {"target_prob", target_prob},     {"seed", seed}};
  }

  static EvaluatorConfig from_json(const nlohmann::json& j) {
    EvaluatorConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.target_accuracy = j.value("target_accuracy", c.target_accuracy);
    c.target_prob = j.value("target_prob", c.target_prob);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

template <typename T>
class Evaluator {
 public:
  Evaluator(int n_classes, int canvas_h, int canvas_w, uint64_t seed = 7)
      : n_classes_(n_classes), h_(canvas_h), w_(canvas_w) {
    if (n_classes < 2) throw ConfigError("Evaluator: need at least 2 classes");
    oh1_ = (h_ - 5) / 2 + 1;
    ow1_ = (w_ - 5) / 2 + 1;
    oh2_ = (oh1_ - 5) / 2 + 1;
    ow2_ = (ow1_ - 5) / 2 + 1;
    if (oh2_ < 1 || ow2_ < 1) throw ConfigError("Evaluator: canvas too small");
    build_params(seed);
  }

  int n_classes() const { return n_classes_; }
  bool trained() const { return trained_; }
  ParamStore<T>& params() { return params_; }

  // Softmax probabilities for a batch [N,1,H,W].
  Tensor<T> probs(const Tensor<T>& images) const {
    return softmax(logits(images));
  }

  Tensor<T> logits(const Tensor<T>& images) const {
    const long N = images.shape[0];
    if (images.shape != std::vector<long>{N, 1, h_, w_})
      throw ShapeError("evaluator: input " + shape_string(images.shape) + " vs canvas " +
                       std::to_string(h_) + "x" + std::to_string(w_));
    Tensor<T> a = relu(conv2d(images, params_.param("conv1.w"), params_.param("conv1.b"), 5, 2, 0));
    Tensor<T> b = relu(conv2d(a, params_.param("conv2.w"), params_.param("conv2.b"), 5, 2, 0));
    b.shape = {N, flat_dim()};
    Tensor<T> c = relu(dense(b, params_.param("fc1.w"), params_.param("fc1.b")));
    return dense(c, params_.param("fc2.w"), params_.param("fc2.b"));
  }

  // Probability mass the classifier puts on `target` for one image.
  double reconstruction_accuracy(const Tensor<T>& image, int target) const {
    require_trained();
    Tensor<T> p = probs(image);
    return static_cast<double>(p[target]);
  }

  struct BatchScores {
    std::vector<double> target_prob;
    std::vector<int> top1;
    double mean_target_prob = 0;
    double top1_accuracy = 0;
  };

  BatchScores score(const Tensor<T>& images, const std::vector<int>& targets) const {
    require_trained();
    const long N = images.shape[0];
    if (static_cast<long>(targets.size()) != N)
      throw ShapeError("score: " + std::to_string(targets.size()) + " targets for batch " +
                       std::to_string(N));
    Tensor<T> p = probs(images);
    BatchScores out;
    for (long i = 0; i < N; ++i) {
      const T* row = p.data() + i * n_classes_;
      int best = 0;
      for (int c = 1; c < n_classes_; ++c)
        if (row[c] > row[best]) best = c;
      out.top1.push_back(best);
      const double tp = static_cast<double>(row[targets[static_cast<size_t>(i)]]);
      out.target_prob.push_back(tp);
      out.mean_target_prob += tp;
      if (best == targets[static_cast<size_t>(i)]) out.top1_accuracy += 1;
    }
    out.mean_target_prob /= static_cast<double>(N);
    out.top1_accuracy /= static_cast<double>(N);
    return out;
  }

  struct TrainResult {
    int epochs_run = 0;
    double final_accuracy = 0;
    double final_target_prob = 0;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_accuracy;
  };

  // Cross-entropy on (image, word_index) pairs until top-1 accuracy on
  // the training images reaches the target. Throws if the budget runs
  // out, which usually means the renderer or labels are wrong.
  TrainResult train(const ImageStore& store, const std::vector<long>& ids,
                    const std::vector<int>& labels, const EvaluatorConfig& cfg) {
    if (ids.empty()) throw ConfigError("evaluator train: empty id set");
    AdamConfig adam{cfg.learning_rate};
    CounterRng shuffler(hash_counter(cfg.seed, 0x5AFE));
    std::vector<size_t> order(ids.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    TrainResult res;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      shuffler.shuffle(order);
      double loss_sum = 0, prob_sum = 0;
      long correct = 0;
      for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
        const size_t n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - off);
        Tensor<T> batch({static_cast<long>(n), 1, h_, w_});
        std::vector<int> batch_labels(n);
        const long fs = store.frame_size();
        for (size_t i = 0; i < n; ++i) {
          const uint8_t* src = store.frame(ids[order[off + i]]);
          T* dst = batch.data() + static_cast<long>(i) * fs;
          for (long px = 0; px < fs; ++px) dst[px] = static_cast<T>(src[px]) / T(255);
          batch_labels[i] = labels[order[off + i]];
        }
        double loss = train_step(batch, batch_labels, adam, &correct, &prob_sum);
        if (!std::isfinite(loss))
          throw NumericalError("evaluator train: non-finite loss at epoch " +
                               std::to_string(epoch));
        loss_sum += loss;
      }
      res.epochs_run = epoch + 1;
      res.epoch_loss.push_back(loss_sum / static_cast<double>(ids.size()));
      res.epoch_accuracy.push_back(static_cast<double>(correct) /
                                   static_cast<double>(ids.size()));
      res.final_accuracy = res.epoch_accuracy.back();
      res.final_target_prob = prob_sum / static_cast<double>(ids.size());
      if (res.final_accuracy >= cfg.target_accuracy && res.final_target_prob >= cfg.target_prob) {
        trained_ = true;
        return res;
      }
    }
    throw NumericalError(
        "evaluator failed to reach top-1 " + std::to_string(cfg.target_accuracy) +
        " with mean target probability " + std::to_string(cfg.target_prob) + " in " +
        std::to_string(cfg.max_epochs) + " epochs (last " + std::to_string(res.final_accuracy) +
        " / " + std::to_string(res.final_target_prob) + "); check rendering and labels");
  }

  // One gradient step; returns summed loss, counts batch top-1 hits and
  // accumulates target probability mass.
  double train_step(const Tensor<T>& batch, const std::vector<int>& labels, const AdamConfig& adam,
                    long* correct, double* prob_sum = nullptr) {
    const long N = batch.shape[0];
    Tensor<T> c1 = conv2d(batch, params_.param("conv1.w"), params_.param("conv1.b"), 5, 2, 0);
    Tensor<T> r1 = relu(c1);
    Tensor<T> c2 = conv2d(r1, params_.param("conv2.w"), params_.param("conv2.b"), 5, 2, 0);
    Tensor<T> r2 = relu(c2);
    Tensor<T> flat = r2;
    flat.shape = {N, flat_dim()};
    Tensor<T> f1 = dense(flat, params_.param("fc1.w"), params_.param("fc1.b"));
    Tensor<T> rf1 = relu(f1);
    Tensor<T> out = dense(rf1, params_.param("fc2.w"), params_.param("fc2.b"));

    Tensor<T> probs, gout;
    const double loss = softmax_xent(out, labels, &probs, &gout);
    if (correct) {
      for (long i = 0; i < N; ++i) {
        const T* row = probs.data() + i * n_classes_;
        int best = 0;
        for (int c = 1; c < n_classes_; ++c)
          if (row[c] > row[best]) best = c;
        if (best == labels[static_cast<size_t>(i)]) ++*correct;
        if (prob_sum) *prob_sum += static_cast<double>(row[labels[static_cast<size_t>(i)]]);
      }
    }

    params_.zero_grads();
    Tensor<T> gw, gb, grf1;
    dense_grad(rf1, params_.param("fc2.w"), gout, &grf1, &gw, &gb);
    params_.accumulate("fc2.w", gw);
    params_.accumulate("fc2.b", gb);
    Tensor<T> gf1 = relu_grad(f1, grf1);
    Tensor<T> gflat;
    dense_grad(flat, params_.param("fc1.w"), gf1, &gflat, &gw, &gb);
    params_.accumulate("fc1.w", gw);
    params_.accumulate("fc1.b", gb);
    gflat.shape = {N, 32, oh2_, ow2_};
    Tensor<T> gc2 = relu_grad(c2, gflat);
    Tensor<T> gr1;
    conv2d_grad(r1, params_.param("conv2.w"), gc2, 5, 2, 0, &gr1, &gw, &gb);
    params_.accumulate("conv2.w", gw);
    params_.accumulate("conv2.b", gb);
    Tensor<T> gc1 = relu_grad(c1, gr1);
    conv2d_grad(batch, params_.param("conv1.w"), gc1, 5, 2, 0, static_cast<Tensor<T>*>(nullptr),
                &gw, &gb);
    params_.accumulate("conv1.w", gw);
    params_.accumulate("conv1.b", gb);

    for (auto& [name, g] : params_.grads)
      for (long i = 0; i < g.size(); ++i) g[i] /= static_cast<T>(N);
    adam_step(params_, adam);
    return loss;
  }

  void save(const std::string& path) const {
    nlohmann::json meta{{"format", "comporth-ckpt-v1"}, {"model", "evaluator"},
                        {"n_classes", n_classes_},      {"canvas_h", h_},
                        {"canvas_w", w_},               {"trained", trained_}};
    write_checkpoint(path, meta, params_);
  }

  static Evaluator load(const std::string& path) {
    ParamStore<T> loaded;
    nlohmann::json meta = read_checkpoint(path, &loaded);
    if (meta.value("model", "") != "evaluator")
      throw IoError("checkpoint is not an evaluator model: " + path);
    Evaluator ev(meta.at("n_classes").get<int>(), meta.at("canvas_h").get<int>(),
                 meta.at("canvas_w").get<int>());
    for (auto& [name, p] : loaded.params) {
      if (!ev.params_.params.count(name)) throw IoError("unexpected parameter " + name);
      ev.params_.params.at(name) = std::move(p);
    }
    ev.trained_ = meta.value("trained", false);
    return ev;
  }

 private:
  long flat_dim() const { return 32L * oh2_ * ow2_; }

  void require_trained() const {
    if (!trained_) throw ConfigError("evaluator has not been trained");
  }

  void build_params(uint64_t seed) {
    CounterRng rng(hash_counter(seed, 0x1417));
    auto he = [&](std::vector<long> shape, long fan_in) {
      Tensor<T> t(shape);
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.next_normal() * std);
      return t;
    };
    params_.add("conv1.w", he({16, 1 * 25}, 25));
    params_.add("conv1.b", Tensor<T>({16}));
    params_.add("conv2.w", he({32, 16 * 25}, 16 * 25));
    params_.add("conv2.b", Tensor<T>({32}));
    params_.add("fc1.w", he({128, flat_dim()}, flat_dim()));
    params_.add("fc1.b", Tensor<T>({128}));
    params_.add("fc2.w", he({static_cast<long>(n_classes_), 128}, 128));
    params_.add("fc2.b", Tensor<T>({static_cast<long>(n_classes_)}));
  }

  int n_classes_;
  int h_, w_;
  long oh1_, ow1_, oh2_, ow2_;
  ParamStore<T> params_;
  bool trained_ = false;
};

}  // namespace comporth
