#pragma once

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "dvae/elbo.hpp"
#include "dvae/train/adam.hpp"
#include "dvae/train/augment.hpp"
#include "dvae/train/model.hpp"

namespace dvae::train {

namespace fs = std::filesystem;

struct StepRecord {
  std::string phase;
  int epoch = 0;
  long step = 0;
  double total = 0;  // loss being minimized
  double kl = 0;
  std::map<std::string, double> terms;
};

struct TrainLog {
  std::string config_hash;
  std::vector<StepRecord> steps;
  double wall_seconds = 0;
};

struct TrainOptions {
  fs::path run_dir;      // empty: keep everything in memory
  long max_steps = -1;   // stop early after this many optimizer steps (tests)
  bool quiet = true;
};

struct TrainResult {
  nets::Checkpoint model;
  TrainLog log;
  fs::path final_checkpoint;
};

// Root for named runs: $DVAE_RUNS_DIR or ./runs.
inline fs::path runs_root() {
  if (const char* env = std::getenv("DVAE_RUNS_DIR"); env && *env) return env;
  return "runs";
}

namespace detail {

class Session {
 public:
  Session(const TrainConfig& c, nets::Checkpoint model, TrainOptions opt)
      : c_(c), model_(std::move(model)), opt_(std::move(opt)), shuffle_rng_(c.seed), noise_rng_(c.seed + 1),
        augment_rng_(c.seed + 2), start_(std::chrono::steady_clock::now()) {
    shape_ = model_shape(model_);
    log_.config_hash = c.hash;
    for (auto& [role, net] : model_.nets) adam_.emplace(role, AdamState<float>(net.params()));
    if (!opt_.run_dir.empty()) {
      fs::create_directories(opt_.run_dir);
      data::write_text_atomic(opt_.run_dir / "config.txt", c.text + "# config_hash " + c.hash + "\n");
      log_file_.open(opt_.run_dir / "log.jsonl", std::ios::trunc);
      if (!log_file_) throw IoError("cannot write " + (opt_.run_dir / "log.jsonl").string());
      nlohmann::ordered_json h{{"type", "header"}, {"config_hash", c.hash}, {"task", to_string(c.task)}};
      log_file_ << h.dump() << '\n';
    }
  }

  const TrainConfig& config() const { return c_; }
  const ModelShape& shape() const { return shape_; }
  nets::Checkpoint& model() { return model_; }
  const nets::Network<float>& net(const std::string& role) const { return model_.net(role); }
  bool done() const { return opt_.max_steps >= 0 && step_ >= opt_.max_steps; }

  Matf noise(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<float> n(0.f, 1.f);
    Matf m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(noise_rng_);
    return m;
  }

  // Shuffled batches of record pointers, augmented when configured.
  std::vector<std::vector<data::Sample>> epoch_batches(const std::vector<const data::Sample*>& usable) {
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng_);
    const AugmentOptions aug{c_.augment_rotation_deg, c_.augment_flip};
    const bool augmenting = aug.rotation_deg > 0 || aug.flip;
    std::vector<std::vector<data::Sample>> out;
    for (std::size_t i = 0; i < order.size(); i += c_.batch_size) {
      auto& b = out.emplace_back();
      for (std::size_t k = i; k < std::min(order.size(), i + c_.batch_size); ++k) {
        b.push_back(augmenting ? augment(*usable[order[k]], augment_rng_, aug) : *usable[order[k]]);
      }
    }
    return out;
  }

  Batch featurize(const std::vector<data::Sample>& samples) const {
    std::vector<const data::Sample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    return make_batch(c_, ptrs, shape_);
  }

  // grads are d loss / d params for the listed roles.
  void update(const std::map<std::string, nets::Gradients<float>>& grads, const std::set<std::string>& roles,
              double sign) {
    for (const auto& role : roles) {
      auto it = grads.find(role);
      if (it == grads.end()) continue;
      nets::Gradients<float> g = it->second;
      for (auto& v : g) {
        if (!v.allFinite()) diverge("non-finite gradient for " + role);
        if (sign != 1.0) v *= static_cast<float>(sign);
      }
      optimizer_step(model_.nets.at(role).params(), g, adam_.at(role), c_.learning_rate, {}, role);
      if (!model_.nets.at(role).params().all_finite()) diverge("non-finite parameters in " + role);
    }
  }

  void record(const std::string& phase, int epoch, double total, double kl, const std::map<std::string, double>& terms) {
    if (!std::isfinite(total)) diverge("loss is not finite in phase " + phase);
    StepRecord r{phase, epoch, step_, total, kl, terms};
    if (log_file_.is_open()) {
      nlohmann::ordered_json j{{"phase", phase}, {"epoch", epoch}, {"step", step_}, {"total", total}, {"kl", kl}};
      for (const auto& [k, v] : terms) j["recon." + k] = v;
      log_file_ << j.dump() << '\n';
    }
    log_.steps.push_back(std::move(r));
    ++step_;
  }

  void end_epoch(const std::string& phase, int epoch, int epochs) {
    if (opt_.run_dir.empty()) return;
    if ((c_.checkpoint_every > 0 && epoch % c_.checkpoint_every == 0) || epoch == epochs) {
      save("ckpt-" + phase + "-" + std::to_string(epoch), phase, epoch);
    }
  }

  fs::path save(const std::string& name, const std::string& phase, int epoch) {
    model_.phase = phase;
    model_.epoch = epoch;
    const fs::path p = opt_.run_dir / name;
    nets::save_checkpoint(p, model_);
    last_good_ = p;
    return p;
  }

  [[noreturn]] void diverge(const std::string& what) {
    throw DivergenceError(what + " at step " + std::to_string(step_), last_good_.string());
  }

  TrainResult finish() {
    TrainResult r;
    log_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (!opt_.run_dir.empty()) {
      r.final_checkpoint = save("ckpt-final", model_.phase, model_.epoch);
      nlohmann::ordered_json s{{"type", "summary"},
                               {"config_hash", c_.hash},
                               {"steps", step_},
                               {"wall_seconds", log_.wall_seconds},
                               {"final_checkpoint", r.final_checkpoint.filename().string()}};
      log_file_ << s.dump() << '\n';
      log_file_.close();
    }
    r.model = std::move(model_);
    r.log = std::move(log_);
    return r;
  }

 private:
  const TrainConfig& c_;
  nets::Checkpoint model_;
  TrainOptions opt_;
  ModelShape shape_;
  std::map<std::string, AdamState<float>> adam_;
  std::mt19937_64 shuffle_rng_, noise_rng_, augment_rng_;
  std::chrono::steady_clock::time_point start_;
  std::ofstream log_file_;
  TrainLog log_;
  fs::path last_good_;
  long step_ = 0;
};

inline std::vector<const data::Sample*> select(const std::vector<data::Sample>& all,
                                               const std::function<bool(const data::Sample&)>& keep,
                                               const std::string& need) {
  std::vector<const data::Sample*> out;
  for (const auto& s : all)
    if (keep(s)) out.push_back(&s);
  if (out.empty()) throw SupervisionError("no training records carry the labels this phase needs (" + need + ")");
  return out;
}

inline bool has_pose_triple(const data::Sample& s) { return s.pose3d && s.cpose && s.viewpoint; }

inline ModelShape shape_of(const std::vector<data::Sample>& samples) {
  ModelShape m;
  for (const auto& s : samples) {
    if (s.pose3d) m.joints = static_cast<int>(s.pose3d->joint_count());
    if (s.image.pixels.size()) m.image_size = s.image.height;
    if (s.pose3d && s.image.pixels.size()) break;
  }
  return m;
}

// Disentangling phase: factor encoders and all decoders.
inline void disentangle_phase(Session& s, const std::vector<const data::Sample*>& usable, int epochs) {
  const auto& c = s.config();
  const auto w = c.dis.for_partition(c.partition);
  const std::string q1 = "q_" + y1_name(c), q2 = "q_" + y2_name(c);
  const std::string p1 = "p_" + y1_name(c), p2 = "p_" + y2_name(c);
  const std::set<std::string> roles{q1, q2, p1, p2, "p_x"};
  for (int epoch = 1; epoch <= epochs && !s.done(); ++epoch) {
    for (const auto& samples : s.epoch_batches(usable)) {
      if (s.done()) break;
      const Batch b = s.featurize(samples);
      const Matf eps = s.noise(c.partition.total_dim(), b.x.cols());
      const auto res = elbo::elbo_dis<float>(b.x, b.y1, b.y2, s.net(q1), s.net(q2), s.net("p_x"), s.net(p1),
                                             s.net(p2), c.partition, w, eps);
      s.update(res.grads, roles, -1.0);
      s.record("dis", epoch, -res.value, res.kl, res.recon);
    }
    s.end_epoch("dis", epoch, epochs);
  }
}

// Embedding phase: only the image encoder moves; records contribute the
// terms whose labels they carry.
inline void embed_phase(Session& s, const std::vector<const data::Sample*>& usable, int epochs) {
  const auto& c = s.config();
  const auto w = c.emb.for_partition(c.partition);
  const std::string role = embed_role(c.task);
  const std::string p1 = "p_" + y1_name(c), p2 = "p_" + y2_name(c);
  for (int epoch = 1; epoch <= epochs && !s.done(); ++epoch) {
    for (const auto& samples : s.epoch_batches(usable)) {
      if (s.done()) break;
      const Batch b = s.featurize(samples);
      const Matf eps = s.noise(c.partition.total_dim(), b.x.cols());
      elbo::ElboResult<float> res;
      switch (c.task) {
        case Task::pose_estimation: {
          const elbo::TermMasks<float> masks{&b.mask_x, {{y1_name(c), &b.mask_y1}, {y2_name(c), &b.mask_y2}}};
          res = elbo::elbo_emb_prime<float>(b.x_hat, b.x, b.y1, b.y2, s.net(role), s.net("p_x"), s.net(p1), s.net(p2),
                                            c.partition, w, eps, masks);
          break;
        }
        case Task::synthesis_tags:
          res = elbo::elbo_emb<float>(b.x, b.y1, b.y2, s.net(role), s.net("p_x"), s.net(p1), s.net(p2), c.partition,
                                      w, eps);
          break;
        case Task::synthesis_zu: {
          const std::vector<elbo::Factor<float>> factors{{&b.y1, nullptr, &s.net(p1)}, {}};
          res = elbo::elbo_embed<float>(role, b.x, s.net(role), &b.x, &s.net("p_x"),
                                        std::span<const elbo::Factor<float>>(factors), c.partition, w, eps, {}, true);
          break;
        }
      }
      s.update(res.grads, {role}, -1.0);
      s.record("emb", epoch, -res.value, res.kl, res.recon);
    }
    s.end_epoch("emb", epoch, epochs);
  }
}

inline Session open_session(const TrainConfig& c, const std::vector<data::Sample>& data, const TrainOptions& opt,
                            const nets::Checkpoint* start) {
  if (start) {
    checkpoint_config(*start, to_string(c.task));
    nets::Checkpoint m = *start;
    m.config_hash = c.hash;
    m.config_text = c.text;
    nets::require_compatible(m, model_specs(c, model_shape(m)), c.partition);
    return Session(c, std::move(m), opt);
  }
  return Session(c, init_model(c, shape_of(data)), opt);
}

}  // namespace detail

// Disentangling (T1 epochs) then embedding (T2 epochs).
inline TrainResult train_fully_specified(const TrainConfig& c, const std::vector<data::Sample>& data,
                                         const TrainOptions& opt = {}, const nets::Checkpoint* start = nullptr) {
  if (c.task == Task::synthesis_zu) throw ConfigError("train_fully_specified does not handle synthesis_zu");
  auto s = detail::open_session(c, data, opt, start);
  using detail::select;
  if (c.task == Task::pose_estimation) {
    if (c.epochs_t1 > 0) {
      detail::disentangle_phase(s, select(data, detail::has_pose_triple, "pose3d, cpose, viewpoint"), c.epochs_t1);
    }
    if (c.epochs_t2 > 0) {
      auto usable = select(
          data, [](const data::Sample& r) { return r.image.pixels.size() && (r.pose3d || r.viewpoint); },
          "an image with pose3d or viewpoint");
      detail::embed_phase(s, usable, c.epochs_t2);
    }
  } else {
    auto usable = select(
        data, [](const data::Sample& r) { return r.image.pixels.size() && r.pose3d && r.content_tag; },
        "image, pose3d, content_tag");
    if (c.epochs_t1 > 0) detail::disentangle_phase(s, usable, c.epochs_t1);
    if (c.epochs_t2 > 0) detail::embed_phase(s, usable, c.epochs_t2);
  }
  return s.finish();
}

// Embedding phase only, against the frozen decoders of an existing checkpoint.
inline TrainResult train_second_modality(const TrainConfig& c, const std::vector<data::Sample>& data,
                                         const nets::Checkpoint& frozen, const TrainOptions& opt = {}) {
  if (c.task != Task::pose_estimation) throw ConfigError("second-modality training is a pose_estimation task");
  TrainConfig emb_only = c;
  emb_only.epochs_t1 = 0;
  return train_fully_specified(emb_only, data, opt, &frozen);
}

// Outer disentangling with z_u, batch-local consistency passes, then embedding.
inline TrainResult train_with_zu(const TrainConfig& c, const std::vector<data::Sample>& data,
                                 const TrainOptions& opt = {}, const nets::Checkpoint* start = nullptr) {
  if (c.task != Task::synthesis_zu) throw ConfigError("train_with_zu needs task synthesis_zu");
  auto s = detail::open_session(c, data, opt, start);
  auto usable = detail::select(
      data, [](const data::Sample& r) { return r.image.pixels.size() && r.pose3d; }, "image, pose3d");
  const auto w = c.dis.for_partition(c.partition);
  const std::string q1 = "q_" + y1_name(c), qu = "q_" + y2_name(c), p1 = "p_" + y1_name(c);
  const int d = c.partition.total_dim();
  for (int epoch = 1; epoch <= c.epochs_t1 && !s.done(); ++epoch) {
    for (const auto& samples : s.epoch_batches(usable)) {
      if (s.done()) break;
      const Batch b = s.featurize(samples);
      const auto res = elbo::elbo_dis_u<float>(b.x, b.y1, s.net(q1), s.net(qu), s.net("p_x"), s.net(p1), c.partition,
                                               w, s.noise(d, b.x.cols()));
      const auto stats = elbo::capture_zu_stats(res.posteriors.at(qu), c.zu_stats);
      s.update(res.grads, {q1, qu, "p_x", p1}, -1.0);
      s.record("dis", epoch, -res.value, res.kl, res.recon);
      for (int inner = 0; inner < c.epochs_t2 && !s.done(); ++inner) {
        const auto cons = elbo::consistency_loss_zu<float>(b.y1, s.net(q1), s.net(p1), c.partition, stats,
                                                           s.noise(d, b.x.cols()));
        s.update(cons.grads, {q1, p1}, 1.0);
        s.record("consistency", epoch, cons.value, 0.0, cons.recon);
      }
    }
    s.end_epoch("dis", epoch, c.epochs_t1);
  }
  if (c.epochs_t3 > 0) detail::embed_phase(s, usable, c.epochs_t3);
  return s.finish();
}

inline TrainResult run_training(const TrainConfig& c, const std::vector<data::Sample>& data, const TrainOptions& opt = {}) {
  return c.task == Task::synthesis_zu ? train_with_zu(c, data, opt) : train_fully_specified(c, data, opt);
}

}  // namespace dvae::train
