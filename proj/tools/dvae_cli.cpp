#include <iostream>

#include "CLI11.hpp"
#include "dvae/apps.hpp"
#include "dvae/data/dataset.hpp"
#include "dvae/data/ingest.hpp"
#include "dvae/train/trainer.hpp"

using namespace dvae;
namespace fs = std::filesystem;

namespace {

struct UsageError : Error {
  using Error::Error;
};

void require_file(const std::string& what, const fs::path& p) {
  if (!fs::exists(p)) throw UsageError(what + " '" + p.string() + "' does not exist");
}

nets::Checkpoint open_checkpoint(const fs::path& p) {
  require_file("checkpoint", p);
  return nets::load_checkpoint(p);
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  data::write_text_atomic(p, j.dump(2) + "\n");
}

nlohmann::ordered_json pose_json(const pose::Pose3D& p) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < p.joints.rows(); ++r) rows.push_back({p.joints(r, 0), p.joints(r, 1), p.joints(r, 2)});
  return rows;
}

const data::Sample& pick(const std::vector<data::Sample>& s, std::size_t i) {
  if (i >= s.size()) throw UsageError("record index " + std::to_string(i) + " out of range (" + std::to_string(s.size()) + " records)");
  return s[i];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dvae: disentangled cross-modal VAE toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic hand-skeleton dataset");
  std::string gen_out, gen_preset = "desk32", gen_split = "train";
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n", gen_n, "number of records")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--preset", gen_preset, "desk32 or desk64")->check(CLI::IsMember({"desk32", "desk64"}));
  gen->add_option("--split", gen_split, "train or test")->check(CLI::IsMember({"train", "test"}));

  // ingest
  auto* ing = app.add_subcommand("ingest", "convert external 21-keypoint annotations to a manifest");
  std::string ing_ann, ing_format, ing_out;
  ing->add_option("--annotations", ing_ann, "annotation file")->required();
  ing->add_option("--format", ing_format, "rhd_like or stb_like")->required();
  ing->add_option("--out", ing_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model from a config");
  std::string tr_config, tr_data, tr_out, tr_init;
  bool tr_print = false;
  tr->add_option("--config", tr_config, "config file")->required();
  tr->add_option("--data", tr_data, "training dataset directory");
  tr->add_option("--out", tr_out, "run directory (default: $DVAE_RUNS_DIR/<config name>)");
  tr->add_option("--init", tr_init, "phase-1 checkpoint to embed against (pose_estimation)");
  tr->add_flag("--print-config", tr_print, "print the resolved config and exit");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate 3D pose estimates on a labelled dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_predictor = "model", ev_train;
  ev->add_option("--ckpt", ev_ckpt, "pose_estimation checkpoint");
  ev->add_option("--data", ev_data, "labelled test dataset")->required();
  ev->add_option("--out", ev_out, "report path (JSON)")->required();
  ev->add_option("--predictor", ev_predictor, "model, ground-truth or mean-pose")
      ->check(CLI::IsMember({"model", "ground-truth", "mean-pose"}));
  ev->add_option("--train-data", ev_train, "training set for the mean-pose predictor");

  // synth
  auto* sy = app.add_subcommand("synth", "synthesize an image from one record's pose and another's content");
  std::string sy_ckpt, sy_data, sy_out;
  std::size_t sy_pose = 0, sy_content = 0;
  sy->add_option("--ckpt", sy_ckpt, "synthesis checkpoint")->required();
  sy->add_option("--data", sy_data, "dataset supplying pose and content")->required();
  sy->add_option("--pose-index", sy_pose, "record giving the 3D pose");
  sy->add_option("--content-index", sy_content, "record giving the content");
  sy->add_option("--out", sy_out, "output directory")->required();

  // walk
  auto* wk = app.add_subcommand("walk", "interpolate one latent segment between two records");
  std::string wk_ckpt, wk_data, wk_out, wk_segment;
  std::size_t wk_a = 0, wk_b = 1;
  int wk_steps = 8;
  wk->add_option("--ckpt", wk_ckpt, "synthesis checkpoint")->required();
  wk->add_option("--data", wk_data, "dataset")->required();
  wk->add_option("--a", wk_a, "start record");
  wk->add_option("--b", wk_b, "end record");
  wk->add_option("--segment", wk_segment, "latent segment to walk")->required();
  wk->add_option("--steps", wk_steps, "frames including both endpoints")->check(CLI::Range(2, 1000));
  wk->add_option("--out", wk_out, "output directory")->required();

  // transfer
  auto* tf = app.add_subcommand("transfer", "pose-transfer grid");
  std::string tf_ckpt, tf_data, tf_out;
  std::vector<std::size_t> tf_pose{0, 1, 2}, tf_content{3, 4, 5};
  tf->add_option("--ckpt", tf_ckpt, "synthesis checkpoint")->required();
  tf->add_option("--data", tf_data, "dataset")->required();
  tf->add_option("--pose", tf_pose, "pose donor records")->delimiter(',');
  tf->add_option("--content", tf_content, "content donor records")->delimiter(',');
  tf->add_option("--out", tf_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 2;
  }

  try {
    if (*gen) {
      const auto r = data::generate_dataset(gen_out, gen_n, gen_seed, data::render_preset(gen_preset), gen_split);
      std::cout << "wrote " << r.records << " records to " << gen_out << " (manifest " << r.manifest_hash << ")\n";
    } else if (*ing) {
      const auto m = data::ingest_external(ing_ann, data::external_format_from_string(ing_format), ing_out);
      std::cout << "wrote " << m.records.size() << " records to " << ing_out << "\n";
    } else if (*tr) {
      require_file("config", tr_config);
      const auto cfg = train::load_config(tr_config);
      if (tr_print) {
        std::cout << cfg.text << "# hash " << cfg.hash << "\n";
        return 0;
      }
      if (tr_data.empty()) throw UsageError("train needs --data");
      require_file("dataset manifest", fs::path(tr_data) / "manifest.txt");
      const fs::path run = tr_out.empty() ? train::runs_root() / fs::path(tr_config).stem() : fs::path(tr_out);
      const auto samples = data::load_dataset(tr_data, cfg.supervision);
      train::TrainResult r;
      if (!tr_init.empty()) {
        const auto init = open_checkpoint(tr_init);
        r = train::train_second_modality(cfg, samples, init, {.run_dir = run});
      } else {
        r = train::run_training(cfg, samples, {.run_dir = run});
      }
      std::cout << "trained " << r.log.steps.size() << " steps in " << r.log.wall_seconds << " s; checkpoint "
                << r.final_checkpoint.string() << "\n";
    } else if (*ev) {
      const auto predictor = apps::predictor_from_string(ev_predictor);
      require_file("dataset manifest", fs::path(ev_data) / "manifest.txt");
      const auto test = data::load_dataset(ev_data, {}, {.images = predictor == apps::Predictor::model, .tags = false});
      metrics::Report rep;
      if (predictor == apps::Predictor::model) {
        if (ev_ckpt.empty()) throw UsageError("eval with the model predictor needs --ckpt");
        const auto ck = open_checkpoint(ev_ckpt);
        rep = apps::evaluate(test, predictor, {.checkpoint = &ck});
      } else if (predictor == apps::Predictor::mean_pose) {
        if (ev_train.empty()) throw UsageError("the mean-pose predictor needs --train-data");
        require_file("dataset manifest", fs::path(ev_train) / "manifest.txt");
        const auto mean = apps::mean_normalized_pose(data::load_dataset(ev_train, {}, {.images = false, .tags = false}));
        rep = apps::evaluate(test, predictor, {.mean_pose = &mean});
      } else {
        rep = apps::evaluate(test, predictor, {});
      }
      write_json(ev_out, metrics::to_json(rep));
      std::cout << "mean EPE " << rep.mean_epe << " mm, AUC " << rep.auc << " over " << rep.poses << " poses\n";
    } else if (*sy) {
      const auto ck = open_checkpoint(sy_ckpt);
      const apps::Synthesizer syn(ck);
      const auto samples = data::load_dataset(sy_data);
      const auto& a = pick(samples, sy_pose);
      const auto& b = pick(samples, sy_content);
      if (!a.pose3d) throw SupervisionError("record " + std::to_string(sy_pose) + " has no pose3d");
      const auto s = apps::synthesize(ck, *a.pose3d, syn.content_of(b));
      fs::create_directories(sy_out);
      data::write_png(fs::path(sy_out) / "image.png", s.image);
      write_json(fs::path(sy_out) / "pose.json", {{"decoded_pose_mm", pose_json(s.pose)},
                                                  {"pose_epe_mm", metrics::mean_epe(s.pose, *a.pose3d)}});
      std::cout << "wrote " << (fs::path(sy_out) / "image.png").string() << "\n";
    } else if (*wk) {
      const auto ck = open_checkpoint(wk_ckpt);
      const auto samples = data::load_dataset(wk_data);
      const auto w = apps::latent_walk(ck, pick(samples, wk_a), pick(samples, wk_b), wk_segment, wk_steps);
      const fs::path frames = fs::path(wk_out) / "frames";
      fs::create_directories(frames);
      nlohmann::ordered_json poses = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < w.images.size(); ++i) {
        data::write_png(frames / (data::record_name(i) + ".png"), w.images[i]);
        poses.push_back(pose_json(w.poses[i]));
      }
      data::write_png(fs::path(wk_out) / "montage.png", data::montage(w.images, static_cast<int>(w.images.size())));
      write_json(fs::path(wk_out) / "poses.json", poses);
      std::cout << "wrote " << w.images.size() << " frames to " << frames.string() << "\n";
    } else if (*tf) {
      const auto ck = open_checkpoint(tf_ckpt);
      const auto samples = data::load_dataset(tf_data);
      std::vector<data::Sample> pose_donors, content_donors;
      for (auto i : tf_pose) pose_donors.push_back(pick(samples, i));
      for (auto i : tf_content) content_donors.push_back(pick(samples, i));
      for (const auto& p : pose_donors)
        if (!p.pose3d) throw SupervisionError("pose donor " + std::to_string(p.index) + " has no pose3d");
      const auto t = apps::pose_transfer(ck, pose_donors, content_donors);
      fs::create_directories(tf_out);
      data::write_png(fs::path(tf_out) / "transfer.png", t.sheet);
      for (std::size_t i = 0; i < t.transfers.size(); ++i)
        for (std::size_t j = 0; j < t.transfers[i].size(); ++j)
          data::write_png(fs::path(tf_out) / ("cell-" + std::to_string(i) + "-" + std::to_string(j) + ".png"),
                          t.transfers[i][j]);
      std::cout << "wrote " << (fs::path(tf_out) / "transfer.png").string() << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
