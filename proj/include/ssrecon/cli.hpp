#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "evaluator.hpp"
#include "iso.hpp"
#include "plot.hpp"
#include "trainer.hpp"

// Operator surface. Subcommands: gen-data, train, eval, iso, render, knn,
// part-transfer, plot. Every run writes a reproducibility stamp (config hash,
// seed, code version) beside its outputs; on failure, files created by the
// failed run are removed and the exit code is nonzero.

namespace ssr::cli {

constexpr const char* kVersion = "1.0.0";

namespace detail {

using nlohmann::json;
namespace fs = std::filesystem;

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline void write_stamp(const std::string& dir, const std::string& command, const json& config,
                        uint64_t seed) {
  json stamp;
  stamp["command"] = command;
  stamp["config_hash"] = hex64(fnv1a(config.dump()));
  stamp["config"] = config;
  stamp["seed"] = seed;
  stamp["version"] = kVersion;
  std::ofstream f(fs::path(dir) / "stamp.json");
  f << stamp.dump(2) << "\n";
  SSR_CHECK(f.good(), "cannot write stamp.json under " << dir);
}

// Snapshot of a directory tree, used to remove partial outputs on failure.
inline std::set<std::string> dir_snapshot(const std::string& dir) {
  std::set<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) out.insert(e.path().string());
  return out;
}

inline void remove_new_entries(const std::string& dir, const std::set<std::string>& before,
                               bool dir_created) {
  std::error_code ec;
  if (dir_created) {
    fs::remove_all(dir, ec);
    return;
  }
  if (!fs::exists(dir)) return;
  std::vector<std::string> added;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (!before.count(e.path().string())) added.push_back(e.path().string());
  std::sort(added.rbegin(), added.rend());  // children before parents
  for (const auto& p : added) fs::remove(p, ec);
}

inline json load_json(const std::string& path) {
  std::ifstream f(path);
  SSR_CHECK(f.good(), "cannot open " << path);
  return json::parse(f);
}

inline void restore_models(const std::string& ckpt_path, net::ReconNet& recon, net::PoseNet& pose,
                           train::TrainConfig* cfg_out = nullptr) {
  net::Checkpoint ck = net::load_checkpoint(ckpt_path);
  net::restore_from_checkpoint(ck, recon, pose);
  if (cfg_out && !ck.config_json.empty()) *cfg_out = json::parse(ck.config_json);
}

inline Array load_image_rgb(const std::string& path) {
  Array img = render::read_png(path);
  SSR_CHECK(img.ndim() == 3 && img.dim(0) == net::kImageSize && img.dim(1) == net::kImageSize,
            "expected a " << net::kImageSize << "x" << net::kImageSize << " RGB image: " << path);
  return img;
}

inline Array single_batch(const Array& img) {
  Array b({1, net::kImageSize, net::kImageSize, 3});
  std::memcpy(b.data(), img.data(), sizeof(double) * static_cast<size_t>(img.numel()));
  return b;
}

// Horizontal strip of equally sized RGB images.
inline Array hstrip(const std::vector<Array>& imgs) {
  int h = imgs[0].dim(0), w = imgs[0].dim(1);
  int n = static_cast<int>(imgs.size());
  Array out({h, n * w + (n - 1) * 2, 3}, 1.0);
  int col = 0;
  for (const Array& im : imgs) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          out.at3(y, col + x, c) = im.ndim() == 3 ? im.at3(y, x, c) : im.at2(y, x);
    col += w + 2;
  }
  return out;
}

// ---------------------------------------------------------------------------
// subcommand bodies (throw on failure)

struct GenDataArgs {
  std::string config_path, out;
  uint64_t seed = 1;
  int train = -1, val = -1, test = -1;
};

inline void cmd_gen_data(const GenDataArgs& a) {
  data::GenConfig cfg;
  if (!a.config_path.empty()) cfg = load_json(a.config_path).get<data::GenConfig>();
  cfg.seed = a.seed;
  if (a.train >= 0) cfg.train_count = a.train;
  if (a.val >= 0) cfg.val_count = a.val;
  if (a.test >= 0) cfg.test_count = a.test;
  data::generate_dataset(cfg, a.out);
  write_stamp(a.out, "gen-data", json(cfg), cfg.seed);
}

struct TrainArgs {
  std::string data, out, config_path, preset = "cc", lr_preset;
  uint64_t seed = 1;
  int iters = -1, freeze = -1, batch = -1, nn_n = -1, val_every = -1, ckpt_every = -1;
  double lr = -1;
};

inline train::TrainConfig make_train_config(const TrainArgs& a) {
  train::TrainConfig cfg;
  if (!a.config_path.empty()) cfg = load_json(a.config_path).get<train::TrainConfig>();
  if (!a.preset.empty()) train::apply_preset(cfg, a.preset);
  cfg.seed = a.seed;
  if (a.iters >= 0) cfg.total_iters = a.iters;
  if (a.freeze >= 0) cfg.freeze_iter = a.freeze;
  if (a.batch >= 1) cfg.batch_size = a.batch;
  if (a.nn_n >= 0) cfg.nn_per_step = a.nn_n;
  if (a.val_every >= 0) cfg.val_every = a.val_every;
  if (a.ckpt_every >= 0) cfg.ckpt_every = a.ckpt_every;
  if (a.lr > 0) cfg.lr = a.lr;
  // learning rate presets: the main paper states 5e-5, the supplement 5e-4
  if (a.lr_preset == "paper-main") cfg.lr = 5e-5;
  if (a.lr_preset == "paper-supp") cfg.lr = 5e-4;
  return cfg;
}

inline void cmd_train(const TrainArgs& a) {
  data::Dataset ds = data::Dataset::load(a.data);
  train::TrainConfig cfg = make_train_config(a);
  std::filesystem::create_directories(a.out);
  write_stamp(a.out, "train", json(cfg), cfg.seed);
  train::Trainer trainer(cfg, ds, a.out);
  trainer.run();
}

struct EvalArgs {
  std::string ckpt, data, split = "val", report;
  bool no_emd = false;
  double align_step = 1.0;
};

inline json eval_report(const net::ReconNet& recon, const net::PoseNet& pose,
                        const data::Dataset& ds, data::Split split, bool with_emd,
                        double align_step) {
  // alignment always comes from the validation split
  eval::Alignment align = eval::global_align(recon, ds, data::Split::kVal, align_step);
  eval::ShapeMetrics shape = eval::eval_reconstruction(recon, ds, split, align, with_emd);
  eval::PoseMetrics pm = eval::eval_pose(pose, ds, split, align);
  double color = eval::eval_color(recon, ds, split);

  json rep;
  rep["split"] = data::split_name(split);
  rep["alignment"] = {{"azimuth_deg", align.azimuth_deg},
                      {"flipped", align.flipped},
                      {"val_chamfer100", align.mean_chamfer100}};
  rep["chamfer100"] = {{"mean", shape.mean_chamfer100}, {"per_instance", shape.chamfer100}};
  if (with_emd)
    rep["emd100"] = {{"mean", shape.mean_emd100},
                     {"per_instance", shape.emd100},
                     {"approximate", shape.emd_approximate},
                     {"gap_bound", shape.emd_gap_bound}};
  rep["pose"] = {{"median_error_noflip", pm.median_noflip},
                 {"median_error_flip", pm.median_flip},
                 {"accuracy_noflip", pm.accuracy_noflip},
                 {"accuracy_flip", pm.accuracy_flip},
                 {"count", pm.count}};
  rep["color_l2"] = color;

  // per-category breakdown + prediction diagnostics
  std::vector<geom::PointCloud> preds = eval::predict_split(recon, ds, split);
  const auto& dcfg = ds.config();
  json cats = json::object();
  for (int c = 0; c < 3; ++c) {
    std::vector<int> subset;
    for (int i = 0; i < ds.count(split); ++i)
      if (static_cast<int>(ds.category(split, i)) == c) subset.push_back(i);
    if (subset.empty()) continue;
    double mean_ch = 0;
    for (int i : subset) {
      Array gt = eval::gt_points_1024(ds, split, i);
      mean_ch += eval::chamfer100(eval::apply_rotation(align.rot, preds[static_cast<size_t>(i)].points), gt);
    }
    mean_ch /= static_cast<double>(subset.size());
    eval::PoseMetrics cpm = eval::eval_pose(pose, ds, split, align, &subset);
    cats[data::category_name(static_cast<data::Category>(c))] = {
        {"count", subset.size()},
        {"chamfer100", mean_ch},
        {"pose_median_error_flip", cpm.median_flip},
        {"pose_median_error_noflip", cpm.median_noflip},
        {"pose_accuracy_flip", cpm.accuracy_flip}};
  }
  rep["categories"] = cats;

  double mean_sym = 0, az_mean = 0, az_m2 = 0;
  std::vector<double> azimuths;
  for (int i = 0; i < ds.count(split); ++i) {
    mean_sym += loss::symmetry_loss(preds[static_cast<size_t>(i)].points);
    Array img = single_batch(ds.image(split, i));
    azimuths.push_back(
        net::pose_forward_plain(pose, img, dcfg.elev_min, dcfg.elev_max, dcfg.distance)[0]
            .azimuth_deg);
  }
  mean_sym /= ds.count(split);
  for (double a : azimuths) az_mean += a;
  az_mean /= static_cast<double>(azimuths.size());
  for (double a : azimuths) az_m2 += (a - az_mean) * (a - az_mean);
  rep["mean_symmetry_loss"] = mean_sym;
  rep["pred_azimuth_stddev"] = std::sqrt(az_m2 / static_cast<double>(azimuths.size()));
  return rep;
}

inline void cmd_eval(const EvalArgs& a) {
  net::ReconNet recon;
  net::PoseNet pose;
  train::TrainConfig tcfg;
  restore_models(a.ckpt, recon, pose, &tcfg);
  data::Dataset ds = data::Dataset::load(a.data);
  data::Split split = data::Split::kVal;
  if (a.split == "test") split = data::Split::kTest;
  else if (a.split == "train") split = data::Split::kTrain;
  else SSR_CHECK(a.split == "val", "eval: unknown split " << a.split);

  json rep = eval_report(recon, pose, ds, split, !a.no_emd, a.align_step);
  rep["checkpoint"] = a.ckpt;
  std::filesystem::create_directories(fs::path(a.report).parent_path().empty()
                                          ? "."
                                          : fs::path(a.report).parent_path().string());
  std::ofstream f(a.report);
  f << rep.dump(2) << "\n";
  SSR_CHECK(f.good(), "eval: cannot write report " << a.report);
  json stamp_cfg = {{"ckpt", a.ckpt}, {"split", a.split}};
  write_stamp(fs::path(a.report).parent_path().empty()
                  ? "."
                  : fs::path(a.report).parent_path().string(),
              "eval", stamp_cfg, tcfg.seed);
}

struct IsoArgs {
  std::string ckpt, data, out, split = "test";
  int sample_id = 0;
  int count = 1;
  int steps = 50;
  double lr = 1e-4, lambda = 500.0, kappa = 500.0;
};

inline void cmd_iso(const IsoArgs& a) {
  net::ReconNet recon;
  net::PoseNet pose;
  restore_models(a.ckpt, recon, pose);
  data::Dataset ds = data::Dataset::load(a.data);
  data::Split split = a.split == "val" ? data::Split::kVal : data::Split::kTest;
  const auto& dcfg = ds.config();
  iso::IsoConfig cfg;
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.lambda_reg = a.lambda;
  cfg.kappa_sym = a.kappa;

  std::filesystem::create_directories(a.out);
  json all = json::array();
  for (int s = 0; s < a.count; ++s) {
    int id = a.sample_id + s;
    SSR_CHECK(id < ds.count(split), "iso: sample " << id << " out of range");
    iso::IsoResult res =
        iso::optimize(recon, pose, ds.image(split, id), ds.mask(split, id), dcfg.cam, dcfg.render,
                      dcfg.elev_min, dcfg.elev_max, dcfg.distance, cfg);
    std::string stem = a.out + "/sample_" + std::to_string(id);
    geom::write_ply(stem + "_before.ply", res.initial);
    geom::write_ply(stem + "_after.ply", res.optimized);
    json r = {{"sample", id},
              {"ok", res.report.ok},
              {"mask_iou_before", res.report.mask_iou_before},
              {"mask_iou_after", res.report.mask_iou_after},
              {"chamfer100_drift", res.report.chamfer100_drift},
              {"objective_first", res.report.objective_first},
              {"objective_last", res.report.objective_last}};
    std::ofstream f(stem + "_report.json");
    f << r.dump(2) << "\n";
    all.push_back(r);
  }
  double iou_before = 0, iou_after = 0, drift = 0;
  for (const auto& r : all) {
    iou_before += r.at("mask_iou_before").get<double>();
    iou_after += r.at("mask_iou_after").get<double>();
    drift += r.at("chamfer100_drift").get<double>();
  }
  json summary = {{"count", a.count},
                  {"mean_mask_iou_before", iou_before / a.count},
                  {"mean_mask_iou_after", iou_after / a.count},
                  {"mean_chamfer100_drift", drift / a.count},
                  {"samples", all}};
  std::ofstream f(a.out + "/iso_summary.json");
  f << summary.dump(2) << "\n";
  json stamp_cfg = {{"ckpt", a.ckpt}, {"steps", a.steps}, {"lambda", a.lambda}, {"kappa", a.kappa}};
  write_stamp(a.out, "iso", stamp_cfg, 0);
}

struct RenderArgs {
  std::string ckpt, image, data, out;
  int sample_id = -1;
  std::string split = "test";
};

inline void cmd_render(const RenderArgs& a) {
  net::ReconNet recon;
  net::PoseNet pose;
  restore_models(a.ckpt, recon, pose);
  render::CameraIntrinsics cam;
  render::RenderParams rp;
  double elev_min = -20, elev_max = 40, distance = 2.0;
  Array input;
  if (!a.image.empty()) {
    input = load_image_rgb(a.image);
  } else {
    data::Dataset ds = data::Dataset::load(a.data);
    const auto& dcfg = ds.config();
    cam = dcfg.cam;
    rp = dcfg.render;
    elev_min = dcfg.elev_min;
    elev_max = dcfg.elev_max;
    distance = dcfg.distance;
    data::Split split = a.split == "val" ? data::Split::kVal
                        : a.split == "train" ? data::Split::kTrain
                                             : data::Split::kTest;
    SSR_CHECK(a.sample_id >= 0 && a.sample_id < ds.count(split), "render: bad --sample-id");
    input = ds.image(split, a.sample_id);
  }
  std::filesystem::create_directories(a.out);
  Array batch = single_batch(input);
  net::ReconOutPlain out = net::recon_forward_plain(recon, batch);
  geom::PointCloud pc;
  pc.points = out.points.reshaped({net::kNumPoints, 3});
  pc.colors = out.colors.reshaped({net::kNumPoints, 3});
  geom::write_ply(a.out + "/reconstruction.ply", pc);
  geom::Viewpoint vp = net::pose_forward_plain(pose, batch, elev_min, elev_max, distance)[0];

  std::vector<Array> strip;
  strip.push_back(input);
  strip.push_back(render::render_color(pc.points, *pc.colors, vp, cam, rp));
  strip.push_back(render::render_mask(pc.points, vp, cam, rp.sigma));
  for (double az_off : {90.0, 180.0, 270.0}) {
    geom::Viewpoint v2 = vp;
    v2.azimuth_deg = std::fmod(vp.azimuth_deg + az_off, 360.0);
    strip.push_back(render::render_color(pc.points, *pc.colors, v2, cam, rp));
  }
  render::write_png_rgb(a.out + "/views.png", hstrip(strip));
  json pose_j = {{"azimuth_deg", vp.azimuth_deg}, {"elevation_deg", vp.elevation_deg}};
  std::ofstream f(a.out + "/predicted_pose.json");
  f << pose_j.dump(2) << "\n";
  write_stamp(a.out, "render", json{{"ckpt", a.ckpt}}, 0);
}

struct KnnArgs {
  std::string ckpt, data, out;
  int query_id = 0;
  int k = 5;
};

inline void cmd_knn(const KnnArgs& a) {
  net::ReconNet recon;
  net::PoseNet pose;
  restore_models(a.ckpt, recon, pose);
  data::Dataset ds = data::Dataset::load(a.data);
  data::KnnIndex index = data::build_knn_index(recon, ds);
  SSR_CHECK(a.query_id >= 0 && a.query_id < index.size(), "knn: bad --query-id");
  std::vector<int> nbрs;
  std::vector<int> nbs = index.query(index.row(a.query_id), a.k, a.query_id);

  std::filesystem::create_directories(a.out);
  data::save_knn_index(a.out + "/knn_index.bin", index);
  std::vector<Array> strip;
  strip.push_back(ds.image(data::Split::kTrain, a.query_id));
  json ids = json::array();
  int same_cat = 0;
  for (int nb : nbs) {
    strip.push_back(ds.image(data::Split::kTrain, nb));
    ids.push_back(nb);
    same_cat += ds.category(data::Split::kTrain, nb) == ds.category(data::Split::kTrain, a.query_id);
  }
  render::write_png_rgb(a.out + "/neighbours.png", hstrip(strip));
  json rep = {{"query", a.query_id},
              {"neighbours", ids},
              {"same_category_fraction", static_cast<double>(same_cat) / a.k}};
  std::ofstream f(a.out + "/knn_report.json");
  f << rep.dump(2) << "\n";
  write_stamp(a.out, "knn", json{{"ckpt", a.ckpt}, {"k", a.k}}, 0);
}

struct PartTransferArgs {
  std::string ckpt, data, out, reference_labels;
  int reference_id = 0;
  std::string split = "test";
};

inline void cmd_part_transfer(const PartTransferArgs& a) {
  net::ReconNet recon;
  net::PoseNet pose;
  restore_models(a.ckpt, recon, pose);
  data::Dataset ds = data::Dataset::load(a.data);
  data::Split split = a.split == "val" ? data::Split::kVal : data::Split::kTest;
  std::filesystem::create_directories(a.out);

  // reference labeling: from a JSON file, or derived from one instance's GT
  std::vector<int> ref_labels;
  int num_parts = 0;
  if (!a.reference_labels.empty()) {
    ref_labels = load_json(a.reference_labels).get<std::vector<int>>();
    for (int l : ref_labels) num_parts = std::max(num_parts, l + 1);
  } else {
    Array img = single_batch(ds.image(split, a.reference_id));
    net::ReconOutPlain out = net::recon_forward_plain(recon, img);
    const geom::PointCloud& gt = ds.gt_cloud(split, a.reference_id);
    ref_labels = eval::nearest_gt_parts(out.points.reshaped({net::kNumPoints, 3}), gt.points,
                                        ds.gt_parts(split, a.reference_id));
    num_parts = ds.num_parts(split, a.reference_id);
  }
  SSR_CHECK(static_cast<int>(ref_labels.size()) == net::kNumPoints,
            "part-transfer: need exactly " << net::kNumPoints << " labels");

  std::vector<geom::PointCloud> preds = eval::predict_split(recon, ds, split);
  auto transferred = eval::transfer_part_labels(ref_labels, preds);

  // fixed part palette
  auto part_color = [](int p) {
    static const double palette[8][3] = {{0.9, 0.2, 0.2}, {0.2, 0.5, 0.9}, {0.2, 0.8, 0.3},
                                         {0.9, 0.7, 0.1}, {0.7, 0.3, 0.8}, {0.1, 0.8, 0.8},
                                         {0.5, 0.5, 0.5}, {0.9, 0.5, 0.7}};
    return palette[p % 8];
  };
  json per_instance = json::array();
  double mean_iou = 0;
  int iou_count = 0;
  for (int i = 0; i < ds.count(split); ++i) {
    geom::PointCloud labeled = preds[static_cast<size_t>(i)];
    labeled.colors = Array({net::kNumPoints, 3});
    for (int p = 0; p < net::kNumPoints; ++p) {
      const double* c = part_color(transferred[static_cast<size_t>(i)][static_cast<size_t>(p)]);
      for (int ch = 0; ch < 3; ++ch) labeled.colors->at2(p, ch) = c[ch];
    }
    geom::write_ply(a.out + "/labeled_" + std::to_string(i) + ".ply", labeled);
    // same-category instances: compare against nearest-GT-part labels
    if (ds.category(split, i) == ds.category(split, a.reference_id)) {
      std::vector<int> gt_labels =
          eval::nearest_gt_parts(preds[static_cast<size_t>(i)].points,
                                 ds.gt_cloud(split, i).points, ds.gt_parts(split, i));
      double iou = eval::part_label_iou(transferred[static_cast<size_t>(i)], gt_labels,
                                        std::max(num_parts, ds.num_parts(split, i)));
      mean_iou += iou;
      ++iou_count;
      per_instance.push_back({{"instance", i}, {"part_iou", iou}});
    }
  }
  json rep = {{"reference_id", a.reference_id},
              {"mean_part_iou_same_category", iou_count ? mean_iou / iou_count : 0.0},
              {"evaluated", iou_count},
              {"per_instance", per_instance}};
  std::ofstream f(a.out + "/part_transfer_report.json");
  f << rep.dump(2) << "\n";
  write_stamp(a.out, "part-transfer", json{{"ckpt", a.ckpt}}, 0);
}

struct PlotArgs {
  std::string log, out, columns = "recon_total,l_img,l_mask,val_chamfer100";
  bool log_scale = true;
};

inline void cmd_plot(const PlotArgs& a) {
  std::ifstream f(a.log);
  SSR_CHECK(f.good(), "plot: cannot open " << a.log);
  std::string header;
  std::getline(f, header);
  std::vector<std::string> cols;
  {
    std::istringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  std::vector<std::string> wanted;
  {
    std::istringstream ss(a.columns);
    std::string tok;
    while (std::getline(ss, tok, ',')) wanted.push_back(tok);
  }
  std::vector<plot::Series> series(wanted.size());
  for (size_t i = 0; i < wanted.size(); ++i) series[i].name = wanted[i];
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> vals;
    std::istringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) vals.push_back(tok);
    vals.resize(cols.size());
    double iter = std::atof(vals[0].c_str());
    for (size_t wi = 0; wi < wanted.size(); ++wi)
      for (size_t c = 0; c < cols.size(); ++c)
        if (cols[c] == wanted[wi] && c < vals.size() && !vals[c].empty()) {
          series[wi].x.push_back(iter);
          series[wi].y.push_back(std::atof(vals[c].c_str()));
        }
  }
  std::vector<plot::Series> nonempty;
  for (auto& s : series)
    if (!s.x.empty()) nonempty.push_back(std::move(s));
  SSR_CHECK(!nonempty.empty(), "plot: no matching data columns in " << a.log);
  plot::render_plot(a.out, nonempty, 900, 600, a.log_scale);
}

}  // namespace detail

// Returns the process exit code. Splitting this from main() lets tests drive
// the full CLI in-process.
inline int run(std::vector<std::string> args) {
  CLI::App app{"self-supervised single-image point-cloud reconstruction"};
  app.require_subcommand(1);

  detail::GenDataArgs gd;
  auto* c_gd = app.add_subcommand("gen-data", "generate the procedural dataset");
  c_gd->add_option("--config", gd.config_path, "GenConfig JSON file");
  c_gd->add_option("--out", gd.out, "output directory")->required();
  c_gd->add_option("--seed", gd.seed, "master seed");
  c_gd->add_option("--train", gd.train, "train instance count");
  c_gd->add_option("--val", gd.val, "val instance count");
  c_gd->add_option("--test", gd.test, "test instance count");

  detail::TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "train a model");
  c_tr->add_option("--data", tr.data, "dataset directory")->required();
  c_tr->add_option("--out", tr.out, "run output directory")->required();
  c_tr->add_option("--config", tr.config_path, "TrainConfig JSON file");
  c_tr->add_option("--preset", tr.preset, "no-cc | cc | nn | nn-sym")
      ->check(CLI::IsMember({"no-cc", "cc", "nn", "nn-sym"}));
  c_tr->add_option("--seed", tr.seed, "training seed");
  c_tr->add_option("--iters", tr.iters, "total iterations");
  c_tr->add_option("--freeze", tr.freeze, "pose-freeze iteration");
  c_tr->add_option("--batch", tr.batch, "batch size");
  c_tr->add_option("--lr", tr.lr, "learning rate");
  c_tr->add_option("--lr-preset", tr.lr_preset, "paper-main (5e-5) | paper-supp (5e-4)")
      ->check(CLI::IsMember({"paper-main", "paper-supp"}));
  c_tr->add_option("--nn-n", tr.nn_n, "neighbours sampled per step");
  c_tr->add_option("--val-every", tr.val_every, "validation interval");
  c_tr->add_option("--ckpt-every", tr.ckpt_every, "checkpoint interval");

  detail::EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "evaluate a checkpoint");
  c_ev->add_option("--ckpt", ev.ckpt, "checkpoint file")->required();
  c_ev->add_option("--data", ev.data, "dataset directory")->required();
  c_ev->add_option("--split", ev.split, "train | val | test");
  c_ev->add_option("--report", ev.report, "output report JSON")->required();
  c_ev->add_flag("--no-emd", ev.no_emd, "skip the EMD metric");
  c_ev->add_option("--align-step", ev.align_step, "alignment grid step, degrees");

  detail::IsoArgs is;
  auto* c_is = app.add_subcommand("iso", "inference-stage optimization");
  c_is->add_option("--ckpt", is.ckpt, "checkpoint file")->required();
  c_is->add_option("--data", is.data, "dataset directory")->required();
  c_is->add_option("--out", is.out, "output directory")->required();
  c_is->add_option("--split", is.split, "val | test");
  c_is->add_option("--sample-id", is.sample_id, "first sample index");
  c_is->add_option("--count", is.count, "number of consecutive samples");
  c_is->add_option("--steps", is.steps, "optimization steps");
  c_is->add_option("--lr", is.lr, "learning rate");
  c_is->add_option("--lambda", is.lambda, "drift regularizer weight");
  c_is->add_option("--kappa", is.kappa, "symmetry weight");

  detail::RenderArgs rd;
  auto* c_rd = app.add_subcommand("render", "reconstruct and render one image");
  c_rd->add_option("--ckpt", rd.ckpt, "checkpoint file")->required();
  c_rd->add_option("--image", rd.image, "input PNG (64x64 RGB)");
  c_rd->add_option("--data", rd.data, "dataset directory (with --sample-id)");
  c_rd->add_option("--sample-id", rd.sample_id, "dataset sample to reconstruct");
  c_rd->add_option("--split", rd.split, "train | val | test");
  c_rd->add_option("--out", rd.out, "output directory")->required();

  detail::KnnArgs kn;
  auto* c_kn = app.add_subcommand("knn", "embedding nearest neighbours");
  c_kn->add_option("--ckpt", kn.ckpt, "checkpoint file")->required();
  c_kn->add_option("--data", kn.data, "dataset directory")->required();
  c_kn->add_option("--query-id", kn.query_id, "train instance to query");
  c_kn->add_option("--k", kn.k, "neighbour count");
  c_kn->add_option("--out", kn.out, "output directory")->required();

  detail::PartTransferArgs pt;
  auto* c_pt = app.add_subcommand("part-transfer", "transfer part labels by point index");
  c_pt->add_option("--ckpt", pt.ckpt, "checkpoint file")->required();
  c_pt->add_option("--data", pt.data, "dataset directory")->required();
  c_pt->add_option("--reference-labels", pt.reference_labels, "JSON with 1024 labels");
  c_pt->add_option("--reference-id", pt.reference_id, "instance to derive labels from");
  c_pt->add_option("--split", pt.split, "val | test");
  c_pt->add_option("--out", pt.out, "output directory")->required();

  detail::PlotArgs pl;
  auto* c_pl = app.add_subcommand("plot", "plot training curves from a CSV log");
  c_pl->add_option("--log", pl.log, "train_log.csv")->required();
  c_pl->add_option("--out", pl.out, "output PNG")->required();
  c_pl->add_option("--columns", pl.columns, "comma-separated column names");
  c_pl->add_flag("!--no-log-scale", pl.log_scale, "linear y axis");

  std::vector<const char*> argv;
  argv.push_back("ssrecon");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  // output dir bookkeeping for failure cleanup
  std::string out_dir;
  if (c_gd->parsed()) out_dir = gd.out;
  if (c_tr->parsed()) out_dir = tr.out;
  if (c_is->parsed()) out_dir = is.out;
  if (c_rd->parsed()) out_dir = rd.out;
  if (c_kn->parsed()) out_dir = kn.out;
  if (c_pt->parsed()) out_dir = pt.out;
  bool dir_existed = out_dir.empty() || std::filesystem::exists(out_dir);
  std::set<std::string> before =
      out_dir.empty() ? std::set<std::string>{} : detail::dir_snapshot(out_dir);

  try {
    if (c_gd->parsed()) detail::cmd_gen_data(gd);
    if (c_tr->parsed()) detail::cmd_train(tr);
    if (c_ev->parsed()) detail::cmd_eval(ev);
    if (c_is->parsed()) detail::cmd_iso(is);
    if (c_rd->parsed()) detail::cmd_render(rd);
    if (c_kn->parsed()) detail::cmd_knn(kn);
    if (c_pt->parsed()) detail::cmd_part_transfer(pt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!out_dir.empty()) detail::remove_new_entries(out_dir, before, !dir_existed);
    return 1;
  }
  if (c_pl->parsed()) {
    try {
      detail::cmd_plot(pl);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      std::error_code ec;
      std::filesystem::remove(pl.out, ec);
      return 1;
    }
  }
  return 0;
}

}  // namespace ssr::cli
