#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "evaluator.hpp"
#include "knn.hpp"
#include "losses.hpp"

// Training procedure. Phase 1 (iteration < freeze): the reconstruction
// network trains with projection + cycle (+ optional NN / symmetry) losses
// while the pose network trains on the pseudo ground-truth pairs from the
// sampled cycle viewpoints. At the freeze point the pose network stops
// updating, the cycle weights beta/rho drop to zero and alpha is reduced;
// the reconstruction network then fine-tunes on projection losses alone
// (plus NN/symmetry when enabled). The nearest-neighbour index is built once
// at the phase-1 midpoint from a frozen encoder snapshot.

namespace ssr::train {

using nlohmann::json;

struct TrainConfig {
  int k_views = 4;          // cycle projections per sample
  int n_points = 1024;
  loss::LossWeights weights;
  double lr = 5e-5;         // main-paper value; the supplement preset is 5e-4
  int total_iters = 40000;
  int freeze_iter = 20000;
  int batch_size = 8;
  uint64_t seed = 1;
  bool nn_enabled = false;
  int nn_pool = 5;          // nearest-neighbour candidates per instance
  int nn_per_step = 2;      // neighbours sampled per step
  bool sym_enabled = false;
  bool cycle_stop_gradient = false;  // cut the gradient through re-encoded cycles
  double alpha_phase2 = 10.0;
  // affinity term scale inside the training mask objective; 1/(h*w) is the
  // normalized-coordinate form, 1.0 the literal raw-pixel sum
  double affinity_scale = 1.0 / 4096.0;
  // long-range mask term acts on projected points (attraction); false uses
  // the literal mask-value affinity
  bool point_space_affinity = true;
  // per-point chamfer in the cycle/symmetry terms (the scale the weights
  // beta/kappa are calibrated for); false keeps the literal sums
  bool chamfer_per_point = true;
  int log_every = 50;
  int val_every = 2000;
  int ckpt_every = 10000;
  std::string preset = "cc";
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"k_views", c.k_views},
           {"n_points", c.n_points},
           {"alpha", c.weights.alpha},
           {"beta", c.weights.beta},
           {"gamma", c.weights.gamma},
           {"rho", c.weights.rho},
           {"eta_nn", c.weights.eta_nn},
           {"kappa_sym", c.weights.kappa_sym},
           {"lambda_reg", c.weights.lambda_reg},
           {"kappa_iso_sym", c.weights.kappa_iso_sym},
           {"lr", c.lr},
           {"total_iters", c.total_iters},
           {"freeze_iter", c.freeze_iter},
           {"batch_size", c.batch_size},
           {"seed", c.seed},
           {"nn_enabled", c.nn_enabled},
           {"nn_pool", c.nn_pool},
           {"nn_per_step", c.nn_per_step},
           {"sym_enabled", c.sym_enabled},
           {"cycle_stop_gradient", c.cycle_stop_gradient},
           {"alpha_phase2", c.alpha_phase2},
           {"affinity_scale", c.affinity_scale},
           {"chamfer_per_point", c.chamfer_per_point},
           {"point_space_affinity", c.point_space_affinity},
           {"log_every", c.log_every},
           {"val_every", c.val_every},
           {"ckpt_every", c.ckpt_every},
           {"preset", c.preset}};
}

inline void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  auto opt = [&](const char* key, auto& dst) {
    if (j.contains(key)) j.at(key).get_to(dst);
  };
  opt("k_views", c.k_views);
  opt("n_points", c.n_points);
  opt("alpha", c.weights.alpha);
  opt("beta", c.weights.beta);
  opt("gamma", c.weights.gamma);
  opt("rho", c.weights.rho);
  opt("eta_nn", c.weights.eta_nn);
  opt("kappa_sym", c.weights.kappa_sym);
  opt("lambda_reg", c.weights.lambda_reg);
  opt("kappa_iso_sym", c.weights.kappa_iso_sym);
  opt("lr", c.lr);
  opt("total_iters", c.total_iters);
  opt("freeze_iter", c.freeze_iter);
  opt("batch_size", c.batch_size);
  opt("seed", c.seed);
  opt("nn_enabled", c.nn_enabled);
  opt("nn_pool", c.nn_pool);
  opt("nn_per_step", c.nn_per_step);
  opt("sym_enabled", c.sym_enabled);
  opt("cycle_stop_gradient", c.cycle_stop_gradient);
  opt("alpha_phase2", c.alpha_phase2);
  opt("affinity_scale", c.affinity_scale);
  opt("chamfer_per_point", c.chamfer_per_point);
  opt("point_space_affinity", c.point_space_affinity);
  opt("log_every", c.log_every);
  opt("val_every", c.val_every);
  opt("ckpt_every", c.ckpt_every);
  opt("preset", c.preset);
}

// Ablation presets:
//   no-cc   projection losses only, pose network untrained
//   cc      geometric + pose cycle consistency
//   nn      cc + nearest-neighbour mask consistency
//   nn-sym  nn + symmetry loss
inline void apply_preset(TrainConfig& c, const std::string& preset) {
  c.preset = preset;
  if (preset == "no-cc") {
    c.weights.beta = 0.0;
    c.weights.rho = 0.0;
    c.weights.gamma = 0.0;
    c.nn_enabled = false;
    c.sym_enabled = false;
  } else if (preset == "cc") {
    c.nn_enabled = false;
    c.sym_enabled = false;
  } else if (preset == "nn") {
    c.nn_enabled = true;
    c.sym_enabled = false;
  } else if (preset == "nn-sym") {
    c.nn_enabled = true;
    c.sym_enabled = true;
  } else {
    SSR_CHECK(false, "unknown preset '" << preset << "' (want no-cc, cc, nn, nn-sym)");
  }
}

struct StepReport {
  double recon_total = 0;
  double pose_total = 0;
  double l_img = 0, l_mask = 0, l_cycle = 0, l_pose = 0, l_nn = 0, l_sym = 0;
  bool finite = true;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::Dataset& ds, std::string out_dir = "")
      : cfg_(std::move(cfg)), ds_(ds), out_dir_(std::move(out_dir)), rng_(0) {
    cfg_.weights.validate();
    SSR_CHECK(cfg_.k_views >= 1, "k_views must be >= 1");
    SSR_CHECK(cfg_.freeze_iter <= cfg_.total_iters, "freeze_iter must be <= total_iters");
    SSR_CHECK(ds_.count(data::Split::kTrain) >= 1, "empty train split");
    Rng root(cfg_.seed);
    Rng ir = root.derive(1);
    recon_ = net::init_recon(ir);
    Rng pr = root.derive(2);
    pose_ = net::init_pose(pr);
    rng_ = root.derive(3);
    collect_params();
    adam_recon_.init(recon_params_);
    adam_pose_.init(pose_params_);
    if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
  }

  const TrainConfig& config() const { return cfg_; }
  net::ReconNet& recon() { return recon_; }
  net::PoseNet& pose() { return pose_; }
  const std::optional<data::KnnIndex>& knn_index() const { return knn_; }
  const std::vector<double>& val_history() const { return val_history_; }

  void build_nn_index() {
    knn_snapshot_ = recon_;
    knn_ = data::build_knn_index(*knn_snapshot_, ds_);
    int n = ds_.count(data::Split::kTrain);
    int pool = std::min(cfg_.nn_pool, n - 1);
    nn_candidates_.assign(static_cast<size_t>(n), {});
    for (int i = 0; i < n; ++i)
      nn_candidates_[static_cast<size_t>(i)] = knn_->query(knn_->row(i), pool, i);
    if (!out_dir_.empty()) {
      data::save_knn_index(out_dir_ + "/knn_index.bin", *knn_);
      save_ckpt("ckpt_nn_snapshot.bin");
    }
  }

  StepReport step(int iter) {
    const loss::LossWeights& w = cfg_.weights;
    const bool phase1 = iter < cfg_.freeze_iter;
    const bool cycle_active = phase1 && (w.beta > 0 || w.rho > 0);
    const bool pose_on_tape = phase1 && (w.gamma > 0 || w.rho > 0);
    const bool nn_active = cfg_.nn_enabled && knn_.has_value() && w.eta_nn > 0;
    const bool sym_active = cfg_.sym_enabled && w.kappa_sym > 0;
    const auto& dcfg = ds_.config();
    const int b = cfg_.batch_size;
    const int k = cfg_.k_views;

    std::vector<int> batch_ids(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) batch_ids[static_cast<size_t>(i)] = next_index();

    ad::Tape tape;
    net::Binding bind_r = net::bind(tape, recon_);
    net::Binding bind_p;
    if (pose_on_tape) bind_p = net::bind(tape, pose_);

    Array images({b, net::kImageSize, net::kImageSize, 3});
    int64_t per = images.numel() / b;
    for (int i = 0; i < b; ++i)
      std::memcpy(images.data() + i * per,
                  ds_.image(data::Split::kTrain, batch_ids[static_cast<size_t>(i)]).data(),
                  sizeof(double) * static_cast<size_t>(per));
    ad::Var img_var = tape.constant_ref(&images);

    net::ReconOut ro = net::recon_forward(tape, bind_r, recon_, img_var);
    std::optional<net::PoseOut> po;
    std::vector<geom::Viewpoint> plain_views;
    if (pose_on_tape)
      po = net::pose_forward(tape, bind_p, pose_, img_var, dcfg.elev_min, dcfg.elev_max);
    else
      plain_views =
          net::pose_forward_plain(pose_, images, dcfg.elev_min, dcfg.elev_max, dcfg.distance);

    auto acc = [&](std::optional<ad::Var>& slot, ad::Var v) {
      slot = slot ? ad::add(*slot, v) : v;
    };
    // The recon-side projection losses see the predicted pose as a constant
    // and the pose-side ones see the predicted cloud as a constant; both
    // totals then depend only on their own network, the cross-gradients the
    // update routing would discard are structurally zero, and one backward
    // pass covers both objectives.
    std::optional<ad::Var> li_sum, lm_sum, lg_sum, lnn_sum, lsym_sum, lpose_sum;
    std::optional<ad::Var> li_pose_sum, lm_pose_sum;
    std::vector<ad::Var> sample_points;
    std::vector<ad::Var> cycle_imgs;
    std::vector<geom::Viewpoint> cycle_views;

    for (int i = 0; i < b; ++i) {
      int id = batch_ids[static_cast<size_t>(i)];
      ad::Var pts = ad::slice_dim0(ro.points, i);
      ad::Var col = ad::slice_dim0(ro.colors, i);
      sample_points.push_back(pts);
      const Array& gt_img = ds_.image(data::Split::kTrain, id);
      loss::GtMaskRef gt_mask = ds_.mask_ref(data::Split::kTrain, id);
      loss::MaskObjective mask_obj{cfg_.affinity_scale, cfg_.point_space_affinity};

      ad::Var uvd = pose_on_tape
                        ? render::project_points(
                              tape, pts, ad::detach(ad::slice_dim0(po->azimuth, i)),
                              ad::detach(ad::slice_dim0(po->elevation, i)), dcfg.distance,
                              dcfg.cam)
                        : render::project_points(tape, pts, plain_views[static_cast<size_t>(i)],
                                                 dcfg.cam);
      ad::Var img = render::render_color_from_uvd(tape, uvd, col, dcfg.cam, dcfg.render);
      acc(li_sum, loss::image_loss(tape, img, gt_img));
      acc(lm_sum, loss::projection_mask_loss(tape, uvd, dcfg.cam, dcfg.render.sigma, gt_mask,
                                             mask_obj));

      if (pose_on_tape && w.gamma > 0) {
        ad::Var uvd_p = render::project_points(tape, ad::detach(pts),
                                               ad::slice_dim0(po->azimuth, i),
                                               ad::slice_dim0(po->elevation, i), dcfg.distance,
                                               dcfg.cam);
        ad::Var img_p = render::render_color_from_uvd(tape, uvd_p, ad::detach(col), dcfg.cam,
                                                      dcfg.render);
        acc(li_pose_sum, loss::image_loss(tape, img_p, gt_img));
        acc(lm_pose_sum, loss::projection_mask_loss(tape, uvd_p, dcfg.cam, dcfg.render.sigma,
                                                    gt_mask, mask_obj));
      }

      if (cycle_active)
        for (int j = 0; j < k; ++j) {
          geom::Viewpoint v =
              geom::sample_random_viewpoint(rng_, dcfg.elev_min, dcfg.elev_max, dcfg.distance);
          ad::Var uvd_j = render::project_points(tape, pts, v, dcfg.cam);
          cycle_imgs.push_back(render::render_color_from_uvd(tape, uvd_j, col, dcfg.cam,
                                                             dcfg.render));
          cycle_views.push_back(v);
        }

      if (nn_active) {
        const auto& cand = nn_candidates_[static_cast<size_t>(id)];
        std::vector<int> pool(cand.begin(), cand.end());
        rng_.shuffle(pool);
        int n_nb = std::min<int>(cfg_.nn_per_step, static_cast<int>(pool.size()));
        if (n_nb > 0) {
          Array nb_imgs({n_nb, net::kImageSize, net::kImageSize, 3});
          for (int j = 0; j < n_nb; ++j)
            std::memcpy(nb_imgs.data() + j * per,
                        ds_.image(data::Split::kTrain, pool[static_cast<size_t>(j)]).data(),
                        sizeof(double) * static_cast<size_t>(per));
          // neighbour poses are pseudo-fixed: plain forward, no gradient
          std::vector<geom::Viewpoint> nb_views = net::pose_forward_plain(
              pose_, nb_imgs, dcfg.elev_min, dcfg.elev_max, dcfg.distance);
          std::vector<loss::NeighborRef> refs;
          for (int j = 0; j < n_nb; ++j)
            refs.push_back({nb_views[static_cast<size_t>(j)],
                            ds_.mask_ref(data::Split::kTrain, pool[static_cast<size_t>(j)])});
          acc(lnn_sum, loss::nn_consistency_loss(tape, pts, refs, dcfg.cam, dcfg.render.sigma,
                                                 loss::MaskObjective{cfg_.affinity_scale,
                                                                     cfg_.point_space_affinity}));
        }
      }

      if (sym_active)
        acc(lsym_sum, loss::symmetry_loss(tape, pts, nullptr, cfg_.chamfer_per_point));
    }

    if (cycle_active) {
      ad::Var stacked = ad::stack0(cycle_imgs);  // [b*k, H, W, 3]
      ad::Var enc_in = cfg_.cycle_stop_gradient ? ad::detach(stacked) : stacked;
      net::ReconOut cyc = net::recon_forward(tape, bind_r, recon_, enc_in);
      std::optional<net::PoseOut> pcyc;
      if (w.rho > 0)
        pcyc = net::pose_forward(tape, bind_p, pose_, ad::detach(stacked), dcfg.elev_min,
                                 dcfg.elev_max);
      int idx = 0;
      for (int i = 0; i < b; ++i) {
        std::vector<ad::Var> cycled;
        std::vector<loss::PosePair> pose_pairs;
        std::vector<geom::Viewpoint> sampled;
        for (int j = 0; j < k; ++j, ++idx) {
          cycled.push_back(ad::slice_dim0(cyc.points, idx));
          if (pcyc) {
            pose_pairs.push_back({ad::slice_dim0(pcyc->azimuth, idx),
                                  ad::slice_dim0(pcyc->elevation, idx)});
            sampled.push_back(cycle_views[static_cast<size_t>(idx)]);
          }
        }
        if (w.beta > 0)
          acc(lg_sum, loss::geometric_cycle_loss(tape, sample_points[static_cast<size_t>(i)],
                                                 cycled, cfg_.chamfer_per_point));
        if (pcyc) acc(lpose_sum, loss::pose_cycle_loss(tape, sampled, pose_pairs));
      }
    }

    const double inv_b = 1.0 / static_cast<double>(b);
    auto mean_of = [&](std::optional<ad::Var>& v) { return ad::scale(*v, inv_b); };
    ad::Var l_img = mean_of(li_sum);
    ad::Var l_mask = mean_of(lm_sum);
    std::optional<ad::Var> l_cycle, l_nn, l_sym, l_pose;
    if (lg_sum) l_cycle = mean_of(lg_sum);
    if (lnn_sum) l_nn = mean_of(lnn_sum);
    if (lsym_sum) l_sym = mean_of(lsym_sum);
    if (lpose_sum) l_pose = mean_of(lpose_sum);

    loss::LossWeights eff = w;
    if (!phase1) {
      eff.alpha = cfg_.alpha_phase2;
      eff.beta = 0.0;
      eff.rho = 0.0;
    }
    ad::Var recon_total = loss::recon_total(tape, eff, l_img, l_mask, l_cycle, l_nn, l_sym);
    std::optional<ad::Var> pose_total;
    if (pose_on_tape) {
      ad::Var li_p = ad::scale(*li_pose_sum, inv_b);
      ad::Var lm_p = ad::scale(*lm_pose_sum, inv_b);
      pose_total = loss::pose_total(tape, eff, li_p, lm_p, l_pose);
    }

    StepReport rep;
    rep.recon_total = recon_total.val().item();
    rep.pose_total = pose_total ? pose_total->val().item() : 0.0;
    rep.l_img = l_img.val().item();
    rep.l_mask = l_mask.val().item();
    rep.l_cycle = l_cycle ? l_cycle->val().item() : 0.0;
    rep.l_pose = l_pose ? l_pose->val().item() : 0.0;
    rep.l_nn = l_nn ? l_nn->val().item() : 0.0;
    rep.l_sym = l_sym ? l_sym->val().item() : 0.0;
    rep.finite = std::isfinite(rep.recon_total) && std::isfinite(rep.pose_total);
    if (!rep.finite) {
      std::ostringstream oss;
      oss << "non-finite loss at iteration " << iter << ": recon_total=" << rep.recon_total
          << " pose_total=" << rep.pose_total << " l_img=" << rep.l_img
          << " l_mask=" << rep.l_mask << " l_cycle=" << rep.l_cycle << " l_pose=" << rep.l_pose
          << " l_nn=" << rep.l_nn << " l_sym=" << rep.l_sym;
      std::fprintf(stderr, "[trainer] step aborted: %s\n", oss.str().c_str());
      ++bad_streak_;
      SSR_CHECK(bad_streak_ <= 20, "training diverged: " << oss.str());
      return rep;
    }
    bad_streak_ = 0;

    // recon_total depends only on reconstruction parameters and pose_total
    // only on pose parameters (detach routing above), so one backward pass
    // yields both gradient sets.
    ad::Var objective = pose_total ? ad::add(recon_total, *pose_total) : recon_total;
    tape.backward(objective);
    adam_recon_.step(recon_params_, grad_ptrs(bind_r, recon_params_), cfg_.lr);
    if (pose_total) adam_pose_.step(pose_params_, grad_ptrs(bind_p, pose_params_), cfg_.lr);
    return rep;
  }

  // Full schedule with CSV logging, periodic checkpoints and val metrics.
  void run() {
    std::ofstream log;
    if (!out_dir_.empty()) {
      log.open(out_dir_ + "/train_log.csv");
      log << "iter,recon_total,l_img,l_mask,l_cycle,l_pose,l_nn,l_sym,pose_total,val_chamfer100\n";
    }
    for (int iter = 0; iter < cfg_.total_iters; ++iter) {
      if (cfg_.nn_enabled && !knn_ && iter >= cfg_.freeze_iter / 2) build_nn_index();
      StepReport rep = step(iter);
      bool want_val = cfg_.val_every > 0 &&
                      (iter % cfg_.val_every == 0 || iter == cfg_.total_iters - 1);
      std::string val_field;
      if (want_val && ds_.count(data::Split::kVal) > 0) {
        double v = eval::quick_val_chamfer(recon_, ds_, data::Split::kVal);
        val_history_.push_back(v);
        val_field = std::to_string(v);
      }
      if (log.is_open() &&
          (iter % cfg_.log_every == 0 || want_val || iter == cfg_.total_iters - 1)) {
        log << iter << ',' << rep.recon_total << ',' << rep.l_img << ',' << rep.l_mask << ','
            << rep.l_cycle << ',' << rep.l_pose << ',' << rep.l_nn << ',' << rep.l_sym << ','
            << rep.pose_total << ',' << val_field << '\n';
        log.flush();
      }
      if (!out_dir_.empty() && cfg_.ckpt_every > 0 && iter > 0 && iter % cfg_.ckpt_every == 0)
        save_ckpt("ckpt_" + std::to_string(iter) + ".bin");
    }
    if (!out_dir_.empty()) save_ckpt("ckpt_final.bin");
  }

  void save_ckpt(const std::string& name) {
    json j = cfg_;
    net::Checkpoint ck = net::make_checkpoint(recon_, pose_, j.dump(2));
    save_checkpoint(out_dir_.empty() ? name : out_dir_ + "/" + name, ck);
  }

 private:
  void collect_params() {
    net::visit_params(recon_, [&](const std::string&, Array& a) { recon_params_.push_back(&a); });
    net::visit_params(pose_, [&](const std::string&, Array& a) { pose_params_.push_back(&a); });
  }

  int next_index() {
    int n = ds_.count(data::Split::kTrain);
    if (order_.empty() || cursor_ >= order_.size()) {
      order_.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  // In-place gradient views; valid while the step's tape is alive.
  std::vector<const Array*> grad_ptrs(const net::Binding& bind,
                                      const std::vector<Array*>& params) {
    std::vector<const Array*> out;
    out.reserve(params.size());
    for (Array* p : params) out.push_back(&bind(*p).grad());
    return out;
  }

  TrainConfig cfg_;
  const data::Dataset& ds_;
  std::string out_dir_;
  net::ReconNet recon_;
  net::PoseNet pose_;
  std::vector<Array*> recon_params_, pose_params_;
  AdamState adam_recon_, adam_pose_;
  Rng rng_;
  std::vector<int> order_;
  size_t cursor_ = 0;
  std::optional<net::ReconNet> knn_snapshot_;
  std::optional<data::KnnIndex> knn_;
  std::vector<std::vector<int>> nn_candidates_;
  std::vector<double> val_history_;
  int bad_streak_ = 0;
};

}  // namespace ssr::train
