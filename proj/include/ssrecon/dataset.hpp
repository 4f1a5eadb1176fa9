#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "losses.hpp"
#include "ply.hpp"
#include "png_io.hpp"
#include "renderer.hpp"
#include "shapes.hpp"

// Procedural desk-scale dataset: one rendered view per instance. Images and
// masks are rendered with the project renderer from the GT cloud at the GT
// view, so the rendering model is self-consistent. GT clouds/views/parts are
// for evaluation only; access to them is counted per split so the training
// hygiene test can prove the training path never touches them.

namespace ssr::data {

using nlohmann::json;

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

struct GenConfig {
  int train_count = 500;
  int val_count = 50;
  int test_count = 50;
  int gt_points = 2048;
  double elev_min = -20.0;
  double elev_max = 40.0;
  double distance = 2.0;
  uint64_t seed = 1;
  render::CameraIntrinsics cam;
  render::RenderParams render;
};

inline void to_json(json& j, const GenConfig& c) {
  j = json{{"train_count", c.train_count},
           {"val_count", c.val_count},
           {"test_count", c.test_count},
           {"gt_points", c.gt_points},
           {"elev_min", c.elev_min},
           {"elev_max", c.elev_max},
           {"distance", c.distance},
           {"seed", c.seed},
           {"image_size", c.cam.h},
           {"focal", c.cam.f},
           {"sigma", c.render.sigma},
           {"tau_depth", c.render.tau_depth}};
}

inline void from_json(const json& j, GenConfig& c) {
  c = GenConfig{};
  j.at("train_count").get_to(c.train_count);
  j.at("val_count").get_to(c.val_count);
  j.at("test_count").get_to(c.test_count);
  j.at("gt_points").get_to(c.gt_points);
  j.at("elev_min").get_to(c.elev_min);
  j.at("elev_max").get_to(c.elev_max);
  j.at("distance").get_to(c.distance);
  j.at("seed").get_to(c.seed);
  c.cam.h = c.cam.w = j.at("image_size").get<int>();
  c.cam.cx = c.cam.cy = 0.5 * (c.cam.h - 1);
  j.at("focal").get_to(c.cam.f);
  j.at("sigma").get_to(c.render.sigma);
  j.at("tau_depth").get_to(c.render.tau_depth);
}

// ---------------------------------------------------------------------------
// generation

namespace detail {

inline std::string inst_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", id);
  return buf;
}

}  // namespace detail

// Builds the whole directory: per-instance image/mask PNG, GT PLY, GT pose +
// part labels JSON, plus manifest.json. Deterministic in (config, seed): each
// instance uses an rng derived from the master seed by global index.
inline void generate_dataset(const GenConfig& config, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  SSR_CHECK(fs::is_directory(out_dir), "generate_dataset: cannot create " << out_dir);

  Rng master(config.seed);
  json manifest;
  manifest["config"] = config;
  json instances = json::array();

  int global_id = 0;
  const int counts[3] = {config.train_count, config.val_count, config.test_count};
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < counts[s]; ++i, ++global_id) {
      Rng rng = master.derive(static_cast<uint64_t>(global_id));
      Category cat = static_cast<Category>(global_id % 3);
      ShapeSpec spec = make_shape(cat, rng);
      SampledShape shape = sample_shape_surface(spec, config.gt_points, rng);
      geom::Viewpoint view =
          geom::sample_random_viewpoint(rng, config.elev_min, config.elev_max, config.distance);

      Array img = render::render_color(shape.cloud.points, *shape.cloud.colors, view, config.cam,
                                       config.render);
      Array soft = render::render_mask(shape.cloud.points, view, config.cam, config.render.sigma);
      Array mask({config.cam.h, config.cam.w});
      int64_t positive = 0;
      for (int64_t p = 0; p < soft.numel(); ++p) {
        mask[p] = soft[p] >= 0.5 ? 1.0 : 0.0;
        positive += mask[p] > 0.5;
      }
      double frac = static_cast<double>(positive) / static_cast<double>(mask.numel());
      SSR_CHECK(frac >= 0.01 && frac <= 0.90,
                "generate_dataset: instance " << global_id << " mask coverage " << frac
                                              << " outside [0.01, 0.90]");
      SSR_CHECK(loss::symmetry_loss(shape.cloud.points) <= 1e-9,
                "generate_dataset: instance " << global_id << " GT cloud not xz-symmetric");

      std::string stem = detail::inst_stem(global_id);
      fs::path base = fs::path(out_dir) / stem;
      render::write_png_rgb(base.string() + "_image.png", img);
      render::write_png_gray(base.string() + "_mask.png", mask);
      geom::write_ply(base.string() + "_gt.ply", shape.cloud);
      json gt;
      gt["azimuth_deg"] = view.azimuth_deg;
      gt["elevation_deg"] = view.elevation_deg;
      gt["distance"] = view.distance;
      gt["category"] = static_cast<int>(cat);
      gt["parts"] = shape.part_labels;
      gt["num_parts"] = spec.num_parts;
      std::ofstream gf(base.string() + "_gt.json");
      gf << gt.dump(2) << "\n";
      SSR_CHECK(gf.good(), "generate_dataset: cannot write gt json for " << stem);

      json e;
      e["id"] = global_id;
      e["split"] = split_name(static_cast<Split>(s));
      e["category"] = static_cast<int>(cat);
      e["stem"] = stem;
      instances.push_back(e);
    }
  }
  manifest["instances"] = instances;
  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  mf << manifest.dump(2) << "\n";
  SSR_CHECK(mf.good(), "generate_dataset: cannot write manifest");
}

// ---------------------------------------------------------------------------
// loading

struct Instance {
  int id = -1;
  Category category = Category::kChairLike;
  Array image;           // [64,64,3]
  Array mask;            // [64,64] binary
  Array mask_dist2;      // cached squared EDT of the mask positives
  Array mask_positives;  // cached [P,2] positive pixel centers
  // evaluation-only fields, read through the audited accessors
  geom::PointCloud gt_cloud;
  geom::Viewpoint gt_view;
  std::vector<int> gt_parts;
  int num_parts = 0;
};

class Dataset {
 public:
  static Dataset load(const std::string& dir) {
    namespace fs = std::filesystem;
    Dataset ds;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    SSR_CHECK(mf.good(), "Dataset::load: no manifest.json under " << dir);
    json manifest = json::parse(mf);
    ds.config_ = manifest.at("config").get<GenConfig>();
    for (const auto& e : manifest.at("instances")) {
      Split split = Split::kTrain;
      std::string sname = e.at("split").get<std::string>();
      if (sname == "val") split = Split::kVal;
      if (sname == "test") split = Split::kTest;
      std::string stem = e.at("stem").get<std::string>();
      fs::path base = fs::path(dir) / stem;

      Instance inst;
      inst.id = e.at("id").get<int>();
      inst.category = static_cast<Category>(e.at("category").get<int>());
      inst.image = render::read_png(base.string() + "_image.png");
      Array m = render::read_png(base.string() + "_mask.png");
      SSR_CHECK(m.ndim() == 2, "Dataset::load: mask must be grayscale");
      inst.mask = Array(m.shape());
      for (int64_t p = 0; p < m.numel(); ++p) inst.mask[p] = m[p] >= 0.5 ? 1.0 : 0.0;
      inst.mask_dist2 = loss::mask_distance_sq(inst.mask);
      inst.mask_positives = loss::mask_positive_pixels(inst.mask);

      inst.gt_cloud = geom::read_ply(base.string() + "_gt.ply");
      std::ifstream gf(base.string() + "_gt.json");
      SSR_CHECK(gf.good(), "Dataset::load: missing gt json for " << stem);
      json gt = json::parse(gf);
      inst.gt_view.azimuth_deg = gt.at("azimuth_deg").get<double>();
      inst.gt_view.elevation_deg = gt.at("elevation_deg").get<double>();
      inst.gt_view.distance = gt.at("distance").get<double>();
      inst.gt_parts = gt.at("parts").get<std::vector<int>>();
      inst.num_parts = gt.at("num_parts").get<int>();

      ds.splits_[static_cast<size_t>(split)].push_back(std::move(inst));
    }
    return ds;
  }

  const GenConfig& config() const { return config_; }
  int count(Split s) const { return static_cast<int>(splits_[static_cast<size_t>(s)].size()); }

  // trainer-visible record: image + mask only
  const Array& image(Split s, int i) const { return inst(s, i).image; }
  const Array& mask(Split s, int i) const { return inst(s, i).mask; }
  const Array& mask_dist2(Split s, int i) const { return inst(s, i).mask_dist2; }
  const Array& mask_positives(Split s, int i) const { return inst(s, i).mask_positives; }
  loss::GtMaskRef mask_ref(Split s, int i) const {
    const Instance& in = inst(s, i);
    return {&in.mask, &in.mask_dist2, &in.mask_positives};
  }
  Category category(Split s, int i) const { return inst(s, i).category; }
  int instance_id(Split s, int i) const { return inst(s, i).id; }

  // evaluation-only accessors; every call is counted against the split
  const geom::PointCloud& gt_cloud(Split s, int i) const {
    ++gt_reads_[static_cast<size_t>(s)];
    return inst(s, i).gt_cloud;
  }
  const geom::Viewpoint& gt_view(Split s, int i) const {
    ++gt_reads_[static_cast<size_t>(s)];
    return inst(s, i).gt_view;
  }
  const std::vector<int>& gt_parts(Split s, int i) const {
    ++gt_reads_[static_cast<size_t>(s)];
    return inst(s, i).gt_parts;
  }
  int num_parts(Split s, int i) const {
    ++gt_reads_[static_cast<size_t>(s)];
    return inst(s, i).num_parts;
  }

  uint64_t gt_read_count(Split s) const { return gt_reads_[static_cast<size_t>(s)]; }

 private:
  const Instance& inst(Split s, int i) const {
    const auto& v = splits_[static_cast<size_t>(s)];
    SSR_CHECK(i >= 0 && i < static_cast<int>(v.size()),
              "Dataset: index " << i << " out of range for split " << split_name(s));
    return v[static_cast<size_t>(i)];
  }

  GenConfig config_;
  std::array<std::vector<Instance>, 3> splits_;
  mutable std::array<uint64_t, 3> gt_reads_{0, 0, 0};
};

}  // namespace ssr::data
