// actrack: command-line front end for the tracking pipeline.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "actrack/act.hpp"
#include "actrack/dti.hpp"
#include "actrack/metrics.hpp"
#include "actrack/nifti.hpp"
#include "actrack/odf.hpp"
#include "actrack/phantom.hpp"
#include "actrack/robustness.hpp"
#include "actrack/tck.hpp"
#include "actrack/tracker.hpp"

namespace fs = std::filesystem;
using namespace actrack;

namespace {

// Every subcommand records its resolved options (defaults included) next to its main output.
void write_resolved_config(const CLI::App& sub, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write config '" + path + "'");
  f << "[" << sub.get_name() << "]\n" << sub.config_to_str(true, false);
}

std::string config_path_for(const std::string& output) { return output + ".config.txt"; }

// Creates the directory an output file will live in.
const std::string& ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  return path;
}

LabelGrid to_labels(const VoxelGrid& v, const std::string& what) {
  if (v.channels() != 1) throw FormatError(what + ": expected a single-channel volume");
  LabelGrid out(v.geometry(), 1, 0);
  out.set_disk_type(DataType::uint8);
  for (std::size_t i = 0; i < v.data().size(); ++i) {
    const double x = v.data()[i];
    if (!(x >= 0.0 && x <= 255.0) || x != std::floor(x)) throw FormatError(what + ": non-integer label value");
    out.data()[i] = static_cast<std::uint8_t>(x);
  }
  return out;
}

LabelGrid load_mask(const std::string& path) {
  auto m = to_labels(load_volume(path), path);
  for (auto& x : m.data()) x = x != 0;
  return m;
}

TensorField load_tensors(const std::string& path) {
  TensorField tf{load_volume(path), LabelGrid{}};
  if (tf.tensors.channels() != 6) throw FormatError(path + ": tensor volume must have 6 channels");
  tf.fit_mask = LabelGrid(tf.tensors.geometry(), 1, 0);
  tf.fit_mask.set_disk_type(DataType::uint8);
  for (std::int64_t v = 0; v < tf.tensors.voxel_count(); ++v) {
    const auto c = tf.tensors.voxel(v);
    tf.fit_mask.data()[static_cast<std::size_t>(v)] = std::any_of(c.begin(), c.end(), [](double x) { return x != 0.0; });
  }
  return tf;
}

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

struct TrackOptions {
  std::string algorithm = "act_prob";
  double step = 0.6;
  double angle = 0.0;  // 0: algorithm default
  double k = 4.0;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  int trials = 50;
  double fa_stop = 0.0;
  std::string interp = "trilinear";
  bool dodf_literal = false;
  std::size_t attempts_per_target = 1000;

  void add_to(CLI::App* sub) {
    sub->add_option("--algorithm", algorithm, "act_prob or fact")->check(CLI::IsMember({"act_prob", "fact"}));
    sub->add_option("--step", step, "step size in mm");
    sub->add_option("--angle", angle, "maximum turning angle in degrees (0: 20 for act_prob, 30 for fact)");
    sub->add_option("--k", k, "PMF sharpening exponent");
    sub->add_option("--count", count, "number of accepted streamlines");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--threads", threads, "worker threads (0: all cores)");
    sub->add_option("--trials", trials, "proposals per step before giving up");
    sub->add_option("--fa-stop", fa_stop, "FACT: stop below this FA (0 disables)");
    sub->add_option("--interp", interp, "FACT tensor lookup")->check(CLI::IsMember({"trilinear", "nearest"}));
    sub->add_flag("--dodf-literal", dodf_literal, "use exp(+u^T D^-1 u) instead of exp(-u^T D^-1 u)");
    sub->add_option("--attempts-per-target", attempts_per_target, "attempt cap as a multiple of --count");
  }

  TrackerConfig config() const {
    TrackerConfig c;
    c.algorithm = parse_algorithm(algorithm);
    c.step_mm = step;
    c.angle_deg = angle > 0.0 ? angle : TrackerConfig::default_angle(c.algorithm);
    c.k = k;
    c.target_count = count;
    c.rng_seed = seed;
    c.threads = threads;
    c.trials = trials;
    c.fact_fa_stop = fa_stop;
    c.fact_interpolation = interp == "nearest" ? Interpolation::nearest : Interpolation::trilinear;
    c.convention = dodf_literal ? DodfConvention::literal : DodfConvention::inverse;
    c.attempts_per_target = attempts_per_target;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anatomically constrained probabilistic tractography on diffusion tensor fields"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "read options from a key=value file (as written next to every output)");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "write a synthetic tensor field, 5TT map and truth mask");
  PhantomSpec ps;
  std::string ph_kind = "curved_torus", ph_out;
  std::vector<std::int64_t> ph_dims;
  int ph_b0 = 0, ph_dirs = 32;
  double ph_bval = 1000.0, ph_s0 = 1.0;
  unsigned ph_threads = 1;
  phantom->add_option("--kind", ph_kind, "straight, curved_torus or crossing")
      ->check(CLI::IsMember({"straight", "curved_torus", "crossing"}));
  phantom->add_option("--out", ph_out, "output directory")->required();
  phantom->add_option("--dims", ph_dims, "grid size (three values); omitted: fitted to the bundle")->expected(3);
  phantom->add_option("--spacing", ps.spacing_mm, "voxel size in mm");
  phantom->add_option("--radius", ps.bundle_radius_mm, "bundle radius in mm");
  phantom->add_option("--length", ps.length_mm, "straight/crossing bundle length in mm");
  phantom->add_option("--torus-radius", ps.torus_radius_mm, "centreline radius of the curved bundle in mm");
  phantom->add_option("--crossing-angle", ps.crossing_angle_deg, "angle between crossing bundles in degrees");
  phantom->add_option("--lambda-par", ps.lambda_par, "axial diffusivity in bundles (mm^2/s)");
  phantom->add_option("--lambda-perp", ps.lambda_perp, "radial diffusivity in bundles (mm^2/s)");
  phantom->add_option("--noise", ps.noise_sigma, "Rician noise sigma relative to S0 (with --b0s)");
  phantom->add_option("--seed", ps.seed, "noise seed");
  phantom->add_option("--b0s", ph_b0, "also write a dMRI series with this many b=0 volumes (0: no dMRI)");
  phantom->add_option("--dirs", ph_dirs, "diffusion directions in the dMRI series");
  phantom->add_option("--bval", ph_bval, "b-value of the dMRI series (s/mm^2)");
  phantom->add_option("--s0", ph_s0, "non-weighted signal");
  phantom->add_option("--threads", ph_threads, "worker threads");

  // fit
  auto* fit = app.add_subcommand("fit", "weighted least-squares tensor fit and scalar maps");
  std::string fit_dwi, fit_bvals, fit_bvecs, fit_mask, fit_out;
  unsigned fit_threads = 1;
  fit->add_option("--dwi", fit_dwi, "4D dMRI volume")->required()->check(CLI::ExistingFile);
  fit->add_option("--bvals", fit_bvals, "b-values file")->required()->check(CLI::ExistingFile);
  fit->add_option("--bvecs", fit_bvecs, "gradient directions file")->required()->check(CLI::ExistingFile);
  fit->add_option("--mask", fit_mask, "restrict the fit to this mask")->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "output prefix")->required();
  fit->add_option("--threads", fit_threads, "worker threads");

  // odf
  auto* odf = app.add_subcommand("odf", "dump per-voxel propagation PMFs (724 channels)");
  std::string odf_tensor, odf_out;
  double odf_k = 4.0;
  bool odf_literal = false;
  odf->add_option("--tensor", odf_tensor, "tensor volume")->required()->check(CLI::ExistingFile);
  odf->add_option("--k", odf_k, "sharpening exponent");
  odf->add_flag("--dodf-literal", odf_literal, "use exp(+u^T D^-1 u)");
  odf->add_option("--out", odf_out, "output volume")->required();

  // track
  auto* track = app.add_subcommand("track", "whole-brain tracking seeded at the GM/WM interface");
  std::string tr_tensor, tr_5tt, tr_out;
  TrackOptions tr_opts;
  track->add_option("--tensor", tr_tensor, "tensor volume")->required()->check(CLI::ExistingFile);
  track->add_option("--5tt", tr_5tt, "five-tissue-type map")->required()->check(CLI::ExistingFile);
  track->add_option("--out", tr_out, "output .tck")->required();
  tr_opts.add_to(track);

  // judge
  auto* judge = app.add_subcommand("judge", "re-apply the anatomical acceptance rules to a tractogram");
  std::string jd_tracks, jd_5tt, jd_out;
  judge->add_option("--tracks", jd_tracks, "input .tck")->required()->check(CLI::ExistingFile);
  judge->add_option("--5tt", jd_5tt, "five-tissue-type map")->required()->check(CLI::ExistingFile);
  judge->add_option("--out", jd_out, "write accepted streamlines here");

  // density
  auto* density = app.add_subcommand("density", "streamline count per voxel");
  std::string dn_tracks, dn_ref, dn_out;
  density->add_option("--tracks", dn_tracks, "input .tck")->required()->check(CLI::ExistingFile);
  density->add_option("--ref", dn_ref, "volume defining the output grid")->required()->check(CLI::ExistingFile);
  density->add_option("--out", dn_out, "output volume")->required();

  // binarize
  auto* binarize = app.add_subcommand("binarize", "threshold a density map at a percentile of its non-zero values");
  std::string bn_in, bn_out;
  double bn_pct = 0.01;
  binarize->add_option("--density", bn_in, "density volume")->required()->check(CLI::ExistingFile);
  binarize->add_option("--pct", bn_pct, "percentile as a fraction")->check(CLI::Range(0.0, 1.0));
  binarize->add_option("--out", bn_out, "output mask")->required();

  // metrics
  auto* metrics = app.add_subcommand("metrics", "DSC, HD95, ASSD and VolDiff between two masks");
  std::string mt_a, mt_b, mt_json;
  metrics->add_option("a", mt_a, "first mask")->required()->check(CLI::ExistingFile);
  metrics->add_option("b", mt_b, "second mask")->required()->check(CLI::ExistingFile);
  metrics->add_option("--json", mt_json, "append a JSON line with the results to this file");

  // filter
  auto* filter = app.add_subcommand("filter", "keep streamlines visiting all include ROIs and no exclude ROI");
  std::string ft_tracks, ft_out;
  std::vector<std::string> ft_include, ft_exclude;
  filter->add_option("--tracks", ft_tracks, "input .tck")->required()->check(CLI::ExistingFile);
  filter->add_option("--include", ft_include, "include ROI (repeatable)")->check(CLI::ExistingFile);
  filter->add_option("--exclude", ft_exclude, "exclude ROI (repeatable)")->check(CLI::ExistingFile);
  filter->add_option("--out", ft_out, "output .tck")->required();

  // robustness
  auto* robust = app.add_subcommand("robustness", "track at several angle thresholds and compare the tracts");
  std::string rb_tensor, rb_5tt, rb_out;
  std::vector<double> rb_angles;
  std::vector<std::string> rb_include;
  double rb_pct = 0.01;
  TrackOptions rb_opts;
  robust->add_option("--tensor", rb_tensor, "tensor volume")->required()->check(CLI::ExistingFile);
  robust->add_option("--5tt", rb_5tt, "five-tissue-type map")->required()->check(CLI::ExistingFile);
  robust->add_option("--out", rb_out, "output directory")->required();
  robust->add_option("--angles", rb_angles, "angle set (default 15 20 25 for act_prob, 25 30 35 for fact)");
  robust->add_option("--include", rb_include, "keep only streamlines visiting this ROI (repeatable)")
      ->check(CLI::ExistingFile);
  robust->add_option("--pct", rb_pct, "binarization percentile as a fraction")->check(CLI::Range(0.0, 1.0));
  rb_opts.add_to(robust);
  robust->remove_option(robust->get_option("--angle"));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*phantom) {
      ps.kind = parse_phantom_kind(ph_kind);
      if (!ph_dims.empty()) ps.dims = {ph_dims[0], ph_dims[1], ph_dims[2]};
      fs::create_directories(ph_out);
      const auto p = make_phantom(ps);
      const fs::path dir(ph_out);
      save_volume(p.tensors.tensors, (dir / "tensor.nii.gz").string());
      save_volume(p.tt.labels(), (dir / "5tt.nii.gz").string());
      save_volume(p.truth_mask, (dir / "truth.nii.gz").string());
      for (std::size_t i = 0; i < p.end_caps.size(); ++i) {
        save_volume(p.end_caps[i], (dir / ("cap" + std::to_string(i) + ".nii.gz")).string());
      }
      if (ph_b0 > 0) {
        const auto protocol = make_protocol(ph_b0, ph_dirs, ph_bval);
        auto dwi = synth_signal(p.tensors, protocol, ph_s0, ps.noise_sigma * ph_s0, ps.seed, ph_threads);
        save_volume(dwi, (dir / "dwi.nii.gz").string());
        save_protocol(protocol, (dir / "bvals").string(), (dir / "bvecs").string());
      }
      std::ofstream((dir / "manifest.txt").string()) << ps.manifest();
      write_resolved_config(*phantom, (dir / "config.txt").string());
      std::cout << "dims=" << p.tt.geometry().dims[0] << ',' << p.tt.geometry().dims[1] << ',' << p.tt.geometry().dims[2]
                << " truth_voxels=" << metrics_detail::count(p.truth_mask) << "\n";
    } else if (*fit) {
      const auto protocol = load_protocol(fit_bvals, fit_bvecs);
      const auto dwi = load_volume(fit_dwi);
      LabelGrid mask;
      if (!fit_mask.empty()) mask = load_mask(fit_mask);
      const auto tf = fit_wlls(dwi, protocol, fit_mask.empty() ? nullptr : &mask, fit_threads);
      const auto maps = derive_scalars(tf, fit_threads);
      save_volume(tf.tensors, ensure_parent(fit_out + "_tensor.nii.gz"));
      save_volume(maps.fa, fit_out + "_fa.nii.gz");
      save_volume(maps.md, fit_out + "_md.nii.gz");
      save_volume(maps.v1, fit_out + "_v1.nii.gz");
      save_volume(maps.dirmap, fit_out + "_dirmap.nii.gz");
      write_resolved_config(*fit, config_path_for(fit_out));
      std::cout << "masked=" << tf.masked << " nonfinite=" << tf.nonfinite << " clamped=" << maps.clamped << "\n";
    } else if (*odf) {
      const auto tf = load_tensors(odf_tensor);
      const auto& sphere = default_sphere();
      VoxelGrid out(tf.tensors.geometry(), sphere.size(), 0.0);
      const auto convention = odf_literal ? DodfConvention::literal : DodfConvention::inverse;
      std::size_t skipped = 0;
      for (std::int64_t v = 0; v < out.voxel_count(); ++v) {
        if (!tf.fit_mask.data()[static_cast<std::size_t>(v)]) continue;
        try {
          const auto pmf = pmf_from_tensor(tensor_matrix(tf.tensors.voxel(v)), sphere, odf_k, convention);
          std::copy(pmf.p.begin(), pmf.p.end(), out.voxel(v).begin());
        } catch (const DegenerateTensorError&) {
          ++skipped;
        }
      }
      save_volume(out, ensure_parent(odf_out));
      write_resolved_config(*odf, config_path_for(odf_out));
      std::cout << "directions=" << sphere.size() << " degenerate=" << skipped << "\n";
    } else if (*track) {
      const auto tf = load_tensors(tr_tensor);
      const auto tt = load_5tt(tr_5tt);
      const auto r = track_whole_brain(tf, tt, tr_opts.config());
      write_tck(r.tractogram, ensure_parent(tr_out));
      write_resolved_config(*track, config_path_for(tr_out));
      std::cout << r.stats.summary() << "\n";
    } else if (*judge) {
      const auto tracks = read_tck(jd_tracks);
      const auto tt = load_5tt(jd_5tt);
      const auto bounds = length_bounds(tt);
      TrackingStats stats;
      Tractogram kept;
      kept.properties = tracks.properties;
      for (const auto& s : tracks.streamlines) {
        ++stats.attempts;
        const auto v = judge_streamline(s.points, tt, bounds);
        if (v.accepted) {
          ++stats.accepted;
          kept.streamlines.push_back(s);
        } else {
          ++stats.rejected[v.reason];
        }
      }
      if (!jd_out.empty()) {
        write_tck(kept, ensure_parent(jd_out));
        write_resolved_config(*judge, config_path_for(jd_out));
      }
      std::cout << stats.summary() << " min_mm=" << num(bounds.min_mm) << " max_mm=" << num(bounds.max_mm) << "\n";
    } else if (*density) {
      const auto ref = load_volume(dn_ref);
      auto d = density_map(read_tck(dn_tracks), ref.geometry());
      save_volume(d, ensure_parent(dn_out));
      write_resolved_config(*density, config_path_for(dn_out));
    } else if (*binarize) {
      const auto in = load_volume(bn_in);
      DensityMap d(in.geometry(), 1, 0);
      for (std::size_t i = 0; i < d.data().size(); ++i) d.data()[i] = static_cast<std::int32_t>(std::lround(in.data()[i]));
      const auto m = binarize_percentile(d, bn_pct);
      save_volume(m, ensure_parent(bn_out));
      write_resolved_config(*binarize, config_path_for(bn_out));
      std::cout << "voxels=" << metrics_detail::count(m) << "\n";
    } else if (*metrics) {
      const auto a = load_mask(mt_a);
      const auto b = load_mask(mt_b);
      const double d = dsc(a, b), h = hd95(a, b), s = assd(a, b), v = voldiff(a, b);
      std::cout << "dsc=" << num(d) << "\nhd95=" << num(h) << "\nassd=" << num(s) << "\nvoldiff=" << num(v) << "\n";
      if (!mt_json.empty()) {
        std::ofstream f(mt_json, std::ios::app);
        f << nlohmann::json{{"a", mt_a}, {"b", mt_b}, {"dsc", d}, {"hd95", h}, {"assd", s}, {"voldiff", v}}.dump()
          << "\n";
      }
    } else if (*filter) {
      std::vector<BinaryMask> inc, exc;
      for (const auto& p : ft_include) inc.push_back(load_mask(p));
      for (const auto& p : ft_exclude) exc.push_back(load_mask(p));
      const auto tracks = read_tck(ft_tracks);
      const auto out = filter_by_rois(tracks, inc, exc);
      write_tck(out, ensure_parent(ft_out));
      write_resolved_config(*filter, config_path_for(ft_out));
      std::cout << "kept=" << out.size() << " of " << tracks.size() << "\n";
    } else if (*robust) {
      const auto tf = load_tensors(rb_tensor);
      const auto tt = load_5tt(rb_5tt);
      const auto cfg = rb_opts.config();
      if (rb_angles.empty()) rb_angles = default_robustness_angles(cfg.algorithm);
      std::vector<BinaryMask> inc;
      for (const auto& p : rb_include) inc.push_back(load_mask(p));
      const auto r = run_robustness(tf, tt, cfg, rb_angles, inc, rb_pct);
      const fs::path dir(rb_out);
      fs::create_directories(dir);
      std::ofstream report((dir / "report.txt").string());
      for (std::size_t i = 0; i < r.angles.size(); ++i) {
        save_volume(r.masks[i], (dir / ("tract_" + num(r.angles[i]) + ".nii.gz")).string());
        report << "angle=" << num(r.angles[i]) << " streamlines=" << r.retained[i]
               << " voxels=" << metrics_detail::count(r.masks[i]) << "\n";
      }
      for (const auto& p : r.pairs) {
        report << "pair=" << num(p.angle_a) << ',' << num(p.angle_b) << " dsc=" << num(p.dsc) << " hd95=" << num(p.hd95)
               << " assd=" << num(p.assd) << " voldiff=" << num(p.voldiff) << "\n";
      }
      report << "mean dsc=" << num(r.mean.dsc) << " hd95=" << num(r.mean.hd95) << " assd=" << num(r.mean.assd)
             << " voldiff=" << num(r.mean.voldiff) << "\n";
      report.close();
      write_resolved_config(*robust, (dir / "config.txt").string());
      std::cout << std::ifstream((dir / "report.txt").string()).rdbuf();
    }
  } catch (const TrackingError& e) {
    std::cerr << "error: " << e.what() << " (" << e.stats().summary() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
