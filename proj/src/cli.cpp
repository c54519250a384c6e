#include "ripnerf/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ripnerf/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ripnerf::cli {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

RunConfig finish_resolve(std::string json_text, const CliOptions& opts) {
  json_text = apply_overrides(json_text, opts.overrides);
  RunConfig cfg = parse_run_config(json_text);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.workers = *opts.workers;
  if (!opts.out.empty()) cfg.out = opts.out;
  cfg.train.seed = cfg.seed;
  cfg.train.workers = cfg.workers;
  return cfg;
}

void emit_resolved_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  write_text(cfg.out + "/config.resolved.json", run_config_to_json(cfg, 2) + "\n");
}

Image target_rgb_image(const ViewRecord& view, const Vec3& background) {
  Image out = Image::zeros(view.image.height, view.image.width, 3);
  for (int y = 0; y < view.image.height; ++y) {
    for (int x = 0; x < view.image.width; ++x) {
      const Vec3 t = view_target_rgb(view, y, x, background);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = t[c];
    }
  }
  return out;
}

Image rgb_of(const Image& rgba) {
  Image out = Image::zeros(rgba.height, rgba.width, 3);
  for (int y = 0; y < rgba.height; ++y) {
    for (int x = 0; x < rgba.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = rgba.at(y, x, c);
    }
  }
  return out;
}

}  // namespace

RunConfig resolve_config(const CliOptions& opts) {
  std::string base = opts.config_path.empty() ? run_config_to_json(default_run_config())
                                              : read_file(opts.config_path);
  return finish_resolve(std::move(base), opts);
}

int cmd_train(const CliOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  emit_resolved_config(cfg);
  const std::string snapshot = run_config_to_json(cfg);
  const std::string identity = run_config_identity(cfg);

  const LoadedData data = load_data(cfg);
  Trainer trainer(cfg.field, cfg.train, cfg.render_options());
  if (!opts.checkpoint.empty()) {
    load_checkpoint(opts.checkpoint, trainer, identity);
    log << "resumed from " << opts.checkpoint << " at iteration " << trainer.iteration << "\n";
  }

  std::ostringstream loss_csv;
  loss_csv << "iteration,loss\n";
  std::ostringstream val_csv;
  val_csv << "iteration,psnr\n";

  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.iteration < cfg.train.iterations) {
    const double loss = trainer.step(data.train);
    loss_csv << trainer.iteration << "," << format_double(loss) << "\n";
    if (cfg.train.validate_every > 0 && trainer.iteration % cfg.train.validate_every == 0 &&
        !data.eval.views.empty()) {
      const auto& view = data.eval.views.front();
      const Image render = render_image(trainer.model, trainer.grid, trainer.render_opts,
                                        view.camera, 1, cfg.workers);
      val_csv << trainer.iteration << ","
              << format_double(psnr(rgb_of(render), target_rgb_image(view, cfg.render.background)))
              << "\n";
    }
    if (cfg.train.checkpoint_every > 0 && trainer.iteration % cfg.train.checkpoint_every == 0 &&
        trainer.iteration < cfg.train.iterations) {
      save_checkpoint(cfg.out + "/checkpoint_" + std::to_string(trainer.iteration) + ".ripf",
                      trainer, snapshot, identity);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  save_checkpoint(cfg.out + "/checkpoint.ripf", trainer, snapshot, identity);
  write_text(cfg.out + "/loss.csv", loss_csv.str());
  if (cfg.train.validate_every > 0) write_text(cfg.out + "/val.csv", val_csv.str());
  log << "trained " << cfg.train.iterations << " iterations in " << format_double(secs)
      << " s; checkpoint at " << cfg.out << "/checkpoint.ripf\n";
  return 0;
}

namespace {

// Rebuilds a trainer in the exact configuration a checkpoint was written
// with; CLI overrides still apply for out/workers/seed.
RunConfig config_from_checkpoint(const CliOptions& opts) {
  if (opts.checkpoint.empty()) throw UsageError("--checkpoint is required");
  std::string base = opts.config_path.empty() ? read_checkpoint_config(opts.checkpoint)
                                              : read_file(opts.config_path);
  return finish_resolve(std::move(base), opts);
}

Trainer load_trainer(const RunConfig& cfg, const std::string& checkpoint) {
  Trainer trainer(cfg.field, cfg.train, cfg.render_options());
  load_checkpoint(checkpoint, trainer, run_config_identity(cfg));
  return trainer;
}

}  // namespace

int cmd_render(const CliOptions& opts, std::ostream& log) {
  RunConfig cfg = config_from_checkpoint(opts);
  emit_resolved_config(cfg);
  Trainer trainer = load_trainer(cfg, opts.checkpoint);
  const LoadedData data = load_data(cfg);
  const ScaledDataset& split = cfg.render.split == "train" ? data.train : data.eval;

  int written = 0;
  for (size_t i = 0; i < split.views.size(); ++i) {
    const auto& view = split.views[i];
    const Image img = render_image(trainer.model, trainer.grid, trainer.render_opts, view.camera,
                                   1, cfg.workers);
    char name[128];
    std::snprintf(name, sizeof(name), "%s/render_%s_%03zu_s%d.png", cfg.out.c_str(),
                  cfg.render.split.c_str(), i, view.scale);
    save_png(name, img);
    ++written;
  }
  log << "wrote " << written << " renders to " << cfg.out << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opts, std::ostream& log) {
  RunConfig cfg = config_from_checkpoint(opts);
  emit_resolved_config(cfg);
  Trainer trainer = load_trainer(cfg, opts.checkpoint);
  const LoadedData data = load_data(cfg);
  const ScaledDataset& split = cfg.render.split == "train" ? data.train : data.eval;

  const auto t0 = std::chrono::steady_clock::now();
  MetricReport report;
  for (int scale : cfg.data.scales) {
    ScaleMetrics sm;
    sm.scale = scale;
    std::vector<double> psnrs, ssims;
    for (const auto& view : split.views) {
      if (view.scale != scale) continue;
      const Image render = render_image(trainer.model, trainer.grid, trainer.render_opts,
                                        view.camera, 1, cfg.workers);
      const Image pred = rgb_of(render);
      const Image target = target_rgb_image(view, cfg.render.background);
      psnrs.push_back(psnr(pred, target));
      if (view.image.width >= 11 && view.image.height >= 11) {
        ssims.push_back(ssim(pred, target));
      }
    }
    if (psnrs.empty()) continue;
    for (double v : psnrs) sm.psnr += v;
    sm.psnr /= static_cast<double>(psnrs.size());
    if (!ssims.empty()) {
      for (double v : ssims) sm.ssim += v;
      sm.ssim /= static_cast<double>(ssims.size());
    }
    sm.view_count = static_cast<int>(psnrs.size());
    report.per_scale.push_back(sm);
  }
  report.finalize();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.param_count = learnable_param_count(trainer.model);
  report.model_bytes = serialized_param_bytes(trainer.model);

  json out;
  out["config"] = json::parse(run_config_to_json(cfg));
  out["split"] = cfg.render.split;
  out["per_scale"] = json::array();
  for (const auto& s : report.per_scale) {
    out["per_scale"].push_back({{"scale", s.scale},
                                {"psnr", s.psnr},
                                {"ssim", s.ssim},
                                {"views", s.view_count}});
  }
  out["avg_psnr"] = report.avg_psnr;
  out["avg_ssim"] = report.avg_ssim;
  out["wall_seconds"] = report.wall_seconds;
  out["param_count"] = report.param_count;
  out["model_bytes"] = report.model_bytes;
  write_text(cfg.out + "/metrics.json", out.dump(2) + "\n");
  write_text(cfg.out + "/metrics.txt", report.to_table());
  log << report.to_table();
  return 0;
}

int cmd_fixtures(const CliOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  emit_resolved_config(cfg);
  if (cfg.data.kind != DataKind::Toy) throw UsageError("fixtures requires data.kind = toy");

  ToySceneSpec spec;
  if (!cfg.data.toy_spec.empty()) {
    spec = parse_toy_spec(read_file(cfg.data.toy_spec));
  } else if (cfg.data.toy_builtin == "striped_box") {
    spec = striped_box_toy_spec();
  } else {
    spec = default_toy_spec();
  }
  const ToyScene scene = toy_scene(spec);
  write_blender(cfg.out, scene.train);
  write_blender(cfg.out, scene.eval);
  write_text(cfg.out + "/toy_spec.json", toy_spec_to_json(spec) + "\n");
  log << "wrote toy fixtures (" << scene.train.views.size() << " train / "
      << scene.eval.views.size() << " eval views) to " << cfg.out << "\n";
  return 0;
}

AmbiguityResult run_ambiguity(const RunConfig& cfg, int random_pairs) {
  const PlaneSet cube = platonic_plane_set(PlatonicSolid::Cube);
  const PlaneSet icosa = platonic_plane_set(PlatonicSolid::Icosahedron);
  int levels_x = 1, levels_y = 1;
  while ((1 << (levels_x - 1)) < cfg.field.grid_w) ++levels_x;
  while ((1 << (levels_y - 1)) < cfg.field.grid_h) ++levels_y;

  auto tuples = [&](const PlaneSet& planes, const Gaussian3& g) {
    std::vector<RipmapQuery> out;
    for (const auto& plane : planes.planes) {
      out.push_back(derive_query(project_gaussian(g, plane), cfg.field.scene_radius,
                                 cfg.field.mass_factor, levels_x, levels_y));
    }
    return out;
  };
  auto collides = [&](const PlaneSet& planes, const Gaussian3& a, const Gaussian3& b) {
    const auto ta = tuples(planes, a);
    const auto tb = tuples(planes, b);
    for (size_t i = 0; i < ta.size(); ++i) {
      if ((ta[i].pos - tb[i].pos).cwiseAbs().maxCoeff() > 1e-9) return false;
      if ((ta[i].level - tb[i].level).cwiseAbs().maxCoeff() > 0.05) return false;
    }
    return true;
  };

  auto elongated = [](const Vec3& axis, double major, double minor) {
    Mat3 cov = minor * Mat3::Identity();
    cov += (major - minor) * (axis.normalized() * axis.normalized().transpose());
    return cov;
  };

  std::vector<std::pair<Gaussian3, Gaussian3>> pairs;
  {
    // canonical body-diagonal ellipsoid pair
    Gaussian3 a, b;
    a.cov = elongated(Vec3(1, 1, 1), 4.0, 0.04);
    b.cov = elongated(Vec3(1, -1, 1), 4.0, 0.04);
    pairs.emplace_back(a, b);
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(-0.4, 0.4);
  while (static_cast<int>(pairs.size()) < random_pairs + 1) {
    const Vec3 axis = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
    Gaussian3 a;
    a.cov = elongated(axis, 4.0, 0.04);
    a.mean = cfg.field.scene_radius * Vec3(uni(rng), uni(rng), uni(rng));
    // conjugating by diag(1,-1,-1)... diag(1,-1,1) flips the xy/yz entries,
    // which every cube plane is blind to
    Gaussian3 b = a;
    b.cov(0, 1) = -b.cov(0, 1);
    b.cov(1, 0) = -b.cov(1, 0);
    b.cov(1, 2) = -b.cov(1, 2);
    b.cov(2, 1) = -b.cov(2, 1);
    if (std::abs(a.cov(0, 1)) + std::abs(a.cov(1, 2)) < 0.2) continue;  // self-mirrored
    pairs.emplace_back(a, b);
  }

  AmbiguityResult res;
  res.pairs = static_cast<int>(pairs.size());
  for (const auto& [a, b] : pairs) {
    const bool on_cube = collides(cube, a, b);
    const bool on_icosa = collides(icosa, a, b);
    if (on_cube) ++res.cube_collisions;
    if (on_icosa) ++res.icosa_collisions;
    if (on_cube && on_icosa) ++res.unseparated;
  }
  return res;
}

int cmd_ambiguity(const CliOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  const AmbiguityResult res = run_ambiguity(cfg);
  log << "pairs: " << res.pairs << "\n";
  log << "cube collisions: " << res.cube_collisions << "/" << res.pairs << " (fraction "
      << format_double(static_cast<double>(res.cube_collisions) / res.pairs) << ")\n";
  log << "icosahedron collisions: " << res.icosa_collisions << "/" << res.pairs << " (fraction "
      << format_double(static_cast<double>(res.icosa_collisions) / res.pairs) << ")\n";
  if (res.cube_collisions > 0) log << "cube: collision (tri-plane conflates these pairs)\n";
  if (res.unseparated > 0) {
    log << "icosahedron: FAILED to separate " << res.unseparated << " cube-conflated pairs\n";
    return 1;
  }
  log << "icosahedron: separation (all cube-conflated pairs distinguished)\n";
  return 0;
}

int run_cli(int argc, const char* const* argv, std::ostream& log, std::ostream& err) {
  CLI::App app{"ripnerf: anti-aliased radiance fields on ripmap-encoded Platonic solids"};
  app.require_subcommand(1);

  CliOptions opts;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--set", opts.overrides, "dotted-path override, e.g. field.channels=16");
    sub->add_option("--seed", opts.seed, "RNG seed override");
    sub->add_option("--workers", opts.workers, "worker thread count (0 = hardware)");
    sub->add_option("--out", opts.out, "output directory override");
    return sub;
  };
  CLI::App* train = add_common(app.add_subcommand("train", "optimize a field"));
  train->add_option("--checkpoint", opts.checkpoint, "resume from checkpoint");
  CLI::App* render = add_common(app.add_subcommand("render", "render views from a checkpoint"));
  render->add_option("--checkpoint", opts.checkpoint, "checkpoint to render")->required();
  CLI::App* eval = add_common(app.add_subcommand("eval", "PSNR/SSIM tables from a checkpoint"));
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint to evaluate")->required();
  add_common(app.add_subcommand("fixtures", "write toy datasets in the Blender convention"));
  add_common(app.add_subcommand("ambiguity", "cube vs icosahedron query-collision experiment"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "E_USAGE " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(opts, log);
    if (app.got_subcommand("render")) return cmd_render(opts, log);
    if (app.got_subcommand("eval")) return cmd_eval(opts, log);
    if (app.got_subcommand("fixtures")) return cmd_fixtures(opts, log);
    if (app.got_subcommand("ambiguity")) return cmd_ambiguity(opts, log);
  } catch (const UsageError& e) {
    err << "E_USAGE " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "E_DATA " << e.what() << "\n";
    return 3;
  } catch (const NumericAbort& e) {
    err << "E_NUMERIC " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "E_INTERNAL " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace ripnerf::cli
