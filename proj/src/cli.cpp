#include "csdpaint/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "csdpaint/binary_io.hpp"
#include "csdpaint/bridge.hpp"
#include "csdpaint/config.hpp"
#include "csdpaint/errors.hpp"
#include "csdpaint/gradcheck.hpp"
#include "csdpaint/pipeline.hpp"

namespace csdpaint {

namespace {

namespace fs = std::filesystem;

// key: value lines under --porcelain, aligned prose otherwise.
class Report {
 public:
  Report(std::ostream& out, bool porcelain) : out_(out), porcelain_(porcelain) {}

  void field(const std::string& key, const std::string& value) {
    if (porcelain_) {
      out_ << key << ": " << value << '\n';
    } else {
      out_ << "  " << key << std::string(key.size() < 22 ? 22 - key.size() : 1, ' ') << value << '\n';
    }
  }
  void field(const std::string& key, double value) { field(key, number(value)); }
  void field(const std::string& key, std::size_t value) { field(key, std::to_string(value)); }
  void heading(const std::string& text) {
    if (!porcelain_) out_ << text << '\n';
  }

  static std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }

 private:
  std::ostream& out_;
  bool porcelain_;
};

struct RunOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  bool porcelain = false;
  bool quiet = false;
};

LoadedConfig load_with_overrides(const RunOptions& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  return load_config(o.config, overrides);
}

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  LoadedConfig loaded = load_with_overrides(o);
  const fs::path out_dir = o.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw InputError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  const std::string effective = emit_yaml(loaded.effective);
  {
    std::ofstream f(out_dir / "effective_config.yaml");
    f << effective;
    if (!f) throw InputError("cannot write " + (out_dir / "effective_config.yaml").string());
  }
  if (!o.porcelain) out << "# effective config\n" << effective;

  Trainer trainer(loaded.config);
  const int total = loaded.config.iterations;
  const int every = std::max(1, total / 10);
  while (trainer.iteration() < total) {
    const StepMetrics m = trainer.step();
    if (!o.quiet && ((m.iteration + 1) % every == 0 || m.iteration + 1 == total)) {
      err << "iteration " << m.iteration + 1 << "/" << total;
      for (std::size_t i = 0; i < m.branches.size(); ++i) {
        err << "  " << to_string(m.branches[i]) << " " << Report::number(m.texture_grad_norms[i]);
      }
      err << '\n';
    }
  }
  const auto manifest = export_artifacts(trainer, out_dir, {"effective_config.yaml"});
  Report r(out, o.porcelain);
  r.field("config", (out_dir / "effective_config.yaml").string());
  r.field("files", manifest.size());
  r.field("manifest", (out_dir / "manifest.tsv").string());
  return kExitOk;
}

struct BakeOptions {
  RunOptions run;
  std::string checkpoints;
};

int cmd_bake(const BakeOptions& o, std::ostream& out) {
  const LoadedConfig loaded = load_with_overrides(o.run);
  const TrainConfig& cfg = loaded.config;
  const fs::path dir = o.checkpoints;
  auto read = [&](const char* name, int channels) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) throw InputError("missing checkpoint " + p.string());
    FieldParamsF params = read_checkpoint(p, cfg.field.hidden);
    if (params.output_dim() != channels) {
      throw InputError(p.string() + " has " + std::to_string(params.output_dim()) + " outputs, expected " +
                       std::to_string(channels));
    }
    return params;
  };
  FieldSet fields;
  fields.localization = read("localization.nf01", 1);
  fields.texture = read("texture.nf01", 3);
  fields.background = cfg.background_mode == BackgroundMode::separate_mlp ? read("background.nf01", 3) : fields.texture;
  const Encoding enc = make_encoding(cfg);
  if (fields.localization.input_dim() != enc.output_dim()) {
    throw InputError("checkpoint input dim " + std::to_string(fields.localization.input_dim()) +
                     " does not match the configured encoding (" + std::to_string(enc.output_dim()) + ")");
  }
  const Mesh mesh = load_run_mesh(cfg);
  const auto written =
      write_maps(o.run.out_dir, fields, enc, mesh, cfg.texture, cfg.background_mode, cfg.colors, cfg.output);
  Report r(out, o.run.porcelain);
  r.heading("baked maps:");
  for (const auto& e : written) r.field(e.path, std::to_string(e.size) + (o.run.porcelain ? "" : " bytes"));
  return kExitOk;
}

struct GradcheckCli {
  std::uint64_t seed = 7;
  std::string flip;
  bool porcelain = false;
};

int cmd_gradcheck(const GradcheckCli& o, std::ostream& out, std::ostream& err) {
  GradcheckOptions opt;
  opt.seed = o.seed;
  opt.flip_suite = o.flip;
  const auto results = run_gradchecks(opt);
  if (!o.flip.empty() && std::none_of(results.begin(), results.end(), [&](const auto& res) { return res.suite == o.flip; })) {
    throw ConfigError("--inject-sign-flip", "unknown gradcheck suite '" + o.flip + "'");
  }
  Report r(out, o.porcelain);
  bool ok = true;
  for (const auto& res : results) {
    ok = ok && res.pass;
    if (o.porcelain) {
      r.field(res.suite + ".max_rel_error", res.max_rel_error);
      r.field(res.suite + ".tolerance", res.tolerance);
      r.field(res.suite + ".checked", res.checked);
      r.field(res.suite + ".pass", res.pass ? "true" : "false");
    } else {
      out << (res.pass ? "pass  " : "FAIL  ") << res.suite << "  max rel error " << Report::number(res.max_rel_error)
          << " (tolerance " << Report::number(res.tolerance) << ", " << res.checked << " elements)\n";
    }
  }
  r.field("status", ok ? "pass" : "fail");
  if (!ok) {
    for (const auto& res : results) {
      if (!res.pass) err << "gradcheck suite failed: " << res.suite << '\n';
    }
  }
  return ok ? kExitOk : kExitCheckFailed;
}

void describe_checkpoint(const FieldParamsF& p, Report& r) {
  r.field("kind", "field checkpoint");
  r.field("layers", p.layers.size());
  std::string dims;
  for (const auto& l : p.layers) {
    if (!dims.empty()) dims += ",";
    dims += std::to_string(l.in_dim()) + "x" + std::to_string(l.out_dim());
  }
  r.field("dims", dims);
  r.field("input_dim", static_cast<std::size_t>(p.input_dim()));
  r.field("width", static_cast<std::size_t>(p.layers.front().out_dim()));
  r.field("head", p.head == HeadKind::probability ? "probability" : "color");
  r.field("parameters", p.parameter_count());
  float wmin = std::numeric_limits<float>::infinity();
  float wmax = -wmin;
  float bmin = wmin;
  float bmax = -wmin;
  for (const auto& l : p.layers) {
    wmin = std::min(wmin, l.weight.minCoeff());
    wmax = std::max(wmax, l.weight.maxCoeff());
    bmin = std::min(bmin, l.bias.minCoeff());
    bmax = std::max(bmax, l.bias.maxCoeff());
  }
  r.field("weight_min", wmin);
  r.field("weight_max", wmax);
  r.field("bias_min", bmin);
  r.field("bias_max", bmax);
}

void describe_tsm(const TexelSurfaceMap& tsm, Report& r) {
  r.field("kind", "texel surface map");
  r.field("height", static_cast<std::size_t>(tsm.resolution.height));
  r.field("width", static_cast<std::size_t>(tsm.resolution.width));
  r.field("valid_texels", tsm.valid_count());
  r.field("valid_fraction", tsm.valid_fraction());
  std::size_t faces = 0;
  for (const auto& e : tsm.entries) {
    if (e.valid) faces = std::max<std::size_t>(faces, e.face + 1);
  }
  r.field("faces_referenced_max", faces);
}

int cmd_inspect(const std::string& path, bool porcelain, std::ostream& out) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 4) throw InputError(path + ": too short to identify");
  const std::string magic(bytes.begin(), bytes.begin() + 4);
  Report r(out, porcelain);
  r.heading(path + ":");
  r.field("file", path);
  r.field("bytes", bytes.size());
  if (magic == "TSM1") {
    describe_tsm(deserialize_tsm(bytes), r);
  } else if (magic == "NF01") {
    describe_checkpoint(deserialize_checkpoint(bytes), r);
  } else {
    throw InputError(path + ": unrecognized magic (expected TSM1 or NF01)");
  }
  return kExitOk;
}

int cmd_protocol_check(const std::string& address, int timeout_ms, bool porcelain, std::ostream& out) {
  BridgeOptions opt = parse_address(address);
  opt.timeout = std::chrono::milliseconds(timeout_ms);
  const ProtocolReport report = check_bridge(opt);
  Report r(out, porcelain);
  r.field("stages", report.info.stages.size());
  r.field("resolutions", format_resolutions(report.info.stages));
  r.field("T", static_cast<std::size_t>(report.info.schedule.T));
  if (!report.info.model.empty()) r.field("model", report.info.model);
  for (std::size_t i = 0; i < report.checks.size(); ++i) r.field("check." + std::to_string(i), report.checks[i]);
  r.field("status", "pass");
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local texture editing by cascaded score distillation", "csd-paint"};
  app.require_subcommand(1);

  RunOptions run;
  auto add_config_flags = [](CLI::App* cmd, RunOptions& o) {
    cmd->add_option("-c,--config", o.config, "run config (YAML)")->required();
    cmd->add_option("--set", o.overrides, "dotted override, e.g. stages.1.lambda=0.25")->take_all();
    cmd->add_option("-o,--out", o.out_dir, "output directory");
    cmd->add_option("--seed", o.seed, "override the config seed");
    cmd->add_flag("--porcelain", o.porcelain, "machine-readable key: value output");
  };
  CLI::App* run_cmd = app.add_subcommand("run", "train and export artifacts");
  add_config_flags(run_cmd, run);
  run_cmd->add_flag("-q,--quiet", run.quiet, "no progress output");

  BakeOptions bake;
  CLI::App* bake_cmd = app.add_subcommand("bake", "bake PNG maps from checkpoints");
  add_config_flags(bake_cmd, bake.run);
  bake_cmd->add_option("--checkpoints", bake.checkpoints, "directory holding *.nf01")->required();

  GradcheckCli gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
  gc_cmd->add_option("--seed", gc.seed, "random seed");
  gc_cmd->add_option("--inject-sign-flip", gc.flip, "test hook: negate one suite's analytic gradient");
  gc_cmd->add_flag("--porcelain", gc.porcelain, "machine-readable key: value output");

  std::string inspect_path;
  bool inspect_porcelain = false;
  CLI::App* inspect_cmd = app.add_subcommand("inspect", "describe a .tsm cache or .nf01 checkpoint");
  inspect_cmd->add_option("path", inspect_path, "file to inspect")->required();
  inspect_cmd->add_flag("--porcelain", inspect_porcelain, "machine-readable key: value output");

  std::string address;
  int timeout_ms = 30000;
  bool pc_porcelain = false;
  CLI::App* pc_cmd = app.add_subcommand("protocol-check", "handshake and round-trip against a bridge");
  pc_cmd->add_option("--address", address, "host:port")->required();
  pc_cmd->add_option("--timeout-ms", timeout_ms, "socket timeout");
  pc_cmd->add_flag("--porcelain", pc_porcelain, "machine-readable key: value output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfigError;
  }

  try {
    if (*run_cmd) return cmd_run(run, out, err);
    if (*bake_cmd) return cmd_bake(bake, out);
    if (*gc_cmd) return cmd_gradcheck(gc, out, err);
    if (*inspect_cmd) return cmd_inspect(inspect_path, inspect_porcelain, out);
    if (*pc_cmd) return cmd_protocol_check(address, timeout_ms, pc_porcelain, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const ProviderError& e) {
    err << "provider error: " << e.what() << '\n';
    return *pc_cmd ? kExitCheckFailed : kExitConfigError;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitConfigError;
}

}  // namespace csdpaint
