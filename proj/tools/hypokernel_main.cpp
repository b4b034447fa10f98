#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "hypokernel/manifest.hpp"

namespace {

struct SubSpec {
  std::string name;
  std::string help;
  bool takes_model = false;
  std::vector<std::pair<std::string, std::string>> options;  // kv key, help
  std::vector<std::pair<std::string, std::string>> flags;    // kv key, help
};

std::string flag_name(const std::string& key) {
  std::string s = "--" + key;
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

const std::vector<SubSpec>& sub_specs() {
  static const std::vector<SubSpec> specs = {
      {"rank",
       "Bracket-generating rank of the model fields over sampled points or a grid",
       true,
       {{"mode", "classical or reduced bracket generation"},
        {"cap", "maximum bracket depth (default 3)"},
        {"tol", "singular value tolerance (default 1e-8)"},
        {"samples", "number of sampled points (default 200)"},
        {"box", "sampling box, lo:hi per axis, comma separated (default: model box)"},
        {"grid", "evaluate at grid nodes instead: lo:hi:count per axis"},
        {"sampler", "halton or uniform (default halton)"},
        {"seed", "uniform sampler seed (default 1)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads (default: HYPOKERNEL_WORKERS or hardware)"}},
       {}},
      {"kernel",
       "Frozen-coefficient Gaussian kernel on a grid",
       true,
       {{"t", "time (required, > 0)"},
        {"freeze_point", "freeze point, comma separated (default 0)"},
        {"grid", "grid spec lo:hi:count per axis (default: model box)"},
        {"nodes", "nodes per axis for the default grid (default 101)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {}},
      {"density",
       "Parametrix series approximation of the transition density p(t, .; y)",
       true,
       {{"t", "time (required, > 0)"},
        {"y", "base point, comma separated (default 0)"},
        {"order", "series truncation order (default 2)"},
        {"time_levels", "geometric time bands per half interval (default 8)"},
        {"time_cells", "midpoint cells per band (default 1)"},
        {"grid", "grid spec lo:hi:count per axis (default: truncation box at y)"},
        {"nodes", "nodes per axis for the default grid (default 201)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {{"residual", "also report a finite-difference PDE residual"}}},
      {"trotter",
       "Trotter splitting density: frozen Gaussian step composed with drift flow",
       true,
       {{"t", "time (required, > 0)"},
        {"y", "base point, comma separated (default 0)"},
        {"freeze_point", "freeze point for the leading term (default: y)"},
        {"m", "number of splitting steps (default 8)"},
        {"flow_steps", "RK4 substeps per splitting step (default 8)"},
        {"mode", "density or function composition order (default density)"},
        {"grid", "grid spec lo:hi:count per axis (default: model box)"},
        {"nodes", "nodes per axis for the default grid (default 81)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {}},
      {"walk",
       "Square-walk commutator probe: four flow legs against the Lie bracket",
       true,
       {{"i", "first generator index, 0 = drift (required)"},
        {"j", "second generator index (required)"},
        {"x", "base point, comma separated (default 0)"},
        {"deltas", "leg lengths, comma separated (default 0.1,0.03,0.01,0.003)"},
        {"steps", "RK4 steps per leg (default 32)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {}},
      {"mc",
       "Euler-Maruyama Monte Carlo endpoint sampling and kernel density estimate",
       true,
       {{"t", "time (required, > 0)"},
        {"x", "start point, comma separated (default 0)"},
        {"steps", "time steps (default 100)"},
        {"paths", "sample paths (default 10000)"},
        {"seed", "RNG seed (default 1)"},
        {"grid", "KDE grid spec lo:hi:count per axis (default: model box)"},
        {"nodes", "nodes per axis for the default grid (default 61)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {{"emit_samples", "also write <out>_samples.csv with kept endpoints"}}},
      {"envelope",
       "Fit a Gaussian envelope A (1+|x|)^m t^-n exp(-B|x-y|^2/t) over density grids",
       false,
       {{"in", "comma separated density CSV files, one per t level (required)"},
        {"y", "base point the densities share (default 0)"},
        {"order", "derivative order j[:alpha[:beta]]; only alpha may be nonzero here"},
        {"out", "output prefix; writes <out>.json"},
        {"workers", "worker threads"}},
       {}},
      {"approx",
       "Mollification ladder: smooth-coefficient densities Cauchy-converging to the limit",
       true,
       {{"t", "time (required, > 0)"},
        {"y", "base point, comma separated (default 0)"},
        {"ladder", "mollification levels, ascending (default 4,8,16)"},
        {"order", "parametrix series order (default 2)"},
        {"time_levels", "geometric time bands per half interval (default 4)"},
        {"time_cells", "midpoint cells per band (default 1)"},
        {"quad", "odd quadrature node count for mollification (default 17)"},
        {"grid", "grid spec lo:hi:count per axis (default: shared internal box)"},
        {"nodes", "nodes per axis for the default grid (default 101)"},
        {"out", "output prefix; writes <out>.csv and <out>.json"},
        {"workers", "worker threads"}},
       {}},
      {"compare",
       "Overlay two density grids and report sup and total-variation distances",
       false,
       {{"a", "first density CSV (required)"},
        {"b", "second density CSV (required)"},
        {"tv_tol", "fail the tv_within_tol check above this TV distance (0 = off)"},
        {"out", "output prefix; writes <out>.json"},
        {"workers", "worker threads"}},
       {}},
  };
  return specs;
}

struct SubState {
  std::map<std::string, std::string> flags;
  std::string config_path;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "hypokernel: degenerate diffusion kernels, bracket rank analysis, and "
      "Gaussian envelope verification"};
  app.set_version_flag("--version", std::string(hypokernel::manifest::kVersion));
  app.require_subcommand(1);

  std::map<std::string, SubState> state;
  for (const SubSpec& spec : sub_specs()) {
    CLI::App* cmd = app.add_subcommand(spec.name, spec.help);
    SubState& st = state[spec.name];
    cmd->add_option("--config", st.config_path,
                    "flat key=value config file; command-line flags win");
    for (const auto& [key, help] : spec.options) {
      cmd->add_option_function<std::string>(
          flag_name(key), [&st, key = key](const std::string& v) { st.flags[key] = v; }, help);
    }
    for (const auto& [key, help] : spec.flags) {
      cmd->add_flag_function(
          flag_name(key), [&st, key = key](std::int64_t) { st.flags[key] = "1"; }, help);
    }
    if (spec.takes_model) {
      cmd->add_option_function<std::string>(
          "--model", [&st](const std::string& v) { st.flags["model"] = v; },
          "built-in model name");
      cmd->add_option_function<std::string>(
          "--model-file", [&st](const std::string& v) { st.flags["model_file"] = v; },
          "custom polynomial model file");
      cmd->add_option_function<std::vector<std::string>>(
          "--param",
          [&st](const std::vector<std::string>& vs) {
            for (const std::string& v : vs) {
              const std::size_t eq = v.find('=');
              if (eq == std::string::npos || eq == 0)
                throw CLI::ValidationError("--param", "expected name=value, got '" + v + "'");
              st.flags["param." + v.substr(0, eq)] = v.substr(eq + 1);
            }
          },
          "model parameter override name=value (repeatable)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  const std::string sub = active->get_name();
  SubState& st = state[sub];

  try {
    hypokernel::manifest::ExperimentConfig cfg;
    cfg.subcommand = sub;
    if (!st.config_path.empty()) cfg.kv = hypokernel::manifest::load_config_file(st.config_path);
    for (const auto& [key, value] : st.flags) cfg.kv[key] = value;
    return hypokernel::manifest::dispatch(cfg);
  } catch (const hypokernel::manifest::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
