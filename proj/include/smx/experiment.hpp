#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "smx/retrieval.hpp"

namespace smx {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Experiment configuration file
// ---------------------------------------------------------------------------

struct EvalConfig {
  std::vector<std::size_t> ks = {1, 5, 10};
  bool baselines = false;
  std::vector<Regime> regimes = {Regime::InDomainA, Regime::InDomainB,
                                 Regime::CrossAB, Regime::Transfer};

  void validate() const {
    if (ks.empty()) throw ConfigError("eval.ks must not be empty");
    for (std::size_t k : ks)
      if (k == 0) throw ConfigError("eval.ks entries must be positive");
    for (std::size_t i = 1; i < ks.size(); ++i)
      if (ks[i] <= ks[i - 1])
        throw ConfigError("eval.ks must be strictly increasing");
    if (regimes.empty()) throw ConfigError("eval.regimes must not be empty");
    for (std::size_t i = 0; i < regimes.size(); ++i)
      for (std::size_t j = i + 1; j < regimes.size(); ++j)
        if (regimes[i] == regimes[j])
          throw ConfigError("eval.regimes lists a regime twice");
  }

  json to_json() const {
    json rs = json::array();
    for (Regime r : regimes) rs.push_back(regime_name(r));
    return json{{"ks", ks},
                {"baselines", baselines ? "all" : "none"},
                {"regimes", rs}};
  }

  static EvalConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(j, {"ks", "baselines", "regimes"},
                                       "eval config");
    EvalConfig c;
    if (j.contains("ks")) c.ks = j.at("ks").get<std::vector<std::size_t>>();
    if (j.contains("baselines")) {
      const std::string b = j.at("baselines");
      if (b == "all")
        c.baselines = true;
      else if (b == "none")
        c.baselines = false;
      else
        throw ConfigError("eval.baselines must be \"all\" or \"none\", got \"" +
                          b + "\"");
    }
    if (j.contains("regimes")) {
      c.regimes.clear();
      for (const json& r : j.at("regimes"))
        c.regimes.push_back(parse_regime(r.get<std::string>()));
    }
    c.validate();
    return c;
  }
};

// One canonical JSON document describing a whole experiment: generation,
// training, evaluation, and where the artifacts go. Relative paths inside
// the file resolve against the file's own directory.
struct ExperimentConfig {
  GenConfig gen;
  TrainConfig train;
  EvalConfig eval;
  std::string output_dir = "out";

  void validate() const {
    gen.validate();
    train.validate();
    eval.validate();
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }

  json to_json() const {
    return json{{"gen", gen.to_json()},
                {"train", train.to_json()},
                {"eval", eval.to_json()},
                {"output_dir", output_dir}};
  }

  static ExperimentConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(j, {"gen", "train", "eval", "output_dir"},
                                       "experiment config");
    ExperimentConfig c;
    if (j.contains("gen")) c.gen = GenConfig::from_json(j.at("gen"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("eval")) c.eval = EvalConfig::from_json(j.at("eval"));
    if (j.contains("output_dir"))
      c.output_dir = j.at("output_dir").get<std::string>();
    c.validate();
    return c;
  }
};

namespace detail {

inline std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

// Loaded config plus the directory its relative paths resolve against.
struct LoadedExperiment {
  ExperimentConfig config;
  fs::path base_dir;
};

inline LoadedExperiment load_experiment(const fs::path& config_path) {
  std::string content;
  try {
    content = detail::read_file(config_path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(content);
  } catch (const json::parse_error& e) {
    throw ConfigError(config_path.string() + ":" +
                      std::to_string(detail::line_of_byte(content, e.byte)) +
                      ": " + e.what());
  }
  LoadedExperiment out;
  try {
    out.config = ExperimentConfig::from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(config_path.string() + ": " + e.what());
  }
  out.base_dir = config_path.parent_path();
  return out;
}

inline fs::path resolve_against(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base / p;
}

// ---------------------------------------------------------------------------
// Commands. Each throws the library's error types; the binary maps them to
// exit codes (ConfigError -> 1, DataError -> 2, NumericError -> 3).
// ---------------------------------------------------------------------------

inline void cmd_gen(const fs::path& config_path,
                    const std::optional<fs::path>& out_flag,
                    std::ostream& os = std::cout) {
  LoadedExperiment exp = load_experiment(config_path);
  const fs::path out =
      out_flag ? *out_flag
               : resolve_against(exp.base_dir, exp.config.output_dir) / "data";
  fs::create_directories(out);
  Dataset data = generate_dataset(exp.config.gen);
  const std::uint64_t manifest = write_dataset(data, out);
  os << "wrote dataset to " << out.string() << " (scenes=" << data.scenes.size()
     << ", pairs=" << data.pair_ids.size() << ", train=" << data.train.size()
     << ", test=" << data.test.size() << ", manifest=" << hex16(manifest)
     << ")\n";
}

inline void cmd_train(const fs::path& config_path, const fs::path& data_dir,
                      const fs::path& out_ckpt,
                      const std::optional<std::string>& regime_flag,
                      std::ostream& os = std::cout) {
  LoadedExperiment exp = load_experiment(config_path);
  TrainConfig cfg = exp.config.train;
  if (regime_flag) cfg.regime = parse_regime(*regime_flag);
  cfg.validate();

  // Loading re-hashes every file against the manifest, so stale or edited
  // data refuses to train.
  Dataset data = load_dataset(data_dir);
  TrainResult result = train(cfg, data);

  if (out_ckpt.has_parent_path()) fs::create_directories(out_ckpt.parent_path());
  save_checkpoint(result.checkpoint, out_ckpt);
  const fs::path log_path = out_ckpt.string() + ".log.jsonl";
  detail::write_file(log_path, log_jsonl(result.log));

  os << "trained regime=" << regime_name(cfg.regime) << " steps="
     << result.checkpoint.step_count << " loss_embed="
     << json(result.checkpoint.final_loss_embed).dump() << " loss_transform="
     << json(result.checkpoint.final_loss_transform).dump() << "\n"
     << "wrote " << out_ckpt.string() << " (params_hash="
     << hex16(result.checkpoint.params.content_hash()) << ") and "
     << log_path.string() << "\n";
}

inline std::string report_filename(const std::string& label) {
  std::string name = "report_";
  for (std::size_t i = 0; i < label.size(); ++i) {
    const char c = label[i];
    if (c == ':') {
      name += '_';
    } else if (c == '-' && i + 1 < label.size() && label[i + 1] == '>') {
      name += "_to_";
      ++i;
    } else if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      name += c;
    } else {
      name += '_';
    }
  }
  return name + ".json";
}

inline void cmd_eval(const std::vector<fs::path>& ckpt_paths,
                     const fs::path& data_dir,
                     const std::optional<std::vector<std::size_t>>& ks_flag,
                     const std::optional<std::string>& baselines_flag,
                     const std::optional<fs::path>& config_path,
                     const std::optional<fs::path>& out_flag,
                     std::ostream& os = std::cout) {
  EvalConfig eval;
  fs::path out = ".";
  if (config_path) {
    LoadedExperiment exp = load_experiment(*config_path);
    eval = exp.config.eval;
    out = resolve_against(exp.base_dir, exp.config.output_dir) / "reports";
  }
  if (ks_flag) eval.ks = *ks_flag;
  if (baselines_flag) {
    if (*baselines_flag == "all")
      eval.baselines = true;
    else if (*baselines_flag == "none")
      eval.baselines = false;
    else
      throw ConfigError("--baselines must be all or none, got \"" +
                        *baselines_flag + "\"");
  }
  eval.validate();
  if (out_flag) out = *out_flag;

  if (ckpt_paths.empty()) throw ConfigError("eval needs at least one --ckpt");
  Dataset data = load_dataset(data_dir);

  std::map<Regime, Checkpoint> ckpts;
  for (const fs::path& p : ckpt_paths) {
    Checkpoint c = load_checkpoint(p);
    const Regime r = c.config.regime;
    if (!ckpts.emplace(r, std::move(c)).second)
      throw ConfigError("two checkpoints train regime " +
                        std::string(regime_name(r)));
  }

  MatrixOptions opt;
  opt.ks = eval.ks;
  opt.baselines = eval.baselines;
  MatrixResult m = run_matrix(ckpts, data, opt);

  fs::create_directories(out);
  for (const MetricsReport& r : m.reports) {
    const fs::path path = out / report_filename(r.regime);
    detail::write_file(path, r.to_json().dump(2) + "\n");
  }
  os << matrix_table(m, eval.ks);
  os << "wrote " << m.reports.size() << " report(s) to " << out.string()
     << "\n";
}

}  // namespace smx
