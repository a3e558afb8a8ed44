// coe: command-line front end for the explanation pipeline.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "coe/error.hpp"
#include "coe/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Overrides {
  std::string config;
  std::string manifest;
  std::string db;
  std::string cache_dir;
  std::string captions;
  std::string policy;
  double alpha = 0.0;
  std::size_t q = 0;
  std::size_t parallel = 0;
  std::map<std::string, std::string> backend_modes;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--manifest", o.manifest, "concept manifest");
  cmd->add_option("--db", o.db, "ACD database (JSON lines)");
  cmd->add_option("--cache", o.cache_dir, "response cache directory");
  cmd->add_option("--captions", o.captions, "caption sidecar {sample_id: caption}");
  cmd->add_option("--policy", o.policy, "merge policy: strict | no-contradiction");
  cmd->add_option("--alpha", o.alpha, "relevance quantile threshold in (0, 1)");
  cmd->add_option("--q", o.q, "atoms per patch");
  cmd->add_option("--parallel", o.parallel, "worker threads");
  for (const char* role : coe::kRoles)
    cmd->add_option(std::string("--backend.") + role, o.backend_modes[role], std::string("backend mode for ") + role);
}

coe::RunConfig make_config(const Overrides& o) {
  coe::json base = coe::json::object();
  fs::path base_dir = fs::current_path();
  if (!o.config.empty()) {
    base = coe::read_json_file(o.config);
    base_dir = fs::path(o.config).parent_path();
  }
  auto cfg = coe::RunConfig::from_json(base, base_dir);
  if (!o.manifest.empty()) cfg.manifest = o.manifest;
  if (!o.db.empty()) cfg.db = o.db;
  if (!o.cache_dir.empty()) cfg.cache_dir = o.cache_dir;
  if (!o.captions.empty()) cfg.captions = o.captions;
  if (!o.policy.empty()) cfg.policy = coe::merge_policy_from_string(o.policy);
  if (o.alpha != 0.0) {
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw coe::Error("alpha must lie in (0, 1)");
    cfg.alpha = o.alpha;
  }
  if (o.q) cfg.q = o.q;
  if (o.parallel) cfg.parallel = o.parallel;
  for (const auto& [role, mode] : o.backend_modes)
    if (!mode.empty()) cfg.backends[role].mode = mode;
  return cfg;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    coe::write_file_atomic(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("coe"));
  spdlog::cfg::load_env_levels();

  CLI::App app{"Concept-chain explanations for vision models"};
  app.require_subcommand(1);
  Overrides o;
  std::string out;

  auto* build = app.add_subcommand("build-acd", "describe every concept and write the ACD database");
  add_common(build, o);

  auto* cpe = app.add_subcommand("cpe", "report concept polysemanticity entropy");
  add_common(cpe, o);
  std::string csv;
  std::string level = "all";
  bool fail_on_failed = false;
  cpe->add_option("--level", level, "channel | layer | model | all")
      ->check(CLI::IsMember({"channel", "layer", "model", "all"}));
  cpe->add_flag("--fail-on-failed", fail_on_failed, "error instead of skipping channels without a description");
  cpe->add_option("--out", out, "JSON report path (default stdout)");
  cpe->add_option("--csv", csv, "per-channel CSV path");

  auto* explain = app.add_subcommand("explain", "build and narrate explanation chains");
  add_common(explain, o);
  std::vector<std::string> relevance;
  explain->add_option("relevance", relevance, "per-sample relevance documents")->required();
  explain->add_option("--out", out, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "judge explanations or manage human annotation");
  add_common(evaluate, o);
  std::string eval_mode = "judge";
  std::vector<std::string> inputs;
  std::vector<std::string> methods;
  std::string mapping;
  std::size_t n_groups = 10;
  std::uint64_t seed = 0;
  evaluate->add_option("--mode", eval_mode, "judge | export | import")
      ->check(CLI::IsMember({"judge", "export", "import"}));
  evaluate->add_option("inputs", inputs, "chain documents (judge) or filled sheets (import)");
  evaluate->add_option("--method", methods, "name=directory of chains (export)");
  evaluate->add_option("--mapping", mapping, "anonymization.json (import)");
  evaluate->add_option("--groups", n_groups, "number of annotation groups (export)");
  evaluate->add_option("--seed", seed, "alias shuffle seed (export)");
  evaluate->add_option("--out", out, "output path (directory for export)");

  auto* consistency = app.add_subcommand("consistency", "agreement between CPE and human polysemanticity verdicts");
  add_common(consistency, o);
  std::string pairs;
  consistency->add_option("--pairs", pairs, "pairs CSV")->required();
  consistency->add_option("--out", out, "JSON report path (default stdout)");

  auto* sample = app.add_subcommand("sample", "pick evaluation samples with a fixed correct:incorrect ratio");
  std::string predictions;
  std::size_t n_samples = 100;
  double fraction = 0.7;
  sample->add_option("--predictions", predictions, "CSV sample_id,label,prediction")->required();
  sample->add_option("--n", n_samples, "number of samples");
  sample->add_option("--correct-fraction", fraction, "share of correctly predicted samples");
  sample->add_option("--seed", seed, "sampling seed");
  sample->add_option("--out", out, "JSON output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*build) {
      auto cfg = make_config(o);
      auto s = coe::cmd_build_acd(cfg);
      spdlog::info("wrote {} records ({} failed) to {}", s.concepts, s.failed, cfg.db.string());
      return 0;
    }
    if (*cpe) {
      auto cfg = make_config(o);
      auto db = coe::AcdDatabase::load(cfg.db);
      emit(coe::cpe_report(db, {coe::cpe_level_from_string(level), fail_on_failed}).dump(2) + "\n", out);
      if (!csv.empty()) coe::write_file_atomic(csv, coe::cpe_channels_csv(db));
      return 0;
    }
    if (*explain) {
      auto cfg = make_config(o);
      std::vector<fs::path> files(relevance.begin(), relevance.end());
      auto chains = coe::cmd_explain(cfg, files, out);
      spdlog::info("wrote {} explanations to {}", chains.size(), out);
      return 0;
    }
    if (*evaluate) {
      auto cfg = make_config(o);
      std::vector<fs::path> files(inputs.begin(), inputs.end());
      if (eval_mode == "judge") {
        emit(coe::cmd_judge(cfg, files).dump(2) + "\n", out);
      } else if (eval_mode == "export") {
        if (out.empty()) throw coe::Error("export needs --out");
        std::map<std::string, fs::path> by_method;
        for (const auto& m : methods) {
          auto eq = m.find('=');
          if (eq == std::string::npos || eq == 0) throw coe::Error("--method expects name=directory, got '" + m + "'");
          by_method[m.substr(0, eq)] = m.substr(eq + 1);
        }
        auto s = coe::cmd_export_bundle(by_method, out, {n_groups, seed});
        spdlog::info("exported {} records in {} sheets to {}", s.records, s.sheets, out);
      } else {
        if (mapping.empty()) throw coe::Error("import needs --mapping");
        emit(coe::cmd_import_scores(files, mapping).dump(2) + "\n", out);
      }
      return 0;
    }
    if (*consistency) {
      auto cfg = make_config(o);
      std::optional<coe::AcdDatabase> db;
      if (fs::exists(cfg.db)) db = coe::AcdDatabase::load(cfg.db);
      emit(coe::cmd_consistency(pairs, db ? &*db : nullptr).dump(2) + "\n", out);
      return 0;
    }
    if (*sample) {
      emit(coe::cmd_sample(predictions, n_samples, fraction, seed).dump(2) + "\n", out);
      return 0;
    }
  } catch (const coe::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 2;
  }
  return 0;
}
