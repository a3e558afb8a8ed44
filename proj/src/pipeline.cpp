#include "coe/pipeline.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <spdlog/spdlog.h>

#include "coe/cpe.hpp"
#include "coe/error.hpp"
#include "coe/mock_backends.hpp"

namespace coe {

namespace fs = std::filesystem;

namespace {

bool is_chat_role(const std::string& role) { return role != "entailment"; }

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace

RunConfig::RunConfig() {
  for (const char* role : kRoles) {
    BackendConfig b;
    b.mode = std::string(role) == "entailment" ? "lexical" : std::string(role) == "captioner" ? "none" : "mock";
    b.model_tag = role;
    b.backend_id = role;
    backends[role] = b;
  }
}

RunConfig RunConfig::from_json(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  try {
    if (!doc.is_object()) throw Error("config must be a JSON object");
    auto path_of = [&](const char* key, fs::path& dst) {
      if (doc.contains(key)) dst = resolve(base_dir, doc[key].get<std::string>());
    };
    path_of("manifest", c.manifest);
    path_of("db", c.db);
    path_of("cache_dir", c.cache_dir);
    path_of("captions", c.captions);
    if (doc.contains("n")) c.n = doc["n"].get<std::size_t>();
    c.q = doc.value("q", c.q);
    c.alpha = doc.value("alpha", c.alpha);
    if (doc.contains("policy")) c.policy = merge_policy_from_string(doc["policy"].get<std::string>());
    c.parallel = doc.value("parallel", c.parallel);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("backends")) {
      for (const auto& [role, jb] : doc["backends"].items()) {
        if (!c.backends.count(role)) throw Error("unknown backend role '" + role + "'");
        auto& b = c.backends[role];
        b.mode = jb.value("mode", b.mode);
        b.model_tag = jb.value("model_tag", b.model_tag);
        b.backend_id = jb.value("backend_id", b.backend_id);
        b.url = jb.value("url", b.url);
        b.api_key_env = jb.value("api_key_env", b.api_key_env);
        b.max_in_flight = jb.value("max_in_flight", b.max_in_flight);
        if (jb.contains("script")) b.script = resolve(base_dir, jb["script"].get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("bad config: ") + e.what());
  }
  if (c.q == 0) throw Error("q must be positive");
  if (c.parallel == 0) throw Error("parallel must be positive");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
  return c;
}

RunConfig RunConfig::load(const fs::path& path) { return from_json(read_json_file(path), path.parent_path()); }

const BackendConfig& RunConfig::backend(const std::string& role) const {
  auto it = backends.find(role);
  if (it == backends.end()) throw Error("unknown backend role '" + role + "'");
  return it->second;
}

namespace {

MockFn mock_for(const RunConfig& cfg, const std::string& role, const BackendConfig& b) {
  if (role == "describer")
    return mock_describer(b.script.empty() ? DescriberScript{} : DescriberScript::load(b.script), cfg.q);
  if (role == "synthesizer") return mock_synthesizer();
  if (role == "judge") {
    std::map<std::string, std::string> scripted;
    if (!b.script.empty())
      for (const auto& [sha, reply] : read_json_file(b.script).items())
        scripted[sha] = reply.is_string() ? reply.get<std::string>() : reply.dump();
    return mock_judge(std::move(scripted));
  }
  if (role == "captioner") {
    std::map<std::string, std::string> captions;
    if (!b.script.empty())
      for (const auto& [sha, text] : read_json_file(b.script).items()) captions[sha] = text.get<std::string>();
    return mock_captioner(std::move(captions));
  }
  if (role == "filter")
    throw Error("the filter role has no mock chat backend; mode 'mock' uses the offline overlap rule");
  throw Error("no mock backend for role '" + role + "'");
}

std::shared_ptr<Gateway> chat_gateway(const RunConfig& cfg, const std::string& role, const BackendConfig& b,
                                      const std::string& mode) {
  if (mode == "mock") return Gateway::mock(b.backend_id, mock_for(cfg, role, b));
  auto cache = std::make_shared<ResponseCache>(cfg.cache_dir);
  if (mode == "replay") return Gateway::replay(b.backend_id, cache);
  if (mode == "remote") {
    if (b.url.empty()) throw Error("backend " + role + ": remote mode needs a url");
    RemoteConfig rc;
    rc.backend_id = b.backend_id;
    rc.base_url = b.url;
    rc.api_key_env = b.api_key_env;
    auto backend = std::make_shared<RemoteBackend>(rc, std::make_shared<HttplibTransport>());
    return Gateway::remote(backend, cache, b.max_in_flight);
  }
  throw Error("backend " + role + ": unknown mode '" + mode + "'");
}

}  // namespace

std::shared_ptr<Gateway> make_gateway(const RunConfig& cfg, const std::string& role) {
  if (!is_chat_role(role)) throw Error("role '" + role + "' is not a chat role");
  const auto& b = cfg.backend(role);
  if (b.mode == "none") return nullptr;
  return chat_gateway(cfg, role, b, b.mode);
}

std::unique_ptr<EntailmentBackend> make_entailment(const RunConfig& cfg) {
  const auto& b = cfg.backend("entailment");
  if (b.mode == "lexical")
    return std::make_unique<LexicalOracle>(b.script.empty() ? LexicalOracle{} : LexicalOracle::from_file(b.script));
  if (b.mode == "nli" || b.mode == "nli-replay") {
    if (b.url.empty() && b.mode == "nli") throw Error("entailment: nli mode needs a url");
    NliConfig nc;
    nc.backend_id = b.backend_id;
    nc.url = b.url;
    return std::make_unique<NliEndpointBackend>(nc, std::make_shared<HttplibTransport>(),
                                                std::make_shared<ResponseCache>(cfg.cache_dir), b.mode == "nli-replay");
  }
  if (b.mode == "llm" || b.mode == "llm-replay")
    return std::make_unique<LlmJudgeEntailment>(chat_gateway(cfg, "entailment", b, b.mode == "llm" ? "remote" : "replay"),
                                                b.model_tag);
  throw Error("entailment: unknown mode '" + b.mode + "'");
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();
  if (first) std::rethrow_exception(first);
}

// ---- build-acd ------------------------------------------------------------

AcdRecord describe_record(const ConceptManifest& manifest, const VisualConcept& vc, const DescribeOptions& opts,
                          Gateway& describer, EntailmentBackend& entailment, MergePolicy policy) {
  const std::size_t q = opts.q;
  const auto* layer = manifest.find_layer(vc.layer);
  AcdRecord rec;
  rec.layer = vc.layer;
  rec.stage_order = layer ? layer->stage_order : 0;
  rec.layer_dim = layer ? layer->dimension : 0;
  rec.channel = vc.channel_index;
  rec.n_patches = manifest.n_patches;
  rec.q = q;
  rec.patches = vc.patches;
  try {
    auto described = describe_concept(vc, load_patch_images(manifest, vc), describer, opts);
    rec.table = std::move(described.table);
    rec.warnings = std::move(described.warnings);
    rec.catalog = cluster(rec.table, policy, entailment);
    rec.dist = distribution(rec.catalog, q, manifest.n_patches);
    rec.warnings.insert(rec.warnings.end(), rec.dist.warnings.begin(), rec.dist.warnings.end());
    rec.cpe = score_concept(rec.table, rec.catalog, rec.dist);
  } catch (const ReplayMiss& e) {
    spdlog::error("{}/{}: {}", vc.layer, vc.channel_index, e.what());
    rec.status = DescribeStatus::Failed;
    rec.error = e.what();
    rec.table = {};
    rec.catalog = {};
    rec.dist = {};
    rec.cpe = {};
  } catch (const GatewayError&) {
    throw;  // backend outage: retries exhausted, nothing to record
  } catch (const Error& e) {
    spdlog::error("{}/{}: {}", vc.layer, vc.channel_index, e.what());
    rec.status = DescribeStatus::Failed;
    rec.error = e.what();
    rec.table = {};
    rec.catalog = {};
    rec.dist = {};
    rec.cpe = {};
  }
  return rec;
}

AcdDatabase build_acd(const ConceptManifest& manifest, const DescribeOptions& opts, Gateway& describer,
                      EntailmentBackend& entailment, MergePolicy policy, std::size_t parallel) {
  std::vector<std::optional<AcdRecord>> slots(manifest.concepts.size());
  parallel_for(slots.size(), parallel, [&](std::size_t i) {
    slots[i] = describe_record(manifest, manifest.concepts[i], opts, describer, entailment, policy);
  });
  std::vector<AcdRecord> records;
  records.reserve(slots.size());
  for (auto& s : slots) records.push_back(std::move(*s));
  return AcdDatabase(std::move(records));
}

BuildSummary cmd_build_acd(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw Error("no manifest configured");
  auto manifest = load_manifest(cfg.manifest);
  if (cfg.n && *cfg.n != manifest.n_patches)
    throw Error("configured n=" + std::to_string(*cfg.n) + " but the manifest has " +
                std::to_string(manifest.n_patches) + " patches per concept");
  auto describer = make_gateway(cfg, "describer");
  if (!describer) throw Error("the describer role cannot be 'none'");
  auto entailment = make_entailment(cfg);
  DescribeOptions opts;
  opts.q = cfg.q;
  opts.model_tag = cfg.backend("describer").model_tag;
  auto db = build_acd(manifest, opts, *describer, *entailment, cfg.policy, cfg.parallel);
  db.save(cfg.db);
  BuildSummary s{db.records().size(), 0};
  for (const auto& r : db.records()) s.failed += r.ok() ? 0 : 1;
  return s;
}

// ---- cpe ------------------------------------------------------------------

CpeLevel cpe_level_from_string(const std::string& s) {
  if (s == "channel") return CpeLevel::Channel;
  if (s == "layer") return CpeLevel::Layer;
  if (s == "model") return CpeLevel::Model;
  if (s == "all") return CpeLevel::All;
  throw Error("unknown cpe level '" + s + "'");
}

std::vector<const AcdRecord*> channels_by_cpe(const AcdDatabase& db) {
  std::vector<const AcdRecord*> out;
  for (const auto& r : db.records()) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(), [](const AcdRecord* a, const AcdRecord* b) {
    if (a->ok() != b->ok()) return a->ok();
    return a->ok() && a->cpe.h_padded > b->cpe.h_padded;
  });
  return out;
}

json cpe_report(const AcdDatabase& db, const CpeReportOptions& options) {
  if (db.empty()) throw Error("ACD database has no records");
  std::size_t failed = 0;
  for (const auto& r : db.records()) failed += r.ok() ? 0 : 1;
  if (failed && options.fail_on_failed)
    throw Error(std::to_string(failed) + " channel(s) failed to describe; layer means refused");

  json report = json::object();
  const bool all = options.level == CpeLevel::All;
  if (all || options.level == CpeLevel::Channel) {
    json channels = json::array();
    for (const auto* r : channels_by_cpe(db)) {
      json ch = {{"layer", r->layer}, {"channel", r->channel}, {"status", r->ok() ? "ok" : "failed"}};
      if (r->ok()) {
        ch["naive"] = r->cpe.h_naive;
        ch["clustered"] = r->cpe.h_clustered;
        ch["padded"] = r->cpe.h_padded;
        ch["p_star"] = r->catalog.p_star();
        ch["pad"] = r->dist.pad;
      }
      channels.push_back(std::move(ch));
    }
    report["channels"] = std::move(channels);
  }
  if (options.level == CpeLevel::Channel) return report;

  json layers = json::array();
  std::vector<LayerCpe> layer_scores;
  for (const auto& spec : db.layers()) {
    std::vector<CpeScore> scores;
    for (const auto& r : db.records())
      if (r.layer == spec.name && r.ok()) scores.push_back(r.cpe);
    if (scores.empty()) {
      spdlog::warn("layer {}: no described channel, left out of the model mean", spec.name);
      layers.push_back({{"layer", spec.name}, {"d_l", spec.dimension}, {"mean", nullptr}, {"skipped", spec.dimension}});
      continue;
    }
    auto l = layer_cpe(spec.name, spec.dimension, scores);
    layers.push_back({{"layer", l.layer}, {"d_l", l.d_l}, {"mean", l.mean_h}, {"skipped", l.skipped}});
    layer_scores.push_back(l);
  }
  if (all || options.level == CpeLevel::Layer) report["layers"] = std::move(layers);
  if (all || options.level == CpeLevel::Model) {
    if (layer_scores.empty()) throw Error("no layer has a described channel");
    auto m = model_cpe(layer_scores);
    report["model"] = {{"num_layers", m.num_layers}, {"mean", m.mean_h}};
  }
  return report;
}

std::string cpe_channels_csv(const AcdDatabase& db) {
  std::string out = "layer,channel,status,naive,clustered,padded,p_star,pad\n";
  char buf[128];
  for (const auto* r : channels_by_cpe(db)) {
    out += r->layer + "," + std::to_string(r->channel) + ",";
    if (!r->ok()) {
      out += "failed,,,,,\n";
      continue;
    }
    std::snprintf(buf, sizeof buf, "ok,%.9g,%.9g,%.9g,%zu,%zu\n", r->cpe.h_naive, r->cpe.h_clustered, r->cpe.h_padded,
                  r->catalog.p_star(), r->dist.pad);
    out += buf;
  }
  return out;
}

// ---- explain --------------------------------------------------------------

namespace {

void check_file_stem(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..")
    throw Error("sample id '" + id + "' cannot be used as a file name");
}

ImagePart load_image(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error("missing image " + p.string());
  return {media_type_for(p), read_file_bytes(p)};
}

}  // namespace

std::vector<ExplanationChain> cmd_explain(const RunConfig& cfg, const std::vector<fs::path>& relevance_files,
                                          const fs::path& out_dir) {
  auto db = AcdDatabase::load(cfg.db);
  auto captioner = make_gateway(cfg, "captioner");
  auto synthesizer = make_gateway(cfg, "synthesizer");
  if (!synthesizer) throw Error("the synthesizer role cannot be 'none'");
  const auto& fb = cfg.backend("filter");
  std::shared_ptr<Gateway> filter_gw;
  ChainOptions chain_opts;
  chain_opts.alpha = cfg.alpha;
  chain_opts.filter_model_tag = fb.model_tag;
  if (fb.mode == "mock") {
    chain_opts.filter_mode = FilterMode::Mock;
  } else {
    chain_opts.filter_mode = FilterMode::Llm;
    filter_gw = make_gateway(cfg, "filter");
  }
  SynthesisOptions synth_opts;
  synth_opts.model_tag = cfg.backend("synthesizer").model_tag;

  fs::create_directories(out_dir);
  const auto out_abs = fs::absolute(out_dir).lexically_normal();
  std::vector<std::optional<ExplanationChain>> slots(relevance_files.size());
  parallel_for(slots.size(), cfg.parallel, [&](std::size_t i) {
    const auto& file = relevance_files[i];
    auto sample = parse_relevance_unchecked(read_json_file(file));
    check_file_stem(sample.sample_id);
    const auto image_path = fs::absolute(resolve(file.parent_path(), sample.image_path)).lexically_normal();

    Caption caption;
    if (!cfg.captions.empty()) {
      caption = caption_from_sidecar(cfg.captions, sample.sample_id);
    } else if (captioner) {
      caption = caption_from_backend(*captioner, load_image(image_path), cfg.backend("captioner").model_tag);
    } else {
      throw Error("sample '" + sample.sample_id + "': no caption file and no captioner backend configured");
    }

    auto chain = build_chain(sample, db, caption, filter_gw.get(), chain_opts);
    chain = synthesize(std::move(chain), *synthesizer, synth_opts);
    chain.image_path = image_path.lexically_relative(out_abs).generic_string();
    write_file_atomic(out_dir / (sample.sample_id + ".json"), chain_to_json(chain).dump(2) + "\n");
    slots[i] = std::move(chain);
  });
  std::vector<ExplanationChain> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---- evaluate -------------------------------------------------------------

namespace {

struct LoadedChain {
  ExplanationChain chain;
  fs::path image;
};

LoadedChain load_chain(const fs::path& file) {
  auto chain = chain_from_json(read_json_file(file));
  if (chain.image_path.empty()) throw EvaluationError(file.string() + ": chain has no image_path");
  auto image = resolve(file.parent_path(), chain.image_path);
  return {std::move(chain), image};
}

}  // namespace

json cmd_judge(const RunConfig& cfg, const std::vector<fs::path>& chain_files) {
  if (chain_files.empty()) throw EvaluationError("no explanations to judge");
  auto judge = make_gateway(cfg, "judge");
  if (!judge) throw Error("the judge role cannot be 'none'");
  JudgeOptions opts;
  opts.model_tag = cfg.backend("judge").model_tag;

  std::vector<std::optional<ExplanationScore>> slots(chain_files.size());
  std::vector<std::string> ids(chain_files.size());
  parallel_for(slots.size(), cfg.parallel, [&](std::size_t i) {
    auto lc = load_chain(chain_files[i]);
    if (lc.chain.narrative.empty()) throw EvaluationError(chain_files[i].string() + ": missing narrative");
    ids[i] = lc.chain.sample_id;
    slots[i] = judge_explanation(load_image(lc.image), lc.chain.prediction, lc.chain.label, lc.chain.narrative, *judge, opts);
  });
  json samples = json::array();
  std::vector<ExplanationScore> scores;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto j = score_to_json(*slots[i]);
    j["sample_id"] = ids[i];
    samples.push_back(std::move(j));
    scores.push_back(*slots[i]);
  }
  return {{"samples", std::move(samples)}, {"aggregate", aggregate_to_json(aggregate_scores(scores))}};
}

BundleSummary cmd_export_bundle(const std::map<std::string, fs::path>& methods, const fs::path& out_dir,
                                const BundleOptions& options) {
  if (methods.empty()) throw EvaluationError("no explanation methods given");
  std::map<std::string, BundleSample> by_id;
  for (const auto& [method, dir] : methods) {
    if (!fs::is_directory(dir)) throw EvaluationError("method " + method + ": no directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      auto lc = load_chain(f);
      auto& s = by_id[lc.chain.sample_id];
      s.sample_id = lc.chain.sample_id;
      if (s.image_path.empty()) s.image_path = lc.image;
      s.narratives[method] = lc.chain.narrative;
    }
  }
  std::vector<BundleSample> samples;
  for (auto& [id, s] : by_id) {
    for (const auto& [method, _] : methods)
      if (!s.narratives.count(method)) throw EvaluationError("sample " + id + ": missing narrative for " + method);
    samples.push_back(std::move(s));
  }
  return export_human_bundle(samples, out_dir, options);
}

json cmd_import_scores(const std::vector<fs::path>& sheets, const fs::path& mapping) {
  json out = json::object();
  for (const auto& [method, scores] : import_human_scores(sheets, mapping))
    out[method] = aggregate_to_json(aggregate_scores(scores));
  return out;
}

json cmd_consistency(const fs::path& pairs_csv, const AcdDatabase* db) {
  auto pairs = load_pairs_csv(pairs_csv, db);
  auto report = cpe_human_consistency(pairs);
  json j = consistency_to_json(report);
  json detail = json::array();
  for (const auto& p : pairs)
    detail.push_back({{"pair_id", p.pair_id}, {"human", p.verdict_human()}, {"cpe", p.verdict_cpe()},
                      {"cpe_upper", p.cpe_upper}, {"cpe_lower", p.cpe_lower}});
  j["pairs"] = std::move(detail);
  return j;
}

json cmd_sample(const fs::path& predictions_csv, std::size_t n, double correct_fraction, std::uint64_t seed) {
  std::ifstream in(predictions_csv);
  if (!in) throw Error("cannot read " + predictions_csv.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("sample_id,label,prediction", 0) != 0)
    throw Error(predictions_csv.string() + ": header must be sample_id,label,prediction");
  std::vector<std::string> ids;
  std::vector<bool> correct;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto a = line.find(',');
    auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error("bad predictions row: " + line);
    ids.push_back(line.substr(0, a));
    correct.push_back(same_class(line.substr(a + 1, b - a - 1), line.substr(b + 1)));
  }
  auto picked = outcome_stratified_sample(correct, n, correct_fraction, seed);
  json selected = json::array();
  std::size_t n_correct = 0;
  for (auto i : picked) {
    selected.push_back({{"sample_id", ids[i]}, {"correct", static_cast<bool>(correct[i])}});
    n_correct += correct[i] ? 1 : 0;
  }
  return {{"selected", std::move(selected)}, {"n_correct", n_correct}, {"n_incorrect", picked.size() - n_correct}};
}

}  // namespace coe
