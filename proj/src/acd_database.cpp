#include "coe/acd_database.hpp"

#include <algorithm>
#include <sstream>

#include "coe/error.hpp"

namespace coe {

json record_to_json(const AcdRecord& r) {
  json patches = json::array();
  for (const auto& p : r.patches) {
    json jp = {{"patch_id", p.patch_id}, {"image_path", p.image_path.generic_string()},
               {"source_image_id", p.source_image_id}};
    if (p.region) jp["region"] = {{"x", p.region->x}, {"y", p.region->y}, {"w", p.region->w}, {"h", p.region->h}};
    patches.push_back(std::move(jp));
  }
  json j = {{"layer", r.layer},
            {"stage_order", r.stage_order},
            {"layer_dim", r.layer_dim},
            {"channel", r.channel},
            {"n_patches", r.n_patches},
            {"q", r.q},
            {"patches", std::move(patches)},
            {"describe_status", r.ok() ? "ok" : "failed"},
            {"warnings", r.warnings}};
  if (!r.ok()) {
    j["error"] = r.error;
    return j;
  }

  json patch_atoms = json::array();
  for (const auto& pa : r.table.per_patch) {
    json atoms = json::array();
    for (const auto& a : pa.atoms) atoms.push_back(a.text());
    patch_atoms.push_back(std::move(atoms));
  }
  json raw = json::array();
  for (std::size_t i = 0; i < r.table.unique_atoms.size(); ++i)
    raw.push_back({{"atom", r.table.unique_atoms[i].text()}, {"count", r.table.counts[i]}});
  json catalog = json::array();
  for (std::size_t i = 0; i < r.catalog.clusters.size(); ++i) {
    const auto& c = r.catalog.clusters[i];
    json members = json::array();
    for (const auto& m : c.members) members.push_back(m.text());
    catalog.push_back({{"representative", c.representative.text()},
                       {"members", std::move(members)},
                       {"count", c.count},
                       {"probability", r.dist.entries.at(i).probability}});
  }
  json dist = json::array();
  for (const auto& e : r.dist.entries) dist.push_back({{"label", e.label}, {"count", e.count}, {"probability", e.probability}});

  j["patch_atoms"] = std::move(patch_atoms);
  j["atoms"] = std::move(raw);
  j["catalog"] = std::move(catalog);
  j["pad"] = r.dist.pad;
  j["denominator"] = r.dist.denominator;
  j["distribution"] = std::move(dist);
  j["cpe"] = {{"naive", r.cpe.h_naive}, {"clustered", r.cpe.h_clustered}, {"padded", r.cpe.h_padded}};
  return j;
}

AcdRecord record_from_json(const json& j) {
  try {
    AcdRecord r;
    r.layer = j.at("layer").get<std::string>();
    r.stage_order = j.at("stage_order").get<int>();
    r.layer_dim = j.at("layer_dim").get<std::size_t>();
    r.channel = j.at("channel").get<std::size_t>();
    r.n_patches = j.at("n_patches").get<std::size_t>();
    r.q = j.at("q").get<std::size_t>();
    for (const auto& jp : j.at("patches")) {
      PatchRef p{jp.at("patch_id").get<std::string>(), jp.at("image_path").get<std::string>(),
                 jp.at("source_image_id").get<std::string>(), std::nullopt};
      if (jp.contains("region")) {
        const auto& g = jp["region"];
        p.region = Region{g.at("x").get<int>(), g.at("y").get<int>(), g.at("w").get<int>(), g.at("h").get<int>()};
      }
      r.patches.push_back(std::move(p));
    }
    r.warnings = j.value("warnings", std::vector<std::string>{});
    if (j.at("describe_status").get<std::string>() != "ok") {
      r.status = DescribeStatus::Failed;
      r.error = j.value("error", std::string{});
      return r;
    }

    std::vector<PatchAtoms> per_patch;
    for (const auto& atoms : j.at("patch_atoms")) {
      PatchAtoms pa{per_patch.size(), {}};
      for (const auto& a : atoms) pa.atoms.push_back(Atom::from_normalized(a.get<std::string>()));
      per_patch.push_back(std::move(pa));
    }
    r.table = tally(std::move(per_patch));
    if (r.table.per_patch.empty()) {
      for (const auto& a : j.at("atoms")) {
        r.table.unique_atoms.push_back(Atom::from_normalized(a.at("atom").get<std::string>()));
        r.table.counts.push_back(a.at("count").get<std::size_t>());
      }
    }

    for (const auto& c : j.at("catalog")) {
      AtomCluster cl{Atom::from_normalized(c.at("representative").get<std::string>()), {}, c.at("count").get<std::size_t>()};
      for (const auto& m : c.at("members")) cl.members.push_back(Atom::from_normalized(m.get<std::string>()));
      r.catalog.total_raw += cl.count;
      r.catalog.clusters.push_back(std::move(cl));
    }
    r.dist.pad = j.at("pad").get<std::size_t>();
    r.dist.denominator = j.at("denominator").get<std::size_t>();
    for (const auto& e : j.at("distribution")) {
      auto label = e.at("label").get<std::string>();
      bool is_pad = label.rfind("⟨pad-", 0) == 0;
      r.dist.entries.push_back({label, e.at("count").get<std::size_t>(), e.at("probability").get<double>(), is_pad});
    }
    const auto& cpe = j.at("cpe");
    r.cpe = {cpe.at("naive").get<double>(), cpe.at("clustered").get<double>(), cpe.at("padded").get<double>()};
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed ACD record: ") + e.what());
  }
}

AcdDatabase::AcdDatabase(std::vector<AcdRecord> records) : records_(std::move(records)) {
  std::stable_sort(records_.begin(), records_.end(), [](const AcdRecord& a, const AcdRecord& b) {
    return std::tie(a.stage_order, a.channel) < std::tie(b.stage_order, b.channel);
  });
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!index_.emplace(std::make_pair(records_[i].layer, records_[i].channel), i).second)
      throw ParseError("duplicate ACD record " + records_[i].layer + "/" + std::to_string(records_[i].channel));
  }
}

const AcdRecord* AcdDatabase::find(const std::string& layer, std::size_t channel) const {
  auto it = index_.find({layer, channel});
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::vector<LayerSpec> AcdDatabase::layers() const {
  std::vector<LayerSpec> out;
  for (const auto& r : records_) {
    if (out.empty() || out.back().name != r.layer) out.push_back({r.layer, r.stage_order, r.layer_dim});
  }
  return out;
}

std::string AcdDatabase::serialize() const {
  std::string out;
  for (const auto& r : records_) {
    out += canonical_dump(record_to_json(r));
    out += '\n';
  }
  return out;
}

AcdDatabase AcdDatabase::parse(std::string_view text) {
  std::vector<AcdRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("ACD database line " + std::to_string(lineno) + " is not JSON");
    records.push_back(record_from_json(j));
  }
  return AcdDatabase(std::move(records));
}

AcdDatabase AcdDatabase::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error("missing ACD database " + path.string());
  return parse(read_file_bytes(path));
}

void AcdDatabase::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

}  // namespace coe
