#include "cbrm/io.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "cbrm/errors.hpp"
#include "cbrm/model.hpp"

namespace cbrm {

using nlohmann::json;

// --- CBRE embedding file ------------------------------------------------------

namespace {
constexpr char kEmbMagic[4] = {'C', 'B', 'R', 'E'};
constexpr std::uint16_t kEmbVersion = 1;

void write_vec_f32(std::ostream& out, const Embedding& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
}
}  // namespace

void save_embeddings(const std::vector<PreferencePair>& pairs, const std::string& path) {
  if (pairs.empty()) throw ConfigError("save_embeddings: empty pair list");
  const int d = pairs.front().dim();
  auto out = detail::open_output(path);
  out.write(kEmbMagic, 4);
  detail::write_raw(out, kEmbVersion);
  detail::write_raw(out, static_cast<std::uint32_t>(d));
  detail::write_raw(out, static_cast<std::uint64_t>(pairs.size()));
  for (const auto& p : pairs) {
    if (p.dim() != d || p.resp_a_emb.size() != d || p.resp_b_emb.size() != d)
      throw FormatError("save_embeddings: inconsistent embedding dimension for pair_id " +
                        std::to_string(p.pair_id));
    detail::write_raw(out, static_cast<std::uint64_t>(p.pair_id));
    write_vec_f32(out, p.prompt_emb);
    write_vec_f32(out, p.resp_a_emb);
    write_vec_f32(out, p.resp_b_emb);
  }
  if (!out) throw FormatError("failed writing embeddings file: " + path);
}

std::vector<PreferencePair> load_embeddings(const std::string& path) {
  auto in = detail::open_input(path);
  detail::expect_magic(in, path, kEmbMagic);
  const auto version = detail::read_raw<std::uint16_t>(in, path, "version");
  if (version != kEmbVersion)
    throw FormatError(path + ": unsupported CBRE version " + std::to_string(version));
  const auto d = detail::read_raw<std::uint32_t>(in, path, "dim");
  const auto n = detail::read_raw<std::uint64_t>(in, path, "pair count");
  if (d == 0) throw FormatError(path + ": dim is zero at byte offset 6");

  std::vector<PreferencePair> pairs;
  pairs.reserve(n);
  const std::size_t record_bytes = sizeof(std::uint64_t) + 3ull * d * sizeof(float);
  for (std::uint64_t i = 0; i < n; ++i) {
    PreferencePair p;
    p.prompt_emb.resize(d);
    p.resp_a_emb.resize(d);
    p.resp_b_emb.resize(d);
    p.pair_id = static_cast<std::int64_t>(
        detail::read_raw<std::uint64_t>(in, path, "pair_id"));
    for (Embedding* e : {&p.prompt_emb, &p.resp_a_emb, &p.resp_b_emb}) {
      in.read(reinterpret_cast<char*>(e->data()),
              static_cast<std::streamsize>(d * sizeof(float)));
      if (!in)
        throw FormatError(path + ": truncated in record " + std::to_string(i) +
                          " (record starts at byte offset " +
                          std::to_string(18 + i * record_bytes) + ")");
      if (!e->allFinite())
        throw FormatError(path + ": non-finite embedding values in record " +
                          std::to_string(i));
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// --- annotation file ----------------------------------------------------------

void save_annotations(const std::vector<AnnotationRecord>& records,
                      const std::vector<std::string>& concept_names,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open file for writing: " + path);
  out << json(concept_names).dump() << "\n";
  for (const auto& rec : records) {
    json j;
    j["pair_id"] = rec.pair_id;
    j["preference"] = rec.preference;
    for (const auto& name : concept_names) {
      auto it = rec.concept_scores.find(name);
      if (it == rec.concept_scores.end())
        throw FormatError("annotation record " + std::to_string(rec.pair_id) +
                          " missing concept '" + name + "'");
      j[name] = it->second;
    }
    out << j.dump() << "\n";
  }
  if (!out) throw FormatError("failed writing annotations file: " + path);
}

std::vector<AnnotationRecord> load_annotations(const std::string& path,
                                               const std::vector<std::string>& concept_names) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(path + ": missing header line with concept names");

  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path + ": line 1: header is not valid JSON: " + e.what());
  }
  if (!header.is_array())
    throw FormatError(path + ": line 1: header must be a JSON array of concept names");
  std::vector<std::string> file_names = header.get<std::vector<std::string>>();
  if (file_names != concept_names)
    throw FormatError(path + ": line 1: concept names do not match the configured list");

  std::vector<AnnotationRecord> records;
  std::set<std::int64_t> seen;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path + ": line " + std::to_string(line_no) +
                        ": invalid JSON: " + e.what());
    }
    auto fail = [&](const std::string& msg) -> FormatError {
      return FormatError(path + ": line " + std::to_string(line_no) + ": " + msg);
    };
    if (!j.is_object()) throw fail("record must be a JSON object");
    if (!j.contains("pair_id") || !j["pair_id"].is_number_integer())
      throw fail("missing or non-integer 'pair_id'");
    if (!j.contains("preference") || !j["preference"].is_number_integer())
      throw fail("missing or non-integer 'preference'");

    AnnotationRecord rec;
    rec.pair_id = j["pair_id"].get<std::int64_t>();
    rec.preference = j["preference"].get<int>();
    if (rec.preference != 0 && rec.preference != 1)
      throw fail("'preference' must be 0 or 1");
    if (!seen.insert(rec.pair_id).second)
      throw fail("duplicate pair_id " + std::to_string(rec.pair_id));
    for (const auto& name : concept_names) {
      if (!j.contains(name) || !j[name].is_number())
        throw fail("missing concept key '" + name + "'");
      const double score = j[name].get<double>();
      if (score < 0.0 || score > 1.0)
        throw fail("score for '" + name + "' outside [0,1]: " + std::to_string(score));
      rec.concept_scores[name] = score;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

LabelTable label_table_from_annotations(const std::vector<AnnotationRecord>& records,
                                        int concept_count,
                                        const std::vector<std::string>& concept_names) {
  LabelTable table;
  table.concept_count = concept_count;
  for (const auto& rec : records) {
    LabelTable::Entry entry;
    entry.preference = rec.preference;
    entry.concepts.resize(concept_count);
    for (int k = 0; k < concept_count; ++k) {
      const double score = rec.concept_scores.at(concept_names[k]);
      // Exactly 0.5 is a tie: no relative label for this (pair, concept).
      if (score > 0.5)
        entry.concepts[k] = 1;
      else if (score < 0.5)
        entry.concepts[k] = 0;
    }
    table.entries.emplace(rec.pair_id, std::move(entry));
  }
  return table;
}

std::vector<AnnotationRecord> annotate_with_world(const SyntheticWorld& world,
                                                  const std::vector<PreferencePair>& pairs,
                                                  const std::vector<std::string>& concept_names) {
  if (static_cast<int>(concept_names.size()) != world.K())
    throw ConfigError("annotate_with_world: concept name count does not match K");
  std::vector<AnnotationRecord> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) {
    AnnotationRecord rec;
    rec.pair_id = pair.pair_id;
    rec.preference = oracle_preference(world, pair);
    for (int k = 0; k < world.K(); ++k)
      rec.concept_scores[concept_names[k]] =
          static_cast<double>(oracle_concept_label(world, pair, k));
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace cbrm
