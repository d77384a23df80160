#pragma once

#include <map>
#include <string>
#include <vector>

#include "cbrm/synthetic.hpp"
#include "cbrm/types.hpp"

namespace cbrm {

// CBRE embedding file (little-endian):
//   magic "CBRE" | version u16 (=1) | dim u32 | pair count u64 |
//   N records of: pair_id u64, then 3*d float32 (prompt, resp_a, resp_b).
// No padding anywhere.
void save_embeddings(const std::vector<PreferencePair>& pairs, const std::string& path);
std::vector<PreferencePair> load_embeddings(const std::string& path);

// One judge record per pair: raw 0-1 scores per concept plus the preference.
struct AnnotationRecord {
  std::int64_t pair_id = 0;
  std::map<std::string, double> concept_scores;
  int preference = 0;
};

// Annotation file: UTF-8, newline-delimited. First line is a JSON array of
// the K concept names (fixing concept order); each further line is a flat
// JSON object {"pair_id": ..., "preference": 0|1, "<concept>": score, ...}.
void save_annotations(const std::vector<AnnotationRecord>& records,
                      const std::vector<std::string>& concept_names,
                      const std::string& path);
std::vector<AnnotationRecord> load_annotations(const std::string& path,
                                               const std::vector<std::string>& concept_names);

// Thresholds judge scores at 0.5 into binary relative labels; a score of
// exactly 0.5 is a tie and produces no label for that (pair, concept).
LabelTable label_table_from_annotations(const std::vector<AnnotationRecord>& records,
                                        int concept_count,
                                        const std::vector<std::string>& concept_names);

// Judge-style annotation records for a synthetic pool (scores in {0, 1}).
std::vector<AnnotationRecord> annotate_with_world(const SyntheticWorld& world,
                                                  const std::vector<PreferencePair>& pairs,
                                                  const std::vector<std::string>& concept_names);

}  // namespace cbrm
