#pragma once

#include <string>
#include <utility>
#include <vector>

#include "oodtk/common.hpp"
#include "oodtk/dataset.hpp"
#include "oodtk/predicate.hpp"

namespace oodtk {

/// A named held-out cohort with a record of how it was carved out.
struct OODGroup {
  enum class Provenance { Predicate, Withheld };
  std::string name;
  Provenance provenance = Provenance::Predicate;
  std::string provenance_text;  // the predicate's textual form
  Dataset data;

  std::string provenance_label() const {
    return (provenance == Provenance::Predicate ? "predicate: " : "withheld: ") + provenance_text;
  }
};

/// All rows of `pool` matching the predicate. An empty selection is a
/// configuration bug and rejected.
inline OODGroup build_ood_group(const Dataset& pool, const Predicate& predicate,
                                const std::string& name) {
  const auto rows = predicate.matching_rows(pool);
  if (rows.empty()) {
    throw Error("group '" + name + "': predicate '" + predicate.text() + "' selects no rows");
  }
  return OODGroup{name, OODGroup::Provenance::Predicate, predicate.text(), pool.subset(rows)};
}

/// Removes the matching rows from `train` and returns them as an OOD group.
/// The predicate must select a strict, non-empty subset.
inline std::pair<Dataset, OODGroup> withhold_group(const Dataset& train,
                                                   const Predicate& predicate,
                                                   const std::string& name) {
  std::vector<std::size_t> in_rows, out_rows;
  for (std::size_t r = 0; r < train.n_rows(); ++r) {
    (predicate(train, r) ? out_rows : in_rows).push_back(r);
  }
  if (out_rows.empty()) {
    throw Error("withhold '" + name + "': predicate '" + predicate.text() + "' selects no rows");
  }
  if (in_rows.empty()) {
    throw Error("withhold '" + name + "': predicate '" + predicate.text() + "' selects every row");
  }
  OODGroup group{name, OODGroup::Provenance::Withheld, predicate.text(), train.subset(out_rows)};
  return {train.subset(in_rows), std::move(group)};
}

}  // namespace oodtk
