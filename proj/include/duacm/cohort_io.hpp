#pragma once

// Cohort text format (version 1). Tab-separated, UTF-8, '\n' line ends.
//
//   #duacm-cohort<TAB>1
//   #features<TAB><name>...                  one entry per feature
//   #min<TAB><value>...                      per-feature minimum
//   #max<TAB><value>...                      per-feature maximum
//   #diagnoses<TAB><name>...                 vocabulary; index is the id
//   #latent_dim<TAB><k>                      0 when records carry no latent state
//   #records<TAB><n>
//   <id><TAB><x1,x2,...><TAB><diagnosis name or empty><TAB><0|1><TAB><z1,...or empty>
//
// Reals are written in shortest round-trip decimal form, so a save/load
// cycle reproduces every bit.

#include <filesystem>
#include <iosfwd>

#include "duacm/cohort.hpp"

namespace duacm::cohort {

void write_cohort(std::ostream& out, const Cohort& cohort);

/// Throws ParseError (with line number) or SchemaError.
Cohort read_cohort(std::istream& in);

/// Writes to a temporary sibling and renames it into place.
void save_cohort(const Cohort& cohort, const std::filesystem::path& path);
Cohort load_cohort(const std::filesystem::path& path);

}  // namespace duacm::cohort
