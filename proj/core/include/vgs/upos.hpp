#pragma once

#include <map>
#include <string>

namespace vgs {

/// The 12-category universal part-of-speech tagset (PRT covers particles).
enum class Upos {
  Noun,
  Verb,
  Adj,
  Adv,
  Pron,
  Det,
  Adp,
  Num,
  Conj,
  Prt,
  Punct,
  X,
};

/// Canonical tag string, e.g. "NOUN", "PRT".
std::string upos_name(Upos tag);

/// Parses a canonical tag string; "." is accepted as an alias for PUNCT.
/// Throws FormatError on anything else.
Upos parse_upos(const std::string& name);

/// Maps a tagger-specific tag to UPOS via a named scheme.
///
/// Shipped schemes: "upos" (identity), "treetagger-en" (Penn-style English
/// tags), "kytea-ja" (Japanese tagger output; conjugation-suffix/TAIL tags
/// map to VERB). Additional schemes can be registered at runtime.
/// Throws ValidationError for an unknown scheme, FormatError for an unknown
/// tag, naming both.
Upos map_upos(const std::string& tagger_tag, const std::string& scheme);

/// Registers (or replaces) a scheme from an explicit table.
void register_upos_scheme(const std::string& scheme, std::map<std::string, Upos> table);

/// Loads a scheme from a JSON file of the form {"TAG": "NOUN", ...}.
void load_upos_scheme(const std::string& scheme, const std::string& json_text);

}  // namespace vgs
