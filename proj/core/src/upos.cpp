#include "vgs/upos.hpp"

#include <mutex>
#include <unordered_map>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"

namespace vgs {

namespace {

const std::map<std::string, Upos>& canonical() {
  static const std::map<std::string, Upos> t = {
      {"NOUN", Upos::Noun}, {"VERB", Upos::Verb}, {"ADJ", Upos::Adj},
      {"ADV", Upos::Adv},   {"PRON", Upos::Pron}, {"DET", Upos::Det},
      {"ADP", Upos::Adp},   {"NUM", Upos::Num},   {"CONJ", Upos::Conj},
      {"PRT", Upos::Prt},   {"PUNCT", Upos::Punct}, {".", Upos::Punct},
      {"X", Upos::X},
  };
  return t;
}

std::map<std::string, Upos> treetagger_en() {
  std::map<std::string, Upos> t;
  for (const char* k : {"NN", "NNS", "NP", "NPS", "NNP", "NNPS"}) t[k] = Upos::Noun;
  for (const char* k : {"VB", "VBD", "VBG", "VBN", "VBP", "VBZ", "VV", "VVD", "VVG", "VVN",
                        "VVP", "VVZ", "VH", "VHD", "VHG", "VHN", "VHP", "VHZ", "MD"})
    t[k] = Upos::Verb;
  for (const char* k : {"JJ", "JJR", "JJS"}) t[k] = Upos::Adj;
  for (const char* k : {"RB", "RBR", "RBS", "WRB"}) t[k] = Upos::Adv;
  for (const char* k : {"PP", "PP$", "PRP", "PRP$", "WP", "WP$", "EX"}) t[k] = Upos::Pron;
  for (const char* k : {"DT", "PDT", "WDT"}) t[k] = Upos::Det;
  for (const char* k : {"IN", "TO"}) t[k] = Upos::Adp;
  t["CD"] = Upos::Num;
  t["CC"] = Upos::Conj;
  for (const char* k : {"POS", "RP"}) t[k] = Upos::Prt;
  for (const char* k : {".", ",", ":", "(", ")", "``", "''", "SENT", "SYM"}) t[k] = Upos::Punct;
  for (const char* k : {"FW", "LS", "UH", "XX"}) t[k] = Upos::X;
  return t;
}

std::map<std::string, Upos> kytea_ja() {
  std::map<std::string, Upos> t;
  t["名詞"] = Upos::Noun;        // noun
  t["代名詞"] = Upos::Pron;  // pronoun
  t["動詞"] = Upos::Verb;        // verb
  t["形容詞"] = Upos::Adj;   // adjective
  t["形状詞"] = Upos::Adj;   // adjectival noun
  t["副詞"] = Upos::Adv;         // adverb
  t["連体詞"] = Upos::Det;   // adnominal
  t["助詞"] = Upos::Prt;         // particle
  t["接続詞"] = Upos::Conj;  // conjunction
  t["数詞"] = Upos::Num;         // numeral
  t["語尾"] = Upos::Verb;        // conjugation suffix ("TAIL"), folded into VERB
  t["TAIL"] = Upos::Verb;
  t["助動詞"] = Upos::Verb;  // auxiliary verb
  t["接頭辞"] = Upos::X;     // prefix
  t["接尾辞"] = Upos::X;     // suffix
  t["感動詞"] = Upos::X;     // interjection
  t["記号"] = Upos::Punct;       // symbol
  t["補助記号"] = Upos::Punct;
  t["UNK"] = Upos::X;
  return t;
}

struct Registry {
  std::mutex mu;
  std::unordered_map<std::string, std::map<std::string, Upos>> schemes;
  Registry() {
    schemes["upos"] = canonical();
    schemes["treetagger-en"] = treetagger_en();
    schemes["kytea-ja"] = kytea_ja();
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

std::string upos_name(Upos tag) {
  switch (tag) {
    case Upos::Noun: return "NOUN";
    case Upos::Verb: return "VERB";
    case Upos::Adj: return "ADJ";
    case Upos::Adv: return "ADV";
    case Upos::Pron: return "PRON";
    case Upos::Det: return "DET";
    case Upos::Adp: return "ADP";
    case Upos::Num: return "NUM";
    case Upos::Conj: return "CONJ";
    case Upos::Prt: return "PRT";
    case Upos::Punct: return "PUNCT";
    case Upos::X: return "X";
  }
  throw ValidationError("upos_name: invalid tag value");
}

Upos parse_upos(const std::string& name) {
  const auto& t = canonical();
  auto it = t.find(name);
  if (it == t.end()) throw FormatError("unknown UPOS tag '" + name + "'");
  return it->second;
}

Upos map_upos(const std::string& tagger_tag, const std::string& scheme) {
  Registry& r = registry();
  std::lock_guard<std::mutex> lock(r.mu);
  auto s = r.schemes.find(scheme);
  if (s == r.schemes.end()) throw ValidationError("unknown UPOS scheme '" + scheme + "'");
  auto it = s->second.find(tagger_tag);
  if (it == s->second.end())
    throw FormatError("unknown tag '" + tagger_tag + "' in UPOS scheme '" + scheme + "'");
  return it->second;
}

void register_upos_scheme(const std::string& scheme, std::map<std::string, Upos> table) {
  if (scheme.empty()) throw ValidationError("UPOS scheme name must not be empty");
  Registry& r = registry();
  std::lock_guard<std::mutex> lock(r.mu);
  r.schemes[scheme] = std::move(table);
}

void load_upos_scheme(const std::string& scheme, const std::string& json_text) {
  std::map<std::string, Upos> table;
  try {
    nlohmann::json j = nlohmann::json::parse(json_text);
    if (!j.is_object()) throw FormatError("UPOS scheme file: expected a JSON object");
    for (const auto& item : j.items())
      table[item.key()] = parse_upos(item.value().get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("UPOS scheme file: ") + e.what());
  }
  register_upos_scheme(scheme, std::move(table));
}

}  // namespace vgs
