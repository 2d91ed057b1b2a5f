#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "vgs/data.hpp"
#include "vgs/error.hpp"
#include "vgs/synth.hpp"

using namespace vgs;
using vgstest::TempDir;
namespace fs = std::filesystem;

namespace {

SynthLanguage toy_lang(const std::string& name) {
  SynthLanguage l;
  l.name = name;
  l.templates = {
      {Upos::Det, Upos::Noun, Upos::Verb},
      {Upos::Noun, Upos::Prt, Upos::Verb, Upos::Noun},
  };
  l.function_words = {
      {name + "_the", Upos::Det}, {name + "_a", Upos::Det},   {name + "_is", Upos::Verb},
      {name + "_has", Upos::Verb}, {name + "_wa", Upos::Prt},
  };
  l.min_word_frames = 4;
  l.max_word_frames = 9;
  l.noise_sigma = 0.05;
  return l;
}

SynthSpec toy_spec() {
  SynthSpec s;
  s.n_concepts = 6;
  s.n_images = 10;
  s.captions_per_image = 2;
  s.image_dim = 8;
  s.mfcc_dim = 5;
  s.min_concepts_per_image = 1;
  s.max_concepts_per_image = 3;
  s.seed = 77;
  s.train_frac = 0.8;
  s.val_frac = 0.1;
  s.languages = {toy_lang("en"), toy_lang("ja")};
  return s;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[fs::relative(e.path(), root).string()] = vgstest::read_bytes(e.path().string());
  return out;
}

}  // namespace

TEST_CASE("synthetic corpora are byte-identical across reruns") {
  TempDir a, b;
  const SynthSpec spec = toy_spec();
  auto pa = generate_synthetic(spec, a.at("out"));
  auto pb = generate_synthetic(spec, b.at("out"));
  REQUIRE(pa.size() == 6);  // 2 languages x 3 splits
  REQUIRE(pb.size() == 6);

  const auto ta = tree_bytes(a.path / "out");
  const auto tb = tree_bytes(b.path / "out");
  REQUIRE(ta.size() == tb.size());
  CHECK(ta == tb);

  // A different seed moves the bytes.
  SynthSpec other = spec;
  other.seed = 78;
  TempDir c;
  generate_synthetic(other, c.at("out"));
  CHECK(tree_bytes(c.path / "out") != ta);
}

TEST_CASE("generated manifests load, validate and line up with features") {
  TempDir tmp;
  const SynthSpec spec = toy_spec();
  const auto paths = generate_synthetic(spec, tmp.at("out"));

  std::size_t total_records = 0;
  std::set<std::string> all_caption_ids;
  for (const auto& p : paths) {
    Manifest m = load_manifest(p);  // load_manifest validates
    total_records += m.records.size();
    for (const auto& rec : m.records) {
      CHECK(all_caption_ids.insert(rec.caption_id).second);
      // captions per split = images in split x captions_per_image
      CHECK(m.images.count(rec.image_id) == 1);

      Tensor feat = load_features(m.resolve(rec.feature_ref));
      CHECK(feat.dim(0) == rec.n_frames);
      CHECK(feat.dim(1) == spec.mfcc_dim);

      // tokens tile the audio exactly at the 10 ms hop
      REQUIRE(!rec.tokens.empty());
      CHECK(rec.tokens.front().start_s == 0.0);
      for (std::size_t t = 1; t < rec.tokens.size(); ++t)
        CHECK(rec.tokens[t].start_s == rec.tokens[t - 1].end_s);
      CHECK(rec.tokens.back().end_s ==
            doctest::Approx(static_cast<double>(rec.n_frames) * 0.01).epsilon(1e-12));
    }
    for (const auto& [id, ref] : m.images) {
      Tensor img = load_features(m.resolve(ref));
      CHECK(img.dim(0) == 1);
      CHECK(img.dim(1) == spec.image_dim);
    }
  }
  CHECK(total_records == spec.n_images * spec.captions_per_image * spec.languages.size());
}

TEST_CASE("splits are image-disjoint and shared across languages") {
  TempDir tmp;
  const SynthSpec spec = toy_spec();  // 10 images -> 8/1/1
  const auto paths = generate_synthetic(spec, tmp.at("out"));

  auto ids = [](const Manifest& m) {
    std::set<std::string> s;
    for (const auto& [id, ref] : m.images) s.insert(id);
    return s;
  };
  Manifest en_train = load_manifest(paths[0]);
  Manifest en_val = load_manifest(paths[1]);
  Manifest en_test = load_manifest(paths[2]);
  Manifest ja_train = load_manifest(paths[3]);

  CHECK(en_train.images.size() == 8);
  CHECK(en_val.images.size() == 1);
  CHECK(en_test.images.size() == 1);
  CHECK(ids(en_train) == ids(ja_train));

  std::set<std::string> seen;
  for (const auto& m : {en_train, en_val, en_test})
    for (const auto& id : ids(m)) CHECK(seen.insert(id).second);
  CHECK(seen.size() == 10);
}

TEST_CASE("nouns are grounded in the image's concepts") {
  TempDir tmp;
  const SynthSpec spec = toy_spec();
  const auto paths = generate_synthetic(spec, tmp.at("out"));

  // For each image, the nouns used across every caption and language must
  // come from one small fixed concept set.
  std::map<std::string, std::set<std::string>> nouns_of_image;
  for (const auto& p : paths) {
    Manifest m = load_manifest(p);
    for (const auto& rec : m.records)
      for (const auto& tok : rec.tokens)
        if (tok.upos == Upos::Noun) nouns_of_image[rec.image_id].insert(tok.surface);
  }
  REQUIRE(nouns_of_image.size() == 10);
  for (const auto& [img, nouns] : nouns_of_image) {
    CHECK(nouns.size() >= spec.min_concepts_per_image);
    CHECK(nouns.size() <= spec.max_concepts_per_image);
    for (const auto& n : nouns) {
      REQUIRE(n.size() == 5);
      CHECK(n[0] == 'c');
      const std::size_t idx = std::stoul(n.substr(1));
      CHECK(idx < spec.n_concepts);
    }
  }
}

TEST_CASE("each word type keeps one acoustic duration per language") {
  TempDir tmp;
  const SynthSpec spec = toy_spec();
  const auto paths = generate_synthetic(spec, tmp.at("out"));

  std::map<std::pair<std::string, std::string>, double> duration;
  std::size_t tokens_seen = 0;
  for (const auto& p : paths) {
    Manifest m = load_manifest(p);
    for (const auto& rec : m.records)
      for (const auto& tok : rec.tokens) {
        ++tokens_seen;
        const auto key = std::make_pair(rec.language, tok.surface);
        const double len = tok.end_s - tok.start_s;
        auto [it, fresh] = duration.emplace(key, len);
        if (!fresh) CHECK(it->second == doctest::Approx(len).epsilon(1e-12));
        const auto frames = static_cast<std::size_t>(len / 0.01 + 0.5);
        CHECK(frames >= 4);
        CHECK(frames <= 9);
      }
  }
  CHECK(tokens_seen > 0);
}

TEST_CASE("absolute split sizes override the fractions") {
  SynthSpec s = toy_spec();
  s.train_images = 7;
  s.val_images = 2;
  s.test_images = 1;
  CHECK(s.split_sizes() == std::array<std::size_t, 3>{7, 2, 1});
  TempDir tmp;
  const auto paths = generate_synthetic(s, tmp.at("out"));
  CHECK(load_manifest(paths[0]).images.size() == 7);
  CHECK(load_manifest(paths[1]).images.size() == 2);
  CHECK(load_manifest(paths[2]).images.size() == 1);
}

TEST_CASE("synth spec validation") {
  CHECK_NOTHROW(toy_spec().validate());
  SUBCASE("template without a noun slot") {
    SynthSpec s = toy_spec();
    s.languages[0].templates.push_back({Upos::Det, Upos::Verb});
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("uncovered function slot") {
    SynthSpec s = toy_spec();
    s.languages[0].templates.push_back({Upos::Noun, Upos::Adp});
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("noun-tagged function word") {
    SynthSpec s = toy_spec();
    s.languages[0].function_words.emplace_back("dog", Upos::Noun);
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("bad language name") {
    SynthSpec s = toy_spec();
    s.languages[0].name = "en glish";
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("duplicate language name") {
    SynthSpec s = toy_spec();
    s.languages[1].name = "en";
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("splits must sum to the image count") {
    SynthSpec s = toy_spec();
    s.train_images = 5;
    s.val_images = 1;
    s.test_images = 1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("word frames lower bound") {
    SynthSpec s = toy_spec();
    s.languages[0].min_word_frames = 1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("concept range") {
    SynthSpec s = toy_spec();
    s.max_concepts_per_image = 7;  // > n_concepts
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("no languages") {
    SynthSpec s = toy_spec();
    s.languages.clear();
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
}

TEST_CASE("synth spec JSON round trip") {
  const SynthSpec s = toy_spec();
  const SynthSpec r = SynthSpec::from_json(s.to_json());
  CHECK(r.to_json() == s.to_json());
  CHECK(r.n_concepts == s.n_concepts);
  CHECK(r.languages.size() == 2);
  CHECK(r.languages[0].templates == s.languages[0].templates);
  CHECK(r.languages[0].function_words == s.languages[0].function_words);
  CHECK(r.seed == s.seed);

  CHECK_THROWS_AS(SynthSpec::from_json("[]"), FormatError);
  CHECK_THROWS_AS(SynthSpec::from_json("{"), FormatError);
  CHECK_THROWS_AS(SynthSpec::from_json("{}"), FormatError);  // languages required

  SynthSpec abs = s;
  abs.train_images = 7;
  abs.val_images = 2;
  abs.test_images = 1;
  const SynthSpec abs_r = SynthSpec::from_json(abs.to_json());
  CHECK(abs_r.split_sizes() == std::array<std::size_t, 3>{7, 2, 1});
}
