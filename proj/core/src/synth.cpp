#include "vgs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"
#include "vgs/rng.hpp"

namespace fs = std::filesystem;

namespace vgs {

namespace {

constexpr double kFrameHopS = 0.01;

std::string pad4(std::size_t n) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << n;
  return os.str();
}

bool safe_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

Tensor draw_matrix(Rng rng, std::size_t rows, std::size_t cols, double scale) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_concepts < 2) throw ValidationError("synth spec: n_concepts must be >= 2");
  if (n_images < 1) throw ValidationError("synth spec: n_images must be >= 1");
  if (captions_per_image < 1)
    throw ValidationError("synth spec: captions_per_image must be >= 1");
  if (image_dim < 1) throw ValidationError("synth spec: image_dim must be >= 1");
  if (mfcc_dim < 1) throw ValidationError("synth spec: mfcc_dim must be >= 1");
  if (min_concepts_per_image < 1)
    throw ValidationError("synth spec: min_concepts_per_image must be >= 1");
  if (max_concepts_per_image < min_concepts_per_image)
    throw ValidationError("synth spec: max_concepts_per_image < min_concepts_per_image");
  if (max_concepts_per_image > n_concepts)
    throw ValidationError("synth spec: max_concepts_per_image exceeds n_concepts");
  if (!(image_noise_sigma >= 0.0))
    throw ValidationError("synth spec: image_noise_sigma must be >= 0");

  if (train_images || val_images || test_images) {
    if (train_images + val_images + test_images != n_images)
      throw ValidationError("synth spec: split sizes must sum to n_images");
    if (train_images < 1) throw ValidationError("synth spec: train split must be nonempty");
  } else {
    if (!(train_frac > 0.0) || !(val_frac >= 0.0) || !(train_frac + val_frac <= 1.0))
      throw ValidationError("synth spec: split fractions out of range");
  }

  if (languages.empty()) throw ValidationError("synth spec: at least one language required");
  for (const auto& lang : languages) {
    if (!safe_name(lang.name))
      throw ValidationError("synth spec: language name '" + lang.name +
                            "' must be alphanumeric/_/-");
    if (std::count_if(languages.begin(), languages.end(),
                      [&](const SynthLanguage& l) { return l.name == lang.name; }) != 1)
      throw ValidationError("synth spec: duplicate language name '" + lang.name + "'");
    if (lang.templates.empty())
      throw ValidationError("synth spec: language '" + lang.name + "' has no templates");
    if (lang.min_word_frames < 2)
      throw ValidationError("synth spec: language '" + lang.name +
                            "' min_word_frames must be >= 2");
    if (lang.max_word_frames < lang.min_word_frames)
      throw ValidationError("synth spec: language '" + lang.name +
                            "' max_word_frames < min_word_frames");
    if (!(lang.noise_sigma >= 0.0))
      throw ValidationError("synth spec: language '" + lang.name + "' noise_sigma must be >= 0");
    for (const auto& tpl : lang.templates) {
      if (tpl.empty())
        throw ValidationError("synth spec: language '" + lang.name + "' has an empty template");
      if (std::find(tpl.begin(), tpl.end(), Upos::Noun) == tpl.end())
        throw ValidationError("synth spec: language '" + lang.name +
                              "' template lacks a NOUN slot");
      for (Upos slot : tpl) {
        if (slot == Upos::Noun) continue;
        const bool covered =
            std::any_of(lang.function_words.begin(), lang.function_words.end(),
                        [&](const auto& fw) { return fw.second == slot; });
        if (!covered)
          throw ValidationError("synth spec: language '" + lang.name +
                                "' has no function word for slot " + upos_name(slot));
      }
    }
    for (const auto& fw : lang.function_words) {
      if (fw.first.empty())
        throw ValidationError("synth spec: language '" + lang.name +
                              "' has an empty function word");
      if (fw.second == Upos::Noun)
        throw ValidationError("synth spec: language '" + lang.name +
                              "' function word '" + fw.first +
                              "' must not be tagged NOUN (nouns are concepts)");
    }
  }
}

std::array<std::size_t, 3> SynthSpec::split_sizes() const {
  if (train_images || val_images || test_images)
    return {train_images, val_images, test_images};
  const auto train_n = static_cast<std::size_t>(
      std::floor(static_cast<double>(n_images) * train_frac));
  const auto val_n =
      static_cast<std::size_t>(std::floor(static_cast<double>(n_images) * val_frac));
  return {train_n, val_n, n_images - train_n - val_n};
}

std::string SynthSpec::to_json() const {
  nlohmann::json j;
  j["n_concepts"] = n_concepts;
  j["n_images"] = n_images;
  j["captions_per_image"] = captions_per_image;
  j["image_dim"] = image_dim;
  j["mfcc_dim"] = mfcc_dim;
  j["min_concepts_per_image"] = min_concepts_per_image;
  j["max_concepts_per_image"] = max_concepts_per_image;
  j["image_noise_sigma"] = image_noise_sigma;
  j["seed"] = seed;
  if (train_images || val_images || test_images)
    j["split"] = {{"train", train_images}, {"val", val_images}, {"test", test_images}};
  else
    j["split"] = {{"train_frac", train_frac}, {"val_frac", val_frac}};
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& lang : languages) {
    nlohmann::json lj;
    lj["name"] = lang.name;
    nlohmann::json tpls = nlohmann::json::array();
    for (const auto& tpl : lang.templates) {
      nlohmann::json slots = nlohmann::json::array();
      for (Upos slot : tpl) slots.push_back(upos_name(slot));
      tpls.push_back(std::move(slots));
    }
    lj["templates"] = std::move(tpls);
    nlohmann::json fws = nlohmann::json::array();
    for (const auto& fw : lang.function_words)
      fws.push_back({{"surface", fw.first}, {"upos", upos_name(fw.second)}});
    lj["function_words"] = std::move(fws);
    lj["min_word_frames"] = lang.min_word_frames;
    lj["max_word_frames"] = lang.max_word_frames;
    lj["noise_sigma"] = lang.noise_sigma;
    langs.push_back(std::move(lj));
  }
  j["languages"] = std::move(langs);
  return j.dump(2);
}

SynthSpec SynthSpec::from_json(const std::string& text) {
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw FormatError("synth spec: expected a JSON object");
    SynthSpec s;
    auto get = [&j](const char* key, auto& into) {
      if (j.contains(key)) into = j.at(key).template get<std::decay_t<decltype(into)>>();
    };
    get("n_concepts", s.n_concepts);
    get("n_images", s.n_images);
    get("captions_per_image", s.captions_per_image);
    get("image_dim", s.image_dim);
    get("mfcc_dim", s.mfcc_dim);
    get("min_concepts_per_image", s.min_concepts_per_image);
    get("max_concepts_per_image", s.max_concepts_per_image);
    get("image_noise_sigma", s.image_noise_sigma);
    get("seed", s.seed);
    if (j.contains("split")) {
      const auto& sp = j.at("split");
      const bool absolute = sp.contains("train") || sp.contains("val") || sp.contains("test");
      const bool frac = sp.contains("train_frac") || sp.contains("val_frac");
      if (absolute && frac)
        throw FormatError("synth spec: split mixes absolute sizes and fractions");
      if (absolute) {
        s.train_images = sp.value("train", 0u);
        s.val_images = sp.value("val", 0u);
        s.test_images = sp.value("test", 0u);
      } else {
        s.train_frac = sp.value("train_frac", s.train_frac);
        s.val_frac = sp.value("val_frac", s.val_frac);
      }
    }
    if (!j.contains("languages"))
      throw FormatError("synth spec: missing 'languages'");
    for (const auto& lj : j.at("languages")) {
      SynthLanguage lang;
      lang.name = lj.at("name").get<std::string>();
      for (const auto& tj : lj.at("templates")) {
        std::vector<Upos> tpl;
        for (const auto& slot : tj) tpl.push_back(parse_upos(slot.get<std::string>()));
        lang.templates.push_back(std::move(tpl));
      }
      if (lj.contains("function_words"))
        for (const auto& fj : lj.at("function_words"))
          lang.function_words.emplace_back(fj.at("surface").get<std::string>(),
                                           parse_upos(fj.at("upos").get<std::string>()));
      if (lj.contains("min_word_frames")) lang.min_word_frames = lj.at("min_word_frames");
      if (lj.contains("max_word_frames")) lang.max_word_frames = lj.at("max_word_frames");
      if (lj.contains("noise_sigma")) lang.noise_sigma = lj.at("noise_sigma");
      s.languages.push_back(std::move(lang));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synth spec: ") + e.what());
  }
}

std::vector<std::string> generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  const Rng root(spec.seed);

  // fixed concept embeddings in image space
  std::vector<Tensor> concept_embed;
  concept_embed.reserve(spec.n_concepts);
  for (std::size_t c = 0; c < spec.n_concepts; ++c)
    concept_embed.push_back(
        draw_matrix(root.derive("concept_embed", c), 1, spec.image_dim, 1.0));

  const std::vector<std::string> concept_names = [&] {
    std::vector<std::string> names;
    for (std::size_t c = 0; c < spec.n_concepts; ++c) names.push_back("c" + pad4(c));
    return names;
  }();

  // per-image concept sets and image features
  std::vector<std::vector<std::size_t>> image_concepts(spec.n_images);
  std::vector<Tensor> image_feat;
  image_feat.reserve(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    Rng rng = root.derive("image", i);
    const std::size_t n =
        spec.min_concepts_per_image +
        rng.below(spec.max_concepts_per_image - spec.min_concepts_per_image + 1);
    std::vector<std::size_t> all(spec.n_concepts);
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
    rng.shuffle(all);
    image_concepts[i].assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    Tensor feat({1, spec.image_dim});
    for (std::size_t c : image_concepts[i])
      for (std::size_t d = 0; d < spec.image_dim; ++d) feat[d] += concept_embed[c][d];
    for (std::size_t d = 0; d < spec.image_dim; ++d)
      feat[d] += spec.image_noise_sigma * rng.normal();
    image_feat.push_back(std::move(feat));
  }

  // image-based split shared by all languages
  std::vector<std::size_t> order(spec.n_images);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  root.derive("split", 0).shuffle(order);
  const auto sizes = spec.split_sizes();
  const char* split_names[3] = {"train", "val", "test"};
  std::vector<int> split_of(spec.n_images);
  {
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t k = 0; k < sizes[static_cast<std::size_t>(s)]; ++k)
        split_of[order[at++]] = s;
  }

  const fs::path out(out_dir);
  fs::create_directories(out / "features" / "images");

  std::vector<std::string> image_ids(spec.n_images);
  for (std::size_t i = 0; i < spec.n_images; ++i) {
    image_ids[i] = "img_" + pad4(i);
    write_features((out / "features" / "images" / (image_ids[i] + ".vgsf")).string(),
                   image_feat[i]);
  }

  std::vector<std::string> manifest_paths;
  for (const auto& lang : spec.languages) {
    fs::create_directories(out / "features" / lang.name);

    // fixed acoustic template per word type, drawn lazily
    std::map<std::string, Tensor> acoustic;
    auto word_template = [&](const std::string& word) -> const Tensor& {
      auto it = acoustic.find(word);
      if (it != acoustic.end()) return it->second;
      Rng rng = root.derive("tpl:" + lang.name + ":" + word);
      const std::size_t frames =
          lang.min_word_frames + rng.below(lang.max_word_frames - lang.min_word_frames + 1);
      Tensor t = draw_matrix(rng, frames, spec.mfcc_dim, 1.0);
      return acoustic.emplace(word, std::move(t)).first->second;
    };

    Manifest splits[3];
    for (int s = 0; s < 3; ++s) {
      splits[s].split = lang.name + "_" + split_names[s];
      splits[s].dir = out.string();
    }
    for (std::size_t i = 0; i < spec.n_images; ++i)
      splits[static_cast<std::size_t>(split_of[i])].images[image_ids[i]] =
          "features/images/" + image_ids[i] + ".vgsf";

    for (std::size_t i = 0; i < spec.n_images; ++i) {
      for (std::size_t j = 0; j < spec.captions_per_image; ++j) {
        Rng rng = root.derive("caption:" + lang.name,
                              i * spec.captions_per_image + j);
        const auto& tpl = lang.templates[rng.below(lang.templates.size())];
        std::vector<std::size_t> concepts = image_concepts[i];
        rng.shuffle(concepts);

        CaptionRecord rec;
        rec.caption_id = lang.name + "_" + pad4(i) + "_" + std::to_string(j);
        rec.image_id = image_ids[i];
        rec.language = lang.name;
        rec.feature_ref = "features/" + lang.name + "/" + rec.caption_id + ".vgsf";

        std::vector<std::string> words;
        std::size_t noun_at = 0;
        for (Upos slot : tpl) {
          if (slot == Upos::Noun) {
            words.push_back(concept_names[concepts[noun_at % concepts.size()]]);
            ++noun_at;
            rec.tokens.push_back({words.back(), 0, 0, Upos::Noun});
          } else {
            std::vector<std::size_t> options;
            for (std::size_t f = 0; f < lang.function_words.size(); ++f)
              if (lang.function_words[f].second == slot) options.push_back(f);
            const auto& fw = lang.function_words[options[rng.below(options.size())]];
            words.push_back(fw.first);
            rec.tokens.push_back({fw.first, 0, 0, fw.second});
          }
        }

        std::size_t total_frames = 0;
        for (const auto& w : words) total_frames += word_template(w).dim(0);
        Tensor feat({total_frames, spec.mfcc_dim});
        std::size_t frame = 0;
        for (std::size_t wi = 0; wi < words.size(); ++wi) {
          const Tensor& t = word_template(words[wi]);
          rec.tokens[wi].start_s = static_cast<double>(frame) * kFrameHopS;
          for (std::size_t f = 0; f < t.dim(0); ++f, ++frame)
            for (std::size_t d = 0; d < spec.mfcc_dim; ++d) feat.at(frame, d) = t.at(f, d);
          rec.tokens[wi].end_s = static_cast<double>(frame) * kFrameHopS;
        }
        for (std::size_t k = 0; k < feat.size(); ++k) feat[k] += lang.noise_sigma * rng.normal();
        rec.n_frames = total_frames;

        write_features((out / rec.feature_ref).string(), feat);
        splits[static_cast<std::size_t>(split_of[i])].records.push_back(std::move(rec));
      }
    }

    for (int s = 0; s < 3; ++s) {
      const std::string path = (out / (lang.name + "_" + split_names[s] + ".jsonl")).string();
      save_manifest(splits[s], path);
      manifest_paths.push_back(path);
    }
  }
  return manifest_paths;
}

}  // namespace vgs
