#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/upos.hpp"

namespace vgs {

/// One language of a synthetic bilingual corpus: word-order templates whose
/// NOUN slots are filled with the image's concepts, a function-word inventory
/// for every other slot, and acoustic parameters.
struct SynthLanguage {
  std::string name;
  std::vector<std::vector<Upos>> templates;
  std::vector<std::pair<std::string, Upos>> function_words;
  std::size_t min_word_frames = 8;
  std::size_t max_word_frames = 20;
  double noise_sigma = 0.1;
};

/// Recipe for a deterministic synthetic grounded corpus. Each image owns a
/// fixed concept set; captions in every language describe those concepts;
/// every word type owns a fixed acoustic template so the same word always
/// sounds alike (plus per-utterance noise). Splits are image-based and shared
/// across languages.
struct SynthSpec {
  std::size_t n_concepts = 16;
  std::size_t n_images = 100;
  std::size_t captions_per_image = 5;
  std::size_t image_dim = 64;
  std::size_t mfcc_dim = 13;
  std::size_t min_concepts_per_image = 1;
  std::size_t max_concepts_per_image = 3;
  double image_noise_sigma = 0.05;
  std::uint64_t seed = 0;

  // Absolute split sizes win when any is nonzero; otherwise the fractions
  // apply (test gets the remainder).
  double train_frac = 0.8;
  double val_frac = 0.1;
  std::size_t train_images = 0;
  std::size_t val_images = 0;
  std::size_t test_images = 0;

  std::vector<SynthLanguage> languages;

  void validate() const;
  /// (train, val, test) image counts after resolving fractions/absolutes.
  std::array<std::size_t, 3> split_sizes() const;

  std::string to_json() const;
  static SynthSpec from_json(const std::string& text);
};

/// Generates the corpus under out_dir: feature files in features/, one
/// manifest per language and split. Returns the manifest paths,
/// language-major in train/val/test order. Reruns with the same spec
/// produce byte-identical trees.
std::vector<std::string> generate_synthetic(const SynthSpec& spec, const std::string& out_dir);

}  // namespace vgs
