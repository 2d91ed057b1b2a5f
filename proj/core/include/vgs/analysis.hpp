#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/model.hpp"
#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"
#include "vgs/upos.hpp"

namespace vgs {

struct PeakConfig {
  double rel_threshold = 0.6;   // keep peaks >= this fraction of the highest
  std::size_t min_separation = 1;  // encoder steps; 1 imposes nothing
  std::size_t layer = 0;        // attention head to analyze; 0 = top layer

  void validate() const;
};

enum class Quartile { Beginning, MiddleBeg, MiddleEnd, End };

std::string quartile_name(Quartile q);

struct Peak {
  std::size_t encoder_step = 0;
  double weight = 0.0;
  double center_time_s = 0.0;
  bool has_word = false;
  TokenSpan word;               // valid iff has_word
  Quartile quartile = Quartile::Beginning;  // valid iff has_word
};

/// Local maxima of the attention weights by first-order difference.
/// A plateau of equal values yields its center index (ties to the left);
/// a boundary run is a maximum only when its single inner neighbor is
/// strictly lower. Candidates below rel_threshold x the highest candidate
/// are dropped, then min_separation is enforced greedily, higher peaks
/// first. Peaks return in time order with center_time_s and word unset.
std::vector<Peak> detect_peaks(const Tensor& alpha, const PeakConfig& cfg);

/// Center of encoder step t over input frames is t*stride + (kernel-1)/2;
/// returns that frame center scaled by the frame hop.
double step_to_time(std::size_t encoder_step, const ModelConfig& cfg);

/// Fills center_time_s from each peak's encoder step.
void locate_peaks(std::vector<Peak>& peaks, const ModelConfig& cfg);

/// Attaches to each peak the token whose [start_s, end_s) contains its
/// center time, along with the within-word quartile of the relative
/// position r = (t - start)/(end - start); bins are [0,.25) Beginning,
/// [.25,.5) MiddleBeg, [.5,.75) MiddleEnd, [.75,1) End. Peaks over silence
/// stay unassigned.
void assign_peaks(std::vector<Peak>& peaks, const std::vector<TokenSpan>& tokens);

/// Everything the forensics need about one utterance.
struct UtteranceAnalysis {
  std::string caption_id;
  std::size_t encoder_len = 0;
  Tensor alpha;
  std::vector<TokenSpan> tokens;
  std::vector<Peak> peaks;  // located and assigned
};

/// detect -> locate -> assign for one utterance.
UtteranceAnalysis analyze_utterance(std::string caption_id, const Tensor& alpha,
                                    std::vector<TokenSpan> tokens, const ModelConfig& mcfg,
                                    const PeakConfig& pcfg);

/// POS and word distribution over assigned peaks, with reference word
/// frequencies counted over a token corpus (typically the training split).
struct PosDistribution {
  std::map<Upos, std::size_t> counts;
  std::map<Upos, double> pct;              // percentages over assigned peaks
  std::size_t assigned = 0;
  std::size_t unassigned = 0;
  std::map<std::string, double> word_peak_pct;
  std::map<std::string, double> word_ref_pct;
};

PosDistribution pos_observed(const std::vector<UtteranceAnalysis>& utts,
                             const std::vector<CaptionRecord>& reference);

/// The random-peak control: per utterance, draws 50 x (its detected peak
/// count) encoder steps uniformly and pushes them through the same
/// locate/assign pipeline. Sampling streams derive from the caption id, so
/// results do not depend on utterance order.
PosDistribution pos_baseline(const std::vector<UtteranceAnalysis>& utts,
                             const ModelConfig& mcfg,
                             const std::vector<CaptionRecord>& reference, const Rng& rng);

/// Percentage of assigned peaks per within-word quartile, in
/// Beginning/MiddleBeg/MiddleEnd/End order.
std::array<double, 4> quartile_table(const std::vector<UtteranceAnalysis>& utts);

struct AnalysisReport {
  std::size_t n_utterances = 0;
  std::size_t total_peaks = 0;
  double peaks_per_utterance = 0.0;
  PosDistribution observed;
  PosDistribution baseline;
  std::array<double, 4> quartile_pct = {0, 0, 0, 0};

  std::string to_json() const;
};

AnalysisReport analyze_corpus(const std::vector<UtteranceAnalysis>& utts,
                              const std::vector<CaptionRecord>& reference,
                              const ModelConfig& mcfg, const Rng& rng);

/// Writes pos_distribution.csv (upos, observed_pct, baseline_pct),
/// word_table.csv (word, peak_freq_pct, ref_freq_pct) and quartiles.csv
/// under dir.
void write_analysis_csvs(const std::string& dir, const AnalysisReport& report);

/// Per-utterance export: attention weights, peak indices and assignments,
/// one JSON object.
std::string utterance_to_json(const UtteranceAnalysis& u);

}  // namespace vgs
