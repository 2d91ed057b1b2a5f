#include "vgs/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vgs/error.hpp"
#include "vgs/format.hpp"

namespace vgs {

using nlohmann::json;

void PeakConfig::validate() const {
  if (!(rel_threshold > 0.0) || rel_threshold > 1.0)
    throw ValidationError("peaks: rel_threshold must be in (0, 1], got " +
                          format_double(rel_threshold));
  if (min_separation < 1) throw ValidationError("peaks: min_separation must be >= 1");
}

std::string quartile_name(Quartile q) {
  switch (q) {
    case Quartile::Beginning: return "beginning";
    case Quartile::MiddleBeg: return "middle_beg";
    case Quartile::MiddleEnd: return "middle_end";
    case Quartile::End: return "end";
  }
  throw ValidationError("unknown quartile");
}

std::vector<Peak> detect_peaks(const Tensor& alpha, const PeakConfig& cfg) {
  cfg.validate();
  if (alpha.rank() != 1) throw ValidationError("peaks: attention weights must have rank 1");
  const std::size_t n = alpha.size();
  if (n == 0) throw ValidationError("peaks: empty attention vector");

  struct Cand {
    std::size_t index;
    double weight;
  };
  std::vector<Cand> cands;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && alpha[j + 1] == alpha[i]) ++j;
    const bool spans_all = i == 0 && j == n - 1;
    const bool left_ok = i == 0 || alpha[i - 1] < alpha[i];
    const bool right_ok = j == n - 1 || alpha[j + 1] < alpha[i];
    if (!spans_all && left_ok && right_ok) cands.push_back({(i + j) / 2, alpha[i]});
    i = j + 1;
  }
  if (cands.empty()) return {};

  double top = cands[0].weight;
  for (const auto& c : cands) top = std::max(top, c.weight);
  const double floor_w = cfg.rel_threshold * top;
  std::erase_if(cands, [&](const Cand& c) { return c.weight < floor_w; });

  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.index < b.index;
  });
  std::vector<Cand> kept;
  for (const auto& c : cands) {
    bool clear = true;
    for (const auto& k : kept) {
      const std::size_t gap = c.index > k.index ? c.index - k.index : k.index - c.index;
      if (gap < cfg.min_separation) {
        clear = false;
        break;
      }
    }
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Cand& a, const Cand& b) { return a.index < b.index; });

  std::vector<Peak> peaks;
  peaks.reserve(kept.size());
  for (const auto& c : kept) {
    Peak p;
    p.encoder_step = c.index;
    p.weight = c.weight;
    peaks.push_back(p);
  }
  return peaks;
}

double step_to_time(std::size_t encoder_step, const ModelConfig& cfg) {
  const double center = static_cast<double>(encoder_step) * cfg.conv_stride +
                        (cfg.conv_kernel - 1) / 2.0;
  return center * cfg.frame_hop_ms / 1000.0;
}

void locate_peaks(std::vector<Peak>& peaks, const ModelConfig& cfg) {
  for (auto& p : peaks) p.center_time_s = step_to_time(p.encoder_step, cfg);
}

void assign_peaks(std::vector<Peak>& peaks, const std::vector<TokenSpan>& tokens) {
  for (auto& p : peaks) {
    p.has_word = false;
    for (const auto& tok : tokens) {
      if (p.center_time_s >= tok.start_s && p.center_time_s < tok.end_s) {
        p.has_word = true;
        p.word = tok;
        const double r = (p.center_time_s - tok.start_s) / (tok.end_s - tok.start_s);
        if (r < 0.25)
          p.quartile = Quartile::Beginning;
        else if (r < 0.5)
          p.quartile = Quartile::MiddleBeg;
        else if (r < 0.75)
          p.quartile = Quartile::MiddleEnd;
        else
          p.quartile = Quartile::End;
        break;
      }
    }
  }
}

UtteranceAnalysis analyze_utterance(std::string caption_id, const Tensor& alpha,
                                    std::vector<TokenSpan> tokens, const ModelConfig& mcfg,
                                    const PeakConfig& pcfg) {
  UtteranceAnalysis u;
  u.caption_id = std::move(caption_id);
  u.encoder_len = alpha.size();
  u.alpha = alpha;
  u.tokens = std::move(tokens);
  u.peaks = detect_peaks(alpha, pcfg);
  locate_peaks(u.peaks, mcfg);
  assign_peaks(u.peaks, u.tokens);
  return u;
}

namespace {

struct RawCounts {
  std::map<Upos, std::size_t> by_tag;
  std::map<std::string, std::size_t> by_word;
  std::size_t assigned = 0;
  std::size_t unassigned = 0;

  void add(const Peak& p) {
    if (p.has_word) {
      ++assigned;
      ++by_tag[p.word.upos];
      ++by_word[p.word.surface];
    } else {
      ++unassigned;
    }
  }
};

PosDistribution finalize(const RawCounts& raw, const std::vector<CaptionRecord>& reference,
                         const char* what) {
  if (raw.assigned == 0)
    throw ValidationError(std::string(what) + ": no peaks landed on a word");

  std::map<std::string, std::size_t> ref_words;
  std::size_t ref_total = 0;
  for (const auto& rec : reference)
    for (const auto& tok : rec.tokens) {
      ++ref_words[tok.surface];
      ++ref_total;
    }
  if (ref_total == 0) throw ValidationError(std::string(what) + ": empty reference corpus");

  PosDistribution d;
  d.counts = raw.by_tag;
  d.assigned = raw.assigned;
  d.unassigned = raw.unassigned;
  for (const auto& [tag, c] : raw.by_tag)
    d.pct[tag] = 100.0 * static_cast<double>(c) / static_cast<double>(raw.assigned);
  for (const auto& [word, c] : raw.by_word) {
    d.word_peak_pct[word] = 100.0 * static_cast<double>(c) / static_cast<double>(raw.assigned);
    const auto it = ref_words.find(word);
    const std::size_t rc = it == ref_words.end() ? 0 : it->second;
    d.word_ref_pct[word] = 100.0 * static_cast<double>(rc) / static_cast<double>(ref_total);
  }
  return d;
}

}  // namespace

PosDistribution pos_observed(const std::vector<UtteranceAnalysis>& utts,
                             const std::vector<CaptionRecord>& reference) {
  RawCounts raw;
  for (const auto& u : utts)
    for (const auto& p : u.peaks) raw.add(p);
  return finalize(raw, reference, "pos_observed");
}

PosDistribution pos_baseline(const std::vector<UtteranceAnalysis>& utts,
                             const ModelConfig& mcfg,
                             const std::vector<CaptionRecord>& reference, const Rng& rng) {
  RawCounts raw;
  for (const auto& u : utts) {
    if (u.encoder_len == 0)
      throw ValidationError("pos_baseline: empty utterance " + u.caption_id);
    Rng r = rng.derive("baseline:" + u.caption_id);
    const std::size_t draws = 50 * u.peaks.size();
    for (std::size_t k = 0; k < draws; ++k) {
      Peak p;
      p.encoder_step = r.below(u.encoder_len);
      p.weight = 0.0;
      p.center_time_s = step_to_time(p.encoder_step, mcfg);
      std::vector<Peak> one{p};
      assign_peaks(one, u.tokens);
      raw.add(one[0]);
    }
  }
  return finalize(raw, reference, "pos_baseline");
}

std::array<double, 4> quartile_table(const std::vector<UtteranceAnalysis>& utts) {
  std::array<std::size_t, 4> counts = {0, 0, 0, 0};
  std::size_t assigned = 0;
  for (const auto& u : utts)
    for (const auto& p : u.peaks)
      if (p.has_word) {
        ++counts[static_cast<std::size_t>(p.quartile)];
        ++assigned;
      }
  if (assigned == 0) throw ValidationError("quartile_table: no peaks landed on a word");
  std::array<double, 4> pct{};
  for (std::size_t q = 0; q < 4; ++q)
    pct[q] = 100.0 * static_cast<double>(counts[q]) / static_cast<double>(assigned);
  return pct;
}

namespace {

json distribution_to_json(const PosDistribution& d) {
  json tags = json::object();
  for (const auto& [tag, p] : d.pct) {
    json row;
    row["count"] = d.counts.at(tag);
    row["pct"] = p;
    tags[upos_name(tag)] = row;
  }
  json words = json::object();
  for (const auto& [word, p] : d.word_peak_pct) {
    json row;
    row["peak_pct"] = p;
    row["ref_pct"] = d.word_ref_pct.at(word);
    words[word] = row;
  }
  json out;
  out["assigned"] = d.assigned;
  out["unassigned"] = d.unassigned;
  out["tags"] = tags;
  out["words"] = words;
  return out;
}

}  // namespace

std::string AnalysisReport::to_json() const {
  json out;
  out["n_utterances"] = n_utterances;
  out["total_peaks"] = total_peaks;
  out["peaks_per_utterance"] = peaks_per_utterance;
  out["observed"] = distribution_to_json(observed);
  out["baseline"] = distribution_to_json(baseline);
  json q;
  for (std::size_t i = 0; i < 4; ++i)
    q[quartile_name(static_cast<Quartile>(i))] = quartile_pct[i];
  out["quartiles"] = q;
  return out.dump(2);
}

AnalysisReport analyze_corpus(const std::vector<UtteranceAnalysis>& utts,
                              const std::vector<CaptionRecord>& reference,
                              const ModelConfig& mcfg, const Rng& rng) {
  if (utts.empty()) throw ValidationError("analyze_corpus: no utterances");
  AnalysisReport r;
  r.n_utterances = utts.size();
  for (const auto& u : utts) r.total_peaks += u.peaks.size();
  r.peaks_per_utterance =
      static_cast<double>(r.total_peaks) / static_cast<double>(r.n_utterances);
  r.observed = pos_observed(utts, reference);
  r.baseline = pos_baseline(utts, mcfg, reference, rng);
  r.quartile_pct = quartile_table(utts);
  return r;
}

void write_analysis_csvs(const std::string& dir, const AnalysisReport& report) {
  {
    std::ofstream out(dir + "/pos_distribution.csv", std::ios::binary);
    if (!out) throw FormatError("cannot write " + dir + "/pos_distribution.csv");
    out << "upos,observed_pct,baseline_pct\n";
    for (int t = 0; t < 12; ++t) {
      const Upos tag = static_cast<Upos>(t);
      const auto ob = report.observed.pct.find(tag);
      const auto bl = report.baseline.pct.find(tag);
      const double o = ob == report.observed.pct.end() ? 0.0 : ob->second;
      const double b = bl == report.baseline.pct.end() ? 0.0 : bl->second;
      out << upos_name(tag) << ',' << format_double(o) << ',' << format_double(b) << '\n';
    }
  }
  {
    std::ofstream out(dir + "/word_table.csv", std::ios::binary);
    if (!out) throw FormatError("cannot write " + dir + "/word_table.csv");
    out << "word,peak_freq_pct,ref_freq_pct\n";
    std::vector<std::pair<std::string, double>> rows(report.observed.word_peak_pct.begin(),
                                                     report.observed.word_peak_pct.end());
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (const auto& [word, p] : rows)
      out << word << ',' << format_double(p) << ','
          << format_double(report.observed.word_ref_pct.at(word)) << '\n';
  }
  {
    std::ofstream out(dir + "/quartiles.csv", std::ios::binary);
    if (!out) throw FormatError("cannot write " + dir + "/quartiles.csv");
    out << "beginning,middle_beg,middle_end,end\n";
    for (std::size_t q = 0; q < 4; ++q)
      out << format_double(report.quartile_pct[q]) << (q == 3 ? '\n' : ',');
  }
}

std::string utterance_to_json(const UtteranceAnalysis& u) {
  json out;
  out["caption_id"] = u.caption_id;
  out["encoder_len"] = u.encoder_len;
  json alpha = json::array();
  for (std::size_t t = 0; t < u.alpha.size(); ++t) alpha.push_back(u.alpha[t]);
  out["alpha"] = alpha;
  json tokens = json::array();
  for (const auto& tok : u.tokens) {
    json tj;
    tj["surface"] = tok.surface;
    tj["start_s"] = tok.start_s;
    tj["end_s"] = tok.end_s;
    tj["upos"] = upos_name(tok.upos);
    tokens.push_back(tj);
  }
  out["tokens"] = tokens;
  json peaks = json::array();
  for (const auto& p : u.peaks) {
    json pj;
    pj["encoder_step"] = p.encoder_step;
    pj["weight"] = p.weight;
    pj["center_time_s"] = p.center_time_s;
    if (p.has_word) {
      pj["word"] = p.word.surface;
      pj["upos"] = upos_name(p.word.upos);
      pj["quartile"] = quartile_name(p.quartile);
    }
    peaks.push_back(pj);
  }
  out["peaks"] = peaks;
  return out.dump(2);
}

}  // namespace vgs
