#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

/// Retrieval outcome over a query set: per-query 1-based gold ranks plus the
/// usual aggregates. Median of an even-length rank list is the mean of the
/// two central values.
struct RankingResult {
  std::vector<std::size_t> ranks;
  double r_at_1 = 0.0;
  double r_at_5 = 0.0;
  double r_at_10 = 0.0;
  double median_rank = 0.0;

  std::string to_json() const;
};

/// Aggregates a rank list into a RankingResult.
RankingResult summarize_ranks(std::vector<std::size_t> ranks);

/// Expected median rank of a random ranker over a pool.
double chance_median(std::size_t pool_size);

/// Ranks every image by ascending cosine distance from each utterance
/// embedding; ties broken by image index. gold[q] is the pool index of query
/// q's correct image.
RankingResult rank_images(const std::vector<Tensor>& utterances,
                          const std::vector<Tensor>& images,
                          const std::vector<std::size_t>& gold);

/// Distances from one embedding set to a shared pivot set, all within a
/// single model's space: out[q][p] = cosine distance(items[q], pivots[p]).
Tensor pivot_distances(const std::vector<Tensor>& items, const std::vector<Tensor>& pivots);

/// Cross-lingual rank via image pivots. src_dist is [Q, P] (source
/// utterances to pivots in the source model's space), tgt_dist is [C, P]
/// (target utterances to pivots in the target model's space);
/// score(q, c) = min over pivots p of src_dist[q,p] + tgt_dist[c,p].
/// Candidates are ranked by ascending score, ties broken by candidate index.
/// When score_out is non-null it receives the [Q, C] score matrix.
RankingResult crosslingual_rank(const Tensor& src_dist, const Tensor& tgt_dist,
                                const std::vector<std::size_t>& gold,
                                Tensor* score_out = nullptr);

/// One language side of the subsampled protocol: each image id maps to the
/// row indices (into that side's pivot-distance matrix) of its captions.
struct SubsampleSide {
  std::string language;  // labels the derived sampling streams
  Tensor dist;           // [n_utterances, P] pivot distances
  std::map<std::string, std::vector<std::size_t>> captions_by_image;
};

struct SubsampleResult {
  std::vector<RankingResult> trials;
  double r_at_1 = 0.0;
  double r_at_5 = 0.0;
  double r_at_10 = 0.0;
  double median_rank = 0.0;

  std::string to_json() const;
};

/// The subsampled protocol: n_trials random pools of pool_size images
/// shared by both sides, one caption per image per language, ranked in the
/// src -> tgt direction; metrics averaged over trials. Sampling streams are
/// derived per (trial, language, image), so swapping the two sides reuses
/// identical caption choices and transposes the score matrices. When
/// score_mats is non-null it receives the per-trial [pool, pool] score
/// matrices.
SubsampleResult subsample_eval(const SubsampleSide& src, const SubsampleSide& tgt,
                               std::size_t n_trials, std::size_t pool_size, const Rng& rng,
                               std::vector<Tensor>* score_mats = nullptr);

/// Fixed-column CSV: direction,r_at_1,r_at_5,r_at_10,median_rank.
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, RankingResult>>& rows);

}  // namespace vgs
