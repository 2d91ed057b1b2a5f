#include "vgs/retrieval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "vgs/error.hpp"
#include "vgs/format.hpp"
#include "vgs/model.hpp"

namespace vgs {

namespace {

double fraction_leq(const std::vector<std::size_t>& ranks, std::size_t k) {
  std::size_t n = 0;
  for (std::size_t r : ranks)
    if (r <= k) ++n;
  return static_cast<double>(n) / static_cast<double>(ranks.size());
}

}  // namespace

RankingResult summarize_ranks(std::vector<std::size_t> ranks) {
  if (ranks.empty()) throw ValidationError("summarize_ranks: no queries");
  RankingResult out;
  out.r_at_1 = fraction_leq(ranks, 1);
  out.r_at_5 = fraction_leq(ranks, 5);
  out.r_at_10 = fraction_leq(ranks, 10);
  std::vector<std::size_t> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.median_rank = n % 2 == 1 ? static_cast<double>(sorted[n / 2])
                               : (static_cast<double>(sorted[n / 2 - 1]) +
                                  static_cast<double>(sorted[n / 2])) /
                                     2.0;
  out.ranks = std::move(ranks);
  return out;
}

double chance_median(std::size_t pool_size) {
  return (static_cast<double>(pool_size) + 1.0) / 2.0;
}

RankingResult rank_images(const std::vector<Tensor>& utterances,
                          const std::vector<Tensor>& images,
                          const std::vector<std::size_t>& gold) {
  if (utterances.empty()) throw ValidationError("rank_images: no queries");
  if (images.empty()) throw ValidationError("rank_images: empty image pool");
  if (gold.size() != utterances.size())
    throw DimensionError("rank_images: gold size " + std::to_string(gold.size()) +
                         " does not match " + std::to_string(utterances.size()) + " queries");
  const std::size_t n = images.size();
  std::vector<std::size_t> ranks(utterances.size());
  for (std::size_t q = 0; q < utterances.size(); ++q) {
    if (gold[q] >= n)
      throw ValidationError("rank_images: gold index " + std::to_string(gold[q]) +
                            " outside pool of " + std::to_string(n));
    const double d_gold = cosine_distance(utterances[q], images[gold[q]]);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == gold[q]) continue;
      const double d = cosine_distance(utterances[q], images[j]);
      if (d < d_gold || (d == d_gold && j < gold[q])) ++rank;
    }
    ranks[q] = rank;
  }
  return summarize_ranks(std::move(ranks));
}

Tensor pivot_distances(const std::vector<Tensor>& items, const std::vector<Tensor>& pivots) {
  if (items.empty()) throw ValidationError("pivot_distances: no items");
  if (pivots.empty()) throw ValidationError("pivot_distances: empty pivot set");
  Tensor out({items.size(), pivots.size()});
  for (std::size_t q = 0; q < items.size(); ++q)
    for (std::size_t p = 0; p < pivots.size(); ++p)
      out.at(q, p) = cosine_distance(items[q], pivots[p]);
  return out;
}

RankingResult crosslingual_rank(const Tensor& src_dist, const Tensor& tgt_dist,
                                const std::vector<std::size_t>& gold, Tensor* score_out) {
  if (src_dist.rank() != 2 || tgt_dist.rank() != 2)
    throw DimensionError("crosslingual_rank: distance matrices must be rank 2");
  const std::size_t n_q = src_dist.dim(0), n_c = tgt_dist.dim(0), n_p = src_dist.dim(1);
  if (n_p == 0) throw ValidationError("crosslingual_rank: empty pivot set");
  if (tgt_dist.dim(1) != n_p)
    throw DimensionError("crosslingual_rank: pivot count mismatch, " + shape_str(src_dist) +
                         " vs " + shape_str(tgt_dist));
  if (gold.size() != n_q)
    throw DimensionError("crosslingual_rank: gold size does not match query count");

  Tensor score({n_q, n_c});
  for (std::size_t q = 0; q < n_q; ++q)
    for (std::size_t c = 0; c < n_c; ++c) {
      double best = src_dist.at(q, 0) + tgt_dist.at(c, 0);
      for (std::size_t p = 1; p < n_p; ++p)
        best = std::min(best, src_dist.at(q, p) + tgt_dist.at(c, p));
      score.at(q, c) = best;
    }

  std::vector<std::size_t> ranks(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    if (gold[q] >= n_c)
      throw ValidationError("crosslingual_rank: gold index outside candidate pool");
    const double s_gold = score.at(q, gold[q]);
    std::size_t rank = 1;
    for (std::size_t c = 0; c < n_c; ++c) {
      if (c == gold[q]) continue;
      const double s = score.at(q, c);
      if (s < s_gold || (s == s_gold && c < gold[q])) ++rank;
    }
    ranks[q] = rank;
  }
  if (score_out) *score_out = std::move(score);
  return summarize_ranks(std::move(ranks));
}

SubsampleResult subsample_eval(const SubsampleSide& src, const SubsampleSide& tgt,
                               std::size_t n_trials, std::size_t pool_size, const Rng& rng,
                               std::vector<Tensor>* score_mats) {
  if (n_trials < 1) throw ValidationError("subsample_eval: n_trials must be >= 1");
  if (pool_size < 1) throw ValidationError("subsample_eval: pool_size must be >= 1");
  if (src.dist.dim(1) != tgt.dist.dim(1))
    throw DimensionError("subsample_eval: the two sides use different pivot sets");

  std::vector<std::string> shared;
  for (const auto& [image_id, rows] : src.captions_by_image) {
    if (rows.empty()) continue;
    auto it = tgt.captions_by_image.find(image_id);
    if (it != tgt.captions_by_image.end() && !it->second.empty()) shared.push_back(image_id);
  }
  if (shared.size() < pool_size)
    throw ValidationError("subsample_eval: only " + std::to_string(shared.size()) +
                          " shared images for a pool of " + std::to_string(pool_size));

  const std::size_t n_p = src.dist.dim(1);
  SubsampleResult out;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    std::vector<std::string> pool = shared;  // sorted by map order
    rng.derive("subsample_pool", trial).shuffle(pool);
    pool.resize(pool_size);

    auto pick = [&](const SubsampleSide& side, const std::string& image_id) {
      const auto& rows = side.captions_by_image.at(image_id);
      const std::size_t k =
          rng.derive("subsample_pick:" + side.language + ":" + image_id, trial)
              .below(rows.size());
      return rows[k];
    };

    Tensor s_dist({pool_size, n_p});
    Tensor t_dist({pool_size, n_p});
    std::vector<std::size_t> gold(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) {
      const std::size_t sr = pick(src, pool[i]);
      const std::size_t tr = pick(tgt, pool[i]);
      for (std::size_t p = 0; p < n_p; ++p) {
        s_dist.at(i, p) = src.dist.at(sr, p);
        t_dist.at(i, p) = tgt.dist.at(tr, p);
      }
      gold[i] = i;
    }
    if (score_mats) {
      Tensor scores;
      out.trials.push_back(crosslingual_rank(s_dist, t_dist, gold, &scores));
      score_mats->push_back(std::move(scores));
    } else {
      out.trials.push_back(crosslingual_rank(s_dist, t_dist, gold));
    }
  }

  for (const auto& t : out.trials) {
    out.r_at_1 += t.r_at_1;
    out.r_at_5 += t.r_at_5;
    out.r_at_10 += t.r_at_10;
    out.median_rank += t.median_rank;
  }
  const double n = static_cast<double>(out.trials.size());
  out.r_at_1 /= n;
  out.r_at_5 /= n;
  out.r_at_10 /= n;
  out.median_rank /= n;
  return out;
}

std::string RankingResult::to_json() const {
  nlohmann::json j;
  j["n_queries"] = ranks.size();
  j["r_at_1"] = r_at_1;
  j["r_at_5"] = r_at_5;
  j["r_at_10"] = r_at_10;
  j["median_rank"] = median_rank;
  return j.dump(2);
}

std::string SubsampleResult::to_json() const {
  nlohmann::json j;
  j["n_trials"] = trials.size();
  j["r_at_1"] = r_at_1;
  j["r_at_5"] = r_at_5;
  j["r_at_10"] = r_at_10;
  j["median_rank"] = median_rank;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& t : trials) {
    nlohmann::json tj;
    tj["n_queries"] = t.ranks.size();
    tj["r_at_1"] = t.r_at_1;
    tj["r_at_5"] = t.r_at_5;
    tj["r_at_10"] = t.r_at_10;
    tj["median_rank"] = t.median_rank;
    per.push_back(std::move(tj));
  }
  j["trials"] = std::move(per);
  return j.dump(2);
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, RankingResult>>& rows) {
  std::filesystem::path dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write metrics CSV '" + path + "'");
  out << "direction,r_at_1,r_at_5,r_at_10,median_rank\n";
  for (const auto& [direction, r] : rows)
    out << direction << "," << format_double(r.r_at_1) << "," << format_double(r.r_at_5) << ","
        << format_double(r.r_at_10) << "," << format_double(r.median_rank) << "\n";
  out.close();
  if (!out) throw FormatError("failed writing metrics CSV '" + path + "'");
}

}  // namespace vgs
