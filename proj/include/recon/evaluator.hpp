#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "recon/csv.hpp"
#include "recon/dataset.hpp"
#include "recon/image.hpp"
#include "recon/mlp.hpp"
#include "recon/reconstructor.hpp"
#include "recon/ssim.hpp"
#include "recon/types.hpp"

namespace recon {

// SSIM applies to image-shaped data (d = 3072); everything else scores by
// negative relative L2 distance with its own goodness threshold. The two
// are never mixed in one report.
enum class SimilarityMetric { ssim, neg_l2 };

inline const char* similarity_metric_name(SimilarityMetric m) {
  return m == SimilarityMetric::ssim ? "ssim" : "neg_l2";
}

struct MatchOptions {
  double ssim_threshold = 0.4;   // good reconstruction: SSIM strictly above
  double l2_threshold = 0.1;     // good reconstruction: relative L2 strictly below
  int workers = 1;
};

struct MatchRow {
  Index sample_index = 0;
  int label = 0;
  double margin = 0.0;
  Index best_candidate = -1;
  double similarity = 0.0;  // best SSIM, or -relative-L2 for non-image data
  bool good = false;
};

struct MatchReport {
  std::vector<MatchRow> rows;  // one per training sample, in sample order
  SimilarityMetric metric = SimilarityMetric::ssim;
  double threshold = 0.4;  // SSIM threshold or L2 threshold, per metric
  Index good_count = 0;
};

// Nearest-candidate match for every training sample: best similarity over
// all m candidates (ties to the lowest candidate index), the sample's
// margin under the trained parameters, and the good-reconstruction verdict.
template <typename Scalar>
MatchReport match(const Dataset<Scalar>& data, const ReconState<Scalar>& candidates,
                  const MlpParams<Scalar>& params, const MatchOptions& opts = {}) {
  if (candidates.dim() != data.dim())
    throw ShapeError("match: candidate dim != dataset dim");
  const bool image_data = data.dim() == kCifarPixels;

  MatchReport report;
  report.metric = image_data ? SimilarityMetric::ssim : SimilarityMetric::neg_l2;
  report.threshold = image_data ? opts.ssim_threshold : opts.l2_threshold;

  Vector<Scalar> margins = margins_batch(params, data.samples, data.labels);

  std::vector<Image> cand_images;
  if (image_data) {
    cand_images.reserve(static_cast<std::size_t>(candidates.m()));
    for (Index j = 0; j < candidates.m(); ++j) {
      Vector<Scalar> row = candidates.candidates.row(j).transpose();
      cand_images.push_back(to_image<Scalar>(row));
    }
  }

  report.rows.resize(static_cast<std::size_t>(data.n()));
  auto score_sample = [&](Index i) {
    MatchRow row;
    row.sample_index = i;
    row.label = data.labels(i);
    row.margin = static_cast<double>(margins(i));
    double best = -std::numeric_limits<double>::infinity();
    Index best_j = -1;
    if (image_data) {
      Vector<Scalar> s = data.samples.row(i).transpose();
      const Image train_img = to_image<Scalar>(s);
      for (Index j = 0; j < candidates.m(); ++j) {
        const double sim = ssim(train_img, cand_images[static_cast<std::size_t>(j)]);
        if (sim > best) {
          best = sim;
          best_j = j;
        }
      }
      row.good = best > opts.ssim_threshold;
    } else {
      const Eigen::VectorXd s = data.samples.row(i).transpose().template cast<double>();
      const double scale = std::max(s.norm(), 1e-12);
      for (Index j = 0; j < candidates.m(); ++j) {
        const Eigen::VectorXd c =
            candidates.candidates.row(j).transpose().template cast<double>();
        const double sim = -(s - c).norm() / scale;
        if (sim > best) {
          best = sim;
          best_j = j;
        }
      }
      row.good = -best < opts.l2_threshold;
    }
    row.similarity = best;
    row.best_candidate = best_j;
    report.rows[static_cast<std::size_t>(i)] = row;
  };

  const int workers = std::max(1, opts.workers);
  if (workers == 1 || data.n() < 2) {
    for (Index i = 0; i < data.n(); ++i) score_sample(i);
  } else {
    std::atomic<Index> next{0};
    auto worker = [&]() {
      while (true) {
        const Index i = next.fetch_add(1);
        if (i >= data.n()) return;
        score_sample(i);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(workers, static_cast<int>(data.n())); ++t)
      pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  report.good_count = static_cast<Index>(
      std::count_if(report.rows.begin(), report.rows.end(), [](const auto& r) { return r.good; }));
  return report;
}

// Scatter table: one row per training sample, CSV-ready.
inline csv::Table scatter_data(const MatchReport& report) {
  csv::Table t;
  t.header = {"margin", "similarity", "class", "sample_index"};
  for (const auto& row : report.rows)
    t.add_row({csv::format_double(row.margin), csv::format_double(row.similarity),
               csv::format_int(row.label), csv::format_int(row.sample_index)});
  return t;
}

struct RankedPair {
  Index sample_index = 0;
  Index candidate_index = 0;
  double similarity = 0.0;
  int label = 0;
};

// Top-k (train, reconstruction) pairs by similarity, descending; ties keep
// sample order. With per_class, the top k of every class are returned,
// classes in ascending order.
inline std::vector<RankedPair> ranked_pairs(const MatchReport& report, Index k,
                                            bool per_class = false) {
  if (k > static_cast<Index>(report.rows.size()))
    throw ShapeError("ranked_pairs: k exceeds sample count");
  std::vector<RankedPair> all;
  all.reserve(report.rows.size());
  for (const auto& row : report.rows)
    all.push_back({row.sample_index, row.best_candidate, row.similarity, row.label});
  auto by_similarity = [](const RankedPair& a, const RankedPair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.sample_index < b.sample_index;
  };
  if (!per_class) {
    std::sort(all.begin(), all.end(), by_similarity);
    all.resize(static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(all.size()))));
    return all;
  }
  int max_class = 0;
  for (const auto& p : all) max_class = std::max(max_class, p.label);
  std::vector<RankedPair> out;
  for (int c = 0; c <= max_class; ++c) {
    std::vector<RankedPair> cls;
    for (const auto& p : all)
      if (p.label == c) cls.push_back(p);
    std::sort(cls.begin(), cls.end(), by_similarity);
    if (static_cast<Index>(cls.size()) > k) cls.resize(static_cast<std::size_t>(k));
    out.insert(out.end(), cls.begin(), cls.end());
  }
  return out;
}

// Renders the ranked pairs as an image grid (training sample above its
// best candidate, similarity as the caption). Image-shaped data only.
template <typename Scalar>
Image render_ranked_pairs(const std::vector<RankedPair>& pairs, const Dataset<Scalar>& data,
                          const ReconState<Scalar>& candidates, Index per_row = 10) {
  std::vector<PairCell> cells;
  cells.reserve(pairs.size());
  for (const auto& p : pairs) {
    PairCell cell;
    Vector<Scalar> s = data.samples.row(p.sample_index).transpose();
    cell.top = to_image<Scalar>(s);
    Vector<Scalar> c = candidates.candidates.row(p.candidate_index).transpose();
    cell.bottom = to_image<Scalar>(c);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", p.similarity);
    cell.caption = buf;
    cells.push_back(std::move(cell));
  }
  return render_pair_grid(cells, per_row);
}

// Search scorer for research mode (ground truth in hand): negated good
// count, so more good reconstructions rank first; final loss breaks ties.
template <typename Scalar>
std::function<double(const ReconState<Scalar>&)> good_count_scorer(
    const Dataset<Scalar>& data, const MlpParams<Scalar>& params, const MatchOptions& opts = {}) {
  return [&data, &params, opts](const ReconState<Scalar>& state) {
    const MatchReport report = match(data, state, params, opts);
    const double tie = state.loss_trace.empty()
                           ? 0.0
                           : std::min(0.999, state.loss_trace.back() /
                                                 (1.0 + state.loss_trace.back()));
    return -static_cast<double>(report.good_count) + tie;
  };
}

}  // namespace recon
