#include "dspr/trend.hpp"

#include <cmath>
#include <string>

namespace dspr {

void TrendConfig::validate() const {
  if (lookback < 2) throw ContractError("trend: lookback must be >= 2");
  if (horizon < 1) throw ContractError("trend: horizon must be >= 1");
  if (depth < 1) throw ContractError("trend: depth must be >= 1");
  if (downsample_ratio < 2) throw ContractError("trend: downsample_ratio must be >= 2");
  if (ma_kernel < 1 || ma_kernel % 2 == 0) {
    throw ContractError("trend: ma_kernel must be odd, got " + std::to_string(ma_kernel));
  }
}

std::vector<int64_t> TrendConfig::scale_lengths() const {
  std::vector<int64_t> lens{lookback};
  for (int64_t s = 1; s < n_scales; ++s) {
    lens.push_back((lens.back() + downsample_ratio - 1) / downsample_ratio);
  }
  return lens;
}

std::pair<Tensor, Tensor> moving_average_decompose(const Tensor& x, int64_t kernel) {
  Tensor trend = moving_average(x, kernel, /*axis=*/0);
  Tensor seasonal = sub(x, trend);
  return {trend, seasonal};
}

namespace {

std::vector<double> fan_in_init(Rng& rng, int64_t fan_in, int64_t count) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_vec(static_cast<size_t>(count), -bound, bound);
}

}  // namespace

Tensor TrendStream::TimeMlp::apply(const Tensor& seq) const {
  Tensor h = relu(add(matmul(seq, w1), b1));
  return add(matmul(h, w2), b2);
}

TrendStream::TrendStream(const TrendConfig& cfg, Tape& tape, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int64_t d = cfg_.d_model;
  const int64_t in_dim = cfg_.n_vars + cfg_.time_features;
  w_in_ = tape.parameter({in_dim, d}, fan_in_init(rng, in_dim, in_dim * d));
  b_in_ = tape.parameter({d}, fan_in_init(rng, in_dim, d));

  const auto lens = cfg_.scale_lengths();
  const int64_t n_scales = static_cast<int64_t>(lens.size());
  season_.resize(static_cast<size_t>(cfg_.depth));
  trend_.resize(static_cast<size_t>(cfg_.depth));
  for (int64_t blk = 0; blk < cfg_.depth; ++blk) {
    for (int64_t s = 0; s + 1 < n_scales; ++s) {
      // Seasonal path maps the finer length down; trend path maps back up.
      auto make_mlp = [&](int64_t len_in, int64_t len_out) {
        TimeMlp mlp;
        mlp.w1 = tape.parameter({len_in, len_in}, fan_in_init(rng, len_in, len_in * len_in));
        mlp.b1 = tape.parameter({len_in}, fan_in_init(rng, len_in, len_in));
        mlp.w2 = tape.parameter({len_in, len_out}, fan_in_init(rng, len_in, len_in * len_out));
        mlp.b2 = tape.parameter({len_out}, fan_in_init(rng, len_in, len_out));
        return mlp;
      };
      season_[static_cast<size_t>(blk)].push_back(make_mlp(lens[static_cast<size_t>(s)],
                                                           lens[static_cast<size_t>(s + 1)]));
      trend_[static_cast<size_t>(blk)].push_back(make_mlp(lens[static_cast<size_t>(s + 1)],
                                                          lens[static_cast<size_t>(s)]));
    }
  }

  const int64_t head_in = n_scales * 2 * d + cfg_.horizon * cfg_.time_features;
  w_head_ = tape.parameter({head_in, cfg_.horizon},
                           std::vector<double>(static_cast<size_t>(head_in * cfg_.horizon), 0.0));
  b_head_ = tape.parameter({cfg_.horizon},
                           std::vector<double>(static_cast<size_t>(cfg_.horizon), 0.0));
}

Tensor TrendStream::forward(const Tensor& x, const Tensor& time_feats) const {
  const int64_t L = cfg_.lookback, H = cfg_.horizon;
  if (x.rank() != 2 || x.size(0) != L || x.size(1) != cfg_.n_vars) {
    throw ShapeError("trend_forecast: input " + shape_str(x.shape()) + ", expected [" +
                     std::to_string(L) + "x" + std::to_string(cfg_.n_vars) + "]");
  }
  if (time_feats.rank() != 2 || time_feats.size(0) != L + H ||
      time_feats.size(1) != cfg_.time_features) {
    throw ShapeError("trend_forecast: time features " + shape_str(time_feats.shape()) +
                     ", expected [" + std::to_string(L + H) + "x" +
                     std::to_string(cfg_.time_features) + "]");
  }

  Tensor past_tf = slice_rows(time_feats, 0, L);
  Tensor embedded = add(matmul(concat_last_axis(x, past_tf), w_in_), b_in_);  // L x d

  const auto lens = cfg_.scale_lengths();
  const size_t n_scales = lens.size();
  // Feature-major layout (d x len) keeps the time-axis MLPs as plain matmuls
  // with row-vector biases.
  std::vector<Tensor> seqs;
  seqs.push_back(transpose(embedded));
  for (size_t s = 1; s < n_scales; ++s) {
    seqs.push_back(mean_pool_cols(seqs[s - 1], cfg_.downsample_ratio));
  }

  for (int64_t blk = 0; blk < cfg_.depth; ++blk) {
    std::vector<Tensor> sea(n_scales), tr(n_scales);
    for (size_t s = 0; s < n_scales; ++s) {
      Tensor t = moving_average(seqs[s], cfg_.ma_kernel, /*axis=*/1);
      tr[s] = t;
      sea[s] = sub(seqs[s], t);
    }
    const auto& sblk = season_[static_cast<size_t>(blk)];
    const auto& tblk = trend_[static_cast<size_t>(blk)];
    for (size_t s = 1; s < n_scales; ++s) {
      sea[s] = add(sea[s], sblk[s - 1].apply(sea[s - 1]));
    }
    for (size_t s = n_scales - 1; s-- > 0;) {
      tr[s] = add(tr[s], tblk[s].apply(tr[s + 1]));
    }
    for (size_t s = 0; s < n_scales; ++s) seqs[s] = add(sea[s], tr[s]);
  }

  // Scale summary: time-mean plus last-step representation.
  Tensor head_in;
  for (size_t s = 0; s < n_scales; ++s) {
    Tensor tm = transpose(seqs[s]);  // len x d
    Tensor summary = concat_last_axis(mean_rows(tm), slice_rows(tm, lens[s] - 1, lens[s]));
    head_in = s == 0 ? summary : concat_last_axis(head_in, summary);
  }
  Tensor future_tf = reshape(slice_rows(time_feats, L, L + H), {1, H * cfg_.time_features});
  head_in = concat_last_axis(head_in, future_tf);

  Tensor out = add(matmul(head_in, w_head_), b_head_);  // 1 x H
  return reshape(out, {H, 1});
}

void TrendStream::collect_parameters(std::vector<NamedTensor>& out,
                                     const std::string& prefix) const {
  out.push_back({prefix + ".w_in", w_in_});
  out.push_back({prefix + ".b_in", b_in_});
  for (size_t blk = 0; blk < season_.size(); ++blk) {
    for (size_t s = 0; s < season_[blk].size(); ++s) {
      const std::string base =
          prefix + ".block" + std::to_string(blk) + ".s" + std::to_string(s);
      const TimeMlp& sm = season_[blk][s];
      const TimeMlp& tm = trend_[blk][s];
      out.push_back({base + ".season.w1", sm.w1});
      out.push_back({base + ".season.b1", sm.b1});
      out.push_back({base + ".season.w2", sm.w2});
      out.push_back({base + ".season.b2", sm.b2});
      out.push_back({base + ".trend.w1", tm.w1});
      out.push_back({base + ".trend.b1", tm.b1});
      out.push_back({base + ".trend.w2", tm.w2});
      out.push_back({base + ".trend.b2", tm.b2});
    }
  }
  out.push_back({prefix + ".w_head", w_head_});
  out.push_back({prefix + ".b_head", b_head_});
}

}  // namespace dspr
