#pragma once

// Forecast verification: threshold contingency tables and skill scores
// (CSI, ETS, FAR, POD), image metrics (SSIM, PSNR, MAE), pooled aggregation
// over frames and samples, and per-lead-time CSI series.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mambarain/grid.hpp"
#include "mambarain/synthdata.hpp"

namespace mambarain {

inline const std::vector<double> kDefaultThresholds = {10.0, 15.0, 20.0, 30.0};
inline constexpr double kPsnrCap = 99.0;

struct ContingencyTable {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t false_alarms = 0;
  std::uint64_t correct_negatives = 0;

  std::uint64_t total() const { return hits + misses + false_alarms + correct_negatives; }

  ContingencyTable& operator+=(const ContingencyTable& o) {
    hits += o.hits;
    misses += o.misses;
    false_alarms += o.false_alarms;
    correct_negatives += o.correct_negatives;
    return *this;
  }
  friend ContingencyTable operator+(ContingencyTable a, const ContingencyTable& b) { return a += b; }
  bool operator==(const ContingencyTable&) const = default;
};

// Event = value >= threshold, inclusive, in both fields.
inline ContingencyTable contingency(const Grid& pred, const Grid& obs, double threshold) {
  require_same_extents(pred, obs, "contingency");
  ContingencyTable t;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values[i] >= threshold, o = obs.values[i] >= threshold;
    if (p && o) ++t.hits;
    else if (!p && o) ++t.misses;
    else if (p && !o) ++t.false_alarms;
    else ++t.correct_negatives;
  }
  return t;
}

// std::nullopt marks an undefined score (zero denominator).
struct SkillScores {
  std::optional<double> csi;
  std::optional<double> ets;
  std::optional<double> far;
  std::optional<double> pod;
};

inline SkillScores skill_scores(const ContingencyTable& t) {
  const double h = double(t.hits), m = double(t.misses), f = double(t.false_alarms);
  const double n = double(t.total());
  SkillScores s;
  if (h + m + f > 0) s.csi = h / (h + m + f);
  if (h + f > 0) s.far = f / (h + f);
  if (h + m > 0) s.pod = h / (h + m);
  if (n > 0) {
    const double hr = (h + f) * (h + m) / n;
    const double denom = h + m + f - hr;
    if (denom > 0) s.ets = (h - hr) / denom;
  }
  return s;
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = double(size - 1) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) s += (k[i] = std::exp(-0.5 * (double(i) - c) * (double(i) - c) / (sigma * sigma)));
  for (double& v : k) v /= s;
  return k;
}

// Valid-region separable filtering.
inline Grid filter_valid(const Grid& g, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t oh = g.height - n + 1, ow = g.width - n + 1;
  Grid tmp(g.height, ow), out(oh, ow);
  for (std::size_t r = 0; r < g.height; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * g.at(r, c + i);
      tmp.at(r, c) = s;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp.at(r + i, c);
      out.at(r, c) = s;
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Mean SSIM over valid window positions on unit-range images. Images smaller
// than the window use the largest odd window that fits.
inline double ssim(const Grid& x, const Grid& y, SsimOptions opt = {}) {
  require_same_extents(x, y, "ssim");
  std::size_t win = std::min({opt.window, x.height, x.width});
  if (win % 2 == 0) --win;
  if (win == 0) throw DimensionError("ssim: empty image");
  const auto k = detail::gaussian_window(win, opt.sigma);
  Grid xx(x.height, x.width), yy(x.height, x.width), xy(x.height, x.width);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx.values[i] = x.values[i] * x.values[i];
    yy.values[i] = y.values[i] * y.values[i];
    xy.values[i] = x.values[i] * y.values[i];
  }
  const Grid mx = detail::filter_valid(x, k), my = detail::filter_valid(y, k);
  const Grid sxx = detail::filter_valid(xx, k), syy = detail::filter_valid(yy, k), sxy = detail::filter_valid(xy, k);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx.values[i], uy = my.values[i];
    const double vx = sxx.values[i] - ux * ux, vy = syy.values[i] - uy * uy, cxy = sxy.values[i] - ux * uy;
    total += ((2 * ux * uy + opt.c1) * (2 * cxy + opt.c2)) / ((ux * ux + uy * uy + opt.c1) * (vx + vy + opt.c2));
  }
  return total / double(mx.size());
}

struct ImageMetrics {
  double ssim = 0.0;
  double psnr = 0.0;  // dB, capped at kPsnrCap
  double mae = 0.0;
};

// pred and obs normalized to [0, 1].
inline ImageMetrics image_metrics(const Grid& pred, const Grid& obs) {
  require_same_extents(pred, obs, "image_metrics");
  ImageMetrics m;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.values[i] - obs.values[i];
    se += d * d;
    ae += std::abs(d);
  }
  const double mse = se / double(pred.size());
  m.mae = ae / double(pred.size());
  m.psnr = mse > 0 ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)) : kPsnrCap;
  m.ssim = pred.values == obs.values ? 1.0 : ssim(pred, obs);
  return m;
}

// Predicted and observed frames in dBZ. Lead labels run 1..K.
struct ForecastBundle {
  std::vector<Grid> predicted;
  std::vector<Grid> observed;
  std::vector<unsigned> lead_labels;
  unsigned interval_minutes = 6;
  std::vector<double> thresholds = kDefaultThresholds;

  static ForecastBundle make(std::vector<Grid> pred, std::vector<Grid> obs, unsigned interval,
                             std::vector<double> thresholds = kDefaultThresholds) {
    ForecastBundle b;
    b.predicted = std::move(pred);
    b.observed = std::move(obs);
    for (std::size_t k = 0; k < b.predicted.size(); ++k) b.lead_labels.push_back(unsigned(k + 1));
    b.interval_minutes = interval;
    b.thresholds = std::move(thresholds);
    return b;
  }
};

struct ThresholdSkill {
  double threshold = 0.0;
  ContingencyTable pooled;
  SkillScores scores;  // from pooled counts
  // Unpooled view: mean of per-frame scores over frames where defined.
  std::map<std::string, double> frame_mean;
  std::map<std::string, std::size_t> frame_excluded;
};

struct LeadPoint {
  unsigned lead_minutes = 0;
  double threshold = 0.0;
  std::optional<double> csi;
};

struct SkillReport {
  std::vector<ThresholdSkill> per_threshold;
  double ssim = 0.0;
  double psnr = 0.0;
  double mae = 0.0;
  std::vector<LeadPoint> lead_csi;

  const ThresholdSkill& at_threshold(double t) const {
    for (const auto& s : per_threshold)
      if (s.threshold == t) return s;
    throw ContractError("no skill entry for threshold " + std::to_string(t));
  }
  std::optional<double> lead_csi_at(unsigned lead_minutes, double threshold) const {
    for (const auto& p : lead_csi)
      if (p.lead_minutes == lead_minutes && p.threshold == threshold) return p.csi;
    throw ContractError("no lead-time entry for " + std::to_string(lead_minutes) + " min");
  }
};

// Accumulates bundles. Contingency tables merge by summation, so merge()
// is associative and commutative and the report does not depend on order.
class SkillAccumulator {
public:
  explicit SkillAccumulator(std::vector<double> thresholds = kDefaultThresholds)
      : thresholds_(std::move(thresholds)) {}

  void add(const ForecastBundle& b) {
    if (b.predicted.empty()) throw ContractError("evaluate: empty forecast bundle");
    if (b.predicted.size() != b.observed.size() || b.predicted.size() != b.lead_labels.size())
      throw ContractError("evaluate: bundle frame/lead counts disagree");
    if (b.thresholds != thresholds_) throw ContractError("evaluate: bundle thresholds differ from accumulator");
    for (std::size_t k = 0; k < b.predicted.size(); ++k) {
      const Grid& p = b.predicted[k];
      const Grid& o = b.observed[k];
      const unsigned lead = b.lead_labels[k] * b.interval_minutes;
      for (double t : thresholds_) {
        const ContingencyTable tab = contingency(p, o, t);
        pooled_[t] += tab;
        by_lead_[{lead, t}] += tab;
        const SkillScores s = skill_scores(tab);
        auto note = [&](const char* name, const std::optional<double>& v) {
          auto& slot = frame_sums_[{t, name}];
          if (v) {
            slot.first += *v;
            slot.second += 1;
          } else {
            frame_excluded_[{t, name}] += 1;
          }
        };
        note("CSI", s.csi);
        note("ETS", s.ets);
        note("FAR", s.far);
        note("POD", s.pod);
      }
      Grid pn = p, on = o;
      for (double& v : pn.values) v = normalize_dbz(v);
      for (double& v : on.values) v = normalize_dbz(v);
      const ImageMetrics im = image_metrics(pn, on);
      ssim_sum_ += im.ssim;
      psnr_sum_ += im.psnr;
      mae_sum_ += im.mae;
      ++frames_;
    }
  }

  void merge(const SkillAccumulator& o) {
    if (o.thresholds_ != thresholds_) throw ContractError("merge: threshold lists differ");
    for (const auto& [k, v] : o.pooled_) pooled_[k] += v;
    for (const auto& [k, v] : o.by_lead_) by_lead_[k] += v;
    for (const auto& [k, v] : o.frame_sums_) {
      frame_sums_[k].first += v.first;
      frame_sums_[k].second += v.second;
    }
    for (const auto& [k, v] : o.frame_excluded_) frame_excluded_[k] += v;
    ssim_sum_ += o.ssim_sum_;
    psnr_sum_ += o.psnr_sum_;
    mae_sum_ += o.mae_sum_;
    frames_ += o.frames_;
  }

  std::size_t frames() const { return frames_; }

  SkillReport report() const {
    if (frames_ == 0) throw ContractError("evaluate: nothing accumulated");
    SkillReport r;
    for (double t : thresholds_) {
      ThresholdSkill ts;
      ts.threshold = t;
      ts.pooled = pooled_.at(t);
      ts.scores = skill_scores(ts.pooled);
      for (const char* name : {"CSI", "ETS", "FAR", "POD"}) {
        auto it = frame_sums_.find({t, name});
        if (it != frame_sums_.end() && it->second.second > 0)
          ts.frame_mean[name] = it->second.first / double(it->second.second);
        auto ex = frame_excluded_.find({t, name});
        ts.frame_excluded[name] = ex == frame_excluded_.end() ? 0 : ex->second;
      }
      r.per_threshold.push_back(std::move(ts));
    }
    r.ssim = ssim_sum_ / double(frames_);
    r.psnr = psnr_sum_ / double(frames_);
    r.mae = mae_sum_ / double(frames_);
    for (const auto& [key, tab] : by_lead_) r.lead_csi.push_back({key.first, key.second, skill_scores(tab).csi});
    return r;
  }

private:
  std::vector<double> thresholds_;
  std::map<double, ContingencyTable> pooled_;
  std::map<std::pair<unsigned, double>, ContingencyTable> by_lead_;
  std::map<std::pair<double, std::string>, std::pair<double, std::size_t>> frame_sums_;
  std::map<std::pair<double, std::string>, std::size_t> frame_excluded_;
  double ssim_sum_ = 0.0, psnr_sum_ = 0.0, mae_sum_ = 0.0;
  std::size_t frames_ = 0;
};

inline SkillReport evaluate(const ForecastBundle& bundle) {
  SkillAccumulator acc(bundle.thresholds);
  acc.add(bundle);
  return acc.report();
}

// ---------------------------------------------------------------------------
// CSV export. skill.csv: model,threshold,metric,value.
// leadtime.csv: model,lead_minutes,threshold,CSI. Undefined scores are
// written as "undefined"; image metrics use threshold "all".

namespace detail {
inline std::string csv_num(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(10) << v;
  return os.str();
}
inline std::string csv_opt(const std::optional<double>& v) { return v ? csv_num(*v) : "undefined"; }
}  // namespace detail

inline void write_skill_csv_header(std::ostream& os) { os << "model,threshold,metric,value\n"; }
inline void write_leadtime_csv_header(std::ostream& os) { os << "model,lead_minutes,threshold,CSI\n"; }

inline void write_skill_rows(std::ostream& os, const std::string& model, const SkillReport& r) {
  for (const auto& ts : r.per_threshold) {
    const std::string t = detail::csv_num(ts.threshold);
    os << model << ',' << t << ",CSI," << detail::csv_opt(ts.scores.csi) << '\n';
    os << model << ',' << t << ",ETS," << detail::csv_opt(ts.scores.ets) << '\n';
    os << model << ',' << t << ",FAR," << detail::csv_opt(ts.scores.far) << '\n';
    os << model << ',' << t << ",POD," << detail::csv_opt(ts.scores.pod) << '\n';
    for (const auto& [name, v] : ts.frame_mean) os << model << ',' << t << ',' << name << "_frame_mean," << detail::csv_num(v) << '\n';
    for (const auto& [name, n] : ts.frame_excluded) os << model << ',' << t << ',' << name << "_frame_excluded," << n << '\n';
  }
  os << model << ",all,SSIM," << detail::csv_num(r.ssim) << '\n';
  os << model << ",all,PSNR," << detail::csv_num(r.psnr) << '\n';
  os << model << ",all,MAE," << detail::csv_num(r.mae) << '\n';
}

inline void write_leadtime_rows(std::ostream& os, const std::string& model, const SkillReport& r) {
  for (const auto& p : r.lead_csi)
    os << model << ',' << p.lead_minutes << ',' << detail::csv_num(p.threshold) << ',' << detail::csv_opt(p.csi)
       << '\n';
}

}  // namespace mambarain
