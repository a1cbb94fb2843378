#include "dud/eval.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dud/error.hpp"

namespace dud {

double psnr(const ImagePlane& estimate, const ImagePlane& clean, double peak) {
  require_same_shape(estimate, clean, "psnr");
  if (!(peak > 0.0)) throw NumericError("psnr: peak must be positive");
  if (clean.size() == 0) throw ShapeError("psnr: empty image");
  const auto e = estimate.pixels();
  const auto c = clean.pixels();
  double se = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double d = static_cast<double>(e[i]) - c[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(e.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double clean_peak(const ImagePlane& clean) {
  const auto px = clean.pixels();
  if (px.empty()) throw ShapeError("clean_peak: empty image");
  const auto [lo, hi] = std::minmax_element(px.begin(), px.end());
  return static_cast<double>(*hi) - *lo;
}

PsnrResult psnr_dataset(const std::vector<ImagePlane>& estimates, const std::vector<ImagePlane>& cleans) {
  if (estimates.size() != cleans.size()) throw ShapeError("psnr_dataset: estimate/clean count mismatch");
  if (estimates.empty()) throw ShapeError("psnr_dataset: empty set");
  PsnrResult r;
  for (std::size_t i = 0; i < estimates.size(); ++i) r.per_image.push_back(psnr(estimates[i], cleans[i], clean_peak(cleans[i])));
  double sum = 0.0;
  for (double v : r.per_image) sum += v;
  r.mean = sum / static_cast<double>(r.per_image.size());
  double var = 0.0;
  for (double v : r.per_image) var += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(var / static_cast<double>(r.per_image.size()));
  return r;
}

ImagePlane conjugate_posterior_mean(const ImagePlane& x, double mu0, double sigma0, double sigman) {
  if (!(sigma0 > 0.0)) throw ConfigError("signal_params.std", "prior std must be positive");
  if (!(sigman > 0.0)) throw ConfigError("dataset.noise_sigma", "noise sigma must be positive");
  const double v0 = sigma0 * sigma0;
  const double vn = sigman * sigman;
  ImagePlane out = x;
  for (float& p : out.pixels()) p = static_cast<float>((vn * mu0 + v0 * p) / (v0 + vn));
  return out;
}

OracleStats evaluate_against_oracle(const std::vector<ImagePlane>& outputs, const std::vector<ImagePlane>& noisy,
                                    const std::vector<ImagePlane>& oracle) {
  if (outputs.size() != oracle.size() || noisy.size() != oracle.size()) {
    throw ShapeError("evaluate_against_oracle: set sizes differ");
  }
  OracleStats st;
  double se = 0.0;
  double se_id = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    require_same_shape(outputs[k], oracle[k], "evaluate_against_oracle");
    require_same_shape(noisy[k], oracle[k], "evaluate_against_oracle");
    const auto o = oracle[k].pixels();
    const auto y = outputs[k].pixels();
    const auto x = noisy[k].pixels();
    double img = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double d = static_cast<double>(y[i]) - o[i];
      const double di = static_cast<double>(x[i]) - o[i];
      img += d * d;
      se_id += di * di;
    }
    se += img;
    n += o.size();
    st.per_image_rmse.push_back(std::sqrt(img / static_cast<double>(o.size())));
  }
  if (n > 0) {
    st.rmse = std::sqrt(se / static_cast<double>(n));
    st.identity_rmse = std::sqrt(se_id / static_cast<double>(n));
  }
  return st;
}

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
BenchmarkRecord time_method(const std::string& method, int n, const std::vector<ImagePair>& test_set, F&& run) {
  std::vector<ImagePlane> estimates;
  std::vector<ImagePlane> cleans;
  double seconds = 0.0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto t0 = Clock::now();
    ImagePlane est = run(i, test_set[i].noisy);
    seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    estimates.push_back(std::move(est));
    cleans.push_back(test_set[i].clean);
  }
  const PsnrResult p = psnr_dataset(estimates, cleans);
  return {method, n, seconds, p.mean, p.std};
}

}  // namespace

std::vector<BenchmarkRecord> run_benchmark(const BenchmarkModels& models, const std::vector<ImagePair>& test_set,
                                           const BenchmarkOptions& options) {
  if (test_set.empty()) throw ShapeError("run_benchmark: empty test set");
  if (models.sampler == nullptr) throw ConfigError("bench", "a solution sampler is required");
  for (int n : options.n_list) {
    if (n < 1) throw ConfigError("bench.n_list", "sample counts must be at least 1");
  }

  {
    Rng warm(options.seed);
    (void)models.sampler->sample(test_set.front().noisy, warm);
    if (models.dd_l1) (void)direct_denoise(*models.dd_l1, models.normalization, test_set.front().noisy);
    if (models.dd_l2) (void)direct_denoise(*models.dd_l2, models.normalization, test_set.front().noisy);
  }

  std::vector<BenchmarkRecord> records;
  for (int n : options.n_list) {
    for (Aggregator agg : {Aggregator::mean, Aggregator::median}) {
      const ConsensusSpec spec{n, agg, options.median_memory_budget_bytes};
      records.push_back(time_method("consensus-" + to_string(agg), n, test_set, [&](std::size_t i, const ImagePlane& x) {
        return consensus(*models.sampler, x, spec, derive_seed(options.seed, i));
      }));
    }
  }
  const std::array<std::pair<const char*, const DirectDenoiser*>, 2> heads{
      {{"direct-L1", models.dd_l1}, {"direct-L2", models.dd_l2}}};
  for (const auto& [label, dd] : heads) {
    if (dd == nullptr) continue;
    records.push_back(time_method(label, 1, test_set, [&](std::size_t, const ImagePlane& x) {
      return direct_denoise(*dd, models.normalization, x);
    }));
  }
  std::stable_sort(records.begin(), records.end(), [](const BenchmarkRecord& a, const BenchmarkRecord& b) {
    return a.method != b.method ? a.method < b.method : a.n_samples < b.n_samples;
  });
  return records;
}

void write_benchmark_csv(const std::vector<BenchmarkRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "method,n_samples,total_seconds,mean_psnr_db,std_psnr_db,peak_convention\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%s,%d,%.9g,%.9g,%.9g,%s\n", r.method.c_str(), r.n_samples, r.total_seconds,
                  r.mean_psnr_db, r.std_psnr_db, kPeakConvention);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<BenchmarkRecord> read_benchmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("method,n_samples,total_seconds,mean_psnr_db,std_psnr_db", 0) != 0) {
    throw FormatError(path.string() + ": unexpected benchmark header");
  }
  std::vector<BenchmarkRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& s : f) std::getline(ss, s, ',');
    try {
      out.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return out;
}

namespace {

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> rgb;
  Canvas(int w_, int h_) : w(w_), h(h_), rgb(static_cast<std::size_t>(w_) * h_ * 3, 255) {}

  void put(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), rgb.begin() + (static_cast<std::size_t>(y) * w + x) * 3);
  }
  void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= steps; ++i) {
      put(x0 + (x1 - x0) * i / steps, y0 + (y1 - y0) * i / steps, c);
    }
  }
  void square(int x, int y, int r, std::array<std::uint8_t, 3> c) {
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) put(x + dx, y + dy, c);
  }
};

std::array<std::uint8_t, 3> method_color(const std::string& m) {
  if (m == "consensus-mean") return {31, 119, 180};
  if (m == "consensus-median") return {44, 160, 44};
  if (m == "direct-L1") return {214, 39, 40};
  if (m == "direct-L2") return {255, 127, 14};
  return {80, 80, 80};
}

}  // namespace

void write_benchmark_plot(const std::vector<BenchmarkRecord>& records, const std::filesystem::path& path) {
  if (records.empty()) throw ShapeError("write_benchmark_plot: no records");
  constexpr int W = 640, H = 480, L = 60, R = 20, T = 20, B = 50;
  Canvas cv(W, H);

  double tmin = 1e300, tmax = 0, pmin = 1e300, pmax = -1e300;
  for (const auto& r : records) {
    const double t = std::max(r.total_seconds, 1e-9);
    tmin = std::min(tmin, t);
    tmax = std::max(tmax, t);
    pmin = std::min(pmin, r.mean_psnr_db);
    pmax = std::max(pmax, r.mean_psnr_db);
  }
  const double lx0 = std::floor(std::log10(tmin));
  const double lx1 = std::max(std::ceil(std::log10(tmax)), lx0 + 1);
  const double pad = std::max(0.5, 0.1 * (pmax - pmin));
  const double py0 = std::floor(pmin - pad);
  const double py1 = std::ceil(pmax + pad);
  auto px = [&](double t) {
    return L + static_cast<int>((std::log10(std::max(t, 1e-9)) - lx0) / (lx1 - lx0) * (W - L - R));
  };
  auto py = [&](double p) { return H - B - static_cast<int>((p - py0) / (py1 - py0) * (H - T - B)); };

  const std::array<std::uint8_t, 3> axis{0, 0, 0}, grid{225, 225, 225};
  for (double d = lx0; d <= lx1; d += 1.0) {
    const int x = px(std::pow(10.0, d));
    cv.line(x, T, x, H - B, grid);
    cv.line(x, H - B, x, H - B + 6, axis);
  }
  for (double p = py0; p <= py1; p += 1.0) {
    const int y = py(p);
    cv.line(L, y, W - R, y, grid);
    cv.line(L - 6, y, L, y, axis);
  }
  cv.line(L, H - B, W - R, H - B, axis);
  cv.line(L, T, L, H - B, axis);

  std::map<std::string, std::vector<const BenchmarkRecord*>> by_method;
  for (const auto& r : records) by_method[r.method].push_back(&r);
  for (const auto& [m, rs] : by_method) {
    const auto c = method_color(m);
    for (std::size_t i = 0; i + 1 < rs.size(); ++i) {
      cv.line(px(rs[i]->total_seconds), py(rs[i]->mean_psnr_db), px(rs[i + 1]->total_seconds),
              py(rs[i + 1]->mean_psnr_db), c);
    }
    for (const auto* r : rs) cv.square(px(r->total_seconds), py(r->mean_psnr_db), 4, c);
  }

  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < H; ++y) png_write_row(png, cv.rgb.data() + static_cast<std::size_t>(y) * W * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw IoError("close failed for " + path.string());
}

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("linear_fit_r2: need at least two paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw NumericError("linear_fit_r2: x values are all equal");
  if (syy == 0.0) return 1.0;
  const double b = sxy / sxx;
  const double a = my - b * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (a + b * x[i]);
    ss_res += r * r;
  }
  return 1.0 - ss_res / syy;
}

}  // namespace dud
