#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "dud/config.hpp"
#include "dud/dataset.hpp"
#include "dud/error.hpp"
#include "dud/eval.hpp"
#include "dud/image_io.hpp"
#include "dud/inference.hpp"
#include "dud/training.hpp"

namespace fs = std::filesystem;
using namespace dud;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
};

RunConfig resolve(const Globals& g) { return load_config(g.config, g.sets); }

Dataset obtain_dataset(const RunConfig& cfg) {
  if (!cfg.dataset_path.empty() && fs::exists(fs::path(cfg.dataset_path) / "spec.json")) {
    return load_dataset(cfg.dataset_path);
  }
  return generate_dataset(cfg.dataset);
}

fs::path default_checkpoint(const RunConfig& cfg) { return fs::path(cfg.output_dir) / "checkpoints" / "final.dudc"; }

TrainState open_checkpoint(const RunConfig& cfg, const std::string& path) {
  const fs::path p = path.empty() ? default_checkpoint(cfg) : fs::path(path);
  if (!fs::exists(p)) throw IoError("checkpoint not found: " + p.string());
  return load_checkpoint(p);
}

const DirectHead& pick_head(const TrainState& st, const std::string& loss) {
  if (st.heads.empty()) throw ConfigError("direct.loss_kinds", "checkpoint has no Direct Denoiser");
  if (loss.empty()) return st.heads.front();
  const DirectHead* h = st.head(loss_kind_from_string(loss));
  if (h == nullptr) throw ConfigError("--loss", "checkpoint has no " + loss + " head");
  return *h;
}

int cmd_synth(const Globals& g, const std::string& out) {
  const RunConfig cfg = resolve(g);
  const fs::path dir = !out.empty() ? fs::path(out)
                       : !cfg.dataset_path.empty() ? fs::path(cfg.dataset_path)
                                                   : fs::path(cfg.output_dir) / "data";
  const Dataset data = generate_dataset(cfg.dataset);
  save_dataset(data, dir);
  std::printf("synth: %s kind=%s train=%zu val=%zu test=%zu size=%dx%d sigma=%g seed=%llu\n", dir.string().c_str(),
              cfg.dataset.kind == SignalKind::conjugate ? "conjugate" : "blobs", data.train.size(), data.val.size(), data.test.size(),
              cfg.dataset.height, cfg.dataset.width, cfg.dataset.noise_sigma,
              static_cast<unsigned long long>(cfg.dataset.seed));
  return 0;
}

int cmd_train(const Globals& g, const std::string& resume, bool quiet) {
  const RunConfig cfg = resolve(g);
  const Dataset data = obtain_dataset(cfg);
  std::optional<TrainState> start;
  if (!resume.empty()) {
    start = load_checkpoint(resume);
    check_compatible(*start, cfg);
  }
  const auto t0 = std::chrono::steady_clock::now();
  ValidationHook hook;
  if (!quiet) {
    hook = [&](const TrainState& s, const ValidationResult& r) {
      std::printf("step %lld  vae_recon %.5f  vae_kl %.5f", static_cast<long long>(s.step), r.vae.reconstruction,
                  r.vae.kl);
      for (std::size_t k = 0; k < s.heads.size(); ++k) {
        std::printf("  direct_%s %.5f", to_string(s.heads[k].dd.loss_kind).c_str(), r.direct[k]);
      }
      std::printf("  lr_vae %.3g  %.1fs\n", s.vae_opt.lr,
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      std::fflush(stdout);
    };
  }
  const TrainResult res = run_training(cfg, data, std::move(start), hook);
  std::printf("train: done step=%lld best_vae=%.6g", static_cast<long long>(res.state.step), res.state.best_vae_val);
  for (const auto& h : res.state.heads) {
    std::printf(" best_direct_%s=%.6g", to_string(h.dd.loss_kind).c_str(), h.best_val);
  }
  std::printf(" checkpoint=%s\n", res.final_checkpoint.string().c_str());
  return 0;
}

struct DenoiseArgs {
  std::string checkpoint;
  std::string mode = "direct";
  int n_samples = 0;
  std::string aggregator;
  std::string loss;
  std::string out;
  std::vector<std::string> inputs;
};

int cmd_denoise(const Globals& g, const DenoiseArgs& a) {
  const RunConfig cfg = resolve(g);
  if (a.mode != "direct" && a.mode != "sample" && a.mode != "consensus") {
    throw ConfigError("--mode", "expected sample, consensus or direct");
  }
  ConsensusSpec spec;
  spec.n_samples = a.n_samples > 0 ? a.n_samples : cfg.inference.n_samples;
  spec.aggregator = aggregator_from_string(a.aggregator.empty() ? cfg.inference.aggregator : a.aggregator);
  spec.memory_budget_bytes = cfg.inference.median_memory_budget_mb << 20;
  spec.validate();

  const TrainState st = open_checkpoint(cfg, a.checkpoint);
  const fs::path out_dir = a.out.empty() ? fs::path(cfg.output_dir) / "denoised" : fs::path(a.out);
  fs::create_directories(out_dir);
  const VaeSampler sampler(st.vae, st.normalization);
  const DirectHead* head = a.mode == "direct" ? &pick_head(st, a.loss) : nullptr;

  for (std::size_t k = 0; k < a.inputs.size(); ++k) {
    const ImagePlane x = read_image(a.inputs[k]);
    const std::uint64_t master = derive_seed(cfg.seeds.inference, k);
    ImagePlane y;
    if (head != nullptr) {
      y = direct_denoise(head->dd, st.normalization, x);
    } else if (a.mode == "sample") {
      Rng rng(derive_seed(master, 0));
      y = sample_solution(sampler, x, rng);
    } else {
      y = consensus(sampler, x, spec, master);
    }
    const fs::path dst = out_dir / fs::path(a.inputs[k]).filename();
    write_image(dst, y);
    std::printf("%s -> %s\n", a.inputs[k].c_str(), dst.string().c_str());
  }
  return 0;
}

int cmd_bench(const Globals& g, const std::string& checkpoint, bool include_1000, const std::string& out) {
  const RunConfig cfg = resolve(g);
  const Dataset data = obtain_dataset(cfg);
  const TrainState st = open_checkpoint(cfg, checkpoint);
  const VaeSampler sampler(st.vae, st.normalization);

  BenchmarkModels models;
  models.sampler = &sampler;
  models.normalization = st.normalization;
  if (const DirectHead* h = st.head(LossKind::l1)) models.dd_l1 = &h->dd;
  if (const DirectHead* h = st.head(LossKind::l2)) models.dd_l2 = &h->dd;
  BenchmarkOptions opt;
  opt.n_list = cfg.bench.n_list;
  if (include_1000 || cfg.bench.include_1000) opt.n_list.push_back(1000);
  opt.seed = cfg.seeds.inference;
  opt.median_memory_budget_bytes = cfg.inference.median_memory_budget_mb << 20;

  const auto records = run_benchmark(models, data.test, opt);
  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  fs::create_directories(dir);
  write_benchmark_csv(records, dir / "benchmark.csv");
  write_benchmark_plot(records, dir / "benchmark.png");
  std::printf("%-18s %6s %12s %10s %8s\n", "method", "n", "seconds", "psnr_db", "std");
  for (const auto& r : records) {
    std::printf("%-18s %6d %12.4f %10.4f %8.4f\n", r.method.c_str(), r.n_samples, r.total_seconds, r.mean_psnr_db,
                r.std_psnr_db);
  }
  std::printf("bench: wrote %s and %s (peak convention: %s)\n", (dir / "benchmark.csv").string().c_str(),
              (dir / "benchmark.png").string().c_str(), kPeakConvention);
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& out) {
  const RunConfig cfg = resolve(g);
  const Dataset data = obtain_dataset(cfg);
  const TrainState st = open_checkpoint(cfg, checkpoint);
  const auto noisy = noisy_images(data.test);
  const auto clean = clean_images(data.test);
  const bool conjugate = data.spec.kind == SignalKind::conjugate && data.spec.noise_sigma > 0.0;
  std::vector<ImagePlane> oracle;
  if (conjugate) {
    const auto& p = data.spec.conjugate;
    for (const auto& x : noisy) oracle.push_back(conjugate_posterior_mean(x, p.mean, p.std, data.spec.noise_sigma));
  }

  nlohmann::json report;
  report["peak_convention"] = kPeakConvention;
  auto score = [&](const std::string& label, const std::vector<ImagePlane>& est) {
    const PsnrResult p = psnr_dataset(est, clean);
    nlohmann::json e{{"mean_psnr_db", p.mean}, {"std_psnr_db", p.std}};
    std::printf("%-22s psnr %.4f dB (std %.4f)", label.c_str(), p.mean, p.std);
    if (conjugate) {
      const OracleStats o = evaluate_against_oracle(est, noisy, oracle);
      e["rmse_to_oracle"] = o.rmse;
      e["identity_rmse_to_oracle"] = o.identity_rmse;
      std::printf("  rmse_to_oracle %.5f (identity %.5f)", o.rmse, o.identity_rmse);
    }
    std::printf("\n");
    report["methods"][label] = e;
  };

  score("noisy", noisy);
  if (conjugate) score("oracle", oracle);
  for (const auto& h : st.heads) {
    std::vector<ImagePlane> est;
    for (const auto& x : noisy) est.push_back(direct_denoise(h.dd, st.normalization, x));
    score("direct-" + to_string(h.dd.loss_kind), est);
  }
  const VaeSampler sampler(st.vae, st.normalization);
  const ConsensusSpec spec{cfg.inference.n_samples, aggregator_from_string(cfg.inference.aggregator),
                           cfg.inference.median_memory_budget_mb << 20};
  std::vector<ImagePlane> est;
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    est.push_back(consensus(sampler, noisy[k], spec, derive_seed(cfg.seeds.inference, k)));
  }
  score("consensus-" + cfg.inference.aggregator + "-" + std::to_string(spec.n_samples), est);

  const fs::path dir = out.empty() ? fs::path(cfg.output_dir) : fs::path(out);
  fs::create_directories(dir);
  std::ofstream os(dir / "eval.json");
  if (!os) throw IoError("cannot write " + (dir / "eval.json").string());
  os << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised denoising with a noise-model VAE and a co-trained direct denoiser"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override a config value, e.g. --set training.total_steps=200")
      ->take_all()
      ->allow_extra_args(false);

  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  synth->add_option("--out", synth_out, "Dataset directory");

  std::string resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Co-train the VAE and Direct Denoiser(s)");
  train->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_flag("--quiet", quiet, "Only print the final summary");

  DenoiseArgs da;
  auto* denoise = app.add_subcommand("denoise", "Denoise .dud images");
  denoise->add_option("--checkpoint", da.checkpoint, "Checkpoint (default <output_dir>/checkpoints/final.dudc)");
  denoise->add_option("--mode", da.mode, "sample | consensus | direct")
      ->check(CLI::IsMember({"sample", "consensus", "direct"}));
  denoise->add_option("--n-samples", da.n_samples, "Samples per consensus")->check(CLI::PositiveNumber);
  denoise->add_option("--aggregator", da.aggregator, "mean | median")->check(CLI::IsMember({"mean", "median"}));
  denoise->add_option("--loss", da.loss, "Direct head to use: L1 | L2")->check(CLI::IsMember({"L1", "L2"}));
  denoise->add_option("--out", da.out, "Output directory");
  denoise->add_option("inputs", da.inputs, "Input .dud files")->required()->check(CLI::ExistingFile);

  std::string bench_ckpt, bench_out;
  bool include_1000 = false;
  auto* bench = app.add_subcommand("bench", "Time-vs-PSNR benchmark on the test set");
  bench->add_option("--checkpoint", bench_ckpt, "Checkpoint");
  bench->add_flag("--include-1000", include_1000, "Add N=1000 to the sample counts");
  bench->add_option("--out", bench_out, "Output directory");

  std::string eval_ckpt, eval_out;
  auto* eval = app.add_subcommand("eval", "PSNR and oracle RMSE on the test set");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint");
  eval->add_option("--out", eval_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(g, synth_out);
    if (*train) return cmd_train(g, resume, quiet);
    if (*denoise) return cmd_denoise(g, da);
    if (*bench) return cmd_bench(g, bench_ckpt, include_1000, bench_out);
    if (*eval) return cmd_eval(g, eval_ckpt, eval_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const SpecMismatchError& e) {
    std::cerr << "checkpoint mismatch: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
