// eit3d command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "eit3d/eit3d.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

struct Failure {
  int code;
  std::string message;
};

void log_to_stderr(eit3d_log_level level, const char* msg, void*) {
  std::fprintf(stderr, "%s%s\n", level == EIT3D_LOG_WARNING ? "warning: " : "", msg);
}

// Owns a string handed out by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { eit3d_free_string(p); }
  std::string str() const { return p ? p : ""; }
};

void check(eit3d_status s) {
  if (s != EIT3D_OK) throw Failure{kExitFailure, eit3d_last_error()};
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

// Config file + dotted overrides; flags given on the command line land in
// `overrides` and win over the file.
struct ConfigLayer {
  std::string path;
  std::vector<std::string> sets;
  nlohmann::json overrides = nlohmann::json::object();

  template <class T>
  void flag(const CLI::Option* o, const std::string& key, const T& value) {
    if (o && o->count() > 0) set(key, nlohmann::json(value));
  }
  void set(const std::string& key, nlohmann::json value) {
    std::string ptr = "/" + key;
    for (char& c : ptr) c = c == '.' ? '/' : c;
    overrides[nlohmann::json::json_pointer(ptr)] = std::move(value);
  }

  nlohmann::json resolve() {
    nlohmann::json j = nlohmann::json::object();
    if (!path.empty()) {
      std::ifstream in(path);
      if (!in) throw Failure{kExitUsage, "cannot open config file '" + path + "'"};
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Failure{kExitFailure, path + ": " + e.what()};
      }
      if (!j.is_object()) throw Failure{kExitFailure, path + ": config must be a JSON object"};
    }
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw Failure{kExitUsage, "--set expects key=value, got '" + s + "'"};
      nlohmann::json v = nlohmann::json::parse(s.substr(eq + 1), nullptr, false);
      set(s.substr(0, eq), v.is_discarded() ? nlohmann::json(s.substr(eq + 1)) : v);
    }
    j.merge_patch(overrides);
    return j;
  }
};

std::string config_path_or(const nlohmann::json& cfg, const char* key, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (cfg.contains("paths") && cfg["paths"].contains(key)) return cfg["paths"][key].get<std::string>();
  LibString s;
  check(eit3d_config_normalize("{}", &s.p));
  return nlohmann::json::parse(s.str())["paths"][key].get<std::string>();
}

void print_json(const std::string& s) {
  if (!s.empty()) std::cout << nlohmann::json::parse(s).dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale 3D electrical impedance tomography: simulation, datasets, TN-Net and one-step "
               "reconstruction."};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(eit3d_version()));

  ConfigLayer layer;
  int jobs = 0;
  bool quiet = false;
  app.add_option("--config", layer.path, "JSON run config; flags override its values")->check(CLI::ExistingFile);
  app.add_option("--set", layer.sets, "Override any config value by dotted key, e.g. --set train.epochs=40")
      ->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  auto* jobs_opt = app.add_option("--jobs", jobs, "Cap on worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", quiet, "Suppress progress messages");

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Simulate phantoms and write a dataset file");
  std::string gen_out;
  std::vector<int> counts;
  std::uint64_t gen_seed = 0;
  int resolution = 0;
  bool dry_run = false;
  gen->add_option("-o,--out", gen_out, "Dataset file to write (default: paths.dataset)");
  auto* counts_opt = gen->add_option("--counts", counts, "Records per category: 2obj-,2obj+-,3obj-,3obj+-")
                         ->expected(4)
                         ->delimiter(',')
                         ->check(CLI::NonNegativeNumber);
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "Master seed");
  auto* res_opt = gen->add_option("--resolution", resolution, "Mesh resolution (cells across the diameter)")
                      ->check(CLI::Range(6, 256));
  gen->add_flag("--dry-run", dry_run, "Print the request summary without generating");

  // train
  auto* train = app.add_subcommand("train", "Train TN-Net on a dataset");
  std::string train_ds, train_ckpt, train_csv, preset;
  int epochs = 0, batch = 0;
  double lr = 0.0;
  std::uint64_t train_seed = 0;
  bool no_dropout = false;
  train->add_option("-d,--dataset", train_ds, "Dataset file (default: paths.dataset)");
  train->add_option("-o,--checkpoint", train_ckpt, "Checkpoint to write (default: paths.checkpoint)");
  train->add_option("--history", train_csv, "Loss-history CSV (default: paths.history_csv or <checkpoint>.csv)");
  auto* preset_opt =
      train->add_option("--preset", preset, "Architecture preset")->check(CLI::IsMember({"desk", "full"}));
  auto* epochs_opt = train->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber);
  auto* batch_opt = train->add_option("--batch-size", batch, "Mini-batch size")->check(CLI::PositiveNumber);
  auto* lr_opt = train->add_option("--lr", lr, "AdamW learning rate")->check(CLI::PositiveNumber);
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Training seed (init, shuffling, noise, dropout)");
  auto* no_dropout_opt = train->add_flag("--no-dropout", no_dropout, "Disable dropout");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct volumes from normalized frames");
  std::string method, frames, rec_ds, rec_ckpt, rec_out;
  std::vector<int> rec_idx;
  double lambda = 0.0;
  rec->add_option("-m,--method", method, "Reconstruction method")
      ->required()
      ->check(CLI::IsMember({"tn-net", "one-step"}));
  auto* frames_opt = rec->add_option("--frames", frames, "Text file, one normalized frame per line")
                         ->check(CLI::ExistingFile);
  auto* rec_ds_opt =
      rec->add_option("-d,--dataset", rec_ds, "Dataset to take frames (and one-step metadata) from");
  rec->add_option("--index", rec_idx, "Dataset record indices")->delimiter(',')->needs(rec_ds_opt);
  rec->add_option("-c,--checkpoint", rec_ckpt, "TN-Net checkpoint (default: paths.checkpoint)");
  auto* lambda_opt = rec->add_option("--lambda", lambda, "One-step regularization weight")
                         ->check(CLI::NonNegativeNumber);
  rec->add_option("-o,--out", rec_out, "Volume file; several frames get _0000, _0001, ... suffixes")->required();
  frames_opt->excludes("--index");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score methods on the test split with seeded noise");
  std::string ev_ds, ev_ckpt, report;
  std::vector<std::string> methods{"tn-net", "one-step"};
  double snr = 0.0;
  std::uint64_t noise_seed = 0;
  int max_samples = 0;
  ev->add_option("-d,--dataset", ev_ds, "Dataset file (default: paths.dataset)");
  ev->add_option("-m,--methods", methods, "Comma-separated methods: tn-net, one-step, oracle")
      ->delimiter(',')
      ->check(CLI::IsMember({"tn-net", "one-step", "oracle"}))
      ->capture_default_str();
  ev->add_option("-c,--checkpoint", ev_ckpt, "TN-Net checkpoint (default: paths.checkpoint)");
  auto* snr_opt = ev->add_option("--snr", snr, "Test noise level in dB");
  auto* noise_seed_opt = ev->add_option("--noise-seed", noise_seed, "Seed of the test noise");
  auto* max_opt = ev->add_option("--max-samples", max_samples, "Evaluate at most this many test records")
                      ->check(CLI::NonNegativeNumber);
  auto* lambda_ev_opt = ev->add_option("--lambda", lambda, "One-step regularization weight")
                            ->check(CLI::NonNegativeNumber);
  auto* report_opt = ev->add_option("--report", report, "Write the JSON report here");

  // export-slices
  auto* ex = app.add_subcommand("export-slices", "Write PGM images and CSV tables of volume slices");
  std::string volume, out_dir;
  char axis = 'z';
  std::vector<int> slices;
  ex->add_option("-v,--volume", volume, "Volume file")->required()->check(CLI::ExistingFile);
  ex->add_option("-a,--axis", axis, "Slice axis: x, y or z")->capture_default_str();
  ex->add_option("-i,--index", slices, "Slice indices")->required()->delimiter(',');
  ex->add_option("-o,--out-dir", out_dir, "Output directory")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "Time meshing, simulation and both reconstructors");
  std::string bench_ckpt;
  int repeats = 20;
  bench->add_option("-c,--checkpoint", bench_ckpt, "TN-Net checkpoint (default: freshly initialized)");
  bench->add_option("--repeats", repeats, "Timed repetitions")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (!quiet) eit3d_set_logger(log_to_stderr, nullptr);

  try {
    layer.flag(jobs_opt, "jobs", jobs);
    layer.flag(counts_opt, "counts", counts);
    layer.flag(gen_seed_opt, "seed", gen_seed);
    layer.flag(res_opt, "simulation.mesh_resolution", resolution);
    layer.flag(preset_opt, "architecture", nlohmann::json{{"preset", preset}});
    layer.flag(epochs_opt, "train.epochs", epochs);
    layer.flag(batch_opt, "train.batch_size", batch);
    layer.flag(lr_opt, "train.learning_rate", lr);
    layer.flag(train_seed_opt, "train.seed", train_seed);
    if (no_dropout_opt->count() > 0) layer.set("train.dropout", false);
    layer.flag(lambda_opt, "baseline.lambda", lambda);
    layer.flag(lambda_ev_opt, "baseline.lambda", lambda);
    layer.flag(snr_opt, "eval.noise_snr_db", snr);
    layer.flag(noise_seed_opt, "eval.seed", noise_seed);
    layer.flag(max_opt, "eval.max_samples", max_samples);
    layer.flag(report_opt, "paths.report", report);
    const nlohmann::json cfg = layer.resolve();
    const std::string cfg_text = cfg.dump();

    if (*gen) {
      LibString s;
      check(eit3d_gen_dataset(cfg_text.c_str(), config_path_or(cfg, "dataset", gen_out).c_str(), dry_run, &s.p));
      print_json(s.str());
    } else if (*train) {
      const std::string ckpt = config_path_or(cfg, "checkpoint", train_ckpt);
      std::string csv = config_path_or(cfg, "history_csv", train_csv);
      if (csv.empty()) csv = ckpt + ".csv";
      LibString s;
      check(eit3d_train(cfg_text.c_str(), config_path_or(cfg, "dataset", train_ds).c_str(), ckpt.c_str(),
                        csv.c_str(), &s.p));
      print_json(s.str());
    } else if (*rec) {
      if (frames.empty() && rec_ds.empty()) throw Failure{kExitUsage, "reconstruct needs --frames or --dataset"};
      if (!rec_ds.empty() && frames.empty() && rec_idx.empty()) {
        throw Failure{kExitUsage, "--dataset needs --index to pick records"};
      }
      const std::string ckpt = method == "tn-net" ? config_path_or(cfg, "checkpoint", rec_ckpt) : "";
      LibString s;
      check(eit3d_reconstruct(cfg_text.c_str(), method.c_str(), opt(frames), opt(rec_ds), rec_idx.data(),
                              rec_idx.size(), opt(ckpt), rec_out.c_str(), &s.p));
      print_json(s.str());
    } else if (*ev) {
      std::string list;
      bool needs_ckpt = false;
      for (const auto& m : methods) {
        list += (list.empty() ? "" : ",") + m;
        needs_ckpt = needs_ckpt || m == "tn-net";
      }
      const std::string ckpt = needs_ckpt ? config_path_or(cfg, "checkpoint", ev_ckpt) : "";
      LibString rep, table;
      check(eit3d_evaluate(cfg_text.c_str(), config_path_or(cfg, "dataset", ev_ds).c_str(), list.c_str(), opt(ckpt),
                           &rep.p, &table.p));
      std::cout << table.str();
    } else if (*ex) {
      LibString s;
      check(eit3d_export_slices(volume.c_str(), axis, slices.data(), slices.size(), out_dir.c_str(), &s.p));
      print_json(s.str());
    } else if (*bench) {
      LibString s;
      check(eit3d_bench(cfg_text.c_str(), opt(bench_ckpt), repeats, &s.p));
      print_json(s.str());
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return 0;
}
