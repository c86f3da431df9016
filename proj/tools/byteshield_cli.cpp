// Command-line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "byteshield/byteshield.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

// Exhaustive certification costs one pass per start position.
constexpr std::size_t kCertifySizeCap = 64 * 1024;

bool g_json_errors = false;

struct Failure {
  int exit_code;
  std::string kind;
  std::string message;
};

void report_error(const Failure& f) {
  if (g_json_errors) {
    std::cerr << json{{"error", {{"kind", f.kind}, {"message", f.message}, {"exit_code", f.exit_code}}}}.dump()
              << "\n";
  } else {
    std::cerr << "byteshield: " << f.message << "\n";
  }
}

// Throws a Failure for a non-OK status.
void check(bs_status st, const std::string& context = "") {
  if (st == BS_OK) return;
  std::string msg = bs_last_error();
  if (!context.empty()) msg = context + ": " + msg;
  throw Failure{kExitError, bs_status_name(st), msg};
}

struct CString {
  char* p = nullptr;
  ~CString() { bs_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

using ModelPtr = std::unique_ptr<bs_model, decltype(&bs_model_free)>;
using DetectorPtr = std::unique_ptr<bs_detector, decltype(&bs_detector_free)>;
using DonorsPtr = std::unique_ptr<bs_donors, decltype(&bs_donors_free)>;

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kExitError, "io", "cannot open " + path};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Failure{kExitError, "io", "cannot write " + tmp.string()};
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Failure{kExitError, "io", "short write to " + tmp.string()};
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Failure{kExitError, "io", "cannot rename onto " + path.string() + ": " + ec.message()};
}

ModelPtr load_model(const std::string& path) {
  bs_model* m = nullptr;
  check(bs_model_load(path.c_str(), &m), "loading model " + path);
  return {m, bs_model_free};
}

struct Row {
  std::string path;
  int label;
};

std::vector<Row> read_manifest_rows(const std::string& manifest) {
  CString js;
  check(bs_manifest_load(manifest.c_str(), &js.p), "reading " + manifest);
  std::vector<Row> rows;
  for (const auto& r : json::parse(js.str())) {
    rows.push_back({r["path"].get<std::string>(), r["label"] == "malicious" ? 1 : 0});
  }
  return rows;
}

// Flags shared by every subcommand that builds a detector.
struct DefenseFlags {
  std::string defense = "none";
  std::vector<std::string> defenses;  // evaluate accepts several
  int mask = 50;
  int stride = 1;
  int threshold = 2;
  int chunks = 5;
  double pdel = 0.97;
  int nsamples = 100;
  bool label_only = false;

  void add_to(CLI::App* app, bool multi) {
    if (multi) {
      app->add_option("--defense", defenses, "Detectors to evaluate (repeatable): none|byteshield|drs|rsdel")
          ->check(CLI::IsMember({"none", "byteshield", "drs", "rsdel"}));
    } else {
      app->add_option("--defense", defense, "Decision rule: none|byteshield|drs|rsdel")
          ->check(CLI::IsMember({"none", "byteshield", "drs", "rsdel"}))
          ->capture_default_str();
    }
    app->add_option("--mask", mask, "Mask size M, percent of file length")->capture_default_str();
    app->add_option("--stride", stride, "Mask stride S, percent")->capture_default_str();
    app->add_option("--threshold", threshold, "Malicious votes T needed")->capture_default_str();
    app->add_option("--chunks", chunks, "DRS chunk count")->capture_default_str();
    app->add_option("--pdel", pdel, "RSDel deletion probability")->capture_default_str();
    app->add_option("--nsamples", nsamples, "RSDel sample count")->capture_default_str();
    app->add_flag("--label-only", label_only, "Attacker sees only the label, not the score");
  }

  json options(const std::string& kind, std::uint64_t seed, int jobs) const {
    return {{"defense", kind}, {"mask", mask},         {"stride", stride}, {"threshold", threshold},
            {"chunks", chunks}, {"pdel", pdel},        {"nsamples", nsamples}, {"seed", seed},
            {"label_only", label_only}, {"jobs", jobs}};
  }
};

DetectorPtr make_detector(const bs_model* model, const json& opts) {
  bs_detector* d = nullptr;
  check(bs_detector_create(model, opts.dump().c_str(), &d), "building detector");
  return {d, bs_detector_free};
}

struct AttackFlags {
  std::vector<std::string> strategies{"padding"};
  std::vector<int> budgets{10};
  std::string init = "benign";
  int opt_budget = 3000;
  int max_new_sections = 5;

  void add_to(CLI::App* app) {
    app->add_option("--strategy", strategies, "padding|shift|code_caves|section_injection (repeatable)")
        ->check(CLI::IsMember({"padding", "shift", "code_caves", "section_injection"}));
    app->add_option("--budget-percent", budgets, "Payload size, percent of file length (repeatable)");
    app->add_option("--init", init, "Payload initialization")
        ->check(CLI::IsMember({"benign", "random", "zeros"}))
        ->capture_default_str();
    app->add_option("--opt-budget", opt_budget, "Detector queries for the optimizer")->capture_default_str();
    app->add_option("--max-new-sections", max_new_sections, "Section-injection cap")->capture_default_str();
  }
};

DonorsPtr load_donors(const std::string& manifest) {
  bs_donors* d = nullptr;
  check(bs_donors_create(&d));
  DonorsPtr pool(d, bs_donors_free);
  if (manifest.empty()) return pool;
  for (const auto& r : read_manifest_rows(manifest)) {
    if (r.label != 0) continue;
    const auto bytes = read_bytes(r.path);
    check(bs_donors_add(pool.get(), r.path.c_str(), bytes.data(), bytes.size()));
  }
  return pool;
}

void emit_output(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_atomic(out, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"byteshield: masking-based smoothing for byte-level malware detectors"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Config file (TOML/INI); command-line flags override it");
  app.set_version_flag("--version", std::string(bs_version()));

  std::uint64_t seed = 0;
  int jobs = 1;
  app.add_option("--seed", seed, "Global seed (default from BYTESHIELD_SEED)")
      ->envname("BYTESHIELD_SEED")
      ->capture_default_str();
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_flag("--json-errors", g_json_errors, "Machine-readable errors on stderr");

  std::string model_path, out, manifest, donors_manifest;
  std::vector<std::string> files;
  bool explain = false, force = false;
  DefenseFlags def;
  AttackFlags atk;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic PE corpus with a manifest");
  json corpus_opts = json::object();
  std::size_t count = 100, min_size = 4096, max_size = 16384;
  int months = 0;
  std::string start = "2019-09";
  double drift = 0.0;
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Files per class")->capture_default_str();
  gen->add_option("--min-size", min_size, "Smallest file, bytes")->capture_default_str();
  gen->add_option("--max-size", max_size, "Largest file, bytes")->capture_default_str();
  gen->add_option("--months", months, "Spread timestamps over this many months (0: none)")->capture_default_str();
  gen->add_option("--start", start, "First month, YYYY-MM")->capture_default_str();
  gen->add_option("--drift", drift, "Monthly growth of the drifted-pattern fraction")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train a classifier on a manifest");
  std::string arch = "toy";
  int epochs = 10;
  std::size_t batch = 32;
  double lr = 0.05;
  std::optional<int> train_mask;
  trn->add_option("manifest", manifest, "Training manifest CSV")->required();
  trn->add_option("--out", out, "Model file to write")->required();
  trn->add_option("--arch", arch, "toy|full")->check(CLI::IsMember({"toy", "full"}))->capture_default_str();
  trn->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
  trn->add_option("--batch", batch, "Minibatch size")->capture_default_str();
  trn->add_option("--lr", lr, "Learning rate")->capture_default_str();
  trn->add_option("--train-mask", train_mask, "Training mask percent (defaults to --mask)");
  trn->add_option("--defense", def.defense,
                  "Training noise matching a defense: none (clean), byteshield (masking), drs (chunks), rsdel "
                  "(deletion)")
      ->check(CLI::IsMember({"none", "byteshield", "drs", "rsdel"}))
      ->capture_default_str();
  trn->add_option("--mask", def.mask, "Mask percent M")->capture_default_str();
  trn->add_option("--chunks", def.chunks, "DRS chunk count")->capture_default_str();
  trn->add_option("--pdel", def.pdel, "RSDel deletion probability")->capture_default_str();

  // predict
  auto* pred = app.add_subcommand("predict", "Classify files");
  pred->add_option("--model", model_path, "Model file")->required();
  def.add_to(pred, false);
  pred->add_flag("--explain", explain, "Print the vote tally as JSON");
  pred->add_option("--out", out, "Write output here instead of stdout");
  pred->add_option("files", files, "Files to classify")->required();

  // attack
  auto* att = app.add_subcommand("attack", "Run payload-injection attacks; writes JSON lines");
  att->add_option("--model", model_path, "Model file")->required();
  def.add_to(att, false);
  atk.add_to(att);
  att->add_option("--donors", donors_manifest, "Manifest whose benign rows seed benign initialization");
  att->add_option("--out", out, "JSON-lines output (default stdout)");
  std::string save_dir;
  att->add_option("--save-dir", save_dir, "Directory for adversarial files");
  att->add_option("files", files, "Malicious files to attack")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Clean metrics and optional attack sweep");
  ev->add_option("--model", model_path, "Model file")->required();
  ev->add_option("--manifest", manifest, "Evaluation manifest CSV")->required();
  def.add_to(ev, true);
  atk.add_to(ev);
  bool sweep = false;
  std::size_t sweep_samples = 0;
  ev->add_flag("--sweep", sweep, "Also run the attack sweep over the malicious rows");
  ev->add_option("--sweep-samples", sweep_samples, "Attack at most this many malicious rows (0: all)");
  ev->add_option("--donors", donors_manifest, "Donor manifest (default: benign rows of --manifest)");
  ev->add_option("--out", out, "Report directory (report.json, metrics.csv, sweep.csv)")->required();

  // temporal-eval
  auto* tmp = app.add_subcommand("temporal-eval", "Per-month F1 and AUT on a timestamped manifest");
  tmp->add_option("--model", model_path, "Model file")->required();
  tmp->add_option("--manifest", manifest, "Timestamped manifest CSV")->required();
  def.add_to(tmp, false);
  tmp->add_option("--out", out, "Report directory (temporal.json, temporal.csv)");

  // certify
  auto* cert = app.add_subcommand("certify", "Exhaustive masking certificate per file");
  cert->add_option("--model", model_path, "Model file")->required();
  cert->add_option("--mask", def.mask, "Mask percent M")->capture_default_str();
  cert->add_flag("--force", force, "Allow files above the size cap");
  cert->add_option("--out", out, "Write JSON lines here instead of stdout");
  cert->add_option("files", files, "Files to certify")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (g_json_errors) {
      report_error({kExitUsage, "usage", e.what()});
    } else {
      app.exit(e);
    }
    return kExitUsage;
  }

  try {
    if (*gen) {
      corpus_opts = {{"count_per_class", count}, {"min_size", min_size}, {"max_size", max_size},
                     {"months", months},         {"start", start},       {"drift_rate", drift},
                     {"seed", seed},             {"jobs", jobs}};
      CString rep;
      check(bs_gen_corpus(corpus_opts.dump().c_str(), out.c_str(), &rep.p), "generating corpus");
      std::cout << rep.str() << "\n";
      return kExitOk;
    }

    if (*trn) {
      json opts = {{"arch", arch},         {"epochs", epochs},  {"batch_size", batch},
                   {"learning_rate", lr},  {"seed", seed},      {"chunks", def.chunks},
                   {"delete_prob", def.pdel}, {"mask_percent", train_mask.value_or(def.mask)}};
      if (def.defense == "none") opts["noise"] = "none";
      else if (def.defense == "byteshield") opts["noise"] = "mask";
      else if (def.defense == "drs") opts["noise"] = "chunk";
      else opts["noise"] = "delete";
      bs_model* m = nullptr;
      CString rep;
      check(bs_train(manifest.c_str(), opts.dump().c_str(), &m, &rep.p), "training");
      ModelPtr model(m, bs_model_free);
      check(bs_model_save(model.get(), out.c_str()), "saving model");
      json r = json::parse(rep.str());
      r["model"] = out;
      r["defense"] = def.defense;
      write_atomic(out + ".train.json", r.dump(2) + "\n");
      for (std::size_t e = 0; e < r["epoch_loss"].size(); ++e) {
        std::cout << "epoch " << e + 1 << " loss " << r["epoch_loss"][e].get<double>() << "\n";
      }
      std::cout << "wrote " << out << "\n";
      return kExitOk;
    }

    if (*pred) {
      const ModelPtr model = load_model(model_path);
      const DetectorPtr det = make_detector(model.get(), def.options(def.defense, seed, jobs));
      std::string text;
      int status = kExitOk;
      for (const auto& f : files) {
        try {
          const auto bytes = read_bytes(f);
          int mal = 0;
          CString ex;
          check(bs_predict(det.get(), bytes.data(), bytes.size(), &mal, explain ? &ex.p : nullptr), f);
          if (explain) {
            json j = json::parse(ex.str());
            j["file"] = f;
            j["seed"] = seed;
            text += j.dump() + "\n";
          } else {
            text += f + "\t" + (mal ? "malicious" : "benign") + "\n";
          }
        } catch (const Failure& fail) {
          report_error(fail);
          status = kExitError;
        }
      }
      emit_output(out, text);
      return status;
    }

    if (*att) {
      const ModelPtr model = load_model(model_path);
      const DetectorPtr det = make_detector(model.get(), def.options(def.defense, seed, jobs));
      const DonorsPtr donors = load_donors(donors_manifest);
      if (atk.strategies.size() != 1 || atk.budgets.size() != 1) {
        throw Failure{kExitUsage, "usage", "attack takes one --strategy and one --budget-percent; use evaluate --sweep for grids"};
      }
      std::string text;
      for (std::size_t i = 0; i < files.size(); ++i) {
        const auto bytes = read_bytes(files[i]);
        const json opts = {{"strategy", atk.strategies[0]}, {"budget_percent", atk.budgets[0]},
                           {"init", atk.init},              {"opt_budget", atk.opt_budget},
                           {"seed", seed + i},              {"max_new_sections", atk.max_new_sections}};
        CString res;
        uint8_t* adv = nullptr;
        std::size_t adv_len = 0;
        const bs_status st = bs_attack(det.get(), donors.get(), bytes.data(), bytes.size(), files[i].c_str(),
                                       opts.dump().c_str(), &res.p, save_dir.empty() ? nullptr : &adv, &adv_len);
        if (st == BS_ERR_NOT_DETECTED) {
          text += json{{"sample_id", files[i]}, {"skipped", "not detected clean"}, {"seed", seed + i}}.dump() + "\n";
          continue;
        }
        check(st, files[i]);
        json r = json::parse(res.str());
        if (adv) {
          const fs::path dst = fs::path(save_dir) / (fs::path(files[i]).filename().string() + ".adv");
          write_atomic(dst, std::string(reinterpret_cast<const char*>(adv), adv_len));
          bs_bytes_free(adv);
          r["adversarial_path"] = dst.string();
        }
        text += r.dump() + "\n";
      }
      emit_output(out, text);
      return kExitOk;
    }

    if (*ev) {
      const ModelPtr model = load_model(model_path);
      std::vector<std::string> kinds = def.defenses.empty() ? std::vector<std::string>{"none", "byteshield"}
                                                            : def.defenses;
      json dets = json::array();
      for (const auto& k : kinds) dets.push_back(def.options(k, seed, jobs));
      for (auto& d : dets) d.erase("jobs");
      json opts = {{"detectors", dets}, {"jobs", jobs}};
      if (sweep) {
        std::vector<int> budgets = atk.budgets;
        if (std::find(budgets.begin(), budgets.end(), 0) == budgets.end()) budgets.insert(budgets.begin(), 0);
        opts["sweep"] = {{"strategies", atk.strategies}, {"budgets", budgets},
                         {"init", atk.init},             {"opt_budget", atk.opt_budget},
                         {"seed", seed},                 {"max_new_sections", atk.max_new_sections},
                         {"samples", sweep_samples},     {"donors_manifest", donors_manifest}};
      }
      CString js, metrics, sweep_csv;
      check(bs_evaluate(model.get(), manifest.c_str(), opts.dump().c_str(), &js.p, &metrics.p, &sweep_csv.p),
            "evaluating");
      json report = json::parse(js.str());
      report["seed"] = seed;
      report["model"] = model_path;
      write_atomic(fs::path(out) / "report.json", report.dump(2) + "\n");
      write_atomic(fs::path(out) / "metrics.csv", metrics.str());
      if (sweep_csv.p) write_atomic(fs::path(out) / "sweep.csv", sweep_csv.str());
      std::cout << metrics.str();
      if (sweep_csv.p) std::cout << sweep_csv.str();
      return kExitOk;
    }

    if (*tmp) {
      const ModelPtr model = load_model(model_path);
      const DetectorPtr det = make_detector(model.get(), def.options(def.defense, seed, 1));
      CString js, csv;
      check(bs_temporal_eval(det.get(), manifest.c_str(), jobs, &js.p, &csv.p), "temporal evaluation");
      json report = json::parse(js.str());
      report["seed"] = seed;
      report["model"] = model_path;
      if (!out.empty()) {
        write_atomic(fs::path(out) / "temporal.json", report.dump(2) + "\n");
        write_atomic(fs::path(out) / "temporal.csv", csv.str());
      }
      std::cout << csv.str() << "aut," << report["aut"].get<double>() << "\n";
      return kExitOk;
    }

    if (*cert) {
      const ModelPtr model = load_model(model_path);
      std::string text;
      int status = kExitOk;
      for (const auto& f : files) {
        try {
          const auto bytes = read_bytes(f);
          if (bytes.size() > kCertifySizeCap && !force) {
            throw Failure{kExitError, "size_cap",
                          f + " is " + std::to_string(bytes.size()) + " bytes; exhaustive certification is capped at " +
                              std::to_string(kCertifySizeCap) + " (use --force)"};
          }
          CString js;
          check(bs_certify(model.get(), bytes.data(), bytes.size(), def.mask, jobs, &js.p), f);
          json j = json::parse(js.str());
          j["file"] = f;
          text += j.dump() + "\n";
        } catch (const Failure& fail) {
          report_error(fail);
          status = kExitError;
        }
      }
      emit_output(out, text);
      return status;
    }
  } catch (const Failure& f) {
    report_error(f);
    return f.exit_code;
  } catch (const std::exception& e) {
    report_error({kExitError, "internal", e.what()});
    return kExitError;
  }
  return kExitUsage;
}
