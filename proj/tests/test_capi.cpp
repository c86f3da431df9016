// C API and CLI tests. Links only the shared library.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "byteshield/byteshield.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  bs_string_free(s);
  return out;
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string slurp_text(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Shared scratch corpus and model, built once.
struct World {
  fs::path dir = fs::temp_directory_path() / "bs_capi_test";
  fs::path train_manifest, test_manifest, model_path;
  bs_model* model = nullptr;

  World() {
    fs::remove_all(dir);
    char* rep = nullptr;
    REQUIRE(bs_gen_corpus(R"({"count_per_class": 120, "seed": 1, "min_size": 3000, "max_size": 8000})",
                          (dir / "train").c_str(), &rep) == BS_OK);
    bs_string_free(rep);
    REQUIRE(bs_gen_corpus(R"({"count_per_class": 10, "seed": 2, "min_size": 3000, "max_size": 8000, "months": 2})",
                          (dir / "test").c_str(), &rep) == BS_OK);
    bs_string_free(rep);
    train_manifest = dir / "train" / "manifest.csv";
    test_manifest = dir / "test" / "manifest.csv";
    REQUIRE(bs_train(train_manifest.c_str(), R"({"noise": "mask", "epochs": 8, "seed": 3})", &model, &rep) == BS_OK);
    bs_string_free(rep);
    model_path = dir / "model.bin";
    REQUIRE(bs_model_save(model, model_path.c_str()) == BS_OK);
  }
  ~World() {
    bs_model_free(model);
    fs::remove_all(dir);
  }
};

World& world() {
  static World w;
  return w;
}

struct RunResult {
  int exit_code;
  std::string out, err;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  const fs::path out = world().dir / "cli_out.txt", err = world().dir / "cli_err.txt";
  const std::string cmd =
      env + " " + std::string(BS_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int st = std::system(cmd.c_str());
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp_text(out), slurp_text(err)};
}

}  // namespace

TEST_CASE("status names and last error") {
  CHECK(std::string(bs_status_name(BS_OK)) == "ok");
  CHECK(std::string(bs_status_name(BS_ERR_MANIFEST)) == "manifest");
  bs_model* m = nullptr;
  CHECK(bs_model_load("/nonexistent/model.bin", &m) == BS_ERR_IO);
  CHECK(m == nullptr);
  CHECK(std::string(bs_last_error()).find("/nonexistent/model.bin") != std::string::npos);
  CHECK(bs_model_load(nullptr, &m) == BS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("plan windows through the C API") {
  size_t n = 0, nominal = 0;
  REQUIRE(bs_plan_windows(1000000, 50, 1, &n, &nominal) == BS_OK);
  CHECK(nominal == 50);
  CHECK(n == 51);
  CHECK(bs_plan_windows(100, 50, 60, &n, &nominal) == BS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("options are validated") {
  bs_detector* d = nullptr;
  CHECK(bs_detector_create(world().model, R"({"defense": "byteshield", "mask": 50, "thresold": 2})", &d) ==
        BS_ERR_INVALID_ARGUMENT);
  CHECK(std::string(bs_last_error()).find("thresold") != std::string::npos);
  CHECK(bs_detector_create(world().model, R"({"defense": "shield"})", &d) == BS_ERR_INVALID_ARGUMENT);
  CHECK(bs_detector_create(world().model, R"({"defense": "byteshield", "mask": 50, "stride": 50})", &d) ==
        BS_ERR_INVALID_ARGUMENT);
  CHECK(bs_detector_create(world().model, "not json", &d) == BS_ERR_INVALID_ARGUMENT);
  CHECK(d == nullptr);
  char* rep = nullptr;
  CHECK(bs_gen_corpus(R"({"count_per_class": 1, "max_size": 100})", (world().dir / "x").c_str(), &rep) ==
        BS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("model round trip and prediction") {
  bs_model* loaded = nullptr;
  REQUIRE(bs_model_load(world().model_path.c_str(), &loaded) == BS_OK);
  char* js = nullptr;
  REQUIRE(bs_model_info(loaded, &js) == BS_OK);
  CHECK(json::parse(take(js))["config"]["filters"] == 16);

  bs_detector *a = nullptr, *b = nullptr, *bsd = nullptr;
  REQUIRE(bs_detector_create(world().model, R"({"defense": "none"})", &a) == BS_OK);
  REQUIRE(bs_detector_create(loaded, nullptr, &b) == BS_OK);
  REQUIRE(bs_detector_create(loaded, R"({"defense": "byteshield", "mask": 50, "stride": 1, "threshold": 2})",
                             &bsd) == BS_OK);
  int correct = 0, total = 0;
  for (const auto& entry : fs::directory_iterator(world().dir / "test")) {
    if (entry.path().extension() != ".exe") continue;
    const auto bytes = slurp(entry.path());
    int ma = -1, mb = -1, mbs = -1;
    char* ex = nullptr;
    REQUIRE(bs_predict(a, bytes.data(), bytes.size(), &ma, nullptr) == BS_OK);
    REQUIRE(bs_predict(b, bytes.data(), bytes.size(), &mb, nullptr) == BS_OK);
    REQUIRE(bs_predict(bsd, bytes.data(), bytes.size(), &mbs, &ex) == BS_OK);
    CHECK(ma == mb);
    const json j = json::parse(take(ex));
    CHECK(j["tally"]["windows"] == j["passes"]);
    CHECK(j["passes"].get<int>() <= 51);
    const bool truth = entry.path().filename().string().rfind("malicious", 0) == 0;
    correct += (mbs == 1) == truth;
    ++total;
  }
  CHECK(total == 20);
  CHECK(correct >= 18);
  bs_detector_free(a);
  bs_detector_free(b);
  bs_detector_free(bsd);
  bs_model_free(loaded);
}

TEST_CASE("attack through the C API") {
  bs_detector* d = nullptr;
  REQUIRE(bs_detector_create(world().model, nullptr, &d) == BS_OK);
  bs_donors* donors = nullptr;
  REQUIRE(bs_donors_create(&donors) == BS_OK);
  const auto benign = slurp(world().dir / "train" / "benign_00000.exe");
  REQUIRE(bs_donors_add(donors, "b0", benign.data(), benign.size()) == BS_OK);

  const auto mal = slurp(world().dir / "test" / "malicious_00000.exe");
  char* res = nullptr;
  uint8_t* adv = nullptr;
  size_t adv_len = 0;
  REQUIRE(bs_attack(d, donors, mal.data(), mal.size(), "m0", R"({"budget_percent": 10, "opt_budget": 50, "seed": 4})",
                    &res, &adv, &adv_len) == BS_OK);
  const json r = json::parse(take(res));
  CHECK(r["sample_id"] == "m0");
  CHECK(r["queries"].get<int>() <= 51);
  CHECK(adv_len == mal.size() + (mal.size() * 10 + 99) / 100);
  CHECK(std::equal(mal.begin(), mal.end(), adv));  // padding leaves the original prefix intact
  bs_bytes_free(adv);

  // Benign input is refused as a vacuous attack.
  const auto ben = slurp(world().dir / "test" / "benign_00000.exe");
  CHECK(bs_attack(d, donors, ben.data(), ben.size(), "b", nullptr, &res, nullptr, nullptr) == BS_ERR_NOT_DETECTED);
  CHECK(bs_attack(d, donors, mal.data(), mal.size(), "m", R"({"strategy": "teleport"})", &res, nullptr, nullptr) ==
        BS_ERR_INVALID_ARGUMENT);
  bs_donors_free(donors);
  bs_detector_free(d);
}

TEST_CASE("evaluation, temporal and certification through the C API") {
  char *js = nullptr, *metrics = nullptr, *sweep = nullptr;
  const std::string opts = R"({"detectors": [{"defense": "none"}, {"name": "bs", "defense": "byteshield"}],
    "sweep": {"strategies": ["padding"], "budgets": [0, 10], "opt_budget": 30, "samples": 3}})";
  REQUIRE(bs_evaluate(world().model, world().test_manifest.c_str(), opts.c_str(), &js, &metrics, &sweep) == BS_OK);
  const json rep = json::parse(take(js));
  CHECK(rep["metrics"].size() == 2);
  CHECK(rep["metrics"][1]["detector"] == "bs");
  CHECK(rep["sweep"]["cells"].size() == 4);
  CHECK(take(metrics).rfind("detector,samples", 0) == 0);
  CHECK(take(sweep).rfind("detector,strategy", 0) == 0);

  REQUIRE(bs_evaluate(world().model, world().test_manifest.c_str(), nullptr, &js, nullptr, &sweep) == BS_OK);
  CHECK(sweep == nullptr);
  bs_string_free(js);

  bs_detector* d = nullptr;
  REQUIRE(bs_detector_create(world().model, nullptr, &d) == BS_OK);
  char* csv = nullptr;
  REQUIRE(bs_temporal_eval(d, world().test_manifest.c_str(), 1, &js, &csv) == BS_OK);
  const json t = json::parse(take(js));
  CHECK(t["months"].size() == 2);
  CHECK(t["aut"].get<double>() >= 0.0);
  bs_string_free(csv);
  CHECK(bs_temporal_eval(d, world().train_manifest.c_str(), 1, &js, &csv) == BS_ERR_INVALID_ARGUMENT);
  bs_detector_free(d);

  const std::vector<uint8_t> tiny(200, 0x41);
  REQUIRE(bs_certify(world().model, tiny.data(), tiny.size(), 10, 1, &js) == BS_OK);
  const json c = json::parse(take(js));
  CHECK(c["mask_bytes"] == 20);
  CHECK(c["windows"] == 181);
  CHECK(bs_certify(world().model, tiny.data(), 0, 10, 1, &js) == BS_ERR_INVALID_ARGUMENT);
}

TEST_CASE("manifest errors surface with their code") {
  const fs::path bad = world().dir / "bad.csv";
  std::ofstream(bad) << "path,label\nb.exe,weird\n";
  char* js = nullptr;
  CHECK(bs_manifest_load(bad.c_str(), &js) == BS_ERR_MANIFEST);
  CHECK(std::string(bs_last_error()).find("line 2") != std::string::npos);
}

TEST_CASE("cli exit codes and verdicts") {
  const auto& w = world();
  const std::string mal = (w.dir / "test" / "malicious_00000.exe").string();
  const std::string model = w.model_path.string();

  auto r = run_cli("predict --model " + model + " --defense byteshield --mask 50 --stride 1 --threshold 2 " + mal);
  CHECK(r.exit_code == 0);
  CHECK(r.out == mal + "\tmalicious\n");

  // Threshold above the window count can never be reached.
  r = run_cli("predict --model " + model + " --defense byteshield --mask 50 --stride 5 --threshold 12 " + mal);
  CHECK(r.exit_code == 0);
  CHECK(r.out == mal + "\tbenign\n");

  r = run_cli("frobnicate");
  CHECK(r.exit_code == 2);
  r = run_cli("predict --model " + model + " --mask 50 --stride 1 --threshold 2");  // no files
  CHECK(r.exit_code == 2);
  r = run_cli("predict --model " + model + " --defense magic " + mal);
  CHECK(r.exit_code == 2);

  r = run_cli("--json-errors predict --model /nonexistent.bin " + mal);
  CHECK(r.exit_code == 1);
  const json e = json::parse(r.err);
  CHECK(e["error"]["exit_code"] == 1);
  CHECK(e["error"]["kind"] == "io");
  r = run_cli("--json-errors bogus-subcommand");
  CHECK(r.exit_code == 2);
  CHECK(json::parse(r.err)["error"]["kind"] == "usage");

  r = run_cli("predict --model " + model + " " + (w.dir / "missing.exe").string());
  CHECK(r.exit_code == 1);
}

TEST_CASE("cli config precedence and seed environment") {
  const auto& w = world();
  const std::string mal = (w.dir / "test" / "malicious_00000.exe").string();
  const fs::path cfg = w.dir / "run.toml";
  std::ofstream(cfg) << "seed = 11\n[predict]\ndefense = \"byteshield\"\nthreshold = 12\nstride = 5\n";

  auto r = run_cli("--config " + cfg.string() + " predict --model " + w.model_path.string() + " --explain " + mal);
  REQUIRE(r.exit_code == 0);
  json j = json::parse(r.out);
  CHECK(j["spec"]["threshold"] == 12);
  CHECK(j["seed"] == 11);
  CHECK(j["label"] == "benign");

  // Flags override the file.
  r = run_cli("--config " + cfg.string() + " predict --model " + w.model_path.string() + " --threshold 2 --stride 1 --explain " + mal);
  REQUIRE(r.exit_code == 0);
  j = json::parse(r.out);
  CHECK(j["spec"]["threshold"] == 2);
  CHECK(j["label"] == "malicious");

  r = run_cli("predict --model " + w.model_path.string() + " --explain " + mal, "BYTESHIELD_SEED=77");
  REQUIRE(r.exit_code == 0);
  CHECK(json::parse(r.out)["seed"] == 77);
  r = run_cli("--seed 5 predict --model " + w.model_path.string() + " --explain " + mal, "BYTESHIELD_SEED=77");
  CHECK(json::parse(r.out)["seed"] == 5);
}

TEST_CASE("cli defense none equals the plain path") {
  const auto& w = world();
  std::string args;
  for (const char* f : {"malicious_00000.exe", "malicious_00001.exe", "benign_00000.exe", "benign_00001.exe"}) {
    args += " " + (w.dir / "test" / f).string();
  }
  const auto a = run_cli("predict --model " + w.model_path.string() + " --defense none" + args);
  const auto b = run_cli("predict --model " + w.model_path.string() + args);
  CHECK(a.exit_code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("cli writes reports atomically and refuses oversized certification") {
  const auto& w = world();
  const fs::path out = w.dir / "eval";
  auto r = run_cli("--seed 9 evaluate --model " + w.model_path.string() + " --manifest " + w.test_manifest.string() +
                   " --defense none --sweep --sweep-samples 2 --budget-percent 10 --opt-budget 20 --out " + out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "sweep.csv"));
  for (const auto& entry : fs::directory_iterator(out)) CHECK(entry.path().extension() != ".tmp");
  const json rep = json::parse(slurp_text(out / "report.json"));
  CHECK(rep["seed"] == 9);
  CHECK(rep["sweep"]["config"]["attack"]["seed"] == 9);

  const fs::path big = w.dir / "big.bin";
  std::ofstream(big, std::ios::binary) << std::string(70000, 'A');
  r = run_cli("certify --model " + w.model_path.string() + " " + big.string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("--force") != std::string::npos);

  const fs::path train_out = w.dir / "m2.bin";
  r = run_cli("--seed 4 train " + w.train_manifest.string() + " --epochs 1 --out " + train_out.string());
  REQUIRE(r.exit_code == 0);
  const json tr = json::parse(slurp_text(train_out.string() + ".train.json"));
  CHECK(tr["seed"] == 4);
  CHECK(tr["epoch_loss"].size() == 1);
}
