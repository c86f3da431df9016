#include "byteshield/byteshield.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <set>
#include <string>

#include <json.hpp>

#include "byteshield/attacks.hpp"
#include "byteshield/classifier.hpp"
#include "byteshield/corpus.hpp"
#include "byteshield/errors.hpp"
#include "byteshield/evaluation.hpp"
#include "byteshield/io.hpp"
#include "byteshield/masking.hpp"
#include "byteshield/smoothing.hpp"

using nlohmann::json;
namespace bs = byteshield;

struct bs_model {
  bs::ClassifierModel model;
  std::shared_ptr<const bs::MalConvClassifier> classifier;
  explicit bs_model(bs::ClassifierModel m)
      : model(std::move(m)), classifier(std::make_shared<bs::MalConvClassifier>(model)) {}
};

struct bs_detector {
  bs::Detector detector;
};

struct bs_donors {
  bs::DonorPool pool;
};

namespace {

thread_local std::string g_last_error;

bs_status fail(bs_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

bs_status map_errc(bs::Errc code) {
  switch (code) {
    case bs::Errc::kInvalidArgument: return BS_ERR_INVALID_ARGUMENT;
    case bs::Errc::kOutOfRange: return BS_ERR_OUT_OF_RANGE;
    case bs::Errc::kIo: return BS_ERR_IO;
    case bs::Errc::kPeFormat: return BS_ERR_PE_FORMAT;
    case bs::Errc::kModelFormat: return BS_ERR_MODEL_FORMAT;
    case bs::Errc::kManifest: return BS_ERR_MANIFEST;
    case bs::Errc::kNotDetected: return BS_ERR_NOT_DETECTED;
  }
  return BS_ERR_INTERNAL;
}

// Runs fn, converting exceptions into status codes.
template <typename Fn>
bs_status guarded(Fn&& fn) {
  try {
    fn();
    return BS_OK;
  } catch (const bs::Error& e) {
    return fail(map_errc(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail(BS_ERR_INVALID_ARGUMENT, std::string("bad options: ") + e.what());
  } catch (const std::bad_alloc&) {
    return fail(BS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BS_ERR_INTERNAL, e.what());
  }
}

void require(bool cond, const char* what) {
  if (!cond) throw bs::Error(bs::Errc::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

// JSON options with unknown-key rejection.
class Options {
 public:
  Options(const char* text, const char* what) : what_(what) {
    if (text && *text) j_ = json::parse(text);
    if (j_.is_null()) j_ = json::object();
    require(j_.is_object(), "options must be a JSON object");
  }
  Options(json j, const char* what) : j_(std::move(j)), what_(what) {
    require(j_.is_object(), "options must be a JSON object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return fallback;
    return it->get<T>();
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  json raw(const std::string& key) {
    seen_.insert(key);
    return j_.value(key, json());
  }
  void ignore(const std::string& key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) {
        throw bs::Error(bs::Errc::kInvalidArgument, std::string("unknown ") + what_ + " option '" + key + "'");
      }
    }
  }

 private:
  json j_;
  std::set<std::string> seen_;
  const char* what_;
};

bs::DetectorSpec detector_spec(Options& o) {
  bs::DetectorSpec s;
  s.kind = bs::parse_defense_kind(o.get<std::string>("defense", "none"));
  s.byteshield.mask_percent = o.get("mask", s.byteshield.mask_percent);
  s.byteshield.stride_percent = o.get("stride", s.byteshield.stride_percent);
  s.byteshield.threshold = o.get("threshold", s.byteshield.threshold);
  s.drs.chunks = o.get("chunks", s.drs.chunks);
  s.rsdel.delete_prob = o.get("pdel", s.rsdel.delete_prob);
  s.rsdel.samples = o.get("nsamples", s.rsdel.samples);
  s.rsdel.seed = o.get<std::uint64_t>("seed", s.rsdel.seed);
  s.label_only = o.get("label_only", s.label_only);
  s.jobs = o.get("jobs", s.jobs);
  o.ignore("name");
  s.validate();
  return s;
}

bs::AttackSpec attack_spec(Options& o) {
  bs::AttackSpec a;
  a.strategy = bs::parse_strategy(o.get<std::string>("strategy", bs::to_string(a.strategy)));
  a.budget_percent = o.get("budget_percent", a.budget_percent);
  a.init = bs::parse_init_mode(o.get<std::string>("init", bs::to_string(a.init)));
  a.optimizer_budget = o.get("opt_budget", a.optimizer_budget);
  a.seed = o.get<std::uint64_t>("seed", a.seed);
  a.max_new_sections = o.get("max_new_sections", a.max_new_sections);
  a.stop_on_evasion = o.get("stop_on_evasion", a.stop_on_evasion);
  return a;
}

std::vector<bs::Token> widen(const uint8_t* data, size_t length) { return {data, data + length}; }

std::span<const uint8_t> bytes_of(const uint8_t* data, size_t length) {
  require(data || length == 0, "null data pointer");
  return {data, length};
}

bs::NoiseKind parse_noise(const std::string& name) {
  if (name == "none") return bs::NoiseKind::kNone;
  if (name == "mask") return bs::NoiseKind::kMaskWindow;
  if (name == "delete") return bs::NoiseKind::kDelete;
  if (name == "chunk") return bs::NoiseKind::kChunk;
  throw bs::Error(bs::Errc::kInvalidArgument, "unknown noise '" + name + "' (none, mask, delete, chunk)");
}

const char* noise_name(bs::NoiseKind k) {
  switch (k) {
    case bs::NoiseKind::kNone: return "none";
    case bs::NoiseKind::kMaskWindow: return "mask";
    case bs::NoiseKind::kDelete: return "delete";
    case bs::NoiseKind::kChunk: return "chunk";
  }
  return "none";
}

json config_json(const bs::ClassifierConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"filters", c.filters},
          {"kernel", c.kernel},
          {"conv_stride", c.conv_stride},
          {"max_len", c.max_len}};
}

}  // namespace

extern "C" {

const char* bs_version(void) { return "1.0.0"; }

const char* bs_status_name(bs_status status) {
  switch (status) {
    case BS_OK: return "ok";
    case BS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case BS_ERR_OUT_OF_RANGE: return "out_of_range";
    case BS_ERR_IO: return "io";
    case BS_ERR_PE_FORMAT: return "pe_format";
    case BS_ERR_MODEL_FORMAT: return "model_format";
    case BS_ERR_MANIFEST: return "manifest";
    case BS_ERR_NOT_DETECTED: return "not_detected";
    case BS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* bs_last_error(void) { return g_last_error.c_str(); }

void bs_string_free(char* s) { std::free(s); }
void bs_bytes_free(uint8_t* bytes) { std::free(bytes); }

bs_status bs_plan_windows(size_t length, int mask_percent, int stride_percent, size_t* out_windows,
                          size_t* out_nominal_count) {
  return guarded([&] {
    require(out_windows, "null output pointer");
    const auto ws = bs::plan_windows(length, {mask_percent, stride_percent, 1});
    *out_windows = ws.starts.size();
    if (out_nominal_count) *out_nominal_count = ws.nominal_count;
  });
}

bs_status bs_gen_corpus(const char* options_json, const char* out_dir, char** out_report_json) {
  return guarded([&] {
    require(out_dir && *out_dir, "output directory required");
    Options o(options_json, "corpus");
    bs::SynthSpec s;
    s.count_per_class = o.get("count_per_class", s.count_per_class);
    s.min_size = o.get("min_size", s.min_size);
    s.max_size = o.get("max_size", s.max_size);
    s.signature_count = o.get("signature_count", s.signature_count);
    s.signature_length = o.get("signature_length", s.signature_length);
    s.marker_count = o.get("marker_count", s.marker_count);
    s.marker_length = o.get("marker_length", s.marker_length);
    s.marker_spacing = o.get("marker_spacing", s.marker_spacing);
    s.signature_spacing = o.get("signature_spacing", s.signature_spacing);
    s.months = o.get("months", s.months);
    s.start = o.get("start", s.start);
    s.drift_rate = o.get("drift_rate", s.drift_rate);
    s.seed = o.get<std::uint64_t>("seed", s.seed);
    s.jobs = o.get("jobs", s.jobs);
    o.finish();
    const bs::SynthCorpus c = bs::gen_synthetic(s);
    bs::write_corpus(c, out_dir);
    std::size_t mal = 0;
    for (const auto& f : c.files) mal += static_cast<std::size_t>(f.label);
    emit(out_report_json, json{{"spec", s.to_json()},
                               {"out_dir", out_dir},
                               {"files", c.files.size()},
                               {"malicious", mal},
                               {"benign", c.files.size() - mal}}
                              .dump());
  });
}

bs_status bs_manifest_load(const char* manifest_path, char** out_json) {
  return guarded([&] {
    require(manifest_path && out_json, "manifest path and output required");
    const std::filesystem::path mpath(manifest_path);
    json rows = json::array();
    for (const auto& r : bs::load_manifest_file(mpath)) {
      rows.push_back({{"path", bs::resolve(r, mpath.parent_path()).string()},
                      {"label", bs::label_name(r.label)},
                      {"timestamp", r.timestamp ? r.timestamp->to_string() : ""},
                      {"family", r.family}});
    }
    *out_json = dup_string(rows.dump());
  });
}

bs_status bs_train(const char* manifest_path, const char* options_json, bs_model** out_model,
                   char** out_report_json) {
  return guarded([&] {
    require(manifest_path && out_model, "manifest path and output model required");
    Options o(options_json, "training");
    const std::string arch = o.get<std::string>("arch", "toy");
    bs::ClassifierConfig cfg;
    if (arch == "toy") cfg = bs::ClassifierConfig::toy();
    else if (arch == "full") cfg = bs::ClassifierConfig::full();
    else throw bs::Error(bs::Errc::kInvalidArgument, "unknown arch '" + arch + "' (toy, full)");
    bs::TrainConfig tc;
    tc.noise = parse_noise(o.get<std::string>("noise", noise_name(tc.noise)));
    tc.mask_percent = o.get("mask_percent", tc.mask_percent);
    tc.delete_prob = o.get("delete_prob", tc.delete_prob);
    tc.chunks = o.get("chunks", tc.chunks);
    tc.epochs = o.get("epochs", tc.epochs);
    tc.batch_size = o.get("batch_size", tc.batch_size);
    tc.learning_rate = o.get("learning_rate", tc.learning_rate);
    tc.momentum = o.get("momentum", tc.momentum);
    tc.seed = o.get<std::uint64_t>("seed", tc.seed);
    const auto init_seed = o.get<std::uint64_t>("init_seed", tc.seed);
    o.finish();
    tc.validate();

    const std::filesystem::path mpath(manifest_path);
    const auto rows = bs::load_manifest_file(mpath);
    if (rows.empty()) throw bs::Error(bs::Errc::kManifest, "manifest has no rows");
    std::vector<bs::Example> data;
    data.reserve(rows.size());
    for (const auto& r : rows) {
      const auto bytes = bs::read_file(bs::resolve(r, mpath.parent_path()).string());
      data.push_back({{bytes.begin(), bytes.end()}, r.label});
    }
    auto model = bs::ClassifierModel::initialized(cfg, init_seed);
    const bs::TrainReport rep = bs::train(model, std::span<const bs::Example>(data), tc);
    *out_model = new bs_model(std::move(model));
    emit(out_report_json, json{{"manifest", manifest_path},
                               {"samples", data.size()},
                               {"arch", arch},
                               {"config", config_json(cfg)},
                               {"noise", noise_name(tc.noise)},
                               {"mask_percent", tc.mask_percent},
                               {"delete_prob", tc.delete_prob},
                               {"chunks", tc.chunks},
                               {"epochs", tc.epochs},
                               {"batch_size", tc.batch_size},
                               {"learning_rate", tc.learning_rate},
                               {"momentum", tc.momentum},
                               {"seed", tc.seed},
                               {"init_seed", init_seed},
                               {"epoch_loss", rep.epoch_loss}}
                              .dump());
  });
}

bs_status bs_model_load(const char* path, bs_model** out_model) {
  return guarded([&] {
    require(path && out_model, "path and output model required");
    *out_model = new bs_model(bs::load_model(path));
  });
}

bs_status bs_model_save(const bs_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model and path required");
    bs::save_model(model->model, path);
  });
}

bs_status bs_model_info(const bs_model* model, char** out_json) {
  return guarded([&] {
    require(model && out_json, "model and output required");
    emit(out_json, json{{"config", config_json(model->model.config())},
                        {"parameters", model->model.params().size()}}
                       .dump());
  });
}

void bs_model_free(bs_model* model) { delete model; }

bs_status bs_detector_create(const bs_model* model, const char* options_json, bs_detector** out_detector) {
  return guarded([&] {
    require(model && out_detector, "model and output detector required");
    Options o(options_json, "detector");
    const bs::DetectorSpec spec = detector_spec(o);
    o.finish();
    *out_detector = new bs_detector{bs::Detector(model->classifier, spec)};
  });
}

void bs_detector_free(bs_detector* detector) { delete detector; }

bs_status bs_predict(const bs_detector* detector, const uint8_t* data, size_t length, int* out_malicious,
                     char** out_explain_json) {
  return guarded([&] {
    require(detector && out_malicious, "detector and output required");
    bytes_of(data, length);
    const auto tokens = widen(data, length);
    const bs::Prediction p = detector->detector.predict(tokens);
    *out_malicious = p.malicious ? 1 : 0;
    if (out_explain_json) {
      json j = {{"detector", detector->detector.name()},
                {"spec", detector->detector.spec().to_json()},
                {"length", length},
                {"label", bs::label_name(p.malicious ? 1 : 0)},
                {"passes", p.tally.windows()},
                {"tally", bs::to_json(p.tally)}};
      emit(out_explain_json, j.dump());
    }
  });
}

bs_status bs_donors_create(bs_donors** out_donors) {
  return guarded([&] {
    require(out_donors, "null output pointer");
    *out_donors = new bs_donors;
  });
}

bs_status bs_donors_add(bs_donors* donors, const char* name, const uint8_t* data, size_t length) {
  return guarded([&] {
    require(donors, "null donor pool");
    donors->pool.add(name ? name : "", bytes_of(data, length));
  });
}

void bs_donors_free(bs_donors* donors) { delete donors; }

bs_status bs_attack(const bs_detector* detector, const bs_donors* donors, const uint8_t* data, size_t length,
                    const char* sample_id, const char* options_json, char** out_result_json, uint8_t** out_bytes,
                    size_t* out_length) {
  return guarded([&] {
    require(detector && out_result_json, "detector and output required");
    Options o(options_json, "attack");
    const bs::AttackSpec spec = attack_spec(o);
    o.finish();
    static const bs::DonorPool kEmpty;
    const bs::AttackResult r = bs::run_attack(detector->detector, bytes_of(data, length), spec,
                                              donors ? donors->pool : kEmpty, sample_id ? sample_id : "");
    json j = bs::to_json(r);
    j["spec"] = detector->detector.spec().to_json();
    emit(out_result_json, j.dump());
    if (out_bytes) {
      require(out_length, "out_length required with out_bytes");
      auto* buf = static_cast<uint8_t*>(std::malloc(std::max<std::size_t>(r.adversarial.size(), 1)));
      if (!buf) throw std::bad_alloc();
      std::memcpy(buf, r.adversarial.data(), r.adversarial.size());
      *out_bytes = buf;
      *out_length = r.adversarial.size();
    }
  });
}

bs_status bs_evaluate(const bs_model* model, const char* manifest_path, const char* options_json, char** out_json,
                      char** out_metrics_csv, char** out_sweep_csv) {
  return guarded([&] {
    require(model && manifest_path && out_json, "model, manifest and output required");
    if (out_sweep_csv) *out_sweep_csv = nullptr;
    Options o(options_json, "evaluation");
    const int jobs = o.get("jobs", 1);
    json dets = o.raw("detectors");
    if (dets.is_null()) dets = json::array({json{{"name", "plain"}, {"defense", "none"}}});
    require(dets.is_array() && !dets.empty(), "detectors must be a nonempty array");
    json sweep_opts = o.raw("sweep");
    o.finish();

    std::vector<bs::SweepDetector> detectors;
    json det_echo = json::array();
    for (const auto& d : dets) {
      Options od(d, "detector");
      bs::DetectorSpec spec = detector_spec(od);
      od.finish();
      auto det = std::make_shared<bs::Detector>(model->classifier, spec);
      const std::string name = d.value("name", det->name());
      detectors.push_back({name, det});
      json e = spec.to_json();
      e["name"] = name;
      det_echo.push_back(e);
    }

    const std::filesystem::path mpath(manifest_path);
    const auto rows = bs::load_manifest_file(mpath);
    if (rows.empty()) throw bs::Error(bs::Errc::kManifest, "manifest has no rows");
    std::vector<bs::LabeledSample> samples;
    for (const auto& r : rows) {
      samples.push_back({r.path, r.label, bs::read_file(bs::resolve(r, mpath.parent_path()).string())});
    }

    json metrics = json::array();
    std::string csv = "detector,samples,tp,fp,tn,fn,accuracy,tpr,fpr,precision,f1,mean_passes\n";
    for (const auto& d : detectors) {
      const auto res = bs::evaluate_detector(*d.detector, samples, jobs);
      const auto& m = res.metrics;
      const double mean_passes = static_cast<double>(res.passes) / static_cast<double>(samples.size());
      json j = m.to_json();
      j["detector"] = d.name;
      j["mean_passes"] = mean_passes;
      metrics.push_back(j);
      char line[512];
      std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n", d.name.c_str(),
                    m.total(), m.tp, m.fp, m.tn, m.fn, m.accuracy, m.tpr, m.fpr, m.precision, m.f1, mean_passes);
      csv += line;
    }

    json report = {{"manifest", manifest_path}, {"jobs", jobs}, {"detectors", det_echo}, {"metrics", metrics}};
    if (!sweep_opts.is_null()) {
      Options os(sweep_opts, "sweep");
      bs::SweepConfig sc;
      sc.jobs = jobs;
      json strategies = os.raw("strategies");
      if (!strategies.is_null()) {
        sc.strategies.clear();
        for (const auto& s : strategies) sc.strategies.push_back(bs::parse_strategy(s.get<std::string>()));
      }
      json budgets = os.raw("budgets");
      if (!budgets.is_null()) sc.budgets = budgets.get<std::vector<int>>();
      const std::size_t limit = os.get<std::size_t>("samples", 0);
      const std::string donors_manifest = os.get<std::string>("donors_manifest", "");
      os.ignore("strategy");
      os.ignore("budget_percent");
      sc.attack = attack_spec(os);
      os.finish();

      bs::DonorPool donors;
      if (!donors_manifest.empty()) {
        const std::filesystem::path dpath(donors_manifest);
        for (const auto& r : bs::load_manifest_file(dpath)) {
          if (r.label == 0) donors.add(r.path, bs::read_file(bs::resolve(r, dpath.parent_path()).string()));
        }
      } else {
        for (const auto& s : samples) {
          if (s.label == 0) donors.add(s.id, s.bytes);
        }
      }
      std::vector<bs::SweepSample> targets;
      for (const auto& s : samples) {
        if (s.label == 1 && (limit == 0 || targets.size() < limit)) targets.push_back({s.id, s.bytes});
      }
      require(!targets.empty(), "sweep needs malicious rows in the manifest");
      const bs::SweepReport sr = bs::attack_sweep(detectors, targets, donors, sc);
      json sj = sr.to_json();
      sj["donors"] = donors.sources().size();
      sj["donors_manifest"] = donors_manifest;
      report["sweep"] = sj;
      if (out_sweep_csv) *out_sweep_csv = dup_string(sr.to_csv());
    }
    emit(out_metrics_csv, csv);
    *out_json = dup_string(report.dump());
  });
}

bs_status bs_temporal_eval(const bs_detector* detector, const char* manifest_path, int jobs, char** out_json,
                           char** out_csv) {
  return guarded([&] {
    require(detector && manifest_path && out_json, "detector, manifest and output required");
    const std::filesystem::path mpath(manifest_path);
    const auto rows = bs::load_manifest_file(mpath);
    const bs::TemporalReport rep = bs::temporal_eval(detector->detector, rows, mpath.parent_path(), jobs);
    json j = rep.to_json();
    j["manifest"] = manifest_path;
    j["detector"] = detector->detector.spec().to_json();
    j["jobs"] = jobs;
    emit(out_csv, rep.to_csv());
    *out_json = dup_string(j.dump());
  });
}

bs_status bs_certify(const bs_model* model, const uint8_t* data, size_t length, int mask_percent, int jobs,
                     char** out_json) {
  return guarded([&] {
    require(model && out_json, "model and output required");
    require(length > 0, "cannot certify an empty file");
    require(mask_percent >= 1 && mask_percent < 100, "mask percent must be in [1, 99]");
    const std::size_t m = bs::percent_of(length, mask_percent);
    const auto tokens = widen(bytes_of(data, length).data(), length);
    const bs::Certification c = bs::certify_exhaustive(*model->classifier, tokens, m, jobs);
    json j = {{"length", length},
              {"mask_percent", mask_percent},
              {"mask_bytes", m},
              {"windows", c.tally.windows()},
              {"num_malicious", c.tally.num_malicious},
              {"num_benign", c.tally.num_benign},
              {"unanimous", c.unanimous},
              {"verdict", c.unanimous ? bs::label_name(c.malicious ? 1 : 0) : std::string("disagreement")}};
    *out_json = dup_string(j.dump());
  });
}

}  // extern "C"
