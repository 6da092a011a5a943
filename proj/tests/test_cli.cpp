// Exercises the C API and the command-line tool; links only libsmart.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "smart/smart.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  smart_string_free(s);
  return out;
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "smart_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// A small run: 20 scenes, d=16, 30 CE steps.
Json small_run(const std::string& name) {
  char* out = nullptr;
  const std::string run_dir = (work_dir() / name).string();
  const std::string data_dir = (work_dir() / "data").string();
  const std::string o_data = "paths.dataset=" + data_dir;
  const std::string o_run = "paths.run_dir=" + run_dir;
  const char* overrides[] = {o_data.c_str(),           o_run.c_str(),           "dataset.num_scenes=20",
                             "dataset.region_feature_dim=16", "model.region_feature_dim=16",
                             "model.d=16",              "model.heads=2",         "model.d_ff=32",
                             "model.memory_slots=2",    "train.steps=30",        "train.batch_size=4",
                             "train.eval_interval=10",  "train.max_eval_scenes=4", "train.split=all",
                             "schedule.warmup=10",      "scst.steps=2",          "scst.beam_size=2",
                             "scst.batch_size=2"};
  REQUIRE(smart_config_resolve(nullptr, overrides, std::size(overrides), &out) == SMART_OK);
  return Json::parse(take(out));
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

int run_cli(const std::string& args, std::string* err = nullptr) {
  const fs::path err_file = work_dir() / "stderr.txt";
  const std::string cmd = std::string(SMART_CLI) + " " + args + " >" + (work_dir() / "stdout.txt").string() +
                          " 2>" + err_file.string();
  const int raw = std::system(cmd.c_str());
  if (err) *err = read_file(err_file);
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

void ensure_dataset(const Json& cfg) {
  static bool done = false;
  if (done) return;
  char* out = nullptr;
  REQUIRE(smart_cmd_generate_data(cfg.dump().c_str(), &out) == SMART_OK);
  take(out);
  done = true;
}

}  // namespace

TEST_CASE("status names, version, last error") {
  CHECK(std::string(smart_version()) == "0.1.0");
  CHECK(std::string(smart_status_name(SMART_OK)) == "ok");
  CHECK(std::string(smart_status_name(SMART_ERR_CONFIG)) == "config error");
  smart_model* m = nullptr;
  CHECK(smart_model_create("{\"d\": 10, \"heads\": 4}", 1, &m) == SMART_ERR_CONFIG);
  CHECK(m == nullptr);
  CHECK(std::string(smart_last_error()).find("heads") != std::string::npos);
  CHECK(smart_model_create(nullptr, 1, nullptr) == SMART_ERR_USAGE);
}

TEST_CASE("config resolution: defaults < file < overrides < SMART_SEED") {
  const auto file = work_dir() / "cfg.json";
  std::ofstream(file) << R"({"model": {"d": 32, "heads": 2}, "seed": 5, "train": {"steps": 7}})";
  char* out = nullptr;
  unsetenv("SMART_SEED");
  REQUIRE(smart_config_resolve(nullptr, nullptr, 0, &out) == SMART_OK);
  Json def = Json::parse(take(out));
  CHECK(def["model"]["d"] == 64);
  CHECK(def["seed"] == 1);

  REQUIRE(smart_config_resolve(file.c_str(), nullptr, 0, &out) == SMART_OK);
  Json f = Json::parse(take(out));
  CHECK(f["model"]["d"] == 32);
  CHECK(f["model"]["d_ff"] == 256);
  CHECK(f["train"]["steps"] == 7);

  const char* ov[] = {"model.d=48", "seed=9"};
  REQUIRE(smart_config_resolve(file.c_str(), ov, 2, &out) == SMART_OK);
  Json o = Json::parse(take(out));
  CHECK(o["model"]["d"] == 48);
  CHECK(o["seed"] == 9);

  setenv("SMART_SEED", "77", 1);
  REQUIRE(smart_config_resolve(file.c_str(), ov, 2, &out) == SMART_OK);
  CHECK(Json::parse(take(out))["seed"] == 77);
  unsetenv("SMART_SEED");

  const char* unknown[] = {"model.depth=3"};
  CHECK(smart_config_resolve(nullptr, unknown, 1, &out) == SMART_ERR_CONFIG);
  CHECK(std::string(smart_last_error()).find("model.depth") != std::string::npos);
  const char* bad_type[] = {"model.d=wide"};
  CHECK(smart_config_resolve(nullptr, bad_type, 1, &out) == SMART_ERR_CONFIG);
  const char* invalid[] = {"model.heads=3"};
  CHECK(smart_config_resolve(nullptr, invalid, 1, &out) == SMART_ERR_CONFIG);
  CHECK(std::string(smart_last_error()).find("heads") != std::string::npos);
  CHECK(smart_config_resolve((work_dir() / "nope.json").c_str(), nullptr, 0, &out) == SMART_ERR_CONFIG);
}

TEST_CASE("model handle: create, count, save, load, generate") {
  smart_model* m = nullptr;
  const char* cfg = R"({"d": 16, "heads": 2, "d_ff": 32, "memory_slots": 0, "vocab_size": 20,
                        "region_feature_dim": 8, "max_seq_len": 10})";
  REQUIRE(smart_model_create(cfg, 3, &m) == SMART_OK);
  smart_model* mm = nullptr;
  Json jm = Json::parse(cfg);
  jm["memory_slots"] = 3;
  REQUIRE(smart_model_create(jm.dump().c_str(), 3, &mm) == SMART_OK);
  std::size_t n0 = 0, n3 = 0;
  smart_model_param_count(m, &n0);
  smart_model_param_count(mm, &n3);
  // Two encoder layers, 2·M·d extra scalars each.
  CHECK(n3 - n0 == 2 * (2 * 3 * 16));

  std::vector<double> regions(3 * 8);
  for (std::size_t i = 0; i < regions.size(); ++i) regions[i] = 0.1 * double(i % 7) - 0.3;
  int toks[16];
  std::size_t len = 0;
  double lp = 0.0;
  REQUIRE(smart_model_generate(m, regions.data(), 3, 8, 1, 10, toks, 16, &len, &lp) == SMART_OK);
  CHECK(len >= 1);
  CHECK(len <= 10);
  CHECK(lp <= 0.0);
  int toks2[16];
  std::size_t len2 = 0;
  double lp2 = 0.0;
  REQUIRE(smart_model_generate(m, regions.data(), 3, 8, 1, 10, toks2, 16, &len2, &lp2) == SMART_OK);
  CHECK(std::vector<int>(toks, toks + len) == std::vector<int>(toks2, toks2 + len2));
  CHECK(smart_model_generate(m, regions.data(), 4, 6, 1, 10, toks, 16, &len, &lp) == SMART_ERR_SHAPE);
  CHECK(smart_model_generate(m, regions.data(), 3, 8, 0, 10, toks, 16, &len, &lp) == SMART_ERR_USAGE);

  const auto path = work_dir() / "handle.ckpt";
  REQUIRE(smart_model_save(m, path.c_str()) == SMART_OK);
  smart_model* loaded = nullptr;
  REQUIRE(smart_model_load(path.c_str(), &loaded) == SMART_OK);
  char* a = nullptr;
  char* b = nullptr;
  smart_model_config(m, &a);
  smart_model_config(loaded, &b);
  CHECK(take(a) == take(b));
  CHECK(smart_model_load((work_dir() / "missing.ckpt").c_str(), &loaded) == SMART_ERR_IO);
  smart_model_destroy(m);
  smart_model_destroy(mm);
  smart_model_destroy(loaded);
  smart_model_destroy(nullptr);
}

TEST_CASE("train: run directory contents, determinism, resume") {
  const Json cfg = small_run("run_a");
  ensure_dataset(cfg);
  char* out = nullptr;
  REQUIRE(smart_cmd_train(cfg.dump().c_str(), 0, &out) == SMART_OK);
  const Json summary = Json::parse(take(out));
  const fs::path run = cfg["paths"]["run_dir"].get<std::string>();
  for (const char* f : {"config.json", "vocab.txt", "metrics.jsonl", "model.ckpt", "model.ckpt.json", "optimizer.ckpt"})
    CHECK(fs::exists(run / f));
  // Effective config is echoed.
  CHECK(Json::parse(read_file(run / "config.json"))["model"]["d"] == 16);
  std::istringstream log(read_file(run / "metrics.jsonl"));
  std::string line;
  std::size_t records = 0;
  while (std::getline(log, line)) {
    const Json r = Json::parse(line);
    for (const char* k : {"step", "lr", "ce_loss", "cider_d", "bleu1", "bleu4", "rouge_l"}) CHECK(r.contains(k));
    ++records;
  }
  CHECK(records >= 3);

  Json again = cfg;
  again["paths"]["run_dir"] = (work_dir() / "run_b").string();
  REQUIRE(smart_cmd_train(again.dump().c_str(), 0, &out) == SMART_OK);
  take(out);
  CHECK(read_file(run / "metrics.jsonl") == read_file(work_dir() / "run_b" / "metrics.jsonl"));
  CHECK(read_file(run / "model.ckpt") == read_file(work_dir() / "run_b" / "model.ckpt"));

  // 15 + 15 steps with a resume equals 30 straight steps.
  Json half = cfg;
  half["paths"]["run_dir"] = (work_dir() / "run_c").string();
  half["train"]["steps"] = 15;
  REQUIRE(smart_cmd_train(half.dump().c_str(), 0, &out) == SMART_OK);
  take(out);
  half["train"]["steps"] = 30;
  REQUIRE(smart_cmd_train(half.dump().c_str(), 1, &out) == SMART_OK);
  take(out);
  CHECK(read_file(run / "model.ckpt") == read_file(work_dir() / "run_c" / "model.ckpt"));
  (void)summary;
}

TEST_CASE("finetune-scst, generate, evaluate, coverage") {
  const Json cfg = small_run("run_a");
  ensure_dataset(cfg);
  const fs::path run = cfg["paths"]["run_dir"].get<std::string>();
  char* out = nullptr;
  if (!fs::exists(run / "model.ckpt")) {
    REQUIRE(smart_cmd_train(cfg.dump().c_str(), 0, &out) == SMART_OK);
    take(out);
  }
  REQUIRE(smart_cmd_finetune_scst(cfg.dump().c_str(), &out) == SMART_OK);
  const Json s = Json::parse(take(out));
  CHECK(fs::exists(run / "scst.ckpt"));
  CHECK(fs::exists(run / "scst_metrics.jsonl"));
  CHECK(s.contains("before"));
  CHECK(s.contains("after"));

  const fs::path features = fs::path(cfg["paths"]["dataset"].get<std::string>()) / "features.jsonl";
  const Json gen1{{"checkpoint", (run / "model.ckpt").string()}, {"features", features.string()},
                  {"out", (work_dir() / "pred_k1.jsonl").string()}, {"beam_size", 1}};
  REQUIRE(smart_cmd_generate(gen1.dump().c_str(), &out) == SMART_OK);
  take(out);
  Json gen3 = gen1;
  gen3["beam_size"] = 3;
  gen3["out"] = (work_dir() / "pred_k3.jsonl").string();
  REQUIRE(smart_cmd_generate(gen3.dump().c_str(), &out) == SMART_OK);
  take(out);
  std::istringstream p1(read_file(work_dir() / "pred_k1.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(p1, line)) {
    const Json r = Json::parse(line);
    CHECK(r.contains("id"));
    CHECK(r.contains("caption"));
    CHECK(r.contains("logprob"));
    CHECK(r["beams"].size() == 1);
    ++n;
  }
  CHECK(n == 20);
  std::istringstream p3(read_file(work_dir() / "pred_k3.jsonl"));
  while (std::getline(p3, line)) CHECK(Json::parse(line)["beams"].size() == 3);

  // Predictions equal to the references.
  const auto self = work_dir() / "self.jsonl";
  {
    std::ifstream f(features);
    std::ofstream o(self);
    while (std::getline(f, line)) {
      const Json sc = Json::parse(line);
      o << Json{{"id", sc["id"]}, {"caption", sc["captions"][0]}}.dump() << "\n";
    }
  }
  // Single-reference view of the features so identical predictions score 1.0.
  const auto single = work_dir() / "single_ref.jsonl";
  {
    std::ifstream f(features);
    std::ofstream o(single);
    while (std::getline(f, line)) {
      Json sc = Json::parse(line);
      sc["captions"] = Json::array({sc["captions"][0]});
      o << sc.dump() << "\n";
    }
  }
  const Json ev{{"predictions", self.string()}, {"references", single.string()}};
  REQUIRE(smart_cmd_evaluate(ev.dump().c_str(), &out) == SMART_OK);
  const Json report = Json::parse(take(out));
  CHECK(report["corpus"]["bleu1"].get<double>() == doctest::Approx(1.0));
  CHECK(report["corpus"]["bleu4"].get<double>() == doctest::Approx(1.0));
  CHECK(report["corpus"]["cider_d"].get<double>() == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(report["per_image"].size() == 20);

  const auto empty = work_dir() / "empty.jsonl";
  std::ofstream(empty).close();
  const Json ev_empty{{"predictions", empty.string()}, {"references", single.string()}};
  CHECK(smart_cmd_evaluate(ev_empty.dump().c_str(), &out) == SMART_ERR_INPUT);

  // Prediction ids without a reference are listed and excluded.
  const auto partial = work_dir() / "partial.jsonl";
  {
    std::ofstream o(partial);
    o << read_file(self) << Json{{"id", "ghost"}, {"caption", "a b"}}.dump() << "\n";
  }
  const Json ev_partial{{"predictions", partial.string()}, {"references", single.string()}};
  REQUIRE(smart_cmd_evaluate(ev_partial.dump().c_str(), &out) == SMART_OK);
  const Json pr = Json::parse(take(out));
  CHECK(pr["missing_ids"].size() == 1);
  CHECK(pr["missing_ids"][0] == "ghost");
  CHECK(pr["per_image"].size() == 20);
  CHECK_FALSE(pr["warnings"].empty());

  const Json cov{{"predictions", self.string()}, {"features", features.string()}};
  REQUIRE(smart_cmd_coverage(cov.dump().c_str(), &out) == SMART_OK);
  const Json cr = Json::parse(take(out));
  CHECK(cr["thresholds"] == Json::array({0.01, 0.03, 0.05, 0.10}));
  REQUIRE(cr["mean"].size() == 4);
  for (const auto& [label, v] : cr["mean"].items()) CHECK(v.get<double>() == 1.0);
}

TEST_CASE("gradcheck and bench through the C API") {
  char* out = nullptr;
  REQUIRE(smart_cmd_gradcheck("{}", &out) == SMART_OK);
  const Json ok = Json::parse(take(out));
  CHECK(ok["passed"] == true);
  CHECK(ok["per_param"].size() > 10);
  CHECK(smart_cmd_gradcheck(R"({"corrupt": "layer_norm"})", &out) == SMART_ERR_CHECK_FAILED);
  const Json bad = Json::parse(take(out));
  CHECK(bad["passed"] == false);
  CHECK(bad.contains("worst"));

  const Json bench{{"layers", {1, 2}}, {"memory_slots", {0, 4}}, {"batch_sizes", {1, 2}}, {"repeats", 2},
                   {"warmup", 1}, {"decode_len", 3}, {"d", 16}, {"heads", 2}, {"d_ff", 32},
                   {"out_csv", (work_dir() / "bench.csv").string()}};
  REQUIRE(smart_cmd_bench(bench.dump().c_str(), &out) == SMART_OK);
  const Json br = Json::parse(take(out));
  CHECK(br["results"].size() == 8);
  CHECK(fs::exists(work_dir() / "bench.csv"));
}

TEST_CASE("command-line exit codes") {
  std::string err;
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("config --model.d=32") == 0);
  CHECK(Json::parse(read_file(work_dir() / "stdout.txt"))["model"]["d"] == 32);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("train --paths.dataset=" + (work_dir() / "absent").string() + " --paths.run_dir=" +
                    (work_dir() / "r").string(),
                &err) == 2);
  CHECK(err.find("paths.dataset") != std::string::npos);
  const auto bad = work_dir() / "bad.json";
  std::ofstream(bad) << R"({"model": {"heads": 5}})";
  CHECK(run_cli("train -c " + bad.string(), &err) == 2);
  CHECK(err.find("heads") != std::string::npos);
  std::ofstream(work_dir() / "broken.json") << "{";
  CHECK(run_cli("config -c " + (work_dir() / "broken.json").string()) == 2);
  CHECK(run_cli("gradcheck --max-coords 4") == 0);
  CHECK(run_cli("gradcheck --max-coords 4 --corrupt matmul", &err) == 1);
  CHECK(err.find("worst coordinate") != std::string::npos);
  CHECK(run_cli("generate --checkpoint " + (work_dir() / "missing.ckpt").string() + " --features x") == 2);
}
