// Command-line front end. Talks to the library only through smart.h.
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smart/smart.h"

using Json = nlohmann::json;

namespace {

int exit_code(smart_status s) {
  switch (s) {
    case SMART_OK: return 0;
    case SMART_ERR_USAGE:
    case SMART_ERR_CONFIG: return 2;
    default: return 1;
  }
}

int report(smart_status status, char* summary) {
  if (summary) {
    std::cout << summary << '\n';
    smart_string_free(summary);
  }
  if (status != SMART_OK) {
    std::cerr << "error (" << smart_status_name(status) << "): " << smart_last_error() << '\n';
  }
  return exit_code(status);
}

struct RunArgs {
  std::string config;
  bool resume = false;
};

// Resolves the run configuration from --config and dotted overrides.
smart_status resolve(const RunArgs& args, const std::vector<std::string>& extras,
                     std::string& out) {
  std::vector<const char*> raw;
  for (const auto& e : extras) raw.push_back(e.c_str());
  char* json = nullptr;
  const smart_status s =
      smart_config_resolve(args.config.c_str(), raw.data(), raw.size(), &json);
  if (s == SMART_OK) {
    out = json;
    smart_string_free(json);
  }
  return s;
}

template <typename T>
void put_if(Json& j, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) j[key] = value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SMArT: shallow memory-aware transformer for region-set captioning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(smart_version()));

  RunArgs run_args;
  auto add_run_command = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", run_args.config, "JSON run configuration");
    sub->allow_extras();
    sub->footer("Any field can be overridden with --section.key=value, e.g. --model.d=64.");
    return sub;
  };
  CLI::App* config_cmd = add_run_command("config", "Print the effective run configuration");
  CLI::App* gen_data = add_run_command("generate-data", "Write the synthetic dataset");
  CLI::App* train = add_run_command("train", "Cross-entropy training");
  train->add_flag("--resume", run_args.resume, "Continue from the run directory's checkpoint");
  CLI::App* scst = add_run_command("finetune-scst", "Self-critical fine-tuning with CIDEr-D reward");

  std::string checkpoint, features, out, vocab, predictions, references, word_vectors, lexicon;
  std::size_t beam_size = 1, max_len = 20;
  CLI::App* generate = app.add_subcommand("generate", "Caption every scene of a feature file");
  generate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  generate->add_option("--features", features, "Feature JSON-lines file")->required();
  auto* gen_beam = generate->add_option("-k,--beam-size", beam_size, "Beam size (1 = greedy)");
  auto* gen_len = generate->add_option("--max-len", max_len, "Maximum generated tokens");
  auto* gen_out = generate->add_option("-o,--out", out, "Predictions JSON-lines output");
  auto* gen_vocab = generate->add_option("--vocab", vocab, "Vocabulary file");

  CLI::App* evaluate = app.add_subcommand("evaluate", "BLEU, ROUGE-L, CIDEr-D and coverage report");
  evaluate->add_option("--predictions", predictions, "Predictions JSON-lines")->required();
  evaluate->add_option("--references", references, "Feature file with reference captions")->required();
  auto* ev_out = evaluate->add_option("-o,--out", out, "Report JSON output");
  auto* ev_wv = evaluate->add_option("--word-vectors", word_vectors, "Word vector table");
  auto* ev_lex = evaluate->add_option("--lexicon", lexicon, "Noun lexicon");

  std::vector<double> thresholds;
  CLI::App* coverage = app.add_subcommand("coverage", "Object coverage at area thresholds");
  coverage->add_option("--predictions", predictions, "Predictions JSON-lines")->required();
  coverage->add_option("--features", features, "Feature file with object annotations")->required();
  auto* cov_t = coverage->add_option("--thresholds", thresholds, "Area fractions (default 0.01 0.03 0.05 0.10)")
                    ->delimiter(',');
  auto* cov_out = coverage->add_option("-o,--out", out, "Report JSON output");
  auto* cov_wv = coverage->add_option("--word-vectors", word_vectors, "Word vector table");
  auto* cov_lex = coverage->add_option("--lexicon", lexicon, "Noun lexicon");

  std::vector<std::size_t> layers, memory, batches;
  std::size_t repeats = 10, warmup = 2, decode_len = 20;
  std::string out_csv, out_json;
  CLI::App* bench = app.add_subcommand("bench", "Decode latency per (layers, memory slots, batch size)");
  auto* b_layers = bench->add_option("--layers", layers, "Layer counts (default 2,6)")->delimiter(',');
  auto* b_mem = bench->add_option("--memory-slots", memory, "Memory slots (default 0,40)")->delimiter(',');
  auto* b_batch = bench->add_option("--batch-sizes", batches, "Batch sizes (default 1,8,32)")->delimiter(',');
  auto* b_rep = bench->add_option("--repeats", repeats, "Timed repeats per cell");
  auto* b_warm = bench->add_option("--warmup", warmup, "Untimed warmup rounds");
  auto* b_len = bench->add_option("--decode-len", decode_len, "Decoded tokens per caption");
  auto* b_csv = bench->add_option("--out-csv", out_csv, "CSV output");
  auto* b_json = bench->add_option("--out-json", out_json, "JSON output");

  std::string corrupt;
  double tol = 1e-4, eps = 1e-5, corrupt_factor = 1.01;
  std::size_t max_coords = 0;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of a d=16 model");
  auto* g_tol = gradcheck->add_option("--tol", tol, "Relative error tolerance");
  auto* g_eps = gradcheck->add_option("--eps", eps, "Finite-difference step");
  auto* g_max = gradcheck->add_option("--max-coords", max_coords, "Coordinates per parameter (0 = all)");
  auto* g_cor = gradcheck->add_option("--corrupt", corrupt, "Op whose backward is scaled (negative control)");
  auto* g_fac = gradcheck->add_option("--corrupt-factor", corrupt_factor, "Scale for --corrupt");
  auto* g_out = gradcheck->add_option("-o,--out", out, "Report JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  char* summary = nullptr;
  for (CLI::App* sub : {config_cmd, gen_data, train, scst}) {
    if (!sub->parsed()) continue;
    std::string config;
    smart_status s = resolve(run_args, sub->remaining(), config);
    if (s != SMART_OK) return report(s, nullptr);
    if (sub == config_cmd) {
      std::cout << config << '\n';
      return 0;
    }
    if (sub == gen_data) s = smart_cmd_generate_data(config.c_str(), &summary);
    if (sub == train) s = smart_cmd_train(config.c_str(), run_args.resume ? 1 : 0, &summary);
    if (sub == scst) s = smart_cmd_finetune_scst(config.c_str(), &summary);
    return report(s, summary);
  }

  Json opts = Json::object();
  smart_status s = SMART_OK;
  if (generate->parsed()) {
    opts["checkpoint"] = checkpoint;
    opts["features"] = features;
    put_if(opts, "beam_size", gen_beam, beam_size);
    put_if(opts, "max_len", gen_len, max_len);
    put_if(opts, "out", gen_out, out);
    put_if(opts, "vocab", gen_vocab, vocab);
    s = smart_cmd_generate(opts.dump().c_str(), &summary);
  } else if (evaluate->parsed()) {
    opts["predictions"] = predictions;
    opts["references"] = references;
    put_if(opts, "out", ev_out, out);
    put_if(opts, "word_vectors", ev_wv, word_vectors);
    put_if(opts, "lexicon", ev_lex, lexicon);
    s = smart_cmd_evaluate(opts.dump().c_str(), &summary);
    // The full report goes to --out; keep stdout to the corpus block.
    if (s == SMART_OK && summary && ev_out->count() > 0) {
      const Json full = Json::parse(summary);
      smart_string_free(summary);
      summary = nullptr;
      std::cout << Json{{"corpus", full["corpus"]}, {"missing_ids", full["missing_ids"]}}.dump(2)
                << '\n';
    }
  } else if (coverage->parsed()) {
    opts["predictions"] = predictions;
    opts["features"] = features;
    put_if(opts, "thresholds", cov_t, thresholds);
    put_if(opts, "out", cov_out, out);
    put_if(opts, "word_vectors", cov_wv, word_vectors);
    put_if(opts, "lexicon", cov_lex, lexicon);
    s = smart_cmd_coverage(opts.dump().c_str(), &summary);
    if (s == SMART_OK && summary && cov_out->count() > 0) {
      const Json full = Json::parse(summary);
      smart_string_free(summary);
      summary = nullptr;
      std::cout << Json{{"thresholds", full["thresholds"]}, {"mean", full["mean"]}}.dump(2) << '\n';
    }
  } else if (bench->parsed()) {
    put_if(opts, "layers", b_layers, layers);
    put_if(opts, "memory_slots", b_mem, memory);
    put_if(opts, "batch_sizes", b_batch, batches);
    put_if(opts, "repeats", b_rep, repeats);
    put_if(opts, "warmup", b_warm, warmup);
    put_if(opts, "decode_len", b_len, decode_len);
    put_if(opts, "out_csv", b_csv, out_csv);
    put_if(opts, "out_json", b_json, out_json);
    s = smart_cmd_bench(opts.dump().c_str(), &summary);
  } else if (gradcheck->parsed()) {
    put_if(opts, "tol", g_tol, tol);
    put_if(opts, "eps", g_eps, eps);
    put_if(opts, "max_coords", g_max, max_coords);
    put_if(opts, "corrupt", g_cor, corrupt);
    put_if(opts, "corrupt_factor", g_fac, corrupt_factor);
    put_if(opts, "out", g_out, out);
    s = smart_cmd_gradcheck(opts.dump().c_str(), &summary);
  }
  return report(s, summary);
}
