#include "smart/smart.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include "smart/checkpoint.hpp"
#include "smart/commands.hpp"
#include "smart/decoding.hpp"

struct smart_model {
  smart::Model model;
};

namespace {

thread_local std::string g_last_error;

smart_status fail(smart_status status, const char* message) {
  g_last_error = message;
  return status;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const smart::Json& j) {
  if (out) *out = copy_string(j.dump(2));
}

smart::Json parse_json(const char* text, const char* what) {
  if (!text || !*text) return smart::Json::object();
  smart::Json j = smart::Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw smart::UsageError(std::string(what) + ": invalid JSON");
  return j;
}

template <typename F>
smart_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const smart::UsageError& e) {
    return fail(SMART_ERR_USAGE, e.what());
  } catch (const smart::ConfigError& e) {
    return fail(SMART_ERR_CONFIG, e.what());
  } catch (const smart::ShapeError& e) {
    return fail(SMART_ERR_SHAPE, e.what());
  } catch (const smart::InputError& e) {
    return fail(SMART_ERR_INPUT, e.what());
  } catch (const smart::IoError& e) {
    return fail(SMART_ERR_IO, e.what());
  } catch (const smart::NumericError& e) {
    return fail(SMART_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(SMART_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SMART_ERR_INTERNAL, "unknown error");
  }
}

smart::RunConfig run_config_of(const char* json) {
  if (!json) throw smart::UsageError("run configuration is required");
  smart::RunConfig c = smart::run_config_from_json(parse_json(json, "run configuration"));
  c.validate();
  return c;
}

}  // namespace

extern "C" {

const char* smart_last_error(void) { return g_last_error.c_str(); }

const char* smart_status_name(smart_status status) {
  switch (status) {
    case SMART_OK: return "ok";
    case SMART_ERR_USAGE: return "usage error";
    case SMART_ERR_CONFIG: return "config error";
    case SMART_ERR_SHAPE: return "shape error";
    case SMART_ERR_INPUT: return "input error";
    case SMART_ERR_IO: return "I/O error";
    case SMART_ERR_NUMERIC: return "numeric error";
    case SMART_ERR_CHECK_FAILED: return "check failed";
    case SMART_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* smart_version(void) { return "0.1.0"; }

void smart_string_free(char* s) { std::free(s); }

smart_status smart_config_resolve(const char* config_path, const char* const* overrides,
                                  size_t n_overrides, char** out_json) {
  return guarded([&] {
    std::vector<std::string> list;
    for (size_t i = 0; i < n_overrides; ++i) {
      if (!overrides[i]) throw smart::UsageError("null override");
      list.emplace_back(overrides[i]);
    }
    std::optional<std::filesystem::path> file;
    if (config_path && *config_path) file = config_path;
    const auto c = smart::resolve_run_config(file, list, std::getenv("SMART_SEED"));
    emit(out_json, smart::to_json(c));
    return SMART_OK;
  });
}

smart_status smart_model_create(const char* model_config_json, uint64_t seed, smart_model** out) {
  return guarded([&] {
    if (!out) throw smart::UsageError("smart_model_create: null output");
    auto config = smart::model_config_from_json(parse_json(model_config_json, "model config"));
    config.validate();
    *out = new smart_model{smart::Model(config, seed)};
    return SMART_OK;
  });
}

smart_status smart_model_load(const char* checkpoint_path, smart_model** out) {
  return guarded([&] {
    if (!out || !checkpoint_path) throw smart::UsageError("smart_model_load: null argument");
    *out = new smart_model{smart::load_model(checkpoint_path)};
    return SMART_OK;
  });
}

smart_status smart_model_save(const smart_model* model, const char* checkpoint_path) {
  return guarded([&] {
    if (!model || !checkpoint_path) throw smart::UsageError("smart_model_save: null argument");
    smart::save_model(checkpoint_path, model->model);
    return SMART_OK;
  });
}

void smart_model_destroy(smart_model* model) { delete model; }

smart_status smart_model_param_count(const smart_model* model, size_t* out) {
  return guarded([&] {
    if (!model || !out) throw smart::UsageError("smart_model_param_count: null argument");
    *out = model->model.params().scalar_count();
    return SMART_OK;
  });
}

smart_status smart_model_config(const smart_model* model, char** out_json) {
  return guarded([&] {
    if (!model || !out_json) throw smart::UsageError("smart_model_config: null argument");
    emit(out_json, smart::to_json(model->model.config()));
    return SMART_OK;
  });
}

smart_status smart_model_generate(const smart_model* model, const double* regions,
                                  size_t n_regions, size_t feature_dim, size_t beam_size,
                                  size_t max_len, int* out_tokens, size_t capacity,
                                  size_t* out_len, double* out_logprob) {
  return guarded([&] {
    if (!model || !regions || !out_len) throw smart::UsageError("smart_model_generate: null argument");
    if (beam_size == 0) throw smart::UsageError("smart_model_generate: beam_size must be >= 1");
    const smart::Model& m = model->model;
    smart::Tensor input({n_regions, feature_dim},
                        std::vector<double>(regions, regions + n_regions * feature_dim));
    smart::Tensor memory;
    {
      smart::Tape::Paused paused;
      smart::ForwardContext ctx;
      memory = m.encode(input, ctx);
    }
    const auto best = beam_size <= 1 ? smart::greedy_decode(m, memory, max_len)
                                     : smart::beam_search(m, memory, beam_size, max_len).front();
    *out_len = best.tokens.size();
    if (out_logprob) *out_logprob = best.logprob_sum;
    if (best.tokens.size() > capacity || (!out_tokens && !best.tokens.empty())) {
      throw smart::UsageError("smart_model_generate: output buffer holds " +
                              std::to_string(capacity) + " tokens, need " +
                              std::to_string(best.tokens.size()));
    }
    std::copy(best.tokens.begin(), best.tokens.end(), out_tokens);
    return SMART_OK;
  });
}

smart_status smart_cmd_generate_data(const char* run_config_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::generate_data(run_config_of(run_config_json)));
    return SMART_OK;
  });
}

smart_status smart_cmd_train(const char* run_config_json, int resume, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::train(run_config_of(run_config_json), resume != 0));
    return SMART_OK;
  });
}

smart_status smart_cmd_finetune_scst(const char* run_config_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::finetune_scst(run_config_of(run_config_json)));
    return SMART_OK;
  });
}

smart_status smart_cmd_generate(const char* options_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::generate(parse_json(options_json, "generate options")));
    return SMART_OK;
  });
}

smart_status smart_cmd_evaluate(const char* options_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::evaluate(parse_json(options_json, "evaluate options")));
    return SMART_OK;
  });
}

smart_status smart_cmd_coverage(const char* options_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::coverage(parse_json(options_json, "coverage options")));
    return SMART_OK;
  });
}

smart_status smart_cmd_bench(const char* options_json, char** out_summary) {
  return guarded([&] {
    emit(out_summary, smart::commands::bench(parse_json(options_json, "bench options")));
    return SMART_OK;
  });
}

smart_status smart_cmd_gradcheck(const char* options_json, char** out_summary) {
  return guarded([&] {
    const auto summary = smart::commands::gradcheck(parse_json(options_json, "gradcheck options"));
    emit(out_summary, summary);
    if (summary.at("passed").get<bool>()) return SMART_OK;
    return fail(SMART_ERR_CHECK_FAILED,
                ("gradient check failed: worst coordinate " +
                 summary["worst"]["param"].get<std::string>() + "[" +
                 std::to_string(summary["worst"]["index"].get<std::size_t>()) +
                 "], relative error " + std::to_string(summary["max_rel_error"].get<double>()))
                    .c_str());
  });
}

}  // extern "C"
