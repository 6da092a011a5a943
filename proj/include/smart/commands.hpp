#pragma once

#include "smart/config_io.hpp"
#include "smart/run_config.hpp"

// Subcommand implementations. Each returns a JSON summary; failures raise
// smart::Error subclasses.
namespace smart::commands {

/// Writes the synthetic dataset described by config.dataset to paths.dataset.
Json generate_data(const RunConfig& config);

/// Cross-entropy training into paths.run_dir: config.json, vocab.txt,
/// metrics.jsonl, model.ckpt (+ .json) and optimizer.ckpt. With `resume`,
/// continues from the run directory's checkpoint up to train.steps.
Json train(const RunConfig& config, bool resume);

/// SCST fine-tuning from paths.init_checkpoint (default <run_dir>/model.ckpt)
/// into <run_dir>/scst.ckpt, logging to <run_dir>/scst_metrics.jsonl.
Json finetune_scst(const RunConfig& config);

/// options: checkpoint, features, out, beam_size (1), max_len (20), vocab.
Json generate(const Json& options);

/// options: predictions, references, out, word_vectors, lexicon.
Json evaluate(const Json& options);

/// options: predictions, features, out, thresholds, word_vectors, lexicon.
Json coverage(const Json& options);

/// options: layers, memory_slots, batch_sizes, repeats, warmup, decode_len,
/// regions, seed, out_csv, out_json, d, heads, d_ff, vocab_size.
Json bench(const Json& options);

/// options: d, heads, d_ff, memory_slots, vocab_size, layers, eps, tol,
/// max_coords, seed, corrupt, corrupt_factor, out. The summary carries
/// "passed"; a failed check is reported, not thrown.
Json gradcheck(const Json& options);

}  // namespace smart::commands
