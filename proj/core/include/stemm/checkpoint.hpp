#pragma once

#include <filesystem>
#include <span>

#include "stemm/model.hpp"

namespace stemm {

/// Checkpoint container version written by save_checkpoint.
inline constexpr int kCheckpointFormatVersion = 1;

/**
 * Writes a JSON checkpoint:
 *
 *   {"format": "stemm-checkpoint", "format_version": 1,
 *    "model": {ModelConfig fields},
 *    "params": {"<path>": {"shape": [..], "values": [..]}, ...}}
 *
 * The file is written to a temporary sibling and renamed into place.
 */
void save_checkpoint(const std::filesystem::path& path,
                     const Seq2SeqModel<float>& model);

/// Throws DataError for unreadable files and ConfigError for structural
/// mismatches.
Seq2SeqModel<float> load_checkpoint(const std::filesystem::path& path);

/// Deep copy of every parameter value, detached from any graph.
template <typename T>
ParamStore<T> snapshot(const ParamStore<T>& params);

/**
 * Elementwise arithmetic mean of structurally identical parameter sets.
 * Throws ConfigError naming the first parameter whose name or shape differs.
 */
template <typename T>
ParamStore<T> average_checkpoints(std::span<const ParamStore<T>> checkpoints);

}  // namespace stemm
