#pragma once

#include <string>

#include "lanistr/parameter.hpp"

namespace lanistr {

/// Writes `manifest.json` (names and shapes in store order) and
/// `parameters.bin` (little-endian float64 values in the same order) into
/// `dir`. Files are staged in a sibling directory and renamed into place, so a
/// failed save never leaves a partial checkpoint. `extra_json` (a JSON object
/// or empty) is stored under "config".
void save_checkpoint(const ParameterStore& store, const std::string& dir, const std::string& extra_json = "");

/// Loads values into an existing store. Every parameter name and shape must
/// match; otherwise the error lists each offending name and nothing is changed.
void load_checkpoint(ParameterStore& store, const std::string& dir);

/// The "config" object stored with a checkpoint, or an empty string.
std::string checkpoint_config(const std::string& dir);

}  // namespace lanistr
