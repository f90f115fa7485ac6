#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "c2d/autodiff.hpp"

namespace c2d::num {

// Layout: one text line
//   c2d-checkpoint v1 <name>:<rows>x<cols> <name>:<rows>x<cols> ...\n
// followed by every tensor's values as little-endian IEEE-754 f64, in
// header order, row-major.

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

/// Serialized bytes; save_checkpoint writes exactly this.
std::string encode_checkpoint(std::span<const Parameter* const> params);
std::vector<Parameter> decode_checkpoint(std::string_view bytes, const std::string& origin);

}  // namespace c2d::num
